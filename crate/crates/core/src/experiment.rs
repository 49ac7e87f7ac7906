//! Declarative experiments: a TOML file names a problem, a simulation
//! configuration and one experiment kind with its parameters. Running it
//! yields a deterministic JSON report, CSV tables, plots and binaries.
//!
//! ```toml
//! name = "example1-audit"
//!
//! [problem]
//! preset = "example1(0.4)"
//!
//! [simulation]
//! dt = 1e-3
//! n_paths = 10000
//!
//! [experiment]
//! kind = "audit"
//! kappa = [1.0]
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coefficients::{
    audit_coercivity, audit_ellipticity, audit_growth, audit_monotonicity, default_audit_grid, pair_subgrid, preset,
    AuditGrid, AuditReport, AuditSettings, CoefficientField, CoercivityDomain, ExprField, GrowthProfile, Majorant, SdeProblem,
};
use crate::error::{FlowError, Result};
use crate::expr::Expr;
use crate::flow_regularity::{
    coupled_quotient_norms, envelope_value, fd_gradient, maximal_inequality_check, witness_fit, write_gradient_csv,
    write_witness_csv, GradientVariant, Lattice, TimeNorm,
};
use crate::integrators::{coupled_simulate, first_exit, simulate, unique_points, write_binary, write_csv, SimulationConfig};
use crate::lyapunov::{
    exp_lambda_threshold, exp_moment_check, poly_lambda_threshold, poly_moment_check, steering_contraction_check,
    supermartingale_test, LyapunovSpec, MomentCheck,
};
use crate::markov_stats::{girsanov_hitting, hitting_probability, semigroup_map, semigroup_refinement, SemigroupProfile};
use crate::occupation::{
    exp_occupation_check, integrand_from_expr, khasminskii_check, krylov_ratio, local_exp_occupation_check,
    occupation_estimate, KrylovMember, SpaceTimeFn,
};
use crate::report::Verdict;
use crate::stats::Z95;
use crate::svg::{self, Plot, Series};
use crate::zvonkin::{
    build_transform, conjugacy_refinement, solve_backward_pde, split_drift, write_solution, PdeGrid,
};

/// Version of the report layout.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub experiment: Experiment,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Either `preset = "<id>"` or an expression-defined field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub preset: Option<String>,
    pub dim: Option<usize>,
    pub noise_dim: Option<usize>,
    #[serde(default)]
    pub drift: Vec<String>,
    /// Row-major `dim × noise_dim` entries.
    #[serde(default)]
    pub diffusion: Vec<String>,
    /// Growth metadata for expression fields (enables audits and λ thresholds).
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub r0: f64,
    /// Fixed `C_κ`; computed numerically along the first axis when absent.
    pub coercivity: Option<f64>,
    /// Monotonicity majorant `F_κ(t, x)` as an expression in `t`, `x…`, `kappa`.
    pub majorant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub plots: bool,
    pub tables: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, plots: true, tables: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Audit(AuditParams),
    Simulate(SimulateParams),
    Lyapunov(LyapunovParams),
    Flow(FlowParams),
    Occupation(OccupationParams),
    Zvonkin(ZvonkinParams),
    Markov(MarkovParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Audit(_) => "audit",
            Experiment::Simulate(_) => "simulate",
            Experiment::Lyapunov(_) => "lyapunov",
            Experiment::Flow(_) => "flow",
            Experiment::Occupation(_) => "occupation",
            Experiment::Zvonkin(_) => "zvonkin",
            Experiment::Markov(_) => "markov",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditParams {
    pub kappa: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Points of the grid subsample whose pairs enter the monotonicity audit.
    pub pair_points: usize,
    pub times: Vec<f64>,
    pub tolerance_abs: f64,
    pub tolerance_rel: f64,
}

impl Default for AuditParams {
    fn default() -> Self {
        let s = AuditSettings::default();
        Self {
            kappa: vec![1.0],
            lo: -10.0,
            hi: 10.0,
            points: 1000,
            pair_points: 60,
            times: s.times,
            tolerance_abs: s.tolerance_abs,
            tolerance_rel: s.tolerance_rel,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub starts: Vec<Vec<f64>>,
    /// Synchronously coupled pairs; replaces `starts` when non-empty.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub exit_radius: Option<f64>,
    /// Fail when more paths than this stop early.
    pub max_exploded_fraction: Option<f64>,
    /// Export the ensemble as CSV and FLW1 binary.
    pub write_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub x: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub exp: bool,
    /// Exponent of the exponential Lyapunov function; defaults to the profile's α.
    pub alpha: Option<f64>,
    /// Defaults to the admissible threshold.
    pub lambda: Option<f64>,
    /// Order of the polynomial branch; skipped when absent.
    pub p: Option<f64>,
    pub poly_lambda: Option<f64>,
    pub supermartingale_radius: Option<f64>,
    pub steering: Option<SteeringParams>,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            x: Vec::new(),
            times: vec![0.5, 1.0],
            exp: true,
            alpha: None,
            lambda: None,
            p: None,
            poly_lambda: None,
            supermartingale_radius: None,
            steering: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringParams {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    #[serde(default = "default_steering_m")]
    pub m: Vec<f64>,
}

fn default_steering_m() -> Vec<f64> {
    vec![1.0, 10.0, 100.0]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub witness: Option<WitnessParams>,
    pub gradient: Option<GradientParams>,
    pub quotient: Option<QuotientParams>,
    pub maximal: Option<MaximalParams>,
}

/// Lattice check of `|f(x)−f(y)| ≤ 2^d|x−y|(M_R|∇f|(x)+M_R|∇f|(y))` on
/// `[lo, hi]^d` with `n` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximalParams {
    pub f: String,
    /// `|∇f|` as an expression.
    pub grad_norm: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub radius: f64,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessParams {
    /// Explicit base grid; otherwise `n` points on `[lo, hi]` along the first axis.
    pub grid: Vec<Vec<f64>>,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub p: f64,
    /// `"inf"` or a finite exponent.
    pub r: String,
}

impl Default for WitnessParams {
    fn default() -> Self {
        Self { grid: Vec::new(), lo: -2.0, hi: 2.0, n: 5, p: 2.0, r: "inf".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientParams {
    pub x: Vec<Vec<f64>>,
    pub h: Option<f64>,
    pub p: f64,
    pub variant: GradientVariant,
    pub bound: Option<f64>,
}

impl Default for GradientParams {
    fn default() -> Self {
        Self { x: Vec::new(), h: None, p: 2.0, variant: GradientVariant::SupOfExpectation, bound: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotientParams {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_r")]
    pub r: String,
}

fn default_p() -> f64 {
    2.0
}

fn default_r() -> String {
    "inf".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationParams {
    /// Integrand `f(t, x)` in the expression grammar.
    pub f: String,
    pub x: Vec<Vec<f64>>,
    pub estimate: bool,
    pub khasminskii_radius: Option<f64>,
    pub exp: Option<ExpOccupationParams>,
    pub local_radius: Option<f64>,
    pub krylov: Option<KrylovParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpOccupationParams {
    pub r0: f64,
    pub crude_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovParams {
    pub q: f64,
    #[serde(default)]
    pub lambda: f64,
    pub family: Vec<KrylovSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovSpec {
    pub label: String,
    pub f: String,
    pub lq_norm: Option<f64>,
    /// `[lo, hi]` box for the quadrature of the `L^q` norm.
    pub support: Option<(Vec<f64>, Vec<f64>)>,
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZvonkinParams {
    pub r0: f64,
    pub lambda0: f64,
    pub dx: Option<f64>,
    pub dt_pde: Option<f64>,
    pub x: Vec<f64>,
    /// Step sizes of the conjugacy refinement; defaults to `dt, dt/2`.
    pub dts: Vec<f64>,
    /// Accepted range of consecutive median ratios.
    pub ratio_range: Option<(f64, f64)>,
    pub write_solution: bool,
}

impl Default for ZvonkinParams {
    fn default() -> Self {
        Self {
            r0: 4.0,
            lambda0: 1.0,
            dx: None,
            dt_pde: None,
            x: vec![0.0],
            dts: Vec::new(),
            ratio_range: None,
            write_solution: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovParams {
    pub semigroup: Option<SemigroupParams>,
    pub hitting: Option<HittingParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupParams {
    /// Bounded test function of `x…` (evaluated at `t = 0`).
    pub f: String,
    pub sup_f: f64,
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingParams {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub a: f64,
    /// Defaults to the simulation horizon.
    pub horizon: Option<f64>,
    #[serde(default = "yes")]
    pub naive: bool,
    pub girsanov: Option<GirsanovParams>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GirsanovParams {
    pub m: Option<f64>,
    pub truncation: Option<f64>,
}

impl ExperimentConfig {
    /// Parses TOML; errors carry the line, column and field path.
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| FlowError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml(&src)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(FlowError::Config("name must not be empty".into()));
        }
        self.simulation.validate()?;
        self.problem.build()?;
        Ok(())
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<SdeProblem> {
        if let Some(id) = &self.preset {
            if self.dim.is_some() || !self.drift.is_empty() || !self.diffusion.is_empty() || self.growth.is_some() {
                return Err(FlowError::Config("problem: 'preset' excludes expression fields".into()));
            }
            return preset(id);
        }
        let d = self.dim.ok_or_else(|| FlowError::Config("problem: need 'preset' or 'dim'".into()))?;
        let m = self.noise_dim.unwrap_or(d);
        let field: Arc<dyn CoefficientField> = Arc::new(ExprField::parse(d, m, &self.drift, &self.diffusion)?);
        let mut problem = SdeProblem::new(field.clone(), "custom");
        if let Some(g) = &self.growth {
            let mut profile = GrowthProfile::new(g.alpha, g.alpha_prime, g.c1, g.c2, g.c3, g.r0);
            profile = match g.coercivity {
                Some(c) => profile.with_fixed_coercivity(c),
                None => profile.with_numeric_coercivity(field, CoercivityDomain::Ray { radius: 1e3 }),
            };
            if let Some(src) = &g.majorant {
                profile = profile.with_majorant(Majorant::Expression(Expr::parse(src)?));
            }
            profile.validate()?;
            problem = problem.with_growth(profile);
        }
        Ok(problem)
    }
}

/// Tables, binaries and plots produced by a run.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub tables: BTreeMap<String, String>,
    pub binaries: BTreeMap<String, Vec<u8>>,
    pub plots: Vec<Plot>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: Value,
    pub verdict: Verdict,
    pub artifacts: Artifacts,
}

impl RunOutput {
    /// Report text; identical inputs give identical bytes.
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json`, tables, binaries and (optionally) plots into
    /// `dir`; `provenance` goes to `provenance.json`.
    pub fn write_to(&self, dir: &Path, write_plots: bool, provenance: &Value) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut written = vec!["report.json".to_string(), "provenance.json".to_string()];
        std::fs::write(dir.join("report.json"), self.report_json())?;
        let prov = serde_json::to_string_pretty(provenance).map_err(|e| FlowError::Format(e.to_string()))?;
        std::fs::write(dir.join("provenance.json"), prov + "\n")?;
        for (name, text) in &self.artifacts.tables {
            std::fs::write(dir.join(name), text)?;
            written.push(name.clone());
        }
        for (name, bytes) in &self.artifacts.binaries {
            std::fs::write(dir.join(name), bytes)?;
            written.push(name.clone());
        }
        if write_plots {
            written.extend(render_plots(&self.artifacts.plots, dir)?);
        }
        Ok(written)
    }
}

/// Writes every plot as SVG into `dir`; returns the file names.
pub fn render_plots(plots: &[Plot], dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for p in plots {
        if p.file.contains('/') || p.file.contains('\\') || p.file.starts_with('.') {
            return Err(FlowError::Format(format!("plot file name '{}' is not a plain name", p.file)));
        }
        std::fs::write(dir.join(&p.file), svg::render(p))?;
        out.push(p.file.clone());
    }
    Ok(out)
}

/// Plots embedded in a report produced by [`run`].
pub fn plots_from_report(report: &Value) -> Result<Vec<Plot>> {
    let plots = report.get("plots").cloned().unwrap_or(Value::Array(Vec::new()));
    serde_json::from_value(plots).map_err(|e| FlowError::Format(format!("report plots: {e}")))
}

struct Check {
    name: String,
    verdict: Verdict,
    result: Value,
}

struct Ctx {
    checks: Vec<Check>,
    art: Artifacts,
}

impl Ctx {
    fn check(&mut self, name: impl Into<String>, verdict: Verdict, result: impl Serialize) -> Result<()> {
        let result = to_value(&result)?;
        self.checks.push(Check { name: name.into(), verdict, result });
        Ok(())
    }

    fn table(&mut self, name: impl Into<String>, text: String) {
        self.art.tables.insert(name.into(), text);
    }
}

fn expr_fn(src: &str) -> Result<SpaceTimeFn> {
    Ok(integrand_from_expr(Expr::parse(src)?))
}

fn need_points(points: &[Vec<f64>], d: usize, what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(FlowError::Config(format!("{what}: at least one point is required")));
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(FlowError::Config(format!("{what}: point {p:?} does not have dimension {d}")));
    }
    Ok(())
}

/// Points `lo..=hi` along the first axis (others zero).
fn axis_grid(d: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 || !(hi > lo) {
        return Err(FlowError::Config("grid needs n ≥ 2 and hi > lo".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut p = vec![0.0; d];
            p[0] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            p
        })
        .collect())
}

fn csv_vec(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Runs an experiment. The report contains everything needed to reproduce
/// it (problem, simulation settings, parameters, constants) and nothing
/// that depends on wall time or the worker pool.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.simulation.validate()?;
    let problem = config.problem.build()?;
    let sim = &config.simulation;
    let mut ctx = Ctx { checks: Vec::new(), art: Artifacts::default() };
    match &config.experiment {
        Experiment::Audit(p) => run_audit(&problem, p, &mut ctx)?,
        Experiment::Simulate(p) => run_simulate(&problem, sim, p, &mut ctx)?,
        Experiment::Lyapunov(p) => run_lyapunov(&problem, sim, p, &mut ctx)?,
        Experiment::Flow(p) => run_flow(&problem, sim, p, &mut ctx)?,
        Experiment::Occupation(p) => run_occupation(&problem, sim, p, &mut ctx)?,
        Experiment::Zvonkin(p) => run_zvonkin(&problem, sim, p, &mut ctx)?,
        Experiment::Markov(p) => run_markov(&problem, sim, p, &mut ctx)?,
    }
    if ctx.checks.is_empty() {
        return Err(FlowError::Config(format!("{} experiment selects no checks", config.experiment.kind())));
    }
    let verdict = Verdict::all(ctx.checks.iter().map(|c| c.verdict));
    let checks: Vec<Value> = ctx
        .checks
        .iter()
        .map(|c| json!({ "name": c.name, "verdict": c.verdict, "result": c.result }))
        .collect();
    let report = json!({
        "report_version": REPORT_VERSION,
        "name": config.name,
        "kind": config.experiment.kind(),
        "problem": {
            "id": problem.preset_id,
            "description": problem.description,
            "dim": problem.dim(),
            "noise_dim": problem.noise_dim(),
            "growth": problem.growth.as_ref().map(|g| g.summary()),
            "spec": to_value(&config.problem)?,
        },
        "simulation": to_value(sim)?,
        "parameters": to_value(&config.experiment)?,
        "checks": checks,
        "files": ctx.art.tables.keys().chain(ctx.art.binaries.keys()).chain(ctx.art.plots.iter().map(|p| &p.file)).collect::<Vec<_>>(),
        "plots": to_value(&ctx.art.plots)?,
        "verdict": verdict,
    });
    Ok(RunOutput { report, verdict, artifacts: ctx.art })
}

fn to_value<T: Serialize + ?Sized>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| FlowError::Format(e.to_string()))
}

fn audit_row(r: &AuditReport) -> String {
    format!(
        "{},{},{},{},{},{},{}\n",
        r.quantity_name.replace(',', ";"),
        r.worst_value,
        csv_vec(&r.worst_at),
        r.bound,
        r.margin,
        r.tolerance,
        r.overall_pass()
    )
}

fn run_audit(problem: &SdeProblem, p: &AuditParams, ctx: &mut Ctx) -> Result<()> {
    problem.growth()?;
    let settings =
        AuditSettings { tolerance_abs: p.tolerance_abs, tolerance_rel: p.tolerance_rel, times: p.times.clone() };
    let grid = default_audit_grid(problem.dim(), p.lo, p.hi, p.points);
    let pairs = pair_subgrid(&grid, p.pair_points);
    let mut reports = Vec::new();
    for &k in &p.kappa {
        reports.push((format!("coercivity(kappa={k})"), audit_coercivity(problem, k, &grid, &settings)?));
    }
    for &k in &p.kappa {
        reports.push((format!("monotonicity(kappa={k})"), audit_monotonicity(problem, k, &pairs, &settings)?));
    }
    reports.push(("ellipticity".into(), audit_ellipticity(problem, &grid, &settings)?));
    reports.push(("growth".into(), audit_growth(problem, &grid, &settings)?));
    let mut table = String::from("audit,worst_value,worst_at,bound,margin,tolerance,pass\n");
    for (name, mut r) in reports {
        table.push_str(&audit_row(&r));
        // The grid is reproducible from the parameters; keep the report small.
        r.grid = AuditGrid::Points(Vec::new());
        if let Some(t) = r.tail.as_mut() {
            t.grid = AuditGrid::Points(Vec::new());
        }
        ctx.check(name, Verdict::from_pass(r.overall_pass()), &r)?;
    }
    ctx.table("audits.csv", table);
    Ok(())
}

fn run_simulate(problem: &SdeProblem, sim: &SimulationConfig, p: &SimulateParams, ctx: &mut Ctx) -> Result<()> {
    let d = problem.dim();
    let ensemble = if p.pairs.is_empty() {
        need_points(&p.starts, d, "simulate.starts")?;
        simulate(problem, sim, &p.starts)?
    } else {
        let (pts, _) = unique_points(&p.pairs);
        need_points(&pts, d, "simulate.pairs")?;
        coupled_simulate(problem, sim, &p.pairs)?
    };
    let n_steps = ensemble.n_steps();
    let stride = n_steps.div_ceil(200).max(1);
    let idx: Vec<usize> = (0..=n_steps).step_by(stride).chain(std::iter::once(n_steps)).collect::<Vec<_>>();
    let mut idx = idx;
    idx.dedup();
    let exits = match p.exit_radius {
        Some(r) => Some(first_exit(&ensemble, r)?),
        None => None,
    };
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut table = String::from("start,step,t,mean_x1,se_x1,n_alive\n");
    for (j, start) in ensemble.starts.iter().enumerate() {
        let ids: Vec<usize> = (0..ensemble.paths.len()).filter(|&i| ensemble.paths[i].start == j).collect();
        let stopped =
            |i: usize| ensemble.paths[i].exit_index.is_some() || ensemble.paths[i].failure_index.is_some();
        let alive: Vec<usize> = ids.iter().copied().filter(|&i| !stopped(i)).collect();
        let n = alive.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in &alive {
            for (m, v) in mean.iter_mut().zip(ensemble.state(i, n_steps)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for &i in &alive {
            for ((s, v), m) in var.iter_mut().zip(ensemble.state(i, n_steps)).zip(&mean) {
                *s += (v - m).powi(2) / (n - 1.0).max(1.0);
            }
        }
        let (mut ts, mut ms, mut ses) = (Vec::new(), Vec::new(), Vec::new());
        for &k in &idx {
            let vals: Vec<f64> = alive.iter().map(|&i| ensemble.state(i, k)[0]).collect();
            let est = crate::stats::mean_estimate(&vals);
            table.push_str(&format!(
                "{},{k},{},{},{},{}\n",
                csv_vec(start),
                ensemble.time_grid[k],
                est.value,
                est.std_error,
                vals.len()
            ));
            ts.push(ensemble.time_grid[k]);
            ms.push(est.value);
            ses.push(est.std_error);
        }
        series.push(Series::line(format!("x0={start:?}"), ts, ms).with_se_band(&ses, Z95));
        let exit = exits.as_ref().map(|e| {
            let times: Vec<f64> = ids.iter().map(|&i| e[i]).filter(|t| t.is_finite()).collect();
            json!({
                "radius": p.exit_radius,
                "exited_fraction": times.len() as f64 / ids.len() as f64,
                "mean_exit_time_given_exit": if times.is_empty() { None } else { Some(times.iter().sum::<f64>() / times.len() as f64) },
            })
        });
        rows.push(json!({
            "start": start,
            "n_paths": ids.len(),
            "stopped_fraction": (ids.len() - alive.len()) as f64 / ids.len() as f64,
            "terminal_mean": mean,
            "terminal_variance": var,
            "exit": exit,
        }));
    }
    let exploded = ensemble.exploded_fraction();
    let failed = ensemble.failed_fraction();
    let stopped = exploded + failed;
    let verdict = match p.max_exploded_fraction {
        Some(max) => Verdict::from_pass(stopped <= max),
        None if stopped > 0.0 => Verdict::Inconclusive,
        None => Verdict::Pass,
    };
    ctx.check(
        "ensemble",
        verdict,
        json!({
            "scheme": ensemble.scheme,
            "exploded_fraction": exploded,
            "failed_fraction": failed,
            "max_exploded_fraction": p.max_exploded_fraction,
            "starts": rows,
        }),
    )?;
    ctx.table("means.csv", table);
    ctx.art.plots.push(Plot {
        file: "mean_path.svg".into(),
        title: format!("E X_t (first coordinate), {}", problem.preset_id),
        x_label: "t".into(),
        y_label: "mean".into(),
        log_x: false,
        log_y: false,
        series,
    });
    if p.write_paths {
        let mut csv = Vec::new();
        write_csv(&ensemble, &mut csv)?;
        ctx.table("paths.csv", String::from_utf8(csv).map_err(|e| FlowError::Format(e.to_string()))?);
        let mut bin = Vec::new();
        write_binary(&ensemble, &mut bin)?;
        ctx.art.binaries.insert("paths.flw".into(), bin);
    }
    Ok(())
}

fn moment_rows(c: &MomentCheck, table: &mut String) {
    for r in &c.reports {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:?}\n",
            c.kind,
            csv_vec(&c.x),
            c.lambda,
            r.time,
            r.estimate,
            r.std_error,
            r.bound,
            r.bias_slack,
            r.verdict
        ));
    }
}

fn run_lyapunov(problem: &SdeProblem, sim: &SimulationConfig, p: &LyapunovParams, ctx: &mut Ctx) -> Result<()> {
    let mut table = String::from("kind,x,lambda,time,estimate,std_error,bound,bias_slack,verdict\n");
    let mut any = false;
    if p.exp || p.p.is_some() || p.supermartingale_radius.is_some() {
        need_points(&p.x, problem.dim(), "lyapunov.x")?;
    }
    let alpha = match p.alpha {
        Some(a) => a,
        None => problem.growth()?.alpha,
    };
    let exp_spec = || -> Result<LyapunovSpec> {
        let lambda = match p.lambda {
            Some(l) => l,
            None => exp_lambda_threshold(problem, alpha)?,
        };
        Ok(LyapunovSpec { alpha, lambda, p: p.p })
    };
    let mut exp_series = Vec::new();
    if p.exp {
        let spec = exp_spec()?;
        for x in &p.x {
            let c = exp_moment_check(problem, sim, x, &spec, &p.times)?;
            moment_rows(&c, &mut table);
            let t: Vec<f64> = c.reports.iter().map(|r| r.time).collect();
            let est: Vec<f64> = c.reports.iter().map(|r| r.estimate).collect();
            let se: Vec<f64> = c.reports.iter().map(|r| r.std_error).collect();
            let bound: Vec<f64> = c.reports.iter().map(|r| r.bound).collect();
            exp_series.push(Series::scatter(format!("estimate x={x:?}"), t.clone(), est).with_se_band(&se, Z95));
            exp_series.push(Series::line(format!("bound x={x:?}"), t, bound));
            ctx.check(format!("exp_moment(x={x:?})"), c.verdict, &c)?;
        }
        any = true;
    }
    if let Some(order) = p.p {
        let lambda = match p.poly_lambda {
            Some(l) => l,
            None => poly_lambda_threshold(problem, order)?,
        };
        for x in &p.x {
            let c = poly_moment_check(problem, sim, x, order, lambda, &p.times)?;
            moment_rows(&c, &mut table);
            ctx.check(format!("poly_moment(p={order}, x={x:?})"), c.verdict, &c)?;
        }
        any = true;
    }
    if let Some(radius) = p.supermartingale_radius {
        let spec = exp_spec()?;
        for x in &p.x {
            let r = supermartingale_test(problem, sim, x, &spec, radius, &p.times)?;
            ctx.check(format!("supermartingale(x={x:?})"), r.verdict, &r)?;
        }
        any = true;
    }
    if let Some(s) = &p.steering {
        let r = steering_contraction_check(problem, sim, &s.x0, &s.y0, &s.m)?;
        let m: Vec<f64> = r.levels.iter().map(|l| l.m).collect();
        let term: Vec<f64> = r.levels.iter().map(|l| l.terminal.0).collect();
        let se: Vec<f64> = r.levels.iter().map(|l| l.terminal.1).collect();
        let mut st = String::from("m,terminal,terminal_se,worst_excess_se,pass\n");
        for l in &r.levels {
            st.push_str(&format!("{},{},{},{},{}\n", l.m, l.terminal.0, l.terminal.1, l.worst_excess_se, l.pass));
        }
        ctx.table("steering.csv", st);
        ctx.art.plots.push(Plot {
            file: "steering.svg".into(),
            title: "E|Y_T - y0|^2 under steering".into(),
            x_label: "m".into(),
            y_label: "E|Y_T - y0|^2".into(),
            log_x: true,
            log_y: true,
            series: vec![Series::line("terminal", m, term).with_se_band(&se, Z95)],
        });
        ctx.check("steering_contraction", r.verdict, &r)?;
        any = true;
    }
    if !any {
        return Err(FlowError::Config("lyapunov: enable exp, p, supermartingale_radius or steering".into()));
    }
    if !exp_series.is_empty() {
        ctx.art.plots.push(Plot {
            file: "exp_moments.svg".into(),
            title: "exponential moments vs bound".into(),
            x_label: "t".into(),
            y_label: "E f(t, X_t)".into(),
            log_x: false,
            log_y: true,
            series: exp_series,
        });
    }
    ctx.table("moments.csv", table);
    Ok(())
}

fn run_flow(problem: &SdeProblem, sim: &SimulationConfig, p: &FlowParams, ctx: &mut Ctx) -> Result<()> {
    let d = problem.dim();
    let mut any = false;
    if let Some(w) = &p.witness {
        let grid = if w.grid.is_empty() { axis_grid(d, w.lo, w.hi, w.n)? } else { w.grid.clone() };
        need_points(&grid, d, "flow.witness.grid")?;
        let r = TimeNorm::parse(&w.r)?;
        let wit = witness_fit(problem, sim, &grid, w.p, r)?;
        let mut buf = Vec::new();
        write_witness_csv(&wit, &mut buf)?;
        ctx.table("witness.csv", String::from_utf8(buf).map_err(|e| FlowError::Format(e.to_string()))?);
        let xs: Vec<f64> = grid.iter().map(|x| x[0]).collect();
        let mut series = vec![Series::scatter("g", xs.clone(), wit.g.clone()).with_se_band(&wit.g_std_error, Z95)];
        if let Some(e) = &wit.envelope {
            series.push(Series::line("envelope", xs, grid.iter().map(|x| envelope_value(e, x)).collect()));
        }
        ctx.art.plots.push(Plot {
            file: "witness.svg".into(),
            title: "witness g and growth envelope".into(),
            x_label: "x1".into(),
            y_label: "g(x)".into(),
            log_x: false,
            log_y: false,
            series,
        });
        ctx.check("witness", wit.verdict, &wit)?;
        any = true;
    }
    if let Some(g) = &p.gradient {
        need_points(&g.x, d, "flow.gradient.x")?;
        let mut series = Vec::new();
        for (i, x) in g.x.iter().enumerate() {
            let r = fd_gradient(problem, sim, x, g.h, g.p, g.variant, g.bound)?;
            let mut buf = Vec::new();
            write_gradient_csv(&r.estimate, &mut buf)?;
            ctx.table(format!("gradient_{i}.csv"), String::from_utf8(buf).map_err(|e| FlowError::Format(e.to_string()))?);
            series.push(Series::line(format!("x={x:?}"), r.estimate.times.clone(), r.estimate.moments.clone()));
            let mut verdict = r.report.verdict;
            if g.bound.is_none() {
                // Without a bound the estimate is descriptive only.
                verdict = if r.report.exploded_fraction > 0.0 { Verdict::Inconclusive } else { Verdict::Pass };
            }
            ctx.check(format!("gradient(x={x:?})"), verdict, &r)?;
        }
        ctx.art.plots.push(Plot {
            file: "gradient.svg".into(),
            title: "E|grad X_t|^p".into(),
            x_label: "t".into(),
            y_label: "moment".into(),
            log_x: false,
            log_y: false,
            series,
        });
        any = true;
    }
    if let Some(q) = &p.quotient {
        let (pts, idx) = unique_points(&q.pairs);
        need_points(&pts, d, "flow.quotient.pairs")?;
        let r = TimeNorm::parse(&q.r)?;
        let norms = coupled_quotient_norms(problem, sim, &pts, &idx, q.p, r)?;
        let verdict = Verdict::all(norms.iter().map(|n| n.verdict));
        ctx.check("quotients", verdict, &norms)?;
        any = true;
    }
    if let Some(m) = &p.maximal {
        if m.n < 2 || !(m.hi > m.lo) {
            return Err(FlowError::Config("flow.maximal: need n ≥ 2 and hi > lo".into()));
        }
        let lattice = Lattice::new(vec![m.lo; m.dim], (m.hi - m.lo) / (m.n - 1) as f64, vec![m.n; m.dim])?;
        let (f, g) = (Expr::parse(&m.f)?, Expr::parse(&m.grad_norm)?);
        let pts: Vec<Vec<f64>> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
        let fv: Vec<f64> = pts.iter().map(|x| f.eval(0.0, x)).collect();
        let gv: Vec<f64> = pts.iter().map(|x| g.eval(0.0, x)).collect();
        let r = maximal_inequality_check(&lattice, &fv, &gv, m.radius)?;
        ctx.check("maximal_inequality", Verdict::from_pass(r.pass), &r)?;
        any = true;
    }
    if !any {
        return Err(FlowError::Config("flow: enable witness, gradient, quotient or maximal".into()));
    }
    Ok(())
}

fn run_occupation(problem: &SdeProblem, sim: &SimulationConfig, p: &OccupationParams, ctx: &mut Ctx) -> Result<()> {
    let d = problem.dim();
    let mut any = false;
    let needs_f = p.estimate || p.khasminskii_radius.is_some() || p.exp.is_some() || p.local_radius.is_some();
    if needs_f {
        need_points(&p.x, d, "occupation.x")?;
    }
    let f = if needs_f { Some(expr_fn(&p.f)?) } else { None };
    if p.estimate {
        let f = f.as_ref().expect("parsed above");
        let mut table = String::from("x,estimate,std_error,clip_fraction,exploded_fraction\n");
        for x in &p.x {
            let e = occupation_estimate(problem, sim, x, f)?;
            table.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_vec(x),
                e.value,
                e.std_error,
                e.clip_fraction,
                e.exploded_fraction
            ));
            let v = if e.exploded_fraction > 0.0 { Verdict::Inconclusive } else { Verdict::Pass };
            ctx.check(format!("occupation(x={x:?})"), v, &e)?;
        }
        ctx.table("occupation.csv", table);
        any = true;
    }
    if let Some(radius) = p.khasminskii_radius {
        let r = khasminskii_check(problem, sim, f.as_ref().expect("parsed above"), radius, &p.x)?;
        ctx.check("khasminskii", r.verdict, &r)?;
        any = true;
    }
    if let Some(e) = &p.exp {
        let r = exp_occupation_check(problem, sim, &p.x, f.as_ref().expect("parsed above"), e.r0, e.crude_bound)?;
        ctx.check("exp_occupation", r.verdict, &r)?;
        any = true;
    }
    if let Some(radius) = p.local_radius {
        for x in &p.x {
            let r = local_exp_occupation_check(problem, sim, x, f.as_ref().expect("parsed above"), radius)?;
            ctx.check(format!("local_exp_occupation(x={x:?})"), r.verdict, &r)?;
        }
        any = true;
    }
    if let Some(k) = &p.krylov {
        let x = p.x.first().cloned().unwrap_or_else(|| vec![0.0; d]);
        need_points(std::slice::from_ref(&x), d, "occupation.x")?;
        let family = k
            .family
            .iter()
            .map(|m| {
                Ok(KrylovMember {
                    label: m.label.clone(),
                    f: expr_fn(&m.f)?,
                    lq_norm: m.lq_norm,
                    support_box: m.support.clone(),
                    scale: m.scale,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = krylov_ratio(problem, sim, &x, &family, k.q, k.lambda)?;
        let mut table = String::from("label,scale,occupation,std_error,lq_norm,ratio,ratio_se\n");
        for r in &t.rows {
            table.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.label.replace(',', ";"),
                r.scale.map_or(String::new(), |s| s.to_string()),
                r.occupation,
                r.std_error,
                r.lq_norm,
                r.ratio,
                r.ratio_se
            ));
        }
        ctx.table("krylov.csv", table);
        ctx.check("krylov", t.verdict, &t)?;
        any = true;
    }
    if !any {
        return Err(FlowError::Config("occupation: enable estimate, khasminskii_radius, exp, local_radius or krylov".into()));
    }
    Ok(())
}

fn run_zvonkin(problem: &SdeProblem, sim: &SimulationConfig, p: &ZvonkinParams, ctx: &mut Ctx) -> Result<()> {
    let split = split_drift(problem, p.r0)?;
    let audit_pts = axis_grid(problem.dim(), -4.0 * p.r0, 4.0 * p.r0, 801)?;
    let audit = split.audit(&audit_pts);
    let split_ok = audit.grad_chi_ok;
    ctx.check("split", Verdict::from_pass(split_ok), &audit)?;
    let mut grid = PdeGrid::for_cutoff(p.r0, sim.horizon);
    if let Some(dx) = p.dx {
        grid.dx = dx;
    }
    if let Some(dt) = p.dt_pde {
        grid.dt = dt;
    }
    let sol = solve_backward_pde(&split, &grid, p.lambda0)?;
    let mut trace = String::from("lambda,sup_u,sup_du,accepted\n");
    for a in &sol.trace {
        trace.push_str(&format!("{},{},{},{}\n", a.lambda, a.sup_u, a.sup_du, a.accepted));
    }
    ctx.table("lambda_trace.csv", trace);
    let xs: Vec<f64> = (0..sol.n_x()).step_by(10).map(|i| sol.node(i)).collect();
    let u0: Vec<f64> = (0..sol.n_x()).step_by(10).map(|i| sol.u[0][i]).collect();
    ctx.art.plots.push(Plot {
        file: "pde_solution.svg".into(),
        title: format!("u(0, x) at lambda = {}", sol.lambda),
        x_label: "x".into(),
        y_label: "u".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::line("u(0,.)", xs, u0)],
    });
    ctx.check(
        "pde",
        Verdict::from_pass(sol.accepted),
        json!({
            "lambda": sol.lambda,
            "grid": grid,
            "sup_u": sol.sup_u,
            "sup_du": sol.sup_du,
            "margin": sol.margin,
            "accepted": sol.accepted,
            "trace": sol.trace,
        }),
    )?;
    if p.write_solution {
        let mut bin = Vec::new();
        write_solution(&sol, &mut bin)?;
        ctx.art.binaries.insert("solution.zvk".into(), bin);
    }
    if !sol.accepted {
        return Ok(());
    }
    let transform = match build_transform(&sol, &split) {
        Ok(t) => t,
        Err(FlowError::Transform(msg)) => {
            return ctx.check("transform", Verdict::Fail, json!({ "rejected": msg }));
        }
        Err(e) => return Err(e),
    };
    ctx.check(
        "transform",
        Verdict::Pass,
        json!({
            "r0": transform.r0,
            "r1": transform.r1,
            "lambda": transform.lambda,
            "lipschitz_range": transform.lipschitz_range,
            "inverse_error": transform.inverse_error,
        }),
    )?;
    let dts = if p.dts.is_empty() { vec![sim.dt, 0.5 * sim.dt] } else { p.dts.clone() };
    let mut table = String::from("x,dt,median,p95,max,mean,n_used,excluded_fraction\n");
    for &x in &p.x {
        let r = conjugacy_refinement(problem, &transform, sim, x, &dts)?;
        for l in &r.levels {
            table.push_str(&format!(
                "{x},{},{},{},{},{},{},{}\n",
                l.dt, l.median, l.p95, l.max, l.mean, l.n_used, l.excluded_fraction
            ));
        }
        let mut verdict = r.verdict;
        let mut in_range = None;
        if let Some((lo, hi)) = p.ratio_range {
            let ok = r.ratios.iter().all(|q| (lo..=hi).contains(q));
            verdict = verdict.and(Verdict::from_pass(ok));
            in_range = Some(ok);
        }
        ctx.check(
            format!("conjugacy(x={x})"),
            verdict,
            json!({ "refinement": r, "ratio_range": p.ratio_range, "ratios_in_range": in_range }),
        )?;
    }
    ctx.table("conjugacy.csv", table);
    Ok(())
}

fn profile_plot(file: &str, title: String, prof: &SemigroupProfile) -> Plot {
    let xs: Vec<f64> = prof.x_grid.iter().map(|x| x[0]).collect();
    Plot {
        file: file.into(),
        title,
        x_label: "x1".into(),
        y_label: "P_t f(x)".into(),
        log_x: false,
        log_y: false,
        series: vec![Series::line("P_t f", xs, prof.values.clone()).with_se_band(&prof.std_errors, Z95)],
    }
}

fn run_markov(problem: &SdeProblem, sim: &SimulationConfig, p: &MarkovParams, ctx: &mut Ctx) -> Result<()> {
    let d = problem.dim();
    let mut any = false;
    if let Some(s) = &p.semigroup {
        let e = Expr::parse(&s.f)?;
        let f = move |x: &[f64]| e.eval(0.0, x);
        let grid = axis_grid(d, s.lo, s.hi, s.n)?;
        let mut table = String::from("x1,value,std_error\n");
        if s.refine {
            let ev = semigroup_refinement(problem, sim, &f, s.sup_f, s.t, &grid)?;
            for (x, (v, se)) in ev.fine.x_grid.iter().zip(ev.fine.values.iter().zip(&ev.fine.std_errors)) {
                table.push_str(&format!("{},{v},{se}\n", x[0]));
            }
            ctx.art.plots.push(profile_plot("semigroup.svg", format!("P_t f at t = {}", s.t), &ev.fine));
            ctx.check("semigroup_continuity", ev.verdict, &ev)?;
        } else {
            let prof = semigroup_map(problem, sim, &f, s.sup_f, s.t, &grid)?;
            for (x, (v, se)) in prof.x_grid.iter().zip(prof.values.iter().zip(&prof.std_errors)) {
                table.push_str(&format!("{},{v},{se}\n", x[0]));
            }
            ctx.art.plots.push(profile_plot("semigroup.svg", format!("P_t f at t = {}", s.t), &prof));
            let mut v = Verdict::from_pass(prof.within_sup);
            if prof.stopped_fraction > 0.0 {
                v = v.and(Verdict::Inconclusive);
            }
            ctx.check("semigroup", v, &prof)?;
        }
        ctx.table("semigroup.csv", table);
        any = true;
    }
    if let Some(h) = &p.hitting {
        need_points(&[h.x0.clone(), h.y0.clone()], d, "markov.hitting")?;
        let horizon = h.horizon.unwrap_or(sim.horizon);
        if h.naive {
            let r = hitting_probability(problem, sim, &h.x0, &h.y0, h.a, horizon)?;
            ctx.check("hitting_naive", r.verdict, &r)?;
        }
        if let Some(g) = &h.girsanov {
            let r = girsanov_hitting(problem, sim, &h.x0, &h.y0, h.a, horizon, g.m, g.truncation)?;
            ctx.check("hitting_girsanov", r.verdict, &r)?;
        }
        any = true;
    }
    if !any {
        return Err(FlowError::Config("markov: enable semigroup or hitting".into()));
    }
    Ok(())
}
