//! Difference-quotient moment norms of the flow, grid witnesses `g` with
//! `‖X(x)−X(y)‖ ≤ |x−y|(g(x)+g(y))`, finite-difference flow derivatives and
//! the discrete local maximal function.

mod gradient;
mod maximal;

pub use gradient::{fd_gradient, write_gradient_csv, FdGradientReport, FlowDerivativeEstimate, GradientVariant};
pub use maximal::{maximal_function, maximal_inequality_check, Lattice, MaximalInequalityReport};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::SdeProblem;
use crate::error::{FlowError, Result};
use crate::integrators::{self, Coupling, Design, Observer, PathEnsemble, SimulationConfig, StepView};
use crate::report::Verdict;
use crate::stats::{jackknife_transform, linear_fit, LinearFit};

/// Order of the time norm: `L^r([0,T])` or the grid maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeNorm {
    Lr(f64),
    Sup,
}

impl TimeNorm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "sup" | "∞" => Ok(TimeNorm::Sup),
            v => {
                let r: f64 = v.parse().map_err(|_| FlowError::InvalidArgument(format!("bad time norm {v:?}")))?;
                if r >= 1.0 && r.is_finite() {
                    Ok(TimeNorm::Lr(r))
                } else {
                    Err(FlowError::InvalidArgument(format!("time norm order must be ≥ 1, got {r}")))
                }
            }
        }
    }
}

/// Running discrete `L^r` norm of a path functional, left-endpoint rule.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TimeNormAcc {
    norm: TimeNorm,
    acc: f64,
    last: f64,
}

impl TimeNormAcc {
    pub(crate) fn new(norm: TimeNorm) -> Self {
        Self { norm, acc: 0.0, last: 0.0 }
    }

    /// Feed `|Z|` at grid index `step`, reached by a step of length `dt_prev`.
    pub(crate) fn push(&mut self, step: usize, dt_prev: f64, z: f64) {
        match self.norm {
            TimeNorm::Sup => self.acc = self.acc.max(z),
            TimeNorm::Lr(r) => {
                if step > 0 {
                    self.acc += self.last.powf(r) * dt_prev;
                }
                self.last = z;
            }
        }
    }

    pub(crate) fn value(&self) -> f64 {
        match self.norm {
            TimeNorm::Sup => self.acc,
            TimeNorm::Lr(r) => self.acc.powf(1.0 / r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientNorm {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: f64,
    pub r: TimeNorm,
    /// `(E‖X(x)−X(y)‖_{L^r}^p)^{1/p}`.
    pub value: f64,
    pub std_error: f64,
    pub n_used: usize,
    pub excluded_fraction: f64,
    pub verdict: Verdict,
}

/// Largest share of excluded pairs for a conclusive norm.
pub const MAX_EXCLUDED: f64 = 0.01;

/// `(E N^p)^{1/p}` from per-path norms, scaled by the largest sample so that
/// identical samples return their common value exactly.
pub(crate) fn moment_norm(norms: &[f64], p: f64) -> (f64, f64) {
    let scale = norms.iter().copied().fold(0.0, f64::max);
    if norms.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if scale == 0.0 || !scale.is_finite() {
        return (scale, if scale == 0.0 { 0.0 } else { f64::NAN });
    }
    let scaled: Vec<f64> = norms.iter().map(|v| (v / scale).powf(p)).collect();
    let e = jackknife_transform(&scaled, |m| m.powf(1.0 / p));
    (scale * e.value, scale * e.std_error)
}

fn assemble(x: &[f64], y: &[f64], p: f64, r: TimeNorm, per_path: &[Option<f64>]) -> QuotientNorm {
    let used: Vec<f64> = per_path.iter().flatten().copied().collect();
    let excluded_fraction = 1.0 - used.len() as f64 / per_path.len().max(1) as f64;
    let (value, std_error) = moment_norm(&used, p);
    let verdict = if excluded_fraction > MAX_EXCLUDED || !value.is_finite() {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    QuotientNorm {
        x: x.to_vec(),
        y: y.to_vec(),
        p,
        r,
        value,
        std_error,
        n_used: used.len(),
        excluded_fraction,
        verdict,
    }
}

/// Norm of `Z = X(x) − X(y)` for pair `pair` of a synchronously coupled
/// ensemble. Replicates in which either member was stopped are excluded.
pub fn quotient_norm(ensemble: &PathEnsemble, pair: usize, p: f64, r: TimeNorm) -> Result<QuotientNorm> {
    let Coupling::Synchronous { pairs } = &ensemble.coupling else {
        return Err(FlowError::InvalidArgument("ensemble is not coupled".into()));
    };
    let &(a, b) = pairs
        .get(pair)
        .ok_or_else(|| FlowError::InvalidArgument(format!("pair {pair} not in ensemble")))?;
    if !(p >= 1.0) {
        return Err(FlowError::InvalidArgument("moment order must be ≥ 1".into()));
    }
    let d = ensemble.dim;
    let mut z = vec![0.0; d];
    let per_path: Vec<Option<f64>> = (0..ensemble.n_replicates())
        .map(|rep| {
            let (pa, pb) = ensemble.pair_paths(rep, pair)?;
            if pa.exit_index.is_some() || pa.failure_index.is_some() || pb.exit_index.is_some() || pb.failure_index.is_some() {
                return None;
            }
            let mut acc = TimeNormAcc::new(r);
            for k in 0..=ensemble.n_steps() {
                ensemble.member_difference(rep, a, b, k, &mut z);
                let dt = if k > 0 { ensemble.time_grid[k] - ensemble.time_grid[k - 1] } else { 0.0 };
                acc.push(k, dt, crate::coefficients::norm(&z));
            }
            Some(acc.value())
        })
        .collect();
    Ok(assemble(&ensemble.starts[a], &ensemble.starts[b], p, r, &per_path))
}

/// Per-pair path norms accumulated while simulating, for designs whose
/// ensembles would not fit in memory.
struct PairNorms<'a> {
    pairs: &'a [(usize, usize)],
    accs: Vec<TimeNormAcc>,
    z: Vec<f64>,
    stopped: Vec<bool>,
}

impl Observer for PairNorms<'_> {
    type Output = Vec<Option<f64>>;

    fn observe(&mut self, v: &StepView<'_>) {
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            v.difference_into(a, b, &mut self.z);
            self.accs[i].push(v.step, v.dt_prev, crate::coefficients::norm(&self.z));
        }
        for j in 0..v.members() {
            self.stopped[j] |= v.status(j).stopped();
        }
    }

    fn finish(self) -> Self::Output {
        self.pairs
            .iter()
            .zip(&self.accs)
            .map(|(&(a, b), acc)| (!self.stopped[a] && !self.stopped[b]).then(|| acc.value()))
            .collect()
    }
}

/// Quotient norms for every pair of `points` listed in `pairs`, with all
/// points driven by one Brownian path per replicate.
pub fn coupled_quotient_norms(
    problem: &SdeProblem,
    config: &SimulationConfig,
    points: &[Vec<f64>],
    pairs: &[(usize, usize)],
    p: f64,
    r: TimeNorm,
) -> Result<Vec<QuotientNorm>> {
    config.validate()?;
    if !(p >= 1.0) {
        return Err(FlowError::InvalidArgument("moment order must be ≥ 1".into()));
    }
    let d = problem.dim();
    let design = Design::coupled(problem.field.as_ref(), points.to_vec());
    let rows = integrators::run(&design, config, config.n_paths, |_| PairNorms {
        pairs,
        accs: vec![TimeNormAcc::new(r); pairs.len()],
        z: vec![0.0; d],
        stopped: vec![false; points.len()],
    })?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let col: Vec<Option<f64>> = rows.iter().map(|row| row[i]).collect();
            assemble(&points[a], &points[b], p, r, &col)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairQuotient {
    pub a: usize,
    pub b: usize,
    /// `‖X(x)−X(y)‖ / |x−y|`.
    pub quotient: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// Regressor: `(1+|x|²)^α` for `α > 0`, `ln(1+|x|²)` for `α = 0`.
    pub alpha: f64,
    pub fit: LinearFit,
    /// Smallest `C` with `g ≤ C·envelope` at the fitted (or capped) slope.
    pub constant: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevWitness {
    pub base_grid: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub g_std_error: Vec<f64>,
    pub p: f64,
    pub r: TimeNorm,
    pub pairs: Vec<PairQuotient>,
    pub rounds: usize,
    pub converged: bool,
    /// Largest `quotient − (g(x)+g(y))` over the pairs.
    pub worst_violation: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub envelope: Option<EnvelopeFit>,
    pub envelope_pass: bool,
    pub excluded_fraction: f64,
    pub verdict: Verdict,
}

/// Upper limit on simulated pairs; larger pair sets are thinned evenly.
pub const MAX_WITNESS_PAIRS: usize = 2000;

fn witness_pairs(n: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    if all.len() <= MAX_WITNESS_PAIRS {
        return all;
    }
    let stride = all.len().div_ceil(MAX_WITNESS_PAIRS);
    all.into_iter().step_by(stride).collect()
}

/// Iterative assignment: `g(x) = ½·max_y q(x,y)`, then
/// `g(x) ← max(g(x), max_y (q(x,y) − g(y))⁺)` until nothing moves.
pub(crate) fn fit_witness(n: usize, pairs: &[PairQuotient], max_rounds: usize) -> (Vec<f64>, Vec<f64>, usize, bool) {
    let mut g = vec![0.0f64; n];
    let mut se = vec![0.0f64; n];
    for q in pairs {
        for i in [q.a, q.b] {
            if 0.5 * q.quotient > g[i] {
                g[i] = 0.5 * q.quotient;
                se[i] = 0.5 * q.std_error;
            }
        }
    }
    for round in 1..=max_rounds {
        let mut moved = false;
        for q in pairs {
            for (i, j) in [(q.a, q.b), (q.b, q.a)] {
                let need = (q.quotient - g[j]).max(0.0);
                if need > g[i] {
                    g[i] = need;
                    se[i] = q.std_error;
                    moved = true;
                }
            }
        }
        if !moved {
            return (g, se, round, true);
        }
    }
    (g, se, max_rounds, false)
}

/// Tests `g ≤ C·envelope` by regressing `ln g`: for `α > 0` on
/// `(1+|x|²)^α` with slope at most `1` (up to 3 SE), for `α = 0` on
/// `ln(1+|x|²)` with a finite fitted exponent.
pub fn envelope_fit(points: &[Vec<f64>], g: &[f64], alpha: f64) -> Option<EnvelopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, &gv) in points.iter().zip(g) {
        if gv > 0.0 && gv.is_finite() {
            let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
            xs.push(if alpha > 0.0 { w.powf(alpha) } else { w.ln() });
            ys.push(gv.ln());
        }
    }
    if xs.len() < 2 {
        return None;
    }
    let fit = linear_fit(&xs, &ys);
    let slope_se = if fit.slope_se.is_finite() { fit.slope_se } else { 0.0 };
    let (slope, pass) = if alpha > 0.0 {
        (fit.slope.min(1.0), fit.slope <= 1.0 + 3.0 * slope_se)
    } else {
        (fit.slope, fit.slope.is_finite())
    };
    let constant = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x).exp())
        .fold(0.0, f64::max);
    Some(EnvelopeFit { alpha, fit, constant, pass })
}

/// Simulates all pairs of `base_grid` under one coupling, fits the witness
/// `g` and tests it against the growth envelope of the problem's profile
/// (`α = 1` when the problem has none).
pub fn witness_fit(
    problem: &SdeProblem,
    config: &SimulationConfig,
    base_grid: &[Vec<f64>],
    p: f64,
    r: TimeNorm,
) -> Result<SobolevWitness> {
    if base_grid.len() < 3 {
        return Err(FlowError::InvalidArgument("witness grid needs at least 3 points".into()));
    }
    let pair_idx = witness_pairs(base_grid.len());
    let norms = coupled_quotient_norms(problem, config, base_grid, &pair_idx, p, r)?;
    let mut excluded = 0.0f64;
    let pairs: Vec<PairQuotient> = pair_idx
        .iter()
        .zip(&norms)
        .map(|(&(a, b), q)| {
            excluded = excluded.max(q.excluded_fraction);
            let dist: f64 = base_grid[a].iter().zip(&base_grid[b]).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            PairQuotient { a, b, quotient: q.value / dist, std_error: q.std_error / dist }
        })
        .collect();
    let (g, g_std_error, rounds, converged) = fit_witness(base_grid.len(), &pairs, 100);
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_pair = None;
    for q in &pairs {
        let v = q.quotient - (g[q.a] + g[q.b]);
        if v > worst_violation {
            worst_violation = v;
            worst_pair = Some((q.a, q.b));
        }
    }
    let alpha = problem.growth.as_ref().map_or(1.0, |gp| gp.alpha);
    let envelope = envelope_fit(base_grid, &g, alpha);
    // A witness that vanishes identically trivially satisfies any envelope.
    let envelope_pass = envelope.as_ref().map_or(g.iter().all(|v| *v == 0.0), |e| e.pass);
    let mut verdict = Verdict::from_pass(converged && envelope_pass && worst_violation <= 1e-12);
    if excluded > MAX_EXCLUDED || g.iter().any(|v| !v.is_finite()) {
        verdict = verdict.and(Verdict::Inconclusive);
    }
    Ok(SobolevWitness {
        base_grid: base_grid.to_vec(),
        g,
        g_std_error,
        p,
        r,
        pairs,
        rounds,
        converged,
        worst_violation,
        worst_pair,
        envelope,
        envelope_pass,
        excluded_fraction: excluded,
        verdict,
    })
}

/// `x_1..x_d,g,g_se,envelope` rows.
pub fn write_witness_csv(w: &SobolevWitness, mut out: impl Write) -> Result<()> {
    let d = w.base_grid.first().map_or(0, Vec::len);
    let cols: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    writeln!(out, "{},g,g_se,envelope", cols.join(","))?;
    for (i, x) in w.base_grid.iter().enumerate() {
        let env = w.envelope.as_ref().map_or(f64::NAN, |e| envelope_value(e, x));
        let coords: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{},{}", coords.join(","), w.g[i], w.g_std_error[i], env)?;
    }
    Ok(())
}

/// The fitted envelope curve `C·exp(s·(1+|x|²)^α)` or `C(1+|x|²)^γ`.
pub fn envelope_value(e: &EnvelopeFit, x: &[f64]) -> f64 {
    let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    if e.alpha > 0.0 {
        e.constant * (e.fit.slope.min(1.0) * w.powf(e.alpha)).exp()
    } else {
        e.constant * w.powf(e.fit.slope)
    }
}
