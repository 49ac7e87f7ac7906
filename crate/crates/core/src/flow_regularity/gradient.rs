use serde::{Deserialize, Serialize};

use crate::coefficients::SdeProblem;
use crate::error::{FlowError, Result};
use crate::integrators::{self, Design, Observer, SimulationConfig, StepView, TimeGrid};
use crate::report::{MomentReport, Verdict};
use crate::stats::{mean_estimate, top_tail_share};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientVariant {
    /// `sup_t E|∇X_t|^p`.
    SupOfExpectation,
    /// `E sup_t |∇X_t|^p`, a grid lower bound of the essential supremum.
    ExpectationOfSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDerivativeEstimate {
    pub x: Vec<f64>,
    pub h: f64,
    pub variant: GradientVariant,
    /// Recorded grid times.
    pub times: Vec<f64>,
    /// Mean Jacobian per recorded time, row-major `d×d`.
    pub matrices: Vec<Vec<f64>>,
    /// `E|∇X_t|^p` per recorded time (Frobenius norm).
    pub moments: Vec<f64>,
    pub sup_of_expectation: f64,
    pub expectation_of_sup: f64,
    pub expectation_of_sup_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGradientReport {
    pub estimate: FlowDerivativeEstimate,
    pub report: MomentReport,
    /// Same quantity with step `h/2` on the same noise.
    pub half_step_value: f64,
    pub warnings: Vec<String>,
}

/// At most this many recorded times per run; the supremum over all grid
/// times is still taken per path.
const MAX_RECORDED: usize = 200;

struct JacobianObserver {
    d: usize,
    stride: usize,
    p: f64,
    diff: Vec<f64>,
    jac: Vec<f64>,
    recorded: Vec<f64>,
    moments: Vec<f64>,
    sup: f64,
    stopped: bool,
}

impl JacobianObserver {
    fn jacobian(&mut self, v: &StepView<'_>) {
        let d = self.d;
        for i in 0..d {
            let (plus, minus) = (2 * i, 2 * i + 1);
            v.difference_into(plus, minus, &mut self.diff);
            let width = v.start(plus)[i] - v.start(minus)[i];
            for row in 0..d {
                self.jac[row * d + i] = self.diff[row] / width;
            }
        }
    }
}

impl Observer for JacobianObserver {
    type Output = (Vec<f64>, Vec<f64>, f64, bool);

    fn observe(&mut self, v: &StepView<'_>) {
        self.jacobian(v);
        let m = self.jac.iter().map(|a| a * a).sum::<f64>().powf(0.5 * self.p);
        self.sup = self.sup.max(m);
        for j in 0..v.members() {
            self.stopped |= v.status(j).stopped();
        }
        if v.step.is_multiple_of(self.stride) {
            self.recorded.extend_from_slice(&self.jac);
            self.moments.push(m);
        }
    }

    fn finish(self) -> Self::Output {
        (self.recorded, self.moments, self.sup, self.stopped)
    }
}

fn estimate(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    h: f64,
    p: f64,
    variant: GradientVariant,
) -> Result<(FlowDerivativeEstimate, Vec<f64>, f64)> {
    let d = problem.dim();
    let mut starts = Vec::with_capacity(2 * d);
    for i in 0..d {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += h;
        minus[i] -= h;
        starts.push(plus);
        starts.push(minus);
    }
    let grid = TimeGrid::new(config.dt, config.horizon);
    let stride = grid.n_steps().div_ceil(MAX_RECORDED).max(1);
    let times: Vec<f64> = grid.times().iter().copied().step_by(stride).collect();
    let design = Design::coupled(problem.field.as_ref(), starts);
    let rows = integrators::run(&design, config, config.n_paths, |_| JacobianObserver {
        d,
        stride,
        p,
        diff: vec![0.0; d],
        jac: vec![0.0; d * d],
        recorded: Vec::with_capacity(times.len() * d * d),
        moments: Vec::with_capacity(times.len()),
        sup: 0.0,
        stopped: false,
    })?;
    let live: Vec<_> = rows.iter().filter(|r| !r.3).collect();
    let stopped = 1.0 - live.len() as f64 / rows.len() as f64;
    let mut matrices = Vec::with_capacity(times.len());
    let mut moments = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mut mat = vec![0.0; d * d];
        for (e, m) in mat.iter_mut().enumerate() {
            let col: Vec<f64> = live.iter().map(|r| r.0[k * d * d + e]).collect();
            *m = crate::stats::shifted_mean(&col);
        }
        matrices.push(mat);
        let col: Vec<f64> = live.iter().map(|r| r.1[k]).collect();
        moments.push(crate::stats::shifted_mean(&col));
    }
    let sups: Vec<f64> = live.iter().map(|r| r.2).collect();
    let eos = mean_estimate(&sups);
    let soe = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        FlowDerivativeEstimate {
            x: x.to_vec(),
            h,
            variant,
            times,
            matrices,
            moments,
            sup_of_expectation: soe,
            expectation_of_sup: eos.value,
            expectation_of_sup_se: eos.std_error,
        },
        sups,
        stopped,
    ))
}

/// Central-difference Jacobian of the flow at `x` from the coupled starts
/// `x ± h·e_i`; columns are divided by the realized start difference so a
/// translation-invariant flow gives the identity exactly. `bound` is the
/// envelope value the chosen variant is compared with (`+∞` if none).
pub fn fd_gradient(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    h: Option<f64>,
    p: f64,
    variant: GradientVariant,
    bound: Option<f64>,
) -> Result<FdGradientReport> {
    config.validate()?;
    if x.len() != problem.dim() {
        return Err(FlowError::InvalidArgument("start point has the wrong dimension".into()));
    }
    if !(p >= 1.0) {
        return Err(FlowError::InvalidArgument("moment order must be ≥ 1".into()));
    }
    let h = h.unwrap_or_else(|| 1e-3 * (1.0 + crate::coefficients::norm(x)));
    if !(h > 0.0) {
        return Err(FlowError::InvalidArgument("finite-difference step must be positive".into()));
    }
    let (est, sups, stopped) = estimate(problem, config, x, h, p, variant)?;
    let (half, _, _) = estimate(problem, config, x, 0.5 * h, p, variant)?;
    let pick = |e: &FlowDerivativeEstimate| match variant {
        GradientVariant::SupOfExpectation => e.sup_of_expectation,
        GradientVariant::ExpectationOfSup => e.expectation_of_sup,
    };
    let (value, half_value) = (pick(&est), pick(&half));
    let mut warnings = Vec::new();
    if (value - half_value).abs() > 0.2 * value.abs().max(half_value.abs()) {
        warnings.push(format!("estimate moved from {value} to {half_value} when halving h; h may be below the noise floor"));
    }
    let se = match variant {
        GradientVariant::ExpectationOfSup => est.expectation_of_sup_se,
        // The supremum of means is not a smooth functional; the spread of
        // the per-path supremum still bounds its sampling error.
        GradientVariant::SupOfExpectation => est.expectation_of_sup_se,
    };
    let mut report = MomentReport::new(
        config.horizon,
        value,
        se,
        bound.unwrap_or(f64::INFINITY),
        0.0,
        config.n_paths,
        stopped,
        top_tail_share(&sups),
    );
    if !warnings.is_empty() {
        report.downgrade(Verdict::Inconclusive, warnings[0].clone());
    }
    Ok(FdGradientReport { estimate: est, report, half_step_value: half_value, warnings })
}

/// `x_1..x_d,t,moment,j_11..j_dd` rows.
pub fn write_gradient_csv(e: &FlowDerivativeEstimate, mut out: impl std::io::Write) -> Result<()> {
    let d = e.x.len();
    let mut head = String::from("t,moment");
    for r in 1..=d {
        for c in 1..=d {
            head.push_str(&format!(",j_{r}{c}"));
        }
    }
    writeln!(out, "{head}")?;
    for (k, t) in e.times.iter().enumerate() {
        let cells: Vec<String> = e.matrices[k].iter().map(|v| v.to_string()).collect();
        writeln!(out, "{t},{},{}", e.moments[k], cells.join(","))?;
    }
    Ok(())
}
