//! Evidence for continuity of `x ↦ E f(X_t(x))` and for positivity of
//! hitting probabilities, including a steered importance-sampling
//! estimator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::{norm, SdeProblem};
use crate::error::{FlowError, Result};
use crate::integrators::{self, Design, MemberSpec, Observer, SimulationConfig, Steering, StepView};
use crate::lyapunov::sample_at_times;
use crate::report::Verdict;
use crate::stats::{mean_estimate, pooled_se, wilson_interval, Z95};

/// Bounded test function of the state.
pub type TestFn = dyn Fn(&[f64]) -> f64 + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupProfile {
    pub t: f64,
    pub x_grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sup_f: f64,
    /// `max_j |P_t f(x_{j+1}) − P_t f(x_j)| / |x_{j+1} − x_j|`.
    pub modulus: f64,
    pub modulus_se: f64,
    pub within_sup: bool,
    pub stopped_fraction: f64,
}

/// Estimates `E f(X_t(x))` on an ordered grid with independent streams per
/// point. `sup_f` is the declared bound of `|f|`.
pub fn semigroup_map(
    problem: &SdeProblem,
    config: &SimulationConfig,
    f: &TestFn,
    sup_f: f64,
    t: f64,
    x_grid: &[Vec<f64>],
) -> Result<SemigroupProfile> {
    if x_grid.is_empty() {
        return Err(FlowError::InvalidArgument("empty grid".into()));
    }
    let mut values = Vec::with_capacity(x_grid.len());
    let mut std_errors = Vec::with_capacity(x_grid.len());
    let mut stopped = 0usize;
    for (j, x) in x_grid.iter().enumerate() {
        let cfg = SimulationConfig { stream_offset: config.stream_offset + (j * config.n_paths) as u64, ..config.clone() };
        let snaps = sample_at_times(problem, &cfg, x, &[t])?;
        let vals: Vec<f64> = snaps
            .iter()
            .filter(|s| {
                let st = s.is_stopped(0, 0);
                stopped += st as usize;
                !st
            })
            .map(|s| f(s.state(0, 0)))
            .collect();
        let e = mean_estimate(&vals);
        values.push(e.value);
        std_errors.push(e.std_error);
    }
    let (mut modulus, mut modulus_se) = (0.0f64, 0.0);
    for j in 1..x_grid.len() {
        let h: f64 = x_grid[j].iter().zip(&x_grid[j - 1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let m = (values[j] - values[j - 1]).abs() / h;
        if m > modulus {
            modulus = m;
            modulus_se = pooled_se(std_errors[j], std_errors[j - 1]) / h;
        }
    }
    let within_sup = values.iter().zip(&std_errors).all(|(v, s)| v.abs() <= sup_f + 3.0 * s);
    Ok(SemigroupProfile {
        t,
        x_grid: x_grid.to_vec(),
        values,
        std_errors,
        sup_f,
        modulus,
        modulus_se,
        within_sup,
        stopped_fraction: stopped as f64 / (x_grid.len() * config.n_paths) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityEvidence {
    pub coarse: SemigroupProfile,
    pub fine: SemigroupProfile,
    /// Fine modulus minus coarse modulus, in pooled SE units.
    pub excess_se: f64,
    pub stable: bool,
    /// Always "evidence": finite sampling cannot establish continuity.
    pub label: String,
    pub verdict: Verdict,
}

/// Profiles on `x_grid` and on the grid with midpoints inserted; the
/// modulus is stable when halving the spacing raises it by at most 3
/// pooled SE.
pub fn semigroup_refinement(
    problem: &SdeProblem,
    config: &SimulationConfig,
    f: &TestFn,
    sup_f: f64,
    t: f64,
    x_grid: &[Vec<f64>],
) -> Result<ContinuityEvidence> {
    if x_grid.len() < 2 {
        return Err(FlowError::InvalidArgument("refinement needs at least 2 grid points".into()));
    }
    let mut fine_grid = Vec::with_capacity(2 * x_grid.len() - 1);
    for w in x_grid.windows(2) {
        fine_grid.push(w[0].clone());
        fine_grid.push(w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect());
    }
    fine_grid.push(x_grid[x_grid.len() - 1].clone());
    let coarse = semigroup_map(problem, config, f, sup_f, t, x_grid)?;
    let fine_cfg = SimulationConfig {
        stream_offset: config.stream_offset + (x_grid.len() * config.n_paths) as u64,
        ..config.clone()
    };
    let fine = semigroup_map(problem, &fine_cfg, f, sup_f, t, &fine_grid)?;
    let se = pooled_se(coarse.modulus_se, fine.modulus_se);
    let diff = fine.modulus - coarse.modulus;
    let excess_se = if se > 0.0 { diff / se } else if diff > 0.0 { f64::INFINITY } else { 0.0 };
    let stable = diff <= 3.0 * se;
    let mut verdict = Verdict::from_pass(stable && coarse.within_sup && fine.within_sup);
    if coarse.stopped_fraction > 0.0 || fine.stopped_fraction > 0.0 {
        verdict = verdict.and(Verdict::Inconclusive);
    }
    Ok(ContinuityEvidence { coarse, fine, excess_se, stable, label: "evidence".into(), verdict })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HittingMethod {
    Naive,
    Girsanov { m: f64, truncation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub a: f64,
    pub horizon: f64,
    pub method: HittingMethod,
    /// For the weighted method a lower bound of the hitting probability.
    pub p_hat: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub successes: usize,
    pub n_paths: usize,
    pub ess: Option<f64>,
    pub warnings: Vec<String>,
    pub verdict: Verdict,
}

fn with_horizon(config: &SimulationConfig, horizon: f64) -> SimulationConfig {
    SimulationConfig { horizon, ..config.clone() }
}

fn check_args(problem: &SdeProblem, x0: &[f64], y0: &[f64], a: f64) -> Result<()> {
    if x0.len() != problem.dim() || y0.len() != problem.dim() {
        return Err(FlowError::InvalidArgument("points have the wrong dimension".into()));
    }
    if !(a > 0.0) {
        return Err(FlowError::InvalidArgument("target radius must be positive".into()));
    }
    Ok(())
}

/// Fraction of paths with `|X_T − y₀| ≤ a`; stopped paths count as misses.
pub fn hitting_probability(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x0: &[f64],
    y0: &[f64],
    a: f64,
    horizon: f64,
) -> Result<HittingEstimate> {
    check_args(problem, x0, y0, a)?;
    let cfg = with_horizon(config, horizon);
    let snaps = sample_at_times(problem, &cfg, x0, &[horizon])?;
    let successes = snaps
        .iter()
        .filter(|s| !s.is_stopped(0, 0) && dist(s.state(0, 0), y0) <= a)
        .count();
    let n = snaps.len();
    let p = successes as f64 / n as f64;
    let (lo, hi) = wilson_interval(successes, n, Z95);
    let mut warnings = Vec::new();
    let verdict = if successes == 0 {
        warnings.push("no successes; the steered estimator may resolve this target".into());
        Verdict::Unresolved
    } else {
        Verdict::from_pass(lo > 0.0)
    };
    Ok(HittingEstimate {
        x0: x0.to_vec(),
        y0: y0.to_vec(),
        a,
        horizon,
        method: HittingMethod::Naive,
        p_hat: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
        ci_low: lo,
        ci_high: hi,
        successes,
        n_paths: n,
        ess: None,
        warnings,
        verdict,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Accumulates `log Z = −∫U·dW − ½∫|U|²dt` with the left-endpoint control
/// `U = −mσ*(σσ*)⁻¹(Y − y₀)`, and watches `τ_N`.
struct WeightObserver<'a> {
    problem: &'a SdeProblem,
    m: f64,
    y0: &'a [f64],
    truncation: f64,
    prev: Vec<f64>,
    sigma: Vec<f64>,
    log_z: f64,
    truncated: bool,
    singular: bool,
    stopped: bool,
}

impl WeightObserver<'_> {
    /// `U` at the state `y`, or `None` when `σσ*` is singular there.
    fn control(&mut self, t: f64, y: &[f64]) -> Option<Vec<f64>> {
        let (d, k) = (self.problem.dim(), self.problem.noise_dim());
        if self.m == 0.0 {
            return Some(vec![0.0; k]);
        }
        self.problem.field.diffusion_into(t, y, &mut self.sigma);
        let s = DMatrix::from_row_slice(d, k, &self.sigma);
        let r = DVector::from_iterator(d, y.iter().zip(self.y0).map(|(a, b)| a - b));
        let v = (&s * s.transpose()).lu().solve(&r)?;
        Some((s.transpose() * v * -self.m).iter().copied().collect())
    }
}

impl Observer for WeightObserver<'_> {
    type Output = (f64, bool, Vec<f64>);

    fn observe(&mut self, v: &StepView<'_>) {
        self.stopped |= v.status(0).stopped();
        if v.step > 0 && !self.truncated && !self.singular {
            let prev = std::mem::take(&mut self.prev);
            match self.control(v.t - v.dt_prev, &prev) {
                Some(u) => {
                    let dot: f64 = u.iter().zip(v.dw).map(|(a, b)| a * b).sum();
                    let sq: f64 = u.iter().map(|a| a * a).sum();
                    self.log_z += -dot - 0.5 * sq * v.dt_prev;
                }
                None => self.singular = true,
            }
        }
        self.prev = v.state(0).to_vec();
        if norm(v.state(0)) >= self.truncation {
            self.truncated = true;
        }
    }

    fn finish(self) -> Self::Output {
        (self.log_z, self.truncated || self.singular || self.stopped, self.prev)
    }
}

/// Share of the path budget below which the effective sample size draws a
/// warning.
pub const ESS_WARN_SHARE: f64 = 0.01;

/// Steered estimator `E[Z_T·1{|Y_T − y₀| ≤ a, τ_N > T}]`, a lower bound of
/// `P(|X_T − y₀| ≤ a)`. `Y` carries the extra drift `−m(Y − y₀)`; defaults
/// are `m = 4/T` and `N = 10(1 + |x₀| + |y₀|)`.
#[allow(clippy::too_many_arguments)]
pub fn girsanov_hitting(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x0: &[f64],
    y0: &[f64],
    a: f64,
    horizon: f64,
    m: Option<f64>,
    truncation: Option<f64>,
) -> Result<HittingEstimate> {
    check_args(problem, x0, y0, a)?;
    let m = m.unwrap_or(4.0 / horizon);
    let truncation = truncation.unwrap_or(10.0 * (1.0 + norm(x0) + norm(y0)));
    if !(m >= 0.0) || !(truncation > 0.0) {
        return Err(FlowError::InvalidArgument("m must be ≥ 0 and N > 0".into()));
    }
    let cfg = with_horizon(config, horizon);
    let design = Design {
        fields: vec![problem.field.as_ref()],
        members: vec![MemberSpec {
            field: 0,
            start: x0.to_vec(),
            steering: (m > 0.0).then(|| Steering { rate: m, target: y0.to_vec() }),
        }],
    };
    let dk = problem.dim() * problem.noise_dim();
    let rows = integrators::run(&design, &cfg, cfg.n_paths, |_| WeightObserver {
        problem,
        m,
        y0,
        truncation,
        prev: Vec::new(),
        sigma: vec![0.0; dk],
        log_z: 0.0,
        truncated: false,
        singular: false,
        stopped: false,
    })?;
    let n = rows.len();
    let log_w: Vec<Option<f64>> = rows
        .iter()
        .map(|(lz, excluded, y)| (!excluded && dist(y, y0) <= a).then_some(*lz))
        .collect();
    let successes = log_w.iter().flatten().count();
    let shift = log_w.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut warnings = Vec::new();
    let (p_hat, std_error, ess) = if successes == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let w: Vec<f64> = log_w.iter().map(|l| l.map_or(0.0, |v| (v - shift).exp())).collect();
        let s1: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        let scale = shift.exp();
        let mean = s1 / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0).max(1.0);
        (scale * mean, scale * (var / n as f64).sqrt(), s1 * s1 / s2)
    };
    if ess < ESS_WARN_SHARE * n as f64 {
        warnings.push(format!("effective sample size {ess:.1} is below {:.0}% of the paths", 100.0 * ESS_WARN_SHARE));
    }
    if !p_hat.is_finite() {
        warnings.push("weights overflowed".into());
    }
    let ci_low = (p_hat - Z95 * std_error).max(0.0);
    let verdict = if successes == 0 {
        Verdict::Unresolved
    } else if !p_hat.is_finite() {
        Verdict::Inconclusive
    } else {
        Verdict::from_pass(ci_low > 0.0)
    };
    Ok(HittingEstimate {
        x0: x0.to_vec(),
        y0: y0.to_vec(),
        a,
        horizon,
        method: HittingMethod::Girsanov { m, truncation },
        p_hat,
        std_error,
        ci_low,
        ci_high: p_hat + Z95 * std_error,
        successes,
        n_paths: n,
        ess: Some(ess),
        warnings,
        verdict,
    })
}
