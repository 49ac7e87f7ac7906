//! Moment bounds from the Lyapunov functions `exp{e^{−λt}(1+|x|²)^α}` and
//! `e^{−λt}(1+|x|²)^p`, the supermartingale property behind them, and the
//! contraction of the steered equation `dY = −m(Y−y₀)dt + b dt + σ dW`.

use serde::{Deserialize, Serialize};

use crate::coefficients::SdeProblem;
use crate::error::{FlowError, Result};
use crate::integrators::{
    self, Design, MemberSpec, Observer, SimulationConfig, SnapshotObserver, Snapshots, Steering, StepView, TimeGrid,
};
use crate::report::{MomentReport, Verdict};
use crate::stats::{mean_estimate, pooled_se, top_tail_share};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub alpha: f64,
    pub lambda: f64,
    /// Moment order for the polynomial branch.
    pub p: Option<f64>,
}

/// Smallest admissible `λ = 2α·C_{α+1}` for the exponential branch.
pub fn exp_lambda_threshold(problem: &SdeProblem, alpha: f64) -> Result<f64> {
    let g = problem.growth()?;
    Ok(2.0 * alpha * g.coercivity_constant(alpha + 1.0))
}

/// Smallest admissible `λ = 2p·C_{p−½}` for the polynomial branch, where
/// `C_κ` is the coercivity constant with weight exponent `0`:
/// `⟨x,b⟩ + κ‖σ‖² ≤ C_κ(1+|x|²)`. This follows from
/// `L(1+|x|²)^p ≤ 2p(1+|x|²)^{p−1}[⟨x,b⟩ + (p−½)‖σ‖²]` for `p ≥ 1`.
pub fn poly_lambda_threshold(problem: &SdeProblem, p: f64) -> Result<f64> {
    let g = problem.growth()?;
    let c = g
        .coercivity_constant_with_alpha(p - 0.5, 0.0)
        .ok_or_else(|| FlowError::AuditUnavailable("profile has no numeric coercivity constant".into()))?;
    Ok(2.0 * p * c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub kind: String,
    pub x: Vec<f64>,
    pub lambda: f64,
    pub lambda_threshold: f64,
    pub admissible: bool,
    pub reports: Vec<MomentReport>,
    pub verdict: Verdict,
}

fn grid_indices(config: &SimulationConfig, times: &[f64]) -> Result<Vec<usize>> {
    let grid = TimeGrid::new(config.dt, config.horizon);
    let mut idx = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=config.horizon + 1e-12).contains(&t) {
            return Err(FlowError::InvalidArgument(format!("time {t} outside [0, {}]", config.horizon)));
        }
        idx.push(grid.index_of(t));
    }
    Ok(idx)
}

/// States of independent paths from `x` at the grid points nearest `times`.
pub(crate) fn sample_at_times(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    times: &[f64],
) -> Result<Vec<Snapshots>> {
    let idx = grid_indices(config, times)?;
    let mut sorted = idx.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let d = problem.dim();
    let design = Design::single(problem.field.as_ref(), x.to_vec());
    let snaps = integrators::run(&design, config, config.n_paths, |_| {
        SnapshotObserver::new(sorted.clone(), vec![0], d)
    })?;
    // Reorder to the caller's time order.
    let pos: Vec<usize> = idx.iter().map(|i| sorted.binary_search(i).unwrap_or(0)).collect();
    Ok(snaps
        .into_iter()
        .map(|s| {
            let mut out = Snapshots { dim: d, members: 1, values: Vec::new(), stopped: Vec::new() };
            for &p in &pos {
                out.values.extend_from_slice(s.state(p, 0));
                out.stopped.push(s.is_stopped(p, 0));
            }
            out
        })
        .collect())
}

struct Column {
    values: Vec<f64>,
    stopped: usize,
}

fn column(snaps: &[Snapshots], j: usize, g: &dyn Fn(&[f64]) -> f64) -> Column {
    let mut values = Vec::with_capacity(snaps.len());
    let mut stopped = 0;
    for s in snaps {
        if s.is_stopped(j, 0) {
            stopped += 1;
        } else {
            values.push(g(s.state(j, 0)));
        }
    }
    Column { values, stopped }
}

/// Monte Carlo estimates of `E g_t(X_t)` with a matched-noise halving for
/// the discretization slack.
fn moment_reports(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    times: &[f64],
    integrand: &dyn Fn(f64, &[f64]) -> f64,
    bound: &dyn Fn(f64) -> f64,
) -> Result<Vec<MomentReport>> {
    let fine = sample_at_times(problem, config, x, times)?;
    let coarse = sample_at_times(problem, &config.coarsened(2), x, times)?;
    let mut reports = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let g = |s: &[f64]| integrand(t, s);
        let cf = column(&fine, j, &g);
        let cc = column(&coarse, j, &g);
        let est = mean_estimate(&cf.values);
        let coarse_est = mean_estimate(&cc.values);
        let bias = if t == 0.0 { 0.0 } else { (est.value - coarse_est.value).abs() };
        let exploded = cf.stopped as f64 / fine.len() as f64;
        let mut r = MomentReport::new(
            t,
            est.value,
            est.std_error,
            bound(t),
            if bias.is_finite() { bias } else { 0.0 },
            config.n_paths,
            exploded,
            top_tail_share(&cf.values),
        );
        if !est.value.is_finite() {
            r.downgrade(Verdict::Inconclusive, "estimate overflowed");
        }
        reports.push(r);
    }
    Ok(reports)
}

fn weight(x: &[f64]) -> f64 {
    1.0 + x.iter().map(|v| v * v).sum::<f64>()
}

fn finish(kind: &str, x: &[f64], lambda: f64, threshold: f64, mut reports: Vec<MomentReport>) -> MomentCheck {
    let admissible = lambda >= threshold * (1.0 - 1e-12);
    if !admissible {
        for r in &mut reports {
            r.downgrade(
                Verdict::UnverifiedPremise,
                format!("lambda {lambda} below admissible threshold {threshold}"),
            );
        }
    }
    let verdict = Verdict::all(reports.iter().map(|r| r.verdict));
    MomentCheck {
        kind: kind.into(),
        x: x.to_vec(),
        lambda,
        lambda_threshold: threshold,
        admissible,
        reports,
        verdict,
    }
}

/// `E exp{e^{−λt}(1+|X_t|²)^α} ≤ exp{(1+|x|²)^α}` at each time.
pub fn exp_moment_check(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    spec: &LyapunovSpec,
    times: &[f64],
) -> Result<MomentCheck> {
    if spec.alpha <= 0.0 {
        return Err(FlowError::InvalidArgument("exponential branch needs alpha > 0".into()));
    }
    let threshold = exp_lambda_threshold(problem, spec.alpha)?;
    let (alpha, lambda) = (spec.alpha, spec.lambda);
    let f = move |t: f64, y: &[f64]| ((-lambda * t).exp() * weight(y).powf(alpha)).exp();
    let x0 = x.to_vec();
    let bound = move |_t: f64| f(0.0, &x0);
    let reports = moment_reports(problem, config, x, times, &f, &bound)?;
    Ok(finish("exp", x, lambda, threshold, reports))
}

/// `E(1+|X_t|²)^p ≤ e^{λt}(1+|x|²)^p` at each time.
pub fn poly_moment_check(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    p: f64,
    lambda: f64,
    times: &[f64],
) -> Result<MomentCheck> {
    if p < 1.0 {
        return Err(FlowError::InvalidArgument("moment order must be at least 1".into()));
    }
    let threshold = poly_lambda_threshold(problem, p)?;
    let f = move |_t: f64, y: &[f64]| weight(y).powf(p);
    let wx = weight(x).powf(p);
    let bound = move |t: f64| if t == 0.0 { wx } else { (lambda * t).exp() * wx };
    let reports = moment_reports(problem, config, x, times, &f, &bound)?;
    Ok(finish("poly", x, lambda, threshold, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Paired mean increment between consecutive times and its SE.
    pub increments: Vec<(f64, f64)>,
    pub stopped_fraction: f64,
    pub admissible: bool,
    pub pass: bool,
    pub verdict: Verdict,
}

struct StoppedLyapunov<'a> {
    idx: &'a [usize],
    next: usize,
    radius: f64,
    f: &'a (dyn Fn(f64, &[f64]) -> f64 + Sync),
    stopped_at: Option<(f64, Vec<f64>)>,
    out: Vec<f64>,
}

impl Observer for StoppedLyapunov<'_> {
    type Output = (Vec<f64>, bool);

    fn observe(&mut self, v: &StepView<'_>) {
        if self.stopped_at.is_none() {
            let s = v.state(0);
            let r = s.iter().map(|a| a * a).sum::<f64>().sqrt();
            if r >= self.radius || v.status(0).stopped() {
                self.stopped_at = Some((v.t, s.to_vec()));
            }
        }
        while self.next < self.idx.len() && self.idx[self.next] == v.step {
            let val = match &self.stopped_at {
                Some((t, x)) => (self.f)(*t, x),
                None => (self.f)(v.t, v.state(0)),
            };
            self.out.push(val);
            self.next += 1;
        }
    }

    fn finish(self) -> Self::Output {
        (self.out, self.stopped_at.is_some())
    }
}

/// `t ↦ E f(t∧τ_R, X_{t∧τ_R})` must be nonincreasing; consecutive times are
/// compared through the paired per-path increment with 3-SE slack.
pub fn supermartingale_test(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    spec: &LyapunovSpec,
    radius: f64,
    times: &[f64],
) -> Result<SupermartingaleReport> {
    let mut idx = grid_indices(config, times)?;
    idx.sort_unstable();
    idx.dedup();
    let grid = TimeGrid::new(config.dt, config.horizon);
    let times: Vec<f64> = idx.iter().map(|&i| grid.times()[i]).collect();
    let (alpha, lambda) = (spec.alpha, spec.lambda);
    let f = move |t: f64, y: &[f64]| match spec.p {
        Some(p) => (-lambda * t).exp() * weight(y).powf(p),
        None => ((-lambda * t).exp() * weight(y).powf(alpha)).exp(),
    };
    let threshold = match spec.p {
        Some(p) => poly_lambda_threshold(problem, p),
        None => exp_lambda_threshold(problem, alpha),
    };
    let admissible = threshold.map(|th| lambda >= th * (1.0 - 1e-12)).unwrap_or(false);
    let design = Design::single(problem.field.as_ref(), x.to_vec());
    let rows = integrators::run(&design, config, config.n_paths, |_| StoppedLyapunov {
        idx: &idx,
        next: 0,
        radius,
        f: &f,
        stopped_at: None,
        out: Vec::with_capacity(idx.len()),
    })?;
    let stopped_fraction = rows.iter().filter(|r| r.1).count() as f64 / rows.len() as f64;
    let mut estimates = Vec::new();
    let mut std_errors = Vec::new();
    for j in 0..idx.len() {
        let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
        let e = mean_estimate(&col);
        estimates.push(e.value);
        std_errors.push(e.std_error);
    }
    let mut increments = Vec::new();
    let mut pass = true;
    for j in 1..idx.len() {
        let diff: Vec<f64> = rows.iter().map(|r| r.0[j] - r.0[j - 1]).collect();
        let e = mean_estimate(&diff);
        pass &= e.value <= 3.0 * e.std_error;
        increments.push((e.value, e.std_error));
    }
    let mut verdict = Verdict::from_pass(pass);
    if !estimates.iter().all(|v| v.is_finite()) {
        verdict = verdict.and(Verdict::Inconclusive);
    }
    if !admissible {
        verdict = verdict.and(Verdict::UnverifiedPremise);
    }
    Ok(SupermartingaleReport { times, estimates, std_errors, increments, stopped_fraction, admissible, pass, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringLevel {
    pub m: f64,
    /// `E|Y_T − y₀|²` and its SE.
    pub terminal: (f64, f64),
    /// Largest excess of `E|Y_t−y₀|²` over the fitted bound, in SE units.
    pub worst_excess_se: f64,
    pub pass: bool,
    /// `E sup_t |Y_t|²` on the two halves of the sample.
    pub sup_halves: ((f64, f64), (f64, f64)),
    pub sup_stable: bool,
    pub exploded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub c0: f64,
    pub c1: f64,
    pub fit_m: f64,
    pub levels: Vec<SteeringLevel>,
    pub terminal_decreasing: bool,
    pub verdict: Verdict,
}

struct SteeringObserver {
    target: Vec<f64>,
    stride: usize,
    dist2: Vec<f64>,
    sup: f64,
    stopped: bool,
}

impl Observer for SteeringObserver {
    type Output = (Vec<f64>, f64, bool);

    fn observe(&mut self, v: &StepView<'_>) {
        let s = v.state(0);
        self.sup = self.sup.max(s.iter().map(|a| a * a).sum());
        self.stopped |= v.status(0).stopped();
        if v.step.is_multiple_of(self.stride) {
            self.dist2.push(s.iter().zip(&self.target).map(|(a, b)| (a - b).powi(2)).sum());
        }
    }

    fn finish(self) -> Self::Output {
        (self.dist2, self.sup, self.stopped)
    }
}

/// Fits `E_t ≤ C₀a_t + C₁'` (with `C₁' = C₁/√m`). The noise floor `C₁'`
/// is the largest value of `floor_t`, the same quantity started at the
/// target, where the transient vanishes. `C₀` then covers what remains of
/// `E_t`; it is at least 1 because `E_0 = a_0` and the floor shrinks as
/// `m` grows.
fn fit_envelope(e: &[f64], floor: &[f64], a: &[f64]) -> (f64, f64) {
    let c1 = floor.iter().copied().fold(0.0, f64::max);
    let c0 = e
        .iter()
        .zip(a)
        .filter(|(_, ai)| **ai > 0.0)
        .map(|(ei, ai)| (ei - c1) / ai)
        .fold(1.0, f64::max);
    (c0, c1)
}

/// Steered contraction `E|Y_t−y₀|² ≤ C₀e^{−mt}|x₀−y₀|² + C₁/√m`: constants
/// are fitted at the smallest `m` and validated at the others.
pub fn steering_contraction_check(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x0: &[f64],
    y0: &[f64],
    m_values: &[f64],
) -> Result<SteeringReport> {
    if m_values.is_empty() || m_values.iter().any(|m| !(*m > 0.0)) {
        return Err(FlowError::InvalidArgument("m values must be positive".into()));
    }
    if y0.len() != problem.dim() {
        return Err(FlowError::InvalidArgument("target has the wrong dimension".into()));
    }
    let grid = TimeGrid::new(config.dt, config.horizon);
    let stride = (grid.n_steps() / 200).max(1);
    let times: Vec<f64> = grid.times().iter().copied().step_by(stride).collect();
    let dist0: f64 = x0.iter().zip(y0).map(|(a, b)| (a - b).powi(2)).sum();
    let mut ms = m_values.to_vec();
    ms.sort_by(f64::total_cmp);

    struct Level {
        m: f64,
        means: Vec<(f64, f64)>,
        sup_halves: ((f64, f64), (f64, f64)),
        exploded: f64,
    }
    let simulate = |m: f64, start: &[f64]| {
        let design = Design {
            fields: vec![problem.field.as_ref()],
            members: vec![MemberSpec {
                field: 0,
                start: start.to_vec(),
                steering: Some(Steering { rate: m, target: y0.to_vec() }),
            }],
        };
        integrators::run(&design, config, config.n_paths, |_| SteeringObserver {
            target: y0.to_vec(),
            stride,
            dist2: Vec::with_capacity(times.len()),
            sup: 0.0,
            stopped: false,
        })
    };
    let column_means = |rows: &[(Vec<f64>, f64, bool)]| -> Vec<(f64, f64)> {
        (0..times.len())
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
                let e = mean_estimate(&col);
                (e.value, e.std_error)
            })
            .collect()
    };
    let mut levels = Vec::new();
    for &m in &ms {
        let rows = simulate(m, x0)?;
        let exploded = rows.iter().filter(|r| r.2).count() as f64 / rows.len() as f64;
        let means = column_means(&rows);
        let sups: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let half = sups.len() / 2;
        let a = mean_estimate(&sups[..half.max(1)]);
        let b = mean_estimate(&sups[half..]);
        levels.push(Level { m, means, sup_halves: ((a.value, a.std_error), (b.value, b.std_error)), exploded });
    }

    let fit_m = ms[0];
    let e: Vec<f64> = levels[0].means.iter().map(|p| p.0).collect();
    let floor: Vec<f64> = if dist0 > 0.0 {
        column_means(&simulate(fit_m, y0)?).iter().map(|p| p.0).collect()
    } else {
        e.clone()
    };
    let a: Vec<f64> = times.iter().map(|t| (-fit_m * t).exp() * dist0).collect();
    let (c0, c1p) = fit_envelope(&e, &floor, &a);
    let c1 = c1p * fit_m.sqrt();

    let mut out = Vec::new();
    let mut verdict = Verdict::Pass;
    for lv in &levels {
        let mut worst = f64::NEG_INFINITY;
        let mut pass = true;
        for (t, (mean, se)) in times.iter().zip(&lv.means) {
            let bound = c0 * (-lv.m * t).exp() * dist0 + c1 / lv.m.sqrt();
            let excess = mean - bound - 1e-9 * (1.0 + bound.abs());
            pass &= excess <= 3.0 * se;
            let in_se = if *se > 0.0 { excess / se } else if excess > 0.0 { f64::INFINITY } else { 0.0 };
            worst = worst.max(in_se);
        }
        let ((ma, sa), (mb, sb)) = lv.sup_halves;
        let sup_stable = ma.is_finite() && mb.is_finite() && (ma - mb).abs() <= 3.0 * pooled_se(sa, sb);
        let mut v = Verdict::from_pass(pass && sup_stable);
        if lv.exploded > 0.0 {
            v = v.and(Verdict::Inconclusive);
        }
        verdict = verdict.and(v);
        out.push(SteeringLevel {
            m: lv.m,
            terminal: *lv.means.last().unwrap_or(&(f64::NAN, f64::NAN)),
            worst_excess_se: worst,
            pass,
            sup_halves: lv.sup_halves,
            sup_stable,
            exploded_fraction: lv.exploded,
        });
    }
    let terminal_decreasing = out.windows(2).all(|w| w[1].terminal.0 <= w[0].terminal.0 + 3.0 * pooled_se(w[0].terminal.1, w[1].terminal.1));
    Ok(SteeringReport {
        x0: x0.to_vec(),
        y0: y0.to_vec(),
        c0,
        c1,
        fit_m,
        levels: out,
        terminal_decreasing,
        verdict,
    })
}
