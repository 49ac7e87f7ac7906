use serde::{Deserialize, Serialize};

use super::ZvonkinTransform;
use crate::coefficients::SdeProblem;
use crate::error::{FlowError, Result};
use crate::integrators::{self, Design, MemberSpec, Observer, SimulationConfig, StepView};
use crate::report::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyLevel {
    pub dt: f64,
    /// Quantiles of the per-path `max_t |Y_t − Φ_t(X_t)|`.
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub mean: f64,
    pub n_used: usize,
    pub excluded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugacyReport {
    pub x: f64,
    pub levels: Vec<ConjugacyLevel>,
    /// `median(dt_i) / median(dt_{i+1})`.
    pub ratios: Vec<f64>,
    /// `log(ratio) / log(dt_i / dt_{i+1})` per consecutive pair.
    pub orders: Vec<f64>,
    pub monotone: bool,
    pub verdict: Verdict,
}

struct ErrorObserver<'a> {
    transform: &'a ZvonkinTransform,
    worst: f64,
    stopped: bool,
}

impl Observer for ErrorObserver<'_> {
    type Output = Option<f64>;

    fn observe(&mut self, v: &StepView<'_>) {
        self.stopped |= v.status(0).stopped() || v.status(1).stopped();
        let e = (v.state(1)[0] - self.transform.phi(v.t, v.state(0)[0])).abs();
        self.worst = self.worst.max(e);
    }

    fn finish(self) -> Self::Output {
        (!self.stopped).then_some(self.worst)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < sorted.len() {
        (1.0 - w) * sorted[i] + w * sorted[i + 1]
    } else {
        sorted[i]
    }
}

fn level(problem: &SdeProblem, transform: &ZvonkinTransform, config: &SimulationConfig, x: f64) -> Result<ConjugacyLevel> {
    config.validate()?;
    let design = Design {
        fields: vec![problem.field.as_ref(), transform],
        members: vec![
            MemberSpec::new(vec![x]),
            MemberSpec { field: 1, start: vec![transform.phi(0.0, x)], steering: None },
        ],
    };
    let rows = integrators::run(&design, config, config.n_paths, |_| ErrorObserver {
        transform,
        worst: 0.0,
        stopped: false,
    })?;
    let mut errs: Vec<f64> = rows.into_iter().flatten().collect();
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    Ok(ConjugacyLevel {
        dt: config.dt,
        median: quantile(&errs, 0.5),
        p95: quantile(&errs, 0.95),
        max: errs.last().copied().unwrap_or(f64::NAN),
        mean: errs.iter().sum::<f64>() / n.max(1) as f64,
        n_used: n,
        excluded_fraction: 1.0 - n as f64 / config.n_paths as f64,
    })
}

/// Pathwise `max_t |Y_t − Φ_t(X_t)|` with `X` under `(b, σ)`, `Y` under
/// `(b̃, σ̃)` from `Φ_0(x)`, both driven by the same increments, for each
/// step size in `dts`. Medians must decrease along the (decreasing) list.
pub fn conjugacy_refinement(
    problem: &SdeProblem,
    transform: &ZvonkinTransform,
    config: &SimulationConfig,
    x: f64,
    dts: &[f64],
) -> Result<ConjugacyReport> {
    if problem.dim() != 1 {
        return Err(FlowError::InvalidArgument("conjugacy is checked in one dimension".into()));
    }
    if dts.is_empty() {
        return Err(FlowError::InvalidArgument("no step sizes".into()));
    }
    let mut levels = Vec::new();
    for &dt in dts {
        let cfg = SimulationConfig { dt, ..config.clone() };
        levels.push(level(problem, transform, &cfg, x)?);
    }
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].median / w[1].median).collect();
    let orders: Vec<f64> = levels
        .windows(2)
        .zip(&ratios)
        .map(|(w, r)| r.ln() / (w[0].dt / w[1].dt).ln())
        .collect();
    let monotone = levels.windows(2).all(|w| w[1].median < w[0].median) || levels.iter().all(|l| l.median == 0.0);
    let mut verdict = Verdict::from_pass(monotone);
    if levels.iter().any(|l| l.excluded_fraction > 0.0) {
        verdict = verdict.and(Verdict::Inconclusive);
    }
    Ok(ConjugacyReport { x, levels, ratios, orders, monotone, verdict })
}

/// [`conjugacy_refinement`] at `dt` and `dt/2`.
pub fn conjugacy_check(
    problem: &SdeProblem,
    transform: &ZvonkinTransform,
    config: &SimulationConfig,
    x: f64,
) -> Result<ConjugacyReport> {
    conjugacy_refinement(problem, transform, config, x, &[config.dt, 0.5 * config.dt])
}
