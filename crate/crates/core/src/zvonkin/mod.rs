//! Zvonkin reduction in one dimension: split the drift with a smooth radial
//! cutoff, solve the backward equation `∂_t u + ½σ²u'' + b₁u' + b₁ = λu`
//! with `u(T) = 0`, build `Φ_t(x) = x + u(t,x)χ_{2R₀}(x)` and the transformed
//! coefficients, and compare `Y = Φ_t(X)` with a direct simulation of `Y`.

mod conjugacy;
mod format;
mod interp;
mod pde;
mod transform;

pub use conjugacy::{conjugacy_check, conjugacy_refinement, ConjugacyLevel, ConjugacyReport};
pub use format::{read_solution, write_solution};
pub use interp::catmull_rom;
pub use pde::{solve_at_lambda, solve_backward_pde, LambdaAttempt, PdeGrid, PdeSolution, MAX_DOUBLINGS};
pub use transform::{build_transform, ZvonkinTransform};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{norm, CoefficientField, SdeProblem};
use crate::error::{FlowError, Result};

/// Quintic smoothstep `6s⁵ − 15s⁴ + 10s³` on `[0,1]`, clamped outside.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

fn smoothstep_d1(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

fn smoothstep_d2(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
}

/// Radial cutoff profile: 1 on `ρ ≤ R`, 0 on `ρ ≥ 2R`, quintic in between.
pub fn cutoff_profile(r: f64, rho: f64) -> f64 {
    if rho <= r {
        1.0
    } else if rho >= 2.0 * r {
        0.0
    } else {
        1.0 - smoothstep((rho - r) / r)
    }
}

/// `χ_R(x)` on the line.
pub fn chi(r: f64, x: f64) -> f64 {
    cutoff_profile(r, x.abs())
}

/// `χ_R'(x)`.
pub fn chi_d1(r: f64, x: f64) -> f64 {
    let rho = x.abs();
    if rho <= r || rho >= 2.0 * r {
        return 0.0;
    }
    -smoothstep_d1((rho - r) / r) / r * x.signum()
}

/// `χ_R''(x)`.
pub fn chi_d2(r: f64, x: f64) -> f64 {
    let rho = x.abs();
    if rho <= r || rho >= 2.0 * r {
        return 0.0;
    }
    -smoothstep_d2((rho - r) / r) / (r * r)
}

/// Smallest admissible cutoff radius.
pub const MIN_R0: f64 = 4.0;

/// One part of the drift split; the diffusion is the base one.
pub struct SplitPart {
    base: Arc<dyn CoefficientField>,
    r0: f64,
    inner: bool,
}

impl CoefficientField for SplitPart {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn noise_dim(&self) -> usize {
        self.base.noise_dim()
    }

    fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.drift_into(t, x, out);
        let c = cutoff_profile(self.r0, norm(x));
        let w = if self.inner { c } else { 1.0 - c };
        for v in out.iter_mut() {
            *v *= w;
        }
    }

    fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.diffusion_into(t, x, out);
    }
}

/// `b = b₁ + b₂` with `b₁ = b·χ_{R₀}` and `b₂ = b·(1 − χ_{R₀})`.
#[derive(Clone)]
pub struct DriftSplit {
    pub r0: f64,
    pub base: Arc<dyn CoefficientField>,
    pub inner: Arc<SplitPart>,
    pub outer: Arc<SplitPart>,
    /// `sup |∇χ_{R₀}|` sampled on the transition annulus.
    pub grad_chi_max: f64,
}

impl std::fmt::Debug for DriftSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftSplit").field("r0", &self.r0).field("grad_chi_max", &self.grad_chi_max).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub r0: f64,
    pub grad_chi_max: f64,
    pub grad_chi_ok: bool,
    /// Largest `|b₁+b₂−b| / max(1,|b|)` over the audit points.
    pub reconstruction_error: f64,
}

pub fn split_drift(problem: &SdeProblem, r0: f64) -> Result<DriftSplit> {
    if !(r0 >= MIN_R0) {
        return Err(FlowError::InvalidArgument(format!("cutoff radius must be at least {MIN_R0}, got {r0}")));
    }
    let base = problem.field.clone();
    let grad_chi_max = (0..=10_000)
        .map(|i| chi_d1(r0, r0 * (1.0 + i as f64 / 10_000.0)).abs())
        .fold(0.0, f64::max);
    Ok(DriftSplit {
        r0,
        inner: Arc::new(SplitPart { base: base.clone(), r0, inner: true }),
        outer: Arc::new(SplitPart { base: base.clone(), r0, inner: false }),
        base,
        grad_chi_max,
    })
}

impl DriftSplit {
    pub fn audit(&self, points: &[Vec<f64>]) -> SplitAudit {
        let d = self.base.dim();
        let (mut b, mut b1, mut b2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut worst = 0.0f64;
        for x in points {
            self.base.drift_into(0.0, x, &mut b);
            self.inner.drift_into(0.0, x, &mut b1);
            self.outer.drift_into(0.0, x, &mut b2);
            for i in 0..d {
                let err = (b1[i] + b2[i] - b[i]).abs() / b[i].abs().max(1.0);
                worst = worst.max(err);
            }
        }
        SplitAudit {
            r0: self.r0,
            grad_chi_max: self.grad_chi_max,
            grad_chi_ok: self.grad_chi_max <= 0.5,
            reconstruction_error: worst,
        }
    }
}

#[cfg(test)]
mod tests;
