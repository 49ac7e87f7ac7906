use serde::{Deserialize, Serialize};

use super::DriftSplit;
use crate::coefficients::CoefficientField;
use crate::error::{FlowError, Result};

/// Uniform grid on `[−L, L] × [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    pub half_width: f64,
    pub dx: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl PdeGrid {
    /// `L = 4R₀`, so the support `|x| ≤ 2R₀` of `b₁` keeps a margin of
    /// `2R₀` to the Dirichlet boundary.
    pub fn for_cutoff(r0: f64, horizon: f64) -> Self {
        Self { half_width: 4.0 * r0, dx: 0.01, dt: 0.005, horizon }
    }

    pub fn n_x(&self) -> usize {
        (2.0 * self.half_width / self.dx).round() as usize + 1
    }

    pub fn n_t(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    fn validate(&self, r0: f64) -> Result<()> {
        if !(self.dx > 0.0 && self.dt > 0.0 && self.horizon > 0.0) {
            return Err(FlowError::Pde("grid steps and horizon must be positive".into()));
        }
        if self.half_width < 4.0 * r0 - 1e-12 {
            return Err(FlowError::Pde(format!(
                "box half-width {} leaves less than 2R₀ margin around the support (needs ≥ {})",
                self.half_width,
                4.0 * r0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaAttempt {
    pub lambda: f64,
    pub sup_u: f64,
    pub sup_du: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeSolution {
    pub lambda: f64,
    pub r0: f64,
    pub x0: f64,
    pub dx: f64,
    /// Ascending slice times `0 = t_0 < … < t_n = T`.
    pub times: Vec<f64>,
    /// `u[k][i] = u(t_k, x0 + i·dx)`.
    pub u: Vec<Vec<f64>>,
    pub sup_u: f64,
    pub sup_du: f64,
    pub accepted: bool,
    /// Distance from the support of `b₁` to the lateral boundary.
    pub margin: f64,
    pub trace: Vec<LambdaAttempt>,
}

impl PdeSolution {
    pub fn n_x(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    /// Central first differences (one-sided at the ends).
    pub fn du(&self, k: usize) -> Vec<f64> {
        first_diff(&self.u[k], self.dx)
    }

    /// Second differences (zero at the Dirichlet ends).
    pub fn d2u(&self, k: usize) -> Vec<f64> {
        let u = &self.u[k];
        let n = u.len();
        let mut out = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (self.dx * self.dx);
        }
        out
    }
}

pub(crate) fn first_diff(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (u[1] - u[0]) / dx;
    out[n - 1] = (u[n - 1] - u[n - 2]) / dx;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
    }
    out
}

/// Maximum number of λ doublings after the initial attempt.
pub const MAX_DOUBLINGS: usize = 40;

fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for i in 1..n {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

/// Solves at a fixed λ; returns slices in ascending time order and the
/// norms `sup|u|`, `sup|u'|`.
pub fn solve_at_lambda(split: &DriftSplit, grid: &PdeGrid, lambda: f64) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    let field = split.inner.as_ref();
    if field.dim() != 1 || field.noise_dim() != 1 {
        return Err(FlowError::Pde("the grid solver handles scalar equations only".into()));
    }
    grid.validate(split.r0)?;
    let nx = grid.n_x();
    let nt = grid.n_t();
    let step = grid.horizon / nt as f64;
    let x0 = -grid.half_width;
    let xs: Vec<f64> = (0..nx).map(|i| x0 + grid.dx * i as f64).collect();
    let mut slices = vec![vec![0.0; nx]; nt + 1];
    let (mut b, mut s) = ([0.0], [0.0]);
    let mut lower = vec![0.0; nx];
    let mut upper = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    // Backward in t: slice nt is the terminal condition u(T) = 0.
    for n in 1..=nt {
        let k = nt - n;
        let t = k as f64 * step;
        let bdf2 = n >= 2;
        let c0 = if bdf2 { 1.5 / step } else { 1.0 / step };
        for i in 0..nx {
            if i == 0 || i == nx - 1 {
                lower[i] = 0.0;
                upper[i] = 0.0;
                diag[i] = 1.0;
                rhs[i] = 0.0;
                continue;
            }
            field.drift_into(t, &xs[i..=i], &mut b);
            field.diffusion_into(t, &xs[i..=i], &mut s);
            let a = 0.5 * s[0] * s[0];
            if !(a > 0.0) {
                return Err(FlowError::Pde(format!("diffusion degenerates at x = {}", xs[i])));
            }
            let h2 = grid.dx * grid.dx;
            let (mut lo, mut up) = (a / h2, a / h2);
            let mut mid = -2.0 * a / h2;
            if b[0].abs() * grid.dx <= 2.0 * a {
                lo -= b[0] / (2.0 * grid.dx);
                up += b[0] / (2.0 * grid.dx);
            } else if b[0] > 0.0 {
                up += b[0] / grid.dx;
                mid -= b[0] / grid.dx;
            } else {
                lo -= b[0] / grid.dx;
                mid += b[0] / grid.dx;
            }
            lower[i] = -lo;
            upper[i] = -up;
            diag[i] = c0 + lambda - mid;
            let prev = &slices[k + 1];
            rhs[i] = b[0]
                + if bdf2 {
                    (4.0 * prev[i] - slices[k + 2][i]) / (2.0 * step)
                } else {
                    prev[i] / step
                };
        }
        thomas(&lower, &mut diag, &upper, &mut rhs);
        slices[k].copy_from_slice(&rhs);
    }
    let mut sup_u = 0.0f64;
    let mut sup_du = 0.0f64;
    for sl in &slices {
        sup_u = sl.iter().fold(sup_u, |m, v| m.max(v.abs()));
        sup_du = first_diff(sl, grid.dx).iter().fold(sup_du, |m, v| m.max(v.abs()));
    }
    if !(sup_u.is_finite() && sup_du.is_finite()) {
        return Err(FlowError::Pde(format!("non-finite solution at λ = {lambda}")));
    }
    Ok((slices, sup_u, sup_du))
}

/// Doubles λ from `lambda0` until `sup|u| + sup|u'| ≤ ½`.
pub fn solve_backward_pde(split: &DriftSplit, grid: &PdeGrid, lambda0: f64) -> Result<PdeSolution> {
    if !(lambda0 > 0.0) {
        return Err(FlowError::InvalidArgument("λ must be positive".into()));
    }
    let mut trace = Vec::new();
    let mut lambda = lambda0;
    for _ in 0..=MAX_DOUBLINGS {
        let (u, sup_u, sup_du) = solve_at_lambda(split, grid, lambda)?;
        let accepted = sup_u + sup_du <= 0.5;
        trace.push(LambdaAttempt { lambda, sup_u, sup_du, accepted });
        if accepted {
            let nt = u.len() - 1;
            return Ok(PdeSolution {
                lambda,
                r0: split.r0,
                x0: -grid.half_width,
                dx: grid.dx,
                times: (0..=nt).map(|k| grid.horizon * k as f64 / nt as f64).collect(),
                u,
                sup_u,
                sup_du,
                accepted,
                margin: grid.half_width - 2.0 * split.r0,
                trace,
            });
        }
        lambda *= 2.0;
    }
    let last = trace.last().copied().expect("at least one attempt");
    Err(FlowError::Pde(format!(
        "smallness not reached after {MAX_DOUBLINGS} doublings: λ = {}, sup|u| = {}, sup|u'| = {}",
        last.lambda, last.sup_u, last.sup_du
    )))
}
