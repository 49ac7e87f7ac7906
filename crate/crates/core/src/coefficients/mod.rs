//! Coefficient fields `b`, `σ`, growth metadata and hypothesis audits.

mod audit;
mod growth;
mod presets;

pub use audit::{
    audit_coercivity, audit_convex_majorant, audit_ellipticity, audit_growth, audit_monotonicity,
    default_audit_grid, pair_subgrid, AuditGrid, AuditReport, AuditSettings,
};
pub use growth::{
    numerical_coercivity_constant, CoercivityDomain, GrowthProfile, GrowthSummary, Majorant,
};
pub use presets::{preset, preset_ids, PresetKind};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{FlowError, Result};
use crate::expr::Expr;

/// A pair `(b, σ)` with `b: [0,∞)×ℝ^d → ℝ^d` and `σ: [0,∞)×ℝ^d → ℝ^{d×m}`.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major `d × m` diffusion matrix.
    fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn drift(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(t, x, &mut out);
        DVector::from_vec(out)
    }

    fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let (d, m) = (self.dim(), self.noise_dim());
        let mut out = vec![0.0; d * m];
        self.diffusion_into(t, x, &mut out);
        DMatrix::from_row_slice(d, m, &out)
    }
}

type VecFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Field defined by closures; convenient for tests and derived fields.
#[derive(Clone)]
pub struct FnField {
    d: usize,
    m: usize,
    drift: Arc<VecFn>,
    diffusion: Arc<VecFn>,
}

impl FnField {
    pub fn new(
        d: usize,
        m: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { d, m, drift: Arc::new(drift), diffusion: Arc::new(diffusion) }
    }
}

impl CoefficientField for FnField {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

/// Field whose components are parsed expressions.
#[derive(Debug, Clone)]
pub struct ExprField {
    d: usize,
    m: usize,
    drift: Vec<Expr>,
    diffusion: Vec<Expr>,
}

impl ExprField {
    /// `diffusion` lists the `d × m` entries row by row.
    pub fn new(d: usize, m: usize, drift: Vec<Expr>, diffusion: Vec<Expr>) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(FlowError::InvalidArgument("dimensions must be positive".into()));
        }
        if drift.len() != d {
            return Err(FlowError::InvalidArgument(format!(
                "drift has {} components, expected {d}",
                drift.len()
            )));
        }
        if diffusion.len() != d * m {
            return Err(FlowError::InvalidArgument(format!(
                "diffusion has {} entries, expected {}",
                diffusion.len(),
                d * m
            )));
        }
        if let Some(e) = drift.iter().chain(&diffusion).find(|e| e.arity() > d) {
            return Err(FlowError::InvalidArgument(format!(
                "expression references x{} but the state dimension is {d}",
                e.arity()
            )));
        }
        Ok(Self { d, m, drift, diffusion })
    }

    pub fn parse(d: usize, m: usize, drift: &[String], diffusion: &[String]) -> Result<Self> {
        let drift = drift.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        let diffusion = diffusion.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>>>()?;
        Self::new(d, m, drift, diffusion)
    }
}

impl CoefficientField for ExprField {
    fn dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(t, x);
        }
    }
    fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.diffusion) {
            *o = e.eval(t, x);
        }
    }
}

/// An SDE together with optional hypothesis metadata.
#[derive(Clone)]
pub struct SdeProblem {
    pub field: Arc<dyn CoefficientField>,
    pub growth: Option<GrowthProfile>,
    pub preset_id: String,
    pub description: String,
}

impl SdeProblem {
    pub fn new(field: Arc<dyn CoefficientField>, preset_id: impl Into<String>) -> Self {
        Self { field, growth: None, preset_id: preset_id.into(), description: String::new() }
    }

    pub fn with_growth(mut self, growth: GrowthProfile) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.field.noise_dim()
    }

    pub fn growth(&self) -> Result<&GrowthProfile> {
        self.growth.as_ref().ok_or_else(|| {
            FlowError::AuditUnavailable(format!("problem '{}' has no growth metadata", self.preset_id))
        })
    }
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("preset_id", &self.preset_id)
            .field("dim", &self.dim())
            .field("noise_dim", &self.noise_dim())
            .field("has_growth", &self.growth.is_some())
            .finish()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn frobenius_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_field_evaluates_rows() {
        let f = ExprField::parse(
            2,
            2,
            &["-x1".into(), "-x2".into()],
            &["1".into(), "0".into(), "x1".into(), "1".into()],
        )
        .unwrap();
        let s = f.diffusion(0.0, &[3.0, 4.0]);
        assert_eq!(s[(1, 0)], 3.0);
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(f.drift(0.0, &[3.0, 4.0])[1], -4.0);
    }

    #[test]
    fn expr_field_rejects_bad_shapes() {
        assert!(ExprField::parse(1, 1, &["x2".into()], &["1".into()]).is_err());
        assert!(ExprField::parse(1, 1, &["x".into()], &["1".into(), "1".into()]).is_err());
    }

    #[test]
    fn missing_growth_is_an_audit_error() {
        let p = preset("step-drift-1d").unwrap();
        assert!(matches!(p.growth(), Err(FlowError::AuditUnavailable(_))));
    }
}
