use std::sync::Arc;

use super::growth::{maximize_on_interval, CoercivityDomain, GrowthProfile, Majorant};
use super::{CoefficientField, SdeProblem};
use crate::error::{FlowError, Result};

/// Radius of the ray searches used to derive preset constants.
const SEARCH_RADIUS: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PresetKind {
    Example1 { beta: f64 },
    Bm { d: usize },
    Ou { d: usize },
    StepDrift,
    DegenerateExample1 { gamma: f64 },
}

fn example1_drift(x: f64) -> f64 {
    if x < 0.0 {
        1.0 - x.powi(5)
    } else {
        -(1.0 + x.powi(5))
    }
}

impl CoefficientField for PresetKind {
    fn dim(&self) -> usize {
        match self {
            PresetKind::Bm { d } | PresetKind::Ou { d } => *d,
            _ => 1,
        }
    }

    fn noise_dim(&self) -> usize {
        self.dim()
    }

    fn drift_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            PresetKind::Example1 { .. } | PresetKind::DegenerateExample1 { .. } => {
                out[0] = example1_drift(x[0])
            }
            PresetKind::Bm { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            PresetKind::Ou { .. } => out.iter_mut().zip(x).for_each(|(o, v)| *o = -v),
            PresetKind::StepDrift => {
                let v = x[0];
                out[0] = if v.abs() <= 2.0 && v != 0.0 { -v.signum() } else { 0.0 };
            }
        }
    }

    fn diffusion_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            PresetKind::Example1 { beta } => out[0] = (1.0 + x[0] * x[0]).powf(*beta),
            PresetKind::DegenerateExample1 { gamma } => out[0] = (1.0 + x[0] * x[0]).powf(-gamma),
            PresetKind::Bm { d } | PresetKind::Ou { d } => {
                for i in 0..*d {
                    for j in 0..*d {
                        out[i * d + j] = if i == j { 1.0 } else { 0.0 };
                    }
                }
            }
            PresetKind::StepDrift => out[0] = 1.0,
        }
    }
}

/// Template identifiers, in display order.
pub fn preset_ids() -> &'static [&'static str] {
    &["example1(β)", "bm(d)", "ou(d)", "step-drift-1d", "degenerate-example1(γ)"]
}

fn parse_call<'a>(name: &'a str, head: &str) -> Option<&'a str> {
    name.strip_prefix(head)?.strip_prefix('(')?.strip_suffix(')').map(str::trim)
}

fn parse_real(arg: &str, name: &str) -> Result<f64> {
    arg.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FlowError::InvalidPreset(format!("'{name}': '{arg}' is not a number")))
}

fn parse_dim(arg: &str, name: &str) -> Result<usize> {
    match arg.parse::<usize>() {
        Ok(d) if d >= 1 => Ok(d),
        _ => Err(FlowError::InvalidPreset(format!("'{name}': dimension must be a positive integer"))),
    }
}

impl PresetKind {
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        if name == "step-drift-1d" {
            return Ok(PresetKind::StepDrift);
        }
        if let Some(arg) = parse_call(name, "degenerate-example1") {
            let gamma = parse_real(arg, name)?;
            if gamma <= 0.0 {
                return Err(FlowError::InvalidPreset(format!("'{name}': gamma must be positive")));
            }
            return Ok(PresetKind::DegenerateExample1 { gamma });
        }
        if let Some(arg) = parse_call(name, "example1") {
            let beta = parse_real(arg, name)?;
            if !(0.0..1.0).contains(&beta) {
                return Err(FlowError::InvalidPreset(format!("'{name}': beta must lie in [0,1)")));
            }
            return Ok(PresetKind::Example1 { beta });
        }
        if let Some(arg) = parse_call(name, "bm") {
            return Ok(PresetKind::Bm { d: parse_dim(arg, name)? });
        }
        if let Some(arg) = parse_call(name, "ou") {
            return Ok(PresetKind::Ou { d: parse_dim(arg, name)? });
        }
        Err(FlowError::PresetNotFound(name.to_string()))
    }

    pub fn id(&self) -> String {
        match self {
            PresetKind::Example1 { beta } => format!("example1({beta})"),
            PresetKind::Bm { d } => format!("bm({d})"),
            PresetKind::Ou { d } => format!("ou({d})"),
            PresetKind::StepDrift => "step-drift-1d".into(),
            PresetKind::DegenerateExample1 { gamma } => format!("degenerate-example1({gamma})"),
        }
    }

    fn description(&self) -> &'static str {
        match self {
            PresetKind::Example1 { .. } => {
                "b(x) = (1-x^5)1{x<0} - (1+x^5)1{x>=0}, sigma(x) = (1+x^2)^beta; super-linear, drift jump at 0"
            }
            PresetKind::Bm { .. } => "b = 0, sigma = identity",
            PresetKind::Ou { .. } => "b(x) = -x, sigma = identity",
            PresetKind::StepDrift => "b(x) = -sign(x) 1{|x|<=2}, sigma = 1; bounded discontinuous drift",
            PresetKind::DegenerateExample1 { .. } => {
                "example1 drift with decaying diffusion sigma(x) = (1+x^2)^(-gamma)"
            }
        }
    }

    fn growth(&self, field: Arc<dyn CoefficientField>) -> Option<GrowthProfile> {
        let ray = CoercivityDomain::Ray { radius: SEARCH_RADIUS };
        let d = self.dim();
        let abs_b_plus_sigma = |r: f64| {
            let mut x = vec![0.0; d];
            x[0] = r;
            let b = field.drift(0.0, &x);
            let s = field.diffusion(0.0, &x);
            b.norm() + s.norm()
        };
        match *self {
            PresetKind::Bm { .. } | PresetKind::Ou { .. } => {
                let alpha_prime = 0.5;
                let c2 = maximize_on_interval(
                    |r| abs_b_plus_sigma(r).ln() / (1.0 + r * r).powf(alpha_prime),
                    SEARCH_RADIUS,
                )
                .1;
                Some(
                    GrowthProfile::new(1.0, alpha_prime, 1.0, c2.max(1.0), 1.0, 1.0)
                        .with_numeric_coercivity(field, ray),
                )
            }
            PresetKind::Example1 { beta } => {
                let e = (2.0 * (2.0 * beta - 1.0)).max(0.0);
                let alpha_prime = (2.0 * beta - 1.0).max(0.5);
                // sup of σ'(z)² / (1+|z|^e): the mean-value bound for ‖σ(x)-σ(y)‖².
                let c_sigma = maximize_on_interval(
                    |z| {
                        let ds = 2.0 * beta * z * (1.0 + z * z).powf(beta - 1.0);
                        ds * ds / (1.0 + z.abs().powf(e))
                    },
                    SEARCH_RADIUS,
                )
                .1
                .max(0.0)
                    * (1.0 + 1e-6);
                let r0 = 1.0;
                let c3 = maximize_on_interval(
                    |r| {
                        if r.abs() < r0 {
                            f64::NEG_INFINITY
                        } else {
                            c_sigma * (0.5 + r.abs().powf(e)) / (1.0 + r * r).powf(alpha_prime)
                        }
                    },
                    SEARCH_RADIUS,
                )
                .1;
                let c2 = maximize_on_interval(
                    |r| abs_b_plus_sigma(r).ln() / (1.0 + r * r).powf(alpha_prime),
                    SEARCH_RADIUS,
                )
                .1;
                Some(
                    GrowthProfile::new(
                        1.0,
                        alpha_prime,
                        1.0,
                        (c2 * (1.0 + 1e-9)).max(1.0),
                        if c3 > 0.0 { c3 * (1.0 + 1e-9) } else { 1.0 },
                        r0,
                    )
                    .with_gammas(1.0, 1.0, e)
                    .with_majorant(Majorant::PowerLaw { c: c_sigma, exponent: e })
                    .with_numeric_coercivity(field, ray),
                )
            }
            PresetKind::DegenerateExample1 { gamma } => {
                let gamma2 = 2.5;
                let c_sigma = maximize_on_interval(
                    |z| {
                        let ds = -2.0 * gamma * z * (1.0 + z * z).powf(-gamma - 1.0);
                        ds * ds
                    },
                    SEARCH_RADIUS,
                )
                .1
                .max(0.0)
                    * (1.0 + 1e-6);
                let c2 = maximize_on_interval(
                    |r| abs_b_plus_sigma(r) / (1.0 + r * r).powf(gamma2),
                    SEARCH_RADIUS,
                )
                .1;
                let r0 = 1.0;
                // F = 1.5·κ·c_σ is constant; the logarithmic tail is smallest at |x| = R₀.
                let c3 = 1.5 * c_sigma / (1.0f64 + r0 * r0).ln();
                Some(
                    GrowthProfile::new(
                        0.0,
                        0.0,
                        1.0,
                        c2 * (1.0 + 1e-9),
                        if c3 > 0.0 { c3 * (1.0 + 1e-9) } else { 1.0 },
                        r0,
                    )
                    .with_gammas(gamma, gamma2, 0.0)
                    .with_majorant(Majorant::PowerLaw { c: c_sigma, exponent: 0.0 })
                    .with_numeric_coercivity(field, ray),
                )
            }
            PresetKind::StepDrift => None,
        }
    }
}

/// Looks up a preset by identifier, e.g. `"example1(0.4)"` or `"bm(3)"`.
pub fn preset(name: &str) -> Result<SdeProblem> {
    let kind = PresetKind::parse(name)?;
    let field: Arc<dyn CoefficientField> = Arc::new(kind);
    let growth = kind.growth(field.clone());
    Ok(SdeProblem {
        field,
        growth,
        preset_id: kind.id(),
        description: kind.description().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_drift_values() {
        let p = preset("example1(0.4)").unwrap();
        assert_eq!(p.field.drift(0.0, &[2.0])[0], -33.0);
        assert_eq!(p.field.drift(0.0, &[-1.0])[0], 2.0);
        assert_eq!(p.field.drift(0.0, &[0.0])[0], -1.0);
        assert!((p.field.diffusion(0.0, &[2.0])[(0, 0)] - 5f64.powf(0.4)).abs() < 1e-15);
    }

    #[test]
    fn bm_and_ou_shapes() {
        let bm = preset("bm(3)").unwrap();
        let s = bm.field.diffusion(0.7, &[1.0, -2.0, 3.0]);
        assert_eq!(s, nalgebra::DMatrix::identity(3, 3));
        let ou = preset("ou(1)").unwrap();
        assert_eq!(ou.field.drift(0.0, &[1.5])[0], -1.5);
    }

    #[test]
    fn bm_and_ou_coercivity_constant_is_one_at_unit_kappa() {
        // C_1 = ‖I_d‖² = d, attained at the origin.
        for (id, d) in [("bm(1)", 1.0), ("ou(1)", 1.0), ("ou(2)", 2.0)] {
            let p = preset(id).unwrap();
            let c = p.growth().unwrap().coercivity_constant(1.0);
            assert!((c - d).abs() < 1e-9, "{id}: {c}");
        }
        let c2 = preset("bm(1)").unwrap().growth().unwrap().coercivity_constant(2.0);
        assert!((c2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn step_drift_is_bounded_and_supported_in_two() {
        let p = preset("step-drift-1d").unwrap();
        assert_eq!(p.field.drift(0.0, &[1.0])[0], -1.0);
        assert_eq!(p.field.drift(0.0, &[-2.0])[0], 1.0);
        assert_eq!(p.field.drift(0.0, &[2.5])[0], 0.0);
        assert!(p.growth.is_none());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(preset("example1(1.0)"), Err(FlowError::InvalidPreset(_))));
        assert!(matches!(preset("example1(-0.1)"), Err(FlowError::InvalidPreset(_))));
        assert!(matches!(preset("bm(0)"), Err(FlowError::InvalidPreset(_))));
        assert!(matches!(preset("nope"), Err(FlowError::PresetNotFound(_))));
        assert!(matches!(preset("degenerate-example1(0)"), Err(FlowError::InvalidPreset(_))));
    }

    #[test]
    fn preset_profiles_validate() {
        for id in ["example1(0.4)", "example1(0.0)", "example1(0.9)", "bm(2)", "ou(3)", "degenerate-example1(1)"] {
            let p = preset(id).unwrap();
            p.growth().unwrap().validate().unwrap_or_else(|e| panic!("{id}: {e}"));
        }
    }
}
