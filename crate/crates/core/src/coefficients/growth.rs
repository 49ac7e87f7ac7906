use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{frobenius_sq, CoefficientField};
use crate::error::{FlowError, Result};
use crate::expr::Expr;

/// Where the coercivity constant `C_κ` is searched for.
#[derive(Debug, Clone, PartialEq)]
pub enum CoercivityDomain {
    /// Points `r·e₁` with `|r| ≤ radius`; exact for rotation-invariant fields.
    Ray { radius: f64 },
    /// An explicit point set.
    Points(Vec<Vec<f64>>),
}

/// Maximizes `f` over `[-radius, radius]` on a sinh-spaced grid (dense near
/// the origin, coarse far out) and polishes the best candidates by
/// golden-section search. Returns `(argmax, max)`.
pub(crate) fn maximize_on_interval(f: impl Fn(f64) -> f64, radius: f64) -> (f64, f64) {
    const N: usize = 20_001;
    const A: f64 = 10.0;
    let scale = radius / A.sinh();
    let grid: Vec<f64> = (0..N)
        .map(|i| {
            let s = -1.0 + 2.0 * i as f64 / (N - 1) as f64;
            scale * (A * s).sinh()
        })
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&r| f(r)).collect();
    let mut order: Vec<usize> = (0..N).filter(|&i| vals[i].is_finite()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let (mut best_r, mut best_v) = match order.first() {
        Some(&i) => (grid[i], vals[i]),
        None => return (0.0, f64::NAN),
    };
    for &i in order.iter().take(8) {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(N - 1)];
        let (r, v) = golden_max(&f, lo, hi);
        if v > best_v {
            best_r = r;
            best_v = v;
        }
    }
    (best_r, best_v)
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn axis_point(d: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = r;
    x
}

/// Coercivity ratio `[⟨x,b⟩ + κ(1+|x|²)^α ‖σ‖²] / (1+|x|²)` at `(0, x)`.
pub(crate) fn coercivity_ratio(field: &dyn CoefficientField, kappa: f64, alpha: f64, x: &[f64]) -> f64 {
    let (d, m) = (field.dim(), field.noise_dim());
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    field.drift_into(0.0, x, &mut b);
    field.diffusion_into(0.0, x, &mut s);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let xb: f64 = x.iter().zip(&b).map(|(a, c)| a * c).sum();
    (xb + kappa * (1.0 + r2).powf(alpha) * frobenius_sq(&s)) / (1.0 + r2)
}

/// Smallest `C_κ` with `⟨x,b⟩ + κ(1+|x|²)^α‖σ‖² ≤ C_κ(1+|x|²)` on the domain,
/// found by direct maximization of the ratio. Presets are autonomous, so
/// only `t = 0` is searched.
pub fn numerical_coercivity_constant(
    field: &dyn CoefficientField,
    kappa: f64,
    alpha: f64,
    domain: &CoercivityDomain,
) -> f64 {
    let raw = match domain {
        CoercivityDomain::Ray { radius } => {
            let d = field.dim();
            maximize_on_interval(|r| coercivity_ratio(field, kappa, alpha, &axis_point(d, r)), *radius).1
        }
        CoercivityDomain::Points(pts) => pts
            .iter()
            .map(|x| coercivity_ratio(field, kappa, alpha, x))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    // Guard against the last ulp of the maximizer.
    raw + 1e-12 * (1.0 + raw.abs())
}

/// The nonnegative majorant `F_κ(t, x)` of the monotonicity condition.
#[derive(Clone)]
pub enum Majorant {
    Zero,
    /// `κ · c · (½ + |x|^e)`.
    PowerLaw { c: f64, exponent: f64 },
    /// An expression in `t`, `x…` and `kappa`.
    Expression(Expr),
    Custom(Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>),
}

impl Majorant {
    pub fn eval(&self, kappa: f64, t: f64, x: &[f64]) -> f64 {
        match self {
            Majorant::Zero => 0.0,
            Majorant::PowerLaw { c, exponent } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let p = if *exponent == 0.0 { 1.0 } else { r.powf(*exponent) };
                kappa * c * (0.5 + p)
            }
            Majorant::Expression(e) => e.eval_with(t, x, kappa),
            Majorant::Custom(f) => f(kappa, t, x),
        }
    }

    fn describe(&self) -> String {
        match self {
            Majorant::Zero => "0".into(),
            Majorant::PowerLaw { c, exponent } => format!("kappa*{c:.6}*(0.5+|x|^{exponent})"),
            Majorant::Expression(e) => format!("{e:?}"),
            Majorant::Custom(_) => "custom".into(),
        }
    }
}

#[derive(Clone)]
enum Coercivity {
    Numeric {
        field: Arc<dyn CoefficientField>,
        domain: CoercivityDomain,
        cache: Arc<Mutex<HashMap<u64, f64>>>,
    },
    Fixed(f64),
}

/// Exponents and constants of the growth hypotheses.
///
/// `gamma3` records the exponent of the polynomial part of the monotonicity
/// majorant (`|x|^γ₃`); it may be zero.
#[derive(Clone)]
pub struct GrowthProfile {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub r0: f64,
    pub majorant: Majorant,
    coercivity: Coercivity,
}

/// Serializable snapshot of a [`GrowthProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSummary {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub r0: f64,
    /// `(κ, C_κ)` samples.
    pub coercivity: Vec<(f64, f64)>,
    pub majorant: String,
}

impl GrowthProfile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(alpha: f64, alpha_prime: f64, c1: f64, c2: f64, c3: f64, r0: f64) -> Self {
        Self {
            alpha,
            alpha_prime,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 0.0,
            c1,
            c2,
            c3,
            r0,
            majorant: Majorant::Zero,
            coercivity: Coercivity::Fixed(0.0),
        }
    }

    /// `C_κ` is computed on demand (and memoized) for the given field.
    pub fn with_numeric_coercivity(mut self, field: Arc<dyn CoefficientField>, domain: CoercivityDomain) -> Self {
        self.coercivity = Coercivity::Numeric { field, domain, cache: Arc::default() };
        self
    }

    /// A κ-independent `C_κ`, for hand-derived profiles.
    pub fn with_fixed_coercivity(mut self, c: f64) -> Self {
        self.coercivity = Coercivity::Fixed(c);
        self
    }

    pub fn with_majorant(mut self, majorant: Majorant) -> Self {
        self.majorant = majorant;
        self
    }

    pub fn with_gammas(mut self, gamma1: f64, gamma2: f64, gamma3: f64) -> Self {
        self.gamma1 = gamma1;
        self.gamma2 = gamma2;
        self.gamma3 = gamma3;
        self
    }

    pub fn coercivity_constant(&self, kappa: f64) -> f64 {
        match &self.coercivity {
            Coercivity::Fixed(c) => *c,
            Coercivity::Numeric { field, domain, cache } => {
                let key = kappa.to_bits();
                if let Some(v) = cache.lock().ok().and_then(|c| c.get(&key).copied()) {
                    return v;
                }
                let v = numerical_coercivity_constant(field.as_ref(), kappa, self.alpha, domain);
                if let Ok(mut c) = cache.lock() {
                    c.insert(key, v);
                }
                v
            }
        }
    }

    /// `C_κ` of the same field evaluated with a different weight exponent
    /// `α` (used by the polynomial moment branch, which needs `α = 0`).
    /// Returns `None` for hand-fixed profiles.
    pub fn coercivity_constant_with_alpha(&self, kappa: f64, alpha: f64) -> Option<f64> {
        match &self.coercivity {
            Coercivity::Fixed(_) => None,
            Coercivity::Numeric { field, domain, .. } => {
                Some(numerical_coercivity_constant(field.as_ref(), kappa, alpha, domain))
            }
        }
    }

    pub fn monotonicity_majorant(&self, kappa: f64, t: f64, x: &[f64]) -> f64 {
        self.majorant.eval(kappa, t, x)
    }

    /// Lower ellipticity envelope of the smallest singular value.
    pub fn ellipticity_envelope(&self, x: &[f64]) -> f64 {
        let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        if self.alpha > 0.0 {
            (-self.c1 * w.powf(self.alpha_prime)).exp()
        } else {
            self.c1 * w.powf(-self.gamma1)
        }
    }

    /// Upper envelope for `|b| + ‖σ‖`.
    pub fn growth_envelope(&self, x: &[f64]) -> f64 {
        let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        let v = if self.alpha > 0.0 {
            (self.c2 * w.powf(self.alpha_prime)).exp()
        } else {
            self.c2 * w.powf(self.gamma2)
        };
        v.min(f64::MAX)
    }

    /// Tail shape bounding `F_κ / max(κ,1)` for `|x| ≥ R₀`, without `C₃`.
    pub fn tail_shape(&self, x: &[f64]) -> f64 {
        let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        if self.alpha > 0.0 {
            w.powf(self.alpha_prime)
        } else {
            w.ln()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlowError::InvalidArgument(format!("growth profile: {m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0,1]");
        }
        if self.alpha > 0.0 && !(self.alpha_prime >= 0.0 && self.alpha_prime < self.alpha) {
            return bad("alpha_prime must lie in [0, alpha)");
        }
        if self.r0 < 1.0 {
            return bad("R0 must be at least 1");
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return bad("C1, C2, C3 must be positive");
        }
        Ok(())
    }

    pub fn summary(&self) -> GrowthSummary {
        GrowthSummary {
            alpha: self.alpha,
            alpha_prime: self.alpha_prime,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            r0: self.r0,
            coercivity: [0.5, 1.0, 2.0]
                .iter()
                .map(|&k| (k, self.coercivity_constant(k)))
                .collect(),
            majorant: self.majorant.describe(),
        }
    }
}

impl fmt::Debug for GrowthProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthProfile")
            .field("alpha", &self.alpha)
            .field("alpha_prime", &self.alpha_prime)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("c3", &self.c3)
            .field("r0", &self.r0)
            .field("majorant", &self.majorant.describe())
            .finish()
    }
}
