use std::sync::Arc;

use super::interp::catmull_rom;
use super::pde::{first_diff, PdeSolution};
use super::{chi, chi_d1, chi_d2, DriftSplit, SplitPart};
use crate::coefficients::CoefficientField;
use crate::error::{FlowError, Result};

/// Tabulated `Φ_t`, `Φ_t⁻¹` and transformed coefficients
/// `b̃ = (Φ'b₂ + h)∘Φ⁻¹`, `σ̃ = (Φ'σ)∘Φ⁻¹` with
/// `h = σ²u'χ' + ½σ²uχ'' + λuχ` (`χ = χ_{2R₀}`). Off-grid values use
/// Catmull-Rom in space and linear interpolation in time.
pub struct ZvonkinTransform {
    pub r0: f64,
    /// Beyond this radius `χ_{2R₀} = 0` and `Φ_t` is the identity.
    pub r1: f64,
    pub lambda: f64,
    pub x0: f64,
    pub dx: f64,
    pub times: Vec<f64>,
    /// No correction: `u ≡ 0`.
    pub identity: bool,
    pub u: Vec<Vec<f64>>,
    pub phi_inv: Vec<Vec<f64>>,
    pub b_tilde: Vec<Vec<f64>>,
    pub sigma_tilde: Vec<Vec<f64>>,
    /// `h` at the x-nodes.
    pub h: Vec<Vec<f64>>,
    /// Smallest and largest adjacent-node quotient of `Φ` over all slices.
    pub lipschitz_range: (f64, f64),
    /// Largest `|Φ_t(Φ_t⁻¹(y)) − y|` over the y-nodes.
    pub inverse_error: f64,
    outer: Arc<SplitPart>,
}

impl std::fmt::Debug for ZvonkinTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZvonkinTransform")
            .field("r0", &self.r0)
            .field("lambda", &self.lambda)
            .field("identity", &self.identity)
            .field("lipschitz_range", &self.lipschitz_range)
            .field("inverse_error", &self.inverse_error)
            .finish()
    }
}

const NEWTON_TOL: f64 = 1e-14;

fn invert(phi: &dyn Fn(f64) -> f64, dphi: &dyn Fn(f64) -> f64, y: f64, spread: f64) -> f64 {
    let (mut lo, mut hi) = (y - spread, y + spread);
    let mut x = y;
    for _ in 0..200 {
        let f = phi(x) - y;
        if f.abs() <= NEWTON_TOL * (1.0 + y.abs()) {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dphi(x);
        let next = x - f / d;
        x = if d > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * (1.0 + y.abs()) {
            return x;
        }
    }
    x
}

/// Builds the transform from an accepted solution; rejects it when an
/// adjacent-node quotient of `Φ` leaves `[½, 3/2]` (in one dimension every
/// pair quotient is an average of adjacent ones, so this covers all pairs).
pub fn build_transform(solution: &PdeSolution, split: &DriftSplit) -> Result<ZvonkinTransform> {
    if !solution.accepted {
        return Err(FlowError::Transform("solution did not pass the smallness test".into()));
    }
    let r0 = split.r0;
    let r2 = 2.0 * r0;
    let r1 = 4.0 * r0;
    let nx = solution.n_x();
    let xs: Vec<f64> = (0..nx).map(|i| solution.node(i)).collect();
    if xs[0] > -r1 + 1e-9 || xs[nx - 1] < r1 - 1e-9 {
        return Err(FlowError::Transform(format!("grid does not reach the identity radius {r1}")));
    }
    // The terms b₁χ' cancel because supp b₁ ⊂ {|x| ≤ 2R₀} and χ_{2R₀}' lives
    // on {2R₀ ≤ |x| ≤ 4R₀}.
    for &x in &xs {
        if super::chi(r0, x) * chi_d1(r2, x) != 0.0 {
            return Err(FlowError::Transform(format!("cutoff supports overlap at {x}")));
        }
    }
    let lambda = solution.lambda;
    let identity = solution.u.iter().all(|s| s.iter().all(|v| *v == 0.0));
    let base = split.base.as_ref();
    let mut lip = (f64::INFINITY, f64::NEG_INFINITY);
    let mut inverse_error = 0.0f64;
    let nt = solution.times.len();
    let (mut phi_inv, mut b_tilde, mut sigma_tilde, mut h_tab) =
        (Vec::with_capacity(nt), Vec::with_capacity(nt), Vec::with_capacity(nt), Vec::with_capacity(nt));
    let (mut b2, mut sg) = ([0.0], [0.0]);
    for (k, &t) in solution.times.iter().enumerate() {
        let u = &solution.u[k];
        let du = first_diff(u, solution.dx);
        let phi_nodes: Vec<f64> = xs.iter().zip(u).map(|(x, uv)| x + uv * chi(r2, *x)).collect();
        for w in phi_nodes.windows(2) {
            let q = (w[1] - w[0]) / solution.dx;
            lip.0 = lip.0.min(q);
            lip.1 = lip.1.max(q);
        }
        let uat = |x: f64| catmull_rom(u, solution.x0, solution.dx, x);
        let duat = |x: f64| catmull_rom(&du, solution.x0, solution.dx, x);
        let phi = |x: f64| x + uat(x) * chi(r2, x);
        let dphi = |x: f64| 1.0 + duat(x) * chi(r2, x) + uat(x) * chi_d1(r2, x);
        let mut inv = Vec::with_capacity(nx);
        let mut bt = Vec::with_capacity(nx);
        let mut st = Vec::with_capacity(nx);
        let mut hk = Vec::with_capacity(nx);
        for (i, &y) in xs.iter().enumerate() {
            base.diffusion_into(t, &[xs[i]], &mut sg);
            let s2 = sg[0] * sg[0];
            hk.push(s2 * du[i] * chi_d1(r2, xs[i]) + 0.5 * s2 * u[i] * chi_d2(r2, xs[i]) + lambda * u[i] * chi(r2, xs[i]));
            let x = if identity || y.abs() >= r1 { y } else { invert(&phi, &dphi, y, solution.sup_u + solution.dx) };
            inverse_error = inverse_error.max((phi(x) - y).abs());
            inv.push(x);
            let (uv, duv) = (uat(x), duat(x));
            let (c, c1, c2) = (chi(r2, x), chi_d1(r2, x), chi_d2(r2, x));
            let grad = 1.0 + duv * c + uv * c1;
            split.outer.drift_into(t, &[x], &mut b2);
            base.diffusion_into(t, &[x], &mut sg);
            let s2 = sg[0] * sg[0];
            let h = s2 * duv * c1 + 0.5 * s2 * uv * c2 + lambda * uv * c;
            bt.push(grad * b2[0] + h);
            st.push(grad * sg[0]);
        }
        phi_inv.push(inv);
        b_tilde.push(bt);
        sigma_tilde.push(st);
        h_tab.push(hk);
    }
    if lip.0 < 0.5 || lip.1 > 1.5 {
        return Err(FlowError::Transform(format!(
            "bi-Lipschitz sandwich violated: adjacent quotients span [{}, {}]",
            lip.0, lip.1
        )));
    }
    Ok(ZvonkinTransform {
        r0,
        r1,
        lambda,
        x0: solution.x0,
        dx: solution.dx,
        times: solution.times.clone(),
        identity,
        u: solution.u.clone(),
        phi_inv,
        b_tilde,
        sigma_tilde,
        h: h_tab,
        lipschitz_range: lip,
        inverse_error,
        outer: split.outer.clone(),
    })
}

impl ZvonkinTransform {
    fn slice(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 {
            return (0, 0.0);
        }
        let tau = self.times[n - 1] / (n - 1) as f64;
        let s = (t / tau).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        (k, s - k as f64)
    }

    fn table(&self, tab: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let (k, w) = self.slice(t);
        let a = catmull_rom(&tab[k], self.x0, self.dx, x);
        if w == 0.0 || tab.len() == 1 {
            return a;
        }
        (1.0 - w) * a + w * catmull_rom(&tab[k + 1], self.x0, self.dx, x)
    }

    pub fn u_at(&self, t: f64, x: f64) -> f64 {
        if self.identity || x.abs() >= self.r1 {
            return 0.0;
        }
        self.table(&self.u, t, x)
    }

    pub fn phi(&self, t: f64, x: f64) -> f64 {
        if self.identity || x.abs() >= self.r1 {
            return x;
        }
        x + self.u_at(t, x) * chi(2.0 * self.r0, x)
    }

    pub fn phi_inv(&self, t: f64, y: f64) -> f64 {
        if self.identity || y.abs() >= self.r1 {
            return y;
        }
        self.table(&self.phi_inv, t, y)
    }

    /// `(b̃, σ̃)` at `(t, y)`.
    pub fn coefficients(&self, t: f64, y: f64) -> (f64, f64) {
        let mut b = [0.0];
        let mut s = [0.0];
        self.drift_into(t, &[y], &mut b);
        self.diffusion_into(t, &[y], &mut s);
        (b[0], s[0])
    }
}

impl CoefficientField for ZvonkinTransform {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        if self.identity || y[0].abs() >= self.r1 {
            self.outer.drift_into(t, y, out);
        } else {
            out[0] = self.table(&self.b_tilde, t, y[0]);
        }
    }

    fn diffusion_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        if self.identity || y[0].abs() >= self.r1 {
            self.outer.diffusion_into(t, y, out);
        } else {
            out[0] = self.table(&self.sigma_tilde, t, y[0]);
        }
    }
}
