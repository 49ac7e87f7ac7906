//! Nonlinear solve for the drift-implicit Euler step
//! `z − dt·b(t, z) = rhs`.

use nalgebra::{DMatrix, DVector};

use crate::coefficients::CoefficientField;

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;

pub(crate) struct ImplicitSolver {
    b: Vec<f64>,
    bp: Vec<f64>,
    bm: Vec<f64>,
    g: Vec<f64>,
    trial: Vec<f64>,
    probe: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl ImplicitSolver {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            b: vec![0.0; d],
            bp: vec![0.0; d],
            bm: vec![0.0; d],
            g: vec![0.0; d],
            trial: vec![0.0; d],
            probe: vec![0.0; d],
        }
    }

    fn residual(&mut self, field: &dyn CoefficientField, t: f64, dt: f64, rhs: &[f64], z: &[f64], out_g: bool) -> f64 {
        field.drift_into(t, z, &mut self.b);
        let mut s = 0.0;
        for i in 0..z.len() {
            let gi = z[i] - dt * self.b[i] - rhs[i];
            if out_g {
                self.g[i] = gi;
            }
            s += gi * gi;
        }
        s.sqrt()
    }

    /// Solves in place, starting from the value in `z`. `anchor` is the
    /// previous state, used to centre the 1-D fallback bracket. Returns
    /// `false` when neither Newton nor the fallback converges.
    pub(crate) fn solve(
        &mut self,
        field: &dyn CoefficientField,
        t: f64,
        dt: f64,
        rhs: &[f64],
        anchor: &[f64],
        z: &mut [f64],
    ) -> bool {
        if self.newton(field, t, dt, rhs, z) {
            return true;
        }
        if z.len() == 1 {
            return self.bisect(field, t, dt, rhs[0], anchor[0], z);
        }
        false
    }

    fn newton(&mut self, field: &dyn CoefficientField, t: f64, dt: f64, rhs: &[f64], z: &mut [f64]) -> bool {
        let d = z.len();
        let mut res = self.residual(field, t, dt, rhs, z, true);
        for _ in 0..MAX_ITER {
            if !res.is_finite() {
                return false;
            }
            if res <= TOL * (1.0 + norm(z)) {
                return true;
            }
            // Jacobian I − dt·∂b by central differences.
            let mut jac = DMatrix::<f64>::identity(d, d);
            for j in 0..d {
                let h = 1e-7 * (1.0 + z[j].abs());
                self.probe.copy_from_slice(z);
                self.probe[j] = z[j] + h;
                field.drift_into(t, &self.probe, &mut self.bp);
                self.probe[j] = z[j] - h;
                field.drift_into(t, &self.probe, &mut self.bm);
                for i in 0..d {
                    jac[(i, j)] -= dt * (self.bp[i] - self.bm[i]) / (2.0 * h);
                }
            }
            let g = DVector::from_column_slice(&self.g);
            let Some(step) = jac.lu().solve(&g) else {
                return false;
            };
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                for i in 0..d {
                    self.trial[i] = z[i] - lambda * step[i];
                }
                let trial = std::mem::take(&mut self.trial);
                let r = self.residual(field, t, dt, rhs, &trial, false);
                self.trial = trial;
                if r.is_finite() && r < res {
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return false;
            }
            let dz = lambda * norm(step.as_slice());
            z.copy_from_slice(&self.trial);
            res = self.residual(field, t, dt, rhs, z, true);
            if dz <= TOL * (1.0 + norm(z)) {
                return res <= 1e-8 * (1.0 + norm(z));
            }
        }
        res <= TOL * (1.0 + norm(z))
    }

    /// Bisection on `g(z) = z − dt·b(z) − rhs`, bracket `[anchor ± w]` with
    /// `w` doubling from 10. Accepts the collapsed bracket, which handles
    /// drifts with jumps where no exact root exists.
    fn bisect(&mut self, field: &dyn CoefficientField, t: f64, dt: f64, rhs: f64, anchor: f64, z: &mut [f64]) -> bool {
        let mut g = |v: f64| {
            field.drift_into(t, &[v], &mut self.b);
            v - dt * self.b[0] - rhs
        };
        let mut w = 10.0;
        let (mut lo, mut hi);
        let mut found = false;
        let (mut glo, mut ghi) = (0.0, 0.0);
        lo = anchor - w;
        hi = anchor + w;
        for _ in 0..60 {
            glo = g(lo);
            ghi = g(hi);
            if glo.is_finite() && ghi.is_finite() && glo.signum() != ghi.signum() {
                found = true;
                break;
            }
            w *= 2.0;
            lo = anchor - w;
            hi = anchor + w;
        }
        if !found {
            return false;
        }
        if glo == 0.0 {
            z[0] = lo;
            return true;
        }
        if ghi == 0.0 {
            z[0] = hi;
            return true;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= TOL * (1.0 + mid.abs()) {
                break;
            }
            let gm = g(mid);
            if gm == 0.0 {
                z[0] = mid;
                return true;
            }
            if gm.signum() == glo.signum() {
                lo = mid;
                glo = gm;
            } else {
                hi = mid;
            }
        }
        z[0] = 0.5 * (lo + hi);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::preset;

    #[test]
    fn linear_drift_is_solved_exactly() {
        let ou = preset("ou(2)").unwrap();
        let mut s = ImplicitSolver::new(2);
        let rhs = [1.0, -2.0];
        let mut z = rhs;
        assert!(s.solve(ou.field.as_ref(), 0.0, 0.1, &rhs, &rhs, &mut z));
        for i in 0..2 {
            assert!((z[i] - rhs[i] / 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn quintic_drift_root_satisfies_the_equation() {
        let p = preset("example1(0.4)").unwrap();
        let mut s = ImplicitSolver::new(1);
        for rhs in [-50.0, -3.0, 0.5, 2.0, 40.0] {
            let mut z = [rhs];
            assert!(s.solve(p.field.as_ref(), 0.0, 0.01, &[rhs], &[rhs], &mut z));
            let b = p.field.drift(0.0, &z)[0];
            assert!((z[0] - 0.01 * b - rhs).abs() < 1e-9 * (1.0 + rhs.abs()), "{rhs} -> {}", z[0]);
        }
    }

    #[test]
    fn root_inside_the_drift_jump_collapses_to_the_jump() {
        // g jumps from -rhs + 0.01 (z<0) to -rhs + 0.01·... around 0; for
        // |rhs| < dt there is no exact root and the bracket collapses at 0.
        let p = preset("example1(0.4)").unwrap();
        let mut s = ImplicitSolver::new(1);
        let rhs = 0.001;
        let mut z = [rhs];
        assert!(s.solve(p.field.as_ref(), 0.0, 0.01, &[rhs], &[0.0], &mut z));
        assert!(z[0].abs() < 1e-10, "{}", z[0]);
    }
}
