use std::sync::Arc;

use super::*;
use crate::coefficients::{preset, FnField};
use crate::integrators::{Scheme, SimulationConfig};

fn smoothed_box() -> SdeProblem {
    let f: Arc<dyn CoefficientField> = Arc::new(FnField::new(
        1,
        1,
        |_, x, b| b[0] = cutoff_profile(1.0, x[0].abs()),
        |_, _, s| s[0] = 1.0,
    ));
    SdeProblem::new(f, "smoothed box")
}

fn coarse(r0: f64, horizon: f64) -> PdeGrid {
    PdeGrid { dx: 0.05, dt: 0.01, ..PdeGrid::for_cutoff(r0, horizon) }
}

#[test]
fn cutoff_shape_and_gradient_bound() {
    assert_eq!(chi(4.0, 3.9), 1.0);
    assert_eq!(chi(4.0, -8.0), 0.0);
    assert!((chi(4.0, 6.0) - 0.5).abs() < 1e-15);
    for &x in &[4.3, 5.1, -6.7, 7.9] {
        let h = 1e-6;
        let fd = (chi(4.0, x + h) - chi(4.0, x - h)) / (2.0 * h);
        assert!((fd - chi_d1(4.0, x)).abs() < 1e-8);
        let fd2 = (chi_d1(4.0, x + h) - chi_d1(4.0, x - h)) / (2.0 * h);
        assert!((fd2 - chi_d2(4.0, x)).abs() < 1e-7);
    }
    let s = split_drift(&preset("bm(1)").unwrap(), 4.0).unwrap();
    assert!(s.grad_chi_max <= 0.5 && s.grad_chi_max > 0.46);
}

#[test]
fn small_cutoff_is_rejected() {
    assert!(split_drift(&preset("ou(1)").unwrap(), 3.5).is_err());
}

#[test]
fn split_reconstructs_the_drift() {
    let grid: Vec<Vec<f64>> = (-200..=200).map(|i| vec![0.06 * i as f64]).collect();
    let zero = split_drift(&preset("bm(1)").unwrap(), 4.0).unwrap();
    let mut b = [1.0];
    for x in &grid {
        zero.inner.drift_into(0.0, x, &mut b);
        assert_eq!(b[0], 0.0);
        zero.outer.drift_into(0.0, x, &mut b);
        assert_eq!(b[0], 0.0);
    }
    let step = preset("step-drift-1d").unwrap();
    let s = split_drift(&step, 4.0).unwrap();
    let mut full = [0.0];
    for x in &grid {
        step.field.drift_into(0.0, x, &mut full);
        s.inner.drift_into(0.0, x, &mut b);
        assert_eq!(b[0], full[0]);
        s.outer.drift_into(0.0, x, &mut b);
        assert_eq!(b[0], 0.0);
    }
    let e1 = preset("example1(0.4)").unwrap();
    let s = split_drift(&e1, 4.0).unwrap();
    let audit = s.audit(&grid);
    assert!(audit.reconstruction_error <= 1e-12 && audit.grad_chi_ok);
    for x in [-4.0, 0.0, 3.0, 8.0, -9.5] {
        e1.field.drift_into(0.0, &[x], &mut full);
        s.inner.drift_into(0.0, &[x], &mut b);
        let inner = b[0];
        s.outer.drift_into(0.0, &[x], &mut b);
        if x.abs() <= 4.0 {
            assert_eq!(inner, full[0]);
        }
        if x.abs() >= 8.0 {
            assert_eq!(b[0], full[0]);
        }
    }
}

#[test]
fn zero_source_gives_zero_solution() {
    let s = split_drift(&preset("bm(1)").unwrap(), 4.0).unwrap();
    let sol = solve_backward_pde(&s, &coarse(4.0, 1.0), 1.0).unwrap();
    assert!(sol.u.iter().all(|sl| sl.iter().all(|v| *v == 0.0)));
    assert_eq!(sol.trace.len(), 1);
}

#[test]
fn terminal_condition_and_supersolution_bound() {
    let s = split_drift(&smoothed_box(), 4.0).unwrap();
    let mut prev = f64::INFINITY;
    for lambda in [1.0, 2.0, 4.0, 8.0] {
        let (u, sup_u, _) = solve_at_lambda(&s, &coarse(4.0, 1.0), lambda).unwrap();
        assert!(u.last().unwrap().iter().all(|v| *v == 0.0));
        assert!(sup_u <= 1.0 / lambda * (1.0 + 1e-9), "{sup_u} at {lambda}");
        assert!(sup_u < prev);
        prev = sup_u;
    }
}

/// Dense solve of `½u'' + b u' + b = λu` with the same stencil, `u = 0` at
/// the box ends.
fn stationary_oracle(b: &dyn Fn(f64) -> f64, lambda: f64, half: f64, dx: f64) -> Vec<f64> {
    let n = (2.0 * half / dx).round() as usize + 1;
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut rhs = nalgebra::DVector::<f64>::zeros(n);
    a[(0, 0)] = 1.0;
    a[(n - 1, n - 1)] = 1.0;
    for i in 1..n - 1 {
        let x = -half + dx * i as f64;
        let bx = b(x);
        a[(i, i - 1)] = 0.5 / (dx * dx) - bx / (2.0 * dx);
        a[(i, i)] = -1.0 / (dx * dx) - lambda;
        a[(i, i + 1)] = 0.5 / (dx * dx) + bx / (2.0 * dx);
        rhs[i] = -bx;
    }
    a.lu().solve(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn mid_horizon_slice_approaches_the_stationary_solution() {
    let s = split_drift(&smoothed_box(), 4.0).unwrap();
    let grid = PdeGrid { dx: 0.05, dt: 0.01, half_width: 16.0, horizon: 2.0 };
    let (u, _, _) = solve_at_lambda(&s, &grid, 16.0).unwrap();
    let oracle = stationary_oracle(&|x| cutoff_profile(1.0, x.abs()), 16.0, 16.0, 0.05);
    let mid = &u[u.len() / 2];
    let err = mid.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn acceptance_persists_when_lambda_doubles() {
    let step = preset("step-drift-1d").unwrap();
    let s = split_drift(&step, 4.0).unwrap();
    let grid = coarse(4.0, 1.0);
    let sol = solve_backward_pde(&s, &grid, 1.0).unwrap();
    assert!(sol.accepted && sol.sup_u + sol.sup_du <= 0.5);
    assert!(sol.trace.len() > 1 && !sol.trace[0].accepted);
    let (_, su, sd) = solve_at_lambda(&s, &grid, 2.0 * sol.lambda).unwrap();
    assert!(su + sd <= 0.5);
}

#[test]
fn identity_transform_for_vanishing_solution() {
    let bm = preset("bm(1)").unwrap();
    let s = split_drift(&bm, 4.0).unwrap();
    let sol = solve_backward_pde(&s, &coarse(4.0, 1.0), 1.0).unwrap();
    let t = build_transform(&sol, &s).unwrap();
    assert!(t.identity);
    for y in [-20.0, -3.3, 0.0, 0.77, 12.0] {
        assert_eq!(t.phi(0.4, y), y);
        assert_eq!(t.phi_inv(0.4, y), y);
        assert_eq!(t.coefficients(0.4, y), (0.0, 1.0));
    }
    assert!(t.h.iter().all(|sl| sl.iter().all(|v| *v == 0.0)));
    let cfg = SimulationConfig { n_paths: 50, dt: 0.01, horizon: 1.0, seed: 3, ..Default::default() };
    let rep = conjugacy_check(&bm, &t, &cfg, 0.3).unwrap();
    assert!(rep.levels.iter().all(|l| l.max == 0.0));
}

#[test]
fn step_drift_transform_is_bi_lipschitz_and_invertible() {
    let step = preset("step-drift-1d").unwrap();
    let s = split_drift(&step, 4.0).unwrap();
    let sol = solve_backward_pde(&s, &PdeGrid::for_cutoff(4.0, 1.0), 1.0).unwrap();
    let t = build_transform(&sol, &s).unwrap();
    assert!(t.lipschitz_range.0 >= 0.5 && t.lipschitz_range.1 <= 1.5);
    assert!(t.inverse_error < 1e-12, "{}", t.inverse_error);
    for &y in &[-1.234, 0.0, 0.5, 2.71, 9.9] {
        for &time in &[0.0, 0.37, 1.0] {
            let back = t.phi(time, t.phi_inv(time, y));
            assert!((back - y).abs() < 1e-6, "{y} {time} {back}");
        }
    }
    // Identity beyond R₁ = 16: coefficients coincide with the original.
    let (mut b, mut sg) = ([0.0], [0.0]);
    for y in [16.0, -16.5, 30.0] {
        step.field.drift_into(0.2, &[y], &mut b);
        step.field.diffusion_into(0.2, &[y], &mut sg);
        assert_eq!(t.coefficients(0.2, y), (b[0], sg[0]));
        assert_eq!(t.phi(0.2, y), y);
    }
}

#[test]
fn ou_with_artificial_split_is_conjugate() {
    let ou = preset("ou(1)").unwrap();
    let s = split_drift(&ou, 4.0).unwrap();
    let sol = solve_backward_pde(&s, &PdeGrid::for_cutoff(4.0, 1.0), 1.0).unwrap();
    let t = build_transform(&sol, &s).unwrap();
    let cfg = SimulationConfig { n_paths: 200, dt: 1e-3, horizon: 1.0, seed: 9, scheme: Scheme::EulerMaruyama, ..Default::default() };
    let rep = conjugacy_refinement(&ou, &t, &cfg, 0.5, &[1e-3]).unwrap();
    assert!(rep.levels[0].p95 < 1e-2, "{:?}", rep.levels[0]);
}

#[test]
fn zvk1_round_trip() {
    let s = split_drift(&smoothed_box(), 4.0).unwrap();
    let sol = solve_backward_pde(&s, &coarse(4.0, 0.5), 1.0).unwrap();
    let mut buf = Vec::new();
    write_solution(&sol, &mut buf).unwrap();
    let back = read_solution(buf.as_slice()).unwrap();
    assert_eq!(back.u, sol.u);
    assert_eq!(back.times, sol.times);
    assert_eq!((back.lambda, back.sup_u, back.accepted), (sol.lambda, sol.sup_u, sol.accepted));
    assert!(read_solution(&b"FLW1...."[..]).is_err());
}
