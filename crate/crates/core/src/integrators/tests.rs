use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::coefficients::{preset, CoefficientField, FnField};

fn cfg(scheme: Scheme, dt: f64, horizon: f64, n: usize) -> SimulationConfig {
    SimulationConfig { scheme, dt, horizon, n_paths: n, seed: 42, ..SimulationConfig::default() }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn time_grid_truncates_only_non_integral_horizons() {
    let g = TimeGrid::new(0.3, 1.0);
    assert_eq!(g.n_steps(), 4);
    assert_eq!(*g.times().last().unwrap(), 1.0);
    assert!((g.times()[3] - 0.9).abs() < 1e-15);
    let g = TimeGrid::new(1e-3, 1.0);
    assert_eq!(g.n_steps(), 1000);
    assert_eq!(g.times()[1000], 1.0);
    assert_eq!(g.index_of(0.5), 500);
}

#[test]
fn invalid_configs_are_rejected() {
    let p = preset("bm(1)").unwrap();
    for bad in [
        SimulationConfig { dt: 0.0, ..Default::default() },
        SimulationConfig { dt: 2.0, horizon: 1.0, ..Default::default() },
        SimulationConfig { n_paths: 0, ..Default::default() },
        SimulationConfig { explosion_cap: -1.0, ..Default::default() },
    ] {
        assert!(matches!(simulate(&p, &bad, &[vec![0.0]]), Err(FlowError::Config(_))));
    }
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let p = preset("example1(0.4)").unwrap();
    let c = cfg(Scheme::TamedEuler, 0.01, 1.0, 700);
    let a = in_pool(1, || simulate(&p, &c, &[vec![2.0]]).unwrap());
    let b = in_pool(4, || simulate(&p, &c, &[vec![2.0]]).unwrap());
    assert_eq!(a, b);
}

#[test]
fn bm_coupling_is_exact() {
    let p = preset("bm(2)").unwrap();
    let pairs = vec![(vec![0.3, -1.7], vec![0.1, 0.2]), (vec![1.0, 1.0], vec![-2.5, 0.0])];
    let e = coupled_simulate(&p, &cfg(Scheme::TamedEuler, 0.01, 1.0, 50), &pairs).unwrap();
    let mut z = [0.0; 2];
    for r in 0..e.n_replicates() {
        for (pi, (x, y)) in pairs.iter().enumerate() {
            let Coupling::Synchronous { pairs: idx } = &e.coupling else { panic!() };
            let (a, b) = idx[pi];
            for k in 0..=e.n_steps() {
                e.member_difference(r, a, b, k, &mut z);
                assert_eq!(z[0], x[0] - y[0]);
                assert_eq!(z[1], x[1] - y[1]);
            }
        }
    }
}

#[test]
fn ou_pair_difference_is_noise_free() {
    // Z_{k+1} = (1 - dt) Z_k for the tamed scheme with b = -x only up to the
    // taming factor; with euler-maruyama the recursion is exact.
    let p = preset("ou(1)").unwrap();
    let e = coupled_simulate(&p, &cfg(Scheme::EulerMaruyama, 1e-3, 1.0, 20), &[(vec![1.0], vec![0.0])]).unwrap();
    let mut z = [0.0];
    let expected = (1.0f64 - 1e-3).powi(1000);
    for r in 0..20 {
        e.member_difference(r, 0, 1, 1000, &mut z);
        assert!((z[0] - expected).abs() < 1e-12);
        assert!((z[0] - (-1.0f64).exp()).abs() < 1e-3);
    }
}

#[test]
fn implicit_and_explicit_agree_for_zero_drift() {
    let p = preset("bm(1)").unwrap();
    let a = simulate(&p, &cfg(Scheme::DriftImplicitEuler, 0.01, 1.0, 30), &[vec![0.5]]).unwrap();
    let b = simulate(&p, &cfg(Scheme::EulerMaruyama, 0.01, 1.0, 30), &[vec![0.5]]).unwrap();
    assert_eq!(a.paths, b.paths);
}

#[test]
fn stored_increments_reproduce_bm_paths() {
    let p = preset("bm(1)").unwrap();
    let c = SimulationConfig { store_increments: true, ..cfg(Scheme::TamedEuler, 0.1, 1.0, 5) };
    let e = simulate(&p, &c, &[vec![0.0]]).unwrap();
    for path in &e.paths {
        let inc = path.increments.as_ref().unwrap();
        let mut x = 0.0;
        for k in 0..10 {
            x += inc[k];
            assert_eq!(path.states[k + 1], x);
        }
    }
}

#[test]
fn coarsened_config_sees_the_same_brownian_path() {
    let p = preset("bm(1)").unwrap();
    let fine = cfg(Scheme::TamedEuler, 0.01, 1.0, 10);
    let coarse = fine.coarsened(4);
    let a = simulate(&p, &fine, &[vec![0.0]]).unwrap();
    let b = simulate(&p, &coarse, &[vec![0.0]]).unwrap();
    assert_eq!(b.n_steps(), 25);
    for (pa, pb) in a.paths.iter().zip(&b.paths) {
        assert!((pa.states[100] - pb.states[25]).abs() < 1e-12);
        assert!((pa.states[40] - pb.states[10]).abs() < 1e-12);
    }
}

#[test]
fn deterministic_motion_exits_at_half() {
    let f: Arc<dyn CoefficientField> = Arc::new(FnField::new(1, 1, |_, _, b| b[0] = 1.0, |_, _, s| s[0] = 0.0));
    let p = SdeProblem::new(f, "unit-drift");
    let dt = 0.01;
    let e = simulate(&p, &cfg(Scheme::EulerMaruyama, dt, 1.0, 3), &[vec![0.0]]).unwrap();
    for t in first_exit(&e, 0.5).unwrap() {
        assert!((0.5..0.5 + dt + 1e-12).contains(&t), "{t}");
    }
    assert!(first_exit(&e, 2e6).is_err());
}

#[test]
fn bm_never_reaches_a_huge_radius() {
    let p = preset("bm(1)").unwrap();
    let e = simulate(&p, &cfg(Scheme::TamedEuler, 0.01, 1.0, 200), &[vec![0.0]]).unwrap();
    assert!(first_exit(&e, 1e6).unwrap().iter().all(|t| t.is_infinite()));
}

#[test]
fn exploded_paths_are_frozen() {
    let p = preset("example1(0.4)").unwrap();
    let e = simulate(&p, &cfg(Scheme::EulerMaruyama, 0.01, 1.0, 20), &[vec![4.0]]).unwrap();
    assert!(e.exploded_fraction() > 0.0);
    for (i, path) in e.paths.iter().enumerate() {
        if let Some(k) = path.exit_index {
            let frozen = e.state(i, k)[0];
            assert!(frozen.is_finite());
            for j in k..=e.n_steps() {
                assert_eq!(e.state(i, j)[0], frozen);
            }
            assert!(first_exit(&e, 1e6).unwrap()[i] <= e.time_grid[k]);
        }
    }
    let tamed = simulate(&p, &cfg(Scheme::TamedEuler, 0.01, 1.0, 20), &[vec![4.0]]).unwrap();
    assert_eq!(tamed.exploded_fraction(), 0.0);
}

#[test]
fn csv_and_binary_exports_round_trip() {
    let p = preset("ou(2)").unwrap();
    let e = simulate(&p, &cfg(Scheme::TamedEuler, 0.25, 1.0, 3), &[vec![1.0, -1.0]]).unwrap();
    let mut csv = Vec::new();
    write_csv(&e, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path_id,step,t,x_1,x_2,exploded");
    assert_eq!(lines.len(), 1 + 3 * 5);
    assert!(lines[1].starts_with("0,0,0,1,-1,0"));

    let mut bin = Vec::new();
    write_binary(&e, &mut bin).unwrap();
    assert_eq!(&bin[..4], b"FLW1");
    let back = read_binary(&bin[..]).unwrap();
    assert_eq!(back.dim, 2);
    assert_eq!(back.time_grid, e.time_grid);
    for (b, p) in back.paths.iter().zip(&e.paths) {
        assert_eq!(b.2, p.states);
        assert_eq!(b.0, p.exit_index);
    }
    assert!(read_binary(&b"NOPE"[..]).is_err());
}

proptest! {
    #[test]
    fn tamed_drift_increment_is_at_most_one_per_unit_time(b in -1e12f64..1e12, dt in 1e-6f64..1.0) {
        let f: Arc<dyn CoefficientField> = Arc::new(FnField::new(1, 1, move |_, _, o| o[0] = b, |_, _, s| s[0] = 0.0));
        let p = SdeProblem::new(f, "const");
        let c = SimulationConfig { dt, horizon: dt, n_paths: 1, explosion_cap: f64::MAX, ..Default::default() };
        let e = simulate(&p, &c, &[vec![0.0]]).unwrap();
        let step = e.state(0, 1)[0];
        prop_assert!(step.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn coupled_difference_is_antisymmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let p = preset("example1(0.4)").unwrap();
        let e = coupled_simulate(&p, &cfg(Scheme::TamedEuler, 0.05, 0.5, 4), &[(vec![x], vec![y])]).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        for r in 0..4 {
            for k in 0..=e.n_steps() {
                let (i, j) = if e.starts.len() == 2 { (0, 1) } else { (0, 0) };
                e.member_difference(r, i, j, k, &mut a);
                e.member_difference(r, j, i, k, &mut b);
                prop_assert_eq!(a[0], -b[0]);
            }
        }
    }
}
