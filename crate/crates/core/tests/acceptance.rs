//! Acceptance criteria. Every test writes one `criterion N: PASS|FAIL` line
//! to stderr (bypassing the harness capture) before asserting.
//!
//! Criteria that cannot be met as stated are `#[ignore]`d with the reason;
//! `cargo test --test acceptance -- --include-ignored` runs them all.

use std::io::Write;
use std::time::{Duration, Instant};

use flowlab::coefficients::{preset, SdeProblem};
use flowlab::experiment::{run as run_experiment, ExperimentConfig, RunOutput};
use flowlab::flow_regularity::{fd_gradient, witness_fit, GradientVariant, TimeNorm};
use flowlab::integrators::{self, Design, Scheme, SimulationConfig, SnapshotObserver, TimeGrid};
use flowlab::lyapunov::{
    exp_lambda_threshold, exp_moment_check, poly_lambda_threshold, poly_moment_check, steering_contraction_check,
    LyapunovSpec,
};
use flowlab::markov_stats::{girsanov_hitting, hitting_probability};
use flowlab::occupation::{ball_indicator, khasminskii_check, occupation_estimate, SpaceTimeFn};
use flowlab::report::Verdict;
use flowlab::stats::{mean_estimate, Estimate};
use flowlab::zvonkin::{build_transform, conjugacy_refinement, solve_backward_pde, split_drift, PdeGrid};
use statrs::distribution::{ContinuousCDF, Normal};

fn verdict_line(n: &str, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n}: {tag} ({:.1}s) {detail}", elapsed.as_secs_f64());
}

fn info_line(n: &str, detail: &str) {
    let _ = writeln!(std::io::stderr().lock(), "criterion {n} (informational, not counted): {detail}");
}

fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

fn cfg(n_paths: usize, dt: f64, horizon: f64, seed: u64) -> SimulationConfig {
    SimulationConfig { n_paths, dt, horizon, seed, ..Default::default() }
}

/// Terminal states of the non-stopped paths from `x`.
fn terminal_states(problem: &SdeProblem, config: &SimulationConfig, x: &[f64]) -> Vec<Vec<f64>> {
    let n = TimeGrid::new(config.dt, config.horizon).n_steps();
    let d = problem.dim();
    let design = Design::single(problem.field.as_ref(), x.to_vec());
    integrators::run(&design, config, config.n_paths, |_| SnapshotObserver::new(vec![n], vec![0], d))
        .unwrap()
        .into_iter()
        .filter(|s| !s.is_stopped(0, 0))
        .map(|s| s.state(0, 0).to_vec())
        .collect()
}

/// `|Q_h − oracle| ≤ 3·SE + |Q_h − Q_{2h}|`.
struct Agreement {
    label: String,
    estimate: Estimate,
    coarse: f64,
    oracle: f64,
}

impl Agreement {
    fn slack(&self) -> f64 {
        3.0 * self.estimate.std_error + (self.estimate.value - self.coarse).abs()
    }

    fn pass(&self) -> bool {
        (self.estimate.value - self.oracle).abs() <= self.slack()
    }

    fn describe(&self) -> String {
        format!(
            "{}: est {:.6} oracle {:.6} |diff| {:.2e} slack {:.2e}",
            self.label,
            self.estimate.value,
            self.oracle,
            (self.estimate.value - self.oracle).abs(),
            self.slack()
        )
    }
}

type Moment<'a> = (&'a str, f64, &'a dyn Fn(&[f64]) -> f64);

/// Moments `g(X_T)` at step `h` and `2h` on the same Brownian paths.
fn moment_pair(
    problem: &SdeProblem,
    config: &SimulationConfig,
    x: &[f64],
    gs: &[Moment<'_>],
) -> Vec<Agreement> {
    let fine = terminal_states(problem, config, x);
    let coarse = terminal_states(problem, &config.coarsened(2), x);
    assert_eq!(fine.len(), config.n_paths, "no path may stop in the linear suite");
    gs.iter()
        .map(|(label, oracle, g)| {
            let vf: Vec<f64> = fine.iter().map(|s| g(s)).collect();
            let vc: Vec<f64> = coarse.iter().map(|s| g(s)).collect();
            Agreement {
                label: format!("{} {label}", problem.preset_id),
                estimate: mean_estimate(&vf),
                coarse: mean_estimate(&vc).value,
                oracle: *oracle,
            }
        })
        .collect()
}

/// `∫₀^T P(|x + W_t| ≤ r) dt` by composite Simpson.
fn bm_ball_occupation(x: f64, r: f64, horizon: f64) -> f64 {
    let p = |t: f64| {
        if t == 0.0 {
            if x.abs() <= r {
                1.0
            } else {
                0.0
            }
        } else {
            let s = t.sqrt();
            phi((r - x) / s) - phi((-r - x) / s)
        }
    };
    let n = 20_000;
    let h = horizon / n as f64;
    let mut acc = p(0.0) + p(horizon);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * p(i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn criterion_1_ou_bm_oracles() {
    let start = Instant::now();
    let base = SimulationConfig { scheme: Scheme::EulerMaruyama, ..cfg(100_000, 1e-3, 1.0, 11) };
    let mut checks: Vec<Agreement> = Vec::new();

    // ou(1) from x = 1: N(e^{-1}, (1 - e^{-2})/2).
    let ou = preset("ou(1)").unwrap();
    let (m, v) = ((-1.0f64).exp(), 0.5 * (1.0 - (-2.0f64).exp()));
    let theta = 1.0;
    checks.extend(moment_pair(
        &ou,
        &base,
        &[1.0],
        &[
            ("mean", m, &|s: &[f64]| s[0]),
            ("variance", v, &move |s: &[f64]| (s[0] - m).powi(2)),
            ("E exp(X)", (theta * m + 0.5 * theta * theta * v).exp(), &move |s: &[f64]| (theta * s[0]).exp()),
        ],
    ));

    // bm(3) from (1, 0, -1): N(x, I).
    let bm3 = preset("bm(3)").unwrap();
    let x3 = [1.0, 0.0, -1.0];
    let th = [0.5, 0.5, 0.5];
    let mgf = (th.iter().zip(&x3).map(|(a, b)| a * b).sum::<f64>() + 0.5 * 0.75).exp();
    checks.extend(moment_pair(
        &bm3,
        &SimulationConfig { seed: 12, ..base.clone() },
        &x3,
        &[
            ("mean_1", 1.0, &|s: &[f64]| s[0]),
            ("mean_3", -1.0, &|s: &[f64]| s[2]),
            ("variance_2", 1.0, &|s: &[f64]| s[1] * s[1]),
            ("variance_3", 1.0, &|s: &[f64]| (s[2] + 1.0).powi(2)),
            ("E exp(<theta,X>)", mgf, &move |s: &[f64]| (th.iter().zip(s).map(|(a, b)| a * b).sum::<f64>()).exp()),
        ],
    ));

    // bm(1) occupation of the unit ball from 0.
    let bm1 = preset("bm(1)").unwrap();
    let f: SpaceTimeFn = ball_indicator(1.0, 1.0);
    let c13 = SimulationConfig { seed: 13, ..base.clone() };
    let occ = occupation_estimate(&bm1, &c13, &[0.0], &f).unwrap();
    let occ2 = occupation_estimate(&bm1, &c13.coarsened(2), &[0.0], &f).unwrap();
    checks.push(Agreement {
        label: "bm(1) occupation of |y|<=1".into(),
        estimate: Estimate { value: occ.value, std_error: occ.std_error, n: occ.n_paths },
        coarse: occ2.value,
        oracle: bm_ball_occupation(0.0, 1.0, 1.0),
    });

    // bm(1) terminal hitting P(|W_T - y0| <= a).
    for (seed, y0, a, t, oracle) in [
        (14, 0.0, 1.0, 1.0, phi(1.0) - phi(-1.0)),
        (15, 0.0, 1.0, 0.01, phi(10.0) - phi(-10.0)),
        (16, 1.0, 0.5, 1.0, phi(1.5) - phi(0.5)),
    ] {
        let c = SimulationConfig { seed, horizon: t, ..base.clone() };
        let h = hitting_probability(&bm1, &c, &[0.0], &[y0], a, t).unwrap();
        let h2 = hitting_probability(&bm1, &c.coarsened(2), &[0.0], &[y0], a, t).unwrap();
        checks.push(Agreement {
            label: format!("bm(1) P(|X_{t} - {y0}| <= {a})"),
            estimate: Estimate { value: h.p_hat, std_error: h.std_error, n: h.n_paths },
            coarse: h2.p_hat,
            oracle,
        });
    }

    // Flow derivatives: e^{-t} for ou(1), the identity for bm(2).
    let c17 = SimulationConfig { seed: 17, ..base.clone() };
    let g = fd_gradient(&ou, &c17, &[0.5], None, 1.0, GradientVariant::SupOfExpectation, None).unwrap();
    let g2 = fd_gradient(&ou, &c17.coarsened(2), &[0.5], None, 1.0, GradientVariant::SupOfExpectation, None).unwrap();
    // Recorded times are thinned by different strides at h and 2h; t = 0.99
    // lies on both grids.
    let t_cmp = 0.99;
    let last = |e: &flowlab::flow_regularity::FdGradientReport| {
        let k = e.estimate.times.iter().position(|t| (t - t_cmp).abs() < 1e-9).expect("t = 0.99 recorded");
        e.estimate.matrices[k][0]
    };
    checks.push(Agreement {
        label: "ou(1) dX_0.99/dx".into(),
        estimate: Estimate { value: last(&g), std_error: 0.0, n: c17.n_paths },
        coarse: last(&g2),
        oracle: (-t_cmp).exp(),
    });
    let bm2 = preset("bm(2)").unwrap();
    let gb = fd_gradient(&bm2, &SimulationConfig { n_paths: 2000, ..c17.clone() }, &[0.3, -0.7], None, 1.0, GradientVariant::SupOfExpectation, None)
        .unwrap();
    let identity_exact = gb.estimate.matrices.iter().all(|mtx| {
        mtx.iter().enumerate().all(|(k, v)| {
            let want = if k % 3 == 0 { 1.0 } else { 0.0 };
            (v - want).abs() <= 1e-12
        })
    });

    let elapsed = start.elapsed();
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass()).map(Agreement::describe).collect();
    for c in &checks {
        println!("{}", c.describe());
    }
    let pass = failed.is_empty() && identity_exact && elapsed <= Duration::from_secs(300);
    verdict_line(
        "1",
        pass,
        elapsed,
        &format!(
            "{} oracle comparisons, {} outside 3 SE + Richardson bias; bm(2) Jacobian identity exact: {identity_exact} {failed:?}",
            checks.len(),
            failed.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_moment_bounds() {
    let start = Instant::now();
    let mut worst = Vec::new();
    let mut all = true;
    for (k, id) in ["bm(1)", "ou(1)", "example1(0.4)"].iter().enumerate() {
        let p = preset(id).unwrap();
        let alpha = p.growth().unwrap().alpha;
        let spec = LyapunovSpec { alpha, lambda: exp_lambda_threshold(&p, alpha).unwrap(), p: None };
        let order = 2.0;
        let poly_lambda = poly_lambda_threshold(&p, order).unwrap();
        for (j, x) in [-2.0, 0.0, 2.0].iter().enumerate() {
            let c = cfg(10_000, 1e-3, 1.0, 100 + (3 * k + j) as u64);
            let e = exp_moment_check(&p, &c, &[*x], &spec, &[0.5, 1.0]).unwrap();
            let q = poly_moment_check(&p, &c, &[*x], order, poly_lambda, &[0.5, 1.0]).unwrap();
            for check in [&e, &q] {
                let ok = check.verdict == Verdict::Pass;
                all &= ok;
                if !ok {
                    worst.push(format!("{id} {} x={x}: {:?}", check.kind, check.verdict));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = all && elapsed <= Duration::from_secs(300);
    verdict_line("2", pass, elapsed, &format!("18 checks (exp + poly), failures {worst:?}"));
    assert!(pass);
}

#[test]
fn criterion_3_witness() {
    let start = Instant::now();
    let grid: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|x| vec![*x]).collect();
    let c = cfg(10_000, 1e-3, 1.0, 31);
    let bm = witness_fit(&preset("bm(1)").unwrap(), &c, &grid, 2.0, TimeNorm::Sup).unwrap();
    let bm_exact = bm.g.iter().all(|g| *g == 0.5);
    let ou = witness_fit(&preset("ou(1)").unwrap(), &c, &grid, 2.0, TimeNorm::Sup).unwrap();
    let ou_close = ou.g.iter().all(|g| (g - 0.5).abs() <= 1e-6);
    let ex = witness_fit(&preset("example1(0.4)").unwrap(), &c, &grid, 2.0, TimeNorm::Sup).unwrap();
    let alpha_one = ex.envelope.as_ref().is_some_and(|e| e.alpha == 1.0);
    let elapsed = start.elapsed();
    let pass = bm_exact && ou_close && ex.envelope_pass && alpha_one && elapsed <= Duration::from_secs(600);
    verdict_line(
        "3",
        pass,
        elapsed,
        &format!(
            "bm g={:?} exact={bm_exact}; ou max|g-1/2|={:.1e}; example1(0.4) g={:?} envelope_pass={} (alpha=1: {alpha_one})",
            bm.g,
            ou.g.iter().map(|g| (g - 0.5).abs()).fold(0.0, f64::max),
            ex.g,
            ex.envelope_pass
        ),
    );
    assert!(pass);
}

fn maximal_config(f: &str, grad: &str) -> String {
    format!(
        r#"
name = "maximal"
[problem]
preset = "bm(1)"
[experiment]
kind = "flow"
[experiment.maximal]
f = "{f}"
grad_norm = "{grad}"
lo = -2.0
hi = 2.0
n = 201
radius = 1.0
"#
    )
}

const MAXIMAL_CASES: [(&str, &str); 2] =
    [("abs(x1)", "1"), ("min(x1^2, 1)", "2 * abs(x1) * step(1 - abs(x1))")];

#[test]
fn criterion_4_maximal_inequality() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut all = true;
    for (f, g) in MAXIMAL_CASES {
        let out = run_experiment(&ExperimentConfig::from_toml(&maximal_config(f, g)).unwrap()).unwrap();
        let r = &out.report["checks"][0]["result"];
        let ok = out.verdict == Verdict::Pass && r["pass"] == true;
        all &= ok;
        details.push(format!("{f}: pairs {} worst excess {}", r["pairs_checked"], r["worst_excess"]));
    }
    let elapsed = start.elapsed();
    let pass = all && elapsed <= Duration::from_secs(1);
    verdict_line("4", pass, elapsed, &format!("201-node lattice, zero violations: {all}; {details:?}"));
    assert!(pass);
}

#[test]
fn criterion_5_khasminskii() {
    let start = Instant::now();
    let bm = preset("bm(1)").unwrap();
    let grid: Vec<Vec<f64>> = [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|x| vec![*x]).collect();
    let c = cfg(10_000, 1e-3, 1.0, 51);
    let small: SpaceTimeFn = ball_indicator(0.3, 1.0);
    let big: SpaceTimeFn = ball_indicator(5.0, 1.0);
    let r = khasminskii_check(&bm, &c, &small, 10.0, &grid).unwrap();
    let r2 = khasminskii_check(&bm, &c.coarsened(2), &small, 10.0, &grid).unwrap();
    let oracle = 0.3 * bm_ball_occupation(0.0, 1.0, 1.0);
    let c_ok = (r.c - oracle).abs() <= 3.0 * r.c_std_error + (r.c - r2.c).abs();
    let big_r = khasminskii_check(&bm, &c, &big, 10.0, &grid).unwrap();
    let elapsed = start.elapsed();
    let pass = r.applicable
        && r.pass
        && r.verdict == Verdict::Pass
        && oracle < 1.0
        && c_ok
        && !big_r.applicable
        && elapsed <= Duration::from_secs(120);
    verdict_line(
        "5",
        pass,
        elapsed,
        &format!(
            "0.3*1_B: c={:.4}±{:.4} (oracle {oracle:.4}) pass={} verdict={:?}; 5*1_B: c={:.3} applicable={}",
            r.c, r.c_std_error, r.pass, r.verdict, big_r.c, big_r.applicable
        ),
    );
    assert!(pass);
}

fn stopped_fraction(problem: &SdeProblem, config: &SimulationConfig, x: f64) -> f64 {
    terminal_states(problem, config, &[x]).len() as f64 / config.n_paths as f64
}

#[test]
#[ignore = "unattainable as stated: from x = 2 at dt = 0.01 Euler-Maruyama cannot reach its blow-up region |x| > (2/dt)^(1/4) ≈ 3.76"]
fn criterion_6_taming_necessity() {
    let start = Instant::now();
    let p = preset("example1(0.4)").unwrap();
    let base = SimulationConfig { explosion_cap: 1e6, ..cfg(10_000, 1e-2, 1.0, 61) };
    let em = SimulationConfig { scheme: Scheme::EulerMaruyama, ..base.clone() };
    let em_frac = 1.0 - stopped_fraction(&p, &em, 2.0);
    let tamed_frac = 1.0 - stopped_fraction(&p, &base, 2.0);
    let elapsed = start.elapsed();
    let em4 = 1.0 - stopped_fraction(&p, &em, 4.0);
    let tamed4 = 1.0 - stopped_fraction(&p, &base, 4.0);
    info_line("6", &format!("at x=4: euler-maruyama explosion fraction {em4}, tamed-euler {tamed4}"));
    let pass = em_frac > 0.0 && tamed_frac == 0.0 && elapsed <= Duration::from_secs(60);
    verdict_line(
        "6",
        pass,
        elapsed,
        &format!("x=2: euler-maruyama explosion fraction {em_frac}, tamed-euler {tamed_frac}"),
    );
    assert!(pass);
}

#[test]
#[ignore = "ratio bound 3 sits below the order-1/2 ratio sqrt(10) ≈ 3.16; the observed dt=1e-3 → 1e-4 ratio at x = 0 is ≈ 3.05"]
fn criterion_7_zvonkin_conjugacy() {
    let start = Instant::now();
    let step = preset("step-drift-1d").unwrap();
    let split = split_drift(&step, 4.0).unwrap();
    let sol = solve_backward_pde(&split, &PdeGrid::for_cutoff(4.0, 1.0), 1.0).unwrap();
    let transform = build_transform(&sol, &split);
    let (lo, hi) = transform.as_ref().map(|t| t.lipschitz_range).unwrap_or((f64::NAN, f64::NAN));
    let sandwich = transform.is_ok() && lo >= 0.5 && hi <= 1.5;
    let (monotone, ratios) = match &transform {
        Ok(t) => {
            let r = conjugacy_refinement(&step, t, &cfg(4000, 1e-2, 1.0, 71), 0.0, &[1e-2, 1e-3, 1e-4]).unwrap();
            (r.monotone, r.ratios)
        }
        Err(_) => (false, Vec::new()),
    };
    let in_range = !ratios.is_empty() && ratios.iter().all(|r| (1.2..=3.0).contains(r));
    let elapsed = start.elapsed();
    let pass = sandwich && monotone && in_range && elapsed <= Duration::from_secs(600);
    verdict_line(
        "7",
        pass,
        elapsed,
        &format!(
            "lambda={} adjacent quotients in [{lo:.3}, {hi:.3}] sandwich={sandwich}; medians decreasing={monotone}; ratios {ratios:?}",
            sol.lambda
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "the constant-rate steering m = 4 over the whole horizon degenerates the weights: ESS is O(10) at 10^4 paths, not >= 100"]
fn criterion_8_girsanov() {
    let start = Instant::now();
    let bm = preset("bm(1)").unwrap();
    let c = cfg(10_000, 1e-3, 1.0, 81);
    let naive = hitting_probability(&bm, &c, &[0.0], &[0.0], 1.0, 1.0).unwrap();
    let zero = girsanov_hitting(&bm, &c, &[0.0], &[0.0], 1.0, 1.0, Some(0.0), Some(10.0)).unwrap();
    let reduces = naive.p_hat == zero.p_hat;
    let far = girsanov_hitting(&bm, &c, &[0.0], &[3.0], 0.3, 1.0, Some(4.0), Some(10.0)).unwrap();
    let oracle = phi(-2.7) - phi(-3.3);
    let within = (far.p_hat - oracle).abs() <= 3.0 * far.std_error;
    let ess = far.ess.unwrap_or(0.0);
    let elapsed = start.elapsed();
    let pass = reduces && within && ess >= 100.0 && elapsed <= Duration::from_secs(120);
    verdict_line(
        "8",
        pass,
        elapsed,
        &format!(
            "m=0 equals naive: {reduces} ({} vs {}); far target p={:.5}±{:.5} oracle {oracle:.5} within 3 SE: {within}; ESS {ess:.1}",
            zero.p_hat, naive.p_hat, far.p_hat, far.std_error
        ),
    );
    assert!(pass);
}

/// Reduced-size configs covering every suite.
fn suite_configs() -> Vec<(&'static str, String)> {
    let sim = |n: usize, dt: f64, seed: u64| format!("[simulation]\ndt = {dt}\nn_paths = {n}\nseed = {seed}\n");
    vec![
        ("1-moments", format!("name = \"s1\"\n[problem]\npreset = \"ou(1)\"\n{}[experiment]\nkind = \"simulate\"\nstarts = [[1.0]]\nexit_radius = 2.0\n", sim(600, 1e-2, 1))),
        ("1-occupation", format!("name = \"s1o\"\n[problem]\npreset = \"bm(1)\"\n{}[experiment]\nkind = \"occupation\"\nf = \"indicator(1)\"\nx = [[0.0]]\nestimate = true\n", sim(600, 1e-2, 2))),
        ("1-gradient", format!("name = \"s1g\"\n[problem]\npreset = \"ou(1)\"\n{}[experiment]\nkind = \"flow\"\n[experiment.gradient]\nx = [[0.5]]\n", sim(600, 1e-2, 3))),
        ("2", format!("name = \"s2\"\n[problem]\npreset = \"example1(0.4)\"\n{}[experiment]\nkind = \"lyapunov\"\nx = [[-2.0], [0.0], [2.0]]\np = 2.0\n", sim(600, 1e-2, 4))),
        ("3", format!("name = \"s3\"\n[problem]\npreset = \"example1(0.4)\"\n{}[experiment]\nkind = \"flow\"\n[experiment.witness]\nn = 5\n", sim(600, 1e-2, 5))),
        ("4", maximal_config(MAXIMAL_CASES[1].0, MAXIMAL_CASES[1].1)),
        ("5", format!("name = \"s5\"\n[problem]\npreset = \"bm(1)\"\n{}[experiment]\nkind = \"occupation\"\nf = \"0.3 * indicator(1)\"\nx = [[0.0], [1.0]]\nkhasminskii_radius = 10.0\n", sim(600, 1e-2, 6))),
        ("6", "name = \"s6\"\n[problem]\npreset = \"example1(0.4)\"\n[simulation]\nscheme = \"euler-maruyama\"\ndt = 1e-2\nn_paths = 600\nseed = 7\n[experiment]\nkind = \"simulate\"\nstarts = [[2.0], [4.0]]\n".to_string()),
        ("7", format!("name = \"s7\"\n[problem]\npreset = \"step-drift-1d\"\n{}[experiment]\nkind = \"zvonkin\"\nx = [0.0]\ndts = [1e-2, 5e-3]\n", sim(600, 1e-2, 8))),
        ("8", format!("name = \"s8\"\n[problem]\npreset = \"bm(1)\"\n{}[experiment]\nkind = \"markov\"\n[experiment.hitting]\nx0 = [0.0]\ny0 = [3.0]\na = 0.3\n[experiment.hitting.girsanov]\nm = 4.0\ntruncation = 10.0\n", sim(600, 1e-2, 9))),
        ("10", format!("name = \"s10\"\n[problem]\npreset = \"bm(1)\"\n{}[experiment]\nkind = \"lyapunov\"\nexp = false\n[experiment.steering]\nx0 = [1.0]\ny0 = [0.0]\nm = [1.0, 10.0, 100.0]\n", sim(600, 1e-3, 10))),
    ]
}

fn run_in_pool(threads: usize, cfg: &ExperimentConfig) -> RunOutput {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_experiment(cfg).unwrap())
}

#[test]
fn criterion_9_determinism() {
    let start = Instant::now();
    let mut mismatched = Vec::new();
    let configs = suite_configs();
    for (suite, src) in &configs {
        let cfg = ExperimentConfig::from_toml(src).unwrap();
        let a = run_in_pool(1, &cfg);
        let b = run_in_pool(8, &cfg);
        let c = run_in_pool(8, &cfg);
        let same = a.report_json() == b.report_json()
            && b.report_json() == c.report_json()
            && a.artifacts.tables == b.artifacts.tables
            && a.artifacts.binaries == b.artifacts.binaries;
        if !same {
            mismatched.push(*suite);
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatched.is_empty();
    verdict_line(
        "9",
        pass,
        elapsed,
        &format!("{} suite configs run twice on 8 threads and once on 1 thread; mismatches {mismatched:?}", configs.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_10_steering_contraction() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut all = true;
    for (k, id) in ["bm(1)", "example1(0.4)"].iter().enumerate() {
        let p = preset(id).unwrap();
        let r = steering_contraction_check(&p, &cfg(10_000, 1e-3, 1.0, 101 + k as u64), &[1.0], &[0.0], &[1.0, 10.0, 100.0])
            .unwrap();
        let validated = r.fit_m == 1.0 && r.levels.iter().filter(|l| l.m > 1.0).all(|l| l.pass);
        all &= validated && r.verdict == Verdict::Pass;
        details.push(format!(
            "{id}: C0={:.4} C1={:.4} excess(SE) {:?} verdict {:?}",
            r.c0,
            r.c1,
            r.levels.iter().map(|l| (l.m, (l.worst_excess_se * 100.0).round() / 100.0)).collect::<Vec<_>>(),
            r.verdict
        ));
    }
    let elapsed = start.elapsed();
    let pass = all && elapsed <= Duration::from_secs(180);
    verdict_line("10", pass, elapsed, &details.join("; "));
    assert!(pass);
}
