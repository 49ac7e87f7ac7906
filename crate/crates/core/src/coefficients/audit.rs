//! Grid audits of the coercivity, monotonicity, ellipticity and growth
//! conditions. Each audit evaluates a quantity that must be nonpositive (or
//! below a bound) at every grid point and reports the worst case.

use serde::{Deserialize, Serialize};

use super::{frobenius_sq, norm, SdeProblem};
use crate::error::{FlowError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub tolerance_abs: f64,
    pub tolerance_rel: f64,
    /// Time samples at which every grid point is evaluated.
    pub times: Vec<f64>,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self { tolerance_abs: 1e-9, tolerance_rel: 1e-9, times: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditGrid {
    Points(Vec<Vec<f64>>),
    Pairs(Vec<(Vec<f64>, Vec<f64>)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub quantity_name: String,
    pub grid: AuditGrid,
    pub times: Vec<f64>,
    pub worst_value: f64,
    /// Point (or concatenated pair) attaining the worst value.
    pub worst_at: Vec<f64>,
    pub bound: f64,
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
    /// Secondary audit attached to this one (the majorant tail bound).
    pub tail: Option<Box<AuditReport>>,
}

impl AuditReport {
    /// This audit and any attached secondary audit pass.
    pub fn overall_pass(&self) -> bool {
        self.pass && self.tail.as_ref().is_none_or(|t| t.overall_pass())
    }
}

/// Uniform grid on `[lo, hi]^d` with about `total` points
/// (`round(total^{1/d})` per axis).
pub fn default_audit_grid(d: usize, lo: f64, hi: f64, total: usize) -> Vec<Vec<f64>> {
    let per_axis = ((total as f64).powf(1.0 / d as f64).round() as usize).max(2);
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
        .collect();
    let mut pts = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    pts
}

/// All unordered pairs of an evenly thinned subset of at most `max_points`.
pub fn pair_subgrid(points: &[Vec<f64>], max_points: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = points.len();
    let k = n.min(max_points.max(2));
    let idx: Vec<usize> = if k >= n {
        (0..n).collect()
    } else {
        (0..k).map(|i| i * (n - 1) / (k - 1)).collect()
    };
    let mut pairs = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            pairs.push((points[i].clone(), points[j].clone()));
        }
    }
    pairs
}

struct Worst {
    value: f64,
    at: Vec<f64>,
    scale: f64,
}

impl Worst {
    fn new() -> Self {
        Self { value: f64::NEG_INFINITY, at: Vec::new(), scale: 0.0 }
    }

    fn push(&mut self, value: f64, at: impl FnOnce() -> Vec<f64>, scale: f64) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        self.scale = self.scale.max(scale.abs());
        if value > self.value {
            self.value = value;
            self.at = at();
        }
    }

    fn finish(self, name: &str, grid: AuditGrid, s: &AuditSettings, warnings: Vec<String>) -> AuditReport {
        let tolerance = s.tolerance_abs + s.tolerance_rel * self.scale.min(f64::MAX);
        let pass = self.value <= tolerance;
        AuditReport {
            quantity_name: name.to_string(),
            grid,
            times: s.times.clone(),
            worst_value: self.value,
            worst_at: self.at,
            bound: 0.0,
            margin: -self.value,
            tolerance,
            pass,
            warnings,
            tail: None,
        }
    }
}

fn check_grid(points: &[Vec<f64>], d: usize) -> Result<()> {
    if points.is_empty() {
        return Err(FlowError::InvalidArgument("audit grid is empty".into()));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(FlowError::InvalidArgument(format!("audit points must have dimension {d}")));
    }
    Ok(())
}

struct Scratch {
    b: Vec<f64>,
    s: Vec<f64>,
}

impl Scratch {
    fn new(p: &SdeProblem) -> Self {
        Self { b: vec![0.0; p.dim()], s: vec![0.0; p.dim() * p.noise_dim()] }
    }

    fn eval(&mut self, p: &SdeProblem, t: f64, x: &[f64]) {
        p.field.drift_into(t, x, &mut self.b);
        p.field.diffusion_into(t, x, &mut self.s);
    }
}

/// `⟨x,b⟩ + κ(1+|x|²)^α‖σ‖² − C_κ(1+|x|²) ≤ 0` on the grid.
pub fn audit_coercivity(
    problem: &SdeProblem,
    kappa: f64,
    grid: &[Vec<f64>],
    settings: &AuditSettings,
) -> Result<AuditReport> {
    let g = problem.growth()?;
    check_grid(grid, problem.dim())?;
    let c = g.coercivity_constant(kappa);
    let mut sc = Scratch::new(problem);
    let mut worst = Worst::new();
    for &t in &settings.times {
        for x in grid {
            sc.eval(problem, t, x);
            let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
            let xb: f64 = x.iter().zip(&sc.b).map(|(a, b)| a * b).sum();
            let diff = kappa * w.powf(g.alpha) * frobenius_sq(&sc.s);
            let rhs = c * w;
            let scale = xb.abs().max(diff.abs()).max(rhs.abs());
            worst.push(xb + diff - rhs, || x.clone(), scale);
        }
    }
    Ok(worst.finish(
        &format!("coercivity(kappa={kappa}, C_kappa={c})"),
        AuditGrid::Points(grid.to_vec()),
        settings,
        Vec::new(),
    ))
}

/// `⟨x−y, b(x)−b(y)⟩ + κ‖σ(x)−σ(y)‖² − |x−y|²(F_κ(x)+F_κ(y)) ≤ 0` on the
/// pairs, together with the tail bound `F_κ ≤ C₃·max(κ,1)·shape` for
/// `|x| ≥ R₀` at every point appearing in a pair.
pub fn audit_monotonicity(
    problem: &SdeProblem,
    kappa: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    settings: &AuditSettings,
) -> Result<AuditReport> {
    let g = problem.growth()?;
    if pairs.is_empty() {
        return Err(FlowError::InvalidArgument("no pairs to audit".into()));
    }
    let d = problem.dim();
    if pairs.iter().any(|(x, y)| x.len() != d || y.len() != d) {
        return Err(FlowError::InvalidArgument(format!("audit points must have dimension {d}")));
    }
    let mut sx = Scratch::new(problem);
    let mut sy = Scratch::new(problem);
    let mut worst = Worst::new();
    let mut skipped = 0usize;
    for &t in &settings.times {
        for (x, y) in pairs {
            if x == y {
                skipped += 1;
                continue;
            }
            sx.eval(problem, t, x);
            sy.eval(problem, t, y);
            let dist2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            let drift: f64 = x
                .iter()
                .zip(y)
                .zip(sx.b.iter().zip(&sy.b))
                .map(|((a, b), (ba, bb))| (a - b) * (ba - bb))
                .sum();
            let diff: f64 = kappa * sx.s.iter().zip(&sy.s).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let rhs = dist2 * (g.monotonicity_majorant(kappa, t, x) + g.monotonicity_majorant(kappa, t, y));
            let scale = drift.abs().max(diff.abs()).max(rhs.abs());
            worst.push(
                drift + diff - rhs,
                || x.iter().chain(y).copied().collect(),
                scale,
            );
        }
    }
    let mut warnings = Vec::new();
    if skipped > 0 {
        warnings.push(format!("{skipped} coincident pair evaluations skipped (0/0 = 0)"));
    }
    let mut report = if worst.value == f64::NEG_INFINITY {
        let mut r = Worst::new();
        r.push(0.0, Vec::new, 0.0);
        r.finish("monotonicity", AuditGrid::Pairs(pairs.to_vec()), settings, warnings)
    } else {
        worst.finish(
            &format!("monotonicity(kappa={kappa})"),
            AuditGrid::Pairs(pairs.to_vec()),
            settings,
            warnings,
        )
    };

    let mut tail_points: Vec<Vec<f64>> = Vec::new();
    for (x, y) in pairs {
        for p in [x, y] {
            if norm(p) >= g.r0 && !tail_points.contains(p) {
                tail_points.push(p.clone());
            }
        }
    }
    let mut tail = Worst::new();
    let mut tail_warnings = Vec::new();
    for &t in &settings.times {
        for x in &tail_points {
            let f = g.monotonicity_majorant(kappa, t, x);
            let cap = g.c3 * kappa.max(1.0) * g.tail_shape(x);
            tail.push(f - cap, || x.clone(), f.abs().max(cap.abs()));
            if f < 0.0 {
                tail_warnings.push(format!("majorant negative at {x:?}"));
            }
        }
    }
    if tail_points.is_empty() {
        tail.push(0.0, Vec::new, 0.0);
        tail_warnings.push(format!("no audited point with |x| >= R0 = {}", g.r0));
    }
    let mut tail_report = tail.finish(
        &format!("majorant_tail(kappa={kappa}, C3={})", g.c3),
        AuditGrid::Points(tail_points),
        settings,
        tail_warnings,
    );
    if tail_report.warnings.iter().any(|w| w.starts_with("majorant negative")) {
        tail_report.pass = false;
    }
    report.tail = Some(Box::new(tail_report));
    Ok(report)
}

/// Lower envelope minus the smallest singular value of `σ`, which must be
/// nonpositive.
pub fn audit_ellipticity(problem: &SdeProblem, grid: &[Vec<f64>], settings: &AuditSettings) -> Result<AuditReport> {
    let g = problem.growth()?;
    check_grid(grid, problem.dim())?;
    let (d, m) = (problem.dim(), problem.noise_dim());
    let mut worst = Worst::new();
    for &t in &settings.times {
        for x in grid {
            let s = problem.field.diffusion(t, x);
            let smin = if m > d {
                0.0
            } else {
                s.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
            };
            let env = g.ellipticity_envelope(x);
            worst.push(env - smin, || x.clone(), env.abs().max(smin.abs()));
        }
    }
    Ok(worst.finish("ellipticity", AuditGrid::Points(grid.to_vec()), settings, Vec::new()))
}

/// `|b| + ‖σ‖` minus its growth envelope, which must be nonpositive.
pub fn audit_growth(problem: &SdeProblem, grid: &[Vec<f64>], settings: &AuditSettings) -> Result<AuditReport> {
    let g = problem.growth()?;
    check_grid(grid, problem.dim())?;
    let mut sc = Scratch::new(problem);
    let mut worst = Worst::new();
    for &t in &settings.times {
        for x in grid {
            sc.eval(problem, t, x);
            let lhs = norm(&sc.b) + frobenius_sq(&sc.s).sqrt();
            let env = g.growth_envelope(x);
            // Compare on the scale of the left side; a huge envelope only
            // makes the margin larger.
            worst.push(lhs - env, || x.clone(), lhs);
        }
    }
    Ok(worst.finish("growth", AuditGrid::Points(grid.to_vec()), settings, Vec::new()))
}

/// Midpoint convexity of a majorant `F`: `F(θx+(1−θ)y) − θF(x) − (1−θ)F(y) ≤ 0`
/// over all pairs and sampled `θ`.
pub fn audit_convex_majorant(
    f: &dyn Fn(&[f64]) -> f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    thetas: &[f64],
    settings: &AuditSettings,
) -> Result<AuditReport> {
    if pairs.is_empty() || thetas.is_empty() {
        return Err(FlowError::InvalidArgument("convexity audit needs pairs and thetas".into()));
    }
    let mut worst = Worst::new();
    for (x, y) in pairs {
        let (fx, fy) = (f(x), f(y));
        for &th in thetas {
            let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| th * a + (1.0 - th) * b).collect();
            let fz = f(&z);
            let rhs = th * fx + (1.0 - th) * fy;
            worst.push(fz - rhs, || z.clone(), fz.abs().max(rhs.abs()));
        }
    }
    Ok(worst.finish("convex_majorant", AuditGrid::Pairs(pairs.to_vec()), settings, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, Majorant};

    fn grid1(lo: f64, hi: f64) -> Vec<Vec<f64>> {
        default_audit_grid(1, lo, hi, 1000)
    }

    #[test]
    fn grid_sizes_follow_the_per_axis_rule() {
        assert_eq!(default_audit_grid(1, -10.0, 10.0, 1000).len(), 1000);
        assert_eq!(default_audit_grid(2, -10.0, 10.0, 1000).len(), 32 * 32);
        assert_eq!(default_audit_grid(3, -10.0, 10.0, 1000).len(), 1000);
    }

    #[test]
    fn bm_coercivity_holds_with_equality() {
        let p = preset("bm(1)").unwrap();
        let r = audit_coercivity(&p, 1.0, &grid1(-10.0, 10.0), &AuditSettings::default()).unwrap();
        assert!(r.pass);
        assert!(r.worst_value.abs() < 1e-8, "{}", r.worst_value);
    }

    #[test]
    fn ou_coercivity_is_minus_x_squared() {
        let p = preset("ou(1)").unwrap();
        let r = audit_coercivity(&p, 1.0, &[vec![2.0]], &AuditSettings::default()).unwrap();
        assert!(r.pass);
        assert!((r.worst_value + 4.0).abs() < 1e-8);
    }

    #[test]
    fn example1_passes_coercivity_on_five() {
        let p = preset("example1(0.4)").unwrap();
        for kappa in [0.5, 1.0, 2.0, 3.0] {
            let r = audit_coercivity(&p, kappa, &grid1(-5.0, 5.0), &AuditSettings::default()).unwrap();
            assert!(r.pass, "kappa {kappa}: {}", r.worst_value);
        }
    }

    #[test]
    fn monotonicity_with_zero_majorant_passes_for_decreasing_drift() {
        for id in ["ou(1)", "example1(0.4)"] {
            let mut p = preset(id).unwrap();
            let g = p.growth.take().unwrap().with_majorant(Majorant::Zero);
            p.growth = Some(g);
            let pairs = pair_subgrid(&grid1(-10.0, 10.0), 60);
            let r = audit_monotonicity(&p, 0.0, &pairs, &AuditSettings::default()).unwrap();
            assert!(r.pass, "{id}: {}", r.worst_value);
        }
    }

    #[test]
    fn coincident_pairs_are_skipped_with_warning() {
        let p = preset("bm(1)").unwrap();
        let pairs = vec![(vec![1.0], vec![1.0]), (vec![1.0], vec![2.0])];
        let r = audit_monotonicity(&p, 1.0, &pairs, &AuditSettings::default()).unwrap();
        assert!(r.pass);
        assert_eq!(r.worst_value, 0.0);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn decaying_diffusion_fails_a_too_weak_ellipticity_envelope() {
        let mut p = preset("degenerate-example1(2)").unwrap();
        let g = p.growth.take().unwrap().with_gammas(1.0, 2.5, 0.0);
        p.growth = Some(g);
        let r = audit_ellipticity(&p, &grid1(-10.0, 10.0), &AuditSettings::default()).unwrap();
        assert!(!r.pass);
        // w^{-1} - w^{-2} with w = 1+x² peaks at w = 2.
        assert!((r.worst_value - 0.25).abs() < 1e-3, "{}", r.worst_value);
        let far = audit_ellipticity(&p, &[vec![10.0]], &AuditSettings::default()).unwrap();
        let direct = 101f64.powi(-1) - 101f64.powi(-2);
        assert!(!far.pass);
        assert!((far.worst_value - direct).abs() < 1e-15);
    }

    #[test]
    fn growth_with_stated_constants() {
        let mut p = preset("example1(0.4)").unwrap();
        let mut g = p.growth.take().unwrap();
        g.alpha_prime = 0.9;
        g.c2 = 8.0;
        p.growth = Some(g);
        let r = audit_growth(&p, &grid1(-3.0, 3.0), &AuditSettings::default()).unwrap();
        assert!(r.pass);

        let mut ou = preset("ou(1)").unwrap();
        let mut g = ou.growth.take().unwrap();
        g.alpha = 0.0;
        g.alpha_prime = 0.0;
        g.gamma2 = 1.0;
        g.c2 = 2.0;
        ou.growth = Some(g);
        let r = audit_growth(&ou, &grid1(-10.0, 10.0), &AuditSettings::default()).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn convexity_audit_distinguishes_convex_from_concave() {
        let pairs = pair_subgrid(&grid1(-3.0, 3.0), 20);
        let thetas = [0.1, 0.25, 0.5, 0.75, 0.9];
        let s = AuditSettings::default();
        let convex = audit_convex_majorant(&|x: &[f64]| x[0] * x[0], &pairs, &thetas, &s).unwrap();
        assert!(convex.pass);
        let concave = audit_convex_majorant(&|x: &[f64]| -x[0] * x[0], &pairs, &thetas, &s).unwrap();
        assert!(!concave.pass);
    }

    #[test]
    fn audits_are_deterministic() {
        let p = preset("example1(0.4)").unwrap();
        let g = grid1(-10.0, 10.0);
        let a = audit_coercivity(&p, 1.0, &g, &AuditSettings::default()).unwrap();
        let b = audit_coercivity(&p, 1.0, &g, &AuditSettings::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
