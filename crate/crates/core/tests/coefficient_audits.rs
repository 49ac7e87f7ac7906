use flowlab::coefficients::{
    audit_coercivity, audit_ellipticity, audit_growth, audit_monotonicity, default_audit_grid,
    pair_subgrid, preset, AuditSettings,
};

const PRESETS: &[&str] = &[
    "example1(0.4)",
    "example1(0.0)",
    "example1(0.75)",
    "bm(1)",
    "bm(2)",
    "bm(3)",
    "ou(1)",
    "ou(2)",
    "ou(3)",
    "degenerate-example1(1)",
    "degenerate-example1(2)",
];

#[test]
fn every_preset_passes_its_audits_on_the_default_grid() {
    let s = AuditSettings::default();
    for id in PRESETS {
        let p = preset(id).unwrap();
        let grid = default_audit_grid(p.dim(), -10.0, 10.0, 1000);
        let pairs = pair_subgrid(&grid, 60);
        for kappa in [0.5, 1.0, 2.0] {
            let c = audit_coercivity(&p, kappa, &grid, &s).unwrap();
            assert!(c.pass, "{id} coercivity kappa={kappa}: {c:?}");
            let m = audit_monotonicity(&p, kappa, &pairs, &s).unwrap();
            assert!(m.overall_pass(), "{id} monotonicity kappa={kappa}: worst {} at {:?}; tail {:?}", m.worst_value, m.worst_at, m.tail.as_ref().map(|t| (t.worst_value, t.worst_at.clone())));
        }
        let e = audit_ellipticity(&p, &grid, &s).unwrap();
        assert!(e.pass, "{id} ellipticity: {} at {:?}", e.worst_value, e.worst_at);
        let g = audit_growth(&p, &grid, &s).unwrap();
        assert!(g.pass, "{id} growth: {} at {:?}", g.worst_value, g.worst_at);
    }
}

#[test]
fn example1_monotonicity_drift_part_is_nonpositive() {
    let p = preset("example1(0.4)").unwrap();
    let grid = default_audit_grid(1, -10.0, 10.0, 1000);
    for (x, y) in pair_subgrid(&grid, 60) {
        let bx = p.field.drift(0.0, &x)[0];
        let by = p.field.drift(0.0, &y)[0];
        assert!((x[0] - y[0]) * (bx - by) <= 0.0);
    }
}
