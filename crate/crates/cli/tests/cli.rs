use std::path::Path;
use std::process::{Command, Output};

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab")).args(args).output().expect("spawn flowlab")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const AUDIT: &str = r#"
name = "audit"
[problem]
preset = "example1(0.4)"
[experiment]
kind = "audit"
"#;

const SMALL_SIM: &str = r#"
name = "sim"
[problem]
preset = "ou(1)"
[simulation]
dt = 0.01
n_paths = 700
seed = 3
[experiment]
kind = "simulate"
starts = [[1.0], [-1.0]]
"#;

#[test]
fn audit_config_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", AUDIT);
    let out_dir = dir.path().join("out");
    let o = flowlab(&["run", &cfg, "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["checks"].as_array().unwrap().len(), 4);
    assert!(out_dir.join("provenance.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: pass"));
}

#[test]
fn invalid_configs_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("preset.toml", AUDIT.replace("example1(0.4)", "nope(1)")),
        ("beta.toml", AUDIT.replace("example1(0.4)", "example1(-1)")),
        ("field.toml", format!("{AUDIT}bogus = 1\n")),
    ] {
        let cfg = write(dir.path(), name, &body);
        let o = flowlab(&["run", &cfg, "--out-dir", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(3), "{name}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{name}");
    }
    let o = flowlab(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn list_presets_shows_metadata() {
    let o = flowlab(&["list-presets"]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    for id in ["example1(0.4)", "bm(1)", "ou(1)", "step-drift-1d", "degenerate-example1(1)"] {
        assert!(s.contains(id), "{id} missing from\n{s}");
    }
    assert!(s.contains("no growth profile"));
}

#[test]
fn plot_subcommand_rerenders_svgs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SMALL_SIM);
    let out = dir.path().join("run");
    let o = flowlab(&["run", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c <= 2), "{}", String::from_utf8_lossy(&o.stderr));
    let plots = dir.path().join("plots");
    let o = flowlab(&["plot", out.join("report.json").to_str().unwrap(), "--out-dir", plots.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svgs: Vec<_> = std::fs::read_dir(&plots).unwrap().filter_map(|e| e.ok()).collect();
    assert!(!svgs.is_empty());
    for e in svgs {
        let rerendered = std::fs::read_to_string(e.path()).unwrap();
        assert_eq!(rerendered, std::fs::read_to_string(out.join(e.file_name())).unwrap());
    }
}

#[test]
fn reports_do_not_depend_on_thread_count_or_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SMALL_SIM);
    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = flowlab(&["--threads", threads, "run", &cfg, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c <= 2));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
        assert_eq!(
            std::fs::read(out.join("means.csv")).unwrap(),
            std::fs::read(dir.path().join("t1").join("means.csv")).unwrap()
        );
    }
    assert_eq!(reports[0], reports[1]);

    let out = dir.path().join("seeded");
    let o = flowlab(&["run", &cfg, "--seed", "99", "--paths-override", "300", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c <= 2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["simulation"]["seed"], 99);
    assert_eq!(report["simulation"]["n_paths"], 300);
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["overrides"]["seed"], 99);
}
