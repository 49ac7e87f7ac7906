//! `flowlab` — runs declarative experiments and renders their plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use flowlab::coefficients::{preset, preset_ids};
use flowlab::experiment::{plots_from_report, render_plots, run, ExperimentConfig};
use flowlab::FlowError;

/// Exit code for invalid configs and runtime errors.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Stochastic flow simulation and verification")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "FLOWLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        dt_override: Option<f64>,
        #[arg(long)]
        paths_override: Option<usize>,
    },
    /// List the built-in problems with their growth metadata.
    ListPresets,
    /// Render the plots embedded in a report next to it (or into --out-dir).
    Plot {
        report: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    let result = match cli.command {
        Command::Run { config, seed, out_dir, dt_override, paths_override } => {
            run_command(&config, seed, out_dir, dt_override, paths_override, cli.threads)
        }
        Command::ListPresets => {
            print!("{}", list_presets());
            Ok(0)
        }
        Command::Plot { report, out_dir } => plot_command(&report, out_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run_command(
    path: &Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    dt: Option<f64>,
    paths: Option<usize>,
    threads: Option<usize>,
) -> Result<u8, FlowError> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        FlowError::Config(m) => FlowError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    if let Some(dt) = dt {
        cfg.simulation.dt = dt;
    }
    if let Some(n) = paths {
        cfg.simulation.n_paths = n;
    }
    cfg.validate()?;
    let dir = out_dir
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("flowlab-out").join(&cfg.name));
    let start = Instant::now();
    let out = run(&cfg)?;
    let provenance = serde_json::json!({
        "config": path.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "wall_seconds": start.elapsed().as_secs_f64(),
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
        "overrides": { "seed": seed, "dt": dt, "paths": paths },
    });
    let written = out.write_to(&dir, cfg.output.plots, &provenance)?;
    for c in out.report["checks"].as_array().into_iter().flatten() {
        println!("{:<48} {}", c["name"].as_str().unwrap_or("?"), c["verdict"].as_str().unwrap_or("?"));
    }
    println!("verdict: {}", out.report["verdict"].as_str().unwrap_or("?"));
    println!("wrote {} files to {}", written.len(), dir.display());
    Ok(out.verdict.exit_code() as u8)
}

fn plot_command(report: &Path, out_dir: Option<PathBuf>) -> Result<u8, FlowError> {
    let text = std::fs::read_to_string(report)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| FlowError::Format(format!("{}: {e}", report.display())))?;
    let plots = plots_from_report(&value)?;
    let dir = out_dir.unwrap_or_else(|| report.parent().map(Path::to_path_buf).unwrap_or_default());
    for f in render_plots(&plots, &dir)? {
        println!("{}", dir.join(f).display());
    }
    Ok(0)
}

/// One row per preset family, evaluated at a representative parameter.
fn list_presets() -> String {
    let examples = [
        ("example1(β)", "example1(0.4)"),
        ("bm(d)", "bm(1)"),
        ("ou(d)", "ou(1)"),
        ("step-drift-1d", "step-drift-1d"),
        ("degenerate-example1(γ)", "degenerate-example1(1)"),
    ];
    let mut s = format!(
        "{:<24} {:<24} {:>6} {:>6} {:>10} {:>10} {:>10} {:>5} {:>10}\n",
        "template", "instance", "alpha", "alpha'", "C1", "C2", "C3", "R0", "C_kappa=1"
    );
    debug_assert_eq!(examples.len(), preset_ids().len());
    for (template, instance) in examples {
        let p = preset(instance).expect("built-in preset");
        match &p.growth {
            Some(g) => s.push_str(&format!(
                "{:<24} {:<24} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>5} {:>10.4}\n",
                template,
                instance,
                g.alpha,
                g.alpha_prime,
                g.c1,
                g.c2,
                g.c3,
                g.r0,
                g.coercivity_constant(1.0)
            )),
            None => s.push_str(&format!("{template:<24} {instance:<24} (no growth profile)\n")),
        }
    }
    s
}
