//! Time-stepping schemes, path ensembles and their export formats.

mod engine;
mod implicit;
mod observe;

pub use engine::{run, Design, MemberSpec, MemberStatus, Observer, Steering, StepView};
pub use observe::{SnapshotObserver, Snapshots};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::coefficients::SdeProblem;
use crate::error::{FlowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    TamedEuler,
    DriftImplicitEuler,
    EulerMaruyama,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::TamedEuler => "tamed-euler",
            Scheme::DriftImplicitEuler => "drift-implicit-euler",
            Scheme::EulerMaruyama => "euler-maruyama",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub explosion_cap: f64,
    pub store_increments: bool,
    /// Fine Brownian increments summed into each step. A run with `dt = 2h`
    /// and two substeps sees the same Brownian path as a run with `dt = h`.
    pub noise_substeps: u32,
    /// First stream id; replicate `r` uses stream `stream_offset + r`.
    pub stream_offset: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::TamedEuler,
            dt: 1e-3,
            horizon: 1.0,
            n_paths: 10_000,
            seed: 0,
            explosion_cap: 1e6,
            store_increments: false,
            noise_substeps: 1,
            stream_offset: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlowError::Config(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return bad(format!("horizon must be at least dt, got T={} dt={}", self.horizon, self.dt));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if !(self.explosion_cap > 0.0) {
            return bad("explosion_cap must be positive".into());
        }
        if self.noise_substeps == 0 {
            return bad("noise_substeps must be at least 1".into());
        }
        Ok(())
    }

    /// The same Brownian paths observed on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: u32) -> Self {
        Self {
            dt: self.dt * f64::from(factor),
            noise_substeps: self.noise_substeps * factor,
            ..self.clone()
        }
    }
}

/// Uniform grid `t_k = k·dt` ending exactly at `T`; the last step is
/// shortened when `T/dt` is not an integer.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(dt: f64, horizon: f64) -> Self {
        let ratio = horizon / dt;
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
        .max(1);
        let mut times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        times.push(horizon);
        Self { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Index of the grid time closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        index_of(&self.times, t)
    }
}

pub(crate) fn index_of(times: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (i, &s) in times.iter().enumerate() {
        if (s - t).abs() < (times[best] - t).abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// Index into [`PathEnsemble::starts`].
    pub start: usize,
    /// `(n_steps + 1) × d`, row-major by step.
    pub states: Vec<f64>,
    pub exit_index: Option<usize>,
    pub failure_index: Option<usize>,
    /// `n_steps × m` Brownian increments when requested.
    pub increments: Option<Vec<f64>>,
    /// `(n_steps + 1) × d` displacements `X_t − X_0`, kept for coupled
    /// ensembles so pair differences are exact under identical increments.
    pub displacements: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    None,
    /// Every replicate holds one path per start point, all driven by the
    /// same increments; `pairs` indexes into the start points.
    Synchronous { pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub time_grid: Vec<f64>,
    pub dim: usize,
    pub starts: Vec<Vec<f64>>,
    /// Paths per replicate (1 without coupling).
    pub members: usize,
    /// Replicate-major: replicate `r`, member `j` is `paths[r·members + j]`.
    pub paths: Vec<Path>,
    pub coupling: Coupling,
    pub seed: u64,
    /// Stream id of each replicate.
    pub stream_ids: Vec<u64>,
    pub scheme: Scheme,
    pub explosion_cap: f64,
}

impl PathEnsemble {
    pub fn n_steps(&self) -> usize {
        self.time_grid.len() - 1
    }

    pub fn n_replicates(&self) -> usize {
        self.paths.len() / self.members
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        &self.paths[path].states[step * self.dim..(step + 1) * self.dim]
    }

    pub fn exploded_fraction(&self) -> f64 {
        self.paths.iter().filter(|p| p.exit_index.is_some()).count() as f64 / self.paths.len() as f64
    }

    pub fn failed_fraction(&self) -> f64 {
        self.paths.iter().filter(|p| p.failure_index.is_some()).count() as f64 / self.paths.len() as f64
    }

    /// `X_t(a) − X_t(b)` at `step` for members `a`, `b` of replicate `r`.
    pub fn member_difference(&self, r: usize, a: usize, b: usize, step: usize, out: &mut [f64]) {
        let d = self.dim;
        let (pa, pb) = (&self.paths[r * self.members + a], &self.paths[r * self.members + b]);
        let (sa, sb) = (&self.starts[pa.start], &self.starts[pb.start]);
        match (&pa.displacements, &pb.displacements) {
            (Some(da), Some(db)) => {
                for i in 0..d {
                    out[i] = (sa[i] - sb[i]) + (da[step * d + i] - db[step * d + i]);
                }
            }
            _ => {
                for i in 0..d {
                    out[i] = pa.states[step * d + i] - pb.states[step * d + i];
                }
            }
        }
    }

    /// Member paths of pair `p` in replicate `r`.
    pub fn pair_paths(&self, r: usize, p: usize) -> Option<(&Path, &Path)> {
        match &self.coupling {
            Coupling::Synchronous { pairs } => {
                let (a, b) = *pairs.get(p)?;
                Some((&self.paths[r * self.members + a], &self.paths[r * self.members + b]))
            }
            Coupling::None => None,
        }
    }
}

struct Recorder {
    m: usize,
    store_increments: bool,
    keep_disp: bool,
    states: Vec<Vec<f64>>,
    disp: Vec<Vec<f64>>,
    increments: Vec<f64>,
    status: Vec<MemberStatus>,
}

impl Observer for Recorder {
    type Output = Vec<Path>;

    fn observe(&mut self, v: &StepView<'_>) {
        if self.states.is_empty() {
            self.states = vec![Vec::new(); v.members()];
            self.disp = vec![Vec::new(); v.members()];
            self.status = vec![MemberStatus::default(); v.members()];
        }
        for j in 0..v.members() {
            self.states[j].extend_from_slice(v.state(j));
            if self.keep_disp {
                self.disp[j].extend_from_slice(v.displacement(j));
            }
            self.status[j] = v.status(j);
        }
        if self.store_increments && v.step > 0 {
            self.increments.extend_from_slice(&v.dw[..self.m]);
        }
    }

    fn finish(self) -> Self::Output {
        let inc = self.store_increments.then_some(self.increments);
        let keep = self.keep_disp;
        self.states
            .into_iter()
            .zip(self.disp)
            .zip(self.status)
            .enumerate()
            .map(|(j, ((s, dsp), st))| Path {
                start: j,
                states: s,
                exit_index: st.exploded_at,
                failure_index: st.failed_at,
                increments: inc.clone(),
                displacements: keep.then_some(dsp),
            })
            .collect()
    }
}

fn record(design: &Design<'_>, config: &SimulationConfig, n_replicates: usize, keep_disp: bool) -> Result<Vec<Vec<Path>>> {
    let m = design.fields[0].noise_dim();
    run(design, config, n_replicates, |_| Recorder {
        m,
        store_increments: config.store_increments,
        keep_disp,
        states: Vec::new(),
        disp: Vec::new(),
        increments: Vec::new(),
        status: Vec::new(),
    })
}

/// Independent ensembles from each initial point; point `j` uses streams
/// `stream_offset + j·n_paths + i`.
pub fn simulate(problem: &SdeProblem, config: &SimulationConfig, initial: &[Vec<f64>]) -> Result<PathEnsemble> {
    config.validate()?;
    if initial.is_empty() {
        return Err(FlowError::InvalidArgument("no initial points".into()));
    }
    let mut paths = Vec::with_capacity(initial.len() * config.n_paths);
    let mut stream_ids = Vec::with_capacity(paths.capacity());
    for (j, x) in initial.iter().enumerate() {
        let design = Design::single(problem.field.as_ref(), x.clone());
        let cfg = SimulationConfig {
            stream_offset: config.stream_offset + (j * config.n_paths) as u64,
            ..config.clone()
        };
        for (i, mut rep) in record(&design, &cfg, config.n_paths, false)?.into_iter().enumerate() {
            let mut p = rep.remove(0);
            p.start = j;
            paths.push(p);
            stream_ids.push(cfg.stream_offset + i as u64);
        }
    }
    Ok(PathEnsemble {
        time_grid: TimeGrid::new(config.dt, config.horizon).times,
        dim: problem.dim(),
        starts: initial.to_vec(),
        members: 1,
        paths,
        coupling: Coupling::None,
        seed: config.seed,
        stream_ids,
        scheme: config.scheme,
        explosion_cap: config.explosion_cap,
    })
}

/// Start points of a pair list with duplicates merged, and the pair list
/// re-expressed as indices into them.
pub fn unique_points(pairs: &[(Vec<f64>, Vec<f64>)]) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let mut idx = |p: &Vec<f64>| match pts.iter().position(|q| q == p) {
        Some(i) => i,
        None => {
            pts.push(p.clone());
            pts.len() - 1
        }
    };
    let map: Vec<(usize, usize)> = pairs.iter().map(|(x, y)| (idx(x), idx(y))).collect();
    (pts, map)
}

/// Every start point appearing in `pairs` is simulated once per replicate,
/// all driven by the replicate's single Brownian path.
pub fn coupled_simulate(
    problem: &SdeProblem,
    config: &SimulationConfig,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<PathEnsemble> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(FlowError::InvalidArgument("no pairs".into()));
    }
    let (starts, pair_idx) = unique_points(pairs);
    let design = Design::coupled(problem.field.as_ref(), starts.clone());
    let reps = record(&design, config, config.n_paths, true)?;
    let members = starts.len();
    Ok(PathEnsemble {
        time_grid: TimeGrid::new(config.dt, config.horizon).times,
        dim: problem.dim(),
        starts,
        members,
        paths: reps.into_iter().flatten().collect(),
        coupling: Coupling::Synchronous { pairs: pair_idx },
        seed: config.seed,
        stream_ids: (0..config.n_paths as u64).map(|r| config.stream_offset + r).collect(),
        scheme: config.scheme,
        explosion_cap: config.explosion_cap,
    })
}

/// First grid time at which `|X| ≥ radius`, or `+∞`. Paths stopped by a
/// non-finite step exit at their explosion index.
pub fn first_exit(ensemble: &PathEnsemble, radius: f64) -> Result<Vec<f64>> {
    if radius > ensemble.explosion_cap {
        return Err(FlowError::InvalidArgument(format!(
            "exit radius {radius} exceeds the explosion cap {}",
            ensemble.explosion_cap
        )));
    }
    Ok((0..ensemble.paths.len())
        .map(|i| {
            let p = &ensemble.paths[i];
            for k in 0..=ensemble.n_steps() {
                let s = ensemble.state(i, k);
                if s.iter().map(|v| v * v).sum::<f64>().sqrt() >= radius {
                    return ensemble.time_grid[k];
                }
                if p.exit_index == Some(k) {
                    return ensemble.time_grid[k];
                }
            }
            f64::INFINITY
        })
        .collect())
}

/// Columnar CSV: `path_id,step,t,x_1..x_d,exploded` where `exploded` is 1
/// from the explosion index on.
pub fn write_csv(ensemble: &PathEnsemble, mut w: impl Write) -> Result<()> {
    let mut header = String::from("path_id,step,t");
    for i in 1..=ensemble.dim {
        header.push_str(&format!(",x_{i}"));
    }
    writeln!(w, "{header},exploded")?;
    for (pid, p) in ensemble.paths.iter().enumerate() {
        for k in 0..=ensemble.n_steps() {
            let mut line = format!("{pid},{k},{}", ensemble.time_grid[k]);
            for v in ensemble.state(pid, k) {
                line.push_str(&format!(",{v}"));
            }
            let ex = p.exit_index.is_some_and(|e| e <= k);
            writeln!(w, "{line},{}", u8::from(ex))?;
        }
    }
    Ok(())
}

const FLW_MAGIC: &[u8; 4] = b"FLW1";

/// Binary layout (little-endian): magic `FLW1`, `u32` dimension, `u64` path
/// count, `u64` step count, the `n_steps + 1` grid times as `f64`, then per
/// path an `i64` explosion index and an `i64` failure index (`-1` = none)
/// followed by its `(n_steps + 1)·d` states.
pub fn write_binary(ensemble: &PathEnsemble, mut w: impl Write) -> Result<()> {
    w.write_all(FLW_MAGIC)?;
    w.write_all(&(ensemble.dim as u32).to_le_bytes())?;
    w.write_all(&(ensemble.paths.len() as u64).to_le_bytes())?;
    w.write_all(&(ensemble.n_steps() as u64).to_le_bytes())?;
    for t in &ensemble.time_grid {
        w.write_all(&t.to_le_bytes())?;
    }
    let idx = |o: Option<usize>| o.map_or(-1i64, |v| v as i64);
    for p in &ensemble.paths {
        w.write_all(&idx(p.exit_index).to_le_bytes())?;
        w.write_all(&idx(p.failure_index).to_le_bytes())?;
        for v in &p.states {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Paths read back from the binary format.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPaths {
    pub dim: usize,
    pub time_grid: Vec<f64>,
    pub paths: Vec<(Option<usize>, Option<usize>, Vec<f64>)>,
}

pub fn read_binary(mut r: impl Read) -> Result<BinaryPaths> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FLW_MAGIC {
        return Err(FlowError::Format("bad magic, expected FLW1".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n_paths = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let n_steps = u64::from_le_bytes(b8) as usize;
    let read_f64 = |r: &mut dyn Read| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let time_grid = (0..=n_steps).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut idx = || -> Result<Option<usize>> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let v = i64::from_le_bytes(b);
            Ok((v >= 0).then_some(v as usize))
        };
        let ex = idx()?;
        let fail = idx()?;
        let states = (0..(n_steps + 1) * dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        paths.push((ex, fail, states));
    }
    Ok(BinaryPaths { dim, time_grid, paths })
}

#[cfg(test)]
mod tests;
