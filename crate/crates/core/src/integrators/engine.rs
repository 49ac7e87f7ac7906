//! Replicate-parallel stepping engine.
//!
//! A *replicate* is a bundle of member paths (possibly with different start
//! points, fields or steering) that consume one shared Brownian stream. A
//! bundle with a single member is an ordinary Monte Carlo path; several
//! members give synchronous coupling. Observers see every grid step of a
//! replicate, so functionals can be accumulated without storing paths.

use rayon::prelude::*;

use super::implicit::ImplicitSolver;
use super::{Scheme, SimulationConfig, TimeGrid};
use crate::coefficients::CoefficientField;
use crate::error::{FlowError, Result};
use crate::rng::NoiseStream;

/// Replicates per parallel work unit.
const CHUNK: usize = 256;

/// Extra drift `−rate·(x − target)`, integrated explicitly and never tamed.
#[derive(Debug, Clone, PartialEq)]
pub struct Steering {
    pub rate: f64,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSpec {
    /// Index into [`Design::fields`].
    pub field: usize,
    pub start: Vec<f64>,
    pub steering: Option<Steering>,
}

impl MemberSpec {
    pub fn new(start: Vec<f64>) -> Self {
        Self { field: 0, start, steering: None }
    }
}

/// Fields and members shared by every replicate.
pub struct Design<'a> {
    pub fields: Vec<&'a dyn CoefficientField>,
    pub members: Vec<MemberSpec>,
}

impl<'a> Design<'a> {
    pub fn single(field: &'a dyn CoefficientField, start: Vec<f64>) -> Self {
        Self { fields: vec![field], members: vec![MemberSpec::new(start)] }
    }

    pub fn coupled(field: &'a dyn CoefficientField, starts: Vec<Vec<f64>>) -> Self {
        Self { fields: vec![field], members: starts.into_iter().map(MemberSpec::new).collect() }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let first = self
            .fields
            .first()
            .ok_or_else(|| FlowError::InvalidArgument("design has no fields".into()))?;
        let (d, m) = (first.dim(), first.noise_dim());
        if self.fields.iter().any(|f| f.dim() != d || f.noise_dim() != m) {
            return Err(FlowError::InvalidArgument("coupled fields must share dimensions".into()));
        }
        if self.members.is_empty() {
            return Err(FlowError::InvalidArgument("design has no members".into()));
        }
        for mem in &self.members {
            if mem.field >= self.fields.len() {
                return Err(FlowError::InvalidArgument("member references a missing field".into()));
            }
            if mem.start.len() != d || mem.start.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::InvalidArgument(format!(
                    "initial point must be a finite vector of dimension {d}"
                )));
            }
            if let Some(s) = &mem.steering {
                if s.target.len() != d || !s.rate.is_finite() {
                    return Err(FlowError::InvalidArgument("invalid steering".into()));
                }
            }
        }
        Ok((d, m))
    }
}

/// Read-only view of a replicate at grid index `step`.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    /// Length of the step that led here (0 at the initial index).
    pub dt_prev: f64,
    /// Brownian increment that led here (zeros at the initial index).
    pub dw: &'a [f64],
    pub dim: usize,
    states: &'a [f64],
    disp: &'a [f64],
    starts: &'a [MemberSpec],
    status: &'a [MemberStatus],
}

impl StepView<'_> {
    pub fn members(&self) -> usize {
        self.status.len()
    }

    pub fn state(&self, member: usize) -> &[f64] {
        &self.states[member * self.dim..(member + 1) * self.dim]
    }

    /// Accumulated increment `X_t − X_0` of a member. Members whose
    /// increments coincide (additive noise, zero drift) have bit-identical
    /// displacements.
    pub fn displacement(&self, member: usize) -> &[f64] {
        &self.disp[member * self.dim..(member + 1) * self.dim]
    }

    pub fn start(&self, member: usize) -> &[f64] {
        &self.starts[member].start
    }

    /// `X_t(a) − X_t(b)` computed as `(a₀ − b₀) + (D_a − D_b)`.
    pub fn difference_into(&self, a: usize, b: usize, out: &mut [f64]) {
        let (da, db) = (self.displacement(a), self.displacement(b));
        let (sa, sb) = (self.start(a), self.start(b));
        for i in 0..self.dim {
            out[i] = (sa[i] - sb[i]) + (da[i] - db[i]);
        }
    }

    pub fn status(&self, member: usize) -> MemberStatus {
        self.status[member]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemberStatus {
    /// Grid index at which the state left the explosion cap.
    pub exploded_at: Option<usize>,
    /// Grid index at which the implicit solve failed.
    pub failed_at: Option<usize>,
}

impl MemberStatus {
    pub fn stopped(&self) -> bool {
        self.exploded_at.is_some() || self.failed_at.is_some()
    }
}

pub trait Observer {
    type Output;
    fn observe(&mut self, view: &StepView<'_>);
    fn finish(self) -> Self::Output;
}

struct Workspace {
    b: Vec<f64>,
    s: Vec<f64>,
    next: Vec<f64>,
    rhs: Vec<f64>,
    delta: Vec<f64>,
    solver: ImplicitSolver,
}

fn step_member(
    field: &dyn CoefficientField,
    mem: &MemberSpec,
    scheme: Scheme,
    t0: f64,
    t1: f64,
    dw: &[f64],
    x: &[f64],
    ws: &mut Workspace,
) -> bool {
    let (d, m) = (field.dim(), field.noise_dim());
    let dt = t1 - t0;
    field.diffusion_into(t0, x, &mut ws.s);
    for i in 0..d {
        let mut noise = 0.0;
        for j in 0..m {
            noise += ws.s[i * m + j] * dw[j];
        }
        let steer = match &mem.steering {
            Some(st) => -st.rate * (x[i] - st.target[i]),
            None => 0.0,
        };
        // Explicit part of the increment, kept separate from x so that
        // identical increments give identical displacements.
        ws.delta[i] = dt * steer + noise;
        ws.rhs[i] = x[i] + ws.delta[i];
    }
    match scheme {
        Scheme::TamedEuler | Scheme::EulerMaruyama => {
            field.drift_into(t0, x, &mut ws.b);
            let factor = if scheme == Scheme::TamedEuler {
                let nb = ws.b.iter().map(|v| v * v).sum::<f64>().sqrt();
                1.0 / (1.0 + dt * nb)
            } else {
                1.0
            };
            for i in 0..d {
                ws.delta[i] += dt * factor * ws.b[i];
            }
            true
        }
        Scheme::DriftImplicitEuler => {
            ws.next.copy_from_slice(&ws.rhs);
            let rhs = std::mem::take(&mut ws.rhs);
            let mut next = std::mem::take(&mut ws.next);
            let ok = ws.solver.solve(field, t1, dt, &rhs, x, &mut next);
            for i in 0..d {
                ws.delta[i] += next[i] - rhs[i];
            }
            ws.rhs = rhs;
            ws.next = next;
            ok
        }
    }
}

/// Runs `n_replicates` replicates of `design`, replicate `r` drawing from
/// stream `config.stream_offset + r`. Outputs are returned in replicate
/// order and do not depend on the size of the worker pool.
pub fn run<O, F>(design: &Design<'_>, config: &SimulationConfig, n_replicates: usize, make: F) -> Result<Vec<O::Output>>
where
    O: Observer,
    O::Output: Send,
    F: Fn(usize) -> O + Sync,
{
    config.validate()?;
    let (d, m) = design.validate()?;
    let grid = TimeGrid::new(config.dt, config.horizon);
    let n_chunks = n_replicates.div_ceil(CHUNK);
    let chunks: Vec<Vec<O::Output>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_replicates);
            let mut ws = Workspace {
                b: vec![0.0; d],
                s: vec![0.0; d * m],
                next: vec![0.0; d],
                rhs: vec![0.0; d],
                delta: vec![0.0; d],
                solver: ImplicitSolver::new(d),
            };
            let k = design.members.len();
            let mut states = vec![0.0; k * d];
            let mut disp = vec![0.0; k * d];
            let mut status = vec![MemberStatus::default(); k];
            let mut dw = vec![0.0; m];
            (lo..hi)
                .map(|r| {
                    run_replicate(design, config, &grid, r, &mut ws, &mut states, &mut disp, &mut status, &mut dw, make(r))
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

#[allow(clippy::too_many_arguments)]
fn run_replicate<O: Observer>(
    design: &Design<'_>,
    config: &SimulationConfig,
    grid: &TimeGrid,
    r: usize,
    ws: &mut Workspace,
    states: &mut [f64],
    disp: &mut [f64],
    status: &mut [MemberStatus],
    dw: &mut [f64],
    mut obs: O,
) -> O::Output {
    let d = design.fields[0].dim();
    let mut noise = NoiseStream::new(config.seed, config.stream_offset + r as u64);
    for (i, mem) in design.members.iter().enumerate() {
        states[i * d..(i + 1) * d].copy_from_slice(&mem.start);
        disp[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        status[i] = MemberStatus::default();
    }
    dw.iter_mut().for_each(|v| *v = 0.0);
    let starts = &design.members[..];
    obs.observe(&StepView { step: 0, t: 0.0, dt_prev: 0.0, dw, dim: d, states, disp, starts, status });
    let times = grid.times();
    for k in 0..grid.n_steps() {
        let (t0, t1) = (times[k], times[k + 1]);
        noise.increment(t1 - t0, config.noise_substeps, dw);
        for (i, mem) in design.members.iter().enumerate() {
            if status[i].stopped() {
                continue;
            }
            let field = design.fields[mem.field];
            let x = &states[i * d..(i + 1) * d];
            let ok = step_member(field, mem, config.scheme, t0, t1, dw, x, ws);
            if !ok {
                status[i].failed_at = Some(k + 1);
                continue;
            }
            let mut r2 = 0.0;
            let mut finite = true;
            for j in 0..d {
                let dj = disp[i * d + j] + ws.delta[j];
                let xj = mem.start[j] + dj;
                finite &= xj.is_finite();
                ws.next[j] = dj;
                ws.rhs[j] = xj;
                r2 += xj * xj;
            }
            if !finite {
                status[i].exploded_at = Some(k + 1);
                continue;
            }
            disp[i * d..(i + 1) * d].copy_from_slice(&ws.next);
            states[i * d..(i + 1) * d].copy_from_slice(&ws.rhs);
            if r2.sqrt() > config.explosion_cap {
                status[i].exploded_at = Some(k + 1);
            }
        }
        obs.observe(&StepView { step: k + 1, t: t1, dt_prev: t1 - t0, dw, dim: d, states, disp, starts, status });
    }
    obs.finish()
}
