use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Uniform lattice `origin + spacing·k`, `k ∈ ∏[0, shape_i)`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub shape: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: Vec<f64>, spacing: f64, shape: Vec<usize>) -> Result<Self> {
        if origin.len() != shape.len() || shape.is_empty() {
            return Err(FlowError::InvalidArgument("lattice origin and shape disagree".into()));
        }
        if !(spacing > 0.0) || shape.contains(&0) {
            return Err(FlowError::InvalidArgument("lattice needs positive spacing and extent".into()));
        }
        Ok(Self { origin, spacing, shape })
    }

    /// `n` nodes spanning `[lo, hi]` in one dimension.
    pub fn interval(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(FlowError::InvalidArgument("need at least 2 nodes".into()));
        }
        Self::new(vec![lo], (hi - lo) / (n - 1) as f64, vec![n])
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut idx = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = rem % self.shape[i];
            rem /= self.shape[i];
        }
        idx
    }

    fn flat(&self, idx: &[i64]) -> Option<usize> {
        let mut f = 0usize;
        for (i, &k) in idx.iter().enumerate() {
            if k < 0 || k as usize >= self.shape[i] {
                return None;
            }
            f = f * self.shape[i] + k as usize;
        }
        Some(f)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .iter()
            .zip(&self.origin)
            .map(|(&k, o)| o + self.spacing * k as f64)
            .collect()
    }
}

/// Integer offsets with `|k| ≤ kmax`, sorted by squared length.
fn offsets(d: usize, kmax: i64) -> Vec<(i64, Vec<i64>)> {
    let side = (2 * kmax + 1) as usize;
    let mut out = Vec::new();
    for flat in 0..side.pow(d as u32) {
        let mut rem = flat;
        let v: Vec<i64> = (0..d)
            .map(|_| {
                let c = (rem % side) as i64 - kmax;
                rem /= side;
                c
            })
            .collect();
        let r2: i64 = v.iter().map(|c| c * c).sum();
        if r2 <= kmax * kmax {
            out.push((r2, v));
        }
    }
    out.sort_by_key(|(r2, _)| *r2);
    out
}

/// Discrete local maximal function: the largest average of `|g|` over the
/// lattice balls of radius `s ∈ {0, h, 2h, …} ∩ [0, R]` around each node,
/// restricted to in-domain nodes. The radius-0 ball is the node itself.
pub fn maximal_function(lattice: &Lattice, values: &[f64], radius: f64) -> Result<Vec<f64>> {
    if values.len() != lattice.len() {
        return Err(FlowError::InvalidArgument("values do not match the lattice".into()));
    }
    if radius < lattice.spacing * (1.0 - 1e-12) {
        return Err(FlowError::InvalidArgument("radius below the lattice spacing".into()));
    }
    let kmax = (radius / lattice.spacing + 1e-9).floor() as i64;
    let offs = offsets(lattice.dim(), kmax);
    Ok((0..lattice.len())
        .map(|node| {
            let base: Vec<i64> = lattice.index(node).iter().map(|&k| k as i64).collect();
            let mut best = 0.0f64;
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut i = 0;
            // Walk radius shells k = 0..kmax; a shell closes once offsets
            // exceed k² in squared length.
            for k in 0..=kmax {
                while i < offs.len() && offs[i].0 <= k * k {
                    let idx: Vec<i64> = base.iter().zip(&offs[i].1).map(|(a, b)| a + b).collect();
                    if let Some(f) = lattice.flat(&idx) {
                        sum += values[f].abs();
                        count += 1;
                    }
                    i += 1;
                }
                best = best.max(sum / count as f64);
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalInequalityReport {
    pub radius: f64,
    pub pairs_checked: usize,
    /// Largest `|f(x)−f(y)| − 2^d|x−y|(M|∇f|(x)+M|∇f|(y))`.
    pub worst_excess: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub pass: bool,
}

/// Checks `|f(x)−f(y)| ≤ 2^d|x−y|(M_R|∇f|(x) + M_R|∇f|(y))` on every pair
/// of lattice nodes with `|x−y| ≤ R`; `grad_norm` holds `|∇f|` per node.
pub fn maximal_inequality_check(
    lattice: &Lattice,
    f: &[f64],
    grad_norm: &[f64],
    radius: f64,
) -> Result<MaximalInequalityReport> {
    if f.len() != lattice.len() {
        return Err(FlowError::InvalidArgument("values do not match the lattice".into()));
    }
    let m = maximal_function(lattice, grad_norm, radius)?;
    let pts: Vec<Vec<f64>> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
    let c = 2f64.powi(lattice.dim() as i32);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_pair = None;
    let mut checked = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let dist = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist > radius * (1.0 + 1e-12) {
                continue;
            }
            checked += 1;
            let excess = (f[i] - f[j]).abs() - c * dist * (m[i] + m[j]);
            if excess > worst {
                worst = excess;
                worst_pair = Some((i, j));
            }
        }
    }
    Ok(MaximalInequalityReport {
        radius,
        pairs_checked: checked,
        worst_excess: worst,
        worst_pair,
        pass: worst <= 1e-12,
    })
}
