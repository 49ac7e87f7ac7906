//! Reusable observers.

use super::engine::{Observer, StepView};

/// States of selected members at selected grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub dim: usize,
    pub members: usize,
    /// `[index][member][coordinate]`, flattened.
    pub values: Vec<f64>,
    /// `[index][member]`: stopped at or before that index.
    pub stopped: Vec<bool>,
}

impl Snapshots {
    pub fn state(&self, idx: usize, member: usize) -> &[f64] {
        let o = (idx * self.members + member) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn is_stopped(&self, idx: usize, member: usize) -> bool {
        self.stopped[idx * self.members + member]
    }
}

/// Records members `members` at the (ascending) grid `indices`.
pub struct SnapshotObserver {
    indices: Vec<usize>,
    members: Vec<usize>,
    next: usize,
    out: Snapshots,
}

impl SnapshotObserver {
    pub fn new(indices: Vec<usize>, members: Vec<usize>, dim: usize) -> Self {
        let cap = indices.len() * members.len();
        Self {
            out: Snapshots {
                dim,
                members: members.len(),
                values: Vec::with_capacity(cap * dim),
                stopped: Vec::with_capacity(cap),
            },
            indices,
            members,
            next: 0,
        }
    }
}

impl Observer for SnapshotObserver {
    type Output = Snapshots;

    fn observe(&mut self, v: &StepView<'_>) {
        while self.next < self.indices.len() && self.indices[self.next] == v.step {
            for &m in &self.members {
                self.out.values.extend_from_slice(v.state(m));
                self.out.stopped.push(v.status(m).stopped());
            }
            self.next += 1;
        }
    }

    fn finish(self) -> Snapshots {
        self.out
    }
}
