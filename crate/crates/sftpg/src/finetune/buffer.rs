//! Trajectory replay buffer for the fine-tuning loop.

use rand::Rng;

use crate::diffusion::Trajectory;
use crate::error::{Error, Result};
use crate::gradients::{tuples_from_trajectory, PgSample};

/// Pool of transition tuples the generator phase draws from.
///
/// The outer loop clears it at the start of every iteration, so its contents
/// are always tuples sampled under the current (or at most one-phase-old)
/// generator. Unbounded within an iteration.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    entries: Vec<PgSample>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        ReplayBuffer::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends all `T` transition tuples of one chain.
    pub fn push_trajectory(&mut self, traj: &Trajectory) {
        self.entries.extend(tuples_from_trajectory(traj));
    }

    /// Draws `m` tuples uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<PgSample>> {
        if self.entries.is_empty() {
            return Err(Error::invalid_state("sampling from an empty replay buffer"));
        }
        Ok((0..m)
            .map(|_| self.entries[rng.random_range(0..self.entries.len())].clone())
            .collect())
    }
}
