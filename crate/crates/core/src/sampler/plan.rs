//! Timestep plans: the order in which diffusion times are visited while
//! optimizing.

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanKind {
    /// From `t = T` down to `t = 1` (the default; adds coarse structure first).
    Descending,
    Ascending,
    /// One uniform draw from `{1..T}` per step.
    Random,
    MinibatchRandom {
        batch: usize,
    },
    MinibatchDescending {
        batch: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    pub kind: PlanKind,
    pub steps: usize,
}

impl TimestepPlan {
    pub fn new(kind: PlanKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("plan needs steps >= 1".into()));
        }
        match kind {
            PlanKind::MinibatchRandom { batch } | PlanKind::MinibatchDescending { batch }
                if batch == 0 =>
            {
                Err(Error::InvalidParameter("batch must be >= 1".into()))
            }
            _ => Ok(Self { kind, steps }),
        }
    }

    pub fn descending(steps: usize) -> Self {
        Self::new(PlanKind::Descending, steps).expect("steps >= 1")
    }

    /// Timesteps visited at optimizer step `step` (0-based). Ordered plans are
    /// a pure function of `step`; random plans consume the run PRNG.
    pub(crate) fn draw<R: Rng + ?Sized>(
        &self,
        step: usize,
        t_max: usize,
        rng: &mut R,
    ) -> Vec<usize> {
        match self.kind {
            PlanKind::Descending => vec![spaced_timestep(step, self.steps, t_max, false)],
            PlanKind::Ascending => vec![spaced_timestep(step, self.steps, t_max, true)],
            PlanKind::Random => vec![rng.gen_range(1..=t_max)],
            PlanKind::MinibatchRandom { batch } => {
                (0..batch).map(|_| rng.gen_range(1..=t_max)).collect()
            }
            PlanKind::MinibatchDescending { batch } => {
                let total = self.steps * batch;
                (0..batch)
                    .map(|b| spaced_timestep(step * batch + b, total, t_max, false))
                    .collect()
            }
        }
    }
}

/// Uniformly spaced timesteps over `{1..t_max}`: index 0 maps to `t_max`
/// (descending) or 1 (ascending), the last index to the other end.
pub fn spaced_timestep(index: usize, total: usize, t_max: usize, ascending: bool) -> usize {
    debug_assert!(index < total);
    let t = if total == 1 {
        t_max as f64
    } else {
        t_max as f64 - (index as f64) * (t_max as f64 - 1.0) / (total as f64 - 1.0)
    };
    let t = (t.round() as usize).clamp(1, t_max);
    if ascending {
        t_max + 1 - t
    } else {
        t
    }
}

/// The full descending visit order for `steps` optimizer steps.
pub fn descending_timesteps(steps: usize, t_max: usize) -> Vec<usize> {
    (0..steps)
        .map(|i| spaced_timestep(i, steps, t_max, false))
        .collect()
}
