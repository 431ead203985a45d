//! VAPO training: GIST coordinate search, projected Adam, the head losses and
//! the three-phase curriculum.

mod adam;
mod gist;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use gist::{gist_step, gist_sweep, CoordinateObjective, StepOutcome, SweepOutcome};
pub use loss::{
    anchor_surrogate_loss, head_loss_and_grad, item_loss, project_digit, softplus, two_logit_grad,
    two_logit_loss, two_logit_loss_dv, wrap_distance, HuffmanWeights, Item,
};
pub use train::{BatchSchedule, EpochRecord, OptimState, Trainer, TrainerCursor, TrainerState};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GistConfig {
    /// Consecutive sweeps without an accepted move before a phase ends.
    pub patience: usize,
}

impl Default for GistConfig {
    fn default() -> Self {
        Self { patience: 2 }
    }
}

impl GistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(domain("GIST patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Gist(GistConfig),
    Adam(AdamConfig),
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Gist(_) => "gist",
            Optimizer::Adam(_) => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Optimizer::Gist(g) => g.validate(),
            Optimizer::Adam(a) => a.validate(),
        }
    }
}

/// Inclusive range of digit positions; `last = None` runs to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitSet {
    pub first: usize,
    pub last: Option<usize>,
}

impl DigitSet {
    pub fn all() -> Self {
        Self {
            first: 0,
            last: None,
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.first && self.last.is_none_or(|l| k <= l)
    }

    /// Active positions below `k_len`.
    pub fn positions(&self, k_len: usize) -> Vec<usize> {
        (0..k_len).filter(|&k| self.contains(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub epochs: usize,
    pub lr: f64,
    pub digits: DigitSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub phases: Vec<Phase>,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    /// Seed for the per-epoch shuffles.
    pub seed: u64,
}

impl TrainPlan {
    /// Deep-head warm-up, root warm-up, fine-tune.
    pub fn standard(seed: u64) -> Self {
        Self::three_phase(seed, [8, 4, 100], [0.03, 0.03, 0.015])
    }

    /// 20/20/20 epochs at a flat learning rate of 1e-3.
    pub fn short(seed: u64) -> Self {
        Self::three_phase(seed, [20, 20, 20], [1e-3; 3])
    }

    fn three_phase(seed: u64, epochs: [usize; 3], lr: [f64; 3]) -> Self {
        let sets = [
            DigitSet {
                first: 2,
                last: None,
            },
            DigitSet {
                first: 0,
                last: Some(1),
            },
            DigitSet::all(),
        ];
        let names = ["deep-warmup", "root-warmup", "fine-tune"];
        let phases = (0..3)
            .map(|i| Phase {
                name: names[i].into(),
                epochs: epochs[i],
                lr: lr[i],
                digits: sets[i],
            })
            .collect();
        Self {
            phases,
            checkpoint_every: 20,
            batch_size: 64,
            seed,
        }
    }

    /// Single phase over all digits.
    pub fn single(seed: u64, epochs: usize, lr: f64) -> Self {
        Self {
            phases: vec![Phase {
                name: "train".into(),
                epochs,
                lr,
                digits: DigitSet::all(),
            }],
            checkpoint_every: 20,
            batch_size: 64,
            seed,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Phases whose digits all lie beyond K are legal and get skipped.
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(domain("training plan has no phases"));
        }
        if self.batch_size == 0 {
            return Err(domain("batch size must be at least 1"));
        }
        for ph in &self.phases {
            if ph.digits.last.is_some_and(|l| l < ph.digits.first) {
                return Err(domain(alloc::format!(
                    "phase {:?} has an empty digit set",
                    ph.name
                )));
            }
            if !(ph.lr.is_finite() && ph.lr > 0.0) {
                return Err(domain(alloc::format!(
                    "phase {:?} learning rate must be positive",
                    ph.name
                )));
            }
        }
        Ok(())
    }
}

/// `1/sqrt(count)` for every observed (parent, child) pair at digits `k >= 2`.
pub fn huffman_weights(pair_counts: &[crate::hierarchy::PairCounts]) -> HuffmanWeights {
    HuffmanWeights::from_counts(pair_counts)
}
