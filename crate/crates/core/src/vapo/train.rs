use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hierarchy::{EncodedDataset, TreeSpec};
use crate::metrics::accuracy_report;
use crate::model::HipanModel;
use crate::rng;

use super::adam::{adam_step, AdamMoments};
use super::gist::gist_sweep;
use super::loss::{head_loss_and_grad, project_digit, HuffmanWeights};
use super::{Optimizer, TrainPlan};

/// Per-digit record orders for one epoch, cut into minibatches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    perms: Vec<Vec<u32>>,
    batch_size: usize,
}

impl BatchSchedule {
    /// Independent permutation per digit position, drawn from the shuffle
    /// stream of `epoch`.
    pub fn shuffled(n: usize, k_len: usize, batch_size: usize, seed: u64, epoch: u64) -> Self {
        let mut rng = rng::stream(seed, rng::SHUFFLE, epoch);
        let perms = (0..k_len)
            .map(|_| {
                let mut v: Vec<u32> = (0..n as u32).collect();
                v.shuffle(&mut rng);
                v
            })
            .collect();
        Self {
            perms,
            batch_size: batch_size.max(1),
        }
    }

    /// Records in dataset order, one batch holding everything.
    pub fn full(n: usize, k_len: usize) -> Self {
        Self {
            perms: vec![(0..n as u32).collect(); k_len],
            batch_size: n.max(1),
        }
    }

    pub fn num_batches(&self) -> usize {
        let n = self.perms.first().map_or(0, Vec::len);
        n.div_ceil(self.batch_size)
    }

    pub fn batch(&self, k: usize, b: usize) -> &[u32] {
        let perm = &self.perms[k];
        let lo = (b * self.batch_size).min(perm.len());
        let hi = (lo + self.batch_size).min(perm.len());
        &perm[lo..hi]
    }

    pub fn batch_len(&self, b: usize) -> usize {
        self.perms.first().map_or(0, |_| self.batch(0, b).len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimState {
    Gist { last_improved: Vec<u64> },
    Adam(AdamMoments),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainerCursor {
    pub phase: usize,
    pub epoch_in_phase: usize,
    pub global_epoch: usize,
    pub stale_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub cursor: TrainerCursor,
    pub optim: OptimState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    /// 1-based epoch count over the whole plan.
    pub epoch: usize,
    pub loss: f64,
    pub per_digit_acc: Vec<f64>,
    pub leaf_acc: f64,
    pub root_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accepted_moves: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evaluations: Option<u64>,
}

/// Resumable curriculum runner.
pub struct Trainer<'a> {
    model: HipanModel,
    tree: &'a TreeSpec,
    data: &'a EncodedDataset,
    plan: TrainPlan,
    optimizer: Optimizer,
    state: TrainerState,
    weights: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: HipanModel,
        tree: &'a TreeSpec,
        data: &'a EncodedDataset,
        plan: TrainPlan,
        optimizer: Optimizer,
    ) -> Result<Self> {
        let mut model = model;
        let n = model.params().len();
        if let Optimizer::Gist(_) = optimizer {
            // GIST works on digit-valued coefficients.
            let p = model.p();
            for v in model.params_mut() {
                *v = project_digit(*v, p) as f64;
            }
        }
        let optim = match optimizer {
            Optimizer::Gist(_) => OptimState::Gist {
                last_improved: vec![0; n],
            },
            Optimizer::Adam(_) => OptimState::Adam(AdamMoments::zeros(n)),
        };
        let state = TrainerState {
            cursor: TrainerCursor::default(),
            optim,
        };
        Self::resume(model, tree, data, plan, optimizer, state)
    }

    pub fn resume(
        model: HipanModel,
        tree: &'a TreeSpec,
        data: &'a EncodedDataset,
        plan: TrainPlan,
        optimizer: Optimizer,
        state: TrainerState,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(domain("cannot train on an empty dataset"));
        }
        if data.codec != model.config().codec {
            return Err(domain("model and dataset codecs differ"));
        }
        optimizer.validate()?;
        plan.validate()?;
        let n = model.params().len();
        let ok = match (&optimizer, &state.optim) {
            (Optimizer::Gist(_), OptimState::Gist { last_improved }) => last_improved.len() == n,
            (Optimizer::Adam(_), OptimState::Adam(m)) => {
                m.len() == n && m.u.len() == n && m.t.len() == n
            }
            _ => false,
        };
        if !ok {
            return Err(domain(
                "optimizer state does not match the optimizer or model",
            ));
        }
        let hw = HuffmanWeights::from_counts(&data.pair_counts);
        let k_len = model.k();
        let mut weights = Vec::with_capacity(data.len() * k_len);
        for r in &data.records {
            for k in 0..k_len {
                weights.push(hw.for_code(r.code.digits(), k));
            }
        }
        let mut t = Self {
            model,
            tree,
            data,
            plan,
            optimizer,
            state,
            weights,
        };
        t.normalize();
        Ok(t)
    }

    pub fn model(&self) -> &HipanModel {
        &self.model
    }

    pub fn into_model(self) -> HipanModel {
        self.model
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn is_finished(&self) -> bool {
        self.state.cursor.phase >= self.plan.phases.len()
    }

    /// True when the epoch just completed falls on the checkpoint interval.
    pub fn checkpoint_due(&self) -> bool {
        let every = self.plan.checkpoint_every;
        let e = self.state.cursor.global_epoch;
        every > 0 && e > 0 && e.is_multiple_of(every)
    }

    /// Skips finished, early-stopped and empty phases.
    fn normalize(&mut self) {
        let k_len = self.model.k();
        let patience = match self.optimizer {
            Optimizer::Gist(g) => Some(g.patience),
            Optimizer::Adam(_) => None,
        };
        while let Some(ph) = self.plan.phases.get(self.state.cursor.phase) {
            let c = &self.state.cursor;
            let done = c.epoch_in_phase >= ph.epochs
                || ph.digits.positions(k_len).is_empty()
                || patience.is_some_and(|p| c.stale_sweeps >= p);
            if !done {
                break;
            }
            let c = &mut self.state.cursor;
            c.phase += 1;
            c.epoch_in_phase = 0;
            c.stale_sweeps = 0;
        }
    }

    /// Runs one epoch; `None` once the plan is exhausted.
    pub fn step_epoch(&mut self) -> Result<Option<EpochRecord>> {
        self.normalize();
        if self.is_finished() {
            return Ok(None);
        }
        let phase = self.plan.phases[self.state.cursor.phase].clone();
        let k_len = self.model.k();
        let active = phase.digits.positions(k_len);
        let epoch = self.state.cursor.global_epoch as u64;
        let schedule = BatchSchedule::shuffled(
            self.data.len(),
            k_len,
            self.plan.batch_size,
            self.plan.seed,
            epoch,
        );
        let (loss, accepted, evaluations) = match (&self.optimizer, &mut self.state.optim) {
            (Optimizer::Gist(_), OptimState::Gist { last_improved }) => {
                let out = gist_sweep(
                    &mut self.model,
                    self.data,
                    &self.weights,
                    &active,
                    &schedule,
                    last_improved,
                    epoch + 1,
                )?;
                (out.loss, Some(out.accepted), Some(out.evaluations))
            }
            (Optimizer::Adam(cfg), OptimState::Adam(moments)) => {
                let loss = adam_epoch(
                    &mut self.model,
                    self.data,
                    &self.weights,
                    &active,
                    &schedule,
                    moments,
                    cfg,
                    phase.lr,
                )?;
                (loss, None, None)
            }
            _ => return Err(domain("optimizer state does not match the optimizer")),
        };
        let acc = accuracy_report(&self.model, self.data, self.tree)?;
        let c = &mut self.state.cursor;
        c.epoch_in_phase += 1;
        c.global_epoch += 1;
        match accepted {
            Some(0) => c.stale_sweeps += 1,
            Some(_) => c.stale_sweeps = 0,
            None => {}
        }
        let record = EpochRecord {
            phase: phase.name,
            epoch: c.global_epoch,
            loss,
            per_digit_acc: acc.per_digit_acc,
            leaf_acc: acc.leaf_acc,
            root_acc: acc.root_acc,
            accepted_moves: accepted,
            evaluations,
        };
        self.normalize();
        Ok(Some(record))
    }

    /// Runs to the end of the plan.
    pub fn run(&mut self) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while let Some(r) = self.step_epoch()? {
            log.push(r);
        }
        Ok(log)
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_epoch(
    model: &mut HipanModel,
    data: &EncodedDataset,
    weights: &[f64],
    active: &[usize],
    schedule: &BatchSchedule,
    moments: &mut AdamMoments,
    cfg: &super::AdamConfig,
    lr: f64,
) -> Result<f64> {
    let p = model.p() as usize;
    let k_len = model.k();
    let mut heads: Vec<usize> = active.iter().map(|&k| model.head_for_digit(k)).collect();
    heads.dedup();
    let mut grad = vec![0.0; model.params().len()];
    let mut scratch = vec![0.0; p];
    let batches = schedule.num_batches();
    let mut total = 0.0;
    for b in 0..batches {
        let n = schedule.batch_len(b).max(1) as f64;
        for &h in &heads {
            grad[model.head_range(h)].iter_mut().for_each(|g| *g = 0.0);
        }
        let mut batch_loss = 0.0;
        for &k in active {
            for &r in schedule.batch(k, b) {
                let digits = data.records[r as usize].code.digits();
                let w = weights[r as usize * k_len + k];
                let l = head_loss_and_grad(
                    model,
                    digits,
                    k,
                    w,
                    Some((&mut grad, 1.0 / n)),
                    &mut scratch,
                );
                if !l.is_finite() {
                    let head = model.head_for_digit(k);
                    return Err(Error::NumericAbort {
                        head: alloc::format!("{} head {head}", model.head_kind(head).name()),
                        coord: model.entry_index(
                            head,
                            if k == 0 { 0 } else { digits[k - 1] },
                            digits[k],
                        ),
                    });
                }
                batch_loss += l;
            }
        }
        total += batch_loss / n;
        for &h in &heads {
            for i in model.head_range(h) {
                let v = adam_step(model.params()[i], grad[i], moments, i, cfg, lr);
                if !v.is_finite() {
                    return Err(Error::NumericAbort {
                        head: alloc::format!("{} head {h}", model.head_kind(h).name()),
                        coord: i,
                    });
                }
                model.params_mut()[i] = v;
            }
        }
    }
    Ok(if batches > 0 {
        total / batches as f64
    } else {
        0.0
    })
}
