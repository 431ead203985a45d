use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hierarchy::EncodedDataset;
use crate::model::{HeadKind, HipanModel};

use super::loss::{head_loss_and_grad, Item};
use super::train::BatchSchedule;

/// A loss over latent coordinates that live on a cycle of length `modulus`.
pub trait CoordinateObjective {
    fn modulus(&self) -> u32;
    fn get(&self, coord: usize) -> f64;
    fn set(&mut self, coord: usize, value: f64);
    /// Every loss term that depends on `coord`; other terms may be omitted.
    fn local_loss(&mut self, coord: usize) -> f64;
    fn describe(&self, _coord: usize) -> String {
        String::from("objective")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub evaluations: u64,
}

fn checked<O: CoordinateObjective + ?Sized>(obj: &mut O, coord: usize) -> Result<f64> {
    let l = obj.local_loss(coord);
    if l.is_nan() {
        return Err(Error::NumericAbort {
            head: obj.describe(coord),
            coord,
        });
    }
    Ok(l)
}

/// Greedy `+-1` move on one coordinate; keeps the strict best of the three
/// values (current, `v - 1`, `v + 1`, all mod `modulus`).
pub fn gist_step<O: CoordinateObjective + ?Sized>(
    obj: &mut O,
    coord: usize,
) -> Result<StepOutcome> {
    let p = obj.modulus() as f64;
    let start = obj.get(coord);
    let mut best_v = start;
    let mut best_l = checked(obj, coord)?;
    let mut evaluations = 1;
    let deltas: &[f64] = if obj.modulus() == 2 {
        &[-1.0]
    } else {
        &[-1.0, 1.0]
    };
    for &delta in deltas {
        let cand = (start + delta).rem_euclid(p);
        obj.set(coord, cand);
        let l = checked(obj, coord)?;
        evaluations += 1;
        if l < best_l {
            best_l = l;
            best_v = cand;
        }
    }
    obj.set(coord, best_v);
    Ok(StepOutcome {
        accepted: best_v != start,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepOutcome {
    pub accepted: u64,
    pub evaluations: u64,
    /// Mean per-batch loss after the batch's moves.
    pub loss: f64,
}

/// Items of one head in one batch, grouped for local evaluation.
struct HeadBatch {
    by_row: Vec<Item>,
    row_start: Vec<usize>,
    by_child: Vec<Item>,
    child_start: Vec<usize>,
}

impl HeadBatch {
    fn new(mut items: Vec<Item>, data: &EncodedDataset, p: usize) -> Self {
        let digit = |it: &Item, off: usize| {
            let k = it.k as usize;
            if k < off {
                0
            } else {
                data.records[it.record as usize].code.digits()[k - off] as usize
            }
        };
        let group = |items: &mut Vec<Item>, off: usize| {
            items.sort_by_key(|it| (digit(it, off), *it));
            let mut start = vec![0; p + 1];
            for it in items.iter() {
                start[digit(it, off) + 1] += 1;
            }
            for j in 0..p {
                start[j + 1] += start[j];
            }
            start
        };
        let row_start = group(&mut items, 1);
        let by_row = items.clone();
        let child_start = group(&mut items, 0);
        Self {
            by_row,
            row_start,
            by_child: items,
            child_start,
        }
    }
}

enum Selection {
    Row(usize),
    Child(usize),
}

struct ModelObjective<'a> {
    model: &'a mut HipanModel,
    data: &'a EncodedDataset,
    weights: &'a [f64],
    batch: &'a HeadBatch,
    head: usize,
    selection: Selection,
    scratch: Vec<f64>,
}

impl CoordinateObjective for ModelObjective<'_> {
    fn modulus(&self) -> u32 {
        self.model.p()
    }

    fn get(&self, coord: usize) -> f64 {
        self.model.params()[coord]
    }

    fn set(&mut self, coord: usize, value: f64) {
        self.model.params_mut()[coord] = value;
    }

    fn local_loss(&mut self, _coord: usize) -> f64 {
        let b = self.batch;
        let items = match self.selection {
            Selection::Row(r) => &b.by_row[b.row_start[r]..b.row_start[r + 1]],
            Selection::Child(j) => &b.by_child[b.child_start[j]..b.child_start[j + 1]],
        };
        let k_len = self.model.k();
        let mut total = 0.0;
        for it in items {
            let digits = self.data.records[it.record as usize].code.digits();
            let w = self.weights[it.record as usize * k_len + it.k as usize];
            total += head_loss_and_grad(
                self.model,
                digits,
                it.k as usize,
                w,
                None,
                &mut self.scratch,
            );
        }
        total
    }

    fn describe(&self, _coord: usize) -> String {
        alloc::format!(
            "{} head {}",
            self.model.head_kind(self.head).name(),
            self.head
        )
    }
}

/// One GIST epoch: every minibatch, every active head, every coordinate.
///
/// Coordinates are visited head by head from the root, then by row, then by
/// column, then the anchors. `weights` holds one Huffman weight per
/// `(record, digit)`; `last_improved[coord]` is set to `sweep` whenever the
/// coordinate moves.
pub fn gist_sweep(
    model: &mut HipanModel,
    data: &EncodedDataset,
    weights: &[f64],
    active: &[usize],
    schedule: &BatchSchedule,
    last_improved: &mut [u64],
    sweep: u64,
) -> Result<SweepOutcome> {
    let p = model.p() as usize;
    let k_len = model.k();
    let mut out = SweepOutcome::default();
    let mut heads: Vec<usize> = active.iter().map(|&k| model.head_for_digit(k)).collect();
    heads.dedup();
    let batches = schedule.num_batches();
    let mut scratch = vec![0.0; p];
    for b in 0..batches {
        let mut batch_loss = 0.0;
        for &head in &heads {
            let mut items = Vec::new();
            for &k in active.iter().filter(|&&k| model.head_for_digit(k) == head) {
                items.extend(schedule.batch(k, b).iter().map(|&r| Item {
                    record: r,
                    k: k as u32,
                }));
            }
            let hb = HeadBatch::new(items, data, p);
            let kind = model.head_kind(head);
            let rows = if kind == HeadKind::Root { 1 } else { p };
            let mut coords: Vec<(usize, Selection)> = Vec::new();
            for r in 0..rows {
                for j in 0..p {
                    coords.push((
                        model.entry_index(head, r as u32, j as u32),
                        Selection::Row(r),
                    ));
                }
            }
            if kind == HeadKind::TwoLogit {
                for j in 0..p {
                    coords.push((model.anchor_index(head, j as u32), Selection::Child(j)));
                }
            }
            let mut obj = ModelObjective {
                model: &mut *model,
                data,
                weights,
                batch: &hb,
                head,
                selection: Selection::Row(0),
                scratch: vec![0.0; p],
            };
            for (coord, sel) in coords {
                obj.selection = sel;
                let step = gist_step(&mut obj, coord)?;
                out.evaluations += step.evaluations;
                if step.accepted {
                    out.accepted += 1;
                    last_improved[coord] = sweep;
                }
            }
            for it in &hb.by_row {
                let digits = data.records[it.record as usize].code.digits();
                let w = weights[it.record as usize * k_len + it.k as usize];
                batch_loss +=
                    head_loss_and_grad(model, digits, it.k as usize, w, None, &mut scratch);
            }
        }
        let n = schedule.batch_len(b).max(1);
        out.loss += batch_loss / n as f64;
    }
    if batches > 0 {
        out.loss /= batches as f64;
    }
    if out.loss.is_nan() {
        return Err(Error::NumericAbort {
            head: "batch".into(),
            coord: 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Table {
        p: u32,
        digits: Vec<f64>,
        loss: fn(&[f64]) -> f64,
    }

    impl CoordinateObjective for Table {
        fn modulus(&self) -> u32 {
            self.p
        }
        fn get(&self, c: usize) -> f64 {
            self.digits[c]
        }
        fn set(&mut self, c: usize, v: f64) {
            self.digits[c] = v;
        }
        fn local_loss(&mut self, _: usize) -> f64 {
            (self.loss)(&self.digits)
        }
    }

    #[test]
    fn root_example_moves_down_and_wraps() {
        let mut t = Table {
            p: 3,
            digits: vec![0.0],
            loss: |d| if d[0] == 2.0 { 0.0 } else { 1.0 },
        };
        let s = gist_step(&mut t, 0).unwrap();
        assert!(s.accepted);
        assert_eq!(s.evaluations, 3);
        assert_eq!(t.digits[0], 2.0);
        let s = gist_step(&mut t, 0).unwrap();
        assert!(!s.accepted);
    }

    #[test]
    fn binary_digits_skip_duplicate_candidate() {
        let mut t = Table {
            p: 2,
            digits: vec![0.0],
            loss: |d| d[0],
        };
        let s = gist_step(&mut t, 0).unwrap();
        assert_eq!(s.evaluations, 2);
        assert!(!s.accepted);
    }

    #[test]
    fn ties_are_not_accepted() {
        let mut t = Table {
            p: 5,
            digits: vec![1.0],
            loss: |_| 0.5,
        };
        assert!(!gist_step(&mut t, 0).unwrap().accepted);
        assert_eq!(t.digits[0], 1.0);
    }

    #[test]
    fn nan_loss_aborts() {
        let mut t = Table {
            p: 5,
            digits: vec![1.0],
            loss: |d| if d[0] == 0.0 { f64::NAN } else { 1.0 },
        };
        assert!(matches!(
            gist_step(&mut t, 0),
            Err(Error::NumericAbort { coord: 0, .. })
        ));
    }
}
