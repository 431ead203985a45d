use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::hierarchy::PairCounts;
use crate::model::{Gate, HeadKind, HipanModel};

/// A (record, digit position) pair contributing one head loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Item {
    pub record: u32,
    pub k: u32,
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Weighted cross-entropy of the two-way softmax over logits
/// `g = -tau (v - t)^2` (good class) and `o = -tau (v - c)^2`.
pub fn two_logit_loss(v: f64, t: u32, c: u32, tau: f64, weight: f64) -> f64 {
    weight * softplus(two_logit_margin(v, t, c, tau))
}

/// `o - g`.
#[inline]
fn two_logit_margin(v: f64, t: u32, c: u32, tau: f64) -> f64 {
    let dt = v - t as f64;
    let dc = v - c as f64;
    tau * (dt * dt - dc * dc)
}

/// Exact derivative of [`two_logit_loss`] with respect to `v`.
pub fn two_logit_loss_dv(v: f64, t: u32, c: u32, tau: f64, weight: f64) -> f64 {
    weight * sigmoid(two_logit_margin(v, t, c, tau)) * 2.0 * tau * (c as f64 - t as f64)
}

/// Anchor gradient `2 tau (v - psi) [sigma((v - psi)^2 / tau) - I_correct]`.
pub fn two_logit_grad(v: f64, psi: u32, tau: f64, correct: bool) -> f64 {
    let d = v - psi as f64;
    let z = d * d / tau;
    // sigma(z) - 1 = -sigma(-z), without the cancellation.
    let s = if correct { -sigmoid(-z) } else { sigmoid(z) };
    2.0 * tau * d * s
}

/// The loss whose derivative is [`two_logit_grad`]:
/// `tau^2 [softplus(z) - I_correct z]` with `z = (v - psi)^2 / tau`.
pub fn anchor_surrogate_loss(v: f64, psi: u32, tau: f64, correct: bool) -> f64 {
    let d = v - psi as f64;
    let z = d * d / tau;
    let s = if correct { softplus(-z) } else { softplus(z) };
    tau * tau * s
}

/// Round half away from zero, then reduce into `[0, p - 1]`.
pub fn project_digit(v: f64, p: u32) -> u32 {
    let r = libm::round(v);
    let m = libm::fmod(r, p as f64);
    let m = if m < 0.0 { m + p as f64 } else { m };
    // `m` is an exact small integer here; -0.0 maps to 0.
    (m as u32) % p
}

/// Distance from `v` to the nearest real congruent to `digit` mod `p`.
pub fn wrap_distance(digit: u32, v: f64, p: u32) -> f64 {
    let p = p as f64;
    let d = v - digit as f64;
    libm::fabs(d - p * libm::round(d / p))
}

/// Per-depth `1/sqrt(count)` table; pairs never seen get weight 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HuffmanWeights {
    tables: Vec<BTreeMap<(u32, u32), f64>>,
}

impl HuffmanWeights {
    pub fn from_counts(pair_counts: &[PairCounts]) -> Self {
        let tables = pair_counts
            .iter()
            .enumerate()
            .map(|(k, counts)| {
                if k < 2 {
                    return BTreeMap::new();
                }
                counts
                    .iter()
                    .filter(|(_, &n)| n > 0)
                    .map(|(&pair, &n)| (pair, 1.0 / libm::sqrt(n as f64)))
                    .collect()
            })
            .collect();
        Self { tables }
    }

    pub fn weight(&self, k: usize, parent: u32, child: u32) -> f64 {
        self.tables
            .get(k)
            .and_then(|t| t.get(&(parent, child)))
            .copied()
            .unwrap_or(1.0)
    }

    /// Weight for digit `k` of a code.
    pub fn for_code(&self, digits: &[u32], k: usize) -> f64 {
        if k < 2 {
            1.0
        } else {
            self.weight(k, digits[k - 1], digits[k])
        }
    }
}

/// Teacher-forced loss of digit `k` of `digits`, weighted by `weight`.
///
/// Two-logit heads add one [`two_logit_loss`] term per competing digit.
///
/// When `grad` is given, `scale` times the gradient with respect to the
/// head's latents is added into it. `scratch` must hold at least `p` entries.
pub fn head_loss_and_grad(
    model: &HipanModel,
    digits: &[u32],
    k: usize,
    weight: f64,
    grad: Option<(&mut [f64], f64)>,
    scratch: &mut [f64],
) -> f64 {
    let head = model.head_for_digit(k);
    let p = model.p() as usize;
    let leak = model.config().leak;
    let t = digits[k];
    let row = if k == 0 { 0 } else { digits[k - 1] };
    let gate = Gate::Inside(t);
    let gated = &mut scratch[..p];
    model.gated_row(head, row, gate, gated);
    let base = model.entry_index(head, row, 0);

    match model.head_kind(head) {
        HeadKind::DenseMse => {
            let mut loss = 0.0;
            for (j, &o) in gated.iter().enumerate() {
                let y = if j as u32 == t { 1.0 } else { 0.0 };
                loss += (o - y) * (o - y);
            }
            let loss = weight * loss / p as f64;
            if let Some((g, scale)) = grad {
                for (j, &o) in gated.iter().enumerate() {
                    let y = if j as u32 == t { 1.0 } else { 0.0 };
                    g[base + j] +=
                        scale * weight * 2.0 * (o - y) / p as f64 * gate.factor(j as u32, leak);
                }
            }
            loss
        }
        kind => {
            let max = gated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &o in gated.iter() {
                z += libm::exp(o - max);
            }
            let lse = max + libm::log(z);
            let mut loss = weight * (lse - gated[t as usize]);
            let mut anchor_term = None;
            if kind == HeadKind::TwoLogit {
                let tau = model.config().temperature;
                let v = model.anchor(head, t);
                let mut dv = 0.0;
                for c in (0..p as u32).filter(|&c| c != t) {
                    loss += two_logit_loss(v, t, c, tau, weight);
                    dv += two_logit_loss_dv(v, t, c, tau, weight);
                }
                anchor_term = Some(dv);
            }
            if let Some((g, scale)) = grad {
                for (j, &o) in gated.iter().enumerate() {
                    let s = libm::exp(o - lse);
                    let y = if j as u32 == t { 1.0 } else { 0.0 };
                    g[base + j] += scale * weight * (s - y) * gate.factor(j as u32, leak);
                }
                if let Some(dv) = anchor_term {
                    g[model.anchor_index(head, t)] += scale * dv;
                }
            }
            loss
        }
    }
}

/// Loss of one item without gradient.
pub fn item_loss(model: &HipanModel, digits: &[u32], k: usize, weight: f64) -> f64 {
    let mut scratch = vec![0.0; model.p() as usize];
    head_loss_and_grad(model, digits, k, weight, None, &mut scratch)
}
