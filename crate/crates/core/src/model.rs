//! Digit-head model and the van der Put layer.
//!
//! The model owns one head per learnable digit position: a root head with `p`
//! scores, a dense head with a `p x p` table for digit 1, and two-logit heads
//! (`p x p` table plus `p` anchors) for the deeper digits. Digits beyond the
//! last head reuse it (weight tying).
//!
//! A head's raw row is gated by the leaky indicator of the input code: entry
//! `j` of the row belongs to the ball "current prefix, then `j`", and is kept
//! when the input lies in that ball and scaled by the leak `alpha` otherwise.
//! Without an input every entry is kept.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::hierarchy::{descend_clamped, EncodedDataset, NodeId, TreeSpec};
use crate::padic::{Ball, CodecParams, PadicCode};
use crate::rng;

pub const DEFAULT_LEAK: f64 = 0.01;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
/// Recommended leak range; values outside only produce a warning.
pub const LEAK_RANGE: (f64, f64) = (0.005, 0.02);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub codec: CodecParams,
    /// Number of conditional heads; the root head is always present.
    pub heads: usize,
    pub leak: f64,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(codec: CodecParams) -> Self {
        Self {
            codec,
            heads: default_heads(codec.k),
            leak: DEFAULT_LEAK,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn max_heads(k: usize) -> usize {
        default_heads(k)
    }

    /// Hard errors for invalid values; returned strings are soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let max = default_heads(self.codec.k);
        if self.heads == 0 || self.heads > max {
            return Err(domain(alloc::format!(
                "K_heads = {} outside 1..={max} for K = {}",
                self.heads,
                self.codec.k
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(domain("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err(domain("leak must lie in [0, 1)"));
        }
        let mut warnings = Vec::new();
        if self.leak < LEAK_RANGE.0 || self.leak > LEAK_RANGE.1 {
            warnings.push(alloc::format!(
                "leak {} outside the recommended range [{}, {}]",
                self.leak,
                LEAK_RANGE.0,
                LEAK_RANGE.1
            ));
        }
        Ok(warnings)
    }
}

fn default_heads(k: usize) -> usize {
    k.saturating_sub(1).max(1)
}

/// `p + p^2 + (K_heads - 1)(p^2 + p)`.
pub fn parameter_count(p: u32, heads: usize) -> u64 {
    let p = p as u64;
    p + p * p + (heads as u64 - 1) * (p * p + p)
}

/// Size of the full van der Put expansion, `(p^K - 1)/(p - 1)`.
pub fn vdp_bound(p: u32, k: usize) -> BigUint {
    let pb = BigUint::from(p);
    (pb.pow(k as u32) - 1u32) / (pb - 1u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Root,
    DenseMse,
    TwoLogit,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Root => "root",
            HeadKind::DenseMse => "dense-mse",
            HeadKind::TwoLogit => "two-logit",
        }
    }
}

/// How the input code gates a head's row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// No input: all entries pass.
    Open,
    /// Input lies under the current prefix with this digit next.
    Inside(u32),
    /// Input left the predicted prefix earlier: all entries leak.
    Outside,
}

impl Gate {
    #[inline]
    pub fn factor(self, j: u32, leak: f64) -> f64 {
        match self {
            Gate::Open => 1.0,
            Gate::Inside(d) if d == j => 1.0,
            _ => leak,
        }
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub digits: Vec<u32>,
    /// Softmax of the gated row at the predicted digit.
    pub confidence: Vec<f64>,
    /// Row read by each digit's head (`None` for the root head).
    pub rows: Vec<Option<u32>>,
}

impl Prediction {
    pub fn path_confidence(&self) -> f64 {
        self.confidence.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HipanModel {
    config: ModelConfig,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

impl HipanModel {
    /// Latents drawn i.i.d. uniform on `[0, p - 1]`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::INIT, 0);
        let n = parameter_count(config.codec.p, config.heads) as usize;
        let hi = (config.codec.p - 1) as f64;
        let params = (0..n).map(|_| rng.random::<f64>() * hi).collect();
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let p = config.codec.p as usize;
        let mut offsets = Vec::with_capacity(config.heads + 2);
        let mut at = 0;
        for h in 0..=config.heads {
            offsets.push(at);
            at += match h {
                0 => p,
                1 => p * p,
                _ => p * p + p,
            };
        }
        offsets.push(at);
        if params.len() != at {
            return Err(domain(alloc::format!(
                "expected {at} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(domain("non-finite parameter"));
        }
        Ok(Self {
            config,
            params,
            offsets,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn p(&self) -> u32 {
        self.config.codec.p
    }

    pub fn k(&self) -> usize {
        self.config.codec.k
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> u64 {
        self.params.len() as u64
    }

    pub fn num_heads(&self) -> usize {
        self.config.heads + 1
    }

    pub fn head_kind(&self, head: usize) -> HeadKind {
        match head {
            0 => HeadKind::Root,
            1 => HeadKind::DenseMse,
            _ => HeadKind::TwoLogit,
        }
    }

    /// Head used for digit `k` (weight-tied past the last head).
    pub fn head_for_digit(&self, k: usize) -> usize {
        k.min(self.config.heads)
    }

    /// Flat parameter range owned by `head`.
    pub fn head_range(&self, head: usize) -> core::ops::Range<usize> {
        self.offsets[head]..self.offsets[head + 1]
    }

    /// Index of row entry `(row, col)`; the root head has a single row.
    #[inline]
    pub fn entry_index(&self, head: usize, row: u32, col: u32) -> usize {
        let p = self.p() as usize;
        if head == 0 {
            self.offsets[0] + col as usize
        } else {
            self.offsets[head] + row as usize * p + col as usize
        }
    }

    #[inline]
    pub fn anchor_index(&self, head: usize, digit: u32) -> usize {
        debug_assert!(head >= 2);
        let p = self.p() as usize;
        self.offsets[head] + p * p + digit as usize
    }

    pub fn anchor(&self, head: usize, digit: u32) -> f64 {
        self.params[self.anchor_index(head, digit)]
    }

    /// Raw (ungated) row of `head`; `row` is ignored for the root head.
    pub fn row(&self, head: usize, row: u32) -> &[f64] {
        let start = self.entry_index(head, row, 0);
        &self.params[start..start + self.p() as usize]
    }

    /// Gated row into `out`.
    pub fn gated_row(&self, head: usize, row: u32, gate: Gate, out: &mut [f64]) {
        let leak = self.config.leak;
        for (j, (o, &c)) in out.iter_mut().zip(self.row(head, row)).enumerate() {
            *o = c * gate.factor(j as u32, leak);
        }
    }

    /// Digit chosen by `head` from a gated row.
    pub fn decide(&self, head: usize, gated: &[f64]) -> u32 {
        let (best, runner_up) = top_two(gated);
        match self.head_kind(head) {
            HeadKind::Root | HeadKind::DenseMse => best,
            HeadKind::TwoLogit => two_logit_decide(
                self.anchor(head, best),
                best,
                runner_up,
                self.config.temperature,
            ),
        }
    }

    /// Root-to-leaf forward pass.
    ///
    /// With `teacher_forced`, each head reads the row of the input's true
    /// parent digit; otherwise it reads the row of the previously predicted
    /// digit. `input` gates the rows through the leaky ball indicators.
    pub fn predict_digits(&self, input: Option<&PadicCode>, teacher_forced: bool) -> Prediction {
        let k_len = self.k();
        let p = self.p() as usize;
        let mut out = Prediction {
            digits: Vec::with_capacity(k_len),
            confidence: Vec::with_capacity(k_len),
            rows: Vec::with_capacity(k_len),
        };
        let truth = input.map(PadicCode::digits);
        let forced = teacher_forced && truth.is_some();
        let mut gated = vec![0.0; p];
        let mut on_path = true;
        for k in 0..k_len {
            let head = self.head_for_digit(k);
            let row = if k == 0 {
                None
            } else if forced {
                truth.map(|t| t[k - 1])
            } else {
                out.digits.last().copied()
            };
            let gate = match truth {
                None => Gate::Open,
                Some(t) if on_path || forced => Gate::Inside(t[k]),
                Some(_) => Gate::Outside,
            };
            self.gated_row(head, row.unwrap_or(0), gate, &mut gated);
            let d = self.decide(head, &gated);
            out.confidence.push(softmax_at(&gated, d as usize));
            out.digits.push(d);
            out.rows.push(row);
            if let Some(t) = truth {
                on_path = on_path && t[k] == d;
            }
        }
        out
    }

    /// Leaf reached by the free-running prediction (clamped descent).
    pub fn predict_leaf(&self, tree: &TreeSpec, input: Option<&PadicCode>) -> NodeId {
        descend_clamped(tree, &self.predict_digits(input, false).digits)
    }
}

/// Indices of the largest and second-largest entries, ties to the lower index.
pub fn top_two(row: &[f64]) -> (u32, u32) {
    let mut best = 0usize;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    let mut second = if best == 0 { 1 } else { 0 };
    for j in 0..row.len() {
        if j != best && row[j] > row[second] {
            second = j;
        }
    }
    (best as u32, second.min(row.len().saturating_sub(1)) as u32)
}

/// Two-logit rule: keep `t` when `-tau (v - t)^2 >= -tau (v - c)^2`.
pub fn two_logit_decide(v: f64, t: u32, c: u32, tau: f64) -> u32 {
    let good = -tau * (v - t as f64) * (v - t as f64);
    let other = -tau * (v - c as f64) * (v - c as f64);
    if good >= other {
        t
    } else {
        c
    }
}

/// Numerically stable `softmax(row)[i]`.
pub fn softmax_at(row: &[f64], i: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&x| libm::exp(x - m)).sum();
    libm::exp(row[i] - m) / z
}

/// `(Phi_D x)_i = c_i * chi~_{B_i}(x)` for balls that all share one depth.
pub fn vdp_layer_apply(coeffs: &[(Ball, f64)], x: &PadicCode, leak: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&leak) {
        return Err(domain("leak must lie in [0, 1)"));
    }
    let depth = match coeffs.first() {
        Some((b, _)) => b.depth(),
        None => return Ok(Vec::new()),
    };
    coeffs
        .iter()
        .map(|(ball, c)| {
            if ball.depth() != depth {
                return Err(domain("van der Put layer balls must share one depth"));
            }
            Ok(if ball.contains(x)? { *c } else { c * leak })
        })
        .collect()
}

/// Nested prefix balls `B_1(x), ..., B_K(x)`.
pub fn activation_path(x: &PadicCode) -> Vec<Ball> {
    (1..=x.len())
        .map(|d| Ball::new(x.clone(), d).expect("depth within K"))
        .collect()
}

/// Leaves under a digit prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallSummary {
    pub depth: usize,
    pub members: Vec<NodeId>,
    /// Node whose subtree the ball covers; `None` when no leaf realizes it.
    pub subtree_root: Option<NodeId>,
}

pub fn describe_ball(
    dataset: &EncodedDataset,
    tree: &TreeSpec,
    prefix: &[u32],
) -> Result<BallSummary> {
    if prefix.len() > dataset.codec.k {
        return Err(domain(alloc::format!(
            "prefix of length {} exceeds K = {}",
            prefix.len(),
            dataset.codec.k
        )));
    }
    let members: Vec<NodeId> = dataset
        .records
        .iter()
        .filter(|r| r.code.digits().starts_with(prefix))
        .map(|r| r.leaf)
        .collect();
    let subtree_root = if members.is_empty() {
        None
    } else {
        let mut cur = tree.root();
        for &d in prefix {
            if let Some(&c) = tree.children(cur).get(d as usize) {
                cur = c;
            }
        }
        Some(cur)
    };
    Ok(BallSummary {
        depth: prefix.len(),
        members,
        subtree_root,
    })
}
