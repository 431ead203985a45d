//! Accuracy, rank correlation, ultrametricity audit, entropy, box-counting
//! dimension and calibration.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::hierarchy::{descend_clamped, lca_depth, EncodedDataset, NodeId, TreeSpec};
use crate::model::HipanModel;
use crate::padic::{ultrametric_distance, PadicCode};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub leaf_acc: f64,
    pub root_acc: f64,
    pub per_digit_acc: Vec<f64>,
}

/// Free-running accuracy of `model` on every record.
pub fn accuracy_report(
    model: &HipanModel,
    data: &EncodedDataset,
    tree: &TreeSpec,
) -> Result<AccuracyReport> {
    if data.is_empty() {
        return Err(domain("accuracy of an empty dataset"));
    }
    if data.codec != model.config().codec {
        return Err(domain("model and dataset codecs differ"));
    }
    let k_len = model.k();
    let mut digit_hits = vec![0usize; k_len];
    let mut leaf_hits = 0usize;
    for r in &data.records {
        let pred = model.predict_digits(Some(&r.code), false);
        for (k, (a, b)) in pred.digits.iter().zip(r.code.digits()).enumerate() {
            if a == b {
                digit_hits[k] += 1;
            }
        }
        if descend_clamped(tree, &pred.digits) == r.leaf {
            leaf_hits += 1;
        }
    }
    let n = data.len() as f64;
    let per_digit_acc: Vec<f64> = digit_hits.iter().map(|&h| h as f64 / n).collect();
    Ok(AccuracyReport {
        leaf_acc: leaf_hits as f64 / n,
        root_acc: per_digit_acc[0],
        per_digit_acc,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &ix in &idx[i..=j] {
            ranks[ix] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks; `None` if either side is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// All distances or all depths were equal; `rho` is reported as 0.
    pub degenerate: bool,
    pub pairs: usize,
    pub sampled: bool,
}

/// Pair `idx` of the `n (n - 1) / 2` pairs `(i, j)`, `i < j`, in row order.
fn pair_at(idx: usize, n: usize) -> (usize, usize) {
    let start = |i: usize| i * (2 * n - i - 1) / 2;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * idx as f64;
    let mut i = ((2.0 * nf - 1.0 - libm::sqrt(disc.max(0.0))) / 2.0) as usize;
    i = i.min(n - 2);
    while i > 0 && start(i) > idx {
        i -= 1;
    }
    while i + 1 < n - 1 && start(i + 1) <= idx {
        i += 1;
    }
    (i, i + 1 + idx - start(i))
}

/// Leaf pairs used for rank statistics: all of them when there are at most
/// `sample_pairs`, otherwise a seeded sample without replacement.
pub fn leaf_pairs(n: usize, sample_pairs: usize, seed: u64) -> (Vec<(usize, usize)>, bool) {
    if n < 2 {
        return (Vec::new(), false);
    }
    let total = n * (n - 1) / 2;
    if total <= sample_pairs {
        return ((0..total).map(|i| pair_at(i, n)).collect(), false);
    }
    let mut rng = rng::stream(seed, rng::SAMPLING, 0);
    let mut idx = rand::seq::index::sample(&mut rng, total, sample_pairs).into_vec();
    idx.sort_unstable();
    (idx.into_iter().map(|i| pair_at(i, n)).collect(), true)
}

/// Spearman rho between code distance and LCA depth over leaf pairs.
///
/// `codes[i]` is the code attributed to `leaves[i]`.
pub fn spearman_codes(
    codes: &[PadicCode],
    leaves: &[NodeId],
    tree: &TreeSpec,
    sample_pairs: usize,
    seed: u64,
) -> Result<SpearmanResult> {
    if codes.len() != leaves.len() {
        return Err(domain("codes and leaves differ in length"));
    }
    if codes.len() < 2 {
        return Err(domain("rank correlation needs at least 2 leaves"));
    }
    let (pairs, sampled) = leaf_pairs(codes.len(), sample_pairs, seed);
    let mut dist = Vec::with_capacity(pairs.len());
    let mut depth = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        dist.push(ultrametric_distance(&codes[i], &codes[j])?);
        depth.push(lca_depth(tree, leaves[i], leaves[j])? as f64);
    }
    let rho = spearman_rho(&dist, &depth);
    Ok(SpearmanResult {
        rho: rho.unwrap_or(0.0),
        degenerate: rho.is_none(),
        pairs: pairs.len(),
        sampled,
    })
}

/// Spearman rho of the dataset's own codes.
pub fn spearman_ultrametric(
    data: &EncodedDataset,
    tree: &TreeSpec,
    sample_pairs: usize,
    seed: u64,
) -> Result<SpearmanResult> {
    let codes: Vec<PadicCode> = data.records.iter().map(|r| r.code.clone()).collect();
    let leaves: Vec<NodeId> = data.records.iter().map(|r| r.leaf).collect();
    spearman_codes(&codes, &leaves, tree, sample_pairs, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleOptions {
    /// Check every triple when there are at most this many codes.
    pub exhaustive_limit: usize,
    /// Number of sampled triples above the limit.
    pub samples: usize,
    pub seed: u64,
}

impl Default for TriangleOptions {
    fn default() -> Self {
        Self {
            exhaustive_limit: 200,
            samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleAudit {
    pub violations: u64,
    pub triples: u64,
    pub exhaustive: bool,
}

fn violates(d: &mut impl FnMut(usize, usize) -> f64, i: usize, j: usize, l: usize) -> bool {
    let (ij, jl, il) = (d(i, j), d(j, l), d(i, l));
    il > ij.max(jl) || ij > il.max(jl) || jl > ij.max(il)
}

/// Triples breaking the strong triangle inequality in any orientation,
/// measured with `metric`.
pub fn triangle_violations_with<F>(
    codes: &[PadicCode],
    opts: TriangleOptions,
    mut metric: F,
) -> TriangleAudit
where
    F: FnMut(&PadicCode, &PadicCode) -> f64,
{
    let n = codes.len();
    let mut d = |a: usize, b: usize| metric(&codes[a], &codes[b]);
    let mut audit = TriangleAudit {
        violations: 0,
        triples: 0,
        exhaustive: n <= opts.exhaustive_limit,
    };
    if n < 3 {
        return audit;
    }
    if audit.exhaustive {
        for i in 0..n {
            for j in i + 1..n {
                for l in j + 1..n {
                    audit.triples += 1;
                    if violates(&mut d, i, j, l) {
                        audit.violations += 1;
                    }
                }
            }
        }
    } else {
        let mut rng = rng::stream(opts.seed, rng::SAMPLING, 1);
        for _ in 0..opts.samples {
            let t = rand::seq::index::sample(&mut rng, n, 3);
            audit.triples += 1;
            if violates(&mut d, t.index(0), t.index(1), t.index(2)) {
                audit.violations += 1;
            }
        }
    }
    audit
}

/// [`triangle_violations_with`] using the ultrametric distance.
pub fn triangle_violation_count(codes: &[PadicCode], opts: TriangleOptions) -> TriangleAudit {
    triangle_violations_with(codes, opts, |a, b| {
        ultrametric_distance(a, b).unwrap_or(f64::NAN)
    })
}

fn entropy_bits(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    let mut h = 0.0;
    for c in counts.filter(|&c| c > 0) {
        let q = c as f64 / n;
        h -= q * libm::log2(q);
    }
    // Clean up -0.0 and rounding below zero.
    h.max(0.0)
}

/// Shannon entropy (bits) of each digit position over all records.
pub fn digit_entropy_profile(data: &EncodedDataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(domain("entropy of an empty dataset"));
    }
    let k_len = data.codec.k;
    Ok((0..k_len)
        .map(|k| {
            let mut counts = BTreeMap::<u32, usize>::new();
            for r in &data.records {
                *counts.entry(r.code.digits()[k]).or_default() += 1;
            }
            entropy_bits(counts.into_values(), data.len())
        })
        .collect())
}

/// Entropy (bits) of the partition of records into balls of radius
/// `p^-(k+1)`, i.e. by their first `k + 1` digits. Nondecreasing in `k`.
pub fn ball_entropy_profile(data: &EncodedDataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(domain("entropy of an empty dataset"));
    }
    Ok((1..=data.codec.k)
        .map(|len| entropy_bits(prefix_counts(data, len).into_values(), data.len()))
        .collect())
}

fn prefix_counts(data: &EncodedDataset, len: usize) -> BTreeMap<&[u32], usize> {
    let mut counts = BTreeMap::new();
    for r in &data.records {
        *counts.entry(&r.code.digits()[..len]).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub k: usize,
    pub count: usize,
    /// `k ln p`.
    pub log_inv_eps: f64,
    pub log_count: f64,
    /// Inside the scaling region used for the fit.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractalFit {
    #[serde(rename = "D0")]
    pub d0: Option<f64>,
    pub fit_r2: Option<f64>,
    pub points: Vec<BoxCount>,
    /// Fewer than two usable scales.
    pub undefined: bool,
}

/// Least-squares slope and R^2 of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Some((slope, r2))
}

/// Box-counting dimension from the number of distinct `k`-prefixes.
pub fn box_count_dimension(data: &EncodedDataset) -> FractalFit {
    let lnp = libm::log(data.codec.p as f64);
    let distinct_codes = prefix_counts(data, data.codec.k).len();
    let points: Vec<BoxCount> = (1..=data.codec.k)
        .map(|k| {
            let count = if data.is_empty() {
                0
            } else {
                prefix_counts(data, k).len()
            };
            BoxCount {
                k,
                count,
                log_inv_eps: k as f64 * lnp,
                log_count: libm::log(count.max(1) as f64),
                used: count > 1 && count < distinct_codes,
            }
        })
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|pt| pt.used)
        .map(|pt| (pt.log_inv_eps, pt.log_count))
        .unzip();
    match linear_fit(&x, &y) {
        Some((slope, r2)) => FractalFit {
            d0: Some(slope),
            fit_r2: Some(r2),
            points,
            undefined: false,
        },
        None => FractalFit {
            d0: None,
            fit_r2: None,
            points,
            undefined: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub brier: f64,
    pub bins: Vec<CalibrationBin>,
}

/// ECE over `bins` equal-width bins and Brier score of `(confidence, correct)`.
pub fn calibration_from_pairs(samples: &[(f64, bool)], bins: usize) -> Result<CalibrationReport> {
    if bins < 2 {
        return Err(domain("calibration needs at least 2 bins"));
    }
    if samples.is_empty() {
        return Err(domain("calibration of an empty sample"));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut brier = 0.0;
    for &(c, ok) in samples {
        let c = c.clamp(0.0, 1.0);
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        let y = if ok { 1.0 } else { 0.0 };
        if ok {
            hits[b] += 1;
        }
        brier += (c - y) * (c - y);
    }
    let n = samples.len() as f64;
    let mut ece = 0.0;
    let out = (0..bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (conf[b] / count[b] as f64, hits[b] as f64 / count[b] as f64)
            };
            ece += count[b] as f64 / n * libm::fabs(accuracy - mean_confidence);
            CalibrationBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationReport {
        ece,
        brier: brier / n,
        bins: out,
    })
}

/// Calibration of the product of per-digit confidences along each predicted
/// path against leaf correctness. All `K` digits contribute.
pub fn calibration_report(
    model: &HipanModel,
    data: &EncodedDataset,
    tree: &TreeSpec,
    bins: usize,
) -> Result<CalibrationReport> {
    let samples: Vec<(f64, bool)> = data
        .records
        .iter()
        .map(|r| {
            let pred = model.predict_digits(Some(&r.code), false);
            let ok = descend_clamped(tree, &pred.digits) == r.leaf;
            (pred.path_confidence(), ok)
        })
        .collect();
    calibration_from_pairs(&samples, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    pub spearman_pairs: usize,
    pub triangle: TriangleOptions,
    pub ece_bins: usize,
    pub seed: u64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            spearman_pairs: 100_000,
            triangle: TriangleOptions::default(),
            ece_bins: 15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub p: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub leaves: usize,
    pub parameter_count: u64,
    pub leaf_acc: f64,
    pub root_acc: f64,
    pub per_digit_acc: Vec<f64>,
    pub spearman_rho: f64,
    pub spearman_degenerate: bool,
    pub spearman_pairs: usize,
    /// Same statistic on the codes the model predicts.
    pub spearman_rho_predicted: f64,
    pub triangle_violations: u64,
    pub triangles_checked: u64,
    pub entropy_profile: Vec<f64>,
    pub ball_entropy_profile: Vec<f64>,
    pub fractal: FractalFit,
    pub calibration: CalibrationReport,
}

/// Every diagnostic for a trained model on its dataset.
pub fn diagnose(
    model: &HipanModel,
    data: &EncodedDataset,
    tree: &TreeSpec,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    let acc = accuracy_report(model, data, tree)?;
    let leaves: Vec<NodeId> = data.records.iter().map(|r| r.leaf).collect();
    let (rho, rho_pred) = if data.len() >= 2 {
        let exact = spearman_ultrametric(data, tree, opts.spearman_pairs, opts.seed)?;
        let predicted: Vec<PadicCode> = data
            .records
            .iter()
            .map(|r| {
                let d = model.predict_digits(Some(&r.code), false).digits;
                PadicCode::new(data.codec, d)
            })
            .collect::<Result<_>>()?;
        let pr = spearman_codes(&predicted, &leaves, tree, opts.spearman_pairs, opts.seed)?;
        (exact, pr.rho)
    } else {
        let none = SpearmanResult {
            rho: 0.0,
            degenerate: true,
            pairs: 0,
            sampled: false,
        };
        (none, 0.0)
    };
    let codes: Vec<PadicCode> = data.records.iter().map(|r| r.code.clone()).collect();
    let tri = triangle_violation_count(&codes, opts.triangle);
    Ok(DiagnosticsReport {
        p: data.codec.p,
        k: data.codec.k,
        leaves: data.len(),
        parameter_count: model.parameter_count(),
        leaf_acc: acc.leaf_acc,
        root_acc: acc.root_acc,
        per_digit_acc: acc.per_digit_acc,
        spearman_rho: rho.rho,
        spearman_degenerate: rho.degenerate,
        spearman_pairs: rho.pairs,
        spearman_rho_predicted: rho_pred,
        triangle_violations: tri.violations,
        triangles_checked: tri.triples,
        entropy_profile: digit_entropy_profile(data)?,
        ball_entropy_profile: ball_entropy_profile(data)?,
        fractal: box_count_dimension(data),
        calibration: calibration_report(model, data, tree, opts.ece_bins)?,
    })
}
