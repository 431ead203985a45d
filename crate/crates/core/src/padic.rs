//! Finite base-p digit codes with the p-adic valuation metric.
//!
//! A code stores its digits individually, root-most digit first. Digit `k`
//! carries place value `p^k`, so two codes are close exactly when they share a
//! long root-side prefix.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Returns `true` when `n` is prime (deterministic trial division).
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Smallest prime `>= n`.
pub fn next_prime_geq(n: u64) -> Result<u64> {
    if n < 2 {
        return Err(domain("next_prime_geq requires n >= 2"));
    }
    let mut c = n;
    while !is_prime(c) {
        c += 1;
    }
    Ok(c)
}

/// Prime base and code length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodecParams {
    pub p: u32,
    #[serde(rename = "K")]
    pub k: usize,
}

impl CodecParams {
    pub fn new(p: u32, k: usize) -> Result<Self> {
        if !is_prime(p as u64) {
            return Err(domain(alloc::format!("base {p} is not prime")));
        }
        if k == 0 {
            return Err(domain("code length K must be at least 1"));
        }
        Ok(Self { p, k })
    }
}

/// A fixed-length digit sequence `d_0 .. d_{K-1}`, root first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PadicCode {
    digits: Vec<u32>,
    p: u32,
}

impl PadicCode {
    pub fn new(params: CodecParams, digits: Vec<u32>) -> Result<Self> {
        if digits.len() != params.k {
            return Err(domain(alloc::format!(
                "code has {} digits, expected K = {}",
                digits.len(),
                params.k
            )));
        }
        if let Some(d) = digits.iter().find(|&&d| d >= params.p) {
            return Err(domain(alloc::format!(
                "digit {d} out of range for p = {}",
                params.p
            )));
        }
        Ok(Self {
            digits,
            p: params.p,
        })
    }

    pub fn zero(params: CodecParams) -> Self {
        Self {
            digits: alloc::vec![0; params.k],
            p: params.p,
        }
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn params(&self) -> CodecParams {
        CodecParams {
            p: self.p,
            k: self.digits.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// Parses the canonical hyphenated form (`"0-1-2"`).
    pub fn parse(params: CodecParams, text: &str) -> Result<Self> {
        let digits = parse_digits(text)?;
        Self::new(params, digits)
    }
}

/// Parses a hyphen-separated digit list. The empty string is the empty prefix.
pub fn parse_digits(text: &str) -> Result<Vec<u32>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split('-')
        .map(|part| {
            u32::from_str(part.trim())
                .map_err(|_| domain(alloc::format!("malformed digit {part:?} in {text:?}")))
        })
        .collect()
}

/// Canonical text form of a digit slice.
pub fn format_digits(digits: &[u32]) -> String {
    let mut out = String::new();
    for (i, d) in digits.iter().enumerate() {
        if i > 0 {
            out.push('-');
        }
        out.push_str(&alloc::format!("{d}"));
    }
    out
}

impl fmt::Display for PadicCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_digits(&self.digits))
    }
}

fn check_same(a: &PadicCode, b: &PadicCode) -> Result<()> {
    if a.params() != b.params() {
        return Err(domain(alloc::format!(
            "codec mismatch: (p={}, K={}) vs (p={}, K={})",
            a.p,
            a.len(),
            b.p,
            b.len()
        )));
    }
    Ok(())
}

/// Index of the first differing digit, `K` when the codes are equal.
pub fn valuation(a: &PadicCode, b: &PadicCode) -> Result<usize> {
    check_same(a, b)?;
    Ok(a.digits
        .iter()
        .zip(&b.digits)
        .position(|(x, y)| x != y)
        .unwrap_or(a.len()))
}

/// Same quantity as [`valuation`]; reads better in tree code.
pub fn shared_prefix_len(a: &PadicCode, b: &PadicCode) -> Result<usize> {
    valuation(a, b)
}

/// `p^-valuation`, exactly zero for equal codes.
pub fn ultrametric_distance(a: &PadicCode, b: &PadicCode) -> Result<f64> {
    let v = valuation(a, b)?;
    if v == a.len() {
        return Ok(0.0);
    }
    Ok(inv_pow(a.p, v))
}

/// `p^-k` as a float.
pub fn inv_pow(p: u32, k: usize) -> f64 {
    // Exact denominator gives a correctly rounded quotient.
    match u32::try_from(k)
        .ok()
        .and_then(|k| (p as u64).checked_pow(k))
    {
        Some(n) if n < 1 << 53 => 1.0 / n as f64,
        _ => libm::pow(p as f64, -(k as f64)),
    }
}

/// The set of codes sharing the first `depth` digits of `center`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ball {
    center: PadicCode,
    depth: usize,
}

impl Ball {
    pub fn new(center: PadicCode, depth: usize) -> Result<Self> {
        if depth > center.len() {
            return Err(domain(alloc::format!(
                "ball depth {depth} exceeds K = {}",
                center.len()
            )));
        }
        Ok(Self { center, depth })
    }

    pub fn center(&self) -> &PadicCode {
        &self.center
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn prefix(&self) -> &[u32] {
        &self.center.digits[..self.depth]
    }

    pub fn contains(&self, x: &PadicCode) -> Result<bool> {
        check_same(&self.center, x)?;
        Ok(x.digits[..self.depth] == self.center.digits[..self.depth])
    }
}

/// Membership test for `x` in `ball`.
pub fn ball_contains(ball: &Ball, x: &PadicCode) -> Result<bool> {
    ball.contains(x)
}
