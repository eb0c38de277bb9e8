//! Closed-form operation and memory counts.
//!
//! The `*_core_term` functions evaluate the published big-O expressions
//! literally, in which one multiply-add is one operation. The `*_flops_model`
//! functions count the way the runtime counter does: a multiply-add is two
//! FLOPs, and each softmax element costs four (scale, subtract max, exp,
//! normalize). Bias adds, pooling and the residual add are not counted. The
//! results are per batch item, so
//! `*_flops_model = 2·core + 4·(affinity elements)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{IssaError, Result};

fn check_positive(values: &[(&str, usize)]) -> Result<()> {
    for &(name, v) in values {
        if v == 0 {
            return Err(IssaError::param(format!("{name} must be >= 1")));
        }
    }
    Ok(())
}

fn check_partition(h: usize, w: usize, p_h: usize, p_w: usize) -> Result<()> {
    check_positive(&[("h", h), ("w", w), ("p_h", p_h), ("p_w", p_w)])?;
    if !h.is_multiple_of(p_h) || !w.is_multiple_of(p_w) {
        return Err(IssaError::param(format!(
            "partition {p_h}x{p_w} does not divide {h}x{w}"
        )));
    }
    Ok(())
}

fn to_count(v: u128) -> Result<u64> {
    u64::try_from(v).map_err(|_| IssaError::Resource(format!("count {v} overflows u64")))
}

/// `2·H·W·C² + 1.5·(H·W)²·C`.
pub fn sa_core_term(h: usize, w: usize, c: usize) -> f64 {
    let (m, c) = ((h * w) as f64, c as f64);
    2.0 * m * c * c + 1.5 * m * m * c
}

/// `4·H·W·C² + 1.5·(H·W)²·C·(1/(P_h·P_w) + 1/(Q_h·Q_w))`.
pub fn issa_core_term(h: usize, w: usize, c: usize, p_h: usize, p_w: usize) -> Result<f64> {
    check_partition(h, w, p_h, p_w)?;
    let m = (h * w) as f64;
    let p = (p_h * p_w) as f64;
    let q = m / p;
    let c = c as f64;
    Ok(4.0 * m * c * c + 1.5 * m * m * c * (1.0 / p + 1.0 / q))
}

/// FLOPs registered by one dense self-attention pass over an `h × w × c` map.
pub fn sa_flops_model(h: usize, w: usize, c: usize) -> Result<u64> {
    check_positive(&[("h", h), ("w", w), ("c", c)])?;
    let (m, c) = ((h * w) as u128, c as u128);
    to_count(4 * m * c * c + 3 * m * m * c + 4 * m * m)
}

/// FLOPs registered by one interlaced pass (both stages).
pub fn issa_flops_model(h: usize, w: usize, c: usize, p_h: usize, p_w: usize) -> Result<u64> {
    check_partition(h, w, p_h, p_w)?;
    check_positive(&[("c", c)])?;
    let m = (h * w) as u128;
    let p = (p_h * p_w) as u128;
    let q = m / p;
    let c = c as u128;
    let pairs = p * q * q + q * p * p;
    to_count(8 * m * c * c + 3 * c * pairs + 4 * pairs)
}

/// FLOPs registered by self-attention with keys and values pooled by `factor`.
pub fn downsampled_flops_model(h: usize, w: usize, c: usize, factor: usize) -> Result<u64> {
    check_partition(h, w, factor, factor)?;
    check_positive(&[("c", c)])?;
    let m = (h * w) as u128;
    let m_low = m / (factor * factor) as u128;
    let c = c as u128;
    to_count(m * c * c + 3 * m_low * c * c + 3 * m * m_low * c + 4 * m * m_low)
}

/// Attention variants compared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sa,
    Issa,
    IssaShortFirst,
    /// Dense attention against keys/values average-pooled by the factor.
    SaDown(usize),
}

impl Method {
    pub fn is_partitioned(&self) -> bool {
        matches!(self, Method::Issa | Method::IssaShortFirst)
    }

    /// Per-batch-item FLOPs under the counter convention.
    pub fn flops_model(&self, h: usize, w: usize, c: usize, p_h: usize, p_w: usize) -> Result<u64> {
        match *self {
            Method::Sa => sa_flops_model(h, w, c),
            Method::Issa | Method::IssaShortFirst => issa_flops_model(h, w, c, p_h, p_w),
            Method::SaDown(f) => downsampled_flops_model(h, w, c, f),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sa => f.write_str("sa"),
            Method::Issa => f.write_str("issa"),
            Method::IssaShortFirst => f.write_str("issa-short-first"),
            Method::SaDown(k) => write!(f, "sa-down{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = IssaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(Method::Sa),
            "issa" => Ok(Method::Issa),
            "issa-short-first" => Ok(Method::IssaShortFirst),
            _ => s
                .strip_prefix("sa-down")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k >= 1)
                .map(Method::SaDown)
                .ok_or_else(|| IssaError::param(format!("unknown method '{s}'"))),
        }
    }
}

/// Number of affinity entries one batch item stores.
pub fn affinity_memory_model(h: usize, w: usize, p_h: usize, p_w: usize, method: Method) -> Result<u64> {
    check_positive(&[("h", h), ("w", w)])?;
    let m = (h * w) as u128;
    match method {
        Method::Sa => to_count(m * m),
        Method::Issa | Method::IssaShortFirst => {
            check_partition(h, w, p_h, p_w)?;
            let p = (p_h * p_w) as u128;
            let q = m / p;
            to_count(p * q * q + q * p * p)
        }
        Method::SaDown(f) => {
            check_partition(h, w, f, f)?;
            to_count(m * (m / (f * f) as u128))
        }
    }
}

/// Divisor pair minimizing [`issa_flops_model`].
///
/// The cost depends only on `P = p_h·p_w`, so ties are common. They are
/// broken by `|P − √(H·W)|`, then by how closely the groups match the map's
/// aspect ratio (`|p_h·w − p_w·h|`), then by the smaller `p_h`. Only the
/// affinity pair count depends on the partition, so `C = 1` suffices.
pub fn optimal_partition(h: usize, w: usize) -> (usize, usize) {
    let root = ((h * w) as f64).sqrt();
    let divisors = |n: usize| (1..=n).filter(move |d| n.is_multiple_of(*d));
    let mut best: Option<((u64, f64, usize, usize), (usize, usize))> = None;
    for p_h in divisors(h) {
        for p_w in divisors(w) {
            let Ok(cost) = issa_flops_model(h, w, 1, p_h, p_w) else {
                continue;
            };
            let key = (
                cost,
                ((p_h * p_w) as f64 - root).abs(),
                (p_h * w).abs_diff(p_w * h),
                p_h,
            );
            let better = match &best {
                None => true,
                Some((k, _)) => {
                    key.0 < k.0
                        || (key.0 == k.0
                            && (key.1 < k.1
                                || (key.1 == k.1 && (key.2, key.3) < (k.2, k.3))))
                }
            };
            if better {
                best = Some((key, (p_h, p_w)));
            }
        }
    }
    best.map_or((1, 1), |(_, pair)| pair)
}
