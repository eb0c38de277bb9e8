//! Brute-force checks: explicit affinity matrices, finite-difference
//! Jacobians and gradient checks. All of them are quadratic or worse in the
//! number of positions and are capped accordingly.

use crate::analysis::BlockAffinity;
use crate::attention::{dense_sa_backward, dense_sa_forward, AttentionParams, Fuse, PARAM_NAMES};
use crate::capture::{self, StageLabel};
use crate::error::{IssaError, Result};
use crate::interlaced::{
    issa_backward_ordered, issa_forward_ordered, long_range_pass, short_range_pass, IssaParams,
    StageOrder,
};
use crate::tensor::{matmul, FeatureMap, Matrix};

/// Largest `H·W` [`materialize_effective_matrix`] accepts.
pub const MATERIALIZE_CAP: usize = 4096;
/// Largest `H·W` [`connectivity_jacobian`] accepts.
pub const JACOBIAN_CAP: usize = 64;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

const REL_FLOOR: f64 = 1e-8;

/// Both stage affinities of one forward pass and their product in original
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMatrices {
    pub long: BlockAffinity,
    pub short: BlockAffinity,
    /// `Pₛᵀ·Aˢ·Pₛ · P_Lᵀ·Aᴸ·P_L` for long-first order, the reverse product
    /// for short-first.
    pub effective: Matrix,
    pub order: StageOrder,
}

fn single_item(x: &FeatureMap, op: &str) -> Result<()> {
    if x.batch() != 1 {
        return Err(IssaError::param(format!("{op} needs a batch of 1, got {}", x.batch())));
    }
    Ok(())
}

fn take_stage(captured: &mut Vec<(StageLabel, BlockAffinity)>, label: StageLabel) -> Result<BlockAffinity> {
    let idx = captured
        .iter()
        .position(|(l, _)| *l == label)
        .ok_or_else(|| IssaError::Integrity(format!("no {label} affinity captured")))?;
    Ok(captured.remove(idx).1)
}

/// Runs the module on `x` with affinity capture and assembles the explicit
/// propagation matrix for the long-first order.
pub fn materialize_effective_matrix(x: &FeatureMap, params: &IssaParams) -> Result<EffectiveMatrices> {
    materialize_effective_matrix_ordered(x, params, StageOrder::LongFirst)
}

/// As [`materialize_effective_matrix`], for either stage order.
///
/// The second stage's affinities are those computed from the actual
/// intermediate features, so `effective` is exact for this input only.
pub fn materialize_effective_matrix_ordered(
    x: &FeatureMap,
    params: &IssaParams,
    order: StageOrder,
) -> Result<EffectiveMatrices> {
    single_item(x, "materialize_effective_matrix")?;
    if x.positions() > MATERIALIZE_CAP {
        return Err(IssaError::Resource(format!(
            "{} positions exceed the materialization cap of {MATERIALIZE_CAP}",
            x.positions()
        )));
    }
    let (out, mut captured) = capture::capture(|| issa_forward_ordered(x, params, order));
    out?;
    let long = take_stage(&mut captured, StageLabel::Long)?;
    let short = take_stage(&mut captured, StageLabel::Short)?;
    let (l, s) = (long.to_dense_original(), short.to_dense_original());
    let effective = match order {
        StageOrder::LongFirst => matmul(&s, &l)?,
        StageOrder::ShortFirst => matmul(&l, &s)?,
    };
    Ok(EffectiveMatrices {
        long,
        short,
        effective,
        order,
    })
}

/// `E · (g₂ ∘ g₁)(X)`, plus `x` under residual fusion. The value transforms
/// are composed in stage order; because every affinity row sums to one the
/// second bias passes through `E` unchanged, so this equals the pipeline
/// output whenever the projections are not rectified.
pub fn apply_effective(eff: &EffectiveMatrices, x: &FeatureMap, params: &IssaParams) -> Result<FeatureMap> {
    single_item(x, "apply_effective")?;
    let (first, second) = match eff.order {
        StageOrder::LongFirst => (&params.long_stage, &params.short_stage),
        StageOrder::ShortFirst => (&params.short_stage, &params.long_stage),
    };
    let values = second.value_transform(&first.value_transform(&x.position_matrix(0))?)?;
    let mut out = FeatureMap::zeros(1, x.channels(), x.height(), x.width())?;
    out.set_position_matrix(0, &matmul(&eff.effective, &values)?)?;
    match params.fuse {
        Fuse::Residual => out.add(x),
        Fuse::None => Ok(out),
    }
}

/// Which part of the module a Jacobian is taken through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelector {
    LongOnly,
    ShortOnly,
    Both(StageOrder),
}

/// `(H·W) × (H·W)` matrix whose entry `(i, j)` is `Σ |∂out[c, i] / ∂x[c', j]|`
/// over all channel pairs, by central differences with step [`FD_STEP`].
pub fn connectivity_jacobian(x: &FeatureMap, params: &IssaParams, selector: StageSelector) -> Result<Matrix> {
    single_item(x, "connectivity_jacobian")?;
    let m = x.positions();
    if m > JACOBIAN_CAP {
        return Err(IssaError::Resource(format!(
            "{m} positions exceed the Jacobian cap of {JACOBIAN_CAP}"
        )));
    }
    let run = |input: &FeatureMap| -> Result<FeatureMap> {
        match selector {
            StageSelector::LongOnly => long_range_pass(input, &params.long_stage, &params.spec),
            StageSelector::ShortOnly => short_range_pass(input, &params.short_stage, &params.spec),
            StageSelector::Both(order) => issa_forward_ordered(input, params, order),
        }
    };
    let c = x.channels();
    let mut jac = Matrix::zeros(m, m);
    for j in 0..m {
        for cin in 0..c {
            let idx = cin * m + j;
            let mut plus = x.clone();
            plus.as_mut_slice()[idx] += FD_STEP;
            let mut minus = x.clone();
            minus.as_mut_slice()[idx] -= FD_STEP;
            let (fp, fm) = (run(&plus)?, run(&minus)?);
            for (k, (a, b)) in fp.as_slice().iter().zip(fm.as_slice()).enumerate() {
                let i = k % m;
                let v = jac.get(i, j) + ((a - b) / (2.0 * FD_STEP)).abs();
                jac.set(i, j, v);
            }
        }
    }
    if !jac.is_finite() {
        return Err(IssaError::NonFinite("connectivity_jacobian"));
    }
    Ok(jac)
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-8)`.
pub fn relative_max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(REL_FLOOR, f64::max);
    diff / scale
}

/// Central-difference gradient of a scalar function of `len` coordinates.
/// `eval(i, delta)` returns the function with coordinate `i` shifted by `delta`.
pub fn numeric_gradient(len: usize, mut eval: impl FnMut(usize, f64) -> Result<f64>) -> Result<Vec<f64>> {
    (0..len)
        .map(|i| Ok((eval(i, FD_STEP)? - eval(i, -FD_STEP)?) / (2.0 * FD_STEP)))
        .collect()
}

fn inner(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Result of one gradient check. `worst` is the relative max-norm error over
/// the whole gradient (input and every parameter, concatenated); `block`
/// names the tensor holding the largest absolute difference.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub worst: f64,
    pub block: String,
}

// Whole-vector normalization: some blocks (the key bias, which only shifts
// each softmax row by a constant) have an exactly zero gradient, where a
// per-block ratio would only measure finite-difference noise.
#[derive(Default)]
struct Collector {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    block: String,
    largest: f64,
}

impl Collector {
    fn update(&mut self, block: String, analytic: &[f64], numeric: &[f64]) {
        let diff = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        if diff > self.largest || self.block.is_empty() {
            self.largest = diff;
            self.block = block;
        }
        self.analytic.extend_from_slice(analytic);
        self.numeric.extend_from_slice(numeric);
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            worst: relative_max_error(&self.analytic, &self.numeric),
            block: self.block,
        }
    }
}

fn check_param_blocks(
    report: &mut Collector,
    prefix: &str,
    params: &AttentionParams,
    analytic: [&[f64]; 6],
    loss: &dyn Fn(&AttentionParams) -> Result<f64>,
) -> Result<()> {
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let numeric = numeric_gradient(analytic[k].len(), |i, d| {
            let mut p = params.clone();
            p.blocks_mut()[k][i] += d;
            loss(&p)
        })?;
        report.update(format!("{prefix}{name}"), analytic[k], &numeric);
    }
    Ok(())
}

/// Compares [`dense_sa_backward`] against central differences of
/// `⟨upstream, dense_sa_forward(x)⟩` for the input and every parameter.
pub fn gradient_check_sa(x: &FeatureMap, p: &AttentionParams, upstream: &FeatureMap, fuse: Fuse) -> Result<GradCheck> {
    let grad = dense_sa_backward(x, p, upstream, fuse)?;
    let mut report = Collector::default();
    let numeric = numeric_gradient(x.len(), |i, d| {
        let mut xx = x.clone();
        xx.as_mut_slice()[i] += d;
        Ok(inner(upstream, &dense_sa_forward(&xx, p, fuse)?))
    })?;
    report.update("input".into(), grad.d_input.as_slice(), &numeric);
    let loss = |pp: &AttentionParams| Ok(inner(upstream, &dense_sa_forward(x, pp, fuse)?));
    check_param_blocks(&mut report, "", p, grad.param_blocks(), &loss)?;
    Ok(report.finish())
}

/// Compares the interlaced backward pass against central differences for the
/// input and both stages' parameters.
pub fn gradient_check_issa(
    x: &FeatureMap,
    params: &IssaParams,
    upstream: &FeatureMap,
    order: StageOrder,
) -> Result<GradCheck> {
    let grad = issa_backward_ordered(x, params, upstream, order)?;
    let mut report = Collector::default();
    let numeric = numeric_gradient(x.len(), |i, d| {
        let mut xx = x.clone();
        xx.as_mut_slice()[i] += d;
        Ok(inner(upstream, &issa_forward_ordered(&xx, params, order)?))
    })?;
    report.update("input".into(), grad.d_input.as_slice(), &numeric);

    let long_loss = |pp: &AttentionParams| {
        let mut q = params.clone();
        q.long_stage = pp.clone();
        Ok(inner(upstream, &issa_forward_ordered(x, &q, order)?))
    };
    check_param_blocks(&mut report, "long.", &params.long_stage, grad.long_stage.param_blocks(), &long_loss)?;
    let short_loss = |pp: &AttentionParams| {
        let mut q = params.clone();
        q.short_stage = pp.clone();
        Ok(inner(upstream, &issa_forward_ordered(x, &q, order)?))
    };
    check_param_blocks(&mut report, "short.", &params.short_stage, grad.short_stage.param_blocks(), &short_loss)?;
    Ok(report.finish())
}
