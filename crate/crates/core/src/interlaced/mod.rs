//! Interlaced sparse self-attention.
//!
//! The dense `M×M` affinity is replaced by two block-diagonal ones. The long
//! range stage attends within groups of positions spread across the whole map;
//! the short range stage attends within contiguous patches. Together every
//! output position depends on every input position.

mod partition;

pub use partition::{
    build_partition, gather_groups, invert, scatter_groups, PartitionSpec, Permutation,
};

use crate::analysis::BlockAffinity;
use crate::attention::{attend, attend_backward, AttentionGrad, AttentionParams, Fuse};
use crate::capture::{self, StageLabel};
use crate::error::{IssaError, Result};
use crate::fault::{self, Fault};
use crate::rng::Rng;
use crate::tensor::FeatureMap;

/// Order in which the two stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageOrder {
    #[default]
    LongFirst,
    ShortFirst,
}

/// Parameters of the full module: one independent attention stage per range.
#[derive(Debug, Clone, PartialEq)]
pub struct IssaParams {
    pub long_stage: AttentionParams,
    pub short_stage: AttentionParams,
    pub spec: PartitionSpec,
    pub fuse: Fuse,
}

impl IssaParams {
    pub fn new(
        long_stage: AttentionParams,
        short_stage: AttentionParams,
        spec: PartitionSpec,
        fuse: Fuse,
    ) -> Result<Self> {
        let p = IssaParams {
            long_stage,
            short_stage,
            spec,
            fuse,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn random(channels: usize, spec: PartitionSpec, fuse: Fuse, rng: &mut Rng) -> Result<Self> {
        let long_stage = AttentionParams::random(channels, &mut rng.split(1))?;
        let short_stage = AttentionParams::random(channels, &mut rng.split(2))?;
        rng.next_u64();
        IssaParams::new(long_stage, short_stage, spec, fuse)
    }

    pub fn channels(&self) -> usize {
        self.long_stage.channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.long_stage.validate()?;
        self.short_stage.validate()?;
        if self.long_stage.channels() != self.short_stage.channels() {
            return Err(IssaError::shape(
                "stage channel counts",
                &[self.long_stage.channels()],
                &[self.short_stage.channels()],
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        self.validate()?;
        self.spec.matches(x)?;
        if x.channels() != self.channels() {
            return Err(IssaError::shape("issa input channels", &x.dims(), &[self.channels()]));
        }
        Ok(())
    }
}

/// Gradients of the full module.
#[derive(Debug, Clone, PartialEq)]
pub struct IssaGrad {
    /// Long stage; its `d_input` excludes the residual path.
    pub long_stage: AttentionGrad,
    /// Short stage; its `d_input` is the gradient at the intermediate map.
    pub short_stage: AttentionGrad,
    pub d_input: FeatureMap,
}

fn check_stage_input(x: &FeatureMap, params: &AttentionParams, spec: &PartitionSpec) -> Result<()> {
    params.validate()?;
    spec.matches(x)?;
    if x.channels() != params.channels() {
        return Err(IssaError::shape("stage input channels", &x.dims(), &[params.channels()]));
    }
    Ok(())
}

/// Attention applied independently within each group of `map`.
fn grouped_pass(
    x: &FeatureMap,
    params: &AttentionParams,
    map: &Permutation,
    group_size: usize,
    label: StageLabel,
) -> Result<FeatureMap> {
    let keep = capture::is_active();
    let groups = gather_groups(x, map.as_slice(), group_size)?;
    let per_item = x.positions() / group_size;
    let mut outputs = Vec::with_capacity(groups.len());
    let mut blocks = Vec::with_capacity(per_item);
    for g in &groups {
        let (z, a) = attend(g, params, keep)?;
        outputs.push(z);
        if let Some(a) = a {
            blocks.push(a);
            if blocks.len() == per_item {
                let affinity = BlockAffinity::new(map.as_slice().to_vec(), std::mem::take(&mut blocks))?;
                capture::push(label, affinity);
            }
        }
    }
    scatter_groups(&outputs, map.as_slice(), x.dims())
}

fn grouped_backward(
    x: &FeatureMap,
    params: &AttentionParams,
    map: &Permutation,
    group_size: usize,
    upstream: &FeatureMap,
    acc: &mut AttentionGrad,
) -> Result<FeatureMap> {
    let xs = gather_groups(x, map.as_slice(), group_size)?;
    let us = gather_groups(upstream, map.as_slice(), group_size)?;
    let mut dxs = Vec::with_capacity(xs.len());
    for (xg, ug) in xs.iter().zip(&us) {
        dxs.push(attend_backward(xg, params, ug, acc)?);
    }
    scatter_groups(&dxs, map.as_slice(), x.dims())
}

/// Attention within each long-range group (positions `P_h`/`P_w` apart).
pub fn long_range_pass(x: &FeatureMap, params: &AttentionParams, spec: &PartitionSpec) -> Result<FeatureMap> {
    check_stage_input(x, params, spec)?;
    grouped_pass(x, params, spec.long_index_map(), spec.long_group_size(), StageLabel::Long)?
        .ensure_finite("long_range_pass")
}

/// Attention within each short-range group (contiguous `P_h × P_w` patches).
pub fn short_range_pass(z: &FeatureMap, params: &AttentionParams, spec: &PartitionSpec) -> Result<FeatureMap> {
    check_stage_input(z, params, spec)?;
    if fault::active() == Fault::SkipShortPass {
        return Ok(z.clone());
    }
    grouped_pass(z, params, spec.short_index_map(), spec.short_group_size(), StageLabel::Short)?
        .ensure_finite("short_range_pass")
}

fn fuse_output(z: FeatureMap, x: &FeatureMap, fuse: Fuse) -> Result<FeatureMap> {
    match fuse {
        Fuse::Residual => z.add(x),
        Fuse::None => Ok(z),
    }
}

/// Full module with the stages in the given order.
pub fn issa_forward_ordered(x: &FeatureMap, params: &IssaParams, order: StageOrder) -> Result<FeatureMap> {
    params.check_input(x)?;
    let z = match order {
        StageOrder::LongFirst => {
            let zl = long_range_pass(x, &params.long_stage, &params.spec)?;
            short_range_pass(&zl, &params.short_stage, &params.spec)?
        }
        StageOrder::ShortFirst => {
            let zs = short_range_pass(x, &params.short_stage, &params.spec)?;
            long_range_pass(&zs, &params.long_stage, &params.spec)?
        }
    };
    fuse_output(z, x, params.fuse)
}

/// Long-range stage, then short-range stage, then fusion with `x`.
pub fn issa_forward(x: &FeatureMap, params: &IssaParams) -> Result<FeatureMap> {
    issa_forward_ordered(x, params, StageOrder::LongFirst)
}

/// Variant with the short-range stage first.
pub fn issa_forward_short_first(x: &FeatureMap, params: &IssaParams) -> Result<FeatureMap> {
    issa_forward_ordered(x, params, StageOrder::ShortFirst)
}

/// Gradients of `⟨upstream, issa_forward_ordered(x, params, order)⟩`.
pub fn issa_backward_ordered(
    x: &FeatureMap,
    params: &IssaParams,
    upstream: &FeatureMap,
    order: StageOrder,
) -> Result<IssaGrad> {
    params.check_input(x)?;
    if !upstream.same_shape(x) {
        return Err(IssaError::shape("issa_backward", &upstream.dims(), &x.dims()));
    }
    let spec = &params.spec;
    let mut long = AttentionGrad::zeros(x, &params.long_stage)?;
    let mut short = AttentionGrad::zeros(x, &params.short_stage)?;
    let (long_map, long_size) = (spec.long_index_map(), spec.long_group_size());
    let (short_map, short_size) = (spec.short_index_map(), spec.short_group_size());

    let d_x = match order {
        StageOrder::LongFirst => {
            let mid = grouped_pass(x, &params.long_stage, long_map, long_size, StageLabel::Long)?;
            let d_mid = grouped_backward(&mid, &params.short_stage, short_map, short_size, upstream, &mut short)?;
            let d_x = grouped_backward(x, &params.long_stage, long_map, long_size, &d_mid, &mut long)?;
            short.d_input = d_mid;
            long.d_input = d_x.clone();
            d_x
        }
        StageOrder::ShortFirst => {
            let mid = grouped_pass(x, &params.short_stage, short_map, short_size, StageLabel::Short)?;
            let d_mid = grouped_backward(&mid, &params.long_stage, long_map, long_size, upstream, &mut long)?;
            let d_x = grouped_backward(x, &params.short_stage, short_map, short_size, &d_mid, &mut short)?;
            long.d_input = d_mid;
            short.d_input = d_x.clone();
            d_x
        }
    };
    let d_input = match params.fuse {
        Fuse::Residual => d_x.add(upstream)?,
        Fuse::None => d_x,
    };
    Ok(IssaGrad {
        long_stage: long,
        short_stage: short,
        d_input,
    })
}

/// Gradients of `⟨upstream, issa_forward(x, params)⟩` through both stages.
pub fn issa_backward(x: &FeatureMap, params: &IssaParams, upstream: &FeatureMap) -> Result<IssaGrad> {
    issa_backward_ordered(x, params, upstream, StageOrder::LongFirst)
}
