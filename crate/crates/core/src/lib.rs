//! Interlaced sparse self-attention on CPU, in `f64`.
//!
//! Dense self-attention over an `H × W` map builds an `(H·W)²` affinity.
//! The interlaced variant factorizes it into two block-diagonal affinities:
//! one over groups of positions spread across the map, one over contiguous
//! patches. The crate provides both forward and backward passes, closed-form
//! cost models checked against a runtime FLOP counter, and brute-force
//! oracles for the factorization.

pub mod analysis;
pub mod attention;
pub mod bench;
pub mod capture;
pub mod error;
pub mod fault;
pub mod interlaced;
pub mod rng;
pub mod tensor;

pub use attention::{
    attend, dense_sa_backward, dense_sa_forward, downsampled_sa_forward, AttentionGrad,
    AttentionParams, Fuse,
};
pub use error::{IssaError, Result};
pub use interlaced::{
    build_partition, issa_backward, issa_forward, issa_forward_short_first, IssaGrad, IssaParams,
    PartitionSpec, StageOrder,
};
pub use rng::Rng;
pub use tensor::{matmul, project, random_feature_map, row_softmax, FeatureMap, Matrix};
