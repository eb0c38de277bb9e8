mod common;

use common::*;
use issa_core::analysis::{gradient_check_issa, gradient_check_sa};
use issa_core::interlaced::StageOrder;
use issa_core::{dense_sa_backward, issa_backward, AttentionParams, FeatureMap, Fuse, IssaParams};

const TOL: f64 = 1e-5;

#[test]
fn dense_gradients_match_finite_differences() {
    let x = random_map(5, 1, 4, 3, 3);
    let u = random_map(105, 1, 4, 3, 3);
    let p = random_attention(5, 4);
    for fuse in [Fuse::None, Fuse::Residual] {
        let g = gradient_check_sa(&x, &p, &u, fuse).unwrap();
        assert!(g.worst < TOL, "{g:?}");
    }
}

#[test]
fn interlaced_gradients_match_finite_differences() {
    let x = random_map(22, 1, 4, 4, 4);
    let u = random_map(122, 1, 4, 4, 4);
    let p = random_issa(22, 4, 4, 4, 2, 2, Fuse::Residual);
    for order in [StageOrder::LongFirst, StageOrder::ShortFirst] {
        let g = gradient_check_issa(&x, &p, &u, order).unwrap();
        assert!(g.worst < TOL, "{order:?} {g:?}");
    }
}

#[test]
fn batched_gradients_match_finite_differences() {
    let x = random_map(60, 2, 2, 2, 2);
    let u = random_map(61, 2, 2, 2, 2);
    let g = gradient_check_sa(&x, &random_attention(60, 2), &u, Fuse::None).unwrap();
    assert!(g.worst < TOL, "{g:?}");
    let p = random_issa(60, 2, 2, 2, 2, 1, Fuse::None);
    let g = gradient_check_issa(&x, &p, &u, StageOrder::LongFirst).unwrap();
    assert!(g.worst < TOL, "{g:?}");
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let x = random_map(7, 1, 4, 2, 2);
    let u = FeatureMap::zeros(1, 4, 2, 2).unwrap();
    let g = dense_sa_backward(&x, &random_attention(7, 4), &u, Fuse::Residual).unwrap();
    assert!(g.d_input.as_slice().iter().all(|&v| v == 0.0));
    assert!(g.param_blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
}

#[test]
fn residual_only_interlaced_gradient_is_upstream() {
    let x = random_map(8, 1, 4, 4, 4);
    let u = random_map(9, 1, 4, 4, 4);
    let zero = AttentionParams::zeros(4).unwrap();
    let spec = issa_core::build_partition(4, 4, 2, 2).unwrap();
    let p = IssaParams::new(zero.clone(), zero, spec, Fuse::Residual).unwrap();
    assert_eq!(issa_backward(&x, &p, &u).unwrap().d_input, u);
}

#[test]
fn gradient_shapes_match_primals() {
    let x = random_map(10, 1, 4, 2, 4);
    let u = random_map(11, 1, 4, 2, 4);
    let p = random_issa(10, 4, 2, 4, 2, 2, Fuse::None);
    let g = issa_backward(&x, &p, &u).unwrap();
    assert!(g.d_input.same_shape(&x));
    for (stage, grad) in [(&p.long_stage, &g.long_stage), (&p.short_stage, &g.short_stage)] {
        assert_eq!(grad.d_theta_w.shape(), stage.theta_w.shape());
        assert_eq!(grad.d_phi_w.shape(), stage.phi_w.shape());
        assert_eq!(grad.d_g_w.shape(), stage.g_w.shape());
        assert_eq!(grad.d_theta_b.len(), stage.theta_b.len());
        assert_eq!(grad.d_g_b.len(), stage.g_b.len());
        assert!(grad.is_finite());
    }
}

#[test]
fn mismatched_upstream_rejected() {
    let x = random_map(12, 1, 4, 2, 2);
    let u = random_map(12, 1, 4, 2, 4);
    let p = random_issa(12, 4, 2, 2, 2, 2, Fuse::None);
    assert!(issa_backward(&x, &p, &u).is_err());
}
