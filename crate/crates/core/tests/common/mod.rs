//! Plain-loop reference implementations shared by the integration tests.
//! Nothing here calls the library's matmul, softmax or gather code.

#![allow(dead_code)]

use issa_core::interlaced::StageOrder;
use issa_core::{AttentionParams, FeatureMap, IssaParams, Rng};

/// Channel vectors of batch item `n`, one per row-major position.
pub fn positions(x: &FeatureMap, n: usize) -> Vec<Vec<f64>> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    (0..h * w)
        .map(|p| (0..c).map(|ch| x.get(n, ch, p / w, p % w)).collect())
        .collect()
}

pub fn from_positions(rows: &[Vec<f64>], h: usize, w: usize) -> FeatureMap {
    let c = rows[0].len();
    FeatureMap::from_fn(1, c, h, w, |_, ch, y, x| rows[y * w + x][ch]).unwrap()
}

fn affine(x: &[f64], w: &issa_core::Matrix, b: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let mut s = 0.0;
            for i in 0..x.len() {
                s += w.get(o, i) * x[i];
            }
            s + b[o]
        })
        .collect()
}

pub fn value(p: &AttentionParams, x: &[f64]) -> Vec<f64> {
    affine(x, &p.g_w, &p.g_b)
}

/// Attention of every query row over the key rows allowed by `mask(i, j)`.
/// Keys and values come from `kv`.
pub fn masked_attention(
    queries: &[Vec<f64>],
    kv: &[Vec<f64>],
    p: &AttentionParams,
    mask: impl Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let scale = p.scale_d.sqrt();
    let q: Vec<Vec<f64>> = queries.iter().map(|x| affine(x, &p.theta_w, &p.theta_b)).collect();
    let k: Vec<Vec<f64>> = kv.iter().map(|x| affine(x, &p.phi_w, &p.phi_b)).collect();
    let v: Vec<Vec<f64>> = kv.iter().map(|x| value(p, x)).collect();
    let c = v[0].len();
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let keys: Vec<usize> = (0..kv.len()).filter(|&j| mask(i, j)).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / scale)
                .collect();
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; c];
            for (&j, ej) in keys.iter().zip(&e) {
                for ch in 0..c {
                    out[ch] += ej / z * v[j][ch];
                }
            }
            out
        })
        .collect()
}

/// Dense self-attention over all position pairs, single batch item.
pub fn naive_dense(x: &FeatureMap, p: &AttentionParams) -> FeatureMap {
    let rows = positions(x, 0);
    from_positions(&masked_attention(&rows, &rows, p, |_, _| true), x.height(), x.width())
}

/// Queries at full resolution against keys/values average-pooled by `f`.
pub fn naive_pooled(x: &FeatureMap, p: &AttentionParams, f: usize) -> FeatureMap {
    let (h, w) = (x.height(), x.width());
    let rows = positions(x, 0);
    let c = x.channels();
    let mut pooled = Vec::new();
    for i in 0..h / f {
        for j in 0..w / f {
            let mut acc = vec![0.0; c];
            for dy in 0..f {
                for dx in 0..f {
                    let src = &rows[(i * f + dy) * w + j * f + dx];
                    for ch in 0..c {
                        acc[ch] += src[ch];
                    }
                }
            }
            pooled.push(acc.iter().map(|v| v / (f * f) as f64).collect());
        }
    }
    from_positions(&masked_attention(&rows, &pooled, p, |_, _| true), h, w)
}

/// Long-range group of `(y, x)`: positions sharing the offset inside each cell.
pub fn long_group(pos: usize, w: usize, ph: usize, pw: usize) -> (usize, usize) {
    ((pos / w) % ph, (pos % w) % pw)
}

/// Short-range group of `(y, x)`: the cell containing it.
pub fn short_group(pos: usize, w: usize, ph: usize, pw: usize) -> (usize, usize) {
    ((pos / w) / ph, (pos % w) / pw)
}

/// Interlaced attention as two masked dense attentions (no fusion).
pub fn naive_issa(x: &FeatureMap, params: &IssaParams, order: StageOrder) -> FeatureMap {
    let (h, w) = (x.height(), x.width());
    let (ph, pw) = (params.spec.p_h, params.spec.p_w);
    let long = |r: &[Vec<f64>]| {
        masked_attention(r, r, &params.long_stage, |i, j| {
            long_group(i, w, ph, pw) == long_group(j, w, ph, pw)
        })
    };
    let short = |r: &[Vec<f64>]| {
        masked_attention(r, r, &params.short_stage, |i, j| {
            short_group(i, w, ph, pw) == short_group(j, w, ph, pw)
        })
    };
    let rows = positions(x, 0);
    let out = match order {
        StageOrder::LongFirst => short(&long(&rows)),
        StageOrder::ShortFirst => long(&short(&rows)),
    };
    from_positions(&out, h, w)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_map(seed: u64, n: usize, c: usize, h: usize, w: usize) -> FeatureMap {
    issa_core::random_feature_map(n, c, h, w, &mut Rng::new(seed).split(1)).unwrap()
}

pub fn random_attention(seed: u64, c: usize) -> AttentionParams {
    AttentionParams::random(c, &mut Rng::new(seed).split(2)).unwrap()
}

pub fn random_issa(seed: u64, c: usize, h: usize, w: usize, ph: usize, pw: usize, fuse: issa_core::Fuse) -> IssaParams {
    let spec = issa_core::build_partition(h, w, ph, pw).unwrap();
    IssaParams::random(c, spec, fuse, &mut Rng::new(seed).split(2)).unwrap()
}

// Reference values from an independent arbitrary-precision implementation
// of the generator and the attention formulas (50 significant digits).

/// `random_feature_map(1, 2, 2, 2)` with `Rng::new(42)`.
pub const RANDOM_MAP_SEED_42: [f64; 8] = [
    0.4831297575436466,
    -0.6801792142461598,
    -0.4427977394897227,
    -0.31161856695272494,
    -0.9239396629195076,
    0.7364561530930647,
    -0.5631896125756313,
    0.6012637534270067,
];

/// First eight symmetric draws of `Rng::new(7)`.
pub const SOFTMAX_INPUT_SEED_7: [f64; 8] = [
    -0.22034050321745702,
    -0.9664234109436878,
    0.8015213612137668,
    0.16586058605615617,
    -0.09511620997706327,
    -0.5011369554345133,
    -0.0640939915542531,
    -0.3438465216949942,
];

/// Softmax of the row above with divisor `√4`.
pub const SOFTMAX_SEED_7: [f64; 8] = [
    0.117_322_963_773_800_66,
    0.080_792_896_918_118_75,
    0.195_558_865_872_986_13,
    0.142_313_312_166_879_9,
    0.124_903_651_577_987_5,
    0.101_955_075_499_891_58,
    0.126_856_149_314_803_13,
    0.110_297_084_875_532_36,
];

/// Dense attention, no fusion, on `random_map(11, 1, 4, 2, 2)` with
/// `random_attention(11, 4)`. NCHW order.
pub const DENSE_SA_SEED_11: [f64; 16] = [
    -0.086_210_681_796_958_94,
    -0.086_218_125_090_297_82,
    -0.086_968_803_282_923_95,
    -0.090_533_969_908_293_07,
    0.078_181_014_861_423_2,
    0.078_462_596_977_867_66,
    0.065_941_899_703_436_24,
    0.060_153_859_647_108_46,
    -0.011_687_578_125_435_635,
    -0.011_390_961_412_962_01,
    -0.030_338_913_289_693_882,
    -0.055_891_882_034_560_01,
    0.163_415_803_217_659_44,
    0.163_570_087_465_216_06,
    0.153_681_426_572_584_93,
    0.139_951_772_690_484_78,
];

/// Interlaced attention, long first, no fusion, on `random_map(21, 1, 2, 4, 1)`
/// with `random_issa(21, 2, 4, 1, 2, 1, Fuse::None)`. NCHW order.
pub const ISSA_SEED_21: [f64; 8] = [
    0.034_845_889_436_271_82,
    0.034_841_864_709_162_326,
    0.033_613_554_456_821_1,
    0.033_609_808_589_655_76,
    -0.244_968_039_802_435_03,
    -0.244_981_960_370_914_02,
    -0.248_876_206_643_322_27,
    -0.248_889_023_528_198_17,
];
