//! Dense self-attention over spatial positions, its exact backward pass and
//! the average-pooled ("SA-2×") baseline.
//!
//! Per batch item the feature map is flattened to `M = H·W` rows of `C`
//! channels and
//!
//! ```text
//! A = softmax(θ(X) φ(X)ᵀ / √d)      Z = A g(X)
//! ```
//!
//! with `θ, φ: C → C/2`, `g: C → C` position-wise affine maps and `d = C/2`.

use std::fmt;
use std::str::FromStr;

use crate::analysis::BlockAffinity;
use crate::capture::{self, StageLabel};
use crate::error::{IssaError, Result};
use crate::rng::Rng;
use crate::tensor::{gemm_acc, linear, softmax_rows_in_place, FeatureMap, Matrix};

/// Upper bound on the number of affinity entries materialized at once when
/// no capture sink is active. Rows are processed in chunks below this size.
const AFFINITY_CHUNK_ELEMS: usize = 1 << 22;

/// How the attention output is combined with the module input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fuse {
    #[default]
    Residual,
    None,
}

impl FromStr for Fuse {
    type Err = IssaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Fuse::Residual),
            "none" => Ok(Fuse::None),
            other => Err(IssaError::param(format!("unknown fusion mode '{other}'"))),
        }
    }
}

impl fmt::Display for Fuse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fuse::Residual => "residual",
            Fuse::None => "none",
        })
    }
}

/// Projection weights of one attention stage.
///
/// Weight matrices map input channels (columns) to output channels (rows).
/// `relu` applies an element-wise ReLU after each of the three projections;
/// it is off unless explicitly enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub theta_w: Matrix,
    pub theta_b: Vec<f64>,
    pub phi_w: Matrix,
    pub phi_b: Vec<f64>,
    pub g_w: Matrix,
    pub g_b: Vec<f64>,
    pub scale_d: f64,
    pub relu: bool,
}

pub const PARAM_NAMES: [&str; 6] = ["theta_w", "theta_b", "phi_w", "phi_b", "g_w", "g_b"];

impl AttentionParams {
    pub fn new(
        theta_w: Matrix,
        theta_b: Vec<f64>,
        phi_w: Matrix,
        phi_b: Vec<f64>,
        g_w: Matrix,
        g_b: Vec<f64>,
    ) -> Result<Self> {
        let scale_d = (g_w.rows() / 2) as f64;
        let p = AttentionParams {
            theta_w,
            theta_b,
            phi_w,
            phi_b,
            g_w,
            g_b,
            scale_d,
            relu: false,
        };
        p.validate()?;
        Ok(p)
    }

    /// All-zero projections: uniform affinities and a zero value stream.
    pub fn zeros(channels: usize) -> Result<Self> {
        check_even(channels)?;
        let half = channels / 2;
        AttentionParams::new(
            Matrix::zeros(half, channels),
            vec![0.0; half],
            Matrix::zeros(half, channels),
            vec![0.0; half],
            Matrix::zeros(channels, channels),
            vec![0.0; channels],
        )
    }

    /// Weights uniform on `±1/√C`, biases uniform on `±0.1`.
    pub fn random(channels: usize, rng: &mut Rng) -> Result<Self> {
        check_even(channels)?;
        let half = channels / 2;
        let ws = 1.0 / (channels as f64).sqrt();
        let mut bias = |n: usize| -> Vec<f64> { (0..n).map(|_| 0.1 * rng.next_symmetric()).collect() };
        let theta_b = bias(half);
        let phi_b = bias(half);
        let g_b = bias(channels);
        AttentionParams::new(
            Matrix::random(half, channels, ws, rng),
            theta_b,
            Matrix::random(half, channels, ws, rng),
            phi_b,
            Matrix::random(channels, channels, ws, rng),
            g_b,
        )
    }

    pub fn with_scale(mut self, scale_d: f64) -> Result<Self> {
        self.scale_d = scale_d;
        self.validate()?;
        Ok(self)
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    pub fn channels(&self) -> usize {
        self.g_w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.g_w.cols();
        check_even(c)?;
        let half = c / 2;
        if self.g_w.rows() != c {
            return Err(IssaError::shape("g_w must be square", &self.g_w.shape(), &[c, c]));
        }
        for (name, w) in [("theta_w", &self.theta_w), ("phi_w", &self.phi_w)] {
            if w.shape() != [half, c] {
                return Err(IssaError::shape(
                    if name == "theta_w" { "theta_w" } else { "phi_w" },
                    &w.shape(),
                    &[half, c],
                ));
            }
        }
        for (name, b, n) in [
            ("theta_b", &self.theta_b, half),
            ("phi_b", &self.phi_b, half),
            ("g_b", &self.g_b, c),
        ] {
            if b.len() != n {
                return Err(IssaError::param(format!(
                    "{name} has length {} but {n} is required",
                    b.len()
                )));
            }
        }
        if !(self.scale_d > 0.0) || !self.scale_d.is_finite() {
            return Err(IssaError::param(format!(
                "scale_d must be positive, got {}",
                self.scale_d
            )));
        }
        Ok(())
    }

    /// The six parameter blocks in [`PARAM_NAMES`] order.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.theta_w.as_slice(),
            &self.theta_b,
            self.phi_w.as_slice(),
            &self.phi_b,
            self.g_w.as_slice(),
            &self.g_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.theta_w.as_mut_slice(),
            &mut self.theta_b,
            self.phi_w.as_mut_slice(),
            &mut self.phi_b,
            self.g_w.as_mut_slice(),
            &mut self.g_b,
        ]
    }

    /// Position-wise value transform `g` on a positions-by-channels matrix.
    pub fn value_transform(&self, x: &Matrix) -> Result<Matrix> {
        project_stream(x, &self.g_w, &self.g_b, self.relu)
    }

    fn softmax_scale(&self) -> f64 {
        self.scale_d.sqrt()
    }
}

fn check_even(channels: usize) -> Result<()> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(IssaError::param(format!(
            "channel count must be even and positive, got {channels}"
        )));
    }
    Ok(())
}

fn check_input(x: &FeatureMap, p: &AttentionParams) -> Result<()> {
    p.validate()?;
    if x.channels() != p.channels() {
        return Err(IssaError::shape(
            "attention input channels",
            &x.dims(),
            &[p.channels()],
        ));
    }
    Ok(())
}

fn project_stream(x: &Matrix, w: &Matrix, b: &[f64], relu: bool) -> Result<Matrix> {
    let mut y = linear(x, w, b)?;
    if relu {
        for v in y.as_mut_slice() {
            *v = v.max(0.0);
        }
    }
    Ok(y)
}

/// Gradients of one attention stage. `d_input` is the gradient with respect
/// to the stage input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrad {
    pub d_input: FeatureMap,
    pub d_theta_w: Matrix,
    pub d_theta_b: Vec<f64>,
    pub d_phi_w: Matrix,
    pub d_phi_b: Vec<f64>,
    pub d_g_w: Matrix,
    pub d_g_b: Vec<f64>,
}

impl AttentionGrad {
    pub(crate) fn zeros(input: &FeatureMap, p: &AttentionParams) -> Result<Self> {
        let [n, c, h, w] = input.dims();
        Ok(AttentionGrad {
            d_input: FeatureMap::zeros(n, c, h, w)?,
            d_theta_w: Matrix::zeros(p.theta_w.rows(), p.theta_w.cols()),
            d_theta_b: vec![0.0; p.theta_b.len()],
            d_phi_w: Matrix::zeros(p.phi_w.rows(), p.phi_w.cols()),
            d_phi_b: vec![0.0; p.phi_b.len()],
            d_g_w: Matrix::zeros(p.g_w.rows(), p.g_w.cols()),
            d_g_b: vec![0.0; p.g_b.len()],
        })
    }

    /// Parameter gradients in [`PARAM_NAMES`] order.
    pub fn param_blocks(&self) -> [&[f64]; 6] {
        [
            self.d_theta_w.as_slice(),
            &self.d_theta_b,
            self.d_phi_w.as_slice(),
            &self.d_phi_b,
            self.d_g_w.as_slice(),
            &self.d_g_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.d_input.as_slice().iter().all(|v| v.is_finite())
            && self.param_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Attention of query rows `q` over key/value rows `k`, `v`.
///
/// Returns `softmax(q kᵀ / scale) v`, plus the full affinity matrix when
/// `keep_affinity` is set. Without it the affinity is built in row chunks.
pub(crate) fn attend_qkv(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    scale: f64,
    keep_affinity: bool,
) -> (Matrix, Option<Matrix>) {
    let (m, dk) = (q.rows(), q.cols());
    let (keys, c) = (k.rows(), v.cols());
    debug_assert_eq!(k.cols(), dk);
    debug_assert_eq!(v.rows(), keys);
    let kt = k.transpose();
    let mut out = Matrix::zeros(m, c);
    let mut affinity = keep_affinity.then(|| Matrix::zeros(m, keys));
    let chunk = if keep_affinity {
        m.max(1)
    } else {
        (AFFINITY_CHUNK_ELEMS / keys.max(1)).clamp(1, m.max(1))
    };
    let mut scores = vec![0.0; chunk * keys];
    for r0 in (0..m).step_by(chunk) {
        let r1 = (r0 + chunk).min(m);
        let rows = r1 - r0;
        let s = &mut scores[..rows * keys];
        s.fill(0.0);
        gemm_acc(
            &q.as_slice()[r0 * dk..r1 * dk],
            kt.as_slice(),
            s,
            rows,
            dk,
            keys,
        );
        softmax_rows_in_place(s, keys, scale);
        if let Some(a) = affinity.as_mut() {
            a.as_mut_slice()[r0 * keys..r1 * keys].copy_from_slice(s);
        }
        gemm_acc(
            s,
            v.as_slice(),
            &mut out.as_mut_slice()[r0 * c..r1 * c],
            rows,
            keys,
            c,
        );
    }
    (out, affinity)
}

/// Dense attention over the rows of a positions-by-channels matrix.
pub fn attend(x: &Matrix, p: &AttentionParams, keep_affinity: bool) -> Result<(Matrix, Option<Matrix>)> {
    if x.cols() != p.channels() {
        return Err(IssaError::shape("attend", &x.shape(), &p.g_w.shape()));
    }
    let q = project_stream(x, &p.theta_w, &p.theta_b, p.relu)?;
    let k = project_stream(x, &p.phi_w, &p.phi_b, p.relu)?;
    let v = project_stream(x, &p.g_w, &p.g_b, p.relu)?;
    Ok(attend_qkv(&q, &k, &v, p.softmax_scale(), keep_affinity))
}

fn relu_mask(pre: &Matrix, grad: &mut Matrix) {
    for (g, p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate_linear_grad(
    x: &Matrix,
    d_pre: &Matrix,
    d_w: &mut Matrix,
    d_b: &mut [f64],
) -> Result<()> {
    // d_w += d_preᵀ x ; d_b += column sums of d_pre
    let dw = crate::tensor::matmul(&d_pre.transpose(), x)?;
    add_into(d_w.as_mut_slice(), dw.as_slice());
    for r in 0..d_pre.rows() {
        add_into(d_b, d_pre.row(r));
    }
    Ok(())
}

/// Reverse pass of [`attend`] for the loss `⟨upstream, output⟩`.
///
/// Parameter gradients are added into `acc`; the gradient with respect to
/// `x` is returned.
pub(crate) fn attend_backward(
    x: &Matrix,
    p: &AttentionParams,
    upstream: &Matrix,
    acc: &mut AttentionGrad,
) -> Result<Matrix> {
    use crate::tensor::matmul;

    let q_pre = linear(x, &p.theta_w, &p.theta_b)?;
    let k_pre = linear(x, &p.phi_w, &p.phi_b)?;
    let v_pre = linear(x, &p.g_w, &p.g_b)?;
    let act = |m: &Matrix| {
        let mut m = m.clone();
        if p.relu {
            for v in m.as_mut_slice() {
                *v = v.max(0.0);
            }
        }
        m
    };
    let (q, k, v) = (act(&q_pre), act(&k_pre), act(&v_pre));
    let scale = p.softmax_scale();
    let (_, a) = attend_qkv(&q, &k, &v, scale, true);
    let a = a.expect("affinity kept");
    if upstream.shape() != [x.rows(), v.cols()] {
        return Err(IssaError::shape("attend_backward", &upstream.shape(), &[x.rows(), v.cols()]));
    }

    let mut dv = matmul(&a.transpose(), upstream)?;
    let da = matmul(upstream, &v.transpose())?;
    // softmax Jacobian per row: diag(a) - a aᵀ, then the 1/scale of the logits
    let mut ds = Matrix::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let (ar, dar) = (a.row(r), da.row(r));
        let dot: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
        for (o, (ai, dai)) in ds.row_mut(r).iter_mut().zip(ar.iter().zip(dar)) {
            *o = ai * (dai - dot) / scale;
        }
    }
    let mut dq = matmul(&ds, &k)?;
    let mut dk = matmul(&ds.transpose(), &q)?;
    if p.relu {
        relu_mask(&q_pre, &mut dq);
        relu_mask(&k_pre, &mut dk);
        relu_mask(&v_pre, &mut dv);
    }

    accumulate_linear_grad(x, &dq, &mut acc.d_theta_w, &mut acc.d_theta_b)?;
    accumulate_linear_grad(x, &dk, &mut acc.d_phi_w, &mut acc.d_phi_b)?;
    accumulate_linear_grad(x, &dv, &mut acc.d_g_w, &mut acc.d_g_b)?;

    let mut dx = matmul(&dq, &p.theta_w)?;
    add_into(dx.as_mut_slice(), matmul(&dk, &p.phi_w)?.as_slice());
    add_into(dx.as_mut_slice(), matmul(&dv, &p.g_w)?.as_slice());
    Ok(dx)
}

/// Dense self-attention over all `H·W` positions of each batch item.
pub fn dense_sa_forward(x: &FeatureMap, p: &AttentionParams, fuse: Fuse) -> Result<FeatureMap> {
    check_input(x, p)?;
    let keep = capture::is_active();
    let mut out = FeatureMap::zeros(x.batch(), x.channels(), x.height(), x.width())?;
    for n in 0..x.batch() {
        let (z, a) = attend(&x.position_matrix(n), p, keep)?;
        if let Some(a) = a {
            capture::push(StageLabel::Dense, BlockAffinity::single(a));
        }
        out.set_position_matrix(n, &z)?;
    }
    let out = match fuse {
        Fuse::Residual => out.add(x)?,
        Fuse::None => out,
    };
    out.ensure_finite("dense_sa_forward")
}

/// Gradients of `⟨upstream, dense_sa_forward(x, p, fuse)⟩`.
pub fn dense_sa_backward(
    x: &FeatureMap,
    p: &AttentionParams,
    upstream: &FeatureMap,
    fuse: Fuse,
) -> Result<AttentionGrad> {
    check_input(x, p)?;
    if !upstream.same_shape(x) {
        return Err(IssaError::shape("dense_sa_backward", &upstream.dims(), &x.dims()));
    }
    let mut grad = AttentionGrad::zeros(x, p)?;
    for n in 0..x.batch() {
        let dx = attend_backward(&x.position_matrix(n), p, &upstream.position_matrix(n), &mut grad)?;
        grad.d_input.set_position_matrix(n, &dx)?;
    }
    if fuse == Fuse::Residual {
        grad.d_input = grad.d_input.add(upstream)?;
    }
    Ok(grad)
}

/// Average pooling of a positions matrix laid out on an `h × w` grid.
pub(crate) fn average_pool(x: &Matrix, h: usize, w: usize, factor: usize) -> Matrix {
    let (ph, pw) = (h / factor, w / factor);
    let c = x.cols();
    let denom = (factor * factor) as f64;
    let mut out = Matrix::zeros(ph * pw, c);
    for i in 0..ph {
        for j in 0..pw {
            let row = out.row_mut(i * pw + j);
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = (i * factor + dy) * w + j * factor + dx;
                    add_into(row, x.row(src));
                }
            }
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
    }
    out
}

/// Self-attention whose keys and values come from the input average-pooled
/// by `factor` along each spatial axis. Queries stay at full resolution, so
/// the affinity is `(H·W) × (H·W / factor²)`. No fusion is applied.
pub fn downsampled_sa_forward(x: &FeatureMap, p: &AttentionParams, factor: usize) -> Result<FeatureMap> {
    check_input(x, p)?;
    if factor == 0 || !x.height().is_multiple_of(factor) || !x.width().is_multiple_of(factor) {
        return Err(IssaError::param(format!(
            "downsampling factor {factor} must divide both H={} and W={}",
            x.height(),
            x.width()
        )));
    }
    let mut out = FeatureMap::zeros(x.batch(), x.channels(), x.height(), x.width())?;
    for n in 0..x.batch() {
        let xm = x.position_matrix(n);
        let pooled = average_pool(&xm, x.height(), x.width(), factor);
        let q = project_stream(&xm, &p.theta_w, &p.theta_b, p.relu)?;
        let k = project_stream(&pooled, &p.phi_w, &p.phi_b, p.relu)?;
        let v = project_stream(&pooled, &p.g_w, &p.g_b, p.relu)?;
        let (z, _) = attend_qkv(&q, &k, &v, p.softmax_scale(), false);
        out.set_position_matrix(n, &z)?;
    }
    out.ensure_finite("downsampled_sa_forward")
}
