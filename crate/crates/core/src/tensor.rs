//! Dense f64 substrate: rank-2 matrices, rank-4 NCHW feature maps, matrix
//! multiply, row softmax and position-wise linear projections.
//!
//! FLOP accounting (one multiply-add = 2 FLOPs):
//! - `matmul` of `m×k` by `k×n` registers `2·m·k·n`,
//! - `row_softmax` registers 4 per element,
//! - `project` registers `2·N·H·W·out·in` (bias adds are not counted).

use std::io::{Read, Write};

use crate::analysis::flops;
use crate::error::{IssaError, Result};
use crate::fault::{self, Fault};
use crate::rng::Rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IssaError::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IssaError::NonFinite("Matrix::new"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Entries i.i.d. uniform on `[-scale, scale)`.
    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng.next_symmetric()).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        max_abs_diff(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

const K_BLOCK: usize = 64;
const N_BLOCK: usize = 512;

/// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n`.
///
/// Every output element accumulates its `k` products in ascending `k` order
/// regardless of blocking, so results do not depend on how callers split rows.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    flops::record(2 * (m * k * n) as u64);
    for kb in (0..k).step_by(K_BLOCK) {
        let ke = (kb + K_BLOCK).min(k);
        for jb in (0..n).step_by(N_BLOCK) {
            let je = (jb + N_BLOCK).min(n);
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let o_row = &mut out[i * n + jb..i * n + je];
                for kk in kb..ke {
                    let aik = a_row[kk];
                    let b_row = &b[kk * n + jb..kk * n + je];
                    for (o, bv) in o_row.iter_mut().zip(b_row) {
                        *o += aik * bv;
                    }
                }
            }
        }
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(IssaError::shape("matmul", &a.shape(), &b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm_acc(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// In-place numerically stable softmax of each `cols`-wide row of `data`,
/// after dividing the logits by `scale`.
pub(crate) fn softmax_rows_in_place(data: &mut [f64], cols: usize, scale: f64) {
    flops::record(4 * data.len() as u64);
    let normalize = fault::active() != Fault::NoSoftmaxNorm;
    for row in data.chunks_exact_mut(cols) {
        let mut max = f64::NEG_INFINITY;
        for v in row.iter_mut() {
            *v /= scale;
            max = max.max(*v);
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        if normalize {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
}

/// Row-wise softmax of `m / scale`, with max subtraction.
pub fn row_softmax(m: &Matrix, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(IssaError::param(format!(
            "softmax scale must be positive and finite, got {scale}"
        )));
    }
    if !m.is_finite() {
        return Err(IssaError::NonFinite("row_softmax"));
    }
    let mut out = m.clone();
    if out.cols > 0 {
        softmax_rows_in_place(&mut out.data, out.cols, scale);
    }
    Ok(out)
}

/// Position-wise affine map on a positions-by-channels matrix:
/// `out[p] = weights · x[p] + bias`.
pub fn linear(x: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if weights.cols != x.cols {
        return Err(IssaError::shape("linear", &x.shape(), &weights.shape()));
    }
    if bias.len() != weights.rows {
        return Err(IssaError::shape("linear bias", &weights.shape(), &[bias.len()]));
    }
    let wt = weights.transpose();
    let mut out = Matrix::zeros(x.rows, weights.rows);
    gemm_acc(&x.data, &wt.data, &mut out.data, x.rows, x.cols, weights.rows);
    for row in out.data.chunks_exact_mut(weights.rows) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Rank-4 feature map in NCHW order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dims(batch, channels, height, width)?;
        let expected = batch * channels * height * width;
        if data.len() != expected {
            return Err(IssaError::shape(
                "FeatureMap::new",
                &[batch, channels, height, width],
                &[data.len()],
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IssaError::NonFinite("FeatureMap::new"));
        }
        Ok(FeatureMap {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(batch, channels, height, width)?;
        Ok(FeatureMap {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        })
    }

    pub fn from_fn(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut map = FeatureMap::zeros(batch, channels, height, width)?;
        let mut i = 0;
        for n in 0..batch {
            for c in 0..channels {
                for h in 0..height {
                    for w in 0..width {
                        map.data[i] = f(n, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        if map.data.iter().any(|v| !v.is_finite()) {
            return Err(IssaError::NonFinite("FeatureMap::from_fn"));
        }
        Ok(map)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial positions, `H·W`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.channels + c) * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Batch item `n` as a positions-by-channels matrix (`H·W × C`), rows in
    /// row-major spatial order.
    pub fn position_matrix(&self, n: usize) -> Matrix {
        let m = self.positions();
        let c = self.channels;
        let base = n * c * m;
        let mut out = Matrix::zeros(m, c);
        for ch in 0..c {
            let plane = &self.data[base + ch * m..base + (ch + 1) * m];
            for (p, v) in plane.iter().enumerate() {
                out.data[p * c + ch] = *v;
            }
        }
        out
    }

    /// Inverse of [`FeatureMap::position_matrix`].
    pub fn set_position_matrix(&mut self, n: usize, values: &Matrix) -> Result<()> {
        let m = self.positions();
        let c = self.channels;
        if values.shape() != [m, c] {
            return Err(IssaError::shape("set_position_matrix", &[m, c], &values.shape()));
        }
        let base = n * c * m;
        for ch in 0..c {
            let plane = &mut self.data[base + ch * m..base + (ch + 1) * m];
            for (p, v) in plane.iter_mut().enumerate() {
                *v = values.data[p * c + ch];
            }
        }
        Ok(())
    }

    /// Copy of the channel vector at position `p` of batch item `n`.
    pub fn channel_vector(&self, n: usize, p: usize) -> Vec<f64> {
        let m = self.positions();
        (0..self.channels)
            .map(|c| self.data[(n * self.channels + c) * m + p])
            .collect()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    /// Element-wise sum (residual fusion).
    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(IssaError::shape("add", &self.dims(), &other.dims()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(self.with_data(data))
    }

    /// A map with the same dimensions holding `data`.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> FeatureMap {
        debug_assert_eq!(data.len(), self.data.len());
        FeatureMap {
            batch: self.batch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        assert!(self.same_shape(other), "shape mismatch in max_abs_diff");
        max_abs_diff(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(IssaError::NonFinite(op))
        }
    }

    /// Writes the `ISSA-TENSOR v1` dump: an ASCII header line
    /// `"ISSA-TENSOR v1 <N> <C> <H> <W>\n"` followed by the values as
    /// little-endian IEEE-754 doubles in NCHW order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "ISSA-TENSOR v1 {} {} {} {}",
            self.batch, self.channels, self.height, self.width
        )?;
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut input: R) -> Result<FeatureMap> {
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            input.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
            if header.len() > 256 {
                return Err(IssaError::Parse("tensor dump header too long".into()));
            }
        }
        let header = String::from_utf8(header)
            .map_err(|_| IssaError::Parse("tensor dump header is not ASCII".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 6 || fields[0] != "ISSA-TENSOR" || fields[1] != "v1" {
            return Err(IssaError::Parse(format!("bad tensor dump header '{header}'")));
        }
        let mut dims = [0usize; 4];
        for (d, f) in dims.iter_mut().zip(&fields[2..]) {
            *d = f
                .parse()
                .map_err(|_| IssaError::Parse(format!("bad dimension '{f}'")))?;
        }
        let count = dims.iter().product::<usize>();
        let mut raw = vec![0u8; count * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        FeatureMap::new(dims[0], dims[1], dims[2], dims[3], data)
    }
}

fn check_dims(batch: usize, channels: usize, height: usize, width: usize) -> Result<()> {
    if batch == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(IssaError::param(format!(
            "feature map dimensions must be >= 1, got {batch}x{channels}x{height}x{width}"
        )));
    }
    Ok(())
}

/// Position-wise linear projection (a 1×1 convolution): for every `(n, h, w)`
/// the output channel vector is `weights · x[n, :, h, w] + bias`.
pub fn project(x: &FeatureMap, weights: &Matrix, bias: &[f64]) -> Result<FeatureMap> {
    if weights.cols() != x.channels() {
        return Err(IssaError::shape("project", &x.dims(), &weights.shape()));
    }
    if bias.len() != weights.rows() {
        return Err(IssaError::shape("project bias", &weights.shape(), &[bias.len()]));
    }
    let mut out = FeatureMap::zeros(x.batch(), weights.rows(), x.height(), x.width())?;
    for n in 0..x.batch() {
        let projected = linear(&x.position_matrix(n), weights, bias)?;
        out.set_position_matrix(n, &projected)?;
    }
    out.ensure_finite("project")
}

/// Feature map with entries i.i.d. uniform on `[-1, 1)`, drawn in NCHW order.
pub fn random_feature_map(
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    rng: &mut Rng,
) -> Result<FeatureMap> {
    check_dims(batch, channels, height, width)?;
    let data = (0..batch * channels * height * width)
        .map(|_| rng.next_symmetric())
        .collect();
    FeatureMap::new(batch, channels, height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    #[test]
    fn matmul_identity() {
        let b = Matrix::new(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_two_by_two() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::new(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(c, naive_matmul(&a, &b));
    }

    #[test]
    fn matmul_zero() {
        let mut rng = Rng::new(1);
        let b = Matrix::random(3, 4, 1.0, &mut rng);
        let c = matmul(&Matrix::zeros(2, 3), &b).unwrap();
        assert!(c.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn blocked_matmul_is_bit_identical_to_naive() {
        // Crosses both block boundaries.
        let mut rng = Rng::new(17);
        let a = Matrix::random(7, 150, 1.0, &mut rng);
        let b = Matrix::random(150, 600, 1.0, &mut rng);
        assert_eq!(matmul(&a, &b).unwrap(), naive_matmul(&a, &b));
    }

    #[test]
    fn matmul_registers_flops() {
        let ((), n) = flops::measure(|| {
            matmul(&Matrix::zeros(2, 2), &Matrix::zeros(2, 2)).unwrap();
        });
        assert_eq!(n, 16);
    }

    #[test]
    fn softmax_basic_rows() {
        let m = Matrix::new(2, 2, vec![0.0, 0.0, 3f64.ln(), 0.0]).unwrap();
        let s = row_softmax(&m, 1.0).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.get(1, 0) - 0.75).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_scale() {
        let m = Matrix::zeros(1, 2);
        assert!(matches!(row_softmax(&m, 0.0), Err(IssaError::Parameter(_))));
        assert!(matches!(row_softmax(&m, -1.0), Err(IssaError::Parameter(_))));
        assert!(matches!(row_softmax(&m, f64::NAN), Err(IssaError::Parameter(_))));
    }

    #[test]
    fn softmax_extreme_logits() {
        let m = Matrix::new(2, 3, vec![700.0, -700.0, 699.0, -700.0, -700.0, -699.5]).unwrap();
        let s = row_softmax(&m, 1.0).unwrap();
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row(r).iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }

    #[test]
    fn project_identity_is_exact() {
        let mut rng = Rng::new(2);
        let x = random_feature_map(2, 3, 2, 3, &mut rng).unwrap();
        let y = project(&x, &Matrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn project_zero_weights_gives_bias() {
        let mut rng = Rng::new(2);
        let x = random_feature_map(1, 3, 2, 2, &mut rng).unwrap();
        let bias = [0.25, -1.5];
        let y = project(&x, &Matrix::zeros(2, 3), &bias).unwrap();
        for p in 0..4 {
            assert_eq!(y.channel_vector(0, p), bias.to_vec());
        }
    }

    #[test]
    fn project_matches_per_position_oracle() {
        let mut rng = Rng::new(3);
        let x = random_feature_map(1, 4, 2, 2, &mut rng).unwrap();
        let w = Matrix::random(2, 4, 1.0, &mut rng);
        let b = vec![rng.next_symmetric(), rng.next_symmetric()];
        let y = project(&x, &w, &b).unwrap();
        for h in 0..2 {
            for wi in 0..2 {
                for o in 0..2 {
                    let mut s = b[o];
                    for c in 0..4 {
                        s += w.get(o, c) * x.get(0, c, h, wi);
                    }
                    assert!((y.get(0, o, h, wi) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn project_channel_mismatch() {
        let x = FeatureMap::zeros(1, 3, 1, 1).unwrap();
        assert!(matches!(
            project(&x, &Matrix::zeros(2, 4), &[0.0, 0.0]),
            Err(IssaError::Shape { .. })
        ));
    }

    #[test]
    fn project_registers_flops() {
        let x = FeatureMap::zeros(2, 4, 3, 5).unwrap();
        let (_, n) = flops::measure(|| project(&x, &Matrix::zeros(2, 4), &[0.0; 2]).unwrap());
        assert_eq!(n, 2 * 2 * 3 * 5 * 2 * 4);
    }

    #[test]
    fn random_map_range_and_determinism() {
        let a = random_feature_map(1, 1, 1, 1, &mut Rng::new(0)).unwrap();
        assert!((-1.0..1.0).contains(&a.as_slice()[0]));
        let mut r1 = Rng::new(8);
        let mut r2 = Rng::new(8);
        let x = random_feature_map(2, 3, 4, 5, &mut r1).unwrap();
        let y = random_feature_map(2, 3, 4, 5, &mut r2).unwrap();
        assert_eq!(x, y);
        assert_eq!(r1.position(), 120);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            random_feature_map(1, 0, 2, 2, &mut Rng::new(0)),
            Err(IssaError::Parameter(_))
        ));
        assert!(FeatureMap::new(1, 1, 1, 2, vec![0.0]).is_err());
        assert!(FeatureMap::new(1, 1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn position_matrix_round_trip() {
        let mut rng = Rng::new(4);
        let x = random_feature_map(2, 3, 2, 2, &mut rng).unwrap();
        let mut y = FeatureMap::zeros(2, 3, 2, 2).unwrap();
        for n in 0..2 {
            let m = x.position_matrix(n);
            assert_eq!(m.get(3, 1), x.get(n, 1, 1, 1));
            y.set_position_matrix(n, &m).unwrap();
        }
        assert_eq!(x, y);
    }

    #[test]
    fn dump_layout_is_exact() {
        let x = FeatureMap::new(1, 1, 1, 2, vec![1.0, -0.5]).unwrap();
        let mut bytes = Vec::new();
        x.write_dump(&mut bytes).unwrap();
        let mut expected = b"ISSA-TENSOR v1 1 1 1 2\n".to_vec();
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(FeatureMap::read_dump(&bytes[..]).unwrap(), x);
    }

    #[test]
    fn dump_rejects_bad_header() {
        assert!(matches!(
            FeatureMap::read_dump(&b"ISSA-TENSOR v2 1 1 1 1\n"[..]),
            Err(IssaError::Parse(_))
        ));
    }
}
