//! Dense row-major matrices and the 1-D convolution lowering used by both the
//! CNN basecaller and the systolic-array model.
//!
//! [`gemm_ref`] is the bit-stable reference product (64-bit accumulation) and
//! serves as the oracle for every faster path. [`gemm`] is the throughput path
//! used for training and inference.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix {rows}x{cols}");
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

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, alpha: f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Reference product: plain triple loop, 64-bit accumulation, one rounding
/// per output element.
pub fn gemm_ref(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "gemm {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += f64::from(a.data[i * k + p]) * f64::from(b.data[p * n + j]);
            }
            out.data[i * n + j] = acc as f32;
        }
    }
    Ok(out)
}

/// Fast single-precision product.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "gemm {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    sgemm(
        a.rows,
        a.cols,
        b.cols,
        StridedRef::row_major(&a.data, a.cols),
        StridedRef::row_major(&b.data, b.cols),
        0.0,
        &mut out.data,
    );
    Ok(out)
}

/// A borrowed operand with explicit row/column strides, so transposed views
/// can be fed to [`sgemm`] without copying.
#[derive(Clone, Copy)]
pub struct StridedRef<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> StridedRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        StridedRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// View of the transpose of a row-major `rows × cols` buffer.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        StridedRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c = a·b + beta·c` with `c` row-major `m × n`.
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: StridedRef<'_>,
    b: StridedRef<'_>,
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let last = |s: &StridedRef<'_>, r: usize, cdim: usize| {
        (r.saturating_sub(1)) * s.row_stride + cdim.saturating_sub(1) * s.col_stride
    };
    if k > 0 {
        assert!(last(&a, m, k) < a.data.len(), "lhs operand out of bounds");
        assert!(last(&b, k, n) < b.data.len(), "rhs operand out of bounds");
    }
    // SAFETY: bounds of every operand were checked above; matrixmultiply reads
    // a[i*rs + p*cs] for i < m, p < k (and likewise for b) and writes c
    // row-major with stride n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one 1-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv layer fields must be >= 1 (pad >= 0): {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_len(&self, t: usize) -> Result<usize> {
        conv_output_len(t, self.kernel, self.stride, self.pad)
    }

    pub fn weight_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.c_out
    }
}

/// `floor((T + 2·pad − kernel)/stride) + 1`, or an error if that is < 1.
pub fn conv_output_len(t: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument("kernel and stride must be >= 1".into()));
    }
    let padded = t + 2 * pad;
    if padded < kernel {
        return Err(Error::SignalTooShort {
            len: t,
            needed: kernel.saturating_sub(2 * pad),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Lowers a `channels × T` signal to a `(channels·kernel) × T_out` matrix whose
/// column `j` is the receptive window starting at `j·stride − pad`.
pub fn im2col(signal: &Matrix, kernel: usize, stride: usize, pad: usize) -> Result<Matrix> {
    let t_out = conv_output_len(signal.cols, kernel, stride, pad)?;
    let mut out = vec![0.0f32; signal.rows * kernel * t_out];
    im2col_into(
        &signal.data,
        signal.rows,
        signal.cols,
        kernel,
        stride,
        pad,
        t_out,
        &mut out,
    );
    Matrix::new(signal.rows * kernel, t_out, out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<T: Copy + Default>(
    signal: &[T],
    channels: usize,
    t: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), channels * kernel * t_out);
    for c in 0..channels {
        let src = &signal[c * t..(c + 1) * t];
        for kk in 0..kernel {
            let dst = &mut out[(c * kernel + kk) * t_out..(c * kernel + kk + 1) * t_out];
            if stride == 1 {
                // Contiguous shifted copy with zero fill at both ends.
                let shift = kk as isize - pad as isize;
                for (j, d) in dst.iter_mut().enumerate() {
                    let idx = j as isize + shift;
                    *d = if idx >= 0 && (idx as usize) < t {
                        src[idx as usize]
                    } else {
                        T::default()
                    };
                }
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    let idx = (j * stride + kk) as isize - pad as isize;
                    *d = if idx >= 0 && (idx as usize) < t {
                        src[idx as usize]
                    } else {
                        T::default()
                    };
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the signal.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add(
    cols: &[f32],
    channels: usize,
    t: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), channels * t);
    for c in 0..channels {
        let dst = &mut out[c * t..(c + 1) * t];
        for kk in 0..kernel {
            let src = &cols[(c * kernel + kk) * t_out..(c * kernel + kk + 1) * t_out];
            for (j, &g) in src.iter().enumerate() {
                let idx = (j * stride + kk) as isize - pad as isize;
                if idx >= 0 && (idx as usize) < t {
                    dst[idx as usize] += g;
                }
            }
        }
    }
}

/// Direct (non-lowered) 1-D convolution. `weight` is `(c_out, c_in, kernel)`
/// row-major, `bias` has `c_out` entries.
pub fn conv1d_direct(
    input: &Matrix,
    layer: &ConvLayerSpec,
    weight: &[f32],
    bias: &[f32],
) -> Result<Matrix> {
    layer.validate()?;
    if input.rows != layer.c_in {
        return Err(Error::Shape(format!(
            "conv input has {} channels, layer expects {}",
            input.rows, layer.c_in
        )));
    }
    if weight.len() != layer.weight_count() || bias.len() != layer.c_out {
        return Err(Error::Shape(format!(
            "conv weights {}+{} do not match {:?}",
            weight.len(),
            bias.len(),
            layer
        )));
    }
    let t = input.cols;
    let t_out = layer.output_len(t)?;
    let k = layer.kernel;
    let mut out = Matrix::zeros(layer.c_out, t_out);
    for o in 0..layer.c_out {
        for j in 0..t_out {
            let mut acc = 0.0f64;
            for c in 0..layer.c_in {
                for kk in 0..k {
                    let idx = (j * layer.stride + kk) as isize - layer.pad as isize;
                    if idx >= 0 && (idx as usize) < t {
                        acc += f64::from(weight[(o * layer.c_in + c) * k + kk])
                            * f64::from(input.get(c, idx as usize));
                    }
                }
            }
            out.set(o, j, (acc + f64::from(bias[o])) as f32);
        }
    }
    Ok(out)
}

/// Signed 8-bit matrix with a single per-tensor scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i8>,
    pub scale: f32,
}

impl QuantizedMatrix {
    pub fn dequantize(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&q| f32::from(q) * self.scale).collect(),
        }
    }

    /// The raw integer codes as an (exactly representable) float matrix.
    pub fn codes_as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&q| f32::from(q)).collect(),
        }
    }
}

/// Symmetric per-tensor quantization: `scale = max|m| / 127` (1 for an
/// all-zero matrix), codes rounded half away from zero and clamped to ±127.
pub fn quantize_int8(m: &Matrix) -> Result<QuantizedMatrix> {
    if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let max_abs = m.max_abs();
    let scale = if max_abs == 0.0 { 1.0 } else { max_abs / 127.0 };
    let data = quantize_slice(&m.data, scale);
    Ok(QuantizedMatrix {
        rows: m.rows,
        cols: m.cols,
        data,
        scale,
    })
}

pub(crate) fn quantize_slice(values: &[f32], scale: f32) -> Vec<i8> {
    values
        .iter()
        .map(|&v| (v / scale).round().clamp(-127.0, 127.0) as i8)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0f32..1.0))
    }

    fn assert_close(a: &Matrix, b: &Matrix, rel: f32) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let tol = rel * x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn gemm_ref_two_by_two() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = gemm_ref(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_ref_identity_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 5, 7);
        assert_eq!(gemm_ref(&a, &Matrix::identity(7)).unwrap(), a);
        assert_eq!(gemm_ref(&Matrix::identity(5), &a).unwrap(), a);
        assert!(matches!(gemm_ref(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn gemm_ref_matches_per_element_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 8, 8);
        let b = random_matrix(&mut rng, 8, 8);
        let c = gemm_ref(&a, &b).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8)
                    .map(|p| f64::from(a.get(i, p)) * f64::from(b.get(p, j)))
                    .sum();
                assert_eq!(c.get(i, j), dot as f32);
            }
        }
    }

    #[test]
    fn fast_gemm_agrees_with_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.random_range(1..40),
                rng.random_range(1..40),
                rng.random_range(1..40),
            );
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            assert_close(&gemm(&a, &b).unwrap(), &gemm_ref(&a, &b).unwrap(), 1e-5);
        }
    }

    #[test]
    fn im2col_layouts() {
        let s = Matrix::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = im2col(&s, 2, 1, 0).unwrap();
        assert_eq!((c.rows(), c.cols()), (2, 3));
        assert_eq!((c.get(0, 0), c.get(1, 0)), (1.0, 2.0));

        assert_eq!(im2col(&s, 1, 1, 0).unwrap(), s);

        let s5 = Matrix::new(1, 5, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let c = im2col(&s5, 3, 2, 1).unwrap();
        assert_eq!(c.cols(), 3);
        assert_eq!(
            (0..3).map(|r| c.get(r, 0)).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0]
        );
        assert_eq!(
            (0..3).map(|r| c.get(r, 2)).collect::<Vec<_>>(),
            vec![4.0, 5.0, 0.0]
        );

        assert!(im2col(&s, 9, 1, 0).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (ch, t, k, s, p) = (3, 17, 5, 2, 2);
        let x = random_matrix(&mut rng, ch, t);
        let cols = im2col(&x, k, s, p).unwrap();
        let y = random_matrix(&mut rng, cols.rows(), cols.cols());
        let lhs: f64 = cols
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum();
        let mut back = vec![0.0; ch * t];
        col2im_add(y.as_slice(), ch, t, k, s, p, cols.cols(), &mut back);
        let rhs: f64 = x
            .as_slice()
            .iter()
            .zip(&back)
            .map(|(a, b)| f64::from(*a) * f64::from(*b))
            .sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn conv_identity_and_delta_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 1, 12);
        let one = ConvLayerSpec { c_in: 1, c_out: 1, kernel: 1, stride: 1, pad: 0 };
        assert_eq!(conv1d_direct(&x, &one, &[1.0], &[0.0]).unwrap(), x);
        let delta = ConvLayerSpec { c_in: 1, c_out: 1, kernel: 3, stride: 1, pad: 1 };
        assert_eq!(conv1d_direct(&x, &delta, &[0.0, 1.0, 0.0], &[0.0]).unwrap(), x);
        assert!(conv1d_direct(&x, &delta, &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn conv_matches_lowered_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = ConvLayerSpec { c_in: 2, c_out: 3, kernel: 3, stride: 1, pad: 1 };
        let x = random_matrix(&mut rng, 2, 16);
        let w = random_matrix(&mut rng, 3, 6);
        let bias = vec![0.0; 3];
        let direct = conv1d_direct(&x, &layer, w.as_slice(), &bias).unwrap();
        let lowered = gemm_ref(&w, &im2col(&x, 3, 1, 1).unwrap()).unwrap();
        assert_close(&direct, &lowered, 1e-5);
    }

    #[test]
    fn quantize_edge_cases() {
        let q = quantize_int8(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.data.iter().all(|&v| v == 0));

        let q = quantize_int8(&Matrix::new(1, 1, vec![127.0]).unwrap()).unwrap();
        assert_eq!((q.data[0], q.scale), (127, 1.0));

        let bad = Matrix::new(1, 2, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(quantize_int8(&bad), Err(Error::NonFinite(1))));
    }

    #[test]
    fn matrix_constructor_rejects_bad_shapes() {
        assert!(Matrix::new(0, 3, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
