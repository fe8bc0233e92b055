use crate::mat_engine::conv_to_gemm_dims;
use crate::signal_sim::RawSignal;
use crate::tensor::{col2im_add, im2col_into, quantize_slice, sgemm, StridedRef};
use crate::{Error, Result};

use super::{CnnSpec, LogitFrame, Weights, NUM_CLASSES};

/// Activations kept by a training forward pass.
pub struct ForwardCache {
    /// im2col of each layer's input, `(c_in·kernel) × t_out`.
    cols: Vec<Vec<f32>>,
    /// Post-activation output of each layer, `c_out × t_out`.
    acts: Vec<Vec<f32>>,
    /// `lens[l]` is the input length of layer `l`; the last entry is `T'`.
    lens: Vec<usize>,
}

fn check_len(spec: &CnnSpec, len: usize) -> Result<usize> {
    let rf = spec.receptive_field();
    if len < rf {
        return Err(Error::SignalTooShort { len, needed: rf });
    }
    spec.output_len(len)
}

/// Runs all layers; ReLU between layers, none after the head.
pub fn forward(spec: &CnnSpec, weights: &Weights, signal: &RawSignal) -> Result<LogitFrame> {
    forward_samples(spec, weights, &signal.samples)
}

pub fn forward_samples(spec: &CnnSpec, weights: &Weights, samples: &[f32]) -> Result<LogitFrame> {
    run(spec, weights, samples, false).map(|(logits, _)| logits)
}

pub(crate) fn forward_train(
    spec: &CnnSpec,
    weights: &Weights,
    samples: &[f32],
) -> Result<(LogitFrame, ForwardCache)> {
    let (logits, cache) = run(spec, weights, samples, true)?;
    Ok((logits, cache.expect("cache requested")))
}

fn run(
    spec: &CnnSpec,
    weights: &Weights,
    samples: &[f32],
    keep: bool,
) -> Result<(LogitFrame, Option<ForwardCache>)> {
    weights.check(spec)?;
    check_len(spec, samples.len())?;
    let n_layers = spec.layers.len();
    let mut x = samples.to_vec();
    let mut t = samples.len();
    let mut cache = keep.then(|| ForwardCache {
        cols: Vec::with_capacity(n_layers),
        acts: Vec::with_capacity(n_layers),
        lens: vec![t],
    });
    for (i, (layer, lw)) in spec.layers.iter().zip(&weights.layers).enumerate() {
        let t_out = layer.output_len(t)?;
        let rows = layer.c_in * layer.kernel;
        let mut cols = vec![0.0f32; rows * t_out];
        im2col_into(&x, layer.c_in, t, layer.kernel, layer.stride, layer.pad, t_out, &mut cols);
        let mut y = vec![0.0f32; layer.c_out * t_out];
        sgemm(
            layer.c_out,
            rows,
            t_out,
            StridedRef::row_major(&lw.weight, rows),
            StridedRef::row_major(&cols, t_out),
            0.0,
            &mut y,
        );
        let relu = i + 1 < n_layers;
        for (o, row) in y.chunks_exact_mut(t_out).enumerate() {
            let b = lw.bias[o];
            for v in row {
                *v += b;
                if relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if let Some(c) = cache.as_mut() {
            c.cols.push(cols);
            c.acts.push(y.clone());
            c.lens.push(t_out);
        }
        x = y;
        t = t_out;
    }
    Ok((LogitFrame::new(t, transpose_head(&x, t))?, cache))
}

/// `5 × T'` channel-major head output to `T' × 5` frame-major logits.
fn transpose_head(x: &[f32], t: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; t * NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        for j in 0..t {
            out[j * NUM_CLASSES + c] = x[c * t + j];
        }
    }
    out
}

/// Gradient of the loss with respect to every parameter, in
/// [`Weights::flatten`] order, given `∂loss/∂logits` as `T' × 5`.
pub(crate) fn backward(
    spec: &CnnSpec,
    weights: &Weights,
    cache: &ForwardCache,
    grad_logits: &[f32],
) -> Vec<f32> {
    let n_layers = spec.layers.len();
    let t_final = *cache.lens.last().unwrap();
    debug_assert_eq!(grad_logits.len(), t_final * NUM_CLASSES);

    let mut offsets = Vec::with_capacity(n_layers);
    let mut total = 0;
    for l in &spec.layers {
        offsets.push(total);
        total += l.param_count();
    }
    let mut grads = vec![0.0f32; total];

    // dY for the head, channel-major.
    let mut dy = vec![0.0f32; NUM_CLASSES * t_final];
    for j in 0..t_final {
        for c in 0..NUM_CLASSES {
            dy[c * t_final + j] = grad_logits[j * NUM_CLASSES + c];
        }
    }

    for i in (0..n_layers).rev() {
        let layer = &spec.layers[i];
        let rows = layer.c_in * layer.kernel;
        let t_in = cache.lens[i];
        let t_out = cache.lens[i + 1];
        let off = offsets[i];
        let (gw, gb) = grads[off..off + layer.param_count()].split_at_mut(layer.weight_count());

        // dW = dY · colsᵀ
        sgemm(
            layer.c_out,
            t_out,
            rows,
            StridedRef::row_major(&dy, t_out),
            StridedRef::transposed(&cache.cols[i], t_out),
            0.0,
            gw,
        );
        for (o, row) in dy.chunks_exact(t_out).enumerate() {
            gb[o] = row.iter().sum();
        }
        if i == 0 {
            break;
        }

        // dcols = Wᵀ · dY, then scatter back and mask by the previous ReLU.
        let mut dcols = vec![0.0f32; rows * t_out];
        sgemm(
            rows,
            layer.c_out,
            t_out,
            StridedRef::transposed(&weights.layers[i].weight, rows),
            StridedRef::row_major(&dy, t_out),
            0.0,
            &mut dcols,
        );
        let mut dx = vec![0.0f32; layer.c_in * t_in];
        col2im_add(&dcols, layer.c_in, t_in, layer.kernel, layer.stride, layer.pad, t_out, &mut dx);
        for (g, &a) in dx.iter_mut().zip(&cache.acts[i - 1]) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        dy = dx;
    }
    grads
}

/// Multiply-accumulate count of one forward pass over `t` samples.
pub fn macs_for_len(spec: &CnnSpec, t: usize) -> Result<u64> {
    let mut len = t;
    let mut total = 0u64;
    for l in &spec.layers {
        let (m, k, n) = conv_to_gemm_dims(l, len)?;
        total += (m * k * n) as u64;
        len = n;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub codes: Vec<i8>,
    pub scale: f32,
    pub bias: Vec<f32>,
}

/// Per-tensor int8 weights for the integer (MAT int mode) inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedWeights {
    pub fn from_weights(w: &Weights) -> Result<Self> {
        let layers = w
            .layers
            .iter()
            .map(|l| {
                if let Some(i) = l.weight.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(i));
                }
                let max = l.weight.iter().fold(0.0f32, |m, v| m.max(v.abs()));
                let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
                Ok(QuantizedLayer {
                    codes: quantize_slice(&l.weight, scale),
                    scale,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedWeights { layers })
    }

    /// Storage footprint: one byte per weight, 32-bit biases and scales.
    pub fn storage_bytes(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.codes.len() as u64 + 4 * l.bias.len() as u64 + 4)
            .sum()
    }
}

/// `c += a · b` over int8 operands with int32 accumulation.
fn igemm(m: usize, k: usize, n: usize, a: &[i8], b: &[i8], c: &mut [i32]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = i32::from(a[i * k + p]);
            if av == 0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * i32::from(bv);
            }
        }
    }
}

/// Inference with int8 weights and per-layer dynamically quantized int8
/// activations, accumulating in int32 exactly as the array's int mode does.
pub fn forward_samples_int8(
    spec: &CnnSpec,
    weights: &QuantizedWeights,
    samples: &[f32],
) -> Result<LogitFrame> {
    if weights.layers.len() != spec.layers.len() {
        return Err(Error::Shape("quantized weights do not match spec".into()));
    }
    check_len(spec, samples.len())?;
    let n_layers = spec.layers.len();
    let mut x = samples.to_vec();
    let mut t = samples.len();
    for (i, (layer, qw)) in spec.layers.iter().zip(&weights.layers).enumerate() {
        if qw.codes.len() != layer.weight_count() || qw.bias.len() != layer.c_out {
            return Err(Error::Shape(format!("layer {i} quantized weights do not match")));
        }
        let t_out = layer.output_len(t)?;
        let rows = layer.c_in * layer.kernel;
        let max = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let x_scale = if max == 0.0 { 1.0 } else { max / 127.0 };
        let xq = quantize_slice(&x, x_scale);
        let mut cols = vec![0i8; rows * t_out];
        im2col_into(&xq, layer.c_in, t, layer.kernel, layer.stride, layer.pad, t_out, &mut cols);
        let mut acc = vec![0i32; layer.c_out * t_out];
        igemm(layer.c_out, rows, t_out, &qw.codes, &cols, &mut acc);
        let scale = qw.scale * x_scale;
        let relu = i + 1 < n_layers;
        let mut y = vec![0.0f32; layer.c_out * t_out];
        for o in 0..layer.c_out {
            for j in 0..t_out {
                let mut v = acc[o * t_out + j] as f32 * scale + qw.bias[o];
                if relu && v < 0.0 {
                    v = 0.0;
                }
                y[o * t_out + j] = v;
            }
        }
        x = y;
        t = t_out;
    }
    LogitFrame::new(t, transpose_head(&x, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basecaller::{ConvLayerSpec, LayerWeights};
    use crate::tensor::{conv1d_direct, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> CnnSpec {
        CnnSpec {
            layers: vec![
                ConvLayerSpec { c_in: 1, c_out: 4, kernel: 5, stride: 1, pad: 2 },
                ConvLayerSpec { c_in: 4, c_out: 6, kernel: 3, stride: 2, pad: 1 },
                ConvLayerSpec { c_in: 6, c_out: 5, kernel: 3, stride: 1, pad: 0 },
            ],
        }
    }

    fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    /// Layer-by-layer chain through the direct convolution.
    fn direct_chain(spec: &CnnSpec, w: &Weights, samples: &[f32]) -> Vec<f32> {
        let mut x = Matrix::new(1, samples.len(), samples.to_vec()).unwrap();
        for (i, (l, lw)) in spec.layers.iter().zip(&w.layers).enumerate() {
            x = conv1d_direct(&x, l, &lw.weight, &lw.bias).unwrap();
            if i + 1 < spec.layers.len() {
                for v in x.as_mut_slice() {
                    *v = v.max(0.0);
                }
            }
        }
        x.transpose().into_vec()
    }

    #[test]
    fn matches_direct_conv_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = small_spec();
        let w = Weights::init(&spec, 2);
        let s = random_signal(&mut rng, 64);
        let got = forward_samples(&spec, &w, &s).unwrap();
        let want = direct_chain(&spec, &w, &s);
        assert_eq!(got.frames, spec.output_len(64).unwrap());
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_give_bias_only_frames() {
        let spec = small_spec();
        let mut w = Weights::zeros(&spec);
        w.layers[2].bias = vec![0.5, -1.0, 2.0, 0.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = forward_samples(&spec, &w, &random_signal(&mut rng, 40)).unwrap();
        for t in 0..out.frames {
            assert_eq!(out.frame(t), &[0.5, -1.0, 2.0, 0.0, 3.0]);
        }
    }

    #[test]
    fn relu_positive_homogeneity() {
        // Doubling the last hidden layer doubles its (post-ReLU) output, so
        // the head's pre-bias output doubles.
        let spec = small_spec();
        let mut w = Weights::init(&spec, 4);
        w.layers[2].bias = vec![0.0; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_signal(&mut rng, 50);
        let base = forward_samples(&spec, &w, &s).unwrap();
        let LayerWeights { weight, bias } = &mut w.layers[1];
        weight.iter_mut().for_each(|v| *v *= 2.0);
        bias.iter_mut().for_each(|v| *v *= 2.0);
        let doubled = forward_samples(&spec, &w, &s).unwrap();
        for (a, b) in base.data.iter().zip(&doubled.data) {
            assert!((2.0 * a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let spec = CnnSpec::default_spec();
        let w = Weights::zeros(&spec);
        let err = forward_samples(&spec, &w, &[0.0; 50]).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 50, needed: 97 }));
    }

    #[test]
    fn output_length_depends_only_on_input_length() {
        let spec = CnnSpec::default_spec();
        let w = Weights::init(&spec, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [97, 98, 99, 100, 101, 333] {
            let out = forward_samples(&spec, &w, &random_signal(&mut rng, n)).unwrap();
            assert_eq!(out.frames, n.div_ceil(4));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = small_spec();
        let w = Weights::init(&spec, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_signal(&mut rng, 30);
        let (logits, cache) = forward_train(&spec, &w, &s).unwrap();
        // Loss = <r, logits> for a fixed random r; its gradient w.r.t. logits is r.
        let r: Vec<f32> = (0..logits.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |w: &Weights| -> f64 {
            let out = forward_samples(&spec, w, &s).unwrap();
            out.data.iter().zip(&r).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
        };
        let grads = backward(&spec, &w, &cache, &r);
        let flat = w.flatten();
        let mut probe = w.clone();
        let h = 1e-2f32;
        for idx in (0..flat.len()).step_by(7) {
            let mut p = flat.clone();
            p[idx] += h;
            probe.unflatten_from(&p);
            let up = loss(&probe);
            p[idx] -= 2.0 * h;
            probe.unflatten_from(&p);
            let down = loss(&probe);
            let fd = (up - down) / (2.0 * f64::from(h));
            let g = f64::from(grads[idx]);
            assert!((fd - g).abs() <= 2e-2 * g.abs().max(0.05), "param {idx}: {fd} vs {g}");
        }
    }

    #[test]
    fn int8_path_tracks_float_path() {
        let spec = small_spec();
        let w = Weights::init(&spec, 10);
        let q = QuantizedWeights::from_weights(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_signal(&mut rng, 80);
        let f = forward_samples(&spec, &w, &s).unwrap();
        let i = forward_samples_int8(&spec, &q, &s).unwrap();
        let max = f.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (a, b) in f.data.iter().zip(&i.data) {
            assert!((a - b).abs() <= 0.05 * max, "{a} vs {b}");
        }
    }

    #[test]
    fn mac_count_sums_layer_gemms() {
        let spec = CnnSpec::default_spec();
        let mut expected = 0u64;
        let mut len = 4000;
        for l in &spec.layers {
            let t_out = (len + 2 * l.pad - l.kernel) / l.stride + 1;
            expected += (l.c_out * l.c_in * l.kernel * t_out) as u64;
            len = t_out;
        }
        assert_eq!(macs_for_len(&spec, 4000).unwrap(), expected);
    }
}
