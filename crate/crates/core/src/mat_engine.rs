//! Model of the MAT accelerator: a P×P output-stationary systolic array.
//!
//! [`systolic_gemm`] runs a register-level simulation of each output tile
//! (skewed operand injection, one hop per cycle) and reports the cycles it
//! took. [`systolic_cycles`] is the closed form of the same schedule and is
//! what the perf model uses for large workloads.

use serde::{Deserialize, Serialize};

use crate::tensor::{quantize_int8, ConvLayerSpec, Matrix, QuantizedMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NumericMode {
    /// int8 operands, int32 accumulators.
    Int8,
    /// float32 operands.
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystolicConfig {
    pub array_dim: usize,
    pub setup_cycles: u64,
    pub numeric_mode: NumericMode,
}

impl Default for SystolicConfig {
    fn default() -> Self {
        SystolicConfig {
            array_dim: 4,
            setup_cycles: 16,
            numeric_mode: NumericMode::Int8,
        }
    }
}

impl SystolicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.array_dim == 0 {
            return Err(Error::Config("systolic array_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EngineResult {
    pub output: Matrix,
    pub cycles: u64,
    pub macs: u64,
    /// Raw int32 accumulators (int mode only), row-major M×N.
    pub accumulators: Option<Vec<i32>>,
}

/// Cycles for an `M×K × K×N` product: every (possibly partial) P×P output
/// tile streams K operands plus `2P − 2` fill/drain cycles, plus one setup.
pub fn systolic_cycles(m: usize, k: usize, n: usize, cfg: &SystolicConfig) -> u64 {
    let p = cfg.array_dim;
    let tiles = m.div_ceil(p) as u64 * n.div_ceil(p) as u64;
    tiles * (k + 2 * p - 2) as u64 + cfg.setup_cycles
}

/// Core-only execution baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub macs_per_cycle: f64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig { macs_per_cycle: 1.0 }
    }
}

pub fn core_gemm_cycles(m: usize, k: usize, n: usize, cfg: &CoreConfig) -> u64 {
    let macs = (m as u64) * (k as u64) * (n as u64);
    (macs as f64 / cfg.macs_per_cycle).ceil() as u64
}

/// GEMM dimensions of a convolution layer lowered through im2col.
pub fn conv_to_gemm_dims(layer: &ConvLayerSpec, t: usize) -> Result<(usize, usize, usize)> {
    layer.validate()?;
    let t_out = layer.output_len(t)?;
    Ok((layer.c_out, layer.c_in * layer.kernel, t_out))
}

/// Accumulator behaviour of one processing element.
trait Pe: Copy + Default {
    type Acc: Copy + Default;
    fn mac(acc: Self::Acc, a: Self, b: Self) -> Self::Acc;
}

impl Pe for i8 {
    type Acc = i32;
    #[inline]
    fn mac(acc: i32, a: i8, b: i8) -> i32 {
        acc + i32::from(a) * i32::from(b)
    }
}

impl Pe for f32 {
    // Wide accumulator keeps the float path on the reference rounding path.
    type Acc = f64;
    #[inline]
    fn mac(acc: f64, a: f32, b: f32) -> f64 {
        acc + f64::from(a) * f64::from(b)
    }
}

/// Cycle-stepped simulation of an output-stationary array over all tiles.
/// Returns the accumulators (row-major M×N) and the simulated cycle count.
fn simulate<T: Pe>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    cfg: &SystolicConfig,
) -> (Vec<T::Acc>, u64) {
    let p = cfg.array_dim;
    let mut out = vec![T::Acc::default(); m * n];
    let mut cycles = cfg.setup_cycles;

    // Operand registers: a flows east, b flows south. `None` is a bubble.
    let mut a_reg: Vec<Option<T>> = vec![None; p * p];
    let mut b_reg: Vec<Option<T>> = vec![None; p * p];
    let mut acc: Vec<T::Acc> = vec![T::Acc::default(); p * p];

    for ti in (0..m).step_by(p) {
        for tj in (0..n).step_by(p) {
            a_reg.fill(None);
            b_reg.fill(None);
            acc.fill(T::Acc::default());
            let mut remaining = p * p * k;
            let mut t = 0usize;
            while remaining > 0 {
                // Shift east / south, far side first.
                for r in 0..p {
                    for c in (1..p).rev() {
                        a_reg[r * p + c] = a_reg[r * p + c - 1];
                    }
                }
                for c in 0..p {
                    for r in (1..p).rev() {
                        b_reg[r * p + c] = b_reg[(r - 1) * p + c];
                    }
                }
                // Skewed injection: row r sees a[.., t - r], column c sees b[t - c, ..].
                for r in 0..p {
                    a_reg[r * p] = t.checked_sub(r).filter(|&kk| kk < k).map(|kk| {
                        let row = ti + r;
                        if row < m {
                            a[row * k + kk]
                        } else {
                            T::default()
                        }
                    });
                }
                for c in 0..p {
                    b_reg[c] = t.checked_sub(c).filter(|&kk| kk < k).map(|kk| {
                        let col = tj + c;
                        if col < n {
                            b[kk * n + col]
                        } else {
                            T::default()
                        }
                    });
                }
                for i in 0..p * p {
                    if let (Some(x), Some(y)) = (a_reg[i], b_reg[i]) {
                        acc[i] = T::mac(acc[i], x, y);
                        remaining -= 1;
                    }
                }
                t += 1;
            }
            cycles += t as u64;
            for r in 0..p.min(m - ti) {
                for c in 0..p.min(n - tj) {
                    out[(ti + r) * n + tj + c] = acc[r * p + c];
                }
            }
        }
    }
    (out, cycles)
}

fn check_dims(a_rows: usize, a_cols: usize, b_rows: usize, b_cols: usize) -> Result<()> {
    if a_cols != b_rows {
        return Err(Error::Shape(format!(
            "systolic gemm {a_rows}x{a_cols} by {b_rows}x{b_cols}"
        )));
    }
    Ok(())
}

/// Runs a GEMM through the array in the configured numeric mode. In int mode
/// both operands are quantized per tensor first.
pub fn systolic_gemm(a: &Matrix, b: &Matrix, cfg: &SystolicConfig) -> Result<EngineResult> {
    cfg.validate()?;
    check_dims(a.rows(), a.cols(), b.rows(), b.cols())?;
    match cfg.numeric_mode {
        NumericMode::Int8 => {
            let qa = quantize_int8(a)?;
            let qb = quantize_int8(b)?;
            systolic_gemm_int8(&qa, &qb, cfg)
        }
        NumericMode::Float32 => {
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let (acc, cycles) = simulate(a.as_slice(), b.as_slice(), m, k, n, cfg);
            let output = Matrix::new(m, n, acc.into_iter().map(|v| v as f32).collect())?;
            Ok(EngineResult {
                output,
                cycles,
                macs: (m * k * n) as u64,
                accumulators: None,
            })
        }
    }
}

/// Integer path on pre-quantized operands. Output element `(i, j)` is
/// `acc[i][j] as f32 * (scale_a * scale_b)`.
pub fn systolic_gemm_int8(
    a: &QuantizedMatrix,
    b: &QuantizedMatrix,
    cfg: &SystolicConfig,
) -> Result<EngineResult> {
    cfg.validate()?;
    check_dims(a.rows, a.cols, b.rows, b.cols)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let (acc, cycles) = simulate(&a.data, &b.data, m, k, n, cfg);
    let scale = a.scale * b.scale;
    let output = Matrix::new(m, n, acc.iter().map(|&v| v as f32 * scale).collect())?;
    Ok(EngineResult {
        output,
        cycles,
        macs: (m * k * n) as u64,
        accumulators: Some(acc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gemm_ref;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cycle_formula_instances() {
        let cfg = SystolicConfig::default();
        assert_eq!(systolic_cycles(4, 4, 4, &cfg), 26);
        assert_eq!(systolic_cycles(64, 64, 64, &cfg), 17_936);
    }

    #[test]
    fn simulated_cycles_match_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [NumericMode::Int8, NumericMode::Float32] {
            let cfg = SystolicConfig { numeric_mode: mode, ..Default::default() };
            for _ in 0..30 {
                let (m, k, n) = (
                    rng.random_range(1..20),
                    rng.random_range(1..20),
                    rng.random_range(1..20),
                );
                let a = Matrix::from_fn(m, k, |_, _| rng.random_range(-1.0..1.0));
                let b = Matrix::from_fn(k, n, |_, _| rng.random_range(-1.0..1.0));
                let r = systolic_gemm(&a, &b, &cfg).unwrap();
                assert_eq!(r.cycles, systolic_cycles(m, k, n, &cfg));
                assert_eq!(r.macs, (m * k * n) as u64);
            }
        }
    }

    #[test]
    fn float_mode_equals_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = SystolicConfig { numeric_mode: NumericMode::Float32, ..Default::default() };
        let a = Matrix::from_fn(9, 13, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(13, 6, |_, _| rng.random_range(-1.0..1.0));
        let r = systolic_gemm(&a, &b, &cfg).unwrap();
        assert_eq!(r.output, gemm_ref(&a, &b).unwrap());
    }

    #[test]
    fn int_mode_equals_integer_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = Matrix::from_fn(7, 10, |_, _| rng.random_range(-3.0..3.0));
        let b = Matrix::from_fn(10, 5, |_, _| rng.random_range(-3.0..3.0));
        let qa = quantize_int8(&a).unwrap();
        let qb = quantize_int8(&b).unwrap();
        let r = systolic_gemm_int8(&qa, &qb, &SystolicConfig::default()).unwrap();
        let reference = gemm_ref(&qa.codes_as_matrix(), &qb.codes_as_matrix()).unwrap();
        let scale = qa.scale * qb.scale;
        for (i, (&acc, &exact)) in r
            .accumulators
            .as_ref()
            .unwrap()
            .iter()
            .zip(reference.as_slice())
            .enumerate()
        {
            assert_eq!(acc as f32, exact);
            assert_eq!(r.output.as_slice()[i], exact * scale);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(
            systolic_gemm(&a, &a, &SystolicConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_dims_and_core_cycles() {
        let layer = ConvLayerSpec { c_in: 1, c_out: 8, kernel: 3, stride: 1, pad: 0 };
        assert_eq!(conv_to_gemm_dims(&layer, 10).unwrap(), (8, 3, 8));
        let pointwise = ConvLayerSpec { c_in: 32, c_out: 8, kernel: 1, stride: 1, pad: 0 };
        assert_eq!(conv_to_gemm_dims(&pointwise, 10).unwrap().1, 32);
        assert!(conv_to_gemm_dims(&layer, 1).is_err());

        let core = CoreConfig::default();
        assert_eq!(core_gemm_cycles(64, 64, 64, &core), 262_144);
        assert_eq!(core_gemm_cycles(1, 1, 1, &core), 1);
        let speedup = 262_144.0 / systolic_cycles(64, 64, 64, &SystolicConfig::default()) as f64;
        assert!((14.0..=15.5).contains(&speedup), "{speedup}");
    }
}
