use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::forward::{backward, forward_train};
use super::{ctc_loss, forward_samples, greedy_decode, read_identity, CnnSpec, Weights};
use crate::pipeline::normalize_samples;
use crate::signal_sim::SimRead;
use crate::{base_code, Error, Result};

/// One supervised training pair: normalized samples and base labels (0..4).
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub samples: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Example {
    pub fn new(id: impl Into<String>, raw_samples: &[f32], sequence: &[u8]) -> Result<Self> {
        let labels = sequence
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                base_code(b).ok_or(Error::InvalidSymbol {
                    symbol: b as char,
                    position: i,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (samples, _) = normalize_samples(raw_samples);
        Ok(Example {
            id: id.into(),
            samples,
            labels,
        })
    }

    pub fn from_sim(read: &SimRead) -> Result<Self> {
        Example::new(&read.id, &read.signal.samples, &read.truth.sequence)
    }

    pub fn sequence(&self) -> Vec<u8> {
        self.labels.iter().map(|&c| crate::BASES[c as usize]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak (cosine decay).
    pub final_lr_fraction: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 8,
            batch_size: 16,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 2.0,
            warmup_steps: 50,
            final_lr_fraction: 0.05,
        }
    }
}

impl TrainHyper {
    fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }
}

pub const TRAIN_LOG_HEADER: &str = "#epoch\tbatch\tloss";

/// One line of the training log. `loss` is the batch mean of CTC loss per
/// label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

impl fmt::Display for TrainLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:.6}", self.epoch, self.batch, self.loss)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f64], lr: f64, h: &TrainHyper) {
        self.step += 1;
        let c1 = 1.0 - h.beta1.powi(self.step);
        let c2 = 1.0 - h.beta2.powi(self.step);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + h.eps);
            *p -= update as f32;
        }
    }
}

/// Per-label CTC loss and its parameter gradient for one example; `None`
/// when the example cannot be aligned (too few frames).
fn example_gradient(
    spec: &CnnSpec,
    weights: &Weights,
    ex: &Example,
) -> Result<Option<(f64, Vec<f32>)>> {
    let (logits, cache) = forward_train(spec, weights, &ex.samples)?;
    let out = match ctc_loss(&logits, &ex.labels) {
        Ok(o) => o,
        Err(Error::CtcInfeasible { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let norm = ex.labels.len() as f64;
    let grad_logits: Vec<f32> = out.grad.iter().map(|&g| (g / norm) as f32).collect();
    Ok(Some((out.loss / norm, backward(spec, weights, &cache, &grad_logits))))
}

/// Mini-batch Adam on per-label CTC loss. The batch order is a seeded shuffle
/// per epoch; per-example gradients are reduced in batch order, so the result
/// is identical for any thread count.
pub fn train(
    examples: &[Example],
    spec: &CnnSpec,
    hyper: &TrainHyper,
    seed: u64,
    log: &mut dyn FnMut(&TrainLogEntry),
) -> Result<Weights> {
    train_from(Weights::init(spec, seed), examples, spec, hyper, seed, log)
}

pub(crate) fn train_from(
    mut weights: Weights,
    examples: &[Example],
    spec: &CnnSpec,
    hyper: &TrainHyper,
    seed: u64,
    log: &mut dyn FnMut(&TrainLogEntry),
) -> Result<Weights> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    spec.validate()?;
    weights.check(spec)?;
    let mut params = weights.flatten();
    let mut adam = Adam::new(params.len());
    let batches_per_epoch = examples.len().div_ceil(hyper.batch_size);
    let total_steps = batches_per_epoch * hyper.epochs;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;

    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D));
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(hyper.batch_size).enumerate() {
            let results = idx
                .par_iter()
                .map(|&i| example_gradient(spec, &weights, &examples[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = vec![0.0f64; params.len()];
            let mut loss = 0.0;
            let mut used = 0usize;
            for (l, g) in results.into_iter().flatten() {
                loss += l;
                used += 1;
                for (acc, v) in grads.iter_mut().zip(&g) {
                    *acc += f64::from(*v);
                }
            }
            if used == 0 {
                log::warn!("epoch {epoch} batch {batch}: no alignable examples");
                step += 1;
                continue;
            }
            loss /= used as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            grads.iter_mut().for_each(|g| *g /= used as f64);
            if hyper.grad_clip > 0.0 {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::Diverged { epoch, batch, loss: norm });
                }
                if norm > hyper.grad_clip {
                    let s = hyper.grad_clip / norm;
                    grads.iter_mut().for_each(|g| *g *= s);
                }
            }
            adam.update(&mut params, &grads, hyper.lr_at(step, total_steps), hyper);
            weights.unflatten_from(&params);
            step += 1;
            log(&TrainLogEntry { epoch, batch, loss });
        }
    }
    Ok(weights)
}

/// Forward pass plus greedy decoding on normalized samples.
pub fn basecall(spec: &CnnSpec, weights: &Weights, samples: &[f32]) -> Result<Vec<u8>> {
    Ok(greedy_decode(&forward_samples(spec, weights, samples)?))
}

/// Read identity of each example's basecall against its labels.
pub fn evaluate_identity(spec: &CnnSpec, weights: &Weights, examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| Ok(read_identity(&basecall(spec, weights, &ex.samples)?, &ex.sequence())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basecaller::ConvLayerSpec;
    use crate::signal_sim::{random_genome, simulate_reads, ReadLenDist, SimParams};

    fn tiny_spec() -> CnnSpec {
        CnnSpec {
            layers: vec![
                ConvLayerSpec { c_in: 1, c_out: 8, kernel: 9, stride: 1, pad: 4 },
                ConvLayerSpec { c_in: 8, c_out: 16, kernel: 9, stride: 2, pad: 4 },
                ConvLayerSpec { c_in: 16, c_out: 16, kernel: 9, stride: 2, pad: 4 },
                ConvLayerSpec { c_in: 16, c_out: 5, kernel: 1, stride: 1, pad: 0 },
            ],
        }
    }

    fn tiny_examples(n: usize, seed: u64) -> Vec<Example> {
        let genome = random_genome(3_000, seed);
        let params = SimParams {
            read_len: ReadLenDist { mean: 60.0, sd: 5.0, min: 40 },
            ..Default::default()
        };
        simulate_reads(&genome, n, &params, seed)
            .unwrap()
            .iter()
            .map(|r| Example::from_sim(r).unwrap())
            .collect()
    }

    fn loss_of(spec: &CnnSpec, w: &Weights, ex: &Example) -> f64 {
        example_gradient(spec, w, ex).unwrap().unwrap().0
    }

    #[test]
    fn one_step_reduces_loss() {
        let spec = tiny_spec();
        let ex = tiny_examples(1, 3);
        let w0 = Weights::init(&spec, 1);
        let before = loss_of(&spec, &w0, &ex[0]);
        let hyper = TrainHyper { epochs: 1, ..Default::default() };
        let w1 = train(&ex, &spec, &hyper, 1, &mut |_| {}).unwrap();
        let after = loss_of(&spec, &w1, &ex[0]);
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_is_deterministic() {
        let spec = tiny_spec();
        let ex = tiny_examples(6, 4);
        let hyper = TrainHyper { epochs: 2, batch_size: 3, ..Default::default() };
        let a = train(&ex, &spec, &hyper, 9, &mut |_| {}).unwrap();
        let b = train(&ex, &spec, &hyper, 9, &mut |_| {}).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| train(&ex, &spec, &hyper, 9, &mut |_| {}).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn log_has_one_line_per_batch() {
        let spec = tiny_spec();
        let ex = tiny_examples(5, 5);
        let hyper = TrainHyper { epochs: 2, batch_size: 2, ..Default::default() };
        let mut lines = Vec::new();
        train(&ex, &spec, &hyper, 1, &mut |e| lines.push(e.to_string())).unwrap();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("0\t0\t"));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train(&[], &tiny_spec(), &TrainHyper::default(), 0, &mut |_| {}).is_err());
    }

    #[test]
    fn lr_schedule_warms_up_then_decays() {
        let h = TrainHyper::default();
        assert!(h.lr_at(0, 1000) < h.lr_at(10, 1000));
        assert!((h.lr_at(h.warmup_steps, 1000) - h.learning_rate).abs() < 1e-12);
        assert!((h.lr_at(1000, 1000) - h.learning_rate * h.final_lr_fraction).abs() < 1e-9);
    }
}
