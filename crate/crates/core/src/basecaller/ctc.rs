//! Connectionist temporal classification loss, forward–backward in log space.

use super::{LogitFrame, BLANK, NUM_CLASSES};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CtcOutput {
    /// `−log P(labels | logits)`.
    pub loss: f64,
    /// `∂loss/∂logits`, `T' × 5` row-major.
    pub grad: Vec<f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

fn log_softmax(logits: &LogitFrame) -> Vec<f64> {
    let mut out = vec![0.0f64; logits.data.len()];
    for t in 0..logits.frames {
        let f = logits.frame(t);
        let max = f.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
        let lse = max
            + f.iter()
                .map(|&v| (f64::from(v) - max).exp())
                .sum::<f64>()
                .ln();
        for c in 0..NUM_CLASSES {
            out[t * NUM_CLASSES + c] = f64::from(f[c]) - lse;
        }
    }
    out
}

/// Loss and exact gradient of CTC over base labels `0..4` (blank is 4).
pub fn ctc_loss(logits: &LogitFrame, labels: &[u8]) -> Result<CtcOutput> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("CTC labels must be non-empty".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= BLANK) {
        return Err(Error::InvalidArgument(format!("CTC label {bad} is not a base")));
    }
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    let frames = logits.frames;
    if frames < labels.len() + repeats {
        return Err(Error::CtcInfeasible {
            frames,
            labels: labels.len(),
            repeats,
        });
    }

    let lp = log_softmax(logits);
    let s_len = 2 * labels.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { BLANK } else { labels[s / 2] as usize })
        .collect();
    // Skip transition s-2 -> s allowed onto a label that differs from s-2.
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && s % 2 == 1 && ext[s] != ext[s - 2])
        .collect();

    // Only states in [lo(t), hi(t)] are both reachable from the start and
    // able to reach the end; everything else has probability zero.
    let lo = |t: usize| (s_len as isize - 2 * (frames - t) as isize).max(0) as usize;
    let hi = |t: usize| (2 * t + 1).min(s_len - 1);
    let ninf = f64::NEG_INFINITY;

    // log beta, excluding frame t's emission; alpha includes it.
    let mut b = vec![ninf; frames * s_len];
    let last = (frames - 1) * s_len;
    b[last + s_len - 1] = 0.0;
    b[last + s_len - 2] = 0.0;
    let mut tmp = vec![ninf; s_len + 2];
    for t in (0..frames - 1).rev() {
        let (cur, next) = b.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        let lt = &lp[(t + 1) * NUM_CLASSES..(t + 2) * NUM_CLASSES];
        tmp.iter_mut().for_each(|v| *v = ninf);
        for s in lo(t + 1)..=hi(t + 1) {
            tmp[s] = next[s] + lt[ext[s]];
        }
        for s in lo(t)..=hi(t) {
            let mut v = log_add(tmp[s], tmp[s + 1]);
            if s + 2 < s_len && can_skip[s + 2] {
                v = log_add(v, tmp[s + 2]);
            }
            cur[s] = v;
        }
    }

    let l0 = &lp[..NUM_CLASSES];
    let log_p = (lo(0)..=hi(0)).fold(ninf, |acc, s| log_add(acc, l0[ext[s]] + b[s]));
    if !log_p.is_finite() {
        return Err(Error::CtcInfeasible {
            frames,
            labels: labels.len(),
            repeats,
        });
    }

    // Forward sweep with two rows, accumulating class occupancy per frame.
    let mut grad = vec![0.0f64; frames * NUM_CLASSES];
    let mut prev = vec![ninf; s_len];
    let mut cur = vec![ninf; s_len];
    for t in 0..frames {
        let (clo, chi) = (lo(t), hi(t));
        let lt = &lp[t * NUM_CLASSES..(t + 1) * NUM_CLASSES];
        for s in clo..=chi {
            let v = if t == 0 {
                0.0
            } else {
                let mut v = log_add(prev[s], if s >= 1 { prev[s - 1] } else { ninf });
                if can_skip[s] {
                    v = log_add(v, prev[s - 2]);
                }
                v
            };
            cur[s] = v + lt[ext[s]];
        }
        let mut occ = [0.0f64; NUM_CLASSES];
        let bt = &b[t * s_len..(t + 1) * s_len];
        for s in clo..=chi {
            occ[ext[s]] += (cur[s] + bt[s] - log_p).exp();
        }
        for c in 0..NUM_CLASSES {
            grad[t * NUM_CLASSES + c] = lt[c].exp() - occ[c];
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.iter_mut().for_each(|v| *v = ninf);
    }
    Ok(CtcOutput { loss: -log_p, grad })
}
