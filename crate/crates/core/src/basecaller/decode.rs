use super::{LogitFrame, BLANK, NUM_CLASSES};
use crate::ed_engine::edit_distance;
use crate::BASES;

/// Best-path decoding: per-frame argmax (ties to the lowest class), collapse
/// repeats, drop blanks.
pub fn greedy_decode(logits: &LogitFrame) -> Vec<u8> {
    greedy_decode_with_quality(logits).0
}

/// [`greedy_decode`] plus a Phred+33 quality per base, taken from the
/// softmax probability of the frame that emitted it and capped at 40.
pub fn greedy_decode_with_quality(logits: &LogitFrame) -> (Vec<u8>, Vec<u8>) {
    let mut seq = Vec::new();
    let mut qual = Vec::new();
    let mut prev = BLANK;
    for t in 0..logits.frames {
        let f = logits.frame(t);
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if f[c] > f[best] {
                best = c;
            }
        }
        if best != BLANK && best != prev {
            seq.push(BASES[best]);
            let z: f64 = f.iter().map(|&v| f64::from(v - f[best]).exp()).sum();
            let err = (1.0 - 1.0 / z).max(1e-4);
            let phred = (-10.0 * err.log10()).round().min(40.0) as u8;
            qual.push(phred + 33);
        }
        prev = best;
    }
    (seq, qual)
}

/// `1 − edit_distance(called, truth) / max(|called|, |truth|)`.
pub fn read_identity(called: &[u8], truth: &[u8]) -> f64 {
    let longest = called.len().max(truth.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(called, truth) as f64 / longest as f64
}
