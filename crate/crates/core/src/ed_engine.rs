//! Edit-distance kernels of the ED engine and its cycle model.
//!
//! The ED engine proper computes unit-cost Levenshtein distance. Scored
//! alignment with a traceback ([`extend_align`]) is used for seed extension.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unit-cost Levenshtein distance, two-row DP.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Full `(|a|+1) × (|b|+1)` distance matrix, row-major evaluation.
pub fn dp_matrix_row_major(a: &[u8], b: &[u8]) -> Vec<Vec<u32>> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0u32; m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            d[i][j] = dp_cell(&d, a, b, i, j);
        }
    }
    d
}

/// The same matrix evaluated one anti-diagonal at a time, the order in which
/// a hardware wavefront fills it (all cells of a diagonal are independent).
pub fn dp_matrix_wavefront(a: &[u8], b: &[u8]) -> Vec<Vec<u32>> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![u32::MAX; m + 1]; n + 1];
    for diag in 0..=n + m {
        let i_lo = diag.saturating_sub(m);
        let i_hi = diag.min(n);
        for i in i_lo..=i_hi {
            let j = diag - i;
            d[i][j] = dp_cell(&d, a, b, i, j);
        }
    }
    d
}

#[inline]
fn dp_cell(d: &[Vec<u32>], a: &[u8], b: &[u8], i: usize, j: usize) -> u32 {
    match (i, j) {
        (0, _) => j as u32,
        (_, 0) => i as u32,
        _ => {
            let sub = d[i - 1][j - 1] + u32::from(a[i - 1] != b[j - 1]);
            sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1)
        }
    }
}

/// Distance restricted to cells with `|i − j| ≤ band`. Returns `None` when
/// the band cannot contain an optimal path, i.e. when `band < ||a| − |b||`
/// or the banded distance exceeds `band`.
pub fn banded_edit_distance(a: &[u8], b: &[u8], band: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > band {
        return None;
    }
    const INF: usize = usize::MAX / 2;
    // Row i stores columns j in [i - band, i + band] at index j + band - i.
    let width = 2 * band + 1;
    let mut prev = vec![INF; width];
    let mut cur = vec![INF; width];
    for (k, v) in prev.iter_mut().enumerate() {
        // Row 0: d[0][j] = j for j = k - band.
        if k >= band && k - band <= m {
            *v = k - band;
        }
    }
    for i in 1..=n {
        cur.fill(INF);
        for k in 0..width {
            let Some(j) = (i + k).checked_sub(band) else {
                continue;
            };
            if j > m {
                break;
            }
            let v = if j == 0 {
                i
            } else {
                // d[i-1][j-1] is at the same k in the previous row,
                // d[i-1][j] at k+1, d[i][j-1] at k-1 in this row.
                let sub = prev[k] + usize::from(a[i - 1] != b[j - 1]);
                let up = if k + 1 < width { prev[k + 1] + 1 } else { INF };
                let left = if k > 0 { cur[k - 1] + 1 } else { INF };
                sub.min(up).min(left)
            };
            cur[k] = v;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m + band - n];
    (d <= band).then_some(d)
}

/// One column of an alignment. Bases carried by `Mismatch` and `Delete` are
/// target bases, so a transcript can be replayed from the query alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Mismatch(u8),
    /// Query base absent from the target.
    Insert,
    /// Target base absent from the query.
    Delete(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scoring {
    pub match_score: i32,
    pub mismatch: i32,
    pub gap: i32,
}

impl Default for Scoring {
    fn default() -> Self {
        Scoring {
            match_score: 1,
            mismatch: -1,
            gap: -1,
        }
    }
}

impl Scoring {
    pub fn validate(&self) -> Result<()> {
        if self.match_score <= 0 || self.mismatch > 0 || self.gap > 0 {
            return Err(Error::InvalidArgument(format!(
                "scoring needs match > 0 and penalties <= 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: i32) -> Scoring {
        Scoring {
            match_score: self.match_score * alpha,
            mismatch: self.mismatch * alpha,
            gap: self.gap * alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Score for scored alignments, distance for unit-cost ones.
    pub score: i32,
    pub transcript: Vec<EditOp>,
    /// Query bases consumed.
    pub query_end: usize,
    /// Target bases consumed.
    pub target_end: usize,
    /// DP cells evaluated.
    pub cells: u64,
}

impl AlignmentResult {
    pub fn matches(&self) -> usize {
        self.transcript.iter().filter(|o| **o == EditOp::Match).count()
    }

    pub fn edits(&self) -> usize {
        self.transcript.len() - self.matches()
    }

    /// Matches over alignment columns.
    pub fn identity(&self) -> f64 {
        if self.transcript.is_empty() {
            return 0.0;
        }
        self.matches() as f64 / self.transcript.len() as f64
    }
}

/// Applies a transcript to `query`, producing the aligned target span.
pub fn replay(query: &[u8], transcript: &[EditOp]) -> Vec<u8> {
    let mut out = Vec::with_capacity(query.len());
    let mut qi = 0;
    for op in transcript {
        match *op {
            EditOp::Match => {
                out.push(query[qi]);
                qi += 1;
            }
            EditOp::Mismatch(t) => {
                out.push(t);
                qi += 1;
            }
            EditOp::Insert => qi += 1,
            EditOp::Delete(t) => out.push(t),
        }
    }
    out
}

/// Semi-global extension: the query is aligned end to end, the target from
/// its first base to any end position. Traceback prefers match, then
/// mismatch, then delete, then insert; among equal-scoring end positions the
/// shortest target span wins.
pub fn extend_align(query: &[u8], target: &[u8], scoring: &Scoring) -> Result<AlignmentResult> {
    scoring.validate()?;
    if query.is_empty() {
        return Err(Error::InvalidArgument("extend_align needs a non-empty query".into()));
    }
    let (n, m) = (query.len(), target.len());
    let w = m + 1;
    let mut h = vec![0i32; (n + 1) * w];
    for j in 0..=m {
        h[j] = j as i32 * scoring.gap;
    }
    for i in 1..=n {
        h[i * w] = i as i32 * scoring.gap;
        let q = query[i - 1];
        for j in 1..=m {
            let s = if q == target[j - 1] {
                scoring.match_score
            } else {
                scoring.mismatch
            };
            let diag = h[(i - 1) * w + j - 1] + s;
            let del = h[i * w + j - 1] + scoring.gap;
            let ins = h[(i - 1) * w + j] + scoring.gap;
            h[i * w + j] = diag.max(del).max(ins);
        }
    }
    let row = &h[n * w..];
    let (mut j, mut best) = (0usize, row[0]);
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            j = k;
        }
    }
    let target_end = j;

    let mut i = n;
    let mut ops = Vec::with_capacity(n + j);
    while i > 0 || j > 0 {
        let here = h[i * w + j];
        if i > 0 && j > 0 {
            let t = target[j - 1];
            let is_match = query[i - 1] == t;
            let s = if is_match { scoring.match_score } else { scoring.mismatch };
            if h[(i - 1) * w + j - 1] + s == here {
                ops.push(if is_match { EditOp::Match } else { EditOp::Mismatch(t) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && h[i * w + j - 1] + scoring.gap == here {
            ops.push(EditOp::Delete(target[j - 1]));
            j -= 1;
        } else {
            debug_assert!(i > 0 && h[(i - 1) * w + j] + scoring.gap == here);
            ops.push(EditOp::Insert);
            i -= 1;
        }
    }
    ops.reverse();
    Ok(AlignmentResult {
        score: best,
        transcript: ops,
        query_end: n,
        target_end,
        cells: (n * m) as u64,
    })
}

/// Global unit-cost alignment with a traceback; `score` is the distance.
pub fn align_global(a: &[u8], b: &[u8]) -> AlignmentResult {
    let d = dp_matrix_row_major(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut ops = Vec::new();
    while i > 0 || j > 0 {
        let here = d[i][j];
        if i > 0 && j > 0 {
            let same = a[i - 1] == b[j - 1];
            if d[i - 1][j - 1] + u32::from(!same) == here {
                ops.push(if same { EditOp::Match } else { EditOp::Mismatch(b[j - 1]) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j - 1] + 1 == here {
            ops.push(EditOp::Delete(b[j - 1]));
            j -= 1;
        } else {
            ops.push(EditOp::Insert);
            i -= 1;
        }
    }
    ops.reverse();
    AlignmentResult {
        score: d[a.len()][b.len()] as i32,
        transcript: ops,
        query_end: a.len(),
        target_end: b.len(),
        cells: (a.len() * b.len()) as u64,
    }
}

/// Best placement of `pattern` anywhere inside `text` (both text ends free).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfixHit {
    pub distance: usize,
    pub start: usize,
    pub end: usize,
    pub cells: u64,
}

/// Minimum-distance occurrence of `pattern` in `text`. Ties go to the
/// earliest end, then the latest start (shortest span).
pub fn infix_edit_distance(pattern: &[u8], text: &[u8]) -> InfixHit {
    let (n, m) = (pattern.len(), text.len());
    let w = m + 1;
    // (distance, start) per cell; the first row is free.
    let mut d = vec![(0usize, 0usize); (n + 1) * w];
    for j in 0..=m {
        d[j] = (0, j);
    }
    for i in 1..=n {
        d[i * w] = (i, 0);
        for j in 1..=m {
            let (dg, sg) = d[(i - 1) * w + j - 1];
            let diag = (dg + usize::from(pattern[i - 1] != text[j - 1]), sg);
            let (du, su) = d[(i - 1) * w + j];
            let up = (du + 1, su);
            let (dl, sl) = d[i * w + j - 1];
            let left = (dl + 1, sl);
            // Smaller distance, then later start.
            d[i * w + j] = [diag, up, left]
                .into_iter()
                .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .unwrap();
        }
    }
    let mut best = InfixHit {
        distance: usize::MAX,
        start: 0,
        end: 0,
        cells: (n * m) as u64,
    };
    for j in 0..=m {
        let (dist, start) = d[n * w + j];
        if dist < best.distance {
            best.distance = dist;
            best.start = start;
            best.end = j;
        }
    }
    best
}

/// Cycle model of core-only and accelerated edit-distance comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdCycleConfig {
    pub core_cycles_per_cell: f64,
    /// Accelerator cycles per DP cell after the wavefront has filled.
    pub accel_cycles_per_cell: f64,
    /// Fixed per-comparison transfer/setup cycles.
    pub accel_overhead_cycles: u64,
}

impl Default for EdCycleConfig {
    fn default() -> Self {
        EdCycleConfig {
            core_cycles_per_cell: 111.0,
            accel_cycles_per_cell: 2.5,
            accel_overhead_cycles: 2_579,
        }
    }
}

impl EdCycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.core_cycles_per_cell > 0.0)
            || !(self.accel_cycles_per_cell > 0.0)
            || self.accel_overhead_cycles == 0
        {
            return Err(Error::Config("ED cycle parameters must be > 0".into()));
        }
        Ok(())
    }
}

/// `(core_cycles, accel_cycles)` for one `n × m` comparison. The accelerator
/// pays the wavefront fill `n + m − 1`, the cell throughput and a fixed
/// overhead.
pub fn ed_cycles(n: usize, m: usize, cfg: &EdCycleConfig) -> (u64, u64) {
    let cells = (n as f64) * (m as f64);
    let core = (cells * cfg.core_cycles_per_cell).ceil() as u64;
    let fill = (n + m).saturating_sub(1) as u64;
    let accel = fill + (cells * cfg.accel_cycles_per_cell).ceil() as u64 + cfg.accel_overhead_cycles;
    (core, accel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_basics() {
        assert_eq!(edit_distance(b"ACGT", b"ACGT"), 0);
        assert_eq!(edit_distance(b"", b"ACG"), 3);
        assert_eq!(edit_distance(b"ACG", b""), 3);
        assert_eq!(edit_distance(b"GATTACA", b"GCATGCU"), 4);
    }

    #[test]
    fn banded_cases() {
        assert_eq!(banded_edit_distance(b"ACGT", b"ACGT", 0), Some(0));
        assert_eq!(banded_edit_distance(b"ACGT", b"AGGT", 0), None);
        assert_eq!(banded_edit_distance(b"ACGT", b"AGGT", 1), Some(1));
        assert_eq!(banded_edit_distance(b"ACGT", b"A", 2), None);
        assert_eq!(banded_edit_distance(b"", b"", 0), Some(0));
        assert_eq!(banded_edit_distance(b"GATTACA", b"GCATGCU", 7), Some(4));
        assert_eq!(banded_edit_distance(b"GATTACA", b"GCATGCU", 3), None);
    }

    #[test]
    fn extend_exact_prefix() {
        let r = extend_align(b"ACGTA", b"ACGTAGGG", &Scoring::default()).unwrap();
        assert_eq!(r.score, 5);
        assert_eq!(r.transcript, vec![EditOp::Match; 5]);
        assert_eq!(r.target_end, 5);
    }

    #[test]
    fn extend_with_target_deletion() {
        let r = extend_align(b"AC", b"AGC", &Scoring::default()).unwrap();
        assert_eq!(r.score, 1);
        assert_eq!(r.transcript, vec![EditOp::Match, EditOp::Delete(b'G'), EditOp::Match]);
        assert_eq!(replay(b"AC", &r.transcript), b"AGC");
    }

    #[test]
    fn extend_rejects_bad_input() {
        assert!(extend_align(b"", b"A", &Scoring::default()).is_err());
        let bad = Scoring { match_score: 0, ..Default::default() };
        assert!(extend_align(b"A", b"A", &bad).is_err());
    }

    #[test]
    fn global_alignment_transcript() {
        let r = align_global(b"GATTACA", b"GCATGCU");
        assert_eq!(r.score, 4);
        assert_eq!(r.edits(), 4);
        assert_eq!(replay(b"GATTACA", &r.transcript), b"GCATGCU");
    }

    #[test]
    fn infix_finds_embedded_pattern() {
        let hit = infix_edit_distance(b"ACGTAC", b"TTTACGTACGGG");
        assert_eq!((hit.distance, hit.start, hit.end), (0, 3, 9));
        let hit = infix_edit_distance(b"ACGTAC", b"TTTACCTACGGG");
        assert_eq!((hit.distance, hit.start, hit.end), (1, 3, 9));
    }

    #[test]
    fn cycle_model_calibration() {
        let cfg = EdCycleConfig::default();
        let (core, accel) = ed_cycles(100, 100, &cfg);
        assert_eq!(accel, 27_778);
        assert_eq!(core, 1_110_000);
        let speedup = core as f64 / accel as f64;
        assert!((34.0..=46.0).contains(&speedup));
        assert_eq!(ed_cycles(1, 1, &cfg).0, 111);
    }
}
