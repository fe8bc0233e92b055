use serde::{Deserialize, Serialize};

use super::fm::{FmIndex, SaRange};
use crate::ed_engine::{extend_align, AlignmentResult, EditOp, Scoring};
use crate::signal_sim::Strand;
use crate::{reverse_complement, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub seed_len: usize,
    /// Distance between seed starts; equal to `seed_len` for non-overlapping seeds.
    pub seed_stride: usize,
    /// Seeds with more reference hits than this are skipped.
    pub max_seed_hits: usize,
    /// Diagonal slack, in bases, used to cluster hits and pad extension windows.
    pub band: usize,
    /// Candidate clusters extended per strand, best supported first.
    pub max_candidates: usize,
    pub scoring: Scoring,
    pub min_identity: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            seed_len: 10,
            seed_stride: 10,
            max_seed_hits: 64,
            band: 32,
            max_candidates: 4,
            scoring: Scoring {
                match_score: 1,
                mismatch: -1,
                gap: -2,
            },
            min_identity: 0.7,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        if self.seed_len == 0 || self.seed_stride == 0 {
            return Err(Error::InvalidArgument("seed_len and seed_stride must be >= 1".into()));
        }
        if self.max_seed_hits == 0 || self.max_candidates == 0 {
            return Err(Error::InvalidArgument(
                "max_seed_hits and max_candidates must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_identity) {
            return Err(Error::InvalidArgument(format!(
                "min_identity {} outside [0, 1]",
                self.min_identity
            )));
        }
        self.scoring.validate()
    }
}

/// Exact match of `read[read_offset..read_offset + length]` on one strand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed {
    pub strand: Strand,
    pub read_offset: usize,
    pub sa_range: SaRange,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingResult {
    pub read_id: String,
    /// Reference start of the aligned span.
    pub target_position: usize,
    pub target_end: usize,
    pub strand: Strand,
    pub score: i32,
    pub identity: f64,
    /// Alignment of the read (reverse-complemented for the reverse strand)
    /// against `reference[target_position..target_end]`.
    pub transcript: Vec<EditOp>,
}

/// Mapping result together with the work spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct MapOutcome {
    pub mapping: Option<MappingResult>,
    pub seeds: Vec<Seed>,
    /// DP cells over all extensions.
    pub dp_cells: u64,
    /// `(query_len, target_len)` of every extension DP.
    pub extensions: Vec<(usize, usize)>,
}

/// Best mapping of `read` against `reference`, or `None`.
pub fn seed_and_extend(
    index: &FmIndex,
    reference: &[u8],
    read_id: &str,
    read: &[u8],
    params: &MapParams,
) -> Result<Option<MappingResult>> {
    Ok(seed_and_extend_traced(index, reference, read_id, read, params)?.mapping)
}

pub fn seed_and_extend_traced(
    index: &FmIndex,
    reference: &[u8],
    read_id: &str,
    read: &[u8],
    params: &MapParams,
) -> Result<MapOutcome> {
    params.validate()?;
    if reference.len() != index.text_len() {
        return Err(Error::InvalidArgument(format!(
            "reference length {} does not match index text length {}",
            reference.len(),
            index.text_len()
        )));
    }
    let mut out = MapOutcome {
        mapping: None,
        seeds: Vec::new(),
        dp_cells: 0,
        extensions: Vec::new(),
    };
    if read.len() < params.seed_len {
        return Ok(out);
    }
    let rc = reverse_complement(read);
    let mut best: Option<MappingResult> = None;
    for (strand, query) in [(Strand::Forward, read), (Strand::Reverse, rc.as_slice())] {
        for (read_off, ref_pos) in candidates(index, query, strand, params, &mut out.seeds) {
            let m = extend_candidate(reference, query, read_off, ref_pos, params, &mut out);
            let m = MappingResult {
                read_id: read_id.to_string(),
                strand,
                ..m?
            };
            if m.identity < params.min_identity {
                continue;
            }
            if best.as_ref().is_none_or(|b| better(&m, b)) {
                best = Some(m);
            }
        }
    }
    out.mapping = best;
    Ok(out)
}

/// Score descending, then position ascending, then forward strand first.
fn better(a: &MappingResult, b: &MappingResult) -> bool {
    let key = |m: &MappingResult| {
        (
            std::cmp::Reverse(m.score),
            m.target_position,
            m.strand == Strand::Reverse,
        )
    };
    key(a) < key(b)
}

/// Anchors `(read_offset, reference_position)` of the best-supported hit
/// clusters on one strand.
fn candidates(
    index: &FmIndex,
    query: &[u8],
    strand: Strand,
    params: &MapParams,
    seeds: &mut Vec<Seed>,
) -> Vec<(usize, usize)> {
    let mut hits: Vec<(i64, usize, usize)> = Vec::new();
    let mut off = 0;
    while off + params.seed_len <= query.len() {
        let pat = &query[off..off + params.seed_len];
        if let Ok(range) = index.backward_search(pat) {
            seeds.push(Seed {
                strand,
                read_offset: off,
                sa_range: range,
                length: params.seed_len,
            });
            if !range.is_empty() && range.count() <= params.max_seed_hits {
                for p in index.locate(range) {
                    hits.push((p as i64 - off as i64, off, p));
                }
            }
        }
        off += params.seed_stride;
    }
    hits.sort_unstable();

    // (support, anchor offset, anchor position)
    let mut clusters: Vec<(usize, usize, usize)> = Vec::new();
    let mut i = 0;
    while i < hits.len() {
        let mut j = i + 1;
        while j < hits.len() && hits[j].0 - hits[j - 1].0 <= params.band as i64 {
            j += 1;
        }
        let group = &hits[i..j];
        let mut offsets: Vec<usize> = group.iter().map(|h| h.1).collect();
        offsets.sort_unstable();
        offsets.dedup();
        let anchor = group.iter().min_by_key(|h| (h.1, h.2)).expect("non-empty group");
        clusters.push((offsets.len(), anchor.1, anchor.2));
        i = j;
    }
    clusters.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)));
    clusters
        .into_iter()
        .take(params.max_candidates)
        .map(|c| (c.1, c.2))
        .collect()
}

fn run_extension(
    query: &[u8],
    target: &[u8],
    scoring: &Scoring,
    out: &mut MapOutcome,
) -> Result<AlignmentResult> {
    let r = extend_align(query, target, scoring)?;
    out.dp_cells += r.cells;
    out.extensions.push((query.len(), target.len()));
    Ok(r)
}

/// Extends an anchor leftwards on reversed sequences and rightwards on the
/// forward ones, then joins the two transcripts.
fn extend_candidate(
    reference: &[u8],
    query: &[u8],
    read_off: usize,
    ref_pos: usize,
    params: &MapParams,
    out: &mut MapOutcome,
) -> Result<MappingResult> {
    let mut transcript = Vec::new();
    let mut score = 0;
    let mut start = ref_pos;
    if read_off > 0 {
        let lo = ref_pos.saturating_sub(read_off + params.band);
        let q: Vec<u8> = query[..read_off].iter().rev().copied().collect();
        let t: Vec<u8> = reference[lo..ref_pos].iter().rev().copied().collect();
        let left = run_extension(&q, &t, &params.scoring, out)?;
        score += left.score;
        start = ref_pos - left.target_end;
        transcript.extend(left.transcript.iter().rev());
    }
    let right_q = &query[read_off..];
    let hi = (ref_pos + right_q.len() + params.band).min(reference.len());
    let right = run_extension(right_q, &reference[ref_pos..hi], &params.scoring, out)?;
    score += right.score;
    transcript.extend_from_slice(&right.transcript);
    let mut end = ref_pos + right.target_end;
    absorb_edge_insertions(reference, query, &mut transcript, &mut start, &mut end);
    let matches = transcript.iter().filter(|o| **o == EditOp::Match).count();
    let identity = if transcript.is_empty() {
        0.0
    } else {
        matches as f64 / transcript.len() as f64
    };
    Ok(MappingResult {
        read_id: String::new(),
        target_position: start,
        target_end: end,
        strand: Strand::Forward,
        score,
        identity,
        transcript,
    })
}

/// Turns unaligned query bases at either end into substitutions against the
/// neighbouring reference bases, which never lowers the score.
fn absorb_edge_insertions(
    reference: &[u8],
    query: &[u8],
    transcript: &mut Vec<EditOp>,
    start: &mut usize,
    end: &mut usize,
) {
    let lead = transcript.iter().take_while(|o| **o == EditOp::Insert).count().min(*start);
    for (k, op) in transcript[..lead].iter_mut().enumerate() {
        let t = reference[*start - lead + k];
        *op = if query[k] == t { EditOp::Match } else { EditOp::Mismatch(t) };
    }
    *start -= lead;

    let room = reference.len() - *end;
    let trail = transcript.iter().rev().take_while(|o| **o == EditOp::Insert).count().min(room);
    let (qn, tn) = (query.len(), transcript.len());
    for k in 0..trail {
        let t = reference[*end + k];
        let q = query[qn - trail + k];
        transcript[tn - trail + k] = if q == t { EditOp::Match } else { EditOp::Mismatch(t) };
    }
    *end += trail;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ed_engine::replay;
    use crate::signal_sim::random_genome;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(len: usize, seed: u64) -> (Vec<u8>, FmIndex) {
        let g = random_genome(len, seed);
        let idx = FmIndex::build(&g).unwrap();
        (g, idx)
    }

    #[test]
    fn exact_slice_forward_and_reverse() {
        let (g, idx) = setup(10_000, 3);
        let p = MapParams::default();
        let read = &g[4321..4421];
        let m = seed_and_extend(&idx, &g, "r", read, &p).unwrap().unwrap();
        assert_eq!((m.target_position, m.strand), (4321, Strand::Forward));
        assert_eq!(m.identity, 1.0);
        assert_eq!(m.score, 100);

        let rc = reverse_complement(read);
        let m = seed_and_extend(&idx, &g, "r", &rc, &p).unwrap().unwrap();
        assert_eq!((m.target_position, m.strand), (4321, Strand::Reverse));
        assert_eq!(m.identity, 1.0);
    }

    #[test]
    fn substitutions_map_to_origin() {
        let (g, idx) = setup(12_000, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let start = rng.random_range(0..g.len() - 100);
            let mut read = g[start..start + 100].to_vec();
            let mut picked = Vec::new();
            while picked.len() < 5 {
                let k = rng.random_range(0..100);
                if !picked.contains(&k) {
                    picked.push(k);
                }
            }
            for &k in &picked {
                let alt = b"ACGT"[(crate::base_code(read[k]).unwrap() as usize + 1) % 4];
                read[k] = alt;
            }
            let m = seed_and_extend(&idx, &g, "r", &read, &MapParams::default())
                .unwrap()
                .unwrap();
            assert_eq!(m.target_position, start);
            assert!(m.identity >= 0.95);
            assert_eq!(replay(&read, &m.transcript), &g[m.target_position..m.target_end]);
        }
    }

    #[test]
    fn indels_replay_onto_reference() {
        let (g, idx) = setup(8_000, 11);
        let mut read = g[2000..2300].to_vec();
        read.remove(150);
        read.insert(40, b'A');
        read.remove(260);
        let m = seed_and_extend(&idx, &g, "r", &read, &MapParams::default())
            .unwrap()
            .unwrap();
        assert!(m.identity > 0.98);
        assert_eq!(replay(&read, &m.transcript), &g[m.target_position..m.target_end]);
    }

    #[test]
    fn unrelated_read_does_not_map() {
        let (g, idx) = setup(30_000, 21);
        let other = random_genome(500, 99);
        let out = seed_and_extend_traced(&idx, &g, "x", &other, &MapParams::default()).unwrap();
        assert!(out.mapping.is_none());
        assert_eq!(out.seeds.len(), 100);
    }

    #[test]
    fn short_read_and_trace_accounting() {
        let (g, idx) = setup(2_000, 1);
        let p = MapParams::default();
        assert!(seed_and_extend(&idx, &g, "s", b"ACGT", &p).unwrap().is_none());
        let out = seed_and_extend_traced(&idx, &g, "r", &g[500..620], &p).unwrap();
        let cells: u64 = out.extensions.iter().map(|&(q, t)| (q * t) as u64).sum();
        assert_eq!(out.dp_cells, cells);
        assert!(out.mapping.is_some());
    }

    #[test]
    fn mismatched_reference_is_rejected() {
        let (g, idx) = setup(500, 2);
        assert!(seed_and_extend(&idx, &g[..400], "r", &g[..50], &MapParams::default()).is_err());
    }
}
