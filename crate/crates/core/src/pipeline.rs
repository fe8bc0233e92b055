//! Support stages (normalization, chunking, demultiplexing, primer trimming,
//! filtering) and the end-to-end pathogen-detection flow.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basecaller::{
    forward_samples, forward_samples_int8, greedy_decode_with_quality, CnnSpec, LogitFrame,
    QuantizedWeights, Weights, NUM_CLASSES,
};
use crate::ed_engine::infix_edit_distance;
use crate::formats::fastx::FastxRecord;
use crate::perf::WorkloadTrace;
use crate::seed_index::{seed_and_extend_traced, FmIndex, MapParams};
use crate::signal_sim::{RawSignal, Strand};
use crate::{base_code, first_invalid_base, reverse_complement, Error, Result};

fn median(values: &mut [f32]) -> f32 {
    let n = values.len();
    let mid = n / 2;
    let (lo, m, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lo.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        (below + m) / 2.0
    }
}

/// `(x − median) / MAD`. Returns the normalized samples and whether the MAD
/// was zero (in which case the divisor is 1).
pub fn normalize_samples(samples: &[f32]) -> (Vec<f32>, bool) {
    if samples.is_empty() {
        return (Vec::new(), true);
    }
    let mut buf = samples.to_vec();
    let med = median(&mut buf);
    for (b, &x) in buf.iter_mut().zip(samples) {
        *b = (x - med).abs();
    }
    let mad = median(&mut buf);
    let constant = mad == 0.0;
    let div = if constant { 1.0 } else { mad };
    (samples.iter().map(|&x| (x - med) / div).collect(), constant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSignal {
    pub signal: RawSignal,
    /// Input MAD was zero.
    pub constant: bool,
}

pub fn normalize_signal(raw: &RawSignal) -> Result<NormalizedSignal> {
    if raw.len() < 2 {
        return Err(Error::InvalidArgument("normalization needs at least 2 samples".into()));
    }
    let (samples, constant) = normalize_samples(&raw.samples);
    Ok(NormalizedSignal {
        signal: RawSignal::new(samples, raw.sample_rate, raw.source_id.clone())?,
        constant,
    })
}

/// A window `samples[start..start + samples.len()]` of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub start: usize,
    pub samples: Vec<f32>,
}

/// Chunks start every `chunk_len − overlap` samples. The first chunk is
/// always kept; later ones only if at least `min_len` long.
pub fn chunk_signal(raw: &RawSignal, chunk_len: usize, overlap: usize, min_len: usize) -> Result<Vec<Chunk>> {
    if chunk_len == 0 {
        return Err(Error::InvalidArgument("chunk_len must be >= 1".into()));
    }
    if overlap >= chunk_len {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be below chunk_len {chunk_len}"
        )));
    }
    let step = chunk_len - overlap;
    let n = raw.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk_len).min(n);
        if start == 0 || end - start >= min_len {
            out.push(Chunk {
                start,
                samples: raw.samples[start..end].to_vec(),
            });
        }
        start += step;
    }
    Ok(out)
}

/// Inverse of [`chunk_signal`] when no chunk was dropped: each chunk after
/// the first contributes its samples past the overlap.
pub fn join_chunks(chunks: &[Chunk], overlap: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for (i, c) in chunks.iter().enumerate() {
        let skip = if i == 0 { 0 } else { overlap.min(c.samples.len()) };
        out.extend_from_slice(&c.samples[skip..]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkParams {
    pub chunk_len: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            chunk_len: 4000,
            overlap: 400,
        }
    }
}

/// A basecalled read with the operations spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalledRead {
    pub record: FastxRecord,
    pub constant_signal: bool,
    pub trace: WorkloadTrace,
}

/// Trained model plus inference settings.
#[derive(Debug, Clone)]
pub struct Basecaller {
    pub spec: CnnSpec,
    pub weights: Weights,
    /// Run the int8 path when present.
    pub int8: Option<QuantizedWeights>,
    pub chunk: ChunkParams,
}

impl Basecaller {
    pub fn new(spec: CnnSpec, weights: Weights) -> Result<Basecaller> {
        spec.validate()?;
        weights.check(&spec)?;
        Ok(Basecaller {
            spec,
            weights,
            int8: None,
            chunk: ChunkParams::default(),
        })
    }

    pub fn quantized(mut self) -> Result<Basecaller> {
        self.int8 = Some(QuantizedWeights::from_weights(&self.weights)?);
        Ok(self)
    }

    pub fn with_chunking(mut self, chunk: ChunkParams) -> Basecaller {
        self.chunk = chunk;
        self
    }

    fn logits(&self, samples: &[f32]) -> Result<LogitFrame> {
        match &self.int8 {
            Some(q) => forward_samples_int8(&self.spec, q, samples),
            None => forward_samples(&self.spec, &self.weights, samples),
        }
    }

    /// Normalizes, chunks, runs the network per chunk and stitches the
    /// logits at overlap midpoints before decoding once.
    pub fn call(&self, raw: &RawSignal) -> Result<CalledRead> {
        let stride = self.spec.total_stride();
        let ChunkParams { chunk_len, overlap } = self.chunk;
        if chunk_len <= overlap || (chunk_len - overlap) % stride != 0 {
            return Err(Error::InvalidArgument(format!(
                "chunk step must be a positive multiple of the network stride {stride}"
            )));
        }
        let mut trace = WorkloadTrace::default();
        let (samples, constant) = normalize_samples(&raw.samples);
        let rf = self.spec.receptive_field();
        let empty = |trace| CalledRead {
            record: FastxRecord::with_qual(raw.source_id.clone(), Vec::new(), Vec::new()),
            constant_signal: constant,
            trace,
        };
        if samples.len() < rf {
            return Ok(empty(trace));
        }
        let norm = RawSignal::new(samples, raw.sample_rate, raw.source_id.clone())?;
        let chunks = chunk_signal(&norm, chunk_len, overlap, rf)?;
        let total_frames = self.spec.output_len(norm.len())?;
        let mut data = Vec::with_capacity(total_frames * NUM_CLASSES);
        for (i, c) in chunks.iter().enumerate() {
            let logits = self.logits(&c.samples)?;
            trace.add_forward(&self.spec, c.samples.len())?;
            let first = c.start / stride;
            let from = if i == 0 { 0 } else { (c.start + overlap / 2) / stride };
            let to = match chunks.get(i + 1) {
                Some(next) => (next.start + overlap / 2) / stride,
                None => first + logits.frames,
            };
            for g in from..to.min(first + logits.frames) {
                data.extend_from_slice(logits.frame(g - first));
            }
        }
        let frames = data.len() / NUM_CLASSES;
        let (seq, qual) = greedy_decode_with_quality(&LogitFrame::new(frames, data)?);
        if seq.is_empty() {
            return Ok(empty(trace));
        }
        Ok(CalledRead {
            record: FastxRecord::with_qual(raw.source_id.clone(), seq, qual),
            constant_signal: constant,
            trace,
        })
    }

    /// Calls every signal in parallel; output order follows input order.
    pub fn call_all(&self, signals: &[RawSignal]) -> Result<Vec<CalledRead>> {
        signals.par_iter().map(|s| self.call(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Barcode {
    pub id: String,
    pub sequence: Vec<u8>,
}

impl Barcode {
    pub fn new(id: impl Into<String>, sequence: &[u8]) -> Result<Barcode> {
        let sequence = sequence.to_ascii_uppercase();
        if !(4..=24).contains(&sequence.len()) {
            return Err(Error::InvalidArgument(format!(
                "barcode length {} outside 4..=24",
                sequence.len()
            )));
        }
        if let Some(position) = sequence.iter().position(|&b| base_code(b).is_none()) {
            return Err(Error::InvalidSymbol {
                symbol: sequence[position] as char,
                position,
            });
        }
        Ok(Barcode {
            id: id.into(),
            sequence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub read_id: String,
    pub barcode: Option<String>,
    /// Best Hamming distance seen, if the read was long enough to compare.
    pub distance: Option<usize>,
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Assigns each read to the barcode with the unique smallest Hamming
/// distance over the read's leading bases, if that distance is within
/// `max_hamming`.
pub fn demultiplex(reads: &[FastxRecord], barcodes: &[Barcode], max_hamming: usize) -> Result<Vec<Assignment>> {
    if barcodes.is_empty() {
        return Err(Error::InvalidArgument("no barcodes given".into()));
    }
    let mut seen = HashSet::new();
    for b in barcodes {
        if !seen.insert(b.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate barcode id {}", b.id)));
        }
    }
    Ok(reads
        .iter()
        .map(|r| {
            let mut best: Option<(usize, &Barcode)> = None;
            let mut tied = false;
            for b in barcodes {
                if r.seq.len() < b.sequence.len() {
                    continue;
                }
                let d = hamming(&r.seq[..b.sequence.len()], &b.sequence);
                match best {
                    Some((bd, _)) if d > bd => {}
                    Some((bd, _)) if d == bd => tied = true,
                    _ => {
                        best = Some((d, b));
                        tied = false;
                    }
                }
            }
            let barcode = match best {
                Some((d, b)) if !tied && d <= max_hamming => Some(b.id.clone()),
                _ => None,
            };
            Assignment {
                read_id: r.id.clone(),
                barcode,
                distance: best.map(|(d, _)| d),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimerHit {
    pub primer: usize,
    pub distance: usize,
    /// Read span `[start, end)` of the occurrence.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimReport {
    pub leading: Option<PrimerHit>,
    pub trailing: Option<PrimerHit>,
    pub cells: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimmed {
    /// Kept span of the input read.
    pub start: usize,
    pub end: usize,
    pub seq: Vec<u8>,
    pub report: TrimReport,
}

/// Best primer occurrence (lowest distance, then lowest primer index) in
/// `window`, if within `max_ed`.
fn best_primer(window: &[u8], primers: &[Vec<u8>], max_ed: usize, cells: &mut u64) -> Option<PrimerHit> {
    let mut best: Option<PrimerHit> = None;
    for (i, p) in primers.iter().enumerate() {
        let hit = infix_edit_distance(p, window);
        *cells += hit.cells;
        if hit.distance <= max_ed && best.as_ref().is_none_or(|b| hit.distance < b.distance) {
            best = Some(PrimerHit {
                primer: i,
                distance: hit.distance,
                start: hit.start,
                end: hit.end,
            });
        }
    }
    best
}

/// Removes a leading primer (through the end of its best occurrence in the
/// first `search_window` bases) and a trailing one (from the start of its
/// best occurrence in the last `search_window` bases). The trailing search
/// runs on reversed sequences so ties resolve toward the read end.
pub fn trim_primer(read: &[u8], primers: &[Vec<u8>], search_window: usize, max_ed: usize) -> Result<Trimmed> {
    let longest = primers.iter().map(Vec::len).max().unwrap_or(0);
    if primers.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty primer".into()));
    }
    if search_window < longest {
        return Err(Error::InvalidArgument(format!(
            "search window {search_window} shorter than primer length {longest}"
        )));
    }
    let mut cells = 0;
    let lead_win = &read[..search_window.min(read.len())];
    let leading = best_primer(lead_win, primers, max_ed, &mut cells).filter(|h| h.end > 0);
    let start = leading.as_ref().map_or(0, |h| h.end);

    let rest = &read[start..];
    let tail_len = search_window.min(rest.len());
    let tail_rev: Vec<u8> = rest[rest.len() - tail_len..].iter().rev().copied().collect();
    let primers_rev: Vec<Vec<u8>> = primers.iter().map(|p| p.iter().rev().copied().collect()).collect();
    let trailing = best_primer(&tail_rev, &primers_rev, max_ed, &mut cells)
        .filter(|h| h.end > 0)
        .map(|h| PrimerHit {
            primer: h.primer,
            distance: h.distance,
            start: read.len() - h.end,
            end: read.len() - h.start,
        });
    let end = trailing.as_ref().map_or(read.len(), |h| h.start);
    Ok(Trimmed {
        start,
        end,
        seq: read[start..end].to_vec(),
        report: TrimReport {
            leading,
            trailing,
            cells,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FilterReason {
    TooShort { len: usize, min_len: usize },
    LowIdentity { identity: f64, min_identity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterLogEntry {
    pub read_id: String,
    #[serde(flatten)]
    pub reason: FilterReason,
}

/// Keeps reads at least `min_len` long and, when a truth sequence is known
/// for a read and `min_identity` is set, with identity at least that value.
pub fn filter_reads(
    reads: Vec<FastxRecord>,
    min_len: usize,
    min_identity: Option<f64>,
    truth: &HashMap<String, Vec<u8>>,
) -> (Vec<FastxRecord>, Vec<FilterLogEntry>) {
    let mut kept = Vec::new();
    let mut log = Vec::new();
    for r in reads {
        if r.seq.len() < min_len {
            log.push(FilterLogEntry {
                read_id: r.id.clone(),
                reason: FilterReason::TooShort {
                    len: r.seq.len(),
                    min_len,
                },
            });
            continue;
        }
        if let (Some(min), Some(t)) = (min_identity, truth.get(&r.id)) {
            let identity = crate::basecaller::read_identity(&r.seq, t);
            if identity < min {
                log.push(FilterLogEntry {
                    read_id: r.id.clone(),
                    reason: FilterReason::LowIdentity {
                        identity,
                        min_identity: min,
                    },
                });
                continue;
            }
        }
        kept.push(r);
    }
    (kept, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    pub pathogen_id: String,
    pub theta_frac: f64,
    pub theta_id: f64,
    /// Reads shorter than this after basecalling are filtered out.
    pub min_read_len: usize,
    /// Compare whole reads to the reference by edit distance instead of
    /// seeded mapping.
    pub ed_only: bool,
    pub map: MapParams,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            pathogen_id: "pathogen".into(),
            theta_frac: 0.1,
            theta_id: 0.8,
            min_read_len: 50,
            ed_only: false,
            map: MapParams::default(),
        }
    }
}

pub enum DetectInput<'a> {
    Signals {
        signals: &'a [RawSignal],
        basecaller: Option<&'a Basecaller>,
    },
    Reads(&'a [FastxRecord]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadSummary {
    pub read_id: String,
    pub length: usize,
    pub filtered: bool,
    pub mapped: bool,
    pub strand: Option<Strand>,
    pub position: Option<usize>,
    pub identity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub pathogen_id: String,
    pub n_reads_total: usize,
    pub n_reads_mapped: usize,
    pub mapped_fraction: f64,
    /// Median identity of mapped reads (0 when none mapped).
    pub median_identity: f64,
    pub detected: bool,
    pub theta_frac: f64,
    pub theta_id: f64,
    pub total_macs: u64,
    pub total_dp_cells: u64,
    pub reads: Vec<ReadSummary>,
    pub trace: WorkloadTrace,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        format!(
            "pathogen {}: {} / {} reads mapped ({:.3}), median identity {:.3} -> {}",
            self.pathogen_id,
            self.n_reads_mapped,
            self.n_reads_total,
            self.mapped_fraction,
            self.median_identity,
            if self.detected { "DETECTED" } else { "not detected" }
        )
    }
}

fn median_f64(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

struct ReadOutcome {
    summary: ReadSummary,
    trace: WorkloadTrace,
}

fn map_read(
    read: &FastxRecord,
    index: Option<&FmIndex>,
    reference: &[u8],
    params: &DetectParams,
) -> Result<ReadOutcome> {
    let mut trace = WorkloadTrace::default();
    let mut summary = ReadSummary {
        read_id: read.id.clone(),
        length: read.seq.len(),
        filtered: false,
        mapped: false,
        strand: None,
        position: None,
        identity: None,
    };
    if params.ed_only {
        let mut best: Option<(f64, Strand, usize)> = None;
        let rc = reverse_complement(&read.seq);
        for (strand, q) in [(Strand::Forward, &read.seq), (Strand::Reverse, &rc)] {
            let hit = infix_edit_distance(q, reference);
            trace.add_ed(q.len(), reference.len(), 1);
            let span = (hit.end - hit.start).max(q.len());
            let identity = 1.0 - hit.distance as f64 / span as f64;
            if best.is_none_or(|b| identity > b.0) {
                best = Some((identity, strand, hit.start));
            }
        }
        if let Some((identity, strand, pos)) = best.filter(|b| b.0 >= params.map.min_identity) {
            summary.mapped = true;
            summary.strand = Some(strand);
            summary.position = Some(pos);
            summary.identity = Some(identity);
        }
    } else {
        let index = index.ok_or_else(|| Error::Config("seeded mapping needs an index".into()))?;
        let out = seed_and_extend_traced(index, reference, &read.id, &read.seq, &params.map)?;
        for &(n, m) in &out.extensions {
            trace.add_ed(n, m, 1);
        }
        if let Some(m) = out.mapping {
            summary.mapped = true;
            summary.strand = Some(m.strand);
            summary.position = Some(m.target_position);
            summary.identity = Some(m.identity);
        }
    }
    Ok(ReadOutcome { summary, trace })
}

/// Basecalls (for signal input), filters and maps every read, then applies
/// the detection rule `mapped_fraction ≥ θ_frac ∧ median_identity ≥ θ_id`.
pub fn detect_pathogen(
    input: DetectInput<'_>,
    index: Option<&FmIndex>,
    reference: &[u8],
    params: &DetectParams,
) -> Result<DetectionReport> {
    if let Some(position) = first_invalid_base(reference) {
        return Err(Error::InvalidSymbol {
            symbol: reference[position] as char,
            position,
        });
    }
    if !params.ed_only && index.is_none() {
        return Err(Error::Config("detection needs an FM-index of the reference".into()));
    }
    let mut trace = WorkloadTrace::default();
    let reads: Vec<FastxRecord> = match input {
        DetectInput::Signals { signals, basecaller } => {
            let bc = basecaller
                .ok_or_else(|| Error::Config("signal input needs basecaller weights".into()))?;
            let called = bc.call_all(signals)?;
            for c in &called {
                trace.merge(&c.trace);
            }
            called.into_iter().map(|c| c.record).collect()
        }
        DetectInput::Reads(reads) => reads.to_vec(),
    };
    let n_total = reads.len();
    let long_enough: HashSet<usize> = reads
        .iter()
        .enumerate()
        .filter(|(_, r)| r.seq.len() >= params.min_read_len)
        .map(|(i, _)| i)
        .collect();
    let outcomes: Vec<ReadOutcome> = reads
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            if long_enough.contains(&i) {
                map_read(r, index, reference, params)
            } else {
                Ok(ReadOutcome {
                    summary: ReadSummary {
                        read_id: r.id.clone(),
                        length: r.seq.len(),
                        filtered: true,
                        mapped: false,
                        strand: None,
                        position: None,
                        identity: None,
                    },
                    trace: WorkloadTrace::default(),
                })
            }
        })
        .collect::<Result<_>>()?;
    let mut identities = Vec::new();
    let mut summaries = Vec::with_capacity(n_total);
    for o in outcomes {
        trace.merge(&o.trace);
        if let Some(id) = o.summary.identity {
            identities.push(id);
        }
        summaries.push(o.summary);
    }
    let n_mapped = identities.len();
    let mapped_fraction = if n_total == 0 {
        0.0
    } else {
        n_mapped as f64 / n_total as f64
    };
    let median_identity = median_f64(&mut identities);
    let detected = n_total > 0 && mapped_fraction >= params.theta_frac && median_identity >= params.theta_id;
    Ok(DetectionReport {
        pathogen_id: params.pathogen_id.clone(),
        n_reads_total: n_total,
        n_reads_mapped: n_mapped,
        mapped_fraction,
        median_identity,
        detected,
        theta_frac: params.theta_frac,
        theta_id: params.theta_id,
        total_macs: trace.macs(),
        total_dp_cells: trace.dp_cells(),
        reads: summaries,
        trace,
    })
}
