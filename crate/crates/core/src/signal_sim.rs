//! Synthetic nanopore-style signal generation with exact ground truth.
//!
//! Each base emits a run of samples (its dwell) at the current level of the
//! k-mer ending at that base, plus Gaussian noise. Everything is a pure
//! function of its inputs and seed.

use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{fastx, nsig, truth};
use crate::{base_code, first_invalid_base, reverse_complement, Error, Result};

/// Seed of the pore model shared by every dataset unless overridden.
pub const DEFAULT_PORE_SEED: u64 = 0x5EED_0001;
pub const DEFAULT_SAMPLE_RATE: u32 = 4000;
pub const DEFAULT_NOISE_SCALE: f32 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoreModel {
    pub context_k: usize,
    pub level_mean: Vec<f32>,
    pub level_std: Vec<f32>,
    /// Mean samples per base.
    pub mean_dwell: f64,
    /// Fraction of the dwell (above the 1-sample floor) that is geometric;
    /// the rest is a fixed offset. 1.0 is a pure geometric dwell.
    pub dwell_dispersion: f64,
}

impl PoreModel {
    pub fn validate(&self) -> Result<()> {
        let expected = 4usize.pow(self.context_k as u32);
        if self.level_mean.len() != expected || self.level_std.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "pore model with k={} needs {expected} levels",
                self.context_k
            )));
        }
        if self.level_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("level std must be > 0".into()));
        }
        if !(self.mean_dwell >= 1.0) {
            return Err(Error::InvalidArgument("mean_dwell must be >= 1".into()));
        }
        if !(self.dwell_dispersion > 0.0 && self.dwell_dispersion <= 1.0) {
            return Err(Error::InvalidArgument(
                "dwell_dispersion must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Table index of the k-mer ending at `pos`. Positions before the start
    /// of the sequence read as `A`.
    pub fn kmer_index(&self, codes: &[u8], pos: usize) -> usize {
        let mut idx = 0usize;
        for j in 0..self.context_k {
            let back = self.context_k - 1 - j;
            let code = if pos >= back { codes[pos - back] } else { 0 };
            idx = idx * 4 + code as usize;
        }
        idx
    }

    fn dwell_sampler(&self) -> DwellSampler {
        let span = self.mean_dwell - 1.0;
        let fixed = ((1.0 - self.dwell_dispersion) * span).round();
        let geometric_mean = self.mean_dwell - fixed;
        DwellSampler {
            base: 1 + fixed as usize,
            // 1 + Geometric(p) has mean 1/p.
            geometric: (geometric_mean > 1.0)
                .then(|| Geometric::new(1.0 / geometric_mean).expect("p in (0,1]")),
        }
    }
}

struct DwellSampler {
    base: usize,
    geometric: Option<Geometric>,
}

impl DwellSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        self.base + self.geometric.map_or(0, |g| g.sample(rng) as usize)
    }
}

/// Sampled sensor trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl RawSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("signal has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(RawSignal {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Ground truth for one synthesized signal. `base_starts` has one entry per
/// base plus a final entry equal to the signal length, so base `i` owns
/// samples `base_starts[i]..base_starts[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub sequence: Vec<u8>,
    pub base_starts: Vec<usize>,
}

impl TruthRecord {
    pub fn dwell_range(&self, base: usize) -> std::ops::Range<usize> {
        self.base_starts[base]..self.base_starts[base + 1]
    }

    pub fn signal_len(&self) -> usize {
        *self.base_starts.last().unwrap_or(&0)
    }
}

/// Random pore model: level means uniform then standardised to zero mean and
/// unit variance across the table; per-level noise std uniform in [0.10, 0.20].
pub fn gen_pore_model(seed: u64, k: usize) -> Result<PoreModel> {
    if !(1..=8).contains(&k) {
        return Err(Error::InvalidArgument(format!("context k={k} not in 1..=8")));
    }
    let n = 4usize.pow(k as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let level_mean = raw.iter().map(|v| ((v - mean) / sd) as f32).collect();
    let level_std = (0..n).map(|_| rng.random_range(0.10f32..0.20)).collect();
    Ok(PoreModel {
        context_k: k,
        level_mean,
        level_std,
        mean_dwell: 10.0,
        dwell_dispersion: 1.0,
    })
}

/// The pore model every command uses unless told otherwise.
pub fn default_pore_model() -> PoreModel {
    gen_pore_model(DEFAULT_PORE_SEED, 6).expect("default k is valid")
}

pub fn synthesize(
    sequence: &[u8],
    pore: &PoreModel,
    sample_rate: u32,
    noise_scale: f32,
    seed: u64,
) -> Result<(RawSignal, TruthRecord)> {
    pore.validate()?;
    if let Some(position) = first_invalid_base(sequence) {
        return Err(Error::InvalidSymbol {
            symbol: sequence[position] as char,
            position,
        });
    }
    if sequence.len() < pore.context_k {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} bases is shorter than k={}",
            sequence.len(),
            pore.context_k
        )));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise_scale must be >= 0".into()));
    }
    let codes: Vec<u8> = sequence.iter().map(|&b| base_code(b).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dwell = pore.dwell_sampler();
    let mut samples = Vec::with_capacity(sequence.len() * pore.mean_dwell as usize);
    let mut base_starts = Vec::with_capacity(sequence.len() + 1);
    for pos in 0..codes.len() {
        base_starts.push(samples.len());
        let kmer = pore.kmer_index(&codes, pos);
        let level = pore.level_mean[kmer];
        let sd = noise_scale * pore.level_std[kmer];
        let noise = Normal::new(0.0f32, sd).expect("finite non-negative std");
        for _ in 0..dwell.sample(&mut rng) {
            let v = if sd > 0.0 { level + noise.sample(&mut rng) } else { level };
            samples.push(v);
        }
    }
    base_starts.push(samples.len());
    let signal = RawSignal::new(samples, sample_rate, format!("synthetic:{seed}"))?;
    Ok((
        signal,
        TruthRecord {
            sequence: sequence.to_vec(),
            base_starts,
        },
    ))
}

/// Uniform random genome over ACGT.
pub fn random_genome(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| crate::BASES[rng.random_range(0..4)]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strand {
    Forward,
    Reverse,
}

impl Strand {
    pub fn symbol(self) -> char {
        match self {
            Strand::Forward => '+',
            Strand::Reverse => '-',
        }
    }
}

/// Where a simulated read came from: `genome[start..end]` on `strand`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOrigin {
    pub start: usize,
    pub end: usize,
    pub strand: Strand,
}

#[derive(Debug, Clone)]
pub struct SimRead {
    pub id: String,
    pub signal: RawSignal,
    pub truth: TruthRecord,
    pub origin: ReadOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadLenDist {
    pub mean: f64,
    pub sd: f64,
    pub min: usize,
}

impl Default for ReadLenDist {
    fn default() -> Self {
        ReadLenDist {
            mean: 500.0,
            sd: 50.0,
            min: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimParams {
    pub pore: PoreModel,
    pub sample_rate: u32,
    pub noise_scale: f32,
    pub read_len: ReadLenDist,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            pore: default_pore_model(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            noise_scale: DEFAULT_NOISE_SCALE,
            read_len: ReadLenDist::default(),
        }
    }
}

/// Per-read seed: reads are independent streams of the dataset seed.
fn read_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ 0x94D0_49BB_1331_11EB
}

const MAX_WINDOW_ATTEMPTS: usize = 1000;

/// Samples `n_reads` reads from both strands of `genome`. Windows containing
/// non-ACGT symbols are skipped and resampled.
pub fn simulate_reads(
    genome: &[u8],
    n_reads: usize,
    params: &SimParams,
    seed: u64,
) -> Result<Vec<SimRead>> {
    if n_reads == 0 {
        return Err(Error::InvalidArgument("n_reads must be >= 1".into()));
    }
    params.pore.validate()?;
    let k = params.pore.context_k;
    if genome.len() < k.max(1) {
        return Err(Error::InvalidArgument(format!(
            "genome of {} bases is too short to sample reads",
            genome.len()
        )));
    }
    (0..n_reads)
        .into_par_iter()
        .map(|i| simulate_one(genome, i, params, seed))
        .collect()
}

fn simulate_one(genome: &[u8], index: usize, params: &SimParams, seed: u64) -> Result<SimRead> {
    let mut rng = ChaCha8Rng::seed_from_u64(read_seed(seed, index));
    let dist = &params.read_len;
    let lo = dist.min.max(params.pore.context_k).min(genome.len());
    let normal = Normal::new(dist.mean, dist.sd.max(0.0)).map_err(|e| {
        Error::InvalidArgument(format!("read length distribution: {e}"))
    })?;
    for _ in 0..MAX_WINDOW_ATTEMPTS {
        let len = (normal.sample(&mut rng).round().max(0.0) as usize).clamp(lo, genome.len());
        let start = rng.random_range(0..=genome.len() - len);
        let strand = if rng.random_bool(0.5) {
            Strand::Forward
        } else {
            Strand::Reverse
        };
        let slice = &genome[start..start + len];
        if let Some(off) = first_invalid_base(slice) {
            warn!(
                "read {index}: skipping window {start}..{} (symbol {:?} at {})",
                start + len,
                slice[off] as char,
                start + off
            );
            continue;
        }
        let seq = match strand {
            Strand::Forward => slice.to_vec(),
            Strand::Reverse => reverse_complement(slice),
        };
        let signal_seed = rng.random::<u64>();
        let (mut signal, truth) = synthesize(
            &seq,
            &params.pore,
            params.sample_rate,
            params.noise_scale,
            signal_seed,
        )?;
        let id = format!("read_{index:06}");
        signal.source_id = id.clone();
        return Ok(SimRead {
            id,
            signal,
            truth,
            origin: ReadOrigin {
                start,
                end: start + len,
                strand,
            },
        });
    }
    Err(Error::InvalidArgument(format!(
        "read {index}: no valid window after {MAX_WINDOW_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone)]
pub enum GenomeSource {
    Sequence { id: String, sequence: Vec<u8> },
    Random { len: usize },
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    pub out_dir: PathBuf,
    pub genome_path: Option<PathBuf>,
    pub truth_path: PathBuf,
    pub signal_paths: Vec<PathBuf>,
}

pub const SIGNAL_DIR: &str = "signals";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const GENOME_FILE: &str = "genome.fasta";

/// Writes a dataset: `signals/<read_id>.nsig`, `truth.tsv` and, for a random
/// genome, `genome.fasta`.
pub fn gen_dataset(
    source: &GenomeSource,
    n_reads: usize,
    params: &SimParams,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetSummary> {
    let (genome_id, genome) = match source {
        GenomeSource::Sequence { id, sequence } => (id.clone(), sequence.clone()),
        GenomeSource::Random { len } => (
            format!("random_{len}"),
            random_genome(*len, seed ^ 0xA5A5_A5A5_A5A5_A5A5),
        ),
    };
    let reads = simulate_reads(&genome, n_reads, params, seed)?;

    let signal_dir = out_dir.join(SIGNAL_DIR);
    std::fs::create_dir_all(&signal_dir).map_err(|e| Error::io(&signal_dir, e))?;

    let genome_path = if matches!(source, GenomeSource::Random { .. }) {
        let path = out_dir.join(GENOME_FILE);
        fastx::write_fasta_file(
            &path,
            &[fastx::FastxRecord::new(genome_id.clone(), genome.clone())],
        )?;
        Some(path)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(reads.len());
    let mut signal_paths = Vec::with_capacity(reads.len());
    for read in &reads {
        let rel = format!("{SIGNAL_DIR}/{}.nsig", read.id);
        let path = out_dir.join(&rel);
        nsig::write_file(&path, &read.signal)?;
        signal_paths.push(path);
        rows.push(truth::TruthRow {
            read_id: read.id.clone(),
            signal_file: rel,
            reference: genome_id.clone(),
            strand: read.origin.strand,
            ref_start: read.origin.start,
            ref_end: read.origin.end,
            sequence: read.truth.sequence.clone(),
            base_starts: read.truth.base_starts.clone(),
        });
    }
    let truth_path = out_dir.join(TRUTH_FILE);
    truth::write_file(&truth_path, &rows)?;
    Ok(DatasetSummary {
        out_dir: out_dir.to_path_buf(),
        genome_path,
        truth_path,
        signal_paths,
    })
}
