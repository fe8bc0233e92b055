//! Compute pipeline for on-device nanopore analysis and a cycle/energy model
//! of the SoC accelerators that run it.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`tensor`]: dense matrices, im2col lowering and reference GEMM.
//! * [`mat_engine`]: functional and cycle-level model of the 4×4 systolic array.
//! * [`signal_sim`]: synthetic pore-model signals with exact ground truth.
//! * [`basecaller`]: six-layer CNN, CTC loss, greedy decoding and training.
//! * [`ed_engine`]: edit-distance kernels and the ED accelerator cycle model.
//! * [`seed_index`]: suffix array, FM-index and seed-and-extend mapping.
//! * [`pipeline`]: support stages and end-to-end pathogen detection.
//! * [`perf`]: SoC-level cycle, energy and SRAM accounting.
//! * [`formats`]: on-disk formats (NSIG, CNNW, FMIX, FASTA/FASTQ, truth TSV).

pub mod basecaller;
pub mod ed_engine;
pub mod error;
pub mod formats;
pub mod mat_engine;
pub mod perf;
pub mod pipeline;
pub mod seed_index;
pub mod signal_sim;
pub mod tensor;

pub use error::{Error, Result};

/// Nucleotide alphabet in class-index order.
pub const BASES: [u8; 4] = *b"ACGT";

/// Maps an upper-case nucleotide to its 2-bit code.
#[inline]
pub fn base_code(b: u8) -> Option<u8> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

#[inline]
pub fn complement(b: u8) -> u8 {
    match b {
        b'A' => b'T',
        b'C' => b'G',
        b'G' => b'C',
        b'T' => b'A',
        other => other,
    }
}

pub fn reverse_complement(seq: &[u8]) -> Vec<u8> {
    seq.iter().rev().map(|&b| complement(b)).collect()
}

/// Returns the offset of the first byte outside `{A,C,G,T}`.
pub fn first_invalid_base(seq: &[u8]) -> Option<usize> {
    seq.iter().position(|&b| base_code(b).is_none())
}
