//! Reference indexing and read mapping: prefix-doubling suffix array,
//! BWT/FM-index with sampled occurrences and suffix-array samples, and
//! seed-and-extend mapping on top of the ED kernels.

mod fm;
mod mapper;
mod suffix_array;

pub use fm::{FmIndex, SaRange, DEFAULT_OCC_STRIDE, DEFAULT_SA_STRIDE};
pub use mapper::{seed_and_extend, seed_and_extend_traced, MapOutcome, MapParams, MappingResult, Seed};
pub use suffix_array::suffix_array;
