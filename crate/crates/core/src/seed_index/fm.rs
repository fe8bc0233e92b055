use super::suffix_array::suffix_array;
use crate::{base_code, Error, Result, BASES};

pub const DEFAULT_OCC_STRIDE: usize = 64;
pub const DEFAULT_SA_STRIDE: usize = 32;

/// Half-open range of suffix-array rows `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaRange {
    pub lo: usize,
    pub hi: usize,
}

impl SaRange {
    pub fn count(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// FM-index over `text$`.
///
/// The BWT is stored as 2-bit base codes with the `$` row recorded
/// separately. Occurrence counts are checkpointed every `occ_stride` rows and
/// suffix-array values are kept for rows whose text position is a multiple
/// of `sa_stride`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FmIndex {
    pub(crate) text_len: usize,
    pub(crate) bwt: Vec<u8>,
    pub(crate) dollar_row: usize,
    /// `c[b]`: rows whose first symbol sorts before base `b` (`$` included);
    /// `c[4]` is the total row count.
    pub(crate) c: [u64; 5],
    pub(crate) occ_stride: usize,
    /// `occ[k][b]`: occurrences of `b` in `bwt[..k * occ_stride]`.
    pub(crate) occ: Vec<[u32; 4]>,
    pub(crate) sa_stride: usize,
    /// Sampled rows (ascending) and their text positions.
    pub(crate) sa_rows: Vec<u64>,
    pub(crate) sa_values: Vec<u64>,
    /// Per-64-row word of the sampled-row bitmap, with the rank before it.
    pub(crate) sampled_bits: Vec<u64>,
    pub(crate) sampled_rank: Vec<u32>,
}

impl FmIndex {
    pub fn build(reference: &[u8]) -> Result<FmIndex> {
        Self::build_with(reference, DEFAULT_OCC_STRIDE, DEFAULT_SA_STRIDE)
    }

    pub fn build_with(reference: &[u8], occ_stride: usize, sa_stride: usize) -> Result<FmIndex> {
        if reference.is_empty() {
            return Err(Error::InvalidArgument("reference is empty".into()));
        }
        if occ_stride == 0 || sa_stride == 0 {
            return Err(Error::InvalidArgument("index strides must be >= 1".into()));
        }
        if reference.len() >= u32::MAX as usize {
            return Err(Error::InvalidArgument("reference too long".into()));
        }
        let mut text = Vec::with_capacity(reference.len() + 1);
        for (position, &b) in reference.iter().enumerate() {
            let code = base_code(b).ok_or(Error::InvalidSymbol {
                symbol: b as char,
                position,
            })?;
            text.push(code + 1);
        }
        text.push(0);
        let sa = suffix_array(&text);
        let n = reference.len();

        let mut bwt = Vec::with_capacity(n + 1);
        let mut dollar_row = 0;
        for (row, &p) in sa.iter().enumerate() {
            if p == 0 {
                dollar_row = row;
                bwt.push(0);
            } else {
                bwt.push(text[p - 1] - 1);
            }
        }
        let mut sa_rows = Vec::new();
        let mut sa_values = Vec::new();
        for (row, &p) in sa.iter().enumerate() {
            if p % sa_stride == 0 {
                sa_rows.push(row as u64);
                sa_values.push(p as u64);
            }
        }
        Ok(FmIndex::assemble(n, bwt, dollar_row, occ_stride, sa_stride, sa_rows, sa_values))
    }

    /// Derives counts, checkpoints and the sampled-row bitmap from the BWT.
    pub(crate) fn assemble(
        text_len: usize,
        bwt: Vec<u8>,
        dollar_row: usize,
        occ_stride: usize,
        sa_stride: usize,
        sa_rows: Vec<u64>,
        sa_values: Vec<u64>,
    ) -> FmIndex {
        let occ = compute_checkpoints(&bwt, dollar_row, occ_stride);
        let totals = occ_totals(&bwt, dollar_row);
        let mut c = [0u64; 5];
        c[0] = 1;
        for b in 0..4 {
            c[b + 1] = c[b] + totals[b];
        }
        let rows = bwt.len();
        let words = rows.div_ceil(64);
        let mut sampled_bits = vec![0u64; words];
        for &r in &sa_rows {
            sampled_bits[r as usize / 64] |= 1 << (r % 64);
        }
        let mut sampled_rank = Vec::with_capacity(words);
        let mut acc = 0u32;
        for w in &sampled_bits {
            sampled_rank.push(acc);
            acc += w.count_ones();
        }
        FmIndex {
            text_len,
            bwt,
            dollar_row,
            c,
            occ_stride,
            occ,
            sa_stride,
            sa_rows,
            sa_values,
            sampled_bits,
            sampled_rank,
        }
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    /// Rows in the index (`text_len + 1`).
    pub fn rows(&self) -> usize {
        self.bwt.len()
    }

    pub fn occ_stride(&self) -> usize {
        self.occ_stride
    }

    pub fn sa_stride(&self) -> usize {
        self.sa_stride
    }

    pub fn counts(&self) -> [u64; 5] {
        self.c
    }

    /// BWT as text, `$` included.
    pub fn bwt_string(&self) -> Vec<u8> {
        self.bwt
            .iter()
            .enumerate()
            .map(|(r, &b)| if r == self.dollar_row { b'$' } else { BASES[b as usize] })
            .collect()
    }

    /// Occurrences of base code `b` in `bwt[..i]`.
    pub fn occ(&self, b: u8, i: usize) -> usize {
        let k = i / self.occ_stride;
        let mut n = self.occ[k][b as usize] as usize;
        let start = k * self.occ_stride;
        for r in start..i {
            if self.bwt[r] == b && r != self.dollar_row {
                n += 1;
            }
        }
        n
    }

    /// LF mapping: row of the suffix one position to the left.
    pub fn lf(&self, row: usize) -> usize {
        if row == self.dollar_row {
            return 0;
        }
        let b = self.bwt[row];
        self.c[b as usize] as usize + self.occ(b, row)
    }

    /// Suffix-array interval of rows prefixed by `pattern`. The empty
    /// pattern matches every row.
    pub fn backward_search(&self, pattern: &[u8]) -> Result<SaRange> {
        let mut lo = 0;
        let mut hi = self.rows();
        for (position, &sym) in pattern.iter().enumerate().rev() {
            let b = base_code(sym).ok_or(Error::InvalidSymbol {
                symbol: sym as char,
                position,
            })?;
            lo = self.c[b as usize] as usize + self.occ(b, lo);
            hi = self.c[b as usize] as usize + self.occ(b, hi);
            if lo >= hi {
                return Ok(SaRange { lo, hi: lo });
            }
        }
        Ok(SaRange { lo, hi })
    }

    fn sampled(&self, row: usize) -> Option<u64> {
        let w = self.sampled_bits[row / 64];
        let bit = 1u64 << (row % 64);
        if w & bit == 0 {
            return None;
        }
        let rank = self.sampled_rank[row / 64] as usize + (w & (bit - 1)).count_ones() as usize;
        Some(self.sa_values[rank])
    }

    /// Text position of one suffix-array row.
    pub fn locate_row(&self, mut row: usize) -> usize {
        let mut steps = 0;
        loop {
            if let Some(p) = self.sampled(row) {
                return p as usize + steps;
            }
            row = self.lf(row);
            steps += 1;
        }
    }

    /// Sorted text positions of every row in `range`.
    pub fn locate(&self, range: SaRange) -> Vec<usize> {
        let mut out: Vec<usize> = (range.lo..range.hi).map(|r| self.locate_row(r)).collect();
        out.sort_unstable();
        out
    }

    /// Reconstructs the text by walking LF from the `$` suffix.
    pub fn inverse_bwt(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.text_len];
        let mut row = 0;
        for k in (0..self.text_len).rev() {
            out[k] = BASES[self.bwt[row] as usize];
            row = self.lf(row);
        }
        out
    }

    /// Whether every stored checkpoint equals a from-scratch prefix count.
    pub fn checkpoints_consistent(&self) -> bool {
        self.occ == compute_checkpoints(&self.bwt, self.dollar_row, self.occ_stride)
    }
}

fn occ_totals(bwt: &[u8], dollar_row: usize) -> [u64; 4] {
    let mut t = [0u64; 4];
    for (r, &b) in bwt.iter().enumerate() {
        if r != dollar_row {
            t[b as usize] += 1;
        }
    }
    t
}

pub(crate) fn compute_checkpoints(bwt: &[u8], dollar_row: usize, stride: usize) -> Vec<[u32; 4]> {
    let mut out = Vec::with_capacity(bwt.len() / stride + 1);
    let mut run = [0u32; 4];
    for (r, &b) in bwt.iter().enumerate() {
        if r % stride == 0 {
            out.push(run);
        }
        if r != dollar_row {
            run[b as usize] += 1;
        }
    }
    if bwt.len() % stride == 0 {
        out.push(run);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_positions(text: &[u8], pat: &[u8]) -> Vec<usize> {
        if pat.is_empty() {
            return (0..=text.len()).collect();
        }
        (0..text.len().saturating_sub(pat.len() - 1))
            .filter(|&i| &text[i..i + pat.len()] == pat)
            .collect()
    }

    #[test]
    fn small_text() {
        let idx = FmIndex::build(b"ACAACG").unwrap();
        assert_eq!(idx.bwt_string(), b"GC$AAAC");
        assert_eq!(idx.inverse_bwt(), b"ACAACG");
        let r = idx.backward_search(b"AC").unwrap();
        assert_eq!(r.count(), 2);
        assert_eq!(idx.locate(r), vec![0, 3]);
        assert!(idx.backward_search(b"TT").unwrap().is_empty());
        assert_eq!(idx.backward_search(b"ACAACG").unwrap().count(), 1);
        assert_eq!(idx.locate(idx.backward_search(b"ACAACG").unwrap()), vec![0]);
        assert_eq!(idx.backward_search(b"").unwrap().count(), 7);
        assert!(idx.locate(SaRange { lo: 3, hi: 3 }).is_empty());
    }

    #[test]
    fn single_base() {
        let idx = FmIndex::build(b"A").unwrap();
        // Rotations of "A$": "$A" < "A$", so BWT = "A$".
        assert_eq!(idx.bwt_string(), b"A$");
        assert_eq!(idx.inverse_bwt(), b"A");
    }

    #[test]
    fn first_column_is_sorted_text() {
        let text = b"GATTACAGATTACACCG";
        let idx = FmIndex::build(text).unwrap();
        let mut sorted: Vec<u8> = text.to_vec();
        sorted.push(b'$');
        sorted.sort_by_key(|&b| if b == b'$' { 0 } else { b });
        let first: Vec<u8> = (0..idx.rows())
            .map(|r| {
                if r == 0 {
                    b'$'
                } else {
                    let b = (0..4).find(|&b| idx.c[b + 1] as usize > r).unwrap();
                    BASES[b]
                }
            })
            .collect();
        assert_eq!(first, sorted);
    }

    #[test]
    fn invalid_input() {
        assert!(FmIndex::build(b"").is_err());
        assert!(matches!(
            FmIndex::build(b"ACNG"),
            Err(Error::InvalidSymbol { position: 2, .. })
        ));
        let idx = FmIndex::build(b"ACGT").unwrap();
        assert!(idx.backward_search(b"AX").is_err());
    }

    #[test]
    fn lf_walk_visits_every_row_once() {
        let idx = FmIndex::build_with(b"TTAGGACCATTAGACAAGT", 4, 3).unwrap();
        let mut seen = vec![false; idx.rows()];
        let mut row = idx.dollar_row;
        for _ in 0..idx.rows() {
            assert!(!seen[row]);
            seen[row] = true;
            row = idx.lf(row);
        }
        assert!(seen.iter().all(|&s| s));
        assert!(idx.checkpoints_consistent());
    }

    #[test]
    fn matches_naive_scan_with_small_strides() {
        let text = b"ACGTTGCAACGTACGATCGATCGGGCTAACGT";
        let idx = FmIndex::build_with(text, 3, 5).unwrap();
        for pat in [&b"ACG"[..], b"T", b"CG", b"GATC", b"TTT", b"ACGT"] {
            let r = idx.backward_search(pat).unwrap();
            assert_eq!(idx.locate(r), naive_positions(text, pat), "{pat:?}");
        }
    }
}
