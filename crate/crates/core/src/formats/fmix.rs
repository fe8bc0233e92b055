//! FMIX index files: `"FMIX"`, `u16` version, `u64` text length, `u32` occ
//! stride, `u32` SA stride, `u64` `$` row, 2-bit packed BWT (four symbols per
//! byte, first symbol in the low bits, `$` stored as `A`), `C` as five `u64`,
//! occ checkpoints (`u64` count, then four `u32` each), SA samples (`u64`
//! count, then `u64` row and `u64` position each).

use std::path::Path;

use super::bin::{read_all, write_all, ByteReader, ByteWriter};
use crate::seed_index::FmIndex;
use crate::Result;

pub const MAGIC: &[u8; 4] = b"FMIX";
pub const VERSION: u16 = 1;

pub fn encode(index: &FmIndex) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u64(index.text_len as u64);
    w.u32(index.occ_stride as u32);
    w.u32(index.sa_stride as u32);
    w.u64(index.dollar_row as u64);
    for chunk in index.bwt.chunks(4) {
        let mut byte = 0u8;
        for (k, &b) in chunk.iter().enumerate() {
            byte |= b << (2 * k);
        }
        w.u8(byte);
    }
    for c in index.c {
        w.u64(c);
    }
    w.u64(index.occ.len() as u64);
    for row in &index.occ {
        for &v in row {
            w.u32(v);
        }
    }
    w.u64(index.sa_rows.len() as u64);
    for (&r, &p) in index.sa_rows.iter().zip(&index.sa_values) {
        w.u64(r);
        w.u64(p);
    }
    w.buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FmIndex> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let len_at = r.offset();
    let text_len = r.u64("text length")?;
    if text_len == 0 || text_len >= u32::MAX as u64 {
        return Err(r.error_at(len_at, format!("implausible text length {text_len}")));
    }
    let text_len = text_len as usize;
    let rows = text_len + 1;
    let stride_at = r.offset();
    let occ_stride = r.u32("occ stride")? as usize;
    let sa_stride = r.u32("sa stride")? as usize;
    if occ_stride == 0 || sa_stride == 0 {
        return Err(r.error_at(stride_at, "zero stride"));
    }
    let dollar_at = r.offset();
    let dollar_row = r.u64("dollar row")? as usize;
    if dollar_row >= rows {
        return Err(r.error_at(dollar_at, "dollar row out of range"));
    }
    let packed = r.take(rows.div_ceil(4), "bwt")?;
    let bwt: Vec<u8> = (0..rows)
        .map(|i| (packed[i / 4] >> (2 * (i % 4))) & 3)
        .collect();
    let c_at = r.offset();
    let mut c = [0u64; 5];
    for v in &mut c {
        *v = r.u64("C array")?;
    }
    let occ_at = r.offset();
    let occ_count = r.u64("occ count")? as usize;
    if occ_count != rows / occ_stride + 1 {
        return Err(r.error_at(occ_at, format!("expected {} occ checkpoints", rows / occ_stride + 1)));
    }
    let occ_bytes = r.take(occ_count.saturating_mul(16), "occ checkpoints")?;
    let occ: Vec<[u32; 4]> = occ_bytes
        .chunks_exact(16)
        .map(|c| {
            let mut row = [0u32; 4];
            for (k, v) in row.iter_mut().enumerate() {
                *v = u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            }
            row
        })
        .collect();
    let sa_at = r.offset();
    let sa_count = r.u64("sa sample count")? as usize;
    if sa_count > rows {
        return Err(r.error_at(sa_at, "too many SA samples"));
    }
    let mut sa_rows = Vec::with_capacity(sa_count);
    let mut sa_values = Vec::with_capacity(sa_count);
    for _ in 0..sa_count {
        let at = r.offset();
        let row = r.u64("sa row")?;
        let pos = r.u64("sa position")?;
        if row as usize >= rows || pos as usize > text_len || sa_rows.last().is_some_and(|&l| l >= row) {
            return Err(r.error_at(at, "invalid SA sample"));
        }
        sa_rows.push(row);
        sa_values.push(pos);
    }
    r.finish()?;

    let index = FmIndex::assemble(text_len, bwt, dollar_row, occ_stride, sa_stride, sa_rows, sa_values);
    if index.c != c {
        return Err(r.error_at(c_at, "C array disagrees with BWT"));
    }
    if index.occ != occ {
        return Err(r.error_at(occ_at, "occ checkpoints disagree with BWT"));
    }
    if !index.sa_values.contains(&0) || !index.sa_values.iter().all(|&p| p as usize % sa_stride == 0) {
        return Err(r.error_at(sa_at, "SA samples inconsistent with stride"));
    }
    Ok(index)
}

pub fn write_file(path: &Path, index: &FmIndex) -> Result<()> {
    write_all(path, &encode(index))
}

pub fn read_file(path: &Path) -> Result<FmIndex> {
    decode(&read_all(path)?, path)
}
