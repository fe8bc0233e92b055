//! NSIG raw-signal files: `"NSIG"`, `u16` version, `u32` sample rate,
//! `u64` sample count, then `f32` samples.

use std::path::Path;

use super::bin::{read_all, write_all, ByteReader, ByteWriter};
use crate::signal_sim::RawSignal;
use crate::Result;

pub const MAGIC: &[u8; 4] = b"NSIG";
pub const VERSION: u16 = 1;

pub fn encode(signal: &RawSignal) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(signal.sample_rate);
    w.u64(signal.samples.len() as u64);
    w.f32s(&signal.samples);
    w.buf
}

/// Decodes an NSIG buffer. `path` is used for error messages and its file
/// stem becomes the signal's source id.
pub fn decode(bytes: &[u8], path: &Path) -> Result<RawSignal> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let sample_rate = r.u32("sample rate")?;
    let count_at = r.offset();
    let count = r.u64("sample count")?;
    if count == 0 || count.saturating_mul(4) != r.remaining() as u64 {
        return Err(r.error_at(
            count_at,
            format!("count {count} does not match {}-byte payload", r.remaining()),
        ));
    }
    let payload_at = r.offset();
    let samples = r.f32_vec(count as usize, "samples")?;
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(r.error_at(payload_at + 4 * i as u64, "non-finite sample"));
    }
    r.finish()?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RawSignal::new(samples, sample_rate, source_id)
}

pub fn write_file(path: &Path, signal: &RawSignal) -> Result<()> {
    write_all(path, &encode(signal))
}

pub fn read_file(path: &Path) -> Result<RawSignal> {
    decode(&read_all(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn sample() -> RawSignal {
        RawSignal::new(vec![0.5, -1.25, 3.0], 4000, "x").unwrap()
    }

    #[test]
    fn layout_is_fixed() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"NSIG");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4000);
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 18 + 12);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = Path::new("x.nsig");
        let bytes = encode(&sample());
        let back = decode(&bytes, p).unwrap();
        assert_eq!(back.samples, sample().samples);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn errors_carry_offsets() {
        let p = Path::new("bad.nsig");
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, p), Err(Error::Malformed { offset: 0, .. })));

        let mut bytes = encode(&sample());
        bytes[4] = 9;
        assert!(matches!(decode(&bytes, p), Err(Error::Malformed { offset: 4, .. })));

        let mut bytes = encode(&sample());
        bytes.pop();
        assert!(matches!(decode(&bytes, p), Err(Error::Malformed { offset: 10, .. })));
    }
}
