//! Truth TSV written next to simulated signals. One row per read:
//!
//! ```text
//! #read_id  signal_file  reference  strand  ref_start  ref_end  sequence  base_starts
//! ```
//!
//! `base_starts` is a comma-separated list of per-base start samples followed
//! by the signal length.

use std::path::Path;

use super::bin::{read_all, write_all};
use crate::signal_sim::Strand;
use crate::{Error, Result};

pub const HEADER: &str =
    "#read_id\tsignal_file\treference\tstrand\tref_start\tref_end\tsequence\tbase_starts";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub read_id: String,
    pub signal_file: String,
    pub reference: String,
    pub strand: Strand,
    pub ref_start: usize,
    pub ref_end: usize,
    pub sequence: Vec<u8>,
    pub base_starts: Vec<usize>,
}

pub fn format(rows: &[TruthRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        let starts: Vec<String> = r.base_starts.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.read_id,
            r.signal_file,
            r.reference,
            r.strand.symbol(),
            r.ref_start,
            r.ref_end,
            String::from_utf8_lossy(&r.sequence),
            starts.join(",")
        ));
    }
    out
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<TruthRow>> {
    let mut rows = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::malformed(path, at, reason.to_string());
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(&format!("expected 8 columns, found {}", f.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("bad {what} {s:?}")))
        };
        let strand = match f[3] {
            "+" => Strand::Forward,
            "-" => Strand::Reverse,
            other => return Err(bad(&format!("bad strand {other:?}"))),
        };
        let base_starts = f[7]
            .split(',')
            .map(|s| num(s, "base start"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TruthRow {
            read_id: f[0].to_string(),
            signal_file: f[1].to_string(),
            reference: f[2].to_string(),
            strand,
            ref_start: num(f[4], "ref_start")?,
            ref_end: num(f[5], "ref_end")?,
            sequence: f[6].as_bytes().to_vec(),
            base_starts,
        });
    }
    Ok(rows)
}

pub fn write_file(path: &Path, rows: &[TruthRow]) -> Result<()> {
    write_all(path, format(rows).as_bytes())
}

pub fn read_file(path: &Path) -> Result<Vec<TruthRow>> {
    let bytes = read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::malformed(path, e.utf8_error().valid_up_to() as u64, "invalid UTF-8")
    })?;
    parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![TruthRow {
            read_id: "read_000000".into(),
            signal_file: "signals/read_000000.nsig".into(),
            reference: "g".into(),
            strand: Strand::Reverse,
            ref_start: 10,
            ref_end: 13,
            sequence: b"ACG".to_vec(),
            base_starts: vec![0, 4, 9, 12],
        }];
        let text = format(&rows);
        assert_eq!(parse(&text, Path::new("t.tsv")).unwrap(), rows);
    }

    #[test]
    fn bad_row_reports_line_offset() {
        let text = format!("{HEADER}\nx\ty\n");
        let err = parse(&text, Path::new("t.tsv")).unwrap_err();
        assert!(matches!(err, Error::Malformed { offset, .. } if offset == HEADER.len() as u64 + 1));
    }
}
