//! FASTA/FASTQ reading and writing.
//!
//! The reader accepts multi-line sequences, CRLF line endings and lower-case
//! bases (upper-cased on read). The writer emits one line per sequence.

use std::path::Path;

use super::bin::{read_all, write_all};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastxRecord {
    pub id: String,
    pub seq: Vec<u8>,
    pub qual: Option<Vec<u8>>,
}

impl FastxRecord {
    pub fn new(id: impl Into<String>, seq: Vec<u8>) -> Self {
        FastxRecord {
            id: id.into(),
            seq,
            qual: None,
        }
    }

    pub fn with_qual(id: impl Into<String>, seq: Vec<u8>, qual: Vec<u8>) -> Self {
        FastxRecord {
            id: id.into(),
            seq,
            qual: Some(qual),
        }
    }
}

struct Line<'a> {
    offset: u64,
    text: &'a [u8],
}

fn lines(data: &[u8]) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, &b) in data.iter().enumerate() {
        if b == b'\n' {
            out.push(Line {
                offset: start as u64,
                text: strip_cr(&data[start..i]),
            });
            start = i + 1;
        }
    }
    if start < data.len() {
        out.push(Line {
            offset: start as u64,
            text: strip_cr(&data[start..]),
        });
    }
    out
}

fn strip_cr(s: &[u8]) -> &[u8] {
    s.strip_suffix(b"\r").unwrap_or(s)
}

fn header_id(text: &[u8]) -> String {
    let body = &text[1..];
    let end = body
        .iter()
        .position(|b| b.is_ascii_whitespace())
        .unwrap_or(body.len());
    String::from_utf8_lossy(&body[..end]).into_owned()
}

fn push_bases(dst: &mut Vec<u8>, line: &Line<'_>, path: &Path) -> Result<()> {
    for (i, &b) in line.text.iter().enumerate() {
        let u = b.to_ascii_uppercase();
        if !matches!(u, b'A' | b'C' | b'G' | b'T' | b'N') {
            return Err(Error::malformed(
                path,
                line.offset + i as u64,
                format!("invalid base {:?}", b as char),
            ));
        }
        dst.push(u);
    }
    Ok(())
}

pub fn parse(data: &[u8], path: &Path) -> Result<Vec<FastxRecord>> {
    let lines = lines(data);
    let Some(first) = lines.iter().position(|l| !l.text.is_empty()) else {
        return Ok(Vec::new());
    };
    match lines[first].text[0] {
        b'>' => parse_fasta(&lines[first..], path),
        b'@' => parse_fastq(&lines[first..], path),
        other => Err(Error::malformed(
                path,
                lines[first].offset,
                format!("expected '>' or '@', found {:?}", other as char),
            )),
    }
}

fn parse_fasta(lines: &[Line<'_>], path: &Path) -> Result<Vec<FastxRecord>> {
    let mut out: Vec<FastxRecord> = Vec::new();
    for line in lines {
        if line.text.is_empty() {
            continue;
        }
        if line.text[0] == b'>' {
            out.push(FastxRecord::new(header_id(line.text), Vec::new()));
        } else {
            let rec = out
                .last_mut()
                .ok_or_else(|| Error::malformed(path, line.offset, "sequence before header"))?;
            push_bases(&mut rec.seq, line, path)?;
        }
    }
    Ok(out)
}

fn parse_fastq(lines: &[Line<'_>], path: &Path) -> Result<Vec<FastxRecord>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let header = &lines[i];
        if header.text.is_empty() {
            i += 1;
            continue;
        }
        if header.text[0] != b'@' {
            return Err(Error::malformed(path, header.offset, "expected '@' header"));
        }
        let id = header_id(header.text);
        i += 1;
        let mut seq = Vec::new();
        while i < lines.len() && !lines[i].text.starts_with(b"+") {
            push_bases(&mut seq, &lines[i], path)?;
            i += 1;
        }
        if i == lines.len() {
            return Err(Error::malformed(
                path,
                header.offset,
                "record has no '+' separator",
            ));
        }
        i += 1;
        let mut qual = Vec::new();
        while qual.len() < seq.len() && i < lines.len() {
            qual.extend_from_slice(lines[i].text);
            i += 1;
        }
        if qual.len() != seq.len() {
            return Err(Error::malformed(
                path,
                header.offset,
                format!("quality length {} != sequence length {}", qual.len(), seq.len()),
            ));
        }
        out.push(FastxRecord::with_qual(id, seq, qual));
    }
    Ok(out)
}

/// Canonical single-line serialisation; FASTQ when the record has qualities.
pub fn format_record(rec: &FastxRecord, out: &mut Vec<u8>) {
    match &rec.qual {
        Some(q) => {
            out.push(b'@');
            out.extend_from_slice(rec.id.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(&rec.seq);
            out.extend_from_slice(b"\n+\n");
            out.extend_from_slice(q);
            out.push(b'\n');
        }
        None => {
            out.push(b'>');
            out.extend_from_slice(rec.id.as_bytes());
            out.push(b'\n');
            out.extend_from_slice(&rec.seq);
            out.push(b'\n');
        }
    }
}

pub fn format_records(records: &[FastxRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        format_record(r, &mut out);
    }
    out
}

pub fn read_file(path: &Path) -> Result<Vec<FastxRecord>> {
    parse(&read_all(path)?, path)
}

pub fn write_fasta_file(path: &Path, records: &[FastxRecord]) -> Result<()> {
    let stripped: Vec<FastxRecord> = records
        .iter()
        .map(|r| FastxRecord::new(r.id.clone(), r.seq.clone()))
        .collect();
    write_all(path, &format_records(&stripped))
}

pub fn write_file(path: &Path, records: &[FastxRecord]) -> Result<()> {
    write_all(path, &format_records(records))
}
