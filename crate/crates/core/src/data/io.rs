//! Canonical on-disk format: one JSON-lines file whose first record is
//! `{"header": ...}` followed by one rally per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetHeader, Rally};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    header: DatasetHeader,
}

pub fn write_jsonl_to<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &HeaderRecord { header: d.header.clone() })?;
    w.write_all(b"\n")?;
    for rally in &d.rallies {
        serde_json::to_writer(&mut w, rally)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl_to(d, BufWriter::new(File::create(path)?))
}

pub fn read_jsonl_from<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let header = match lines.next() {
        Some((_, line)) => serde_json::from_str::<HeaderRecord>(&line?)?.header,
        None => return Err(Error::EmptyInput("dataset file has no header record")),
    };
    let mut rallies = Vec::new();
    for (i, line) in lines {
        let rally: Rally = serde_json::from_str(&line?)
            .map_err(|e| Error::MalformedRow { row: i + 1, reason: e.to_string() })?;
        rallies.push(rally);
    }
    let d = Dataset { header, rallies };
    d.validate()?;
    Ok(d)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    read_jsonl_from(BufReader::new(File::open(path)?))
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn dataset_hash(d: &Dataset) -> String {
    let mut buf = Vec::new();
    write_jsonl_to(d, &mut buf).expect("writing to memory cannot fail");
    hex::encode(Sha256::digest(&buf))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let d = dataset(vec![simple_rally("r1", 3), simple_rally("r2", 1)]);
        let mut buf = Vec::new();
        write_jsonl_to(&d, &mut buf).unwrap();
        let back = read_jsonl_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        assert_eq!(dataset_hash(&back), dataset_hash(&d));
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = dataset(vec![simple_rally("r1", 3)]);
        let b = dataset(vec![simple_rally("r1", 2)]);
        assert_ne!(dataset_hash(&a), dataset_hash(&b));
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(matches!(read_jsonl_from("".as_bytes()), Err(Error::EmptyInput(_))));
    }
}
