//! Append-only result records, one self-describing JSON object per line.
//! The deterministic payload (everything except wall time) is bit-stable
//! across re-runs with the same config and seed at any worker count.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub experiment: String,
    /// ordered parameter tuple
    pub params: BTreeMap<String, f64>,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: u64,
    pub seed: u64,
    pub code_version: String,
    /// wall time of the producing run; excluded from the canonical form
    pub wall_ms: u64,
}

impl ResultRecord {
    pub fn from_row(row: &gfflab::experiments::Row, seed: u64, wall_ms: u64) -> ResultRecord {
        ResultRecord {
            experiment: row.experiment.clone(),
            params: row.params.iter().cloned().collect(),
            estimate: row.estimate,
            stderr: row.stderr,
            replicas: row.replicas,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_ms,
        }
    }

    /// Serialization of the reproducible payload: wall time zeroed so two
    /// runs of the same config compare bit-exactly.
    pub fn canonical_line(&self) -> String {
        let mut c = self.clone();
        c.wall_ms = 0;
        serde_json::to_string(&c).expect("record serializes")
    }
}

/// Append records to a JSONL file, never rewriting existing lines.
pub fn append(path: &Path, records: &[ResultRecord]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for r in records {
        writeln!(
            f,
            "{}",
            serde_json::to_string(r).expect("record serializes")
        )?;
    }
    Ok(())
}

pub fn load(path: &Path) -> std::io::Result<Vec<ResultRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_append_only() {
        let dir = std::env::temp_dir().join("expcli_records_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.jsonl");
        let _ = std::fs::remove_file(&path);
        let rec = ResultRecord {
            experiment: "corr-sandwich".into(),
            params: [("d".to_string(), 2.0)].into_iter().collect(),
            estimate: 0.25,
            stderr: 0.01,
            replicas: 100,
            seed: 7,
            code_version: "x".into(),
            wall_ms: 1234,
        };
        append(&path, std::slice::from_ref(&rec)).unwrap();
        append(&path, std::slice::from_ref(&rec)).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0], rec);
        // canonical form ignores wall time
        let mut other = rec.clone();
        other.wall_ms = 9999;
        assert_eq!(rec.canonical_line(), other.canonical_line());
    }
}
