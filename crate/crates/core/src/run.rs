//! TREC run files and the score-breakdown sidecar.
//!
//! Run lines are `query_id Q0 passage_id rank score tag`. The tag carries
//! the run's provenance (format version, config hash, seed) so every line
//! is traceable to the configuration that produced it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactMeta;
use crate::error::{EfrError, Result};
use crate::scorer::ScoreBreakdown;

pub const RUN_FORMAT_VERSION: u32 = 1;

/// Ranked results per query, in query order.
pub type RunResults = Vec<(String, Vec<(String, f64)>)>;

/// Tag embedded in every run line.
pub fn run_tag(meta: &ArtifactMeta) -> String {
    format!("efr{}-{}-s{}", RUN_FORMAT_VERSION, meta.config_hash, meta.seed)
}

pub fn write_run(path: impl AsRef<Path>, results: &RunResults, tag: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (query_id, ranked) in results {
        for (rank0, (passage_id, score)) in ranked.iter().enumerate() {
            writeln!(w, "{query_id} Q0 {passage_id} {} {score} {tag}", rank0 + 1)
                .map_err(|e| EfrError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| EfrError::io(path, e))
}

/// Read a run file, grouping by query id and ordering each group by rank.
/// Query groups come back sorted by query id.
pub fn read_run(path: impl AsRef<Path>) -> Result<RunResults> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| EfrError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut grouped: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EfrError::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(EfrError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let rank: usize = fields[3].parse().map_err(|_| EfrError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("bad rank {:?}", fields[3]),
        })?;
        let score: f64 = fields[4].parse().map_err(|_| EfrError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("bad score {:?}", fields[4]),
        })?;
        grouped
            .entry(fields[0].to_string())
            .or_default()
            .push((rank, fields[2].to_string(), score));
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (query_id, mut entries) in grouped {
        entries.sort_by_key(|(rank, _, _)| *rank);
        out.push((
            query_id,
            entries.into_iter().map(|(_, id, score)| (id, score)).collect(),
        ));
    }
    Ok(out)
}

/// One sidecar line: the breakdown for a ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    #[serde(flatten)]
    pub breakdown: ScoreBreakdown,
}

pub fn write_breakdowns(path: impl AsRef<Path>, records: &[BreakdownRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("serializable breakdown");
        writeln!(w, "{line}").map_err(|e| EfrError::io(path, e))?;
    }
    w.flush().map_err(|e| EfrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.trec");
        let results: RunResults = vec![
            ("q1".to_string(), vec![("p3".to_string(), 2.5), ("p1".to_string(), 1.25)]),
            ("q2".to_string(), vec![("p2".to_string(), 0.5)]),
        ];
        write_run(&path, &results, "efr1-abc-s7").unwrap();
        let loaded = read_run(&path).unwrap();
        assert_eq!(loaded, results);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "q1 Q0 p3 1 2.5 efr1-abc-s7");
    }

    #[test]
    fn read_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.trec");
        std::fs::write(&path, "q1 Q0 p1 1 0.5\n").unwrap();
        let err = read_run(&path).unwrap_err();
        assert!(err.to_string().contains("6 fields"));
    }
}
