//! Passage and query data model plus JSON-lines ingestion.
//!
//! All types are immutable after load and safe to share across threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EfrError, Result};
use crate::text::{tokenize, Normalizer};

/// A retrievable text unit from the knowledge corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub text: String,
    /// Token count under the shared tokenizer; derived, not serialized.
    #[serde(skip)]
    pub token_count: usize,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = tokenize(&text).len();
        Passage {
            id: id.into(),
            text,
            token_count,
        }
    }
}

/// Where an entity candidate came from. Mirrors the upstream extraction
/// taxonomy; candidates arrive pre-extracted in query files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    Question,
    SubQuestion,
    Candidate,
    Tag,
    Wikidata,
    Caption,
}

impl EntitySource {
    pub const ALL: [EntitySource; 6] = [
        EntitySource::Question,
        EntitySource::SubQuestion,
        EntitySource::Candidate,
        EntitySource::Tag,
        EntitySource::Wikidata,
        EntitySource::Caption,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntitySource::Question => "question",
            EntitySource::SubQuestion => "sub_question",
            EntitySource::Candidate => "candidate",
            EntitySource::Tag => "tag",
            EntitySource::Wikidata => "wikidata",
            EntitySource::Caption => "caption",
        }
    }
}

impl fmt::Display for EntitySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntitySource {
    type Err = EfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "question" => Ok(EntitySource::Question),
            "sub_question" => Ok(EntitySource::SubQuestion),
            "candidate" => Ok(EntitySource::Candidate),
            "tag" => Ok(EntitySource::Tag),
            "wikidata" => Ok(EntitySource::Wikidata),
            "caption" => Ok(EntitySource::Caption),
            other => Err(EfrError::UnknownSource(other.to_string())),
        }
    }
}

/// A candidate critical entity with provenance and, once mined, an oracle
/// label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Entity {
    pub text: String,
    pub source: EntitySource,
    /// Set by the oracle miner; absent in raw query files.
    #[serde(rename = "oracle", skip_serializing_if = "Option::is_none", default)]
    pub oracle_label: Option<bool>,
}

impl Entity {
    pub fn new(text: impl Into<String>, source: EntitySource) -> Self {
        Entity {
            text: text.into(),
            source,
            oracle_label: None,
        }
    }
}

/// A question with its caption surrogate, gold answers, and entity
/// candidates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct QueryExample {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub caption: String,
    pub answers: Vec<String>,
    #[serde(default)]
    pub entities: Vec<Entity>,
}

/// Id-keyed view over a loaded corpus.
pub struct PassageMap<'a> {
    by_id: HashMap<&'a str, &'a Passage>,
}

impl<'a> PassageMap<'a> {
    pub fn new(passages: &'a [Passage]) -> Self {
        PassageMap {
            by_id: passages.iter().map(|p| (p.id.as_str(), p)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&'a Passage> {
        self.by_id.get(id).copied().ok_or_else(|| EfrError::UnknownId {
            what: "passage",
            id: id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// True iff some answer's normalized token sequence occurs contiguously in
/// the normalized passage text.
///
/// Answers whose normalized form is empty are skipped; if every answer
/// normalizes to empty the gold definition is unanswerable and this is an
/// error.
pub fn contains_answer(norm: &Normalizer, passage_text: &str, answers: &[String]) -> Result<bool> {
    let passage_tokens = norm.tokens(passage_text);
    let mut any_usable = false;
    for answer in answers {
        let needle = norm.tokens(answer);
        if needle.is_empty() {
            continue;
        }
        any_usable = true;
        if crate::text::token_subsequence(&passage_tokens, &needle) {
            return Ok(true);
        }
    }
    if !any_usable {
        return Err(EfrError::Invalid(
            "every answer normalizes to the empty string".to_string(),
        ));
    }
    Ok(false)
}

fn load_jsonl<T, F>(path: &Path, mut validate: F) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(&T, usize) -> Result<()>,
{
    let file = File::open(path).map_err(|e| EfrError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EfrError::io(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| EfrError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: e.to_string(),
        })?;
        validate(&record, lineno)?;
        out.push(record);
    }
    Ok(out)
}

/// Load a passage corpus from JSON-lines (`{"id", "text"}` per line).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Passage>> {
    let path = path.as_ref();
    let mut seen: HashSet<String> = HashSet::new();
    let mut passages = load_jsonl::<Passage, _>(path, |p, lineno| {
        if p.id.is_empty() {
            return Err(EfrError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: "empty passage id".to_string(),
            });
        }
        if p.text.is_empty() {
            return Err(EfrError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("passage {:?} has empty text", p.id),
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(EfrError::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id: p.id.clone(),
            });
        }
        Ok(())
    })?;
    for p in &mut passages {
        p.token_count = tokenize(&p.text).len();
    }
    Ok(passages)
}

/// Load queries from JSON-lines
/// (`{"id", "question", "caption", "answers", "entities"}` per line).
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryExample>> {
    let path = path.as_ref();
    let mut seen: HashSet<String> = HashSet::new();
    load_jsonl::<QueryExample, _>(path, |q, lineno| {
        let err = |msg: String| EfrError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if q.id.is_empty() {
            return Err(err("empty query id".to_string()));
        }
        if q.question.is_empty() {
            return Err(err(format!("query {:?} has empty question", q.id)));
        }
        if q.answers.is_empty() {
            return Err(err(format!("query {:?} has no answers", q.id)));
        }
        let mut pairs: HashSet<(&str, EntitySource)> = HashSet::new();
        for e in &q.entities {
            if e.text.is_empty() {
                return Err(err(format!("query {:?} has an empty entity text", q.id)));
            }
            if !pairs.insert((e.text.as_str(), e.source)) {
                return Err(err(format!(
                    "query {:?} has duplicate entity ({:?}, {})",
                    q.id, e.text, e.source
                )));
            }
        }
        if !seen.insert(q.id.clone()) {
            return Err(EfrError::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id: q.id.clone(),
            });
        }
        Ok(())
    })
}

fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| EfrError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| EfrError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|e| EfrError::io(path, e))?;
    }
    writer.flush().map_err(|e| EfrError::io(path, e))
}

pub fn save_corpus(path: impl AsRef<Path>, passages: &[Passage]) -> Result<()> {
    save_jsonl(path.as_ref(), passages)
}

pub fn save_queries(path: impl AsRef<Path>, queries: &[QueryExample]) -> Result<()> {
    save_jsonl(path.as_ref(), queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn norm() -> Normalizer {
        Normalizer::default()
    }

    #[test]
    fn contains_answer_token_level() {
        let ok = contains_answer(
            &norm(),
            "bell peppers are vegetables rich in vitamins",
            &["vegetable".to_string()],
        )
        .unwrap();
        // Token match, not substring: "vegetables" != "vegetable" unstemmed.
        assert!(!ok);
        let stemmed = contains_answer(
            &Normalizer::new(true),
            "bell peppers are vegetables rich in vitamins",
            &["vegetable".to_string()],
        )
        .unwrap();
        assert!(stemmed);
        assert!(!contains_answer(&norm(), "the sky is blue", &["turkey".to_string()]).unwrap());
        assert!(contains_answer(&norm(), "x", &["x".to_string()]).unwrap());
    }

    #[test]
    fn contains_answer_rejects_all_empty_answers() {
        let err = contains_answer(&norm(), "anything", &["the".to_string(), "!!".to_string()]);
        assert!(err.is_err());
    }

    #[test]
    fn contains_answer_union_property() {
        let p = "a cat sat on the mat";
        let a = vec!["cat".to_string()];
        let b = vec!["dog".to_string()];
        let both = vec!["cat".to_string(), "dog".to_string()];
        let lhs = contains_answer(&norm(), p, &both).unwrap();
        let rhs =
            contains_answer(&norm(), p, &a).unwrap() || contains_answer(&norm(), p, &b).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn load_corpus_rejects_duplicates_and_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"id": "p1", "text": "one"}}"#).unwrap();
        writeln!(f, r#"{{"id": "p1", "text": "two"}}"#).unwrap();
        drop(f);
        let err = load_corpus(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p1") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn load_corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let passages = vec![Passage::new("p1", "alpha beta"), Passage::new("p2", "gamma")];
        save_corpus(&path, &passages).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, passages);
        assert_eq!(loaded[0].token_count, 2);
        // Re-serializing reproduces the bytes.
        let bytes = std::fs::read(&path).unwrap();
        save_corpus(&path, &loaded).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        File::create(&path).unwrap();
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn query_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(
            f,
            r#"{{"id": "q1", "question": "what", "caption": "", "answers": [], "entities": []}}"#
        )
        .unwrap();
        drop(f);
        assert!(load_queries(&path).unwrap_err().to_string().contains("no answers"));
    }

    #[test]
    fn entity_source_rejects_unknown() {
        assert!("ocr".parse::<EntitySource>().is_err());
        assert_eq!("sub_question".parse::<EntitySource>().unwrap(), EntitySource::SubQuestion);
    }
}
