//! Inverted-index BM25 retriever with entity-emphasized query augmentation.
//!
//! Scoring uses the Lucene-style smoothed IDF, which is always positive:
//!
//! ```text
//! score(q, d) = sum_t qtf(t) * ln(1 + (N - df + 0.5) / (df + 0.5))
//!                        * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avg))
//! ```
//!
//! Ties are broken by ascending passage id so results are reproducible
//! regardless of corpus insertion order.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::artifact::{self, ArtifactMeta};
use crate::corpus::{Entity, Passage};
use crate::error::{EfrError, Result};
use crate::text::tokenize;

pub const INDEX_MAGIC: &[u8; 4] = b"EFSI";
pub const INDEX_VERSION: u32 = 1;

/// Terms dropped at build time when stopword removal is enabled.
const STOPWORDS: [&str; 26] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "this", "to", "was", "were", "will", "with",
];

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.1, b: 0.4 }
    }
}

/// A query as a term multiset; query term frequency multiplies the term
/// contribution, which matters when an appended entity repeats a question
/// term.
pub type TermBag = BTreeMap<String, u32>;

/// Build a term bag from raw text.
pub fn term_bag(text: &str) -> TermBag {
    let mut bag = TermBag::new();
    for token in tokenize(text) {
        *bag.entry(token).or_insert(0) += 1;
    }
    bag
}

/// Entity-emphasized query: the entity text is appended to the question.
/// Order is irrelevant under bag semantics, so the union of the two term
/// bags is exact.
pub fn augment_query(question: &str, entity: &Entity) -> TermBag {
    let mut bag = term_bag(question);
    for (term, count) in term_bag(&entity.text) {
        *bag.entry(term).or_insert(0) += count;
    }
    bag
}

/// One retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHit {
    pub passage_id: String,
    pub score: f64,
    /// 1-based, consecutive.
    pub rank: usize,
}

/// Immutable BM25 inverted index. Documents are stored sorted by id; the
/// serialized form is canonical (independent of insertion order).
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    remove_stopwords: bool,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u64>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl InvertedIndex {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }
}

/// Build an index over `passages`. Stopword removal is off by default and
/// recorded in the index when enabled.
pub fn build_index(
    passages: &[Passage],
    params: Bm25Params,
    remove_stopwords: bool,
) -> Result<InvertedIndex> {
    if passages.is_empty() {
        return Err(EfrError::Invalid("cannot index an empty corpus".to_string()));
    }
    if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
        return Err(EfrError::Config(format!(
            "bm25 parameters out of range: k1={}, b={}",
            params.k1, params.b
        )));
    }
    let mut order: Vec<&Passage> = passages.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen: HashSet<&str> = HashSet::with_capacity(order.len());
    for p in &order {
        if !seen.insert(p.id.as_str()) {
            return Err(EfrError::Invalid(format!("duplicate passage id {:?}", p.id)));
        }
    }

    let stop: HashSet<&str> = if remove_stopwords {
        STOPWORDS.iter().copied().collect()
    } else {
        HashSet::new()
    };

    let mut doc_ids = Vec::with_capacity(order.len());
    let mut doc_lengths = Vec::with_capacity(order.len());
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    for (ordinal, passage) in order.iter().enumerate() {
        let tokens = tokenize(&passage.text);
        // Document length counts all tokens, matching the passage token
        // count even when stopwords are dropped from the postings.
        doc_lengths.push(tokens.len() as u64);
        doc_ids.push(passage.id.clone());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            if stop.contains(token.as_str()) {
                continue;
            }
            *tf.entry(token).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((ordinal as u32, count));
        }
    }
    let total: u64 = doc_lengths.iter().sum();
    let avg_doc_length = total as f64 / doc_lengths.len() as f64;
    Ok(InvertedIndex {
        params,
        remove_stopwords,
        doc_ids,
        doc_lengths,
        avg_doc_length,
        postings,
    })
}

/// Top-k passages by BM25 score for the given term bag. Only passages
/// matching at least one query term are returned; ties break by ascending
/// passage id.
pub fn bm25_search(index: &InvertedIndex, query: &TermBag, k: usize) -> Vec<SparseHit> {
    assert!(k >= 1, "k must be >= 1");
    let n = index.doc_count() as f64;
    let k1 = index.params.k1;
    let b = index.params.b;
    let mut scores = vec![0.0f64; index.doc_count()];
    let mut touched = vec![false; index.doc_count()];
    for (term, &qtf) in query {
        let Some(postings) = index.postings.get(term) else {
            continue;
        };
        let df = postings.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for &(ordinal, tf) in postings {
            let ordinal = ordinal as usize;
            let tf = tf as f64;
            let dl = index.doc_lengths[ordinal] as f64;
            let norm = 1.0 - b + b * dl / index.avg_doc_length;
            let contribution = qtf as f64 * idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            scores[ordinal] += contribution;
            touched[ordinal] = true;
        }
    }
    let mut hits: Vec<usize> = (0..scores.len()).filter(|&i| touched[i]).collect();
    hits.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("bm25 scores are finite")
            .then_with(|| index.doc_ids[a].cmp(&index.doc_ids[b]))
    });
    hits.truncate(k);
    hits.into_iter()
        .enumerate()
        .map(|(i, ordinal)| SparseHit {
            passage_id: index.doc_ids[ordinal].clone(),
            score: scores[ordinal],
            rank: i + 1,
        })
        .collect()
}

/// Persist the index. The byte layout is canonical: rebuilding from the
/// same corpus (in any order) reproduces the file exactly.
pub fn save_index(index: &InvertedIndex, path: impl AsRef<Path>, meta: &ArtifactMeta) -> Result<()> {
    let path = path.as_ref();
    let mut w = artifact::open_writer(path, INDEX_MAGIC, INDEX_VERSION)?;
    artifact::write_meta(&mut w, path, meta)?;
    artifact::write_f64(&mut w, path, index.params.k1)?;
    artifact::write_f64(&mut w, path, index.params.b)?;
    artifact::write_u8(&mut w, path, index.remove_stopwords as u8)?;
    artifact::write_u64(&mut w, path, index.doc_ids.len() as u64)?;
    artifact::write_f64(&mut w, path, index.avg_doc_length)?;
    for (id, len) in index.doc_ids.iter().zip(&index.doc_lengths) {
        artifact::write_str(&mut w, path, id)?;
        artifact::write_u64(&mut w, path, *len)?;
    }
    artifact::write_u64(&mut w, path, index.postings.len() as u64)?;
    for (term, postings) in &index.postings {
        artifact::write_str(&mut w, path, term)?;
        artifact::write_u64(&mut w, path, postings.len() as u64)?;
        for &(ordinal, tf) in postings {
            artifact::write_u32(&mut w, path, ordinal)?;
            artifact::write_u32(&mut w, path, tf)?;
        }
    }
    use std::io::Write;
    w.flush().map_err(|e| EfrError::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<(InvertedIndex, ArtifactMeta)> {
    let path = path.as_ref();
    let mut r = artifact::open_reader(path, INDEX_MAGIC, INDEX_VERSION)?;
    let meta = artifact::read_meta(&mut r, path)?;
    let k1 = artifact::read_f64(&mut r, path)?;
    let b = artifact::read_f64(&mut r, path)?;
    let remove_stopwords = artifact::read_u8(&mut r, path)? != 0;
    let doc_count = artifact::read_u64(&mut r, path)? as usize;
    let avg_doc_length = artifact::read_f64(&mut r, path)?;
    let mut doc_ids = Vec::with_capacity(doc_count);
    let mut doc_lengths = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        doc_ids.push(artifact::read_str(&mut r, path)?);
        doc_lengths.push(artifact::read_u64(&mut r, path)?);
    }
    let term_count = artifact::read_u64(&mut r, path)? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..term_count {
        let term = artifact::read_str(&mut r, path)?;
        let len = artifact::read_u64(&mut r, path)? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let ordinal = artifact::read_u32(&mut r, path)?;
            let tf = artifact::read_u32(&mut r, path)?;
            if ordinal as usize >= doc_count {
                return Err(artifact::format_err(
                    path,
                    format!("posting for {term:?} references document {ordinal} out of range"),
                ));
            }
            list.push((ordinal, tf));
        }
        postings.insert(term, list);
    }
    Ok((
        InvertedIndex {
            params: Bm25Params { k1, b },
            remove_stopwords,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
        },
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySource;

    fn toy_corpus() -> Vec<Passage> {
        vec![
            Passage::new("p1", "the cat sat on the mat"),
            Passage::new("p2", "a dog chased the cat"),
            Passage::new("p3", "dogs and cats are pets"),
        ]
    }

    #[test]
    fn build_basics() {
        let index = build_index(&toy_corpus(), Bm25Params::default(), false).unwrap();
        assert_eq!(index.doc_count(), 3);
        let expected = (6.0 + 5.0 + 5.0) / 3.0;
        assert!((index.avg_doc_length() - expected).abs() < 1e-12);
        assert!(build_index(&[], Bm25Params::default(), false).is_err());
    }

    #[test]
    fn uniform_lengths_average() {
        let passages: Vec<Passage> = (0..4)
            .map(|i| Passage::new(format!("p{i}"), "one two three four five six seven eight nine ten"))
            .collect();
        let index = build_index(&passages, Bm25Params::default(), false).unwrap();
        assert_eq!(index.avg_doc_length(), 10.0);
    }

    #[test]
    fn absent_term_returns_empty() {
        let index = build_index(&toy_corpus(), Bm25Params::default(), false).unwrap();
        assert!(bm25_search(&index, &term_bag("zebra"), 5).is_empty());
    }

    #[test]
    fn single_match_ranks_first() {
        let index = build_index(&toy_corpus(), Bm25Params::default(), false).unwrap();
        let hits = bm25_search(&index, &term_bag("mat"), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].passage_id, "p1");
        assert_eq!(hits[0].rank, 1);
    }

    /// Independent evaluation of the scoring formula, recomputing tf, df,
    /// and lengths from raw token lists without the inverted index.
    fn direct_bm25(passages: &[Passage], query: &TermBag, params: Bm25Params) -> Vec<(String, f64)> {
        let token_lists: Vec<(String, Vec<String>)> = passages
            .iter()
            .map(|p| (p.id.clone(), tokenize(&p.text)))
            .collect();
        let n = passages.len() as f64;
        let avg = token_lists.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
        let mut out = Vec::new();
        for (id, tokens) in &token_lists {
            let mut score = 0.0;
            for (term, &qtf) in query {
                let tf = tokens.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = token_lists
                    .iter()
                    .filter(|(_, ts)| ts.iter().any(|t| t == term))
                    .count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = 1.0 - params.b + params.b * tokens.len() as f64 / avg;
                score += qtf as f64 * idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
            }
            if score > 0.0 {
                out.push((id.clone(), score));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn scores_match_direct_formula_evaluation() {
        let passages = vec![
            Passage::new("d1", "red bell pepper soup with red onions"),
            Passage::new("d2", "green pepper and onion stir fry recipe"),
            Passage::new("d3", "soup recipes for cold winter evenings"),
            Passage::new("d4", "the red fox jumped over the lazy dog"),
            Passage::new("d5", "pepper pepper pepper red red soup"),
        ];
        let params = Bm25Params { k1: 1.1, b: 0.4 };
        let index = build_index(&passages, params, false).unwrap();
        let query = term_bag("red pepper");
        let hits = bm25_search(&index, &query, 10);
        let oracle = direct_bm25(&passages, &query, params);
        assert_eq!(hits.len(), oracle.len());
        for (hit, (oid, oscore)) in hits.iter().zip(&oracle) {
            assert_eq!(&hit.passage_id, oid);
            assert!(
                (hit.score - oscore).abs() < 1e-6,
                "{}: {} vs {}",
                hit.passage_id,
                hit.score,
                oscore
            );
        }
    }

    #[test]
    fn qtf_multiplies_contribution() {
        let passages = toy_corpus();
        let index = build_index(&passages, Bm25Params::default(), false).unwrap();
        let single = bm25_search(&index, &term_bag("cat"), 5);
        let doubled = bm25_search(&index, &term_bag("cat cat"), 5);
        for (s, d) in single.iter().zip(&doubled) {
            assert!((d.score - 2.0 * s.score).abs() < 1e-12);
        }
    }

    #[test]
    fn insertion_order_does_not_change_results() {
        let mut passages = toy_corpus();
        let index_a = build_index(&passages, Bm25Params::default(), false).unwrap();
        passages.reverse();
        let index_b = build_index(&passages, Bm25Params::default(), false).unwrap();
        let q = term_bag("cat dog");
        assert_eq!(bm25_search(&index_a, &q, 10), bm25_search(&index_b, &q, 10));
    }

    #[test]
    fn augment_query_bag_union() {
        let entity = Entity::new("teddy bear", EntitySource::Tag);
        let bag = augment_query("what is this", &entity);
        let expected: Vec<(&str, u32)> =
            vec![("bear", 1), ("is", 1), ("teddy", 1), ("this", 1), ("what", 1)];
        let got: Vec<(&str, u32)> = bag.iter().map(|(t, c)| (t.as_str(), *c)).collect();
        assert_eq!(got, expected);

        let empty = Entity::new("", EntitySource::Tag);
        assert_eq!(augment_query("what is this", &empty), term_bag("what is this"));

        let repeat = Entity::new("this", EntitySource::Tag);
        assert_eq!(augment_query("what is this", &repeat)["this"], 2);
    }

    #[test]
    fn k_at_least_doc_count_returns_all_positive() {
        let index = build_index(&toy_corpus(), Bm25Params::default(), false).unwrap();
        let hits = bm25_search(&index, &term_bag("cat"), 100);
        // "cat" occurs in p1 and p2; "cats" is a different term.
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score > 0.0));
    }

    #[test]
    fn save_load_roundtrip_preserves_search() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.efsi");
        let index = build_index(&toy_corpus(), Bm25Params::default(), false).unwrap();
        let meta = ArtifactMeta::new("deadbeef", 7);
        save_index(&index, &path, &meta).unwrap();
        let (loaded, got_meta) = load_index(&path).unwrap();
        assert_eq!(got_meta, meta);
        let q = term_bag("dog cat pets");
        assert_eq!(bm25_search(&index, &q, 10), bm25_search(&loaded, &q, 10));
        // Canonical bytes: saving the loaded index reproduces the file.
        let bytes = std::fs::read(&path).unwrap();
        save_index(&loaded, &path, &meta).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn stopword_flag_drops_terms() {
        let index = build_index(&toy_corpus(), Bm25Params::default(), true).unwrap();
        assert!(bm25_search(&index, &term_bag("the"), 5).is_empty());
        assert!(!bm25_search(&index, &term_bag("cat"), 5).is_empty());
    }
}
