//! Retrieval metrics and reports: MRR@k, P@k, oracle-entity recall@k,
//! entity-source ablation, the hard-query filter, a seeded validation/test
//! split, and a paired bootstrap comparison.
//!
//! Gold passages are recomputed from answer containment at evaluation time,
//! with the same containment routine the miner uses.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{contains_answer, EntitySource, PassageMap, QueryExample};
use crate::error::{EfrError, Result};
use crate::text::{token_subsequence, Normalizer};

/// Ranked passage ids per query id.
pub type RankedIds = BTreeMap<String, Vec<String>>;

/// Per-query evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub query_id: String,
    pub reciprocal_rank: f64,
    pub precision: f64,
    pub gold_in_top_k: usize,
    pub oracle_entities: usize,
    pub oracle_entities_found: usize,
}

/// Aggregate metric report for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub k: usize,
    pub mrr_at_k: f64,
    pub p_at_k: f64,
    /// Micro-averaged: found oracle entities over all oracle entities.
    pub oracle_entity_recall_at_k: f64,
    /// Macro-averaged over queries that have oracle entities.
    pub oracle_entity_recall_macro: f64,
    /// False when no query carries oracle entities (recall reported as 0).
    pub oracle_recall_defined: bool,
    pub queries: usize,
    pub per_query: Vec<QueryRow>,
}

fn gold_flags(
    ranked: &[String],
    query: &QueryExample,
    passages: &PassageMap<'_>,
    norm: &Normalizer,
    k: usize,
) -> Result<Vec<bool>> {
    ranked
        .iter()
        .take(k)
        .map(|id| {
            let p = passages.get(id)?;
            contains_answer(norm, &p.text, &query.answers)
        })
        .collect()
}

/// Mean reciprocal rank of the first gold passage within the top k.
pub fn mrr_at_k(
    run: &RankedIds,
    queries: &[QueryExample],
    passages: &PassageMap<'_>,
    norm: &Normalizer,
    k: usize,
) -> Result<f64> {
    Ok(evaluate_run("run", run, queries, passages, norm, k, None)?.mrr_at_k)
}

/// Mean fraction of gold passages among the top k (k is the denominator
/// even for short result lists).
pub fn p_at_k(
    run: &RankedIds,
    queries: &[QueryExample],
    passages: &PassageMap<'_>,
    norm: &Normalizer,
    k: usize,
) -> Result<f64> {
    Ok(evaluate_run("run", run, queries, passages, norm, k, None)?.p_at_k)
}

/// Fraction of oracle entities whose token sequence appears in at least one
/// top-k passage, over all oracle entities (micro average).
pub fn oracle_entity_recall_at_k(
    run: &RankedIds,
    oracle_entities: &BTreeMap<String, Vec<String>>,
    passages: &PassageMap<'_>,
    norm: &Normalizer,
    k: usize,
) -> Result<(f64, bool)> {
    let mut found = 0usize;
    let mut total = 0usize;
    let empty: Vec<String> = Vec::new();
    for (query_id, entities) in oracle_entities {
        let ranked = run.get(query_id).unwrap_or(&empty);
        let top_tokens: Vec<Vec<String>> = ranked
            .iter()
            .take(k)
            .map(|id| Ok(norm.tokens(&passages.get(id)?.text)))
            .collect::<Result<_>>()?;
        for entity_text in entities {
            let needle = norm.tokens(entity_text);
            if needle.is_empty() {
                continue;
            }
            total += 1;
            if top_tokens.iter().any(|tokens| token_subsequence(tokens, &needle)) {
                found += 1;
            }
        }
    }
    if total == 0 {
        return Ok((0.0, false));
    }
    Ok((found as f64 / total as f64, true))
}

/// Full per-run evaluation. Every query in `queries` contributes; queries
/// missing from the run score zero. Run entries for unknown queries are an
/// error.
pub fn evaluate_run(
    name: &str,
    run: &RankedIds,
    queries: &[QueryExample],
    passages: &PassageMap<'_>,
    norm: &Normalizer,
    k: usize,
    oracle_entities: Option<&BTreeMap<String, Vec<String>>>,
) -> Result<MetricReport> {
    assert!(k >= 1, "k must be >= 1");
    if queries.is_empty() {
        return Err(EfrError::Invalid("evaluation requires at least one query".to_string()));
    }
    let known: BTreeSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    for query_id in run.keys() {
        if !known.contains(query_id.as_str()) {
            return Err(EfrError::UnknownId {
                what: "query (in run but not in the evaluated query set)",
                id: query_id.clone(),
            });
        }
    }

    let empty: Vec<String> = Vec::new();
    let mut per_query = Vec::with_capacity(queries.len());
    let mut mrr_sum = 0.0;
    let mut p_sum = 0.0;
    let mut oracle_found_total = 0usize;
    let mut oracle_total = 0usize;
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;

    for query in queries {
        let ranked = run.get(&query.id).unwrap_or(&empty);
        let flags = gold_flags(ranked, query, passages, norm, k)?;
        let reciprocal_rank = flags
            .iter()
            .position(|&g| g)
            .map_or(0.0, |idx| 1.0 / (idx + 1) as f64);
        let gold_in_top_k = flags.iter().filter(|&&g| g).count();
        let precision = gold_in_top_k as f64 / k as f64;
        mrr_sum += reciprocal_rank;
        p_sum += precision;

        let (oracle_entities_n, oracle_found) = match oracle_entities.and_then(|m| m.get(&query.id)) {
            Some(entities) if !entities.is_empty() => {
                let top_tokens: Vec<Vec<String>> = ranked
                    .iter()
                    .take(k)
                    .map(|id| Ok(norm.tokens(&passages.get(id)?.text)))
                    .collect::<Result<_>>()?;
                let mut found = 0usize;
                let mut counted = 0usize;
                for text in entities {
                    let needle = norm.tokens(text);
                    if needle.is_empty() {
                        continue;
                    }
                    counted += 1;
                    if top_tokens.iter().any(|tokens| token_subsequence(tokens, &needle)) {
                        found += 1;
                    }
                }
                if counted > 0 {
                    macro_sum += found as f64 / counted as f64;
                    macro_n += 1;
                }
                (counted, found)
            }
            _ => (0, 0),
        };
        oracle_total += oracle_entities_n;
        oracle_found_total += oracle_found;

        per_query.push(QueryRow {
            query_id: query.id.clone(),
            reciprocal_rank,
            precision,
            gold_in_top_k,
            oracle_entities: oracle_entities_n,
            oracle_entities_found: oracle_found,
        });
    }

    let n = queries.len() as f64;
    let oracle_recall_defined = oracle_total > 0;
    Ok(MetricReport {
        name: name.to_string(),
        k,
        mrr_at_k: mrr_sum / n,
        p_at_k: p_sum / n,
        oracle_entity_recall_at_k: if oracle_recall_defined {
            oracle_found_total as f64 / oracle_total as f64
        } else {
            0.0
        },
        oracle_entity_recall_macro: if macro_n > 0 {
            macro_sum / macro_n as f64
        } else {
            0.0
        },
        oracle_recall_defined,
        queries: queries.len(),
        per_query,
    })
}

/// Entity-source groups used by the ablation tables: image-based sources
/// and question-based sources.
pub fn image_sources() -> BTreeSet<EntitySource> {
    [EntitySource::Tag, EntitySource::Wikidata, EntitySource::Caption]
        .into_iter()
        .collect()
}

pub fn question_sources() -> BTreeSet<EntitySource> {
    [EntitySource::Question, EntitySource::SubQuestion, EntitySource::Candidate]
        .into_iter()
        .collect()
}

/// Filter every query's entity list to the kept sources.
pub fn ablate_entity_sources(
    queries: &[QueryExample],
    keep: &BTreeSet<EntitySource>,
) -> Vec<QueryExample> {
    queries
        .iter()
        .map(|q| {
            let mut q = q.clone();
            q.entities.retain(|e| keep.contains(&e.source));
            q
        })
        .collect()
}

/// Parse a keep-set expression: `all`, `none`, or a comma-separated list of
/// source names and the group aliases `image_based` / `question_based`.
pub fn parse_source_set(expr: &str) -> Result<BTreeSet<EntitySource>> {
    let expr = expr.trim();
    if expr == "all" {
        return Ok(EntitySource::ALL.into_iter().collect());
    }
    if expr == "none" {
        return Ok(BTreeSet::new());
    }
    let mut keep = BTreeSet::new();
    for part in expr.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part {
            "image_based" => keep.extend(image_sources()),
            "question_based" => keep.extend(question_sources()),
            name => {
                keep.insert(name.parse::<EntitySource>()?);
            }
        }
    }
    Ok(keep)
}

/// Hard-split predicate: none of the query's answers appears among its
/// entity texts (compared in normalized form).
pub fn is_hard_query(query: &QueryExample, norm: &Normalizer) -> bool {
    let answers: BTreeSet<String> = query
        .answers
        .iter()
        .map(|a| norm.normalize(a))
        .filter(|a| !a.is_empty())
        .collect();
    !query
        .entities
        .iter()
        .any(|e| answers.contains(&norm.normalize(&e.text)))
}

pub fn filter_hard(queries: &[QueryExample], norm: &Normalizer) -> Vec<QueryExample> {
    queries.iter().filter(|q| is_hard_query(q, norm)).cloned().collect()
}

/// Evenly split queries into (validation, test) halves under a seeded
/// shuffle. Validation receives the first floor(n/2) shuffled queries.
pub fn split_queries(queries: &[QueryExample], seed: u64) -> (Vec<QueryExample>, Vec<QueryExample>) {
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let half = queries.len() / 2;
    let val = order[..half].iter().map(|&i| queries[i].clone()).collect();
    let test = order[half..].iter().map(|&i| queries[i].clone()).collect();
    (val, test)
}

/// One-sided paired bootstrap: the probability that run B's mean per-query
/// value does not exceed run A's under resampling. Values must be paired by
/// query.
pub fn paired_bootstrap_pvalue(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EfrError::Invalid(
            "paired bootstrap requires equal-length nonempty samples".to_string(),
        ));
    }
    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut not_better = 0usize;
    for _ in 0..iterations {
        let mut diff = 0.0;
        for _ in 0..n {
            let idx = rand::Rng::random_range(&mut rng, 0..n);
            diff += b[idx] - a[idx];
        }
        if diff <= 0.0 {
            not_better += 1;
        }
    }
    Ok(not_better as f64 / iterations as f64)
}

/// Aligned plain-text table over several reports.
pub fn format_report_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    let name_width = reports
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(3)
        .max("run".len());
    let k = reports.first().map_or(5, |r| r.k);
    out.push_str(&format!(
        "{:<name_width$}  {:>10} {:>10} {:>14} {:>8}\n",
        "run",
        format!("MRR@{k}"),
        format!("P@{k}"),
        format!("OracleRec@{k}"),
        "queries"
    ));
    for r in reports {
        let recall = if r.oracle_recall_defined {
            format!("{:.4}", r.oracle_entity_recall_at_k)
        } else {
            "n/a".to_string()
        };
        out.push_str(&format!(
            "{:<name_width$}  {:>10.4} {:>10.4} {:>14} {:>8}\n",
            r.name, r.mrr_at_k, r.p_at_k, recall, r.queries
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Passage};

    fn norm() -> Normalizer {
        Normalizer::default()
    }

    fn fixture() -> (Vec<Passage>, Vec<QueryExample>) {
        let passages = vec![
            Passage::new("g1", "the apple is a fruit"),
            Passage::new("g2", "apple pie needs apple fruit"),
            Passage::new("n1", "cars go fast"),
            Passage::new("n2", "a long road trip"),
            Passage::new("n3", "winter is cold"),
        ];
        let queries = vec![QueryExample {
            id: "q1".to_string(),
            question: "what fruit".to_string(),
            caption: String::new(),
            answers: vec!["apple".to_string()],
            entities: vec![
                Entity::new("apple", EntitySource::Candidate),
                Entity::new("orchard", EntitySource::Tag),
            ],
        }];
        (passages, queries)
    }

    fn run_of(ids: &[&str]) -> RankedIds {
        let mut run = RankedIds::new();
        run.insert("q1".to_string(), ids.iter().map(|s| s.to_string()).collect());
        run
    }

    #[test]
    fn mrr_first_gold_at_rank_three() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        let run = run_of(&["n1", "n2", "g1", "g2", "n3"]);
        let got = mrr_at_k(&run, &queries, &map, &norm(), 5).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mrr_zero_when_no_gold_in_top_k() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        let run = run_of(&["n1", "n2", "n3", "g1"]);
        let got = mrr_at_k(&run, &queries, &map, &norm(), 3).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn metrics_average_over_queries() {
        let (mut passages, mut queries) = fixture();
        passages.push(Passage::new("g3", "a banana is yellow"));
        let mut q2 = queries[0].clone();
        q2.id = "q2".to_string();
        q2.answers = vec!["banana".to_string()];
        queries.push(q2);
        let map = PassageMap::new(&passages);
        let mut run = run_of(&["g1", "n1", "n2", "n3", "g2"]);
        run.insert(
            "q2".to_string(),
            vec!["n1".into(), "g3".into(), "n2".into()],
        );
        // q1: rr = 1, q2: rr = 1/2, mean 0.75.
        let got = mrr_at_k(&run, &queries, &map, &norm(), 5).unwrap();
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn precision_counts_and_pads() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        // 2 gold among top-5.
        let run = run_of(&["g1", "n1", "g2", "n2", "n3"]);
        assert!((p_at_k(&run, &queries, &map, &norm(), 5).unwrap() - 0.4).abs() < 1e-12);
        // Shorter result lists are conceptually padded with non-gold.
        let short = run_of(&["g1"]);
        assert!((p_at_k(&short, &queries, &map, &norm(), 5).unwrap() - 0.2).abs() < 1e-12);
        // Empty run: zero.
        let empty = RankedIds::new();
        assert_eq!(p_at_k(&empty, &queries, &map, &norm(), 5).unwrap(), 0.0);
    }

    #[test]
    fn run_with_unknown_query_is_rejected() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        let mut run = run_of(&["g1"]);
        run.insert("ghost".to_string(), vec!["g1".to_string()]);
        assert!(mrr_at_k(&run, &queries, &map, &norm(), 5).is_err());
    }

    #[test]
    fn oracle_recall_micro_counts() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        let run = run_of(&["g1", "g2", "n1", "n2", "n3"]);
        let mut oracle = BTreeMap::new();
        oracle.insert(
            "q1".to_string(),
            vec!["apple".to_string(), "orchard".to_string(), "fruit".to_string()],
        );
        let (recall, defined) = oracle_entity_recall_at_k(&run, &oracle, &map, &norm(), 5).unwrap();
        assert!(defined);
        // apple and fruit appear in the top passages; orchard nowhere: 2/3.
        assert!((recall - 2.0 / 3.0).abs() < 1e-12);

        let (zero, defined) =
            oracle_entity_recall_at_k(&run, &BTreeMap::new(), &map, &norm(), 5).unwrap();
        assert_eq!((zero, defined), (0.0, false));
    }

    #[test]
    fn ablation_filters_sources() {
        let (_, queries) = fixture();
        let all = ablate_entity_sources(&queries, &EntitySource::ALL.into_iter().collect());
        assert_eq!(all[0].entities.len(), 2);
        let none = ablate_entity_sources(&queries, &BTreeSet::new());
        assert!(none[0].entities.is_empty());
        let image = ablate_entity_sources(&queries, &image_sources());
        assert_eq!(image[0].entities.len(), 1);
        assert_eq!(image[0].entities[0].text, "orchard");
    }

    #[test]
    fn source_set_parsing() {
        assert_eq!(parse_source_set("all").unwrap().len(), 6);
        assert!(parse_source_set("none").unwrap().is_empty());
        let set = parse_source_set("tag, wikidata").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(parse_source_set("image_based").unwrap(), image_sources());
        assert!(parse_source_set("ocr").is_err());
    }

    #[test]
    fn hard_filter() {
        let (_, queries) = fixture();
        // q1's answer "apple" is among its entities: not hard.
        assert!(!is_hard_query(&queries[0], &norm()));
        let mut q = queries[0].clone();
        q.entities.retain(|e| e.text != "apple");
        assert!(is_hard_query(&q, &norm()));
        let hard = filter_hard(&[queries[0].clone(), q.clone()], &norm());
        assert_eq!(hard.len(), 1);
        assert_eq!(hard[0].entities.len(), 1);
    }

    #[test]
    fn split_is_even_and_seeded() {
        let (_, base) = fixture();
        let queries: Vec<QueryExample> = (0..11)
            .map(|i| {
                let mut q = base[0].clone();
                q.id = format!("q{i}");
                q
            })
            .collect();
        let (val_a, test_a) = split_queries(&queries, 9);
        let (val_b, test_b) = split_queries(&queries, 9);
        assert_eq!(val_a.len(), 5);
        assert_eq!(test_a.len(), 6);
        assert_eq!(val_a, val_b);
        assert_eq!(test_a, test_b);
        let mut ids: Vec<&str> = val_a.iter().chain(&test_a).map(|q| q.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 11);
        let (val_c, _) = split_queries(&queries, 10);
        assert_ne!(
            val_a.iter().map(|q| &q.id).collect::<Vec<_>>(),
            val_c.iter().map(|q| &q.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bootstrap_detects_clear_difference() {
        let a = vec![0.2; 40];
        let b = vec![0.9; 40];
        let p = paired_bootstrap_pvalue(&a, &b, 500, 3).unwrap();
        assert_eq!(p, 0.0);
        let p_same = paired_bootstrap_pvalue(&b, &b, 500, 3).unwrap();
        assert!(p_same > 0.5);
    }

    #[test]
    fn mrr_monotone_in_k() {
        let (passages, queries) = fixture();
        let map = PassageMap::new(&passages);
        let run = run_of(&["n1", "n2", "g1", "g2", "n3"]);
        let m3 = mrr_at_k(&run, &queries, &map, &norm(), 3).unwrap();
        let m5 = mrr_at_k(&run, &queries, &map, &norm(), 5).unwrap();
        assert!(m5 >= m3);
    }
}
