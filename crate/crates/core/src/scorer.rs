//! Retrieval scores: query-passage inner product, entity-focus scores, the
//! combined score, exact top-k inner-product search, and reranking.
//!
//! The combined score is `S = S_qp + lambda * S_qpe`, where `S_qpe` is the
//! sigmoid-weighted average of passage-entity scores with query-entity
//! weights. An empty entity set yields `S_qpe = 0`, so the combined score
//! degrades to the plain query-passage score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, QueryExample};
use crate::encoder::EncoderModel;
use crate::error::{EfrError, Result};

/// Inner product with an explicit dimension check.
pub fn score_qp(f_q: &[f64], f_p: &[f64]) -> Result<f64> {
    if f_q.len() != f_p.len() {
        return Err(EfrError::Invalid(format!(
            "dimension mismatch: {} vs {}",
            f_q.len(),
            f_p.len()
        )));
    }
    Ok(dot(f_q, f_p))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Query-entity score: inner product of the secondary projections of both
/// vectors.
pub fn score_qe(model: &EncoderModel, f_q: &[f64], f_e: &[f64]) -> Result<f64> {
    if f_q.len() != model.dim() || f_e.len() != model.dim() {
        return Err(EfrError::Invalid("dimension mismatch in score_qe".to_string()));
    }
    Ok(dot(&model.head_query(f_q), &model.head_entity(f_e)))
}

/// Passage-entity score: inner product of the secondary projections.
pub fn score_pe(model: &EncoderModel, f_p: &[f64], f_e: &[f64]) -> Result<f64> {
    if f_p.len() != model.dim() || f_e.len() != model.dim() {
        return Err(EfrError::Invalid("dimension mismatch in score_pe".to_string()));
    }
    Ok(dot(&model.head_passage(f_p), &model.head_entity(f_e)))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Entity-focused score: sigmoid(s_qe)-weighted average of s_pe values.
/// Empty entity sets score 0.
pub fn score_qpe(q_scores: &[f64], p_scores: &[f64]) -> f64 {
    assert_eq!(q_scores.len(), p_scores.len(), "entity score lists must pair up");
    if q_scores.is_empty() {
        return 0.0;
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (&sq, &sp) in q_scores.iter().zip(p_scores) {
        let w = sigmoid(sq);
        numerator += w * sp;
        denominator += w;
    }
    numerator / denominator
}

/// `S_qp + lambda * S_qpe`.
pub fn combined_score(s_qp: f64, s_qpe: f64, lambda: f64) -> f64 {
    s_qp + lambda * s_qpe
}

/// Per-entity contribution recorded for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityContribution {
    pub text: String,
    pub s_qe: f64,
    pub sigmoid: f64,
    pub s_pe: f64,
}

/// Full score decomposition for one (query, passage) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_qp: f64,
    pub s_qpe: f64,
    pub combined: f64,
    pub per_entity: Vec<EntityContribution>,
}

/// Row-per-passage embedding matrix for exact inner-product search.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f64>,
}

impl DenseIndex {
    /// Build from an id -> vector map; rows are stored sorted by id.
    pub fn from_embeddings(dim: usize, embeddings: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut ids = Vec::with_capacity(embeddings.len());
        let mut rows = Vec::with_capacity(embeddings.len() * dim);
        for (id, v) in embeddings {
            if v.len() != dim {
                return Err(EfrError::Invalid(format!(
                    "embedding for {id:?} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EfrError::Invalid(format!("non-finite embedding for {id:?}")));
            }
            ids.push(id.clone());
            rows.extend_from_slice(v);
        }
        Ok(DenseIndex { dim, ids, rows })
    }

    /// Encode every passage with the model. Rows are sorted by passage id.
    pub fn from_model(model: &EncoderModel, passages: &[Passage]) -> Result<Self> {
        let mut order: Vec<&Passage> = passages.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        let dim = model.dim();
        let mut ids = Vec::with_capacity(order.len());
        let mut rows = Vec::with_capacity(order.len() * dim);
        for p in order {
            if ids.last().is_some_and(|last: &String| last == &p.id) {
                return Err(EfrError::Invalid(format!("duplicate passage id {:?}", p.id)));
            }
            ids.push(p.id.clone());
            rows.extend_from_slice(&model.encode_passage(p));
        }
        Ok(DenseIndex { dim, ids, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_by_id(&self, id: &str) -> Result<&[f64]> {
        let i = self
            .ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| EfrError::UnknownId {
                what: "passage",
                id: id.to_string(),
            })?;
        Ok(self.row(i))
    }

    /// Iterator for serialization via the embedding-file format.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }
}

/// Exact top-k by inner product over all rows; ties break by ascending id.
pub fn mips_topk(index: &DenseIndex, f_q: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    if index.is_empty() {
        return Err(EfrError::Invalid("dense index is empty".to_string()));
    }
    if f_q.len() != index.dim() {
        return Err(EfrError::Invalid(format!(
            "query dimension {} does not match index dimension {}",
            f_q.len(),
            index.dim()
        )));
    }
    assert!(k >= 1, "k must be >= 1");
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|i| (i, dot(f_q, index.row(i))))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("inner products over finite rows are finite")
            .then_with(|| index.ids[a.0].cmp(&index.ids[b.0]))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, s)| (index.ids[i].clone(), s))
        .collect())
}

/// Per-query scoring state reused across candidates: the projected query
/// head, and per entity its projected vector and query-entity weight.
pub struct QueryScorer<'m> {
    model: &'m EncoderModel,
    entities: Vec<PreparedEntity>,
}

struct PreparedEntity {
    text: String,
    g_e: Vec<f64>,
    s_qe: f64,
}

impl<'m> QueryScorer<'m> {
    pub fn new(model: &'m EncoderModel, query: &QueryExample) -> Self {
        let f_q = model.encode_query(query);
        Self::with_query_embedding(model, query, &f_q)
    }

    /// Build from an externally supplied query embedding (the precomputed
    /// embedding-file path); entity vectors still come from the model.
    pub fn with_query_embedding(model: &'m EncoderModel, query: &QueryExample, f_q: &[f64]) -> Self {
        let g_q = model.head_query(f_q);
        let entities = query
            .entities
            .iter()
            .map(|e| {
                let f_e = model.encode_entity(e, query);
                let g_e = model.head_entity(&f_e);
                let s_qe = dot(&g_q, &g_e);
                PreparedEntity {
                    text: e.text.clone(),
                    g_e,
                    s_qe,
                }
            })
            .collect();
        QueryScorer { model, entities }
    }

    /// Score one candidate passage embedding against this query.
    pub fn breakdown(&self, f_p: &[f64], s_qp: f64, lambda: f64) -> ScoreBreakdown {
        let mut per_entity = Vec::with_capacity(self.entities.len());
        let mut q_scores = Vec::with_capacity(self.entities.len());
        let mut p_scores = Vec::with_capacity(self.entities.len());
        if !self.entities.is_empty() {
            let g_p = self.model.head_passage(f_p);
            for e in &self.entities {
                let s_pe = dot(&g_p, &e.g_e);
                per_entity.push(EntityContribution {
                    text: e.text.clone(),
                    s_qe: e.s_qe,
                    sigmoid: sigmoid(e.s_qe),
                    s_pe,
                });
                q_scores.push(e.s_qe);
                p_scores.push(s_pe);
            }
        }
        let s_qpe = score_qpe(&q_scores, &p_scores);
        ScoreBreakdown {
            s_qp,
            s_qpe,
            combined: combined_score(s_qp, s_qpe, lambda),
            per_entity,
        }
    }
}

/// Rescore MIPS candidates with the combined score and sort by it,
/// descending, with ties broken by ascending id. The incoming `s_qp` values
/// are reused, not recomputed.
pub fn rerank(
    scorer: &QueryScorer<'_>,
    candidates: &[(String, f64)],
    index: &DenseIndex,
    lambda: f64,
) -> Result<Vec<(String, ScoreBreakdown)>> {
    if candidates.is_empty() {
        return Err(EfrError::Invalid("rerank requires at least one candidate".to_string()));
    }
    let mut rescored: Vec<(String, ScoreBreakdown)> = Vec::with_capacity(candidates.len());
    for (id, s_qp) in candidates {
        let f_p = index.row_by_id(id)?;
        rescored.push((id.clone(), scorer.breakdown(f_p, *s_qp, lambda)));
    }
    rescored.sort_by(|a, b| {
        b.1.combined
            .partial_cmp(&a.1.combined)
            .expect("combined scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(rescored)
}
