//! Contrastive training of the encoder with in-batch negatives, entity
//! importance supervision, analytic gradients, and a finite-difference
//! gradient check.
//!
//! For a batch of B (query, positive, negative) instances, every query is
//! scored against all 2B batch passages: its positive, its retrieved
//! negative, and the 2B-2 passages of the other instances. The contrastive
//! loss is applied separately to the query-passage scores and to the
//! entity-focused scores; a binary cross-entropy term supervises the
//! query-entity importance scores against the mined oracle labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifact::{self, ArtifactMeta};
use crate::corpus::{Entity, Passage, QueryExample};
use crate::encoder::{
    entity_input_tokens, featurize, featurize_tokens, query_input_tokens, Block, EncoderModel,
    SparseFeatures,
};
use crate::error::{EfrError, Result};
use crate::mining::TrainingInstance;
use crate::scorer::sigmoid;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer choice: plain SGD, or the adaptive first/second-moment update
/// with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8,
/// decay=0.01).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Momentless,
    #[default]
    Adaptive,
}

impl std::str::FromStr for OptimizerKind {
    type Err = EfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentless" => Ok(OptimizerKind::Momentless),
            "adaptive" => Ok(OptimizerKind::Adaptive),
            other => Err(EfrError::Config(format!(
                "unknown optimizer {other:?} (expected momentless or adaptive)"
            ))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of total steps used for linear warmup.
    pub warmup_fraction: f64,
    pub w_qp: f64,
    pub w_qpe: f64,
    pub w_ent: f64,
    pub seed: u64,
    /// Reranking weight; recorded with checkpoints, not used by the losses.
    pub lambda: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 8,
            batch_size: 6,
            warmup_fraction: 0.1,
            w_qp: 1.0,
            w_qpe: 1.0,
            w_ent: 1.0,
            seed: 42,
            lambda: 1.0,
            optimizer: OptimizerKind::default(),
        }
    }
}

/// A training instance with its references resolved against the loaded
/// corpus and query set.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedInstance<'a> {
    pub query: &'a QueryExample,
    pub positive: &'a Passage,
    pub negative: &'a Passage,
    pub entities: &'a [Entity],
}

/// Resolve mined instances; unknown ids are errors.
pub fn resolve_instances<'a>(
    instances: &'a [TrainingInstance],
    queries: &'a [QueryExample],
    passages: &'a [Passage],
) -> Result<Vec<ResolvedInstance<'a>>> {
    let query_map: HashMap<&str, &QueryExample> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let passage_map: HashMap<&str, &Passage> =
        passages.iter().map(|p| (p.id.as_str(), p)).collect();
    instances
        .iter()
        .map(|inst| {
            let query = query_map.get(inst.query_id.as_str()).ok_or(EfrError::UnknownId {
                what: "query",
                id: inst.query_id.clone(),
            })?;
            let positive = passage_map.get(inst.positive_id.as_str()).ok_or(EfrError::UnknownId {
                what: "passage",
                id: inst.positive_id.clone(),
            })?;
            let negative = passage_map.get(inst.negative_id.as_str()).ok_or(EfrError::UnknownId {
                what: "passage",
                id: inst.negative_id.clone(),
            })?;
            Ok(ResolvedInstance {
                query,
                positive,
                negative,
                entities: &inst.entities,
            })
        })
        .collect()
}

/// Featurized instance; hashing is parameter-independent so it is done once.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    query_feats: SparseFeatures,
    positive_feats: SparseFeatures,
    negative_feats: SparseFeatures,
    entity_feats: Vec<SparseFeatures>,
    entity_labels: Vec<bool>,
}

impl PreparedInstance {
    pub fn new(instance: &ResolvedInstance<'_>, hash_dim: usize) -> Self {
        let query = instance.query;
        PreparedInstance {
            query_feats: featurize_tokens(&query_input_tokens(query), hash_dim),
            positive_feats: featurize(&instance.positive.text, hash_dim),
            negative_feats: featurize(&instance.negative.text, hash_dim),
            entity_feats: instance
                .entities
                .iter()
                .map(|e| {
                    featurize_tokens(
                        &entity_input_tokens(&e.text, &query.question, &query.caption),
                        hash_dim,
                    )
                })
                .collect(),
            entity_labels: instance
                .entities
                .iter()
                .map(|e| e.oracle_label.unwrap_or(false))
                .collect(),
        }
    }
}

/// Loss components; `total` is the weighted sum used for optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub l_qp: f64,
    pub l_qpe: f64,
    pub l_ent: f64,
}

/// Numerically stable `-log(exp(s+) / (exp(s+) + sum exp(s-)))`.
pub fn contrastive_loss(score_pos: f64, score_negs: &[f64]) -> f64 {
    assert!(!score_negs.is_empty(), "contrastive loss needs at least one negative");
    let max = score_negs.iter().fold(score_pos, |m, &s| m.max(s));
    let sum: f64 = (score_pos - max).exp()
        + score_negs.iter().map(|&s| (s - max).exp()).sum::<f64>();
    max + sum.ln() - score_pos
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of sigmoid(s) against boolean labels; empty
/// input scores 0.
pub fn entity_bce(s_qe: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(s_qe.len(), labels.len(), "scores and labels must pair up");
    if s_qe.is_empty() {
        return 0.0;
    }
    let sum: f64 = s_qe
        .iter()
        .zip(labels)
        .map(|(&s, &y)| softplus(s) - if y { s } else { 0.0 })
        .sum();
    sum / s_qe.len() as f64
}

struct NormCache {
    out: Vec<f64>,
    inv_std: f64,
}

fn norm_forward(mut v: Vec<f64>, epsilon: f64) -> NormCache {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + epsilon).sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) * inv_std;
    }
    NormCache { out: v, inv_std }
}

/// Backward through mean-variance normalization:
/// du = inv_std * (dg - mean(dg) - g * mean(dg * g)).
fn norm_backward(d_out: &[f64], cache: &NormCache) -> Vec<f64> {
    let n = d_out.len() as f64;
    let m1 = d_out.iter().sum::<f64>() / n;
    let m2 = d_out.iter().zip(&cache.out).map(|(d, g)| d * g).sum::<f64>() / n;
    d_out
        .iter()
        .zip(&cache.out)
        .map(|(d, g)| cache.inv_std * (d - m1 - g * m2))
        .collect()
}

fn tower_cached(model: &EncoderModel, w: Block, b: Block, feats: &SparseFeatures) -> NormCache {
    let d = model.dim();
    let weights = model.block(w);
    let mut v = model.block(b).to_vec();
    for &(idx, count) in &feats.0 {
        let row = &weights[idx as usize * d..(idx as usize + 1) * d];
        for (vo, wo) in v.iter_mut().zip(row) {
            *vo += count * wo;
        }
    }
    norm_forward(v, model.config().epsilon)
}

fn head_cached(model: &EncoderModel, w: Block, b: Block, f: &[f64]) -> NormCache {
    let d = model.dim();
    let weights = model.block(w);
    let mut u = model.block(b).to_vec();
    for (o, uo) in u.iter_mut().enumerate() {
        let row = &weights[o * d..(o + 1) * d];
        *uo += row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
    }
    norm_forward(u, model.config().epsilon)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct BatchForward {
    q_tower: Vec<NormCache>,
    p_tower: Vec<NormCache>,
    e_tower: Vec<Vec<NormCache>>,
    q_head: Vec<NormCache>,
    p_head: Vec<NormCache>,
    e_head: Vec<Vec<NormCache>>,
    s_qp: Vec<Vec<f64>>,
    s_qe: Vec<Vec<f64>>,
    /// s_pe[i][e][c] over the shared candidate layout.
    s_pe: Vec<Vec<Vec<f64>>>,
    s_qpe: Vec<Vec<f64>>,
    losses: LossParts,
}

/// Candidate layout: columns 0..B are the positives, B..2B the negatives;
/// query i's positive sits in column i.
fn forward(model: &EncoderModel, batch: &[&PreparedInstance], cfg: &TrainConfig) -> BatchForward {
    let bsz = batch.len();
    assert!(bsz >= 1, "batch must be nonempty");
    let cols = 2 * bsz;

    let q_tower: Vec<NormCache> = batch
        .iter()
        .map(|inst| tower_cached(model, Block::QueryTowerW, Block::QueryTowerB, &inst.query_feats))
        .collect();
    let mut p_tower: Vec<NormCache> = Vec::with_capacity(cols);
    for inst in batch {
        p_tower.push(tower_cached(model, Block::PassageTowerW, Block::PassageTowerB, &inst.positive_feats));
    }
    for inst in batch {
        p_tower.push(tower_cached(model, Block::PassageTowerW, Block::PassageTowerB, &inst.negative_feats));
    }
    let e_tower: Vec<Vec<NormCache>> = batch
        .iter()
        .map(|inst| {
            inst.entity_feats
                .iter()
                .map(|f| tower_cached(model, Block::EntityTowerW, Block::EntityTowerB, f))
                .collect()
        })
        .collect();

    let q_head: Vec<NormCache> = q_tower
        .iter()
        .map(|c| head_cached(model, Block::QueryHeadW, Block::QueryHeadB, &c.out))
        .collect();
    let p_head: Vec<NormCache> = p_tower
        .iter()
        .map(|c| head_cached(model, Block::PassageHeadW, Block::PassageHeadB, &c.out))
        .collect();
    let e_head: Vec<Vec<NormCache>> = e_tower
        .iter()
        .map(|per_query| {
            per_query
                .iter()
                .map(|c| head_cached(model, Block::EntityHeadW, Block::EntityHeadB, &c.out))
                .collect()
        })
        .collect();

    let s_qp: Vec<Vec<f64>> = q_tower
        .iter()
        .map(|q| p_tower.iter().map(|p| dot(&q.out, &p.out)).collect())
        .collect();
    let s_qe: Vec<Vec<f64>> = q_head
        .iter()
        .zip(&e_head)
        .map(|(q, entities)| entities.iter().map(|e| dot(&q.out, &e.out)).collect())
        .collect();
    let s_pe: Vec<Vec<Vec<f64>>> = e_head
        .iter()
        .map(|entities| {
            entities
                .iter()
                .map(|e| p_head.iter().map(|p| dot(&p.out, &e.out)).collect())
                .collect()
        })
        .collect();

    let mut s_qpe: Vec<Vec<f64>> = Vec::with_capacity(bsz);
    for i in 0..bsz {
        if s_qe[i].is_empty() {
            s_qpe.push(Vec::new());
            continue;
        }
        let weights: Vec<f64> = s_qe[i].iter().map(|&s| sigmoid(s)).collect();
        let z: f64 = weights.iter().sum();
        let row: Vec<f64> = (0..cols)
            .map(|c| {
                let num: f64 = weights
                    .iter()
                    .zip(&s_pe[i])
                    .map(|(w, pe_row)| w * pe_row[c])
                    .sum();
                num / z
            })
            .collect();
        s_qpe.push(row);
    }

    let mut l_qp_sum = 0.0;
    let mut l_qpe_sum = 0.0;
    let mut l_ent_sum = 0.0;
    for i in 0..bsz {
        let pos = s_qp[i][i];
        let negs: Vec<f64> = (0..cols).filter(|&c| c != i).map(|c| s_qp[i][c]).collect();
        l_qp_sum += contrastive_loss(pos, &negs);
        if !s_qe[i].is_empty() {
            let pos = s_qpe[i][i];
            let negs: Vec<f64> = (0..cols).filter(|&c| c != i).map(|c| s_qpe[i][c]).collect();
            l_qpe_sum += contrastive_loss(pos, &negs);
            l_ent_sum += entity_bce(&s_qe[i], &batch[i].entity_labels);
        }
    }
    let b = bsz as f64;
    let l_qp = l_qp_sum / b;
    let l_qpe = l_qpe_sum / b;
    let l_ent = l_ent_sum / b;
    let losses = LossParts {
        total: cfg.w_qp * l_qp + cfg.w_qpe * l_qpe + cfg.w_ent * l_ent,
        l_qp,
        l_qpe,
        l_ent,
    };

    BatchForward {
        q_tower,
        p_tower,
        e_tower,
        q_head,
        p_head,
        e_head,
        s_qp,
        s_qe,
        s_pe,
        s_qpe,
        losses,
    }
}

fn softmax_row(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn head_backward(
    model: &EncoderModel,
    w: Block,
    b: Block,
    input: &[f64],
    cache: &NormCache,
    d_out: &[f64],
    grad: &mut [f64],
    d_input: &mut [f64],
) {
    let d = model.dim();
    let du = norm_backward(d_out, cache);
    let w_range = model.block_range(w);
    let b_range = model.block_range(b);
    let weights = model.block(w);
    for o in 0..d {
        let g_row = &mut grad[w_range.start + o * d..w_range.start + (o + 1) * d];
        for (gi, fi) in g_row.iter_mut().zip(input) {
            *gi += du[o] * fi;
        }
        grad[b_range.start + o] += du[o];
        let w_row = &weights[o * d..(o + 1) * d];
        for (di, wi) in d_input.iter_mut().zip(w_row) {
            *di += du[o] * wi;
        }
    }
}

fn tower_backward(
    model: &EncoderModel,
    w: Block,
    b: Block,
    feats: &SparseFeatures,
    cache: &NormCache,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let d = model.dim();
    let dv = norm_backward(d_out, cache);
    let w_range = model.block_range(w);
    let b_range = model.block_range(b);
    for (gb, dvo) in grad[b_range].iter_mut().zip(&dv) {
        *gb += dvo;
    }
    for &(idx, count) in &feats.0 {
        let row = &mut grad[w_range.start + idx as usize * d..w_range.start + (idx as usize + 1) * d];
        for (gi, dvo) in row.iter_mut().zip(&dv) {
            *gi += count * dvo;
        }
    }
}

/// Loss and the full analytic gradient for one batch.
pub fn batch_gradient(
    model: &EncoderModel,
    batch: &[&PreparedInstance],
    cfg: &TrainConfig,
) -> (LossParts, Vec<f64>) {
    let bsz = batch.len();
    let cols = 2 * bsz;
    let dim = model.dim();
    let fwd = forward(model, batch, cfg);
    let b = bsz as f64;

    let mut grad = vec![0.0; model.param_count()];
    let mut d_fq: Vec<Vec<f64>> = vec![vec![0.0; dim]; bsz];
    let mut d_fp: Vec<Vec<f64>> = vec![vec![0.0; dim]; cols];
    let mut d_gq: Vec<Vec<f64>> = vec![vec![0.0; dim]; bsz];
    let mut d_gp: Vec<Vec<f64>> = vec![vec![0.0; dim]; cols];
    let mut d_ge: Vec<Vec<Vec<f64>>> = fwd
        .e_head
        .iter()
        .map(|per_query| vec![vec![0.0; dim]; per_query.len()])
        .collect();

    for i in 0..bsz {
        // Query-passage contrastive term.
        let softmax_qp = softmax_row(&fwd.s_qp[i]);
        for c in 0..cols {
            let indicator = if c == i { 1.0 } else { 0.0 };
            let ds = cfg.w_qp / b * (softmax_qp[c] - indicator);
            if ds != 0.0 {
                for k in 0..dim {
                    d_fq[i][k] += ds * fwd.p_tower[c].out[k];
                    d_fp[c][k] += ds * fwd.q_tower[i].out[k];
                }
            }
        }

        let n_entities = fwd.s_qe[i].len();
        let mut d_sqe = vec![0.0; n_entities];

        if n_entities > 0 {
            // Entity-focused contrastive term.
            let weights: Vec<f64> = fwd.s_qe[i].iter().map(|&s| sigmoid(s)).collect();
            let z: f64 = weights.iter().sum();
            let softmax_qpe = softmax_row(&fwd.s_qpe[i]);
            for c in 0..cols {
                let indicator = if c == i { 1.0 } else { 0.0 };
                let ds_qpe = cfg.w_qpe / b * (softmax_qpe[c] - indicator);
                if ds_qpe == 0.0 {
                    continue;
                }
                for e in 0..n_entities {
                    let ds_pe = ds_qpe * weights[e] / z;
                    for k in 0..dim {
                        d_gp[c][k] += ds_pe * fwd.e_head[i][e].out[k];
                        d_ge[i][e][k] += ds_pe * fwd.p_head[c].out[k];
                    }
                    let dsigma = weights[e] * (1.0 - weights[e]);
                    d_sqe[e] += ds_qpe * dsigma * (fwd.s_pe[i][e][c] - fwd.s_qpe[i][c]) / z;
                }
            }

            // Entity importance supervision.
            for e in 0..n_entities {
                let y = if batch[i].entity_labels[e] { 1.0 } else { 0.0 };
                d_sqe[e] += cfg.w_ent / (b * n_entities as f64) * (weights[e] - y);
            }

            for e in 0..n_entities {
                if d_sqe[e] == 0.0 {
                    continue;
                }
                for k in 0..dim {
                    d_gq[i][k] += d_sqe[e] * fwd.e_head[i][e].out[k];
                    d_ge[i][e][k] += d_sqe[e] * fwd.q_head[i].out[k];
                }
            }
        }
    }

    // Heads, accumulating into the tower outputs.
    for i in 0..bsz {
        head_backward(
            model,
            Block::QueryHeadW,
            Block::QueryHeadB,
            &fwd.q_tower[i].out,
            &fwd.q_head[i],
            &d_gq[i],
            &mut grad,
            &mut d_fq[i],
        );
    }
    for c in 0..cols {
        head_backward(
            model,
            Block::PassageHeadW,
            Block::PassageHeadB,
            &fwd.p_tower[c].out,
            &fwd.p_head[c],
            &d_gp[c],
            &mut grad,
            &mut d_fp[c],
        );
    }
    for i in 0..bsz {
        for e in 0..fwd.e_head[i].len() {
            let mut d_fe = vec![0.0; dim];
            head_backward(
                model,
                Block::EntityHeadW,
                Block::EntityHeadB,
                &fwd.e_tower[i][e].out,
                &fwd.e_head[i][e],
                &d_ge[i][e],
                &mut grad,
                &mut d_fe,
            );
            tower_backward(
                model,
                Block::EntityTowerW,
                Block::EntityTowerB,
                &batch[i].entity_feats[e],
                &fwd.e_tower[i][e],
                &d_fe,
                &mut grad,
            );
        }
    }

    // Towers.
    for i in 0..bsz {
        tower_backward(
            model,
            Block::QueryTowerW,
            Block::QueryTowerB,
            &batch[i].query_feats,
            &fwd.q_tower[i],
            &d_fq[i],
            &mut grad,
        );
    }
    for c in 0..cols {
        let feats = if c < bsz {
            &batch[c].positive_feats
        } else {
            &batch[c - bsz].negative_feats
        };
        tower_backward(
            model,
            Block::PassageTowerW,
            Block::PassageTowerB,
            feats,
            &fwd.p_tower[c],
            &d_fp[c],
            &mut grad,
        );
    }

    (fwd.losses, grad)
}

/// Loss components for one batch of resolved instances.
pub fn batch_loss(
    model: &EncoderModel,
    batch: &[ResolvedInstance<'_>],
    cfg: &TrainConfig,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(EfrError::Invalid("batch must be nonempty".to_string()));
    }
    let prepared: Vec<PreparedInstance> = batch
        .iter()
        .map(|inst| PreparedInstance::new(inst, model.config().hash_dim))
        .collect();
    let refs: Vec<&PreparedInstance> = prepared.iter().collect();
    Ok(forward(model, &refs, cfg).losses)
}

/// Candidate-pool size per query under the in-batch regime: 1 positive plus
/// 2B-1 negatives.
pub fn candidate_pool_size(batch_size: usize) -> usize {
    2 * batch_size
}

/// Central finite difference of the batch loss along one parameter
/// coordinate.
pub fn finite_difference(
    model: &EncoderModel,
    batch: &[&PreparedInstance],
    cfg: &TrainConfig,
    coord: usize,
    h: f64,
) -> f64 {
    let mut probe = model.clone();
    let original = probe.params()[coord];
    probe.params_mut()[coord] = original + h;
    let plus = forward(&probe, batch, cfg).losses.total;
    probe.params_mut()[coord] = original - h;
    let minus = forward(&probe, batch, cfg).losses.total;
    (plus - minus) / (2.0 * h)
}

/// Relative error with a small floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients against central finite differences on a
/// seeded sample of at least `min_coords` coordinates (or all of them).
pub fn gradient_check(
    model: &EncoderModel,
    batch: &[&PreparedInstance],
    cfg: &TrainConfig,
    h: f64,
    min_coords: usize,
    seed: u64,
) -> GradCheckReport {
    assert!(h > 0.0, "step size must be positive");
    let (_, grad) = batch_gradient(model, batch, cfg);
    let n = grad.len();
    let coords: Vec<usize> = if n <= min_coords {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, min_coords).into_vec()
    };
    let mut max_rel = 0.0f64;
    for &coord in &coords {
        let numeric = finite_difference(model, batch, cfg, coord, h);
        max_rel = max_rel.max(relative_error(grad[coord], numeric));
    }
    GradCheckReport {
        max_rel_error: max_rel,
        coords_checked: coords.len(),
    }
}

/// One optimizer step's record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub l_qp: f64,
    pub l_qpe: f64,
    pub l_ent: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub history: Vec<StepRecord>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAM_WEIGHT_DECAY: f64 = 0.01;

/// Train in place: seeded shuffling per epoch, linear warmup, then a
/// constant rate. Aborts on a non-finite loss.
pub fn train(
    model: &mut EncoderModel,
    instances: &[ResolvedInstance<'_>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_hook(model, instances, cfg, |_, _| {})
}

/// [`train`] with a per-step hook (step index, model snapshot access) for
/// periodic validation.
pub fn train_with_hook(
    model: &mut EncoderModel,
    instances: &[ResolvedInstance<'_>],
    cfg: &TrainConfig,
    mut hook: impl FnMut(usize, &EncoderModel),
) -> Result<TrainOutcome> {
    if instances.is_empty() {
        return Err(EfrError::Invalid("training requires at least one instance".to_string()));
    }
    if cfg.batch_size < 1 {
        return Err(EfrError::Config("batch_size must be >= 1".to_string()));
    }
    if !(0.0..1.0).contains(&cfg.warmup_fraction) {
        return Err(EfrError::Config("warmup_fraction must be in [0, 1)".to_string()));
    }

    let hash_dim = model.config().hash_dim;
    let prepared: Vec<PreparedInstance> = instances
        .iter()
        .map(|inst| PreparedInstance::new(inst, hash_dim))
        .collect();

    let batches_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let warmup_steps = (cfg.warmup_fraction * total_steps as f64).floor() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut outcome = TrainOutcome::default();

    let mut moment1 = vec![0.0; model.param_count()];
    let mut moment2 = vec![0.0; model.param_count()];
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedInstance> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (losses, grad) = batch_gradient(model, &batch, cfg);
            if !losses.total.is_finite() {
                return Err(EfrError::NonFinite {
                    step,
                    msg: format!(
                        "loss components qp={} qpe={} ent={}",
                        losses.l_qp, losses.l_qpe, losses.l_ent
                    ),
                });
            }
            let lr = if warmup_steps > 0 && step < warmup_steps {
                cfg.learning_rate * (step + 1) as f64 / warmup_steps as f64
            } else {
                cfg.learning_rate
            };
            match cfg.optimizer {
                OptimizerKind::Momentless => {
                    for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adaptive => {
                    let t = (step + 1) as f64;
                    let bias1 = 1.0 - ADAM_BETA1.powf(t);
                    let bias2 = 1.0 - ADAM_BETA2.powf(t);
                    for ((p, g), (m, v)) in model
                        .params_mut()
                        .iter_mut()
                        .zip(&grad)
                        .zip(moment1.iter_mut().zip(moment2.iter_mut()))
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / bias1;
                        let v_hat = *v / bias2;
                        *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + ADAM_WEIGHT_DECAY * *p);
                    }
                }
            }
            outcome.history.push(StepRecord {
                step,
                l_qp: losses.l_qp,
                l_qpe: losses.l_qpe,
                l_ent: losses.l_ent,
                lr,
            });
            hook(step, model);
            step += 1;
        }
    }
    Ok(outcome)
}

/// Persist the loss history as CSV: step, l_qp, l_qpe, l_ent, lr.
pub fn save_loss_history(path: impl AsRef<Path>, history: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| EfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "step,l_qp,l_qpe,l_ent,lr").map_err(|e| EfrError::io(path, e))?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.step, r.l_qp, r.l_qpe, r.l_ent, r.lr)
            .map_err(|e| EfrError::io(path, e))?;
    }
    w.flush().map_err(|e| EfrError::io(path, e))
}

/// Write a checkpoint: shape, provenance, config echo, and raw f64
/// parameters.
pub fn save_checkpoint(
    model: &EncoderModel,
    path: impl AsRef<Path>,
    meta: &ArtifactMeta,
    config_echo: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = artifact::open_writer(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    artifact::write_meta(&mut w, path, meta)?;
    artifact::write_str(&mut w, path, config_echo)?;
    let cfg = model.config();
    artifact::write_u32(&mut w, path, cfg.hash_dim as u32)?;
    artifact::write_u32(&mut w, path, cfg.dim as u32)?;
    artifact::write_f64(&mut w, path, cfg.epsilon)?;
    artifact::write_u64(&mut w, path, model.param_count() as u64)?;
    for &p in model.params() {
        artifact::write_f64(&mut w, path, p)?;
    }
    w.flush().map_err(|e| EfrError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderModel, ArtifactMeta, String)> {
    let path = path.as_ref();
    let mut r = artifact::open_reader(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let meta = artifact::read_meta(&mut r, path)?;
    let config_echo = artifact::read_str(&mut r, path)?;
    let hash_dim = artifact::read_u32(&mut r, path)? as usize;
    let dim = artifact::read_u32(&mut r, path)? as usize;
    let epsilon = artifact::read_f64(&mut r, path)?;
    let count = artifact::read_u64(&mut r, path)? as usize;
    let mut model = EncoderModel::zeros(crate::encoder::ModelConfig {
        hash_dim,
        dim,
        epsilon,
    });
    if model.param_count() != count {
        return Err(artifact::format_err(
            path,
            format!(
                "parameter count {count} does not match shape ({} expected)",
                model.param_count()
            ),
        ));
    }
    for p in model.params_mut() {
        *p = artifact::read_f64(&mut r, path)?;
    }
    Ok((model, meta, config_echo))
}
