//! Deterministic trainable encoder and the embedding-file contract.
//!
//! Text becomes a hashed bag of unigrams and bigrams (FNV-1a modulo the
//! feature-space size). Three independently parameterized towers map hashed
//! features to d-dimensional vectors through a linear layer followed by
//! mean-variance normalization; three secondary projection heads (linear +
//! normalization over d) produce the vectors used by the query-entity and
//! passage-entity scores. Precomputed embeddings can be swapped in through
//! the `EFEM` file format, so the built-in encoder is replaceable by any
//! external model.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifact;
use crate::corpus::{Entity, EntitySource, Passage, QueryExample};
use crate::error::{EfrError, Result};
use crate::text::{fnv1a64, tokenize};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EFEM";
pub const EMBEDDING_VERSION: u32 = 1;

/// Separator injected between the entity, question, and caption segments of
/// the entity-tower input. Tokens are alphanumeric runs, so this control
/// character can never collide with a corpus token.
pub const SEGMENT_SEPARATOR: &str = "\u{1}";

/// Sparse hashed feature bag: (feature index, count), sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures(pub Vec<(u32, f64)>);

impl SparseFeatures {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hash unigrams and bigrams of pre-tokenized text into `[0, hash_dim)`.
pub fn featurize_tokens(tokens: &[String], hash_dim: usize) -> SparseFeatures {
    assert!(hash_dim >= 2, "hash_dim must be >= 2");
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in tokens {
        let idx = (fnv1a64(token.as_bytes()) % hash_dim as u64) as u32;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    for pair in tokens.windows(2) {
        let joined = format!("{} {}", pair[0], pair[1]);
        let idx = (fnv1a64(joined.as_bytes()) % hash_dim as u64) as u32;
        *counts.entry(idx).or_insert(0.0) += 1.0;
    }
    SparseFeatures(counts.into_iter().collect())
}

/// Hash raw text (tokenized with the shared tokenizer).
pub fn featurize(text: &str, hash_dim: usize) -> SparseFeatures {
    featurize_tokens(&tokenize(text), hash_dim)
}

/// Token sequence fed to the query tower: question, caption, then the texts
/// of tag- and wikidata-sourced entities (the visual surrogates).
pub fn query_input_tokens(query: &QueryExample) -> Vec<String> {
    let mut tokens = tokenize(&query.question);
    tokens.extend(tokenize(&query.caption));
    for entity in &query.entities {
        if matches!(entity.source, EntitySource::Tag | EntitySource::Wikidata) {
            tokens.extend(tokenize(&entity.text));
        }
    }
    tokens
}

/// Token sequence fed to the entity tower:
/// entity [SEP] question [SEP] caption.
pub fn entity_input_tokens(entity_text: &str, question: &str, caption: &str) -> Vec<String> {
    let mut tokens = tokenize(entity_text);
    tokens.push(SEGMENT_SEPARATOR.to_string());
    tokens.extend(tokenize(question));
    tokens.push(SEGMENT_SEPARATOR.to_string());
    tokens.extend(tokenize(caption));
    tokens
}

/// Model shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hash_dim: usize,
    pub dim: usize,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hash_dim: 8192,
            dim: 64,
            epsilon: 1e-5,
        }
    }
}

/// Parameter blocks, in their fixed layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    QueryTowerW,
    QueryTowerB,
    PassageTowerW,
    PassageTowerB,
    EntityTowerW,
    EntityTowerB,
    QueryHeadW,
    QueryHeadB,
    PassageHeadW,
    PassageHeadB,
    EntityHeadW,
    EntityHeadB,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::QueryTowerW,
        Block::QueryTowerB,
        Block::PassageTowerW,
        Block::PassageTowerB,
        Block::EntityTowerW,
        Block::EntityTowerB,
        Block::QueryHeadW,
        Block::QueryHeadB,
        Block::PassageHeadW,
        Block::PassageHeadB,
        Block::EntityHeadW,
        Block::EntityHeadB,
    ];

    fn len(&self, cfg: &ModelConfig) -> usize {
        match self {
            Block::QueryTowerW | Block::PassageTowerW | Block::EntityTowerW => {
                cfg.hash_dim * cfg.dim
            }
            Block::QueryHeadW | Block::PassageHeadW | Block::EntityHeadW => cfg.dim * cfg.dim,
            _ => cfg.dim,
        }
    }
}

/// The three-tower encoder with secondary projection heads. All parameters
/// live in one flat vector so the trainer, checkpoints, and gradient checks
/// can address coordinates uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    cfg: ModelConfig,
    params: Vec<f64>,
}

impl EncoderModel {
    /// Seeded initialization: tower and head weights uniform in
    /// (-0.1, 0.1), biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut model = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in Block::ALL {
            let range = model.block_range(block);
            match block {
                Block::QueryTowerB
                | Block::PassageTowerB
                | Block::EntityTowerB
                | Block::QueryHeadB
                | Block::PassageHeadB
                | Block::EntityHeadB => {}
                _ => {
                    for v in &mut model.params[range] {
                        *v = rng.random_range(-0.1..0.1);
                    }
                }
            }
        }
        model
    }

    pub fn zeros(cfg: ModelConfig) -> Self {
        let total: usize = Block::ALL.iter().map(|b| b.len(&cfg)).sum();
        EncoderModel {
            cfg,
            params: vec![0.0; total],
        }
    }

    pub fn config(&self) -> ModelConfig {
        self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn block_range(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = b.len(&self.cfg);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!("block layout covers all variants")
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.params[self.block_range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let range = self.block_range(block);
        &mut self.params[range]
    }

    /// Linear tower over hashed features followed by mean-variance
    /// normalization. `w` is laid out feature-major: row `j` holds the
    /// d-vector for feature `j`.
    fn tower(&self, w: Block, b: Block, feats: &SparseFeatures) -> Vec<f64> {
        let d = self.cfg.dim;
        let w = self.block(w);
        let mut v = self.block(b).to_vec();
        for &(idx, count) in &feats.0 {
            let row = &w[idx as usize * d..(idx as usize + 1) * d];
            for (vo, wo) in v.iter_mut().zip(row) {
                *vo += count * wo;
            }
        }
        normalize(&mut v, self.cfg.epsilon);
        v
    }

    /// Secondary projection head: linear d->d plus bias, then
    /// mean-variance normalization.
    fn head(&self, w: Block, b: Block, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.cfg.dim, "head input dimension mismatch");
        let d = self.cfg.dim;
        let w = self.block(w);
        let mut u = self.block(b).to_vec();
        for (o, uo) in u.iter_mut().enumerate() {
            let row = &w[o * d..(o + 1) * d];
            let mut acc = 0.0;
            for (ri, fi) in row.iter().zip(f) {
                acc += ri * fi;
            }
            *uo += acc;
        }
        normalize(&mut u, self.cfg.epsilon);
        u
    }

    pub fn encode_query(&self, query: &QueryExample) -> Vec<f64> {
        let feats = featurize_tokens(&query_input_tokens(query), self.cfg.hash_dim);
        self.tower(Block::QueryTowerW, Block::QueryTowerB, &feats)
    }

    pub fn encode_passage(&self, passage: &Passage) -> Vec<f64> {
        self.encode_passage_text(&passage.text)
    }

    pub fn encode_passage_text(&self, text: &str) -> Vec<f64> {
        let feats = featurize(text, self.cfg.hash_dim);
        self.tower(Block::PassageTowerW, Block::PassageTowerB, &feats)
    }

    pub fn encode_entity(&self, entity: &Entity, query: &QueryExample) -> Vec<f64> {
        let tokens = entity_input_tokens(&entity.text, &query.question, &query.caption);
        let feats = featurize_tokens(&tokens, self.cfg.hash_dim);
        self.tower(Block::EntityTowerW, Block::EntityTowerB, &feats)
    }

    pub fn head_query(&self, f_q: &[f64]) -> Vec<f64> {
        self.head(Block::QueryHeadW, Block::QueryHeadB, f_q)
    }

    pub fn head_passage(&self, f_p: &[f64]) -> Vec<f64> {
        self.head(Block::PassageHeadW, Block::PassageHeadB, f_p)
    }

    pub fn head_entity(&self, f_e: &[f64]) -> Vec<f64> {
        self.head(Block::EntityHeadW, Block::EntityHeadB, f_e)
    }
}

/// In-place mean-variance normalization: (v - mean) / sqrt(var + eps).
pub fn normalize(v: &mut [f64], epsilon: f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + epsilon).sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

/// Write an id -> vector map. Payload floats are 32-bit little-endian.
pub fn write_embeddings<'a, I>(path: impl AsRef<Path>, dim: usize, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let path = path.as_ref();
    let rows: Vec<(&str, &[f64])> = rows.into_iter().collect();
    let mut w = artifact::open_writer(path, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    artifact::write_u32(&mut w, path, dim as u32)?;
    artifact::write_u64(&mut w, path, rows.len() as u64)?;
    for (id, values) in rows {
        if values.len() != dim {
            return Err(EfrError::Invalid(format!(
                "embedding for {id:?} has dimension {}, expected {dim}",
                values.len()
            )));
        }
        artifact::write_str(&mut w, path, id)?;
        for &v in values {
            artifact::write_f32(&mut w, path, v as f32)?;
        }
    }
    use std::io::Write;
    w.flush().map_err(|e| EfrError::io(path, e))
}

/// Read an embedding file. Errors name the offending id on truncated rows
/// and reject duplicate ids.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(usize, BTreeMap<String, Vec<f64>>)> {
    let path = path.as_ref();
    let mut r = artifact::open_reader(path, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    let dim = artifact::read_u32(&mut r, path)? as usize;
    let count = artifact::read_u64(&mut r, path)? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let id = artifact::read_str(&mut r, path)?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = artifact::read_f32(&mut r, path).map_err(|_| {
                artifact::format_err(path, format!("truncated embedding row for id {id:?}"))
            })?;
            values.push(f64::from(v));
        }
        if map.insert(id.clone(), values).is_some() {
            return Err(artifact::format_err(path, format!("duplicate embedding id {id:?}")));
        }
    }
    Ok((dim, map))
}
