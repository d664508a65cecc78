//! Shared command plumbing: config loading, query-set preparation, and
//! encoder resolution.

use std::path::{Path, PathBuf};

use efr_core::artifact::ArtifactMeta;
use efr_core::config::{RunConfig, SplitChoice};
use efr_core::corpus::{load_queries, QueryExample};
use efr_core::encoder::read_embeddings;
use efr_core::error::{EfrError, Result};
use efr_core::eval::{ablate_entity_sources, split_queries};
use efr_core::scorer::DenseIndex;
use efr_core::trainer::load_checkpoint;
use efr_core::EncoderModel;

pub mod eval;
pub mod gen_synth;
pub mod index;
pub mod mine;
pub mod retrieve;
pub mod sweep;
pub mod train;

pub struct Ctx {
    pub cfg: RunConfig,
    pub meta: ArtifactMeta,
}

impl Ctx {
    pub fn new(config: &Option<PathBuf>, overrides: &[String]) -> Result<Self> {
        let cfg = RunConfig::load(config.as_deref(), overrides)?;
        let meta = ArtifactMeta::new(cfg.hash(), cfg.seed);
        Ok(Ctx { cfg, meta })
    }

    /// Thread pool honoring the `threads` cap.
    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.threads.max(1))
            .build()
            .map_err(|e| EfrError::Invalid(format!("thread pool: {e}")))
    }
}

/// Load queries, then apply the configured split and entity-source
/// ablation.
pub fn load_query_set(cfg: &RunConfig) -> Result<Vec<QueryExample>> {
    let path = cfg.require_input("queries")?;
    let queries = load_queries(&path)?;
    let queries = match cfg.split {
        SplitChoice::All => queries,
        SplitChoice::Validation => split_queries(&queries, cfg.seed).0,
        SplitChoice::Test => split_queries(&queries, cfg.seed).1,
    };
    Ok(ablate_entity_sources(&queries, &cfg.keep_sources))
}

pub fn load_corpus_checked(cfg: &RunConfig) -> Result<Vec<efr_core::Passage>> {
    let path = cfg.require_input("corpus")?;
    efr_core::corpus::load_corpus(&path)
}

/// Encoder used for dense retrieval: a trained checkpoint when configured,
/// otherwise a fresh seed-initialized model. A configured checkpoint that
/// does not exist yet is an error when `strict`, and falls back to the
/// seeded initialization otherwise (the pre-training `index` stage).
pub fn resolve_model(cfg: &RunConfig, strict: bool) -> Result<EncoderModel> {
    if let Some(path) = &cfg.checkpoint {
        if path.exists() {
            let (model, _, _) = load_checkpoint(path)?;
            return Ok(model);
        }
        if strict {
            return Err(EfrError::Config(format!(
                "checkpoint path {} does not exist",
                path.display()
            )));
        }
        println!(
            "note: checkpoint {} not found, encoding with the seed-initialized model",
            path.display()
        );
    }
    Ok(EncoderModel::init(cfg.model_config(), cfg.seed))
}

/// Dense passage representation: precomputed embeddings when configured,
/// otherwise encoded from the resolved model.
pub fn resolve_dense_index(
    cfg: &RunConfig,
    model: &EncoderModel,
    passages: &[efr_core::Passage],
) -> Result<DenseIndex> {
    if cfg.passage_embeddings.is_some() {
        let path = cfg.require_input("passage_embeddings")?;
        let (dim, map) = read_embeddings(&path)?;
        return DenseIndex::from_embeddings(dim, &map);
    }
    DenseIndex::from_model(model, passages)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
