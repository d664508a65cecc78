//! Flat key=value run configuration shared by all pipeline commands.
//!
//! A config file holds one `key = value` pair per line (`#` comments
//! allowed); command-line overrides win over file values. The canonical
//! rendering of the effective configuration is hashed into every artifact.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::EntitySource;
use crate::error::{EfrError, Result};
use crate::eval::parse_source_set;
use crate::sparse::Bm25Params;
use crate::synth::SynthConfig;
use crate::text::fnv1a64;
use crate::trainer::{OptimizerKind, TrainConfig};

/// Which query half a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitChoice {
    #[default]
    All,
    Validation,
    Test,
}

impl std::str::FromStr for SplitChoice {
    type Err = EfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitChoice::All),
            "val" | "validation" => Ok(SplitChoice::Validation),
            "test" => Ok(SplitChoice::Test),
            other => Err(EfrError::Config(format!(
                "unknown split {other:?} (expected all, val, or test)"
            ))),
        }
    }
}

impl SplitChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitChoice::All => "all",
            SplitChoice::Validation => "val",
            SplitChoice::Test => "test",
        }
    }
}

/// Effective configuration for a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Paths.
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub sparse_index: Option<PathBuf>,
    pub dense_index: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub passage_embeddings: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub entity_scores: Option<PathBuf>,
    pub training_set: Option<PathBuf>,
    pub run_file: Option<PathBuf>,
    pub breakdown_file: Option<PathBuf>,
    pub report_file: Option<PathBuf>,
    pub loss_history: Option<PathBuf>,

    // Text handling.
    pub stemming: bool,
    pub stopwords: bool,

    // Sparse retrieval.
    pub k1: f64,
    pub b: f64,

    // Mining.
    pub theta: f64,
    pub srr_depth: usize,
    pub k_init: usize,
    pub n_pos: usize,
    pub n_neg: usize,

    // Encoder.
    pub hash_dim: usize,
    pub dim: usize,
    pub epsilon: f64,

    // Training.
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub w_qp: f64,
    pub w_qpe: f64,
    pub w_ent: f64,
    pub optimizer: OptimizerKind,

    // Inference and evaluation.
    pub lambda: f64,
    pub rerank_depth: usize,
    pub metric_k: usize,
    pub keep_sources: BTreeSet<EntitySource>,
    pub split: SplitChoice,
    pub bootstrap: usize,

    // Synthetic data.
    pub synth_topics: usize,
    pub synth_variants: usize,
    pub synth_confusers: usize,
    pub synth_fillers: usize,

    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            queries: None,
            sparse_index: None,
            dense_index: None,
            checkpoint: None,
            passage_embeddings: None,
            query_embeddings: None,
            entity_scores: None,
            training_set: None,
            run_file: None,
            breakdown_file: None,
            report_file: None,
            loss_history: None,
            stemming: false,
            stopwords: false,
            k1: 1.1,
            b: 0.4,
            theta: 0.8,
            srr_depth: 5,
            k_init: 100,
            n_pos: 5,
            n_neg: 25,
            hash_dim: 8192,
            dim: 64,
            epsilon: 1e-5,
            learning_rate: 1e-5,
            epochs: 8,
            batch_size: 6,
            warmup_fraction: 0.1,
            w_qp: 1.0,
            w_qpe: 1.0,
            w_ent: 1.0,
            optimizer: OptimizerKind::Adaptive,
            lambda: 1.0,
            rerank_depth: 80,
            metric_k: 5,
            keep_sources: EntitySource::ALL.into_iter().collect(),
            split: SplitChoice::All,
            bootstrap: 0,
            synth_topics: 70,
            synth_variants: 3,
            synth_confusers: 6,
            synth_fillers: 1400,
            seed: 42,
            threads: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| EfrError::Config(format!("bad value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(EfrError::Config(format!("bad boolean {value:?} for key {key:?}"))),
    }
}

impl RunConfig {
    /// Parse a config file and then apply `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let body = std::fs::read_to_string(path).map_err(|e| EfrError::io(path, e))?;
            for (idx, raw) in body.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| EfrError::Config(format!(
                    "{}:{}: expected key = value, found {raw:?}",
                    path.display(),
                    idx + 1
                )))?;
                cfg.set(key.trim(), value.trim())?;
            }
        }
        for raw in overrides {
            let (key, value) = raw.split_once('=').ok_or_else(|| {
                EfrError::Config(format!("override {raw:?} is not of the form key=value"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Set one key. Unknown keys are errors so typos cannot silently change
    /// an experiment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "queries" => self.queries = Some(PathBuf::from(value)),
            "sparse_index" => self.sparse_index = Some(PathBuf::from(value)),
            "dense_index" => self.dense_index = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "passage_embeddings" => self.passage_embeddings = Some(PathBuf::from(value)),
            "query_embeddings" => self.query_embeddings = Some(PathBuf::from(value)),
            "entity_scores" => self.entity_scores = Some(PathBuf::from(value)),
            "training_set" => self.training_set = Some(PathBuf::from(value)),
            "run_file" => self.run_file = Some(PathBuf::from(value)),
            "breakdown_file" => self.breakdown_file = Some(PathBuf::from(value)),
            "report_file" => self.report_file = Some(PathBuf::from(value)),
            "loss_history" => self.loss_history = Some(PathBuf::from(value)),
            "stemming" => self.stemming = parse_bool(key, value)?,
            "stopwords" => self.stopwords = parse_bool(key, value)?,
            "k1" => self.k1 = parse_value(key, value)?,
            "b" => self.b = parse_value(key, value)?,
            "theta" => self.theta = parse_value(key, value)?,
            "srr_depth" => self.srr_depth = parse_value(key, value)?,
            "k_init" => self.k_init = parse_value(key, value)?,
            "n_pos" => self.n_pos = parse_value(key, value)?,
            "n_neg" => self.n_neg = parse_value(key, value)?,
            "hash_dim" => self.hash_dim = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse_value(key, value)?,
            "w_qp" => self.w_qp = parse_value(key, value)?,
            "w_qpe" => self.w_qpe = parse_value(key, value)?,
            "w_ent" => self.w_ent = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "rerank_depth" => self.rerank_depth = parse_value(key, value)?,
            "metric_k" => self.metric_k = parse_value(key, value)?,
            "keep_sources" => self.keep_sources = parse_source_set(value)?,
            "split" => self.split = value.parse()?,
            "bootstrap" => self.bootstrap = parse_value(key, value)?,
            "synth_topics" => self.synth_topics = parse_value(key, value)?,
            "synth_variants" => self.synth_variants = parse_value(key, value)?,
            "synth_confusers" => self.synth_confusers = parse_value(key, value)?,
            "synth_fillers" => self.synth_fillers = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            other => return Err(EfrError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical key = value rendering of every effective setting, sorted
    /// by key.
    pub fn canonical_string(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref().map_or(String::new(), |p| p.display().to_string())
        };
        let sources = self
            .keep_sources
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("b", self.b.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("bootstrap", self.bootstrap.to_string()),
            ("breakdown_file", path(&self.breakdown_file)),
            ("checkpoint", path(&self.checkpoint)),
            ("corpus", path(&self.corpus)),
            ("dense_index", path(&self.dense_index)),
            ("dim", self.dim.to_string()),
            ("entity_scores", path(&self.entity_scores)),
            ("epochs", self.epochs.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("hash_dim", self.hash_dim.to_string()),
            ("k1", self.k1.to_string()),
            ("k_init", self.k_init.to_string()),
            (
                "keep_sources",
                if sources.is_empty() { "none".to_string() } else { sources },
            ),
            ("lambda", self.lambda.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("loss_history", path(&self.loss_history)),
            ("metric_k", self.metric_k.to_string()),
            ("n_neg", self.n_neg.to_string()),
            ("n_pos", self.n_pos.to_string()),
            (
                "optimizer",
                match self.optimizer {
                    OptimizerKind::Momentless => "momentless".to_string(),
                    OptimizerKind::Adaptive => "adaptive".to_string(),
                },
            ),
            ("passage_embeddings", path(&self.passage_embeddings)),
            ("queries", path(&self.queries)),
            ("query_embeddings", path(&self.query_embeddings)),
            ("report_file", path(&self.report_file)),
            ("rerank_depth", self.rerank_depth.to_string()),
            ("run_file", path(&self.run_file)),
            ("seed", self.seed.to_string()),
            ("sparse_index", path(&self.sparse_index)),
            ("split", self.split.as_str().to_string()),
            ("srr_depth", self.srr_depth.to_string()),
            ("stemming", self.stemming.to_string()),
            ("stopwords", self.stopwords.to_string()),
            ("synth_confusers", self.synth_confusers.to_string()),
            ("synth_fillers", self.synth_fillers.to_string()),
            ("synth_topics", self.synth_topics.to_string()),
            ("synth_variants", self.synth_variants.to_string()),
            ("theta", self.theta.to_string()),
            ("threads", self.threads.to_string()),
            ("training_set", path(&self.training_set)),
            ("w_ent", self.w_ent.to_string()),
            ("w_qp", self.w_qp.to_string()),
            ("w_qpe", self.w_qpe.to_string()),
            ("warmup_fraction", self.warmup_fraction.to_string()),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// 16-hex-digit fingerprint of the canonical configuration.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_string().as_bytes()))
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn model_config(&self) -> crate::encoder::ModelConfig {
        crate::encoder::ModelConfig {
            hash_dim: self.hash_dim,
            dim: self.dim,
            epsilon: self.epsilon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            w_qp: self.w_qp,
            w_qpe: self.w_qpe,
            w_ent: self.w_ent,
            seed: self.seed,
            lambda: self.lambda,
            optimizer: self.optimizer,
        }
    }

    pub fn mining_config(&self) -> crate::mining::MiningConfig {
        crate::mining::MiningConfig {
            k_init: self.k_init,
            srr_depth: self.srr_depth,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            theta: self.theta,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            topics: self.synth_topics,
            variants: self.synth_variants,
            confusers: self.synth_confusers,
            fillers: self.synth_fillers,
            seed: self.seed,
        }
    }

    pub fn normalizer(&self) -> crate::text::Normalizer {
        crate::text::Normalizer::new(self.stemming)
    }

    /// Fetch a required path, verifying the file exists.
    pub fn require_input(&self, key: &str) -> Result<PathBuf> {
        let value = match key {
            "corpus" => &self.corpus,
            "queries" => &self.queries,
            "sparse_index" => &self.sparse_index,
            "dense_index" => &self.dense_index,
            "checkpoint" => &self.checkpoint,
            "passage_embeddings" => &self.passage_embeddings,
            "query_embeddings" => &self.query_embeddings,
            "entity_scores" => &self.entity_scores,
            "training_set" => &self.training_set,
            "run_file" => &self.run_file,
            _ => &None,
        };
        let path = value
            .clone()
            .ok_or_else(|| EfrError::Config(format!("missing required config key {key:?}")))?;
        if !path.exists() {
            return Err(EfrError::Config(format!(
                "{key} path {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Fetch a required output path (parent need not exist yet).
    pub fn require_output(&self, key: &str) -> Result<PathBuf> {
        let value = match key {
            "sparse_index" => &self.sparse_index,
            "dense_index" => &self.dense_index,
            "checkpoint" => &self.checkpoint,
            "entity_scores" => &self.entity_scores,
            "training_set" => &self.training_set,
            "run_file" => &self.run_file,
            "report_file" => &self.report_file,
            "loss_history" => &self.loss_history,
            "corpus" => &self.corpus,
            "queries" => &self.queries,
            _ => &None,
        };
        value
            .clone()
            .ok_or_else(|| EfrError::Config(format!("missing required config key {key:?}")))
    }
}
