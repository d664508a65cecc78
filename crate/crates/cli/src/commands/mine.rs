//! `efr mine`: oracle entity scoring and training-set construction.

use std::path::PathBuf;

use rayon::prelude::*;

use efr_core::artifact::write_meta_sidecar;
use efr_core::corpus::PassageMap;
use efr_core::error::Result;
use efr_core::mining::{mine_query, save_entity_scores, save_training_set, MiningOutput};
use efr_core::sparse::load_index;

use super::{load_corpus_checked, load_query_set, Ctx};

pub fn run(config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let queries = load_query_set(&ctx.cfg)?;
    if queries.is_empty() {
        return Err(efr_core::EfrError::Invalid("query set is empty".to_string()));
    }
    let index_path = ctx.cfg.require_input("sparse_index")?;
    let scores_path = ctx.cfg.require_output("entity_scores")?;
    let trainset_path = ctx.cfg.require_output("training_set")?;

    let (index, _) = load_index(&index_path)?;
    let map = PassageMap::new(&passages);
    let norm = ctx.cfg.normalizer();
    let mining_cfg = ctx.cfg.mining_config();

    // Per-query mining is pure and seeded per query id; results merge back
    // in query order.
    let pool = ctx.pool()?;
    let mined: Vec<_> = pool.install(|| {
        queries
            .par_iter()
            .map(|q| mine_query(&index, &map, &norm, q, &mining_cfg).map(|r| (q.id.clone(), r)))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut output = MiningOutput::default();
    output.stats.queries = queries.len();
    for (query_id, outcome) in mined {
        output.absorb(&query_id, outcome);
    }

    save_entity_scores(&scores_path, &output.entity_scores)?;
    write_meta_sidecar(&scores_path, &ctx.meta, 1)?;
    save_training_set(&trainset_path, &output.instances)?;
    write_meta_sidecar(&trainset_path, &ctx.meta, 1)?;

    let stats = &output.stats;
    println!(
        "mined {} queries: {} instances, {}/{} oracle entities, dropped {} (no positive) + {} (no negative)",
        stats.queries,
        stats.instances,
        stats.oracle_entities,
        stats.total_entities,
        stats.dropped_no_positive,
        stats.dropped_no_negative
    );
    println!("entity scores: {}", scores_path.display());
    println!("training set:  {}", trainset_path.display());
    Ok(())
}
