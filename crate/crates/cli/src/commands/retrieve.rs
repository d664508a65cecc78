//! `efr retrieve`: MIPS over the dense index, then entity-focused
//! reranking, emitting a TREC run file and an optional breakdown sidecar.

use std::path::PathBuf;

use rayon::prelude::*;

use efr_core::artifact::write_meta_sidecar;
use efr_core::encoder::{read_embeddings, write_embeddings};
use efr_core::error::{EfrError, Result};
use efr_core::run::{run_tag, write_breakdowns, write_run, BreakdownRecord, RunResults};
use efr_core::scorer::{mips_topk, rerank, QueryScorer};

use super::{load_corpus_checked, load_query_set, resolve_dense_index, resolve_model, Ctx};

pub fn run(config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let queries = load_query_set(&ctx.cfg)?;
    let run_path = ctx.cfg.require_output("run_file")?;

    let model = resolve_model(&ctx.cfg, true)?;
    let dense = resolve_dense_index(&ctx.cfg, &model, &passages)?;
    let query_vectors = match &ctx.cfg.query_embeddings {
        Some(_) => {
            let path = ctx.cfg.require_input("query_embeddings")?;
            Some(read_embeddings(&path)?.1)
        }
        None => None,
    };

    if let Some(dense_path) = &ctx.cfg.dense_index {
        write_embeddings(dense_path, dense.dim(), dense.iter())?;
    }

    let depth = ctx.cfg.rerank_depth.min(dense.len()).max(1);
    let lambda = ctx.cfg.lambda;
    let pool = ctx.pool()?;
    let per_query: Vec<(String, Vec<BreakdownRecord>)> = pool.install(|| {
        queries
            .par_iter()
            .map(|query| {
                let f_q = match &query_vectors {
                    Some(map) => map
                        .get(&query.id)
                        .cloned()
                        .ok_or_else(|| EfrError::UnknownId {
                            what: "query embedding",
                            id: query.id.clone(),
                        })?,
                    None => model.encode_query(query),
                };
                let candidates = mips_topk(&dense, &f_q, depth)?;
                let scorer = QueryScorer::with_query_embedding(&model, query, &f_q);
                let reranked = rerank(&scorer, &candidates, &dense, lambda)?;
                let records = reranked
                    .into_iter()
                    .enumerate()
                    .map(|(rank0, (passage_id, breakdown))| BreakdownRecord {
                        query_id: query.id.clone(),
                        passage_id,
                        rank: rank0 + 1,
                        breakdown,
                    })
                    .collect();
                Ok((query.id.clone(), records))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let results: RunResults = per_query
        .iter()
        .map(|(query_id, records)| {
            (
                query_id.clone(),
                records
                    .iter()
                    .map(|r| (r.passage_id.clone(), r.breakdown.combined))
                    .collect(),
            )
        })
        .collect();
    write_run(&run_path, &results, &run_tag(&ctx.meta))?;
    write_meta_sidecar(&run_path, &ctx.meta, efr_core::run::RUN_FORMAT_VERSION)?;

    if let Some(breakdown_path) = &ctx.cfg.breakdown_file {
        let records: Vec<BreakdownRecord> =
            per_query.into_iter().flat_map(|(_, records)| records).collect();
        write_breakdowns(breakdown_path, &records)?;
        write_meta_sidecar(breakdown_path, &ctx.meta, 1)?;
    }

    println!(
        "retrieved top {} of {} passages for {} queries (lambda = {})",
        depth,
        dense.len(),
        results.len(),
        lambda
    );
    println!("run file: {}", run_path.display());
    Ok(())
}
