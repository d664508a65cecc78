//! `efr sweep-lambda`: evaluate a list of reranking weights against one
//! checkpoint, reusing the MIPS candidates across weights.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use efr_core::corpus::PassageMap;
use efr_core::error::{EfrError, Result};
use efr_core::eval::{evaluate_run, RankedIds};
use efr_core::scorer::{mips_topk, rerank, QueryScorer};

use super::{load_corpus_checked, load_query_set, resolve_dense_index, resolve_model, Ctx};

#[derive(Serialize)]
struct SweepPoint {
    lambda: f64,
    mrr_at_k: f64,
    p_at_k: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config_hash: &'a str,
    seed: u64,
    format_version: u32,
    k: usize,
    points: Vec<SweepPoint>,
}

fn parse_lambdas(expr: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in expr.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let value: f64 = part
            .parse()
            .map_err(|_| EfrError::Config(format!("bad lambda {part:?}")))?;
        if value < 0.0 {
            return Err(EfrError::Config(format!("lambda must be >= 0, got {value}")));
        }
        out.push(value);
    }
    if out.is_empty() {
        return Err(EfrError::Config("no lambdas given".to_string()));
    }
    Ok(out)
}

pub fn run(config: &Option<PathBuf>, overrides: &[String], lambdas: &str) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let lambdas = parse_lambdas(lambdas)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let queries = load_query_set(&ctx.cfg)?;
    let norm = ctx.cfg.normalizer();
    let map = PassageMap::new(&passages);

    let model = resolve_model(&ctx.cfg, true)?;
    let dense = resolve_dense_index(&ctx.cfg, &model, &passages)?;
    let depth = ctx.cfg.rerank_depth.min(dense.len()).max(1);

    // Candidates and per-query scorers do not depend on lambda; rerank per
    // weight is the only repeated work.
    let pool = ctx.pool()?;
    let runs: Vec<RankedIds> = pool.install(|| {
        let per_query: Result<Vec<(String, Vec<Vec<String>>)>> = queries
            .par_iter()
            .map(|query| {
                let f_q = model.encode_query(query);
                let candidates = mips_topk(&dense, &f_q, depth)?;
                let scorer = QueryScorer::with_query_embedding(&model, query, &f_q);
                let orders = lambdas
                    .iter()
                    .map(|&lambda| {
                        Ok(rerank(&scorer, &candidates, &dense, lambda)?
                            .into_iter()
                            .map(|(id, _)| id)
                            .collect::<Vec<String>>())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((query.id.clone(), orders))
            })
            .collect();
        let per_query = per_query?;
        let mut runs = vec![RankedIds::new(); lambdas.len()];
        for (query_id, orders) in per_query {
            for (slot, order) in orders.into_iter().enumerate() {
                runs[slot].insert(query_id.clone(), order);
            }
        }
        Ok::<_, EfrError>(runs)
    })?;

    let mut points = Vec::with_capacity(lambdas.len());
    println!("{:>8} {:>10} {:>10}", "lambda", format!("MRR@{}", ctx.cfg.metric_k), format!("P@{}", ctx.cfg.metric_k));
    for (lambda, run) in lambdas.iter().zip(&runs) {
        let report = evaluate_run(
            &format!("lambda={lambda}"),
            run,
            &queries,
            &map,
            &norm,
            ctx.cfg.metric_k,
            None,
        )?;
        println!("{lambda:>8} {:>10.4} {:>10.4}", report.mrr_at_k, report.p_at_k);
        points.push(SweepPoint {
            lambda: *lambda,
            mrr_at_k: report.mrr_at_k,
            p_at_k: report.p_at_k,
        });
    }

    if let Some(report_path) = &ctx.cfg.report_file {
        let report = SweepReport {
            config_hash: &ctx.meta.config_hash,
            seed: ctx.meta.seed,
            format_version: 1,
            k: ctx.cfg.metric_k,
            points,
        };
        let body = serde_json::to_string_pretty(&report)
            .map_err(|e| EfrError::Invalid(format!("report serialization: {e}")))?;
        std::fs::write(report_path, body + "\n").map_err(|e| EfrError::io(report_path, e))?;
        println!("report: {}", report_path.display());
    }
    Ok(())
}
