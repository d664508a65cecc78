//! `efr eval`: score one or more run files against answer-containment gold.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use efr_core::corpus::PassageMap;
use efr_core::error::{EfrError, Result};
use efr_core::eval::{
    evaluate_run, format_report_table, paired_bootstrap_pvalue, MetricReport, RankedIds,
};
use efr_core::mining::load_entity_scores;
use efr_core::run::read_run;

use super::{file_stem, load_corpus_checked, load_query_set, Ctx};

#[derive(Serialize)]
struct BootstrapRow {
    baseline: String,
    candidate: String,
    metric: &'static str,
    p_value: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config_hash: &'a str,
    seed: u64,
    format_version: u32,
    k: usize,
    runs: Vec<MetricReport>,
    bootstrap: Vec<BootstrapRow>,
}

/// Oracle entities per query, from the miner's entity-score file.
fn load_oracle_entities(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for record in load_entity_scores(path)? {
        if record.oracle {
            map.entry(record.query_id).or_default().push(record.text);
        }
    }
    Ok(map)
}

pub fn run(config: &Option<PathBuf>, overrides: &[String], runs: &[PathBuf]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let queries = load_query_set(&ctx.cfg)?;
    let norm = ctx.cfg.normalizer();
    let map = PassageMap::new(&passages);

    let run_paths: Vec<PathBuf> = if runs.is_empty() {
        vec![ctx.cfg.require_input("run_file")?]
    } else {
        for path in runs {
            if !path.exists() {
                return Err(EfrError::Config(format!(
                    "run file {} does not exist",
                    path.display()
                )));
            }
        }
        runs.to_vec()
    };

    let oracle_entities = match &ctx.cfg.entity_scores {
        Some(_) => Some(load_oracle_entities(&ctx.cfg.require_input("entity_scores")?)?),
        None => None,
    };

    let mut reports = Vec::with_capacity(run_paths.len());
    for path in &run_paths {
        let ranked: RankedIds = read_run(path)?
            .into_iter()
            .map(|(qid, hits)| (qid, hits.into_iter().map(|(id, _)| id).collect()))
            .collect();
        reports.push(evaluate_run(
            &file_stem(path),
            &ranked,
            &queries,
            &map,
            &norm,
            ctx.cfg.metric_k,
            oracle_entities.as_ref(),
        )?);
    }

    print!("{}", format_report_table(&reports));

    let mut bootstrap = Vec::new();
    if ctx.cfg.bootstrap > 0 && reports.len() > 1 {
        let baseline = &reports[0];
        let base_rr: Vec<f64> = baseline.per_query.iter().map(|r| r.reciprocal_rank).collect();
        for candidate in &reports[1..] {
            let cand_rr: Vec<f64> = candidate.per_query.iter().map(|r| r.reciprocal_rank).collect();
            let p_value =
                paired_bootstrap_pvalue(&base_rr, &cand_rr, ctx.cfg.bootstrap, ctx.cfg.seed)?;
            println!(
                "paired bootstrap MRR@{} ({} vs {}): p = {:.4} over {} resamples",
                ctx.cfg.metric_k, candidate.name, baseline.name, p_value, ctx.cfg.bootstrap
            );
            bootstrap.push(BootstrapRow {
                baseline: baseline.name.clone(),
                candidate: candidate.name.clone(),
                metric: "mrr",
                p_value,
                iterations: ctx.cfg.bootstrap,
            });
        }
    }

    if let Some(report_path) = &ctx.cfg.report_file {
        let report = EvalReport {
            config_hash: &ctx.meta.config_hash,
            seed: ctx.meta.seed,
            format_version: 1,
            k: ctx.cfg.metric_k,
            runs: reports,
            bootstrap,
        };
        let body = serde_json::to_string_pretty(&report)
            .map_err(|e| EfrError::Invalid(format!("report serialization: {e}")))?;
        std::fs::write(report_path, body + "\n").map_err(|e| EfrError::io(report_path, e))?;
        println!("report: {}", report_path.display());
    }
    Ok(())
}
