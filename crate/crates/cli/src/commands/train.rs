//! `efr train`: fit the dual-tower scorer on mined instances.

use std::path::PathBuf;
use std::time::Instant;

use efr_core::artifact::write_meta_sidecar;
use efr_core::error::Result;
use efr_core::mining::load_training_set;
use efr_core::trainer::{resolve_instances, save_checkpoint, save_loss_history, train};
use efr_core::EncoderModel;

use super::{load_corpus_checked, load_query_set, Ctx};

pub fn run(config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let queries = load_query_set(&ctx.cfg)?;
    let trainset_path = ctx.cfg.require_input("training_set")?;
    let checkpoint_path = ctx.cfg.require_output("checkpoint")?;

    let instances = load_training_set(&trainset_path)?;
    let resolved = resolve_instances(&instances, &queries, &passages)?;

    let mut model = EncoderModel::init(ctx.cfg.model_config(), ctx.cfg.seed);
    let started = Instant::now();
    let outcome = train(&mut model, &resolved, &ctx.cfg.train_config())?;
    let elapsed = started.elapsed();

    save_checkpoint(&model, &checkpoint_path, &ctx.meta, &ctx.cfg.canonical_string())?;
    if let Some(history_path) = &ctx.cfg.loss_history {
        save_loss_history(history_path, &outcome.history)?;
        write_meta_sidecar(history_path, &ctx.meta, 1)?;
    }

    let last = outcome.history.last();
    println!(
        "trained on {} instances for {} steps in {:.1}s",
        resolved.len(),
        outcome.history.len(),
        elapsed.as_secs_f64()
    );
    if let Some(record) = last {
        println!(
            "final step losses: qp {:.4}, qpe {:.4}, ent {:.4}",
            record.l_qp, record.l_qpe, record.l_ent
        );
    }
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}
