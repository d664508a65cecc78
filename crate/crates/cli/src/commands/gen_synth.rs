//! `efr gen-synth`: write the seeded synthetic corpus and query set.

use std::path::PathBuf;

use efr_core::artifact::write_meta_sidecar;
use efr_core::corpus::{save_corpus, save_queries};
use efr_core::error::Result;
use efr_core::synth::generate;

use super::Ctx;

pub fn run(config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let corpus_path = ctx.cfg.require_output("corpus")?;
    let queries_path = ctx.cfg.require_output("queries")?;

    let (passages, queries) = generate(&ctx.cfg.synth_config())?;
    save_corpus(&corpus_path, &passages)?;
    write_meta_sidecar(&corpus_path, &ctx.meta, 1)?;
    save_queries(&queries_path, &queries)?;
    write_meta_sidecar(&queries_path, &ctx.meta, 1)?;

    println!(
        "wrote {} passages to {} and {} queries to {}",
        passages.len(),
        corpus_path.display(),
        queries.len(),
        queries_path.display()
    );
    Ok(())
}
