//! `efr index`: build and persist the sparse inverted index and the dense
//! embedding index.

use std::path::PathBuf;

use efr_core::encoder::write_embeddings;
use efr_core::error::Result;
use efr_core::sparse::{build_index, save_index};

use super::{load_corpus_checked, resolve_dense_index, resolve_model, Ctx};

pub fn run(config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ctx = Ctx::new(config, overrides)?;
    let passages = load_corpus_checked(&ctx.cfg)?;
    let sparse_path = ctx.cfg.require_output("sparse_index")?;
    let dense_path = ctx.cfg.require_output("dense_index")?;

    let index = build_index(&passages, ctx.cfg.bm25_params(), ctx.cfg.stopwords)?;
    save_index(&index, &sparse_path, &ctx.meta)?;

    let model = resolve_model(&ctx.cfg, false)?;
    let dense = resolve_dense_index(&ctx.cfg, &model, &passages)?;
    write_embeddings(&dense_path, dense.dim(), dense.iter())?;

    println!(
        "indexed {} passages: avg length {:.2}, vocabulary {} terms, dense dim {}",
        index.doc_count(),
        index.avg_doc_length(),
        index.vocab_size(),
        dense.dim()
    );
    println!("sparse index: {}", sparse_path.display());
    println!("dense index:  {}", dense_path.display());
    Ok(())
}
