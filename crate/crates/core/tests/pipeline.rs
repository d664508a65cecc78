//! End-to-end library pipeline on a small synthetic dataset: generate,
//! index, mine, train, retrieve, rerank, evaluate.

use std::collections::BTreeMap;

use efr_core::corpus::PassageMap;
use efr_core::encoder::ModelConfig;
use efr_core::eval::{evaluate_run, RankedIds};
use efr_core::mining::mine_training_set;
use efr_core::scorer::{mips_topk, rerank, DenseIndex, QueryScorer};
use efr_core::sparse::{build_index, Bm25Params};
use efr_core::synth::{generate, SynthConfig};
use efr_core::text::Normalizer;
use efr_core::trainer::{resolve_instances, train, OptimizerKind, TrainConfig};
use efr_core::{EncoderModel, Passage, QueryExample};

fn retrieve_all(
    model: &EncoderModel,
    dense: &DenseIndex,
    queries: &[QueryExample],
    depth: usize,
    lambda: f64,
) -> RankedIds {
    let mut out = RankedIds::new();
    for query in queries {
        let f_q = model.encode_query(query);
        let candidates = mips_topk(dense, &f_q, depth).unwrap();
        let scorer = QueryScorer::new(model, query);
        let reranked = rerank(&scorer, &candidates, dense, lambda).unwrap();
        out.insert(
            query.id.clone(),
            reranked.into_iter().map(|(id, _)| id).collect(),
        );
    }
    out
}

fn train_variant(
    passages: &[Passage],
    queries: &[QueryExample],
    instances: &[efr_core::TrainingInstance],
    seed: u64,
    entity_losses: bool,
) -> EncoderModel {
    let resolved = resolve_instances(instances, queries, passages).unwrap();
    let model_cfg = ModelConfig {
        hash_dim: 4096,
        dim: 32,
        epsilon: 1e-5,
    };
    let mut model = EncoderModel::init(model_cfg, seed);
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        epochs: 4,
        batch_size: 8,
        warmup_fraction: 0.1,
        w_qp: 1.0,
        w_qpe: if entity_losses { 1.0 } else { 0.0 },
        w_ent: if entity_losses { 1.0 } else { 0.0 },
        seed,
        lambda: 1.0,
        optimizer: OptimizerKind::Adaptive,
    };
    train(&mut model, &resolved, &cfg).unwrap();
    model
}

#[test]
fn full_pipeline_entity_focus_beats_backbone() {
    let synth = SynthConfig {
        topics: 12,
        variants: 3,
        confusers: 6,
        fillers: 200,
        seed: 5,
    };
    let (passages, queries) = generate(&synth).unwrap();
    let norm = Normalizer::default();
    let map = PassageMap::new(&passages);
    let index = build_index(&passages, Bm25Params::default(), false).unwrap();

    let mining_cfg = efr_core::MiningConfig {
        seed: 5,
        ..efr_core::MiningConfig::default()
    };
    let mined = mine_training_set(&index, &map, &norm, &queries, &mining_cfg).unwrap();
    assert_eq!(mined.stats.dropped_no_positive, 0);
    // Every query mines its planted critical entity as oracle.
    assert_eq!(
        mined.stats.oracle_entities, 36,
        "one oracle entity per query expected"
    );
    // 1 positive cycled over 8 negatives (6 confusers + 2 sibling golds).
    assert_eq!(mined.stats.instances, 36 * 8);

    let full = train_variant(&passages, &queries, &mined.instances, 5, true);
    let backbone = train_variant(&passages, &queries, &mined.instances, 5, false);

    let dense_full = DenseIndex::from_model(&full, &passages).unwrap();
    let dense_backbone = DenseIndex::from_model(&backbone, &passages).unwrap();

    let run_full = retrieve_all(&full, &dense_full, &queries, 80, 1.0);
    let run_backbone = retrieve_all(&backbone, &dense_backbone, &queries, 80, 0.0);

    let report_full =
        evaluate_run("full", &run_full, &queries, &map, &norm, 5, None).unwrap();
    let report_backbone =
        evaluate_run("backbone", &run_backbone, &queries, &map, &norm, 5, None).unwrap();

    println!(
        "full MRR@5 = {:.4}, backbone MRR@5 = {:.4}",
        report_full.mrr_at_k, report_backbone.mrr_at_k
    );
    assert!(
        report_full.mrr_at_k >= report_backbone.mrr_at_k + 0.02,
        "expected entity focus to help: full {:.4} vs backbone {:.4}",
        report_full.mrr_at_k,
        report_backbone.mrr_at_k
    );
}

#[test]
fn rerank_with_lambda_zero_matches_plain_mips() {
    let synth = SynthConfig {
        topics: 4,
        variants: 2,
        confusers: 4,
        fillers: 60,
        seed: 11,
    };
    let (passages, queries) = generate(&synth).unwrap();
    let model = EncoderModel::init(
        ModelConfig {
            hash_dim: 2048,
            dim: 32,
            epsilon: 1e-5,
        },
        11,
    );
    let dense = DenseIndex::from_model(&model, &passages).unwrap();
    for query in &queries {
        let f_q = model.encode_query(query);
        let candidates = mips_topk(&dense, &f_q, 30).unwrap();
        let scorer = QueryScorer::new(&model, query);
        let reranked = rerank(&scorer, &candidates, &dense, 0.0).unwrap();
        let plain: Vec<&str> = candidates.iter().map(|(id, _)| id.as_str()).collect();
        let rr: Vec<&str> = reranked.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(plain, rr);
    }
}

#[test]
fn oracle_entity_recall_on_the_synthetic_set() {
    // With gold-perfect rankings every planted critical entity is visible in
    // the top passages.
    let synth = SynthConfig {
        topics: 5,
        variants: 2,
        confusers: 4,
        fillers: 50,
        seed: 3,
    };
    let (passages, queries) = generate(&synth).unwrap();
    let norm = Normalizer::default();
    let map = PassageMap::new(&passages);

    let mut run = RankedIds::new();
    let mut oracle = BTreeMap::new();
    for q in &queries {
        let gold_id = q.id.replace('q', "g");
        run.insert(q.id.clone(), vec![gold_id]);
        oracle.insert(q.id.clone(), vec![q.entities[0].text.clone()]);
    }
    let (recall, defined) =
        efr_core::eval::oracle_entity_recall_at_k(&run, &oracle, &map, &norm, 5).unwrap();
    assert!(defined);
    assert_eq!(recall, 1.0);
}
