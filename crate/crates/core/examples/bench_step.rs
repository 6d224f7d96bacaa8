//! Rough per-step timing for the desk-scale training profile.

use std::time::Instant;

use sg_enrich_core::config::RunConfig;
use sg_enrich_core::corpus::{synthetic_corpus, SceneGrammar};
use sg_enrich_core::tensor::Real;
use sg_enrich_core::train::Trainer;

fn main() {
    let corpus = synthetic_corpus(
        &SceneGrammar::default_desk(),
        2400,
        (10.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0),
        7,
    )
    .unwrap();
    let train_n = corpus
        .splits
        .iter()
        .filter(|&&s| s == sg_enrich_core::corpus::Split::Train)
        .count();
    println!("corpus: {} graphs, {} train", corpus.graphs.len(), train_n);
    for embed in [16usize, 32, 64] {
        let mut config = RunConfig::default();
        config.g_embed_dim = embed;
        let mut t: Trainer<Real> = Trainer::new(&config, &corpus, None).unwrap();
        // warmup
        t.generator_step(&corpus).unwrap();
        let n = 10;
        let start = Instant::now();
        for _ in 0..n {
            t.generator_step(&corpus).unwrap();
        }
        let per = start.elapsed().as_secs_f64() / n as f64;
        println!(
            "g_embed {embed}: {per:.3} s/step -> 5k steps ~ {:.1} min",
            per * 5000.0 / 60.0
        );
        let ev = Instant::now();
        let report = t
            .evaluate_split(&corpus, sg_enrich_core::corpus::Split::Val)
            .unwrap();
        println!(
            "  eval: {:.2} s over {} val examples",
            ev.elapsed().as_secs_f64(),
            report.objs_acc.support
        );
    }
}
