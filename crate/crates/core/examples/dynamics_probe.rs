//! Full desk-scale dynamics run: default config with a reduced generator
//! embed dim, 5k steps, periodic validation metrics.

use std::time::Instant;

use sg_enrich_core::config::RunConfig;
use sg_enrich_core::corpus::{synthetic_corpus, SceneGrammar, Split};
use sg_enrich_core::tensor::Real;
use sg_enrich_core::train::Trainer;

fn main() {
    let embed: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(32);
    let steps: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5000);
    let corpus = synthetic_corpus(
        &SceneGrammar::default_desk(),
        2400,
        (10.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0),
        7,
    )
    .unwrap();
    let mut config = RunConfig::default();
    config.g_embed_dim = embed;
    config.max_steps = steps;
    let mut t: Trainer<Real> = Trainer::new(&config, &corpus, None).unwrap();
    let start = Instant::now();
    while t.step < config.max_steps {
        let stats = t.generator_step(&corpus).unwrap();
        if config.w_gan > 0.0 && t.step % config.d_update_every == 0 {
            let d = t.discriminator_step(&corpus).unwrap();
            println!("step {}: d_loss {d:.4}", t.step);
        }
        if t.step % 250 == 0 {
            let r = t.evaluate_split(&corpus, Split::Val).unwrap();
            println!(
                "step {} ({:.0}s): total {:.3} obj {:.3} edges {:.3} pred {:.3} scene {:.3} | objs {:.3} a_pred {:.3} a_edge {:.3} na_edge {:.3} scene {:.3}",
                t.step,
                start.elapsed().as_secs_f64(),
                stats.total,
                stats.parts["obj"],
                stats.parts["edges"],
                stats.parts["pred_avail"],
                stats.parts["scene"],
                r.objs_acc.value().unwrap_or(0.0),
                r.avail_preds_acc.value().unwrap_or(0.0),
                r.avail_edges_acc.value().unwrap_or(0.0),
                r.not_avail_edges_acc.value().unwrap_or(0.0),
                r.scene_class_acc.value().unwrap_or(0.0),
            );
        }
    }
    println!("done in {:.1} min", start.elapsed().as_secs_f64() / 60.0);
}
