//! Command-line entry point: corpus generation and ingestion, training,
//! iterative enrichment, and metric evaluation.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sg_enrich_core::config::RunConfig;
use sg_enrich_core::corpus::{
    corpus_stats, load_corpus, save_corpus, synthetic_corpus, vg::ingest_vg, CorpusConfig,
    SceneGrammar, Split,
};
use sg_enrich_core::enricher::{enrich_iterative, EnrichOptions};
use sg_enrich_core::eval::{evaluate, EvalConfig};
use sg_enrich_core::graph::{
    deserialize_graph, deserialize_vocab, render_sentences, serialize_graph, to_dot,
};
use sg_enrich_core::rng::Rng;
use sg_enrich_core::surrogate::{SurrogateConfig, Surrogates};
use sg_enrich_core::train::{load_model_for_inference, make_example, train, TrainError};

#[derive(Parser)]
#[command(name = "sg-enrich", version, about = "Scene-graph enrichment engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene-graph corpus from a template grammar.
    SynthCorpus {
        /// Template set; `default` is 4 templates / 20 objects / 10 predicates.
        #[arg(long, default_value = "default")]
        template_set: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train/val/test fractions, comma separated.
        #[arg(long, default_value = "0.85,0.075,0.075")]
        splits: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest scene graphs in the public VG JSON layout.
    IngestVg {
        #[arg(long)]
        objects: PathBuf,
        #[arg(long)]
        relationships: PathBuf,
        #[arg(long, default_value_t = 2000)]
        min_obj: usize,
        #[arg(long, default_value_t = 500)]
        min_pred: usize,
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "0.85,0.075,0.075")]
        splits: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the enricher on a corpus directory.
    Train {
        /// Config file (key = value with sections); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inline overrides like `generator.embed_dim=32`; applied last.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from <out>/latest.ckpt when present.
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Iteratively enrich a scene graph with a trained model.
    Enrich {
        #[arg(long)]
        model: PathBuf,
        /// Vocabulary JSON the model was trained with.
        #[arg(long)]
        vocab: PathBuf,
        /// Input scene-graph JSON.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 8)]
        max_edges: usize,
        #[arg(long, default_value_t = false)]
        forced_novel: bool,
        /// 0 = argmax decoding; otherwise softmax temperature.
        #[arg(long, default_value_t = 0.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute enrichment metrics for a trained model on a corpus split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "val")]
        split: Split,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 8)]
        max_edges: usize,
        /// Write the JSON report here in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err("expected train|val|test".into()),
    }
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn data(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 3,
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: 4,
        }
    }
}

macro_rules! data_error_from {
    ($($t:ty),* $(,)?) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e.to_string())
            }
        }
    )*};
}

data_error_from!(
    std::io::Error,
    sg_enrich_core::graph::GraphError,
    sg_enrich_core::corpus::CorpusError,
    sg_enrich_core::config::ConfigError,
    sg_enrich_core::checkpoint::CheckpointError,
    sg_enrich_core::enricher::EnrichError,
);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFinite { .. } | TrainError::Tensor(_) => {
                CliError::numeric(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::data(format!("bad split fractions: {s}")))?;
    if parts.len() != 3 {
        return Err(CliError::data(format!("need three fractions, got {s}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn main() -> ExitCode {
    // SG_ENRICH_THREADS caps kernel parallelism; matmul reads its own var.
    if let Ok(threads) = std::env::var("SG_ENRICH_THREADS") {
        std::env::set_var("MATMUL_NUM_THREADS", threads);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthCorpus {
            template_set,
            count,
            seed,
            splits,
            out,
        } => {
            let grammar = match template_set.as_str() {
                "default" => SceneGrammar::default_desk(),
                other => return Err(CliError::data(format!("unknown template set: {other}"))),
            };
            if count == 0 {
                return Err(CliError::data("count must be >= 1"));
            }
            let fractions = parse_fractions(&splits)?;
            let corpus = synthetic_corpus(&grammar, count, fractions, seed)?;
            save_corpus(&out, &corpus)?;
            println!("wrote {} graphs to {}", corpus.graphs.len(), out.display());
            println!("{}", corpus_stats(&corpus.graphs, &corpus.vocab));
            Ok(())
        }
        Command::IngestVg {
            objects,
            relationships,
            min_obj,
            min_pred,
            max_nodes,
            seed,
            splits,
            out,
        } => {
            let config = CorpusConfig {
                min_object_occurrences: min_obj,
                min_predicate_occurrences: min_pred,
                split_fractions: parse_fractions(&splits)?,
                max_nodes,
                seed,
            };
            let (corpus, report) = ingest_vg(&objects, &relationships, &config)?;
            save_corpus(&out, &corpus)?;
            println!(
                "images {} -> graphs {} ({} object categories, {} predicate categories)",
                report.images,
                report.graphs_kept,
                corpus.vocab.real_object_count(),
                corpus.vocab.real_predicate_count()
            );
            println!(
                "skipped: {} dangling endpoints, {} self-loops, {} duplicate triplets, {} unnamed objects, {} too-small graphs",
                report.dangling_endpoints,
                report.self_loops_dropped,
                report.duplicate_triplets_dropped,
                report.unnamed_objects,
                report.small_graphs_dropped
            );
            let count_of = |split| corpus.splits.iter().filter(|&&s| s == split).count();
            println!(
                "splits: {} train / {} val / {} test",
                count_of(Split::Train),
                count_of(Split::Val),
                count_of(Split::Test)
            );
            Ok(())
        }
        Command::Train {
            config,
            set,
            corpus,
            out,
            resume,
        } => {
            let mut run_config = match config {
                Some(path) => RunConfig::parse(&fs::read_to_string(&path)?)?,
                None => RunConfig::default(),
            };
            for override_spec in &set {
                run_config.apply_override(override_spec)?;
            }
            run_config.validate()?;
            let corpus = load_corpus(&corpus)?;
            let surrogate_cfg = SurrogateConfig::default();
            let outcome = train(&out, &corpus, &run_config, Some(&surrogate_cfg), resume)?;
            println!(
                "trained {} steps (early stop: {}), best validation metric sum {:.4}",
                outcome.steps_run, outcome.early_stopped, outcome.best_metric_sum
            );
            if let Some(report) = &outcome.final_report {
                println!("{}", report.to_table());
            }
            println!("run artifacts in {}", out.display());
            Ok(())
        }
        Command::Enrich {
            model,
            vocab,
            input,
            steps,
            threshold,
            max_edges,
            forced_novel,
            temperature,
            seed,
            out,
        } => {
            let vocab = deserialize_vocab(&fs::read_to_string(&vocab)?)?;
            let (_config, _params, generator) = load_model_for_inference(&model, &vocab)?;
            let graph = deserialize_graph(&fs::read_to_string(&input)?, &vocab)?;
            graph.check(&vocab)?;
            let options = EnrichOptions {
                threshold,
                max_edges,
                forced_novel,
                temperature,
                seed,
            };
            options.validate()?;
            let trace = enrich_iterative(&generator, &vocab, &graph, steps, &options)?;
            fs::create_dir_all(&out)?;
            let original = graph.node_count();
            for (k, step) in trace.iter().enumerate() {
                let idx = k + 1;
                let enriching: Vec<usize> = (original..step.enriched.node_count()).collect();
                fs::write(
                    out.join(format!("enriched_{idx}.json")),
                    serialize_graph(&step.enriched, &vocab),
                )?;
                fs::write(
                    out.join(format!("enriched_{idx}.dot")),
                    to_dot(&step.enriched, &vocab, Some(&enriching)),
                )?;
            }
            let last = &trace.last().expect("at least one step").enriched;
            let sentences = render_sentences(last, &vocab).join("\n");
            fs::write(out.join("sentences.txt"), format!("{sentences}\n"))?;
            println!(
                "enriched {} -> {} nodes over {} steps; outputs in {}",
                original,
                last.node_count(),
                steps,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            model,
            corpus,
            split,
            threshold,
            max_edges,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let (config, _params, generator) = load_model_for_inference(&model, &corpus.vocab)?;
            let graphs = corpus.of_split(split);
            if graphs.is_empty() {
                return Err(CliError::data(format!("split {split:?} is empty")));
            }
            let mut rng = Rng::labeled(config.seed, "eval-elim");
            let mut examples = Vec::new();
            for g in graphs {
                if g.node_count() >= 2 {
                    examples.push(make_example(g, &corpus.vocab, &mut rng)?);
                }
            }
            let eval_config = EvalConfig {
                threshold,
                max_edges,
                batch_size: 32,
            };
            let needs_stage23 = config.w_scene > 0.0 || config.w_align > 0.0;
            let surrogates = needs_stage23
                .then(|| Surrogates::new(&SurrogateConfig::default(), &corpus.vocab));
            let report = evaluate(
                &generator,
                &corpus.vocab,
                &examples,
                surrogates.as_ref(),
                &eval_config,
            )?;
            println!("{}", report.to_table());
            let json = report.to_json();
            if let Some(path) = out {
                fs::write(&path, &json)?;
                println!("report written to {}", path.display());
            } else {
                println!("{json}");
            }
            Ok(())
        }
    }
}
