//! Supervision construction and the adversarial training loop.
//!
//! Each step eliminates one random object per ground-truth graph, runs the
//! generator (object head, all-pairs edge scores, teacher-forced predicate
//! head), optionally pushes the soft enriched graph through the frozen
//! surrogates, and applies one Adam update to the generator only. Every
//! `update_every`-th step the discriminator pair gets one update of its own
//! against fresh real/enriched batches. The generator step binds critic
//! weights as constants (and vice versa), so the parameter partition holds
//! structurally. All per-step randomness is keyed by (run seed, step), which
//! makes runs bit-reproducible and resume exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::RunConfig;
use crate::corpus::{Corpus, Split};
use crate::critic::{score_batch, CriticError, CriticModel, LocalFocus, SoftGraph};
use crate::enricher::{
    mask_logits, obj_pass, pred_pass, score_edges, select_edges, special_object_mask,
    special_predicate_mask, EnrichError, EnricherModel,
};
use crate::eval::{evaluate, EvalConfig, MetricReport};
use crate::gcn::SoftRow;
use crate::graph::{GraphError, SceneGraph, Vocabulary};
use crate::losses::{
    loss_align, loss_edges, loss_gan_discriminator, loss_gan_generator, loss_obj,
    loss_predicates, loss_scene, total_loss, SceneMode,
};
use crate::rng::{stream, Rng};
use crate::surrogate::{SurrogateConfig, Surrogates};
use crate::tensor::ops;
use crate::tensor::{
    backward, clip_global_norm, Adam, Mode, ParamSet, Real, Scalar, Session, Tensor, TensorError,
};

pub const GRAD_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Enrich(#[from] EnrichError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("graph needs at least 2 nodes to eliminate one")]
    TooSmall,
    #[error("train split is empty")]
    NoTrainData,
    #[error("non-finite loss at step {step}; parts: {parts}")]
    NonFinite { step: u64, parts: String },
    #[error("checkpoint was written for a different vocabulary")]
    VocabMismatch,
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One supervised example built by random object elimination.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub gt_graph: SceneGraph,
    /// gt_graph with the eliminated node's category set to unknown_obj, its
    /// incident edges removed, and the full bidirectional unknown_pred set
    /// added between the unknown node and every other node.
    pub masked_graph: SceneGraph,
    pub eliminated_pos: usize,
    pub eliminated_category: usize,
    /// The eliminated node's original triplets, positions as in gt_graph.
    pub eliminated_triplets: Vec<(usize, usize, usize)>,
    /// Row-major n*n 0/1 subject-to-object matrix of gt_graph, diagonal 0.
    pub gt_adjacency: Vec<u8>,
}

/// Eliminate one uniformly random node. Deterministic given the rng state.
pub fn make_example(
    gt_graph: &SceneGraph,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<TrainingExample> {
    let n = gt_graph.node_count();
    if n < 2 {
        return Err(TrainError::TooSmall);
    }
    let victim = rng.below(n);
    let sp = vocab.specials();
    let mut masked = gt_graph.clone();
    masked.objects[victim] = sp.unknown_obj;
    let eliminated_triplets: Vec<_> = gt_graph
        .edges
        .iter()
        .copied()
        .filter(|&(s, _, o)| s == victim || o == victim)
        .collect();
    masked.edges.retain(|&(s, _, o)| s != victim && o != victim);
    for node in 0..n {
        if node != victim {
            masked.edges.push((victim, sp.unknown_pred, node));
            masked.edges.push((node, sp.unknown_pred, victim));
        }
    }
    let mut gt_adjacency = vec![0u8; n * n];
    for &(s, _, o) in &gt_graph.edges {
        gt_adjacency[s * n + o] = 1;
    }
    Ok(TrainingExample {
        gt_graph: gt_graph.clone(),
        masked_graph: masked,
        eliminated_pos: victim,
        eliminated_category: gt_graph.objects[victim],
        eliminated_triplets,
        gt_adjacency,
    })
}

/// The teacher-forced predicate-pass graph: ground-truth nodes and kept
/// edges, with the eliminated node's true edges as unknown_pred
/// placeholders. Returns (graph, per-placeholder ground-truth predicates);
/// placeholders sit at the tail of the edge list.
pub fn teacher_forced_graph(
    example: &TrainingExample,
    vocab: &Vocabulary,
) -> (SceneGraph, Vec<usize>) {
    let sp = vocab.specials();
    let victim = example.eliminated_pos;
    let mut g = example.gt_graph.clone();
    g.edges.retain(|&(s, _, o)| s != victim && o != victim);
    let mut targets = Vec::with_capacity(example.eliminated_triplets.len());
    for &(s, p, o) in &example.eliminated_triplets {
        g.edges.push((s, sp.unknown_pred, o));
        targets.push(p);
    }
    (g, targets)
}

/// Per-step scalar diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub total: f64,
    pub parts: BTreeMap<&'static str, f64>,
    pub d_loss: Option<f64>,
}

pub struct Trainer<S: Scalar> {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub gen_params: ParamSet<S>,
    pub critic_params: ParamSet<S>,
    pub generator: EnricherModel<S>,
    pub critic: CriticModel<S>,
    pub surrogates: Option<Surrogates<S>>,
    pub step: u64,
    gen_opt: Adam<S>,
    critic_opt: Adam<S>,
    train_idx: Vec<usize>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        config: &RunConfig,
        corpus: &Corpus,
        surrogate_cfg: Option<&SurrogateConfig>,
    ) -> Result<Self> {
        config.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let vocab = corpus.vocab.clone();
        let mut gen_params = ParamSet::new(stream(config.seed, "params/gen"));
        let generator = EnricherModel::new(
            &mut gen_params,
            &vocab,
            &config.enricher_config().map_err(|e| TrainError::Config(e.to_string()))?,
        )?;
        let mut critic_params = ParamSet::new(stream(config.seed, "params/critic"));
        let critic = CriticModel::new(
            &mut critic_params,
            &vocab,
            &config.critic_config().map_err(|e| TrainError::Config(e.to_string()))?,
        )?;
        let needs_stage23 = config.w_scene > 0.0 || config.w_align > 0.0;
        let surrogates = needs_stage23.then(|| {
            let cfg = surrogate_cfg.cloned().unwrap_or_default();
            Surrogates::new(&cfg, &vocab)
        });
        let train_idx: Vec<usize> = corpus
            .splits
            .iter()
            .enumerate()
            .filter(|(i, &s)| s == Split::Train && corpus.graphs[*i].node_count() >= 2)
            .map(|(i, _)| i)
            .collect();
        if train_idx.is_empty() {
            return Err(TrainError::NoTrainData);
        }
        Ok(Trainer {
            gen_opt: Adam::new(config.adam_config()),
            critic_opt: Adam::new(config.adam_config()),
            config: config.clone(),
            vocab,
            gen_params,
            critic_params,
            generator,
            critic,
            surrogates,
            step: 0,
            train_idx,
        })
    }

    fn sample_examples(&self, corpus: &Corpus, label: &str) -> Result<Vec<TrainingExample>> {
        let mut rng = Rng::new(stream(
            self.config.seed,
            &format!("{label}/{}", self.step),
        ));
        let mut out = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let gi = self.train_idx[rng.below(self.train_idx.len())];
            out.push(make_example(&corpus.graphs[gi], &self.vocab, &mut rng)?);
        }
        Ok(out)
    }

    /// One generator update. Critic weights participate as constants.
    pub fn generator_step(&mut self, corpus: &Corpus) -> Result<StepStats> {
        self.step += 1;
        let examples = self.sample_examples(corpus, "sample")?;
        let stats = self.generator_forward_backward(&examples)?;
        Ok(stats)
    }

    fn generator_forward_backward(&mut self, examples: &[TrainingExample]) -> Result<StepStats> {
        let w = self.config.loss_weights();
        let sess_gen = Session::new(Mode::Train, self.config.seed, self.step);
        let sess_critic = Session::frozen(Mode::Train, self.config.seed, self.step);
        let vocab = &self.vocab;
        let sp = vocab.specials();

        // Object head over the masked graphs.
        let masked: Vec<SceneGraph> = examples.iter().map(|e| e.masked_graph.clone()).collect();
        let pass = obj_pass(&self.generator, &sess_gen, &masked, vocab)?;
        let obj_mask = special_object_mask(vocab);
        let mut logit_rows = Vec::with_capacity(examples.len());
        for gi in 0..examples.len() {
            logit_rows.push(crate::enricher::object_logits(&pass, gi, &obj_mask));
        }
        let obj_logits = ops::concat_rows(&logit_rows);
        let targets: Vec<usize> = examples.iter().map(|e| e.eliminated_category).collect();
        let l_obj = loss_obj(&obj_logits, &targets);

        // All-pairs edge scores against the ground-truth adjacency.
        let mut per_graph = Vec::with_capacity(examples.len());
        let mut score_tensors = Vec::with_capacity(examples.len());
        for (gi, e) in examples.iter().enumerate() {
            let scores = score_edges(&self.generator, &sess_gen, &pass, gi);
            score_tensors.push(scores.clone());
            per_graph.push((scores, e.gt_adjacency.as_slice()));
        }
        let l_edges = loss_edges(
            &per_graph
                .iter()
                .map(|(t, a)| (t.clone(), *a))
                .collect::<Vec<_>>(),
        );

        // Predicate pass over teacher-forced (or model-selected) graphs.
        let needs_fake = w.gan > 0.0 || w.scene > 0.0 || w.align > 0.0;
        let mut tf_graphs = Vec::new();
        let mut tf_matched: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut tf_unmatched: Vec<Vec<usize>> = Vec::new();
        let mut tf_example: Vec<usize> = Vec::new();
        for (gi, e) in examples.iter().enumerate() {
            let (g, gt_preds, matched, unmatched) = if self.config.teacher_force {
                let (g, gt_preds) = teacher_forced_graph(e, vocab);
                let matched: Vec<(usize, usize)> =
                    gt_preds.iter().enumerate().map(|(i, &p)| (i, p)).collect();
                (g, gt_preds, matched, Vec::new())
            } else {
                // Model-selected enriching edges: restricted to the unknown
                // node's row and column, matched against the adjacency.
                let probs = crate::enricher::edge_probabilities(&score_tensors[gi]);
                let n = e.gt_graph.node_count();
                let selected = select_edges(&probs, n, e.eliminated_pos, 0.5, 8);
                let mut g = e.gt_graph.clone();
                let victim = e.eliminated_pos;
                g.edges.retain(|&(s, _, o)| s != victim && o != victim);
                let mut matched = Vec::new();
                let mut unmatched = Vec::new();
                let mut gt_preds = Vec::new();
                for (k, sel) in selected.iter().enumerate() {
                    g.edges.push((sel.subject, sp.unknown_pred, sel.object));
                    let gt = e
                        .eliminated_triplets
                        .iter()
                        .find(|&&(s, _, o)| s == sel.subject && o == sel.object);
                    match gt {
                        Some(&(_, p, _)) => {
                            matched.push((k, p));
                            gt_preds.push(p);
                        }
                        None => {
                            unmatched.push(k);
                            gt_preds.push(sp.none_pred);
                        }
                    }
                }
                (g, gt_preds, matched, unmatched)
            };
            let _ = gt_preds;
            if g.edges.iter().any(|&(_, p, _)| p == sp.unknown_pred) {
                tf_graphs.push(g);
                tf_matched.push(matched);
                tf_unmatched.push(unmatched);
                tf_example.push(gi);
            }
        }

        let mut l_pred_avail = Tensor::scalar(S::zero());
        let mut l_pred_not_avail = Tensor::scalar(S::zero());
        let mut fake_items: Vec<(SoftGraph<S>, LocalFocus)> = Vec::new();
        let mut soft_obj_dists: Vec<Option<Tensor<S>>> = vec![None; examples.len()];
        if !tf_graphs.is_empty() {
            // The training target mask keeps none_pred available; unknown and
            // in_image can never be targets.
            let train_pred_mask: Vec<usize> = vec![sp.unknown_pred, sp.in_image];
            let (ppass, placeholder_rows) =
                pred_pass(&self.generator, &sess_gen, &tf_graphs, vocab, &[])?;
            let head = ppass.out.head_logits.as_ref().expect("predicate head");
            let mut matched_all: Vec<(usize, usize)> = Vec::new();
            let mut unmatched_all: Vec<usize> = Vec::new();
            let mut gathered_rows: Vec<usize> = Vec::new();
            let mut local_of: Vec<Vec<usize>> = Vec::new();
            for (ti, rows) in placeholder_rows.iter().enumerate() {
                let base = gathered_rows.len();
                local_of.push((base..base + rows.len()).collect());
                gathered_rows.extend_from_slice(rows);
                for &(k, p) in &tf_matched[ti] {
                    matched_all.push((base + k, p));
                }
                for &k in &tf_unmatched[ti] {
                    unmatched_all.push(base + k);
                }
            }
            let pred_logits = mask_logits(
                &ops::gather_rows(head, &gathered_rows),
                &train_pred_mask,
            );
            let (avail, not_avail) =
                loss_predicates(&pred_logits, &matched_all, &unmatched_all, sp.none_pred);
            l_pred_avail = avail;
            l_pred_not_avail = not_avail;

            // Assemble the soft enriched graphs for the critic and the
            // surrogates: predicted object distribution at the eliminated
            // node, predicted predicate distributions on the placeholders.
            if needs_fake {
                let pred_probs = ops::softmax_rows(&mask_logits(
                    &ops::gather_rows(head, &gathered_rows),
                    &special_predicate_mask(vocab, true),
                ));
                for (ti, &gi) in tf_example.iter().enumerate() {
                    let e = &examples[gi];
                    let obj_dist = ops::softmax_rows(&logit_rows[gi]);
                    soft_obj_dists[gi] = Some(obj_dist.clone());
                    let g = &tf_graphs[ti];
                    let placeholder_base = g.edge_count() - local_of[ti].len();
                    let edge_soft: Vec<SoftRow<S>> = local_of[ti]
                        .iter()
                        .enumerate()
                        .map(|(k, &row)| {
                            (placeholder_base + k, ops::gather_rows(&pred_probs, &[row]))
                        })
                        .collect();
                    fake_items.push((
                        SoftGraph {
                            graph: g.clone(),
                            node_soft: vec![(e.eliminated_pos, obj_dist)],
                            edge_soft,
                        },
                        LocalFocus::Enriching(vec![e.eliminated_pos]),
                    ));
                }
            }
        }

        // Adversarial term: non-saturating by default, through the frozen
        // critic.
        let l_gan = if w.gan > 0.0 && !fake_items.is_empty() {
            let mut rng = Rng::new(stream(self.config.seed, &format!("gloc/{}", self.step)));
            let fake_scores = score_batch(&self.critic, &sess_critic, vocab, &fake_items, &mut rng)?;
            Some(loss_gan_generator(&fake_scores, self.config.gan_saturating))
        } else {
            None
        };

        // Stage 2/3: synthesize both images, compare characterizer views,
        // align the input description with the enriched image.
        let (l_scene, l_align) = if (w.scene > 0.0 || w.align > 0.0) && !tf_graphs.is_empty() {
            let surro = self.surrogates.as_ref().expect("surrogates built");
            let mut ref_rows = Vec::new();
            let mut enr_rows = Vec::new();
            let mut graph_feats = Vec::new();
            let mut image_feats = Vec::new();
            for (ti, &gi) in tf_example.iter().enumerate() {
                let e = &examples[gi];
                let image_ref = surro.synth.synth(&e.gt_graph.objects, &[]);
                let obj_dist = soft_obj_dists[gi].clone().expect("soft dist built");
                let image_enr = surro
                    .synth
                    .synth(&tf_graphs[ti].objects, &[(e.eliminated_pos, obj_dist)]);
                if w.scene > 0.0 {
                    let fr = surro.characterizer.features(&image_ref);
                    let fe = surro.characterizer.features(&image_enr);
                    let pick = |f: crate::surrogate::FeatureViews<S>| match self.config.scene_mode {
                        SceneMode::LogitL1 | SceneMode::LogitL2 | SceneMode::LogitCe => f.logits,
                        SceneMode::HiddenL1 | SceneMode::HiddenL2 => f.hidden,
                        SceneMode::HpooledL1 | SceneMode::HpooledL2 => f.pooled,
                    };
                    ref_rows.push(pick(fr));
                    enr_rows.push(pick(fe));
                }
                if w.align > 0.0 {
                    // The description seen by the aligner is the input
                    // content: the ground truth minus the eliminated node.
                    let keep: Vec<usize> = (0..e.gt_graph.node_count())
                        .filter(|&i| i != e.eliminated_pos)
                        .collect();
                    let input_view = e.gt_graph.induced_subgraph(&keep);
                    graph_feats.push(surro.aligner.encode_graph(&input_view, vocab));
                    image_feats.push(surro.aligner.encode_image(&image_enr));
                }
            }
            let l_scene = (w.scene > 0.0).then(|| {
                loss_scene(
                    &ops::concat_rows(&ref_rows),
                    &ops::concat_rows(&enr_rows),
                    self.config.scene_mode,
                )
            });
            let l_align = (w.align > 0.0)
                .then(|| loss_align(&ops::concat_rows(&graph_feats), &ops::concat_rows(&image_feats)));
            (l_scene, l_align)
        } else {
            (None, None)
        };

        let parts: Vec<(f64, Option<Tensor<S>>)> = vec![
            (w.obj, Some(l_obj.clone())),
            (w.edges, Some(l_edges.clone())),
            (w.gan, l_gan.clone()),
            (w.pred_avail, Some(l_pred_avail.clone())),
            (w.pred_not_avail, Some(l_pred_not_avail.clone())),
            (w.scene, l_scene.clone()),
            (w.align, l_align.clone()),
        ];
        let total = total_loss(&parts);

        let mut stats = StepStats {
            total: total.item().as_f64(),
            ..Default::default()
        };
        stats.parts.insert("obj", l_obj.item().as_f64());
        stats.parts.insert("edges", l_edges.item().as_f64());
        stats
            .parts
            .insert("gan_g", l_gan.map(|t| t.item().as_f64()).unwrap_or(0.0));
        stats
            .parts
            .insert("pred_avail", l_pred_avail.item().as_f64());
        stats
            .parts
            .insert("pred_not_avail", l_pred_not_avail.item().as_f64());
        stats
            .parts
            .insert("scene", l_scene.map(|t| t.item().as_f64()).unwrap_or(0.0));
        stats
            .parts
            .insert("align", l_align.map(|t| t.item().as_f64()).unwrap_or(0.0));
        if !stats.total.is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                parts: format!("{:?}", stats.parts),
            });
        }

        backward(&total)?;
        let mut grads = sess_gen.grads_for(&self.gen_params);
        clip_global_norm(&mut grads, GRAD_CLIP_NORM);
        self.gen_opt.step(&grads)?;
        Ok(stats)
    }

    /// One discriminator update against fresh real and enriched batches.
    /// Generator weights participate as constants in eval mode.
    pub fn discriminator_step(&mut self, corpus: &Corpus) -> Result<f64> {
        let examples = self.sample_examples(corpus, "dsample")?;
        let sess_gen = Session::frozen(Mode::Eval, self.config.seed, self.step);
        let sess_critic = Session::new(Mode::Train, self.config.seed, self.step);
        let vocab = &self.vocab;
        let sp = vocab.specials();

        let masked: Vec<SceneGraph> = examples.iter().map(|e| e.masked_graph.clone()).collect();
        let pass = obj_pass(&self.generator, &sess_gen, &masked, vocab)?;
        let obj_mask = special_object_mask(vocab);

        let mut tf_graphs = Vec::new();
        let mut counts = Vec::new();
        for e in examples.iter() {
            let (g, gt_preds) = teacher_forced_graph(e, vocab);
            counts.push(gt_preds.len());
            tf_graphs.push(g);
        }
        let with_placeholders: Vec<usize> = (0..examples.len())
            .filter(|&i| counts[i] > 0)
            .collect();

        let mut fake_items: Vec<(SoftGraph<S>, LocalFocus)> = Vec::new();
        if !with_placeholders.is_empty() {
            let subset: Vec<SceneGraph> = with_placeholders
                .iter()
                .map(|&i| tf_graphs[i].clone())
                .collect();
            let (ppass, placeholder_rows) =
                pred_pass(&self.generator, &sess_gen, &subset, vocab, &[])?;
            let head = ppass.out.head_logits.as_ref().expect("predicate head");
            for (k, &gi) in with_placeholders.iter().enumerate() {
                let e = &examples[gi];
                let obj_dist =
                    ops::softmax_rows(&crate::enricher::object_logits(&pass, gi, &obj_mask));
                let rows = &placeholder_rows[k];
                let pred_probs = ops::softmax_rows(&mask_logits(
                    &ops::gather_rows(head, rows),
                    &special_predicate_mask(vocab, true),
                ));
                let g = &tf_graphs[gi];
                let base = g.edge_count() - rows.len();
                let edge_soft: Vec<SoftRow<S>> = (0..rows.len())
                    .map(|j| (base + j, ops::gather_rows(&pred_probs, &[j])))
                    .collect();
                fake_items.push((
                    SoftGraph {
                        graph: g.clone(),
                        node_soft: vec![(e.eliminated_pos, obj_dist)],
                        edge_soft,
                    },
                    LocalFocus::Enriching(vec![e.eliminated_pos]),
                ));
            }
        }
        let real_items: Vec<(SoftGraph<S>, LocalFocus)> = examples
            .iter()
            .map(|e| (SoftGraph::hard(e.gt_graph.clone()), LocalFocus::Sampled))
            .collect();
        let _ = sp;

        let mut rng = Rng::new(stream(self.config.seed, &format!("dloc/{}", self.step)));
        let real_scores = score_batch(&self.critic, &sess_critic, vocab, &real_items, &mut rng)?;
        if fake_items.is_empty() {
            return Ok(f64::NAN);
        }
        let fake_scores = score_batch(&self.critic, &sess_critic, vocab, &fake_items, &mut rng)?;
        let d_loss = loss_gan_discriminator(&real_scores, &fake_scores);
        let out = d_loss.item().as_f64();
        backward(&d_loss)?;
        let mut grads = sess_critic.grads_for(&self.critic_params);
        clip_global_norm(&mut grads, GRAD_CLIP_NORM);
        self.critic_opt.step(&grads)?;
        Ok(out)
    }

    /// Metric report over a corpus split in eval mode.
    pub fn evaluate_split(&self, corpus: &Corpus, split: Split) -> Result<MetricReport> {
        let graphs = corpus.of_split(split);
        let mut rng = Rng::new(stream(self.config.seed, "eval-elim"));
        let mut examples = Vec::new();
        for g in graphs {
            if g.node_count() >= 2 {
                examples.push(make_example(g, &self.vocab, &mut rng)?);
            }
        }
        let report = evaluate(
            &self.generator,
            &self.vocab,
            &examples,
            self.surrogates.as_ref(),
            &EvalConfig::default(),
        )?;
        Ok(report)
    }

    /// Validation objective for early stopping: the sum of present
    /// accuracies (object, available predicates, both edge metrics, plus
    /// scene class when stage 2/3 runs).
    pub fn metric_sum(report: &MetricReport) -> f64 {
        report.objs_acc.value().unwrap_or(0.0)
            + report.avail_preds_acc.value().unwrap_or(0.0)
            + report.avail_edges_acc.value().unwrap_or(0.0)
            + report.not_avail_edges_acc.value().unwrap_or(0.0)
            + report.scene_class_acc.value().unwrap_or(0.0)
    }

    // -- checkpointing --------------------------------------------------

    pub fn save_checkpoint(&self, path: &Path, corpus_hash: u64) -> Result<()> {
        let meta = serde_json::json!({
            "step": self.step,
            "vocab_hash": self.vocab.content_hash(),
            "corpus_hash": corpus_hash,
            "config": self.config.emit(),
            "surrogate": self.surrogates.as_ref().map(|s| s.config.clone()),
            "gen_opt_t": self.gen_opt.timestep(),
            "critic_opt_t": self.critic_opt.timestep(),
        });
        let mut ck = Checkpoint::new(meta);
        for p in self.gen_params.iter().chain(self.critic_params.iter()) {
            ck.push(p.name(), p.shape(), &p.values());
        }
        for (prefix, opt) in [("gen", &self.gen_opt), ("critic", &self.critic_opt)] {
            for (name, m, v) in opt.export_state() {
                ck.push(&format!("optim.{prefix}.m.{name}"), &[m.len()], &m);
                ck.push(&format!("optim.{prefix}.v.{name}"), &[v.len()], &v);
            }
        }
        ck.save(path)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let ck = Checkpoint::load(path)?;
        let vocab_hash = ck.meta["vocab_hash"].as_u64().unwrap_or(0);
        if vocab_hash != self.vocab.content_hash() {
            return Err(TrainError::VocabMismatch);
        }
        self.step = ck.meta["step"].as_u64().unwrap_or(0);
        for p in self.gen_params.iter().chain(self.critic_params.iter()) {
            let (_, vals) = ck.get(p.name())?;
            p.set_values(&vals.iter().map(|&v| S::from_f32(v)).collect::<Vec<S>>());
        }
        for (prefix, opt, t_key) in [
            ("gen", &mut self.gen_opt, "gen_opt_t"),
            ("critic", &mut self.critic_opt, "critic_opt_t"),
        ] {
            let mut slots = Vec::new();
            let names: Vec<String> = ck
                .names()
                .filter_map(|n| {
                    n.strip_prefix(&format!("optim.{prefix}.m."))
                        .map(str::to_string)
                })
                .collect();
            for name in names {
                let (_, m) = ck.get(&format!("optim.{prefix}.m.{name}"))?;
                let (_, v) = ck.get(&format!("optim.{prefix}.v.{name}"))?;
                slots.push((
                    name,
                    m.iter().map(|&x| S::from_f32(x)).collect(),
                    v.iter().map(|&x| S::from_f32(x)).collect(),
                ));
            }
            opt.import_state(ck.meta[t_key].as_u64().unwrap_or(0), slots);
        }
        Ok(())
    }
}

/// Rebuild a generator from a checkpoint for inference. The vocabulary must
/// hash-match the one the checkpoint was trained with.
pub fn load_model_for_inference(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<(RunConfig, ParamSet<Real>, EnricherModel<Real>)> {
    let ck = Checkpoint::load(path)?;
    if ck.meta["vocab_hash"].as_u64().unwrap_or(0) != vocab.content_hash() {
        return Err(TrainError::VocabMismatch);
    }
    let config_text = ck.meta["config"].as_str().unwrap_or_default();
    let config = RunConfig::parse(config_text).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut params = ParamSet::new(0);
    let model = EnricherModel::new(
        &mut params,
        vocab,
        &config
            .enricher_config()
            .map_err(|e| TrainError::Config(e.to_string()))?,
    )?;
    for p in params.iter() {
        let (_, vals) = ck.get(p.name())?;
        p.set_values(&vals.iter().map(|&v| Real::from_f32(v)).collect::<Vec<Real>>());
    }
    Ok((config, params, model))
}

/// Outcome of a full training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub best_metric_sum: f64,
    pub early_stopped: bool,
    pub final_report: Option<MetricReport>,
    /// CSV metric log, also written to metrics.csv in the run dir.
    pub metric_log: String,
}

const METRIC_HEADER: &str = "step,total,obj,edges,gan_g,pred_avail,pred_not_avail,scene,align,d_loss,objs_acc,avail_preds_acc,not_avail_preds_acc,avail_edges_acc,not_avail_edges_acc,scene_class_acc";

fn metric_row(step: u64, stats: &StepStats, report: Option<&MetricReport>) -> String {
    let mut row = format!("{step},{:?}", stats.total);
    for key in ["obj", "edges", "gan_g", "pred_avail", "pred_not_avail", "scene", "align"] {
        let v = stats.parts.get(key).copied().unwrap_or(0.0);
        let _ = write!(row, ",{v:?}");
    }
    match stats.d_loss {
        Some(d) => {
            let _ = write!(row, ",{d:?}");
        }
        None => row.push(','),
    }
    match report {
        Some(r) => {
            for m in [
                &r.objs_acc,
                &r.avail_preds_acc,
                &r.not_avail_preds_acc,
                &r.avail_edges_acc,
                &r.not_avail_edges_acc,
                &r.scene_class_acc,
            ] {
                match m.value() {
                    Some(v) => {
                        let _ = write!(row, ",{v:?}");
                    }
                    None => row.push(','),
                }
            }
        }
        None => row.push_str(",,,,,,"),
    }
    row
}

/// Full training protocol: generator steps with periodic discriminator
/// updates, periodic validation, early stopping on the validation metric
/// sum, checkpoints (latest + best) and a CSV metric log in `run_dir`.
pub fn train(
    run_dir: &Path,
    corpus: &Corpus,
    config: &RunConfig,
    surrogate_cfg: Option<&SurrogateConfig>,
    resume: bool,
) -> Result<TrainOutcome> {
    fs::create_dir_all(run_dir)?;
    let mut trainer: Trainer<Real> = Trainer::new(config, corpus, surrogate_cfg)?;
    let corpus_hash = corpus.content_hash();
    let latest = run_dir.join("latest.ckpt");
    if resume && latest.exists() {
        trainer.load_checkpoint(&latest)?;
    }

    let manifest = serde_json::json!({
        "seed": config.seed,
        "config": config.emit(),
        "vocab_hash": trainer.vocab.content_hash(),
        "corpus_hash": corpus_hash,
        "surrogate": trainer.surrogates.as_ref().map(|s| s.config.clone()),
        "resumed_at_step": if resume { Some(trainer.step) } else { None },
    });
    fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest"),
    )?;

    let mut log = String::from(METRIC_HEADER);
    log.push('\n');
    let mut best = f64::NEG_INFINITY;
    let mut evals_since_best = 0usize;
    let mut early_stopped = false;
    let mut final_report = None;

    while trainer.step < config.max_steps {
        let mut stats = trainer.generator_step(corpus)?;
        if config.w_gan > 0.0 && trainer.step.is_multiple_of(config.d_update_every) {
            let d = trainer.discriminator_step(corpus)?;
            if d.is_finite() {
                stats.d_loss = Some(d);
            }
        }
        let step = trainer.step;
        let eval_now = step.is_multiple_of(config.eval_interval) || step == config.max_steps;
        let report = if eval_now {
            Some(trainer.evaluate_split(corpus, Split::Val)?)
        } else {
            None
        };
        log.push_str(&metric_row(step, &stats, report.as_ref()));
        log.push('\n');
        if let Some(report) = report {
            let sum = Trainer::<Real>::metric_sum(&report);
            trainer.save_checkpoint(&latest, corpus_hash)?;
            if sum > best {
                best = sum;
                evals_since_best = 0;
                trainer.save_checkpoint(&run_dir.join("best.ckpt"), corpus_hash)?;
            } else {
                evals_since_best += 1;
                if evals_since_best >= config.patience {
                    early_stopped = true;
                }
            }
            final_report = Some(report);
            fs::write(run_dir.join("metrics.csv"), &log)?;
            if early_stopped {
                break;
            }
        }
    }
    trainer.save_checkpoint(&latest, corpus_hash)?;
    fs::write(run_dir.join("metrics.csv"), &log)?;
    Ok(TrainOutcome {
        steps_run: trainer.step,
        best_metric_sum: best,
        early_stopped,
        final_report,
        metric_log: log,
    })
}
