//! The scene-graph enricher: predict one new object, detect the edges tying
//! it into the scene, and classify their predicates.
//!
//! Three parts share nothing but architecture shape: an object GCN with a
//! per-node classifier head, a pair of edge-detector MLPs (same shape,
//! independent weights) whose transformed node vectors are compared by dot
//! product, and a predicate GCN with a per-edge classifier head.

use thiserror::Error;

use crate::gcn::{forward_graphs, ArchSpec, GcnError, GcnOutput, GcnStack, HeadSpec, SoftRow};
use crate::graph::{GraphBatch, GraphError, SceneGraph, Vocabulary};
use crate::nn::{FcSettings, Mlp};
use crate::rng::Rng;
use crate::tensor::ops;
use crate::tensor::{ParamSet, Scalar, Session, Tensor};

pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Error)]
pub enum EnrichError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error("expected exactly one unknown_obj node, found {0}")]
    UnknownCount(usize),
    #[error("no placeholder edges to classify")]
    NoPlaceholders,
    #[error("forced-novel enrichment exhausted the object vocabulary")]
    VocabularyExhausted,
    #[error("invalid option: {0}")]
    Options(String),
}

pub type Result<T> = std::result::Result<T, EnrichError>;

/// Architecture knobs shared by the generator's GCNs and MLP heads.
#[derive(Debug, Clone)]
pub struct EnricherConfig {
    pub d_emb: usize,
    pub arch: ArchSpec,
    pub gconv: FcSettings,
    pub fc: FcSettings,
    pub classifier_layers: usize,
    pub edge_layers: usize,
}

/// Generator model: object GCN, edge-detector pair, predicate GCN.
pub struct EnricherModel<S: Scalar> {
    pub obj_gcn: GcnStack<S>,
    pub pred_gcn: GcnStack<S>,
    phi_subj: Mlp<S>,
    phi_obj: Mlp<S>,
}

impl<S: Scalar> EnricherModel<S> {
    pub fn new(
        ps: &mut ParamSet<S>,
        vocab: &Vocabulary,
        cfg: &EnricherConfig,
    ) -> Result<Self> {
        let obj_gcn = GcnStack::new(
            ps,
            "gen.obj",
            vocab,
            cfg.d_emb,
            &cfg.arch,
            cfg.gconv,
            cfg.fc,
            HeadSpec::NodeClasses {
                classes: vocab.object_count(),
                layers: cfg.classifier_layers,
            },
            true,
        )?;
        // Same architecture, independent parameters.
        let pred_gcn = GcnStack::new(
            ps,
            "gen.pred",
            vocab,
            cfg.d_emb,
            &cfg.arch,
            cfg.gconv,
            cfg.fc,
            HeadSpec::EdgeClasses {
                classes: vocab.predicate_count(),
                layers: cfg.classifier_layers,
            },
            true,
        )?;
        let phi_in = cfg.d_emb + obj_gcn.d_last();
        let phi_out = cfg.d_emb;
        let mut dims = vec![phi_in; cfg.edge_layers];
        dims.push(phi_out);
        let phi_subj = Mlp::new(ps, "gen.phi_subj", &dims, cfg.fc);
        let phi_obj = Mlp::new(ps, "gen.phi_obj", &dims, cfg.fc);
        Ok(EnricherModel {
            obj_gcn,
            pred_gcn,
            phi_subj,
            phi_obj,
        })
    }
}

/// Append an unknown_obj node wired to every real node with unknown_pred
/// edges in both directions.
pub fn insert_unknown(graph: &SceneGraph, vocab: &Vocabulary) -> SceneGraph {
    let sp = vocab.specials();
    let mut out = graph.clone();
    let unknown = out.objects.len();
    out.objects.push(sp.unknown_obj);
    for node in 0..unknown {
        out.edges.push((unknown, sp.unknown_pred, node));
        out.edges.push((node, sp.unknown_pred, unknown));
    }
    out
}

/// One GCN forward over a group of graphs, dummy-augmented internally.
pub struct ObjPass<S: Scalar> {
    pub batch: GraphBatch,
    pub out: GcnOutput<S>,
    /// Flat rows of each graph's real nodes (input order, dummy excluded).
    pub real_rows: Vec<Vec<usize>>,
    /// Position of the unknown node within each graph's real rows, when the
    /// graph carries exactly one.
    pub unknown_pos: Vec<Option<usize>>,
}

/// Object-GCN forward; every graph must contain exactly one unknown node.
pub fn obj_pass<S: Scalar>(
    model: &EnricherModel<S>,
    sess: &Session<S>,
    graphs: &[SceneGraph],
    vocab: &Vocabulary,
) -> Result<ObjPass<S>> {
    let sp = vocab.specials();
    for g in graphs {
        let count = g.objects.iter().filter(|&&c| c == sp.unknown_obj).count();
        if count != 1 {
            return Err(EnrichError::UnknownCount(count));
        }
    }
    run_gcn(&model.obj_gcn, sess, graphs, vocab, &[], &[])
}

fn run_gcn<S: Scalar>(
    stack: &GcnStack<S>,
    sess: &Session<S>,
    graphs: &[SceneGraph],
    vocab: &Vocabulary,
    node_soft: &[Vec<SoftRow<S>>],
    edge_soft: &[Vec<SoftRow<S>>],
) -> Result<ObjPass<S>> {
    let sp = vocab.specials();
    let unknown_pos = graphs
        .iter()
        .map(|g| {
            let unknowns: Vec<usize> = g
                .objects
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == sp.unknown_obj)
                .map(|(i, _)| i)
                .collect();
            match unknowns.as_slice() {
                [only] => Some(*only),
                _ => None,
            }
        })
        .collect();
    let empty = vec![Vec::new(); graphs.len()];
    let node_soft = if node_soft.is_empty() { &empty } else { node_soft };
    let edge_soft = if edge_soft.is_empty() { &empty } else { edge_soft };
    let pass = forward_graphs(stack, sess, graphs, vocab, node_soft, edge_soft)?;
    Ok(ObjPass {
        batch: pass.batch,
        out: pass.out,
        real_rows: pass.real_rows,
        unknown_pos,
    })
}

/// Object-category logits at the unknown node of one graph, with the given
/// category indices masked to an effective -inf.
pub fn object_logits<S: Scalar>(
    pass: &ObjPass<S>,
    graph_idx: usize,
    masked: &[usize],
) -> Tensor<S> {
    let head = pass.out.head_logits.as_ref().expect("object head");
    let pos = pass.unknown_pos[graph_idx].expect("graph has an unknown node");
    let row = pass.real_rows[graph_idx][pos];
    let logits = ops::gather_rows(head, &[row]);
    mask_logits(&logits, masked)
}

/// Additive mask: listed columns get MASK_LOGIT.
pub fn mask_logits<S: Scalar>(logits: &Tensor<S>, masked: &[usize]) -> Tensor<S> {
    if masked.is_empty() {
        return logits.clone();
    }
    let k = logits.cols();
    let mut add = vec![S::zero(); k];
    for &m in masked {
        add[m] = S::from_f64(MASK_LOGIT);
    }
    ops::bcast_add(logits, &Tensor::constant(&[1, k], add))
}

/// Indices every object prediction masks: the special categories.
pub fn special_object_mask(vocab: &Vocabulary) -> Vec<usize> {
    let sp = vocab.specials();
    vec![sp.unknown_obj, sp.image]
}

/// Pre-sigmoid edge score matrix over one graph's real nodes:
/// entry (i, j) scores a directed edge with i as subject.
pub fn score_edges<S: Scalar>(
    model: &EnricherModel<S>,
    sess: &Session<S>,
    pass: &ObjPass<S>,
    graph_idx: usize,
) -> Tensor<S> {
    let rows = &pass.real_rows[graph_idx];
    let feats = ops::concat_cols(&[
        ops::gather_rows(&pass.out.node0, rows),
        ops::gather_rows(&pass.out.node_l, rows),
    ]);
    let s = model.phi_subj.forward(sess, &feats);
    let o = model.phi_obj.forward(sess, &feats);
    ops::matmul_nt(&s, &o)
}

/// Post-sigmoid probabilities with a zeroed diagonal, as plain values.
pub fn edge_probabilities<S: Scalar>(score_logits: &Tensor<S>) -> Vec<f64> {
    let n = score_logits.rows();
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let x = score_logits.values()[i * n + j].as_f64();
                out[i * n + j] = 1.0 / (1.0 + (-x).exp());
            }
        }
    }
    out
}

/// A selected enriching edge before predicate assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedEdge {
    pub subject: usize,
    pub object: usize,
    pub score: f64,
}

/// Keep candidate pairs touching the unknown node whose probability exceeds
/// the threshold, best first, truncated to max_edges; if none clears the
/// threshold the single best pair is kept so the new node stays connected.
pub fn select_edges(
    probs: &[f64],
    n: usize,
    unknown: usize,
    threshold: f64,
    max_edges: usize,
) -> Vec<SelectedEdge> {
    assert_eq!(probs.len(), n * n, "select_edges: matrix size");
    let mut candidates: Vec<SelectedEdge> = Vec::with_capacity(2 * (n - 1));
    for other in 0..n {
        if other == unknown {
            continue;
        }
        candidates.push(SelectedEdge {
            subject: unknown,
            object: other,
            score: probs[unknown * n + other],
        });
        candidates.push(SelectedEdge {
            subject: other,
            object: unknown,
            score: probs[other * n + unknown],
        });
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.subject.cmp(&b.subject))
            .then(a.object.cmp(&b.object))
    });
    let mut kept: Vec<SelectedEdge> = candidates
        .iter()
        .copied()
        .filter(|e| e.score > threshold)
        .take(max_edges)
        .collect();
    if kept.is_empty() {
        if let Some(&best) = candidates.first() {
            kept.push(best);
        }
    }
    kept
}

/// Predicate-GCN forward over graphs carrying unknown_pred placeholder
/// edges. Returns the pass plus, per graph, the flat edge rows of its
/// placeholders (edge order preserved).
pub fn pred_pass<S: Scalar>(
    model: &EnricherModel<S>,
    sess: &Session<S>,
    graphs: &[SceneGraph],
    vocab: &Vocabulary,
    node_soft: &[Vec<SoftRow<S>>],
) -> Result<(ObjPass<S>, Vec<Vec<usize>>)> {
    let sp = vocab.specials();
    if graphs
        .iter()
        .all(|g| g.edges.iter().all(|&(_, p, _)| p != sp.unknown_pred))
    {
        return Err(EnrichError::NoPlaceholders);
    }
    let pass = run_gcn(&model.pred_gcn, sess, graphs, vocab, node_soft, &[])?;
    let placeholder_rows = (0..pass.batch.graph_count())
        .map(|gi| {
            pass.batch
                .edge_range(gi)
                .filter(|&e| pass.batch.edges[e].1 == sp.unknown_pred)
                .collect()
        })
        .collect();
    Ok((pass, placeholder_rows))
}

/// Predicate indices masked when classifying enriching edges. none_pred is
/// additionally masked at inference, where "no relationship" is not a
/// permissible outcome for an edge that was just selected.
pub fn special_predicate_mask(vocab: &Vocabulary, inference: bool) -> Vec<usize> {
    let sp = vocab.specials();
    let mut m = vec![sp.unknown_pred, sp.in_image];
    if inference {
        m.push(sp.none_pred);
    }
    m
}

/// Decoding options for one enrichment step.
#[derive(Debug, Clone)]
pub struct EnrichOptions {
    pub threshold: f64,
    pub max_edges: usize,
    pub forced_novel: bool,
    /// 0 = argmax; otherwise softmax sampling at this temperature.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EnrichOptions {
    fn default() -> Self {
        EnrichOptions {
            threshold: 0.5,
            max_edges: 8,
            forced_novel: false,
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl EnrichOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(EnrichError::Options(format!(
                "threshold {} outside (0,1)",
                self.threshold
            )));
        }
        if self.max_edges == 0 {
            return Err(EnrichError::Options("max_edges must be >= 1".into()));
        }
        if self.temperature < 0.0 {
            return Err(EnrichError::Options("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Record of one enrichment iteration.
#[derive(Debug, Clone)]
pub struct EnrichmentStep {
    /// Masked object logits at the unknown node.
    pub object_logits: Vec<f64>,
    pub chosen_object: usize,
    /// (n+1)x(n+1) post-sigmoid probabilities, diagonal zeroed.
    pub edge_scores: Vec<f64>,
    pub selected_edges: Vec<SelectedEdge>,
    /// Masked per-placeholder predicate logits, in selected-edge order.
    pub predicate_logits: Vec<Vec<f64>>,
    pub chosen_predicates: Vec<usize>,
    /// Input graph plus the new node and its typed edges; dummy-free.
    pub enriched: SceneGraph,
}

fn decode(logits: &[f64], temperature: f64, rng: &mut Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|&x| x / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&x| (x - m).exp()).collect();
    rng.weighted(&exps)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One full enrichment iteration on a single graph.
pub fn enrich_once<S: Scalar>(
    model: &EnricherModel<S>,
    vocab: &Vocabulary,
    graph: &SceneGraph,
    options: &EnrichOptions,
    extra_object_mask: &[usize],
) -> Result<EnrichmentStep> {
    options.validate()?;
    graph.check(vocab)?;
    let mut rng = Rng::labeled(options.seed, "enrich");
    let sess = Session::eval(options.seed);

    let with_unknown = insert_unknown(graph, vocab);
    let pass = obj_pass(model, &sess, std::slice::from_ref(&with_unknown), vocab)?;

    let mut mask = special_object_mask(vocab);
    mask.extend_from_slice(extra_object_mask);
    if options.forced_novel {
        mask.extend(graph.objects.iter().copied());
    }
    mask.sort_unstable();
    mask.dedup();
    if mask.len() >= vocab.object_count() {
        return Err(EnrichError::VocabularyExhausted);
    }
    let logits_t = object_logits(&pass, 0, &mask);
    let object_logits_v: Vec<f64> = logits_t.values().iter().map(|v| v.as_f64()).collect();
    let chosen_object = decode(&object_logits_v, options.temperature, &mut rng);

    let score_t = score_edges(model, &sess, &pass, 0);
    let n = with_unknown.node_count();
    let unknown = n - 1; // insert_unknown appends
    let edge_scores = edge_probabilities(&score_t);
    let selected = select_edges(&edge_scores, n, unknown, options.threshold, options.max_edges);

    // Assemble g-tilde: original content, the predicted object, placeholder
    // predicates where edges were selected.
    let sp = vocab.specials();
    let mut g_tilde = graph.clone();
    g_tilde.objects.push(chosen_object);
    for e in &selected {
        g_tilde.edges.push((e.subject, sp.unknown_pred, e.object));
    }
    let (ppass, placeholder_rows) =
        pred_pass(model, &sess, std::slice::from_ref(&g_tilde), vocab, &[])?;
    let head = ppass.out.head_logits.as_ref().expect("predicate head");
    let pred_mask = special_predicate_mask(vocab, true);
    let mut predicate_logits = Vec::with_capacity(selected.len());
    let mut chosen_predicates = Vec::with_capacity(selected.len());
    for &row in &placeholder_rows[0] {
        let logits = mask_logits(&ops::gather_rows(head, &[row]), &pred_mask);
        let vals: Vec<f64> = logits.values().iter().map(|v| v.as_f64()).collect();
        chosen_predicates.push(decode(&vals, options.temperature, &mut rng));
        predicate_logits.push(vals);
    }

    let mut enriched = graph.clone();
    enriched.objects.push(chosen_object);
    for (e, &pred) in selected.iter().zip(&chosen_predicates) {
        enriched.edges.push((e.subject, pred, e.object));
    }
    enriched.check(vocab)?;

    Ok(EnrichmentStep {
        object_logits: object_logits_v,
        chosen_object,
        edge_scores,
        selected_edges: selected,
        predicate_logits,
        chosen_predicates,
        enriched,
    })
}

/// Iterative enrichment: each step's output graph feeds the next step. With
/// forced_novel, categories already present (or previously appended) are
/// masked; exhausting the vocabulary is an error.
pub fn enrich_iterative<S: Scalar>(
    model: &EnricherModel<S>,
    vocab: &Vocabulary,
    graph: &SceneGraph,
    steps: usize,
    options: &EnrichOptions,
) -> Result<Vec<EnrichmentStep>> {
    assert!(steps >= 1, "steps must be >= 1");
    let mut out = Vec::with_capacity(steps);
    let mut current = graph.clone();
    for step in 0..steps {
        let step_options = EnrichOptions {
            seed: crate::rng::stream(options.seed, &format!("iter/{step}")),
            ..options.clone()
        };
        let step_result = enrich_once(model, vocab, &current, &step_options, &[])?;
        current = step_result.enriched.clone();
        out.push(step_result);
    }
    Ok(out)
}
