//! Enrichment metrics against ground truth, plus a brute-force oracle.
//!
//! Object accuracy asks whether the masked category is recovered; edge
//! accuracies cover every ordered off-diagonal node pair at threshold 0.5,
//! split by ground-truth presence; predicate accuracies cover the model's
//! own enriching edges, split by whether each exists in the ground truth
//! (where the correct answer for a spurious edge is none_pred); scene class
//! accuracy compares characterizer argmaxes for the two synthesized images.
//! Optional metrics are absent when their support is empty.

use serde::Serialize;

use crate::enricher::{
    argmax, edge_probabilities, mask_logits, obj_pass, pred_pass, score_edges,
    special_object_mask, special_predicate_mask, EnrichError, EnricherModel,
};
use crate::graph::{SceneGraph, Vocabulary};
use crate::surrogate::Surrogates;
use crate::tensor::ops;
use crate::tensor::{Scalar, Session};
use crate::train::TrainingExample;

pub type Result<T> = std::result::Result<T, EnrichError>;

/// Correct/support counter; the metric is absent when support is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Metric {
    pub correct: usize,
    pub support: usize,
}

impl Metric {
    pub fn add(&mut self, ok: bool) {
        self.support += 1;
        if ok {
            self.correct += 1;
        }
    }

    pub fn present(&self) -> bool {
        self.support > 0
    }

    pub fn value(&self) -> Option<f64> {
        (self.support > 0).then(|| self.correct as f64 / self.support as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub objs_acc: Metric,
    pub avail_preds_acc: Metric,
    pub not_avail_preds_acc: Metric,
    pub avail_edges_acc: Metric,
    pub not_avail_edges_acc: Metric,
    pub scene_class_acc: Metric,
}

impl MetricReport {
    /// Aligned text table; absent metrics print "-".
    pub fn to_table(&self) -> String {
        let rows = [
            ("Objs Acc", &self.objs_acc),
            ("Avail Preds Acc", &self.avail_preds_acc),
            ("Not Avail Preds Acc", &self.not_avail_preds_acc),
            ("Avail Edges Acc", &self.avail_edges_acc),
            ("Not Avail Edges Acc", &self.not_avail_edges_acc),
            ("Scene Class Acc", &self.scene_class_acc),
        ];
        let mut out = String::new();
        for (name, m) in rows {
            match m.value() {
                Some(v) => out.push_str(&format!(
                    "{name:<20} {:>7.2}  ({}/{})\n",
                    100.0 * v,
                    m.correct,
                    m.support
                )),
                None => out.push_str(&format!("{name:<20} {:>7}\n", "-")),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            value: Option<f64>,
            correct: usize,
            support: usize,
        }
        let row = |m: &Metric| Row {
            value: m.value(),
            correct: m.correct,
            support: m.support,
        };
        serde_json::to_string_pretty(&serde_json::json!({
            "objs_acc": row(&self.objs_acc),
            "avail_preds_acc": row(&self.avail_preds_acc),
            "not_avail_preds_acc": row(&self.not_avail_preds_acc),
            "avail_edges_acc": row(&self.avail_edges_acc),
            "not_avail_edges_acc": row(&self.not_avail_edges_acc),
            "scene_class_acc": row(&self.scene_class_acc),
        }))
        .expect("report json")
    }
}

/// Raw per-example predictions; both metric implementations consume these.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub n: usize,
    pub predicted_object: usize,
    pub eliminated_category: usize,
    /// n*n post-sigmoid probabilities, diagonal zero.
    pub edge_probs: Vec<f64>,
    pub gt_adjacency: Vec<u8>,
    /// Model-selected enriching edges as (subject, object).
    pub selected_edges: Vec<(usize, usize)>,
    /// Ground-truth predicates of each ordered pair touching the eliminated
    /// node (empty set means the pair has no edge in the ground truth).
    pub gt_pair_predicates: Vec<((usize, usize), Vec<usize>)>,
    /// Predicate argmax per selected edge.
    pub predicted_predicates: Vec<usize>,
    /// (scene class of reference image, scene class of enriched image).
    pub scene_pair: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub threshold: f64,
    pub max_edges: usize,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            max_edges: 8,
            batch_size: 32,
        }
    }
}

/// Run the model over examples in eval mode and collect raw predictions.
pub fn predict_records<S: Scalar>(
    model: &EnricherModel<S>,
    vocab: &Vocabulary,
    examples: &[TrainingExample],
    surrogates: Option<&Surrogates<S>>,
    config: &EvalConfig,
) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::with_capacity(examples.len());
    let sp = vocab.specials();
    for chunk in examples.chunks(config.batch_size.max(1)) {
        let sess = Session::eval(0);
        let masked: Vec<SceneGraph> = chunk.iter().map(|e| e.masked_graph.clone()).collect();
        let pass = obj_pass(model, &sess, &masked, vocab)?;
        let obj_mask = special_object_mask(vocab);

        // Per-graph object choice and edge selections.
        let mut partial: Vec<PredictionRecord> = Vec::with_capacity(chunk.len());
        let mut pred_graphs = Vec::new();
        let mut pred_owner = Vec::new();
        for (gi, e) in chunk.iter().enumerate() {
            let logits = crate::enricher::object_logits(&pass, gi, &obj_mask);
            let vals: Vec<f64> = logits.values().iter().map(|v| v.as_f64()).collect();
            let predicted_object = argmax(&vals);
            let scores = score_edges(model, &sess, &pass, gi);
            let n = e.gt_graph.node_count();
            let probs = edge_probabilities(&scores);
            let selected = crate::enricher::select_edges(
                &probs,
                n,
                e.eliminated_pos,
                config.threshold,
                config.max_edges,
            );
            let selected_pairs: Vec<(usize, usize)> =
                selected.iter().map(|s| (s.subject, s.object)).collect();

            let mut gt_pair_predicates = Vec::new();
            for &(s, o) in &selected_pairs {
                let preds: Vec<usize> = e
                    .eliminated_triplets
                    .iter()
                    .filter(|&&(ts, _, to)| ts == s && to == o)
                    .map(|&(_, p, _)| p)
                    .collect();
                gt_pair_predicates.push(((s, o), preds));
            }

            // Predicate pass input: eliminated node carries the predicted
            // category, selected pairs carry placeholders.
            let mut g = e.gt_graph.clone();
            g.objects[e.eliminated_pos] = predicted_object;
            let victim = e.eliminated_pos;
            g.edges.retain(|&(s, _, o)| s != victim && o != victim);
            for &(s, o) in &selected_pairs {
                g.edges.push((s, sp.unknown_pred, o));
            }
            if !selected_pairs.is_empty() {
                pred_graphs.push(g);
                pred_owner.push(gi);
            }

            let scene_pair = surrogates.map(|surro| {
                let img_ref = surro.synth.synth(&e.gt_graph.objects, &[]);
                let mut enriched_cats = e.gt_graph.objects.clone();
                enriched_cats[e.eliminated_pos] = predicted_object;
                let img_enr = surro.synth.synth(&enriched_cats, &[]);
                let cls = |img| {
                    let f = surro.characterizer.features(&img);
                    argmax(&f.logits.values().iter().map(|v| v.as_f64()).collect::<Vec<_>>())
                };
                (cls(img_ref), cls(img_enr))
            });

            partial.push(PredictionRecord {
                n,
                predicted_object,
                eliminated_category: e.eliminated_category,
                edge_probs: probs,
                gt_adjacency: e.gt_adjacency.clone(),
                selected_edges: selected_pairs,
                gt_pair_predicates,
                predicted_predicates: Vec::new(),
                scene_pair,
            });
        }

        if !pred_graphs.is_empty() {
            let (ppass, placeholder_rows) = pred_pass(model, &sess, &pred_graphs, vocab, &[])?;
            let head = ppass.out.head_logits.as_ref().expect("predicate head");
            // none_pred stays available so spurious edges can be judged.
            let eval_mask = special_predicate_mask(vocab, false);
            for (k, &owner) in pred_owner.iter().enumerate() {
                for &row in &placeholder_rows[k] {
                    let logits = mask_logits(&ops::gather_rows(head, &[row]), &eval_mask);
                    let vals: Vec<f64> =
                        logits.values().iter().map(|v| v.as_f64()).collect();
                    partial[owner].predicted_predicates.push(argmax(&vals));
                }
            }
        }
        records.extend(partial);
    }
    Ok(records)
}

/// Count-based metric computation over prediction records. Edge metrics
/// declare a pair "present" when its probability exceeds `threshold`, the
/// same threshold the enricher's edge selection used.
pub fn evaluate_records(
    records: &[PredictionRecord],
    none_pred: usize,
    threshold: f64,
) -> MetricReport {
    let mut report = MetricReport::default();
    for r in records {
        report.objs_acc.add(r.predicted_object == r.eliminated_category);
        for i in 0..r.n {
            for j in 0..r.n {
                if i == j {
                    continue;
                }
                let predicted_present = r.edge_probs[i * r.n + j] > threshold;
                if r.gt_adjacency[i * r.n + j] != 0 {
                    report.avail_edges_acc.add(predicted_present);
                } else {
                    report.not_avail_edges_acc.add(!predicted_present);
                }
            }
        }
        for (k, (pair, gt_preds)) in r.gt_pair_predicates.iter().enumerate() {
            debug_assert_eq!(*pair, r.selected_edges[k]);
            let chosen = r.predicted_predicates[k];
            if gt_preds.is_empty() {
                report.not_avail_preds_acc.add(chosen == none_pred);
            } else {
                report.avail_preds_acc.add(gt_preds.contains(&chosen));
            }
        }
        if let Some((a, b)) = r.scene_pair {
            report.scene_class_acc.add(a == b);
        }
    }
    report
}

/// Independent nested-loop re-implementation of the metric definitions.
/// Must equal [`evaluate_records`] exactly on every input.
pub fn oracle_evaluate(
    records: &[PredictionRecord],
    none_pred: usize,
    threshold: f64,
) -> MetricReport {
    let mut obj_ok = 0;
    let mut obj_total = 0;
    let mut ae_ok = 0;
    let mut ae_total = 0;
    let mut nae_ok = 0;
    let mut nae_total = 0;
    let mut ap_ok = 0;
    let mut ap_total = 0;
    let mut nap_ok = 0;
    let mut nap_total = 0;
    let mut sc_ok = 0;
    let mut sc_total = 0;
    let mut idx = 0;
    while idx < records.len() {
        let r = &records[idx];
        obj_total += 1;
        if r.predicted_object == r.eliminated_category {
            obj_ok += 1;
        }
        let mut i = 0;
        while i < r.n {
            let mut j = 0;
            while j < r.n {
                if i != j {
                    let gt_present = r.gt_adjacency[i * r.n + j] == 1;
                    let said_present = r.edge_probs[i * r.n + j] > threshold;
                    if gt_present {
                        ae_total += 1;
                        if said_present {
                            ae_ok += 1;
                        }
                    } else {
                        nae_total += 1;
                        if !said_present {
                            nae_ok += 1;
                        }
                    }
                }
                j += 1;
            }
            i += 1;
        }
        let mut k = 0;
        while k < r.selected_edges.len() {
            let gt_preds = &r.gt_pair_predicates[k].1;
            let chosen = r.predicted_predicates[k];
            if gt_preds.is_empty() {
                nap_total += 1;
                if chosen == none_pred {
                    nap_ok += 1;
                }
            } else {
                ap_total += 1;
                let mut hit = false;
                let mut t = 0;
                while t < gt_preds.len() {
                    if gt_preds[t] == chosen {
                        hit = true;
                    }
                    t += 1;
                }
                if hit {
                    ap_ok += 1;
                }
            }
            k += 1;
        }
        if let Some((a, b)) = r.scene_pair {
            sc_total += 1;
            if a == b {
                sc_ok += 1;
            }
        }
        idx += 1;
    }
    MetricReport {
        objs_acc: Metric { correct: obj_ok, support: obj_total },
        avail_preds_acc: Metric { correct: ap_ok, support: ap_total },
        not_avail_preds_acc: Metric { correct: nap_ok, support: nap_total },
        avail_edges_acc: Metric { correct: ae_ok, support: ae_total },
        not_avail_edges_acc: Metric { correct: nae_ok, support: nae_total },
        scene_class_acc: Metric { correct: sc_ok, support: sc_total },
    }
}

/// Full evaluation: model forward in eval mode, then metric counting.
pub fn evaluate<S: Scalar>(
    model: &EnricherModel<S>,
    vocab: &Vocabulary,
    examples: &[TrainingExample],
    surrogates: Option<&Surrogates<S>>,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let records = predict_records(model, vocab, examples, surrogates, config)?;
    Ok(evaluate_records(
        &records,
        vocab.specials().none_pred,
        config.threshold,
    ))
}

/// Stub records for harness verification: a perfect predictor.
pub fn perfect_stub_records(examples: &[TrainingExample], vocab: &Vocabulary) -> Vec<PredictionRecord> {
    examples
        .iter()
        .map(|e| {
            let n = e.gt_graph.node_count();
            let edge_probs: Vec<f64> = e
                .gt_adjacency
                .iter()
                .map(|&a| if a != 0 { 0.99 } else { 0.01 })
                .collect();
            let selected: Vec<(usize, usize)> = e
                .eliminated_triplets
                .iter()
                .map(|&(s, _, o)| (s, o))
                .collect();
            let gt_pair_predicates: Vec<_> = e
                .eliminated_triplets
                .iter()
                .map(|&(s, p, o)| ((s, o), vec![p]))
                .collect();
            let predicted_predicates = e.eliminated_triplets.iter().map(|&(_, p, _)| p).collect();
            let _ = vocab;
            PredictionRecord {
                n,
                predicted_object: e.eliminated_category,
                eliminated_category: e.eliminated_category,
                edge_probs,
                gt_adjacency: e.gt_adjacency.clone(),
                selected_edges: selected,
                gt_pair_predicates,
                predicted_predicates,
                scene_pair: Some((1, 1)),
            }
        })
        .collect()
}

/// Stub records with uniformly random object predictions over the real
/// categories; everything else mirrors the perfect stub.
pub fn uniform_stub_records(
    examples: &[TrainingExample],
    vocab: &Vocabulary,
    seed: u64,
) -> Vec<PredictionRecord> {
    let mut rng = crate::rng::Rng::labeled(seed, "uniform-stub");
    let k = vocab.real_object_count();
    perfect_stub_records(examples, vocab)
        .into_iter()
        .map(|mut r| {
            r.predicted_object = rng.below(k);
            r
        })
        .collect()
}
