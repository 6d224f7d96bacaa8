//! The objective's individual terms and their weighted sum.
//!
//! Object prediction is cross-entropy at the unknown node; edge detection is
//! binary cross-entropy over every ordered off-diagonal node pair against
//! the ground-truth adjacency; predicate classification splits into a term
//! over edges that exist in the ground truth and a none_pred term over those
//! that do not; scene features compare characterizer views of the two
//! synthesized images; alignment is negative cosine similarity of unit
//! features; the adversarial term is the standard min-max value.

use crate::tensor::ops;
use crate::tensor::{Scalar, Tensor};

/// Which characterizer view the scene loss compares, and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneMode {
    LogitL1,
    LogitL2,
    LogitCe,
    HiddenL1,
    HiddenL2,
    HpooledL1,
    HpooledL2,
}

impl SceneMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logit_l1" => Some(SceneMode::LogitL1),
            "logit_l2" => Some(SceneMode::LogitL2),
            "logit_ce" => Some(SceneMode::LogitCe),
            "hidden_l1" => Some(SceneMode::HiddenL1),
            "hidden_l2" => Some(SceneMode::HiddenL2),
            "hpooled_l1" => Some(SceneMode::HpooledL1),
            "hpooled_l2" => Some(SceneMode::HpooledL2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SceneMode::LogitL1 => "logit_l1",
            SceneMode::LogitL2 => "logit_l2",
            SceneMode::LogitCe => "logit_ce",
            SceneMode::HiddenL1 => "hidden_l1",
            SceneMode::HiddenL2 => "hidden_l2",
            SceneMode::HpooledL1 => "hpooled_l1",
            SceneMode::HpooledL2 => "hpooled_l2",
        }
    }

    pub fn uses_logits(&self) -> bool {
        matches!(self, SceneMode::LogitL1 | SceneMode::LogitL2 | SceneMode::LogitCe)
    }
}

/// Weights w0..w6 of the total objective, in the written order:
/// objects, edges, adversarial, available predicates, not-available
/// predicates, scene features, image-graph alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub obj: f64,
    pub edges: f64,
    pub gan: f64,
    pub pred_avail: f64,
    pub pred_not_avail: f64,
    pub scene: f64,
    pub align: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in self.iter() {
            if w < 0.0 || !w.is_finite() {
                return Err(format!("loss weight {name} must be >= 0, got {w}"));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("obj", self.obj),
            ("edges", self.edges),
            ("gan", self.gan),
            ("pred_avail", self.pred_avail),
            ("pred_not_avail", self.pred_not_avail),
            ("scene", self.scene),
            ("align", self.align),
        ]
        .into_iter()
    }

    pub fn scale(&self, k: f64) -> LossWeights {
        LossWeights {
            obj: self.obj * k,
            edges: self.edges * k,
            gan: self.gan * k,
            pred_avail: self.pred_avail * k,
            pred_not_avail: self.pred_not_avail * k,
            scene: self.scene * k,
            align: self.align * k,
        }
    }
}

/// Mean cross-entropy of unknown-node object logits against the eliminated
/// categories.
pub fn loss_obj<S: Scalar>(logits: &Tensor<S>, targets: &[usize]) -> Tensor<S> {
    ops::cross_entropy_mean(logits, targets)
}

/// Mean BCE over all ordered off-diagonal pairs of every graph, pooled
/// across the batch. `per_graph` pairs a pre-sigmoid [n, n] score matrix
/// with its flattened 0/1 ground-truth adjacency.
pub fn loss_edges<S: Scalar>(per_graph: &[(Tensor<S>, &[u8])]) -> Tensor<S> {
    let mut flats = Vec::new();
    let mut targets: Vec<S> = Vec::new();
    for (scores, adj) in per_graph {
        let n = scores.rows();
        assert_eq!(scores.len(), n * n, "loss_edges: square matrix");
        assert_eq!(adj.len(), n * n, "loss_edges: adjacency size");
        if n < 2 {
            continue;
        }
        let mut idx = Vec::with_capacity(n * n - n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    idx.push(i * n + j);
                    targets.push(if adj[i * n + j] != 0 { S::one() } else { S::zero() });
                }
            }
        }
        flats.push(ops::gather_flat(scores, &idx, &[idx.len()]));
    }
    if flats.is_empty() {
        return Tensor::scalar(S::zero());
    }
    let all = ops::concat_rows(&flats.iter().map(|t| t.reshape(&[t.len(), 1])).collect::<Vec<_>>());
    ops::bce_with_logits_mean(&all, &targets)
}

/// Predicate terms: matched enriching edges score against their ground-truth
/// predicate, unmatched ones against none_pred. Each term averages over its
/// own support and is exactly zero when the support is empty.
pub fn loss_predicates<S: Scalar>(
    logits: &Tensor<S>,
    matched: &[(usize, usize)],
    unmatched_rows: &[usize],
    none_pred: usize,
) -> (Tensor<S>, Tensor<S>) {
    let avail = if matched.is_empty() {
        Tensor::scalar(S::zero())
    } else {
        let rows: Vec<usize> = matched.iter().map(|&(r, _)| r).collect();
        let targets: Vec<usize> = matched.iter().map(|&(_, t)| t).collect();
        ops::cross_entropy_mean(&ops::gather_rows(logits, &rows), &targets)
    };
    let not_avail = if unmatched_rows.is_empty() {
        Tensor::scalar(S::zero())
    } else {
        let targets = vec![none_pred; unmatched_rows.len()];
        ops::cross_entropy_mean(&ops::gather_rows(logits, unmatched_rows), &targets)
    };
    (avail, not_avail)
}

/// Scene-feature loss between characterizer outputs for the ground-truth
/// and enriched images. For Lp modes this is the mean row-wise Lp distance;
/// for logit_ce it is cross-entropy of the enriched logits against the
/// ground-truth argmax classes.
pub fn loss_scene<S: Scalar>(
    reference: &Tensor<S>,
    enriched: &Tensor<S>,
    mode: SceneMode,
) -> Tensor<S> {
    match mode {
        SceneMode::LogitCe => {
            let k = reference.cols();
            let targets: Vec<usize> = (0..reference.rows())
                .map(|r| {
                    let row = &reference.values()[r * k..(r + 1) * k];
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect();
            ops::cross_entropy_mean(enriched, &targets)
        }
        SceneMode::LogitL1 | SceneMode::HiddenL1 | SceneMode::HpooledL1 => {
            ops::lp_row_distance_mean(reference, enriched, 1)
        }
        SceneMode::LogitL2 | SceneMode::HiddenL2 | SceneMode::HpooledL2 => {
            ops::lp_row_distance_mean(reference, enriched, 2)
        }
    }
}

/// Negative mean dot product of unit feature rows. Inputs must be
/// L2-normalized to within 1e-4.
pub fn loss_align<S: Scalar>(graph_feats: &Tensor<S>, image_feats: &Tensor<S>) -> Tensor<S> {
    for t in [graph_feats, image_feats] {
        let d = t.cols();
        for r in 0..t.rows() {
            let norm: f64 = t.values()[r * d..(r + 1) * d]
                .iter()
                .map(|v| v.as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() <= 1e-4, "loss_align: row norm {norm}");
        }
    }
    ops::scale(&ops::mean_all(&ops::dot_rows(graph_feats, image_feats)), -1.0)
}

/// Discriminator objective (to minimize): real graphs toward 1, enriched
/// graphs toward 0. At D = 0.5 everywhere this is 2 ln 2.
pub fn loss_gan_discriminator<S: Scalar>(
    real_logits: &Tensor<S>,
    fake_logits: &Tensor<S>,
) -> Tensor<S> {
    let ones = vec![S::one(); real_logits.len()];
    let zeros = vec![S::zero(); fake_logits.len()];
    ops::add(
        &ops::bce_with_logits_mean(real_logits, &ones),
        &ops::bce_with_logits_mean(fake_logits, &zeros),
    )
}

/// Generator adversarial objective (to minimize). Non-saturating form by
/// default; the saturating form minimizes E log(1 - D) directly.
pub fn loss_gan_generator<S: Scalar>(fake_logits: &Tensor<S>, saturating: bool) -> Tensor<S> {
    if saturating {
        let zeros = vec![S::zero(); fake_logits.len()];
        ops::scale(&ops::bce_with_logits_mean(fake_logits, &zeros), -1.0)
    } else {
        let ones = vec![S::one(); fake_logits.len()];
        ops::bce_with_logits_mean(fake_logits, &ones)
    }
}

/// Weighted sum; zero-weight terms are dropped exactly.
pub fn total_loss<S: Scalar>(parts: &[(f64, Option<Tensor<S>>)]) -> Tensor<S> {
    let mut acc = Tensor::scalar(S::zero());
    for (w, part) in parts {
        if *w == 0.0 {
            continue;
        }
        let part = part
            .as_ref()
            .unwrap_or_else(|| panic!("missing loss part with nonzero weight {w}"));
        acc = ops::add(&acc, &ops::scale(part, *w));
    }
    acc
}
