//! Graph convolution layers and configurable stacks.
//!
//! One GConv layer concatenates (subject, predicate, object) features per
//! edge, maps them through `f_g` into three candidate vectors, updates each
//! predicate with `f_r` from its candidate, and updates each node with `f_o`
//! from the joint mean of every candidate produced where that node sat in
//! the subject or object slot. Weights are shared across all edges of all
//! graphs in a batch.
//!
//! A stack embeds categories (bias-free one-hot encoders), runs GConv layers
//! whose widths follow a multiplier string like `1 4 2 2 4 1` scaled by the
//! embed dim, and can finish with a classifier head over nodes or edges fed
//! by an input-to-final skip projection.

use thiserror::Error;

use crate::graph::{GraphBatch, Vocabulary};
use crate::nn::{FcSettings, Linear, Mlp};
use crate::tensor::ops;
use crate::tensor::{ParamSet, Parameter, Scalar, Session, Tensor};

#[derive(Debug, Error)]
pub enum GcnError {
    #[error("invalid architecture string: {0}")]
    Arch(String),
    #[error("multiplier {num}/{den} times embed dim {d_emb} is not integral")]
    NonIntegralDim { num: u64, den: u64, d_emb: usize },
}

/// Positive rational architecture multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Multiplier {
    pub num: u64,
    pub den: u64,
}

impl Multiplier {
    fn parse(tok: &str) -> Result<Self, GcnError> {
        let bad = || GcnError::Arch(format!("bad multiplier: {tok}"));
        let (num, den) = match tok.split_once('/') {
            Some((n, d)) => (
                n.parse::<u64>().map_err(|_| bad())?,
                d.parse::<u64>().map_err(|_| bad())?,
            ),
            None => (tok.parse::<u64>().map_err(|_| bad())?, 1),
        };
        if num == 0 || den == 0 {
            return Err(bad());
        }
        Ok(Multiplier { num, den })
    }

    fn apply(&self, d_emb: usize) -> Result<usize, GcnError> {
        let scaled = self.num as usize * d_emb;
        if !scaled.is_multiple_of(self.den as usize) {
            return Err(GcnError::NonIntegralDim {
                num: self.num,
                den: self.den,
                d_emb,
            });
        }
        Ok(scaled / self.den as usize)
    }
}

impl std::fmt::Display for Multiplier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Whitespace-separated multiplier string, e.g. "1 4 2 1 1/2 1/2 1 2 4 1".
/// n multipliers define n-1 GConv layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    multipliers: Vec<Multiplier>,
}

impl ArchSpec {
    pub fn parse(text: &str) -> Result<Self, GcnError> {
        let multipliers: Vec<Multiplier> = text
            .split_whitespace()
            .map(Multiplier::parse)
            .collect::<Result<_, _>>()?;
        if multipliers.len() < 2 {
            return Err(GcnError::Arch(format!(
                "need at least two multipliers, got {:?}",
                text
            )));
        }
        Ok(ArchSpec { multipliers })
    }

    pub fn layer_count(&self) -> usize {
        self.multipliers.len() - 1
    }

    /// Feature widths per stage, validated to be integral.
    pub fn dims(&self, d_emb: usize) -> Result<Vec<usize>, GcnError> {
        self.multipliers.iter().map(|m| m.apply(d_emb)).collect()
    }

    /// Shallower spec used by the local discriminator: the last `k` GConv
    /// layers are eliminated.
    pub fn truncate_layers(&self, k: usize) -> Result<Self, GcnError> {
        if self.layer_count() <= k {
            return Err(GcnError::Arch(format!(
                "cannot drop {k} layers from a {}-layer stack",
                self.layer_count()
            )));
        }
        Ok(ArchSpec {
            multipliers: self.multipliers[..self.multipliers.len() - k].to_vec(),
        })
    }
}

impl std::fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.multipliers.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Per-layer settings for the MLPs inside GConv (f_g, f_r, f_o).
pub type GConvSettings = FcSettings;

/// One message-passing layer (Eqs. 2-5 structure).
pub struct GConvLayer<S: Scalar> {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    f_g: Mlp<S>,
    f_r: Mlp<S>,
    f_o: Mlp<S>,
}

impl<S: Scalar> GConvLayer<S> {
    pub fn new(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        settings: GConvSettings,
    ) -> Self {
        let hidden = 2 * (d_in + d_out);
        GConvLayer {
            d_in,
            d_out,
            hidden,
            f_g: Mlp::new(ps, &format!("{name}.f_g"), &[3 * d_in, hidden, 3 * hidden], settings),
            f_r: Mlp::new(ps, &format!("{name}.f_r"), &[d_in + hidden, hidden, d_out], settings),
            f_o: Mlp::new(ps, &format!("{name}.f_o"), &[d_in + hidden, hidden, d_out], settings),
        }
    }

    /// Message passing over a flattened edge list. `subj[e]`/`obj[e]` are the
    /// node rows of edge e. Nodes with no incident edge see a zero pooled
    /// candidate.
    pub fn forward(
        &self,
        sess: &Session<S>,
        node_feats: &Tensor<S>,
        pred_feats: &Tensor<S>,
        subj: &[usize],
        obj: &[usize],
    ) -> (Tensor<S>, Tensor<S>) {
        let n = node_feats.rows();
        let e = pred_feats.rows();
        assert_eq!(node_feats.cols(), self.d_in, "gconv: node width");
        assert_eq!(pred_feats.cols(), self.d_in, "gconv: pred width");
        assert_eq!(subj.len(), e, "gconv: subj per edge");
        assert_eq!(obj.len(), e, "gconv: obj per edge");

        if e == 0 {
            let pooled = Tensor::zeros(&[n, self.hidden]);
            let nodes = self.f_o.forward(sess, &ops::concat_cols(&[node_feats.clone(), pooled]));
            return (nodes, Tensor::zeros(&[0, self.d_out]));
        }

        let vi = ops::gather_rows(node_feats, subj);
        let vj = ops::gather_rows(node_feats, obj);
        let triple = ops::concat_cols(&[vi, pred_feats.clone(), vj]);
        let cands = self.f_g.forward(sess, &triple);
        let h = self.hidden;
        let cand_subj = ops::slice_cols(&cands, 0, h);
        let cand_pred = ops::slice_cols(&cands, h, 2 * h);
        let cand_obj = ops::slice_cols(&cands, 2 * h, 3 * h);

        let preds = self
            .f_r
            .forward(sess, &ops::concat_cols(&[pred_feats.clone(), cand_pred]));

        // Joint mean over candidate sets: rows from the subject slot grouped
        // by the subject node, rows from the object slot by the object node.
        let stacked = ops::concat_rows(&[cand_subj, cand_obj]);
        let mut groups = Vec::with_capacity(2 * e);
        groups.extend_from_slice(subj);
        groups.extend_from_slice(obj);
        let pooled = ops::segment_mean(&stacked, &groups, n);

        let nodes = self
            .f_o
            .forward(sess, &ops::concat_cols(&[node_feats.clone(), pooled]));
        (nodes, preds)
    }
}

/// What the stack's classifier head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpec {
    None,
    /// Per-node logits over object categories.
    NodeClasses { classes: usize, layers: usize },
    /// Per-edge logits over predicate categories.
    EdgeClasses { classes: usize, layers: usize },
}

/// Everything a stack forward exposes to downstream heads.
pub struct GcnOutput<S: Scalar> {
    /// Embedded input features V_O^(0).
    pub node0: Tensor<S>,
    /// Final-layer node features V_O^(L).
    pub node_l: Tensor<S>,
    pub pred0: Tensor<S>,
    pub pred_l: Tensor<S>,
    /// Classifier logits per node or per edge, when a head exists.
    pub head_logits: Option<Tensor<S>>,
}

/// Embedding tables + GConv layers + optional skip projection and head.
pub struct GcnStack<S: Scalar> {
    pub d_emb: usize,
    pub arch: ArchSpec,
    obj_embed: Parameter<S>,
    pred_embed: Parameter<S>,
    layers: Vec<GConvLayer<S>>,
    node_skip: Option<Linear<S>>,
    edge_skip: Option<Linear<S>>,
    head: Option<Mlp<S>>,
    head_spec: HeadSpec,
}

/// Soft category distribution standing in for one node or edge row.
pub type SoftRow<S> = (usize, Tensor<S>);

impl<S: Scalar> GcnStack<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet<S>,
        name: &str,
        vocab: &Vocabulary,
        d_emb: usize,
        arch: &ArchSpec,
        gconv: GConvSettings,
        fc: FcSettings,
        head_spec: HeadSpec,
        with_skip: bool,
    ) -> Result<Self, GcnError> {
        let dims = arch.dims(d_emb)?;
        let obj_embed = ps.uniform(
            &format!("{name}.obj_embed"),
            &[vocab.object_count(), d_emb],
            vocab.object_count(),
        );
        let pred_embed = ps.uniform(
            &format!("{name}.pred_embed"),
            &[vocab.predicate_count(), d_emb],
            vocab.predicate_count(),
        );
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(GConvLayer::new(
                ps,
                &format!("{name}.l{i}"),
                dims[i],
                dims[i + 1],
                gconv,
            ));
        }
        let d_last = *dims.last().unwrap();
        let node_skip = with_skip
            .then(|| Linear::new(ps, &format!("{name}.skip_node"), d_emb + d_last, d_last, true));
        let edge_skip = (with_skip && matches!(head_spec, HeadSpec::EdgeClasses { .. }))
            .then(|| Linear::new(ps, &format!("{name}.skip_edge"), d_emb + d_last, d_last, true));
        let head = match head_spec {
            HeadSpec::None => None,
            HeadSpec::NodeClasses { classes, layers }
            | HeadSpec::EdgeClasses { classes, layers } => {
                let mut dims = vec![d_last; layers];
                dims.push(classes);
                Some(Mlp::new(ps, &format!("{name}.head"), &dims, fc))
            }
        };
        Ok(GcnStack {
            d_emb,
            arch: arch.clone(),
            obj_embed,
            pred_embed,
            layers,
            node_skip,
            edge_skip,
            head,
            head_spec,
        })
    }

    pub fn d_last(&self) -> usize {
        self.layers.last().map(|l| l.d_out).unwrap_or(self.d_emb)
    }

    fn embed(
        &self,
        sess: &Session<S>,
        table: &Parameter<S>,
        cats: &[usize],
        overrides: &[SoftRow<S>],
    ) -> Tensor<S> {
        let t = sess.bind(table);
        if cats.is_empty() {
            return Tensor::zeros(&[0, self.d_emb]);
        }
        let hard = ops::gather_rows(&t, cats);
        if overrides.is_empty() {
            return hard;
        }
        // Soft rows become probability-weighted mixtures of embedding rows.
        let dists: Vec<Tensor<S>> = overrides.iter().map(|(_, d)| d.clone()).collect();
        let rows: Vec<usize> = overrides.iter().map(|(r, _)| *r).collect();
        let mixed = ops::matmul(&ops::concat_rows(&dists), &t);
        ops::replace_rows(&hard, &rows, &mixed)
    }

    /// Forward over a flattened batch. Soft overrides substitute probability
    /// mixtures for the listed node/edge rows (one-hot reproduces the hard
    /// path exactly).
    pub fn forward(
        &self,
        sess: &Session<S>,
        batch: &GraphBatch,
        node_overrides: &[SoftRow<S>],
        edge_overrides: &[SoftRow<S>],
    ) -> GcnOutput<S> {
        let (subj, obj) = batch.edge_endpoints();
        let pred_cats: Vec<usize> = batch.edges.iter().map(|&(_, p, _)| p).collect();
        let node0 = self.embed(sess, &self.obj_embed, &batch.node_cats, node_overrides);
        let pred0 = self.embed(sess, &self.pred_embed, &pred_cats, edge_overrides);

        let (mut nodes, mut preds) = (node0.clone(), pred0.clone());
        for layer in &self.layers {
            let (n2, p2) = layer.forward(sess, &nodes, &preds, &subj, &obj);
            nodes = n2;
            preds = p2;
        }

        let head_logits = match self.head_spec {
            HeadSpec::None => None,
            HeadSpec::NodeClasses { .. } => {
                let fed = self.skip_nodes(sess, &node0, &nodes);
                Some(self.head.as_ref().unwrap().forward(sess, &fed))
            }
            HeadSpec::EdgeClasses { .. } => {
                let fed = match &self.edge_skip {
                    Some(skip) => skip.forward(sess, &ops::concat_cols(&[pred0.clone(), preds.clone()])),
                    None => preds.clone(),
                };
                Some(self.head.as_ref().unwrap().forward(sess, &fed))
            }
        };
        GcnOutput {
            node0,
            node_l: nodes,
            pred0,
            pred_l: preds,
            head_logits,
        }
    }

    /// Input-to-final skip: concat(V0, VL) projected back to the head width.
    fn skip_nodes(&self, sess: &Session<S>, node0: &Tensor<S>, node_l: &Tensor<S>) -> Tensor<S> {
        match &self.node_skip {
            Some(skip) => skip.forward(sess, &ops::concat_cols(&[node0.clone(), node_l.clone()])),
            None => node_l.clone(),
        }
    }
}

/// One stack forward over whole graphs: dummy-augments, batches, and maps
/// per-graph soft rows to flat batch rows.
pub struct StackPass<S: Scalar> {
    pub batch: GraphBatch,
    pub out: GcnOutput<S>,
    /// Flat rows of each graph's real nodes (dummy excluded).
    pub real_rows: Vec<Vec<usize>>,
}

/// `node_soft[g]` / `edge_soft[g]` carry (node position, distribution) /
/// (edge index, distribution) pairs local to graph g.
pub fn forward_graphs<S: Scalar>(
    stack: &GcnStack<S>,
    sess: &Session<S>,
    graphs: &[crate::graph::SceneGraph],
    vocab: &Vocabulary,
    node_soft: &[Vec<SoftRow<S>>],
    edge_soft: &[Vec<SoftRow<S>>],
) -> Result<StackPass<S>, crate::graph::GraphError> {
    let augmented: Vec<crate::graph::SceneGraph> = graphs
        .iter()
        .map(|g| crate::graph::add_dummy_node(g, vocab))
        .collect::<Result<_, _>>()?;
    let b = crate::graph::batch(&augmented)?;
    let mut flat_nodes: Vec<SoftRow<S>> = Vec::new();
    for (gi, rows) in node_soft.iter().enumerate() {
        for (pos, dist) in rows {
            flat_nodes.push((b.node_range(gi).start + pos, dist.clone()));
        }
    }
    // add_dummy_node appends its in_image edges after the original edges,
    // so original edge indices survive augmentation unchanged.
    let mut flat_edges: Vec<SoftRow<S>> = Vec::new();
    for (gi, rows) in edge_soft.iter().enumerate() {
        for (idx, dist) in rows {
            flat_edges.push((b.edge_range(gi).start + idx, dist.clone()));
        }
    }
    let real_rows = (0..b.graph_count())
        .map(|gi| {
            let r = b.node_range(gi);
            (r.start..r.end - 1).collect()
        })
        .collect();
    let out = stack.forward(sess, &b, &flat_nodes, &flat_edges);
    Ok(StackPass {
        batch: b,
        out,
        real_rows,
    })
}

/// Mean-pool node and edge features separately per graph, then concatenate.
/// Dummy nodes and their in_image edges are excluded, so a graph with no
/// real edges contributes zeros for the edge half.
pub fn aggregate_graph<S: Scalar>(
    node_feats: &Tensor<S>,
    pred_feats: &Tensor<S>,
    batch: &GraphBatch,
    vocab: &Vocabulary,
) -> Tensor<S> {
    let sp = vocab.specials();
    let n_graphs = batch.graph_count();
    let keep_nodes: Vec<usize> = (0..batch.node_count())
        .filter(|&i| batch.node_cats[i] != sp.image)
        .collect();
    let node_groups: Vec<usize> = keep_nodes.iter().map(|&i| batch.node_graph_id[i]).collect();
    let node_half = ops::segment_mean(
        &ops::gather_rows(node_feats, &keep_nodes),
        &node_groups,
        n_graphs,
    );
    let keep_edges: Vec<usize> = (0..batch.edge_count())
        .filter(|&e| batch.edges[e].1 != sp.in_image)
        .collect();
    let edge_half = if keep_edges.is_empty() {
        Tensor::zeros(&[n_graphs, pred_feats.cols()])
    } else {
        let edge_groups: Vec<usize> = keep_edges.iter().map(|&e| batch.edge_graph_id[e]).collect();
        ops::segment_mean(
            &ops::gather_rows(pred_feats, &keep_edges),
            &edge_groups,
            n_graphs,
        )
    };
    ops::concat_cols(&[node_half, edge_half])
}
