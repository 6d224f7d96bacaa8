//! Scene-graph critic: a pair of discriminators scoring graph realness.
//!
//! The global branch runs a full GCN over the graph; the local branch runs a
//! two-layers-shallower GCN over the enriching node's 1-hop neighborhood (a
//! uniformly sampled node's neighborhood for real graphs, keeping both input
//! distributions comparable). Pooled node/edge vectors from both branches
//! are concatenated into a fusion MLP that emits one realness logit.
//!
//! Enriched graphs arrive with soft category distributions on the new node
//! and predicted predicate distributions on the new edges, embedded as
//! probability-weighted mixtures so generator gradients flow through the
//! discrete structure.

use thiserror::Error;

use crate::gcn::{
    aggregate_graph, forward_graphs, ArchSpec, GcnError, GcnStack, HeadSpec, SoftRow,
};
use crate::graph::{GraphError, SceneGraph, Vocabulary};
use crate::nn::{FcSettings, Mlp};
use crate::rng::Rng;
use crate::tensor::ops;
use crate::tensor::{ParamSet, Scalar, Session, Tensor};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error("empty enriching node set")]
    EmptyEnriching,
    #[error("soft distribution does not sum to 1 (got {0})")]
    NotNormalized(f64),
}

pub type Result<T> = std::result::Result<T, CriticError>;

#[derive(Debug, Clone)]
pub struct CriticConfig {
    pub d_emb: usize,
    /// Global-branch architecture; the local branch drops the last two
    /// GConv layers.
    pub arch: ArchSpec,
    pub gconv: FcSettings,
    pub fc: FcSettings,
    pub fusion_layers: usize,
}

/// A graph plus optional soft rows standing in for discrete predictions.
#[derive(Clone)]
pub struct SoftGraph<S: Scalar> {
    pub graph: SceneGraph,
    /// (node position, distribution over object categories)
    pub node_soft: Vec<SoftRow<S>>,
    /// (edge index, distribution over predicate categories)
    pub edge_soft: Vec<SoftRow<S>>,
}

impl<S: Scalar> SoftGraph<S> {
    pub fn hard(graph: SceneGraph) -> Self {
        SoftGraph {
            graph,
            node_soft: Vec::new(),
            edge_soft: Vec::new(),
        }
    }

    fn check_normalized(&self) -> Result<()> {
        for (_, dist) in self.node_soft.iter().chain(&self.edge_soft) {
            let sum: f64 = dist.values().iter().map(|v| v.as_f64()).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(CriticError::NotNormalized(sum));
            }
        }
        Ok(())
    }
}

/// What the local branch should focus on.
#[derive(Debug, Clone)]
pub enum LocalFocus {
    /// Enriched graph: the enriching node positions.
    Enriching(Vec<usize>),
    /// Real graph: a node is sampled uniformly.
    Sampled,
}

pub struct CriticModel<S: Scalar> {
    pub global_gcn: GcnStack<S>,
    pub local_gcn: GcnStack<S>,
    fusion: Mlp<S>,
    fusion_split: usize,
}

impl<S: Scalar> CriticModel<S> {
    pub fn new(ps: &mut ParamSet<S>, vocab: &Vocabulary, cfg: &CriticConfig) -> Result<Self> {
        let global_gcn = GcnStack::new(
            ps,
            "critic.glob",
            vocab,
            cfg.d_emb,
            &cfg.arch,
            cfg.gconv,
            cfg.fc,
            HeadSpec::None,
            false,
        )?;
        let local_arch = cfg.arch.truncate_layers(2)?;
        let local_gcn = GcnStack::new(
            ps,
            "critic.loc",
            vocab,
            cfg.d_emb,
            &local_arch,
            cfg.gconv,
            cfg.fc,
            HeadSpec::None,
            false,
        )?;
        let fusion_split = 2 * global_gcn.d_last();
        let fusion_in = fusion_split + 2 * local_gcn.d_last();
        let mut dims = vec![fusion_in; cfg.fusion_layers];
        dims.push(1);
        let fusion = Mlp::new(ps, "critic.fusion", &dims, cfg.fc);
        Ok(CriticModel {
            global_gcn,
            local_gcn,
            fusion,
            fusion_split,
        })
    }

    /// Width of the global half of the fusion input (ablation hook).
    pub fn fusion_split(&self) -> usize {
        self.fusion_split
    }
}

/// Node-induced subgraph on the focus nodes and their 1-hop neighbors,
/// carrying over any soft rows that survive the cut.
pub fn local_subgraph<S: Scalar>(input: &SoftGraph<S>, focus: &[usize]) -> Result<SoftGraph<S>> {
    if focus.is_empty() {
        return Err(CriticError::EmptyEnriching);
    }
    let mut keep: Vec<usize> = focus.to_vec();
    for &f in focus {
        keep.extend(input.graph.neighbors(f));
    }
    keep.sort_unstable();
    keep.dedup();
    let (sub, edge_map) = input.graph.induced_subgraph_with_edge_map(&keep);
    let node_soft = input
        .node_soft
        .iter()
        .filter_map(|(pos, dist)| {
            keep.binary_search(pos).ok().map(|new| (new, dist.clone()))
        })
        .collect();
    let edge_soft = input
        .edge_soft
        .iter()
        .filter_map(|(idx, dist)| {
            edge_map
                .iter()
                .position(|&orig| orig == *idx)
                .map(|new| (new, dist.clone()))
        })
        .collect();
    Ok(SoftGraph {
        graph: sub,
        node_soft,
        edge_soft,
    })
}

/// Realness logits for a batch of graphs, one scalar per graph.
pub fn score_batch<S: Scalar>(
    critic: &CriticModel<S>,
    sess: &Session<S>,
    vocab: &Vocabulary,
    items: &[(SoftGraph<S>, LocalFocus)],
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    assert!(!items.is_empty(), "score_batch: empty");
    let mut globals = Vec::with_capacity(items.len());
    let mut locals = Vec::with_capacity(items.len());
    for (sg, focus) in items {
        sg.check_normalized()?;
        globals.push(sg.clone());
        let focus_nodes = match focus {
            LocalFocus::Enriching(nodes) => nodes.clone(),
            LocalFocus::Sampled => vec![rng.below(sg.graph.node_count())],
        };
        locals.push(local_subgraph(sg, &focus_nodes)?);
    }

    let run = |stack: &GcnStack<S>, graphs: &[SoftGraph<S>]| -> Result<Tensor<S>> {
        let plain: Vec<SceneGraph> = graphs.iter().map(|g| g.graph.clone()).collect();
        let node_soft: Vec<Vec<SoftRow<S>>> =
            graphs.iter().map(|g| g.node_soft.clone()).collect();
        let edge_soft: Vec<Vec<SoftRow<S>>> =
            graphs.iter().map(|g| g.edge_soft.clone()).collect();
        let pass = forward_graphs(stack, sess, &plain, vocab, &node_soft, &edge_soft)?;
        Ok(aggregate_graph(
            &pass.out.node_l,
            &pass.out.pred_l,
            &pass.batch,
            vocab,
        ))
    };
    let g_vec = run(&critic.global_gcn, &globals)?;
    let l_vec = run(&critic.local_gcn, &locals)?;
    let fused = ops::concat_cols(&[g_vec, l_vec]);
    Ok(critic.fusion.forward(sess, &fused))
}

/// Single-graph convenience over [`score_batch`].
pub fn score<S: Scalar>(
    critic: &CriticModel<S>,
    sess: &Session<S>,
    vocab: &Vocabulary,
    graph: SoftGraph<S>,
    enriching: Option<Vec<usize>>,
    rng: &mut Rng,
) -> Result<S> {
    let focus = match enriching {
        Some(nodes) => LocalFocus::Enriching(nodes),
        None => LocalFocus::Sampled,
    };
    let t = score_batch(critic, sess, vocab, &[(graph, focus)], rng)?;
    Ok(t.item())
}
