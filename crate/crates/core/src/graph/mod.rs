//! Scene-graph data model: category-indexed objects and directed predicate
//! edges, plus the vocabulary with its special categories.
//!
//! Nodes are identified by position, not label: duplicate categories are
//! legal (a scene can hold two `tree`s). All types are immutable value
//! objects; every operation returns a new graph.

mod batch;
mod dot;
mod json;

pub use batch::{batch, unbatch, GraphBatch};
pub use dot::to_dot;
pub use json::{deserialize_graph, deserialize_vocab, serialize_graph, serialize_vocab};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub const UNKNOWN_OBJ: &str = "unknown_obj";
pub const IMAGE: &str = "image";
pub const UNKNOWN_PRED: &str = "unknown_pred";
pub const NONE_PRED: &str = "none_pred";
pub const IN_IMAGE: &str = "in_image";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph already contains an image node")]
    DummyPresent,
    #[error("expected exactly one image node, found {0}")]
    DummyCount(usize),
    #[error("unknown category label: {0}")]
    UnknownLabel(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported schema version: {0}")]
    SchemaVersion(u64),
    #[error("cannot batch an empty graph list")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Positions of the five special categories inside a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub unknown_obj: usize,
    pub image: usize,
    pub unknown_pred: usize,
    pub none_pred: usize,
    pub in_image: usize,
}

/// Object and predicate category tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    object_names: Vec<String>,
    predicate_names: Vec<String>,
    specials: Specials,
}

impl Vocabulary {
    /// Build from real category labels; the special entries are appended.
    pub fn new(objects: Vec<String>, predicates: Vec<String>) -> Result<Self> {
        if objects.is_empty() {
            return Err(GraphError::Vocab("no real object categories".into()));
        }
        if predicates.is_empty() {
            return Err(GraphError::Vocab("no real predicate categories".into()));
        }
        for label in objects.iter().chain(&predicates) {
            if [UNKNOWN_OBJ, IMAGE, UNKNOWN_PRED, NONE_PRED, IN_IMAGE].contains(&label.as_str()) {
                return Err(GraphError::Vocab(format!("reserved label: {label}")));
            }
        }
        let mut object_names = objects;
        let mut predicate_names = predicates;
        check_unique(&object_names, "object")?;
        check_unique(&predicate_names, "predicate")?;
        let specials = Specials {
            unknown_obj: object_names.len(),
            image: object_names.len() + 1,
            unknown_pred: predicate_names.len(),
            none_pred: predicate_names.len() + 1,
            in_image: predicate_names.len() + 2,
        };
        object_names.push(UNKNOWN_OBJ.into());
        object_names.push(IMAGE.into());
        predicate_names.push(UNKNOWN_PRED.into());
        predicate_names.push(NONE_PRED.into());
        predicate_names.push(IN_IMAGE.into());
        Ok(Vocabulary {
            object_names,
            predicate_names,
            specials,
        })
    }

    /// Rebuild from explicit tables, validating the invariants. Used by the
    /// JSON loader so saved vocabularies keep their index assignment.
    pub fn from_tables(
        object_names: Vec<String>,
        predicate_names: Vec<String>,
        specials: Specials,
    ) -> Result<Self> {
        check_unique(&object_names, "object")?;
        check_unique(&predicate_names, "predicate")?;
        let check = |names: &[String], idx: usize, expect: &str| -> Result<()> {
            if names.get(idx).map(String::as_str) != Some(expect) {
                return Err(GraphError::Vocab(format!(
                    "special {expect} not at index {idx}"
                )));
            }
            Ok(())
        };
        check(&object_names, specials.unknown_obj, UNKNOWN_OBJ)?;
        check(&object_names, specials.image, IMAGE)?;
        check(&predicate_names, specials.unknown_pred, UNKNOWN_PRED)?;
        check(&predicate_names, specials.none_pred, NONE_PRED)?;
        check(&predicate_names, specials.in_image, IN_IMAGE)?;
        if object_names.len() < 3 {
            return Err(GraphError::Vocab("no real object categories".into()));
        }
        if predicate_names.len() < 4 {
            return Err(GraphError::Vocab("no real predicate categories".into()));
        }
        Ok(Vocabulary {
            object_names,
            predicate_names,
            specials,
        })
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn object_count(&self) -> usize {
        self.object_names.len()
    }

    pub fn predicate_count(&self) -> usize {
        self.predicate_names.len()
    }

    /// Real (non-special) object category count.
    pub fn real_object_count(&self) -> usize {
        self.object_names.len() - 2
    }

    pub fn real_predicate_count(&self) -> usize {
        self.predicate_names.len() - 3
    }

    pub fn object_name(&self, idx: usize) -> &str {
        &self.object_names[idx]
    }

    pub fn predicate_name(&self, idx: usize) -> &str {
        &self.predicate_names[idx]
    }

    pub fn object_names(&self) -> &[String] {
        &self.object_names
    }

    pub fn predicate_names(&self) -> &[String] {
        &self.predicate_names
    }

    pub fn object_index(&self, label: &str) -> Option<usize> {
        self.object_names.iter().position(|n| n == label)
    }

    pub fn predicate_index(&self, label: &str) -> Option<usize> {
        self.predicate_names.iter().position(|n| n == label)
    }

    /// Object indices that may be predicted as enriching objects.
    pub fn is_special_object(&self, idx: usize) -> bool {
        idx == self.specials.unknown_obj || idx == self.specials.image
    }

    pub fn is_special_predicate(&self, idx: usize) -> bool {
        idx == self.specials.unknown_pred
            || idx == self.specials.none_pred
            || idx == self.specials.in_image
    }

    /// Content hash over both tables; checked when loading checkpoints.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for name in self.object_names.iter().chain(&self.predicate_names) {
            h = h.wrapping_mul(0x100_0000_01b3) ^ crate::rng::fnv1a64(name.as_bytes());
        }
        h
    }
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(GraphError::Vocab(format!("duplicate {what} label: {n}")));
        }
    }
    Ok(())
}

/// Directed edge as (subject position, predicate category, object position).
pub type Edge = (usize, usize, usize);

/// Typed multigraph of category-indexed objects and predicate edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub objects: Vec<usize>,
    pub edges: Vec<Edge>,
}

/// One structural violation found by [`SceneGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyGraph,
    ObjectOutOfRange { node: usize, category: usize },
    PredicateOutOfRange { edge: usize, category: usize },
    DanglingEndpoint { edge: usize, endpoint: usize },
    SelfLoop { edge: usize },
    DuplicateTriplet { edge: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "graph has no nodes"),
            Violation::ObjectOutOfRange { node, category } => {
                write!(f, "node {node}: object category {category} out of range")
            }
            Violation::PredicateOutOfRange { edge, category } => {
                write!(f, "edge {edge}: predicate category {category} out of range")
            }
            Violation::DanglingEndpoint { edge, endpoint } => {
                write!(f, "edge {edge}: endpoint {endpoint} is not a node")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: self-loop"),
            Violation::DuplicateTriplet { edge } => {
                write!(f, "edge {edge}: duplicate (subject, predicate, object)")
            }
        }
    }
}

impl SceneGraph {
    pub fn new(objects: Vec<usize>, edges: Vec<Edge>) -> Self {
        SceneGraph { objects, edges }
    }

    pub fn node_count(&self) -> usize {
        self.objects.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Every violated invariant, empty if the graph is well-formed.
    pub fn validate(&self, vocab: &Vocabulary) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.objects.is_empty() {
            out.push(Violation::EmptyGraph);
        }
        for (i, &cat) in self.objects.iter().enumerate() {
            if cat >= vocab.object_count() {
                out.push(Violation::ObjectOutOfRange { node: i, category: cat });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (e, &(s, p, o)) in self.edges.iter().enumerate() {
            if p >= vocab.predicate_count() {
                out.push(Violation::PredicateOutOfRange { edge: e, category: p });
            }
            for &end in &[s, o] {
                if end >= self.objects.len() {
                    out.push(Violation::DanglingEndpoint { edge: e, endpoint: end });
                }
            }
            if s == o {
                out.push(Violation::SelfLoop { edge: e });
            }
            if !seen.insert((s, p, o)) {
                out.push(Violation::DuplicateTriplet { edge: e });
            }
        }
        out
    }

    pub fn check(&self, vocab: &Vocabulary) -> Result<()> {
        let v = self.validate(vocab);
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(GraphError::Invalid(msgs.join("; ")))
        }
    }

    /// Positions of nodes that participate in no edge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let mut touched = vec![false; self.objects.len()];
        for &(s, _, o) in &self.edges {
            if s < touched.len() {
                touched[s] = true;
            }
            if o < touched.len() {
                touched[o] = true;
            }
        }
        touched
            .iter()
            .enumerate()
            .filter(|(_, &t)| !t)
            .map(|(i, _)| i)
            .collect()
    }

    /// Undirected 1-hop neighbors of a node.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(s, _, o)| {
                if s == node {
                    Some(o)
                } else if o == node {
                    Some(s)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Node-induced subgraph. `keep` must be sorted and deduplicated; node k
    /// of the result corresponds to keep[k].
    pub fn induced_subgraph(&self, keep: &[usize]) -> SceneGraph {
        self.induced_subgraph_with_edge_map(keep).0
    }

    /// Induced subgraph plus, per retained edge, its index in the original
    /// edge list.
    pub fn induced_subgraph_with_edge_map(&self, keep: &[usize]) -> (SceneGraph, Vec<usize>) {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]), "keep must be sorted");
        let remap: std::collections::HashMap<usize, usize> =
            keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let objects = keep.iter().map(|&i| self.objects[i]).collect();
        let mut edges = Vec::new();
        let mut edge_map = Vec::new();
        for (idx, &(s, p, o)) in self.edges.iter().enumerate() {
            if let (Some(&s2), Some(&o2)) = (remap.get(&s), remap.get(&o)) {
                edges.push((s2, p, o2));
                edge_map.push(idx);
            }
        }
        (SceneGraph { objects, edges }, edge_map)
    }

    /// True iff the graph is weakly connected (BFS over undirected edges).
    pub fn is_weakly_connected(&self) -> bool {
        if self.objects.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.objects.len()];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(n) = queue.pop_front() {
            for &(s, _, o) in &self.edges {
                let next = if s == n {
                    o
                } else if o == n {
                    s
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    count += 1;
                    queue.push_back(next);
                }
            }
        }
        count == self.objects.len()
    }
}

/// Append the dummy `image` node and an `in_image` edge from every original
/// node, making the graph weakly connected for batching.
pub fn add_dummy_node(graph: &SceneGraph, vocab: &Vocabulary) -> Result<SceneGraph> {
    let sp = vocab.specials();
    if graph.objects.contains(&sp.image) {
        return Err(GraphError::DummyPresent);
    }
    let mut out = graph.clone();
    let dummy = out.objects.len();
    out.objects.push(sp.image);
    for node in 0..dummy {
        out.edges.push((node, sp.in_image, dummy));
    }
    Ok(out)
}

/// Inverse of [`add_dummy_node`]: drop the single image node and every edge
/// touching it, reindexing the remaining nodes.
pub fn strip_dummy_node(graph: &SceneGraph, vocab: &Vocabulary) -> Result<SceneGraph> {
    let sp = vocab.specials();
    let dummies: Vec<usize> = graph
        .objects
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == sp.image)
        .map(|(i, _)| i)
        .collect();
    if dummies.len() != 1 {
        return Err(GraphError::DummyCount(dummies.len()));
    }
    let dummy = dummies[0];
    let keep: Vec<usize> = (0..graph.objects.len()).filter(|&i| i != dummy).collect();
    Ok(graph.induced_subgraph(&keep))
}

/// One text line per edge ("subject predicate object"), then one line per
/// isolated node. Labels are lowercased.
pub fn render_sentences(graph: &SceneGraph, vocab: &Vocabulary) -> Vec<String> {
    let mut lines = Vec::with_capacity(graph.edges.len());
    for &(s, p, o) in &graph.edges {
        lines.push(format!(
            "{} {} {}",
            vocab.object_name(graph.objects[s]).to_lowercase(),
            vocab.predicate_name(p).to_lowercase(),
            vocab.object_name(graph.objects[o]).to_lowercase()
        ));
    }
    for i in graph.isolated_nodes() {
        lines.push(vocab.object_name(graph.objects[i]).to_lowercase());
    }
    lines
}

/// Uniformly sampled connected-preferring node subset of size <= max_nodes,
/// induced with all retained edges. Deterministic given the seed.
pub fn random_subgraph(graph: &SceneGraph, max_nodes: usize, seed: u64) -> SceneGraph {
    assert!(max_nodes >= 1, "max_nodes must be >= 1");
    if max_nodes >= graph.node_count() {
        return graph.clone();
    }
    let mut rng = Rng::labeled(seed, "subgraph");
    let mut kept: Vec<usize> = Vec::with_capacity(max_nodes);
    let mut in_kept = vec![false; graph.node_count()];
    let mut frontier: Vec<usize> = Vec::new();
    let start = rng.below(graph.node_count());
    kept.push(start);
    in_kept[start] = true;
    frontier.extend(graph.neighbors(start));
    while kept.len() < max_nodes {
        frontier.retain(|&n| !in_kept[n]);
        let pick = if frontier.is_empty() {
            // disconnected remainder: jump to a random unvisited node
            let remaining: Vec<usize> =
                (0..graph.node_count()).filter(|&n| !in_kept[n]).collect();
            *rng.choose(&remaining)
        } else {
            let i = rng.below(frontier.len());
            frontier.swap_remove(i)
        };
        kept.push(pick);
        in_kept[pick] = true;
        frontier.extend(graph.neighbors(pick).into_iter().filter(|&n| !in_kept[n]));
    }
    kept.sort_unstable();
    graph.induced_subgraph(&kept)
}

#[cfg(test)]
pub(crate) fn test_vocab() -> Vocabulary {
    Vocabulary::new(
        vec!["car".into(), "road".into(), "tree".into(), "plate".into(), "bowl".into()],
        vec!["on".into(), "next to".into(), "under".into()],
    )
    .unwrap()
}
