//! Mini-batch flattening: the edges of all graphs are processed by one graph
//! convolution call, with membership vectors recording which graph each node
//! and edge belongs to.

use super::{Edge, GraphError, Result, SceneGraph};

/// Flattened batch of graphs with per-row membership.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphBatch {
    /// Node categories of all graphs, concatenated.
    pub node_cats: Vec<usize>,
    /// Edge triplets with node positions offset into the flattened node list.
    pub edges: Vec<Edge>,
    /// Graph index of each node; non-decreasing.
    pub node_graph_id: Vec<usize>,
    /// Graph index of each edge; non-decreasing.
    pub edge_graph_id: Vec<usize>,
    /// First node row of each graph (plus a final sentinel).
    pub node_offsets: Vec<usize>,
    /// First edge row of each graph (plus a final sentinel).
    pub edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn graph_count(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.node_cats.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node rows [start, end) of one graph.
    pub fn node_range(&self, graph: usize) -> std::ops::Range<usize> {
        self.node_offsets[graph]..self.node_offsets[graph + 1]
    }

    pub fn edge_range(&self, graph: usize) -> std::ops::Range<usize> {
        self.edge_offsets[graph]..self.edge_offsets[graph + 1]
    }

    /// Subject and object row indices of every edge, for feature gathers.
    pub fn edge_endpoints(&self) -> (Vec<usize>, Vec<usize>) {
        let subj = self.edges.iter().map(|&(s, _, _)| s).collect();
        let obj = self.edges.iter().map(|&(_, _, o)| o).collect();
        (subj, obj)
    }
}

/// Flatten graphs into one batch. Order is preserved; `unbatch` is the
/// exact inverse.
pub fn batch(graphs: &[SceneGraph]) -> Result<GraphBatch> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let mut out = GraphBatch {
        node_cats: Vec::new(),
        edges: Vec::new(),
        node_graph_id: Vec::new(),
        edge_graph_id: Vec::new(),
        node_offsets: vec![0],
        edge_offsets: vec![0],
    };
    for (gi, g) in graphs.iter().enumerate() {
        let base = out.node_cats.len();
        out.node_cats.extend_from_slice(&g.objects);
        out.node_graph_id.extend(std::iter::repeat_n(gi, g.node_count()));
        out.edges
            .extend(g.edges.iter().map(|&(s, p, o)| (base + s, p, base + o)));
        out.edge_graph_id.extend(std::iter::repeat_n(gi, g.edge_count()));
        out.node_offsets.push(out.node_cats.len());
        out.edge_offsets.push(out.edges.len());
    }
    Ok(out)
}

/// Recover the original graph list from a batch.
pub fn unbatch(batch: &GraphBatch) -> Vec<SceneGraph> {
    (0..batch.graph_count())
        .map(|gi| {
            let nr = batch.node_range(gi);
            let base = nr.start;
            let objects = batch.node_cats[nr].to_vec();
            let edges = batch.edge_range(gi)
                .map(|e| {
                    let (s, p, o) = batch.edges[e];
                    (s - base, p, o - base)
                })
                .collect();
            SceneGraph::new(objects, edges)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::test_vocab;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn membership_vectors_match_definition() {
        let g1 = SceneGraph::new(vec![0, 1, 2], vec![(0, 0, 1)]);
        let g2 = SceneGraph::new(vec![3, 4], vec![(1, 1, 0)]);
        let b = batch(&[g1, g2]).unwrap();
        assert_eq!(b.node_graph_id, vec![0, 0, 0, 1, 1]);
        assert_eq!(b.edge_graph_id, vec![0, 1]);
        assert_eq!(b.edges, vec![(0, 0, 1), (4, 1, 3)]);
    }

    #[test]
    fn single_graph_membership_all_zero() {
        let g = SceneGraph::new(vec![0, 1], vec![(0, 0, 1)]);
        let b = batch(std::slice::from_ref(&g)).unwrap();
        assert!(b.node_graph_id.iter().all(|&x| x == 0));
        assert_eq!(unbatch(&b), vec![g]);
    }

    #[test]
    fn empty_list_rejected() {
        assert!(matches!(batch(&[]), Err(GraphError::EmptyBatch)));
    }

    fn arb_graph() -> impl Strategy<Value = SceneGraph> {
        // categories within the 5 real objects / 3 real predicates of test_vocab
        (1usize..6).prop_flat_map(|n| {
            let nodes = proptest::collection::vec(0usize..5, n..=n);
            let edges = proptest::collection::vec((0usize..n, 0usize..3, 0usize..n), 0..8);
            (nodes, edges).prop_map(|(objects, mut edges)| {
                edges.retain(|&(s, _, o)| s != o);
                edges.sort_unstable();
                edges.dedup();
                SceneGraph::new(objects, edges)
            })
        })
    }

    proptest! {
        #[test]
        fn batch_unbatch_round_trips(graphs in proptest::collection::vec(arb_graph(), 1..6)) {
            let b = batch(&graphs).unwrap();
            prop_assert_eq!(unbatch(&b), graphs);
            // membership vectors are non-decreasing and complete
            prop_assert!(b.node_graph_id.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(b.edge_graph_id.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn serialize_deserialize_round_trips(g in arb_graph()) {
            let v = test_vocab();
            let text = super::super::serialize_graph(&g, &v);
            prop_assert_eq!(super::super::deserialize_graph(&text, &v).unwrap(), g);
        }

        #[test]
        fn add_dummy_always_connects(g in arb_graph()) {
            let v = test_vocab();
            let d = super::super::add_dummy_node(&g, &v).unwrap();
            prop_assert!(d.is_weakly_connected());
            prop_assert_eq!(super::super::strip_dummy_node(&d, &v).unwrap(), g);
        }
    }
}
