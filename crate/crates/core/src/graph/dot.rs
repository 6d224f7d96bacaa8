//! Graphviz DOT rendering with optional highlighting of enriching nodes.

use std::collections::HashSet;

use super::{SceneGraph, Vocabulary};

/// Stable DOT digraph; nodes in `highlight` are drawn filled.
pub fn to_dot(graph: &SceneGraph, vocab: &Vocabulary, highlight: Option<&[usize]>) -> String {
    let marked: HashSet<usize> = highlight.unwrap_or(&[]).iter().copied().collect();
    let mut out = String::from("digraph scene {\n");
    out.push_str("  rankdir=LR;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for (i, &cat) in graph.objects.iter().enumerate() {
        let label = escape(vocab.object_name(cat));
        if marked.contains(&i) {
            out.push_str(&format!(
                "  n{i} [label=\"{label}\", style=filled, fillcolor=\"#ffd27f\"];\n"
            ));
        } else {
            out.push_str(&format!("  n{i} [label=\"{label}\"];\n"));
        }
    }
    for &(s, p, o) in &graph.edges {
        let label = escape(vocab.predicate_name(p));
        out.push_str(&format!("  n{s} -> n{o} [label=\"{label}\"];\n"));
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::super::test_vocab;
    use super::*;

    #[test]
    fn stanza_counts_match_graph() {
        let v = test_vocab();
        let g = SceneGraph::new(vec![0, 1], vec![(0, 0, 1)]);
        let dot = to_dot(&g, &v, None);
        assert_eq!(dot.matches("[label=\"").count(), 3); // 2 nodes + 1 edge
        assert!(dot.contains("n0 -> n1"));
        assert!(dot.starts_with("digraph"));
    }

    #[test]
    fn highlight_styles_only_named_nodes() {
        let v = test_vocab();
        let g = SceneGraph::new(vec![0, 1], vec![(0, 0, 1)]);
        let dot = to_dot(&g, &v, Some(&[1]));
        assert!(dot.contains("n1 [label=\"road\", style=filled"));
        assert!(!dot.contains("n0 [label=\"car\", style=filled"));
        let plain = to_dot(&g, &v, Some(&[]));
        assert!(!plain.contains("style=filled"));
    }

    #[test]
    fn output_is_stable() {
        let v = test_vocab();
        let g = SceneGraph::new(vec![0, 1, 2], vec![(0, 0, 1), (2, 1, 0)]);
        assert_eq!(to_dot(&g, &v, Some(&[2])), to_dot(&g, &v, Some(&[2])));
    }
}
