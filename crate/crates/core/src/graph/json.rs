//! JSON interchange for graphs and vocabularies.
//!
//! Graph schema (UTF-8): `{"version":1,"objects":["<label>",...],
//! "edges":[[s,"<pred>",o],...]}` with `s`/`o` zero-based node positions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GraphError, Result, SceneGraph, Specials, Vocabulary};

pub const SCHEMA_VERSION: u64 = 1;

/// Graph to JSON text; labels come from the vocabulary.
pub fn serialize_graph(graph: &SceneGraph, vocab: &Vocabulary) -> String {
    let objects: Vec<Value> = graph
        .objects
        .iter()
        .map(|&c| Value::String(vocab.object_name(c).to_string()))
        .collect();
    let edges: Vec<Value> = graph
        .edges
        .iter()
        .map(|&(s, p, o)| {
            Value::Array(vec![
                Value::from(s as u64),
                Value::String(vocab.predicate_name(p).to_string()),
                Value::from(o as u64),
            ])
        })
        .collect();
    serde_json::json!({
        "version": SCHEMA_VERSION,
        "objects": objects,
        "edges": edges,
    })
    .to_string()
}

/// JSON text to graph; labels are resolved against the vocabulary.
pub fn deserialize_graph(text: &str, vocab: &Vocabulary) -> Result<SceneGraph> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
    let version = doc
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| GraphError::Malformed("missing \"version\"".into()))?;
    if version != SCHEMA_VERSION {
        return Err(GraphError::SchemaVersion(version));
    }
    let objects = doc
        .get("objects")
        .and_then(Value::as_array)
        .ok_or_else(|| GraphError::Malformed("missing \"objects\"".into()))?;
    let edges = doc
        .get("edges")
        .and_then(Value::as_array)
        .ok_or_else(|| GraphError::Malformed("missing \"edges\"".into()))?;

    let mut cats = Vec::with_capacity(objects.len());
    for obj in objects {
        let label = obj
            .as_str()
            .ok_or_else(|| GraphError::Malformed("object label must be a string".into()))?;
        let idx = vocab
            .object_index(label)
            .ok_or_else(|| GraphError::UnknownLabel(label.to_string()))?;
        cats.push(idx);
    }
    let mut triplets = Vec::with_capacity(edges.len());
    for e in edges {
        let arr = e
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| GraphError::Malformed("edge must be [s, \"pred\", o]".into()))?;
        let s = arr[0]
            .as_u64()
            .ok_or_else(|| GraphError::Malformed("edge subject must be an index".into()))?;
        let label = arr[1]
            .as_str()
            .ok_or_else(|| GraphError::Malformed("edge predicate must be a string".into()))?;
        let o = arr[2]
            .as_u64()
            .ok_or_else(|| GraphError::Malformed("edge object must be an index".into()))?;
        let p = vocab
            .predicate_index(label)
            .ok_or_else(|| GraphError::UnknownLabel(label.to_string()))?;
        triplets.push((s as usize, p, o as usize));
    }
    Ok(SceneGraph::new(cats, triplets))
}

#[derive(Serialize, Deserialize)]
struct VocabDoc {
    objects: Vec<String>,
    predicates: Vec<String>,
    specials: Specials,
}

pub fn serialize_vocab(vocab: &Vocabulary) -> String {
    serde_json::to_string_pretty(&VocabDoc {
        objects: vocab.object_names().to_vec(),
        predicates: vocab.predicate_names().to_vec(),
        specials: vocab.specials(),
    })
    .expect("vocab to json")
}

pub fn deserialize_vocab(text: &str) -> Result<Vocabulary> {
    let doc: VocabDoc =
        serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
    Vocabulary::from_tables(doc.objects, doc.predicates, doc.specials)
}

#[cfg(test)]
mod tests {
    use super::super::test_vocab;
    use super::*;

    #[test]
    fn graph_round_trip() {
        let v = test_vocab();
        let g = SceneGraph::new(vec![0, 1, 2, 0, 4], vec![(0, 0, 1), (2, 2, 0), (3, 1, 4)]);
        let text = serialize_graph(&g, &v);
        assert_eq!(deserialize_graph(&text, &v).unwrap(), g);
    }

    #[test]
    fn missing_objects_key_is_schema_error() {
        let v = test_vocab();
        let err = deserialize_graph(r#"{"version":1,"edges":[]}"#, &v).unwrap_err();
        assert!(matches!(err, GraphError::Malformed(_)), "{err}");
    }

    #[test]
    fn unknown_label_reported() {
        let v = test_vocab();
        let err =
            deserialize_graph(r#"{"version":1,"objects":["zeppelin"],"edges":[]}"#, &v).unwrap_err();
        assert!(matches!(err, GraphError::UnknownLabel(l) if l == "zeppelin"));
    }

    #[test]
    fn version_mismatch_rejected() {
        let v = test_vocab();
        let err = deserialize_graph(r#"{"version":9,"objects":[],"edges":[]}"#, &v).unwrap_err();
        assert!(matches!(err, GraphError::SchemaVersion(9)));
    }

    #[test]
    fn vocab_round_trip() {
        let v = test_vocab();
        let text = serialize_vocab(&v);
        assert_eq!(deserialize_vocab(&text).unwrap(), v);
    }

    #[test]
    fn tampered_specials_rejected() {
        let v = test_vocab();
        let text = serialize_vocab(&v).replace("\"unknown_obj\": 5", "\"unknown_obj\": 0");
        assert!(deserialize_vocab(&text).is_err());
    }
}
