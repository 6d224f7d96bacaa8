//! Ingestion of the public VG JSON layout: per-image object records plus
//! per-image relationship records, filtered by occurrence thresholds.
//!
//! Categories below their thresholds are dropped, graphs are re-indexed to
//! the filtered vocabulary, graphs left with fewer than two nodes are
//! discarded, and splits are assigned by a seeded hash of the image id so
//! re-ingestion is stable under record reordering.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Deserialize;

use crate::graph::{SceneGraph, Vocabulary};
use crate::rng::stream;

use super::{split_of, Corpus, CorpusConfig, CorpusError, Result};

#[derive(Debug, Deserialize)]
struct ImageObjects {
    image_id: u64,
    #[serde(default)]
    objects: Vec<VgObject>,
}

#[derive(Debug, Deserialize)]
struct VgObject {
    object_id: u64,
    #[serde(default)]
    names: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ImageRelationships {
    image_id: u64,
    #[serde(default)]
    relationships: Vec<VgRelationship>,
}

#[derive(Debug, Deserialize)]
struct VgRelationship {
    predicate: String,
    subject: VgEndpoint,
    object: VgEndpoint,
}

#[derive(Debug, Deserialize)]
struct VgEndpoint {
    object_id: u64,
}

/// Counters surfaced after ingestion.
#[derive(Debug, Default, Clone)]
pub struct IngestReport {
    pub images: usize,
    pub graphs_kept: usize,
    pub objects_seen: usize,
    pub objects_kept: usize,
    pub relationships_seen: usize,
    pub relationships_kept: usize,
    pub dangling_endpoints: usize,
    pub unnamed_objects: usize,
    pub self_loops_dropped: usize,
    pub duplicate_triplets_dropped: usize,
    pub small_graphs_dropped: usize,
}

fn canonical(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Ingest objects.json + relationships.json with occurrence thresholds.
pub fn ingest_vg(
    objects_path: &Path,
    relationships_path: &Path,
    config: &CorpusConfig,
) -> Result<(Corpus, IngestReport)> {
    config.validate()?;
    let objects: Vec<ImageObjects> =
        serde_json::from_reader(BufReader::new(File::open(objects_path)?))?;
    let relationships: Vec<ImageRelationships> =
        serde_json::from_reader(BufReader::new(File::open(relationships_path)?))?;

    let mut report = IngestReport {
        images: objects.len(),
        ..Default::default()
    };

    // First pass: occurrence counts.
    let mut obj_counts: HashMap<String, usize> = HashMap::new();
    let mut pred_counts: HashMap<String, usize> = HashMap::new();
    for img in &objects {
        for o in &img.objects {
            report.objects_seen += 1;
            match o.names.first() {
                Some(name) => *obj_counts.entry(canonical(name)).or_default() += 1,
                None => report.unnamed_objects += 1,
            }
        }
    }
    for img in &relationships {
        for r in &img.relationships {
            report.relationships_seen += 1;
            *pred_counts.entry(canonical(&r.predicate)).or_default() += 1;
        }
    }

    // Vocabulary: categories at or above threshold, most frequent first,
    // ties alphabetical, so the order is stable under record shuffling.
    let pick = |counts: &HashMap<String, usize>, min: usize| -> Vec<String> {
        let mut kept: Vec<(String, usize)> = counts
            .iter()
            .filter(|(_, &c)| c >= min)
            .map(|(n, &c)| (n.clone(), c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        kept.into_iter().map(|(n, _)| n).collect()
    };
    let kept_objects = pick(&obj_counts, self_min(config.min_object_occurrences));
    let kept_predicates = pick(&pred_counts, self_min(config.min_predicate_occurrences));
    if kept_objects.is_empty() || kept_predicates.is_empty() {
        return Err(CorpusError::Empty);
    }
    let vocab = Vocabulary::new(kept_objects, kept_predicates)?;

    let rels_by_image: HashMap<u64, &ImageRelationships> =
        relationships.iter().map(|r| (r.image_id, r)).collect();

    let mut graphs = Vec::new();
    let mut splits = Vec::new();
    for img in &objects {
        // Nodes: kept-category objects in record order, one per object_id.
        let mut node_of: HashMap<u64, usize> = HashMap::new();
        let mut cats = Vec::new();
        for o in &img.objects {
            let Some(name) = o.names.first() else { continue };
            let Some(cat) = vocab.object_index(&canonical(name)) else {
                continue;
            };
            if vocab.is_special_object(cat) {
                continue;
            }
            report.objects_kept += 1;
            node_of.entry(o.object_id).or_insert_with(|| {
                cats.push(cat);
                cats.len() - 1
            });
        }
        let mut edges: Vec<(usize, usize, usize)> = Vec::new();
        if let Some(rel) = rels_by_image.get(&img.image_id) {
            for r in &rel.relationships {
                let Some(p) = vocab.predicate_index(&canonical(&r.predicate)) else {
                    continue;
                };
                if vocab.is_special_predicate(p) {
                    continue;
                }
                let (Some(&s), Some(&o)) = (
                    node_of.get(&r.subject.object_id),
                    node_of.get(&r.object.object_id),
                ) else {
                    report.dangling_endpoints += 1;
                    continue;
                };
                if s == o {
                    report.self_loops_dropped += 1;
                    continue;
                }
                if edges.contains(&(s, p, o)) {
                    report.duplicate_triplets_dropped += 1;
                    continue;
                }
                report.relationships_kept += 1;
                edges.push((s, p, o));
            }
        }
        if cats.len() < 2 {
            report.small_graphs_dropped += 1;
            continue;
        }
        let mut graph = SceneGraph::new(cats, edges);
        if graph.node_count() > config.max_nodes {
            graph = crate::graph::random_subgraph(
                &graph,
                config.max_nodes,
                stream(config.seed, &format!("cap/{}", img.image_id)),
            );
            if graph.node_count() < 2 {
                report.small_graphs_dropped += 1;
                continue;
            }
        }
        debug_assert!(graph.validate(&vocab).is_empty());
        report.graphs_kept += 1;
        splits.push(split_of(img.image_id, config.seed, config.split_fractions));
        graphs.push(graph);
    }
    if graphs.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok((
        Corpus {
            vocab,
            graphs,
            splits,
        },
        report,
    ))
}

/// Zero thresholds mean "keep every category that appears at least once".
fn self_min(threshold: usize) -> usize {
    threshold.max(1)
}
