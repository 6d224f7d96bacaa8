//! Data supply: a grammar-based synthetic corpus for fully offline training,
//! scene-graph ingestion from the public VG JSON layout, corpus statistics,
//! and the on-disk corpus format (graphs.jsonl + vocab.json + splits.json).

pub mod vg;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    deserialize_graph, deserialize_vocab, serialize_graph, serialize_vocab, GraphError,
    SceneGraph, Vocabulary,
};
use crate::rng::{splitmix64, u64_to_unit_f64, Rng};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("corpus dir {0}: {1}")]
    Layout(String, String),
    #[error("ingestion produced no graphs")]
    Empty,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub min_object_occurrences: usize,
    pub min_predicate_occurrences: usize,
    /// Train/val/test fractions; must sum to 1.
    pub split_fractions: (f64, f64, f64),
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            min_object_occurrences: 2000,
            min_predicate_occurrences: 500,
            split_fractions: (0.85, 0.075, 0.075),
            max_nodes: 8,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_fractions;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(CorpusError::Config(format!(
                "split fractions must be non-negative and sum to 1, got {a}/{b}/{c}"
            )));
        }
        if self.max_nodes < 2 {
            return Err(CorpusError::Config("max_nodes must be >= 2".into()));
        }
        Ok(())
    }
}

/// Deterministic split from a stable id (image id or sample index).
pub fn split_of(id: u64, seed: u64, fractions: (f64, f64, f64)) -> Split {
    let u = u64_to_unit_f64(splitmix64(seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    if u < fractions.0 {
        Split::Train
    } else if u < fractions.0 + fractions.1 {
        Split::Val
    } else {
        Split::Test
    }
}

// ---------------------------------------------------------------------------
// synthetic grammar
// ---------------------------------------------------------------------------

/// One scene template: an anchor object, satellite categories with fixed
/// anchor predicates, and intra-pair rules with fixed predicates.
#[derive(Debug, Clone)]
pub struct Template {
    pub name: &'static str,
    pub anchor: &'static str,
    /// (category, predicate toward the anchor)
    pub satellites: Vec<(&'static str, &'static str)>,
    /// (subject category, predicate, object category), both non-anchor
    pub pairs: Vec<(&'static str, &'static str, &'static str)>,
}

/// Template set with disjoint per-template object pools, structured so the
/// eliminated-object prediction task is learnable above chance.
#[derive(Debug, Clone)]
pub struct SceneGrammar {
    pub templates: Vec<Template>,
    pub predicates: Vec<&'static str>,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Probability a satellite connects to the anchor.
    pub anchor_edge_prob: f64,
    /// Probability an applicable pair rule fires.
    pub pair_edge_prob: f64,
}

impl Default for SceneGrammar {
    fn default() -> Self {
        let templates = vec![
            Template {
                name: "street",
                anchor: "road",
                satellites: vec![
                    ("car", "on"),
                    ("sign", "beside"),
                    ("sidewalk", "along"),
                    ("building", "facing"),
                ],
                pairs: vec![
                    ("sign", "near", "car"),
                    ("building", "behind", "sidewalk"),
                ],
            },
            Template {
                name: "room",
                anchor: "floor",
                satellites: vec![
                    ("chair", "on"),
                    ("table", "on"),
                    ("lamp", "above"),
                    ("window", "facing"),
                ],
                pairs: vec![
                    ("chair", "under", "table"),
                    ("lamp", "over", "table"),
                ],
            },
            Template {
                name: "field",
                anchor: "grass",
                satellites: vec![
                    ("cow", "on"),
                    ("tree", "in"),
                    ("fence", "along"),
                    ("sky", "above"),
                ],
                pairs: vec![
                    ("cow", "near", "fence"),
                    ("tree", "under", "sky"),
                ],
            },
            Template {
                name: "harbor",
                anchor: "water",
                satellites: vec![
                    ("boat", "in"),
                    ("dock", "beside"),
                    ("buoy", "in"),
                    ("bird", "over"),
                ],
                pairs: vec![
                    ("boat", "at", "dock"),
                    ("bird", "near", "boat"),
                ],
            },
        ];
        SceneGrammar {
            templates,
            predicates: vec![
                "on", "in", "near", "above", "under", "beside", "along", "behind", "over",
                "facing", "at",
            ],
            min_nodes: 3,
            max_nodes: 8,
            anchor_edge_prob: 1.0,
            pair_edge_prob: 1.0,
        }
    }
}

impl SceneGrammar {
    /// Default grammar: 4 templates over 20 object categories, trimmed to
    /// exactly 10 predicates.
    pub fn default_desk() -> Self {
        let mut g = SceneGrammar::default();
        // merge "at" into "beside" to land on 10 predicates
        g.predicates.retain(|&p| p != "at");
        for t in &mut g.templates {
            for pair in &mut t.pairs {
                if pair.1 == "at" {
                    pair.1 = "beside";
                }
            }
        }
        g
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let mut objects = Vec::new();
        for t in &self.templates {
            objects.push(t.anchor.to_string());
            for (cat, _) in &t.satellites {
                objects.push(cat.to_string());
            }
        }
        let predicates = self.predicates.iter().map(|p| p.to_string()).collect();
        Ok(Vocabulary::new(objects, predicates)?)
    }

    pub fn template(&self, name: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.name == name)
    }

    fn generate_one(&self, vocab: &Vocabulary, rng: &mut Rng) -> SceneGraph {
        let t = &self.templates[rng.below(self.templates.len())];
        let n = self.min_nodes + rng.below(self.max_nodes - self.min_nodes + 1);
        let obj = |name: &str| vocab.object_index(name).expect("grammar label in vocab");
        let pred = |name: &str| vocab.predicate_index(name).expect("grammar predicate");

        let mut categories = vec![obj(t.anchor)];
        let mut sat_names: Vec<&str> = Vec::new();
        for _ in 1..n {
            let (cat, _) = *rng.choose(&t.satellites);
            categories.push(obj(cat));
            sat_names.push(cat);
        }
        let mut edges = Vec::new();
        for (i, name) in sat_names.iter().enumerate() {
            let node = i + 1;
            if rng.chance(self.anchor_edge_prob) {
                let p = t
                    .satellites
                    .iter()
                    .find(|(c, _)| c == name)
                    .map(|(_, p)| *p)
                    .unwrap();
                edges.push((node, pred(p), 0));
            }
        }
        for (si, s_name) in sat_names.iter().enumerate() {
            for (oi, o_name) in sat_names.iter().enumerate() {
                if si == oi {
                    continue;
                }
                if let Some(&(_, p, _)) = t
                    .pairs
                    .iter()
                    .find(|&&(a, _, b)| a == *s_name && b == *o_name)
                {
                    if rng.chance(self.pair_edge_prob) {
                        edges.push((si + 1, pred(p), oi + 1));
                    }
                }
            }
        }
        SceneGraph::new(categories, edges)
    }
}

/// Deterministic synthetic corpus of `count` graphs.
pub fn generate_synthetic(
    grammar: &SceneGrammar,
    vocab: &Vocabulary,
    count: usize,
    seed: u64,
) -> Vec<SceneGraph> {
    assert!(count >= 1, "count must be >= 1");
    let mut rng = Rng::labeled(seed, "synthetic");
    (0..count).map(|_| grammar.generate_one(vocab, &mut rng)).collect()
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone, Serialize)]
pub struct CorpusStats {
    pub graph_count: usize,
    pub node_histogram: BTreeMap<usize, usize>,
    pub edge_histogram: BTreeMap<usize, usize>,
    pub category_frequencies: BTreeMap<String, usize>,
    pub predicate_frequencies: BTreeMap<String, usize>,
}

pub fn corpus_stats(graphs: &[SceneGraph], vocab: &Vocabulary) -> CorpusStats {
    let mut stats = CorpusStats {
        graph_count: graphs.len(),
        ..Default::default()
    };
    for g in graphs {
        *stats.node_histogram.entry(g.node_count()).or_default() += 1;
        *stats.edge_histogram.entry(g.edge_count()).or_default() += 1;
        for &c in &g.objects {
            *stats
                .category_frequencies
                .entry(vocab.object_name(c).to_string())
                .or_default() += 1;
        }
        for &(_, p, _) in &g.edges {
            *stats
                .predicate_frequencies
                .entry(vocab.predicate_name(p).to_string())
                .or_default() += 1;
        }
    }
    stats
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "graphs: {}", self.graph_count)?;
        let total_nodes: usize = self.node_histogram.iter().map(|(n, c)| n * c).sum();
        let total_edges: usize = self.edge_histogram.iter().map(|(n, c)| n * c).sum();
        writeln!(f, "nodes: {total_nodes}, edges: {total_edges}")?;
        let mut cats: Vec<_> = self.category_frequencies.iter().collect();
        cats.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        write!(f, "top categories:")?;
        for (name, count) in cats.iter().take(8) {
            write!(f, " {name}={count}")?;
        }
        writeln!(f)?;
        let mut preds: Vec<_> = self.predicate_frequencies.iter().collect();
        preds.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        write!(f, "top predicates:")?;
        for (name, count) in preds.iter().take(8) {
            write!(f, " {name}={count}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// on-disk corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub graphs: Vec<SceneGraph>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn of_split(&self, split: Split) -> Vec<&SceneGraph> {
        self.graphs
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(g, _)| g)
            .collect()
    }

    /// Content hash over the serialized graphs and vocabulary.
    pub fn content_hash(&self) -> u64 {
        let mut h = self.vocab.content_hash();
        for g in &self.graphs {
            h = h.wrapping_mul(0x100_0000_01b3)
                ^ crate::rng::fnv1a64(serialize_graph(g, &self.vocab).as_bytes());
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
struct SplitsDoc {
    assignments: Vec<Split>,
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("vocab.json"), serialize_vocab(&corpus.vocab))?;
    let mut f = fs::File::create(dir.join("graphs.jsonl"))?;
    for g in &corpus.graphs {
        writeln!(f, "{}", serialize_graph(g, &corpus.vocab))?;
    }
    let splits = serde_json::to_string_pretty(&SplitsDoc {
        assignments: corpus.splits.clone(),
    })?;
    fs::write(dir.join("splits.json"), splits)?;
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let at = |f: &str| dir.join(f);
    let missing = |f: &str| {
        CorpusError::Layout(dir.display().to_string(), format!("missing {f}"))
    };
    let vocab_text = fs::read_to_string(at("vocab.json")).map_err(|_| missing("vocab.json"))?;
    let vocab = deserialize_vocab(&vocab_text)?;
    let gf = fs::File::open(at("graphs.jsonl")).map_err(|_| missing("graphs.jsonl"))?;
    let mut graphs = Vec::new();
    for line in BufReader::new(gf).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = deserialize_graph(&line, &vocab)?;
        g.check(&vocab)?;
        graphs.push(g);
    }
    let splits_text =
        fs::read_to_string(at("splits.json")).map_err(|_| missing("splits.json"))?;
    let splits: SplitsDoc = serde_json::from_str(&splits_text)?;
    if splits.assignments.len() != graphs.len() {
        return Err(CorpusError::Layout(
            dir.display().to_string(),
            format!(
                "splits.json lists {} assignments for {} graphs",
                splits.assignments.len(),
                graphs.len()
            ),
        ));
    }
    Ok(Corpus {
        vocab,
        graphs,
        splits: splits.assignments,
    })
}

/// Build a complete synthetic corpus with deterministic splits.
pub fn synthetic_corpus(
    grammar: &SceneGrammar,
    count: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Corpus> {
    let vocab = grammar.vocabulary()?;
    let graphs = generate_synthetic(grammar, &vocab, count, seed);
    let splits = (0..graphs.len())
        .map(|i| split_of(i as u64, seed, fractions))
        .collect();
    Ok(Corpus {
        vocab,
        graphs,
        splits,
    })
}
