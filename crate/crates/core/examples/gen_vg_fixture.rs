//! Regenerates the bundled 50-image VG-layout fixture used by the
//! acceptance suite. Category and predicate counts are scheduled exactly so
//! the expected vocabulary under thresholds (2, 1) is auditable by hand.
//!
//! Raw object-name occurrences:
//!   tree 30, car 24, person 20, road 15, building 10, sign 6, dog 4,
//!   boat 2, kite 1, zebra 1   (kite and zebra fall below threshold 2)
//! Raw predicate occurrences (thresholds count every record, including the
//! degenerate ones):
//!   on 40 (39 scheduled + 1 duplicate triplet),
//!   near 30 (28 scheduled + 1 dangling endpoint + 1 self-loop),
//!   behind 12, holding 5, flying 1
//!
//! One object record has no name, exercising the unnamed counter.
//!
//! Usage: cargo run -p sg-enrich-core --example gen_vg_fixture -- <out-dir>

use std::fs;
use std::path::PathBuf;

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/tests/fixtures/vg".into())
        .into();
    fs::create_dir_all(&out).unwrap();

    let object_schedule: Vec<(&str, usize)> = vec![
        ("tree", 30),
        ("car", 24),
        ("person", 20),
        ("road", 15),
        ("building", 10),
        ("sign", 6),
        ("dog", 4),
        ("boat", 2),
        ("kite", 1),
        ("zebra", 1),
    ];
    let predicate_schedule: Vec<(&str, usize)> = vec![
        ("on", 39),
        ("near", 28),
        ("behind", 12),
        ("holding", 5),
        ("flying", 1),
    ];

    // Deal object instances round-robin across 50 images.
    let mut instances: Vec<&str> = Vec::new();
    for (name, count) in &object_schedule {
        instances.extend(std::iter::repeat_n(*name, *count));
    }
    let n_images = 50usize;
    let mut per_image: Vec<Vec<(u64, &str)>> = vec![Vec::new(); n_images];
    let mut next_id = 1000u64;
    for (i, name) in instances.iter().enumerate() {
        per_image[i % n_images].push((next_id, name));
        next_id += 1;
    }
    // One unnamed object in image 0.
    per_image[0].push((next_id, ""));

    // Candidate ordered pairs per image: consecutive forward, then
    // first-to-last, then consecutive reversed. Unnamed objects never pair.
    let mut candidates: Vec<(usize, u64, u64)> = Vec::new();
    let named = |objs: &[(u64, &str)]| -> Vec<u64> {
        objs.iter().filter(|(_, n)| !n.is_empty()).map(|(id, _)| *id).collect()
    };
    for pass in 0..3 {
        for (img, objs) in per_image.iter().enumerate() {
            let ids = named(objs);
            match pass {
                0 => {
                    for w in ids.windows(2) {
                        candidates.push((img, w[0], w[1]));
                    }
                }
                1 => {
                    if ids.len() >= 3 {
                        candidates.push((img, ids[0], ids[ids.len() - 1]));
                    }
                }
                _ => {
                    for w in ids.windows(2) {
                        candidates.push((img, w[1], w[0]));
                    }
                }
            }
        }
    }

    let mut preds: Vec<&str> = Vec::new();
    for (name, count) in &predicate_schedule {
        preds.extend(std::iter::repeat_n(*name, *count));
    }
    assert!(
        candidates.len() >= preds.len(),
        "not enough pairs: {} < {}",
        candidates.len(),
        preds.len()
    );
    let mut rels: Vec<Vec<(u64, &str, u64)>> = vec![Vec::new(); n_images];
    for ((img, s, o), p) in candidates.into_iter().zip(preds) {
        rels[img].push((s, p, o));
    }

    // Degenerate records in image 1: one duplicate of its first "on" triple,
    // one dangling "near", one self-loop "near".
    let first = rels[1][0];
    assert_eq!(first.1, "on", "schedule starts with on");
    rels[1].push(first);
    rels[1].push((first.0, "near", 999_999));
    rels[1].push((first.0, "near", first.0));

    let objects_json: Vec<serde_json::Value> = per_image
        .iter()
        .enumerate()
        .map(|(i, objs)| {
            serde_json::json!({
                "image_id": 100 + i as u64,
                "objects": objs
                    .iter()
                    .map(|(id, name)| {
                        if name.is_empty() {
                            serde_json::json!({"object_id": id, "names": []})
                        } else {
                            serde_json::json!({"object_id": id, "names": [name]})
                        }
                    })
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    let rels_json: Vec<serde_json::Value> = rels
        .iter()
        .enumerate()
        .map(|(i, rs)| {
            serde_json::json!({
                "image_id": 100 + i as u64,
                "relationships": rs
                    .iter()
                    .map(|(s, p, o)| {
                        serde_json::json!({
                            "predicate": p,
                            "subject": {"object_id": s},
                            "object": {"object_id": o},
                        })
                    })
                    .collect::<Vec<_>>(),
            })
        })
        .collect();

    fs::write(
        out.join("objects.json"),
        serde_json::to_string_pretty(&objects_json).unwrap(),
    )
    .unwrap();
    fs::write(
        out.join("relationships.json"),
        serde_json::to_string_pretty(&rels_json).unwrap(),
    )
    .unwrap();

    let mut used: std::collections::BTreeMap<&str, usize> = Default::default();
    for rs in &rels {
        for (_, p, _) in rs {
            *used.entry(p).or_default() += 1;
        }
    }
    println!("images: {n_images}");
    println!("raw predicate occurrences written: {used:?}");
}
