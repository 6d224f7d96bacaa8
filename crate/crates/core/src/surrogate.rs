//! Frozen, differentiable stand-ins for the pretrained downstream models:
//! an image synthesizer, a scene classifier, and an image-text aligner.
//!
//! Weights are drawn once from a seeded stream and never updated; they are
//! plain constants on the tape, so gradients flow through them to the
//! generator's soft predictions without ever accumulating on the surrogate
//! itself. Interfaces match what the losses need, so real pretrained models
//! can be swapped in behind the same signatures.

use serde::{Deserialize, Serialize};

use crate::gcn::SoftRow;
use crate::graph::{render_sentences, SceneGraph, Vocabulary};
use crate::rng::{fnv1a64, Rng};
use crate::tensor::ops;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurrogateConfig {
    pub image_size: usize,
    pub channels: usize,
    pub scene_classes: usize,
    /// Synthesizer node-embedding width.
    pub embed_dim: usize,
    /// Characterizer hidden width; pooled width is a quarter of it.
    pub hidden_dim: usize,
    /// Aligner feature width.
    pub align_dim: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            image_size: 32,
            channels: 3,
            scene_classes: 16,
            embed_dim: 16,
            hidden_dim: 64,
            align_dim: 32,
            seed: 0xf00d,
        }
    }
}

impl SurrogateConfig {
    fn validate(&self) {
        assert!(self.image_size.is_multiple_of(PATCH), "image_size must be a multiple of {PATCH}");
        assert!(self.hidden_dim.is_multiple_of(4), "hidden_dim must be divisible by 4");
    }
}

const PATCH: usize = 8;

fn frozen<S: Scalar>(seed: u64, name: &str, rows: usize, cols: usize, fan_in: usize) -> Vec<S> {
    let half = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = Rng::labeled(seed, &format!("surrogate/{name}"));
    (0..rows * cols)
        .map(|_| S::from_f64(rng.range_f64(-half, half)))
        .collect()
}

fn checksum_of<S: Scalar>(parts: &[&[S]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for v in *part {
            h = h.wrapping_mul(0x100_0000_01b3) ^ v.as_f64().to_bits();
        }
    }
    h
}

/// Predicted placement of one object blob, for inspection and tests.
#[derive(Debug, Clone, Copy)]
pub struct BlobBox {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
}

/// Frozen MLP from node embeddings to (box, appearance), rendered by
/// differentiable Gaussian splatting.
pub struct ToySynthesizer<S: Scalar> {
    cfg: SurrogateConfig,
    embed: Vec<S>,
    w1: Vec<S>,
    b1: Vec<S>,
    w2: Vec<S>,
    b2: Vec<S>,
    n_obj: usize,
    hidden: usize,
}

impl<S: Scalar> ToySynthesizer<S> {
    pub fn new(cfg: &SurrogateConfig, vocab: &Vocabulary) -> Self {
        cfg.validate();
        let n_obj = vocab.object_count();
        let e = cfg.embed_dim;
        let hidden = 2 * e;
        let out = 4 + cfg.channels;
        ToySynthesizer {
            cfg: cfg.clone(),
            embed: frozen(cfg.seed, "synth.embed", n_obj, e, n_obj),
            w1: frozen(cfg.seed, "synth.w1", e, hidden, e),
            b1: frozen(cfg.seed, "synth.b1", 1, hidden, hidden),
            w2: frozen(cfg.seed, "synth.w2", hidden, out, hidden),
            b2: frozen(cfg.seed, "synth.b2", 1, out, out),
            n_obj,
            hidden,
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum_of(&[&self.embed, &self.w1, &self.b1, &self.w2, &self.b2])
    }

    /// Image of shape [channels, H*W] from node categories with optional
    /// soft distributions. Differentiable w.r.t. the soft rows.
    pub fn synth(&self, cats: &[usize], soft: &[SoftRow<S>]) -> Tensor<S> {
        self.synth_with_boxes(cats, soft).0
    }

    pub fn synth_with_boxes(&self, cats: &[usize], soft: &[SoftRow<S>]) -> (Tensor<S>, Vec<BlobBox>) {
        assert!(!cats.is_empty(), "synth: empty graph");
        let (h, w, c) = (self.cfg.image_size, self.cfg.image_size, self.cfg.channels);
        let e = self.cfg.embed_dim;
        let table = Tensor::constant(&[self.n_obj, e], self.embed.clone());
        let base = ops::gather_rows(&table, cats);
        let embedded = if soft.is_empty() {
            base
        } else {
            let rows: Vec<usize> = soft.iter().map(|(r, _)| *r).collect();
            let dists: Vec<Tensor<S>> = soft.iter().map(|(_, d)| d.clone()).collect();
            let mixed = ops::matmul(&ops::concat_rows(&dists), &table);
            ops::replace_rows(&base, &rows, &mixed)
        };
        let hid = ops::leaky_relu(
            &ops::bcast_add(
                &ops::matmul(&embedded, &Tensor::constant(&[e, self.hidden], self.w1.clone())),
                &Tensor::constant(&[1, self.hidden], self.b1.clone()),
            ),
            0.2,
        );
        let out = ops::bcast_add(
            &ops::matmul(
                &hid,
                &Tensor::constant(&[self.hidden, 4 + c], self.w2.clone()),
            ),
            &Tensor::constant(&[1, 4 + c], self.b2.clone()),
        );

        // Pixel-center coordinate grids in [0, 1].
        let xs: Vec<S> = (0..w).map(|i| S::from_f64((i as f64 + 0.5) / w as f64)).collect();
        let ys: Vec<S> = (0..h).map(|i| S::from_f64((i as f64 + 0.5) / h as f64)).collect();
        let xs_t = Tensor::constant(&[1, w], xs);
        let ys_t = Tensor::constant(&[h, 1], ys);

        let mut channels: Vec<Option<Tensor<S>>> = vec![None; c];
        let mut boxes = Vec::with_capacity(cats.len());
        for n in 0..cats.len() {
            let row = ops::gather_rows(&out, &[n]);
            let cx = ops::sigmoid(&ops::slice_cols(&row, 0, 1));
            let cy = ops::sigmoid(&ops::slice_cols(&row, 1, 2));
            // Blob extent: sigma in [0.06, 0.31] of the image side.
            let sx = ops::add_const(&ops::scale(&ops::sigmoid(&ops::slice_cols(&row, 2, 3)), 0.25), 0.06);
            let sy = ops::add_const(&ops::scale(&ops::sigmoid(&ops::slice_cols(&row, 3, 4)), 0.25), 0.06);
            boxes.push(BlobBox {
                cx: cx.item().as_f64(),
                cy: cy.item().as_f64(),
                sx: sx.item().as_f64(),
                sy: sy.item().as_f64(),
            });
            let gx = ops::exp(&ops::neg(&ops::bcast_div(
                &ops::square(&ops::bcast_sub(&xs_t, &cx)),
                &ops::scale(&ops::square(&sx), 2.0),
            )));
            let gy = ops::exp(&ops::neg(&ops::bcast_div(
                &ops::square(&ops::bcast_sub(&ys_t, &cy)),
                &ops::scale(&ops::square(&sy), 2.0),
            )));
            let blob = ops::matmul(&gy, &gx).reshape(&[1, h * w]);
            for (ch, slot) in channels.iter_mut().enumerate() {
                let app = ops::sigmoid(&ops::slice_cols(&row, 4 + ch, 5 + ch));
                let contrib = ops::bcast_mul(&blob, &app);
                *slot = Some(match slot.take() {
                    Some(acc) => ops::add(&acc, &contrib),
                    None => contrib,
                });
            }
        }
        let rows: Vec<Tensor<S>> = channels.into_iter().map(Option::unwrap).collect();
        (ops::concat_rows(&rows), boxes)
    }
}

/// The three feature views one characterizer pass produces.
pub struct FeatureViews<S: Scalar> {
    /// [1, hidden_dim]
    pub hidden: Tensor<S>,
    /// [1, hidden_dim / 4]
    pub pooled: Tensor<S>,
    /// [1, scene_classes]
    pub logits: Tensor<S>,
}

/// Frozen convolution-free patch-MLP scene classifier.
pub struct ToyCharacterizer<S: Scalar> {
    cfg: SurrogateConfig,
    patch_idx: Vec<usize>,
    wp: Vec<S>,
    bp: Vec<S>,
    wl: Vec<S>,
    bl: Vec<S>,
    patch_len: usize,
    n_patches: usize,
}

impl<S: Scalar> ToyCharacterizer<S> {
    pub fn new(cfg: &SurrogateConfig) -> Self {
        cfg.validate();
        let (hw, c) = (cfg.image_size, cfg.channels);
        let per_side = hw / PATCH;
        let n_patches = per_side * per_side;
        let patch_len = c * PATCH * PATCH;
        // Flat index map from [C, H*W] to patch rows.
        let mut patch_idx = Vec::with_capacity(n_patches * patch_len);
        for py in 0..per_side {
            for px in 0..per_side {
                for ch in 0..c {
                    for dy in 0..PATCH {
                        for dx in 0..PATCH {
                            let y = py * PATCH + dy;
                            let x = px * PATCH + dx;
                            patch_idx.push(ch * hw * hw + y * hw + x);
                        }
                    }
                }
            }
        }
        ToyCharacterizer {
            patch_idx,
            wp: frozen(cfg.seed, "charact.wp", patch_len, cfg.hidden_dim, patch_len),
            bp: frozen(cfg.seed, "charact.bp", 1, cfg.hidden_dim, cfg.hidden_dim),
            wl: frozen(cfg.seed, "charact.wl", cfg.hidden_dim, cfg.scene_classes, cfg.hidden_dim),
            bl: frozen(cfg.seed, "charact.bl", 1, cfg.scene_classes, cfg.scene_classes),
            patch_len,
            n_patches,
            cfg: cfg.clone(),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum_of(&[&self.wp, &self.bp, &self.wl, &self.bl])
    }

    /// All three views from one forward pass over an image of shape
    /// [channels, H*W].
    pub fn features(&self, image: &Tensor<S>) -> FeatureViews<S> {
        let expect = self.cfg.channels * self.cfg.image_size * self.cfg.image_size;
        assert_eq!(image.len(), expect, "characterizer: image shape");
        let d = self.cfg.hidden_dim;
        let patches = ops::gather_flat(image, &self.patch_idx, &[self.n_patches, self.patch_len]);
        let per_patch = ops::leaky_relu(
            &ops::bcast_add(
                &ops::matmul(&patches, &Tensor::constant(&[self.patch_len, d], self.wp.clone())),
                &Tensor::constant(&[1, d], self.bp.clone()),
            ),
            0.2,
        );
        let hidden = ops::mean_rows(&per_patch);
        let pooled = ops::mean_cols(&hidden.reshape(&[d / 4, 4])).reshape(&[1, d / 4]);
        let logits = ops::bcast_add(
            &ops::matmul(
                &hidden,
                &Tensor::constant(&[d, self.cfg.scene_classes], self.wl.clone()),
            ),
            &Tensor::constant(&[1, self.cfg.scene_classes], self.bl.clone()),
        );
        FeatureViews {
            hidden,
            pooled,
            logits,
        }
    }
}

/// Frozen bag-of-token text encoder and pooled-image projector producing
/// unit vectors of equal width.
pub struct ToyAligner<S: Scalar> {
    cfg: SurrogateConfig,
    token_table: Vec<S>,
    text_proj: Vec<S>,
    image_proj: Vec<S>,
    pool_idx: Vec<usize>,
    pooled_len: usize,
}

const TOKEN_ROWS: usize = 256;
const ALIGN_POOL: usize = 8;

impl<S: Scalar> ToyAligner<S> {
    pub fn new(cfg: &SurrogateConfig) -> Self {
        cfg.validate();
        let (hw, c) = (cfg.image_size, cfg.channels);
        let per_side = hw / ALIGN_POOL;
        let pooled_len = c * per_side * per_side;
        let mut pool_idx = Vec::with_capacity(pooled_len * ALIGN_POOL * ALIGN_POOL);
        for ch in 0..c {
            for by in 0..per_side {
                for bx in 0..per_side {
                    for dy in 0..ALIGN_POOL {
                        for dx in 0..ALIGN_POOL {
                            let y = by * ALIGN_POOL + dy;
                            let x = bx * ALIGN_POOL + dx;
                            pool_idx.push(ch * hw * hw + y * hw + x);
                        }
                    }
                }
            }
        }
        ToyAligner {
            token_table: frozen(cfg.seed, "align.tokens", TOKEN_ROWS, cfg.align_dim, cfg.align_dim),
            text_proj: frozen(cfg.seed, "align.text_proj", cfg.align_dim, cfg.align_dim, cfg.align_dim),
            image_proj: frozen(cfg.seed, "align.image_proj", pooled_len, cfg.align_dim, pooled_len),
            pool_idx,
            pooled_len,
            cfg: cfg.clone(),
        }
    }

    pub fn checksum(&self) -> u64 {
        checksum_of(&[&self.token_table, &self.text_proj, &self.image_proj])
    }

    /// Unit vector for a graph: each edge becomes a sentence, isolated
    /// objects become bare prompts, tokens hash into a frozen table.
    pub fn encode_graph(&self, graph: &SceneGraph, vocab: &Vocabulary) -> Tensor<S> {
        let d = self.cfg.align_dim;
        let sentences = render_sentences(graph, vocab);
        let mut acc = vec![0.0f64; d];
        let mut count = 0usize;
        for line in &sentences {
            let mut sent = vec![0.0f64; d];
            let mut tokens = 0usize;
            for tok in line.split_whitespace() {
                let row = (fnv1a64(tok.as_bytes()) % TOKEN_ROWS as u64) as usize;
                for (i, slot) in sent.iter_mut().enumerate() {
                    *slot += self.token_table[row * d + i].as_f64();
                }
                tokens += 1;
            }
            if tokens > 0 {
                for (a, s) in acc.iter_mut().zip(&sent) {
                    *a += s / tokens as f64;
                }
                count += 1;
            }
        }
        if count > 0 {
            for a in &mut acc {
                *a /= count as f64;
            }
        }
        let bag = Tensor::constant(&[1, d], acc.into_iter().map(S::from_f64).collect());
        let proj = ops::matmul(&bag, &Tensor::constant(&[d, d], self.text_proj.clone()));
        ops::normalize_rows(&proj, 1e-10)
    }

    /// Unit vector for an image of shape [channels, H*W]; differentiable.
    pub fn encode_image(&self, image: &Tensor<S>) -> Tensor<S> {
        let d = self.cfg.align_dim;
        let blocks = ops::gather_flat(
            image,
            &self.pool_idx,
            &[self.pooled_len, ALIGN_POOL * ALIGN_POOL],
        );
        let pooled = ops::mean_cols(&blocks).reshape(&[1, self.pooled_len]);
        let proj = ops::matmul(
            &pooled,
            &Tensor::constant(&[self.pooled_len, d], self.image_proj.clone()),
        );
        ops::normalize_rows(&proj, 1e-10)
    }
}

/// Bundle used by training and evaluation when stage 2/3 losses are on.
pub struct Surrogates<S: Scalar> {
    pub config: SurrogateConfig,
    pub synth: ToySynthesizer<S>,
    pub characterizer: ToyCharacterizer<S>,
    pub aligner: ToyAligner<S>,
}

impl<S: Scalar> Surrogates<S> {
    pub fn new(cfg: &SurrogateConfig, vocab: &Vocabulary) -> Self {
        Surrogates {
            config: cfg.clone(),
            synth: ToySynthesizer::new(cfg, vocab),
            characterizer: ToyCharacterizer::new(cfg),
            aligner: ToyAligner::new(cfg),
        }
    }

    pub fn checksum(&self) -> u64 {
        self.synth
            .checksum()
            .wrapping_mul(31)
            .wrapping_add(self.characterizer.checksum())
            .wrapping_mul(31)
            .wrapping_add(self.aligner.checksum())
    }
}
