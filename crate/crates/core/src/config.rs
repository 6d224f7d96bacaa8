//! Run configuration: plain-text key=value with sections, covering every
//! searched hyperparameter. Unknown keys are rejected by name; parse, emit,
//! and parse again is the identity.

use thiserror::Error;

use crate::critic::CriticConfig;
use crate::enricher::EnricherConfig;
use crate::gcn::ArchSpec;
use crate::losses::{LossWeights, SceneMode};
use crate::nn::{Activation, FcSettings, Norm};
use crate::tensor::AdamConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {0}: unknown section [{1}]")]
    UnknownSection(usize, String),
    #[error("line {0}: unknown key `{1}` in section [{2}]")]
    UnknownKey(usize, String, String),
    #[error("line {0}: bad value for `{1}`: {2}")]
    BadValue(usize, String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Complete training configuration. The default value reproduces the best
/// reported configuration (batch 32, GConv dropout 0.1 with no norm and
/// LeakyReLU, weights 1000/1/0.1/100/0.1/200/0 with hpooled_l1 scene
/// features, generator embed 256 with the flat five-multiplier architecture,
/// discriminator embed 16 updated every 200 steps, Adam at 1e-4).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [run]
    pub seed: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_interval: u64,
    pub patience: usize,
    pub teacher_force: bool,
    // [gconv]
    pub gconv_dropout: f64,
    pub gconv_norm: Norm,
    pub gconv_activation: Activation,
    // [loss]
    pub w_obj: f64,
    pub w_edges: f64,
    pub w_gan: f64,
    pub w_pred_avail: f64,
    pub w_pred_not_avail: f64,
    pub w_scene: f64,
    pub w_align: f64,
    pub scene_mode: SceneMode,
    pub gan_saturating: bool,
    // [generator]
    pub g_embed_dim: usize,
    pub g_arch: String,
    pub g_fc_dropout: f64,
    pub g_fc_norm: Norm,
    pub g_fc_activation: Activation,
    pub g_classifier_layers: usize,
    pub g_edge_layers: usize,
    // [discriminator]
    pub d_embed_dim: usize,
    pub d_arch: String,
    pub d_update_every: u64,
    // [optimizer]
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            batch_size: 32,
            max_steps: 5000,
            eval_interval: 500,
            patience: 10,
            teacher_force: true,
            gconv_dropout: 0.1,
            gconv_norm: Norm::None,
            gconv_activation: Activation::LeakyRelu,
            w_obj: 1000.0,
            w_edges: 1.0,
            w_gan: 0.1,
            w_pred_avail: 100.0,
            w_pred_not_avail: 0.1,
            w_scene: 200.0,
            w_align: 0.0,
            scene_mode: SceneMode::HpooledL1,
            gan_saturating: false,
            g_embed_dim: 256,
            g_arch: "1 1 1 1 1".into(),
            g_fc_dropout: 0.1,
            g_fc_norm: Norm::Batch,
            g_fc_activation: Activation::LeakyRelu,
            g_classifier_layers: 2,
            g_edge_layers: 2,
            d_embed_dim: 16,
            d_arch: "1 1 1/2 1/2 1/4 1/4 1/8 1/8 1/8".into(),
            d_update_every: 200,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values. Used both for
    /// file parsing and for CLI flag overrides.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::from("run");
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = ln + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !["run", "gconv", "loss", "generator", "discriminator", "optimizer"]
                    .contains(&name)
                {
                    return Err(ConfigError::UnknownSection(lineno, name.to_string()));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax(lineno))?;
            self.set(&section, key.trim(), value.trim(), lineno)?;
        }
        Ok(())
    }

    /// Apply one `section.key=value` override (CLI `--set`).
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or(ConfigError::Syntax(0))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or(ConfigError::Syntax(0))?;
        self.set(section, key, value.trim(), 0)
    }

    fn set(&mut self, section: &str, key: &str, value: &str, ln: usize) -> Result<()> {
        let bad = |what: &str| ConfigError::BadValue(ln, key.to_string(), what.to_string());
        macro_rules! parse_as {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(&e.to_string()))?
            };
        }
        let parse_norm = |v: &str| Norm::parse(v).ok_or_else(|| bad("one of none|batch|layer"));
        let parse_act =
            |v: &str| Activation::parse(v).ok_or_else(|| bad("one of relu|leaky_relu|prelu"));
        match (section, key) {
            ("run", "seed") => self.seed = parse_as!(u64),
            ("run", "batch_size") => self.batch_size = parse_as!(usize),
            ("run", "max_steps") => self.max_steps = parse_as!(u64),
            ("run", "eval_interval") => self.eval_interval = parse_as!(u64),
            ("run", "patience") => self.patience = parse_as!(usize),
            ("run", "teacher_force") => self.teacher_force = parse_as!(bool),
            ("gconv", "dropout") => self.gconv_dropout = parse_as!(f64),
            ("gconv", "norm") => self.gconv_norm = parse_norm(value)?,
            ("gconv", "activation") => self.gconv_activation = parse_act(value)?,
            ("loss", "obj") => self.w_obj = parse_as!(f64),
            ("loss", "edges") => self.w_edges = parse_as!(f64),
            ("loss", "gan") => self.w_gan = parse_as!(f64),
            ("loss", "pred_avail") => self.w_pred_avail = parse_as!(f64),
            ("loss", "pred_not_avail") => self.w_pred_not_avail = parse_as!(f64),
            ("loss", "scene") => self.w_scene = parse_as!(f64),
            ("loss", "align") => self.w_align = parse_as!(f64),
            ("loss", "scene_mode") => {
                self.scene_mode = SceneMode::parse(value).ok_or_else(|| {
                    bad("one of logit_l1|logit_l2|logit_ce|hidden_l1|hidden_l2|hpooled_l1|hpooled_l2")
                })?
            }
            ("loss", "gan_saturating") => self.gan_saturating = parse_as!(bool),
            ("generator", "embed_dim") => self.g_embed_dim = parse_as!(usize),
            ("generator", "arch") => self.g_arch = value.to_string(),
            ("generator", "fc_dropout") => self.g_fc_dropout = parse_as!(f64),
            ("generator", "fc_norm") => self.g_fc_norm = parse_norm(value)?,
            ("generator", "fc_activation") => self.g_fc_activation = parse_act(value)?,
            ("generator", "classifier_layers") => self.g_classifier_layers = parse_as!(usize),
            ("generator", "edge_layers") => self.g_edge_layers = parse_as!(usize),
            ("discriminator", "embed_dim") => self.d_embed_dim = parse_as!(usize),
            ("discriminator", "arch") => self.d_arch = value.to_string(),
            ("discriminator", "update_every") => self.d_update_every = parse_as!(u64),
            ("optimizer", "lr") => self.lr = parse_as!(f64),
            ("optimizer", "beta1") => self.beta1 = parse_as!(f64),
            ("optimizer", "beta2") => self.beta2 = parse_as!(f64),
            _ => {
                return Err(ConfigError::UnknownKey(
                    ln,
                    key.to_string(),
                    section.to_string(),
                ))
            }
        }
        Ok(())
    }

    pub fn emit(&self) -> String {
        let mut s = String::new();
        s.push_str("[run]\n");
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("max_steps = {}\n", self.max_steps));
        s.push_str(&format!("eval_interval = {}\n", self.eval_interval));
        s.push_str(&format!("patience = {}\n", self.patience));
        s.push_str(&format!("teacher_force = {}\n", self.teacher_force));
        s.push_str("\n[gconv]\n");
        s.push_str(&format!("dropout = {}\n", fmt_f64(self.gconv_dropout)));
        s.push_str(&format!("norm = {}\n", self.gconv_norm.name()));
        s.push_str(&format!("activation = {}\n", self.gconv_activation.name()));
        s.push_str("\n[loss]\n");
        s.push_str(&format!("obj = {}\n", fmt_f64(self.w_obj)));
        s.push_str(&format!("edges = {}\n", fmt_f64(self.w_edges)));
        s.push_str(&format!("gan = {}\n", fmt_f64(self.w_gan)));
        s.push_str(&format!("pred_avail = {}\n", fmt_f64(self.w_pred_avail)));
        s.push_str(&format!("pred_not_avail = {}\n", fmt_f64(self.w_pred_not_avail)));
        s.push_str(&format!("scene = {}\n", fmt_f64(self.w_scene)));
        s.push_str(&format!("align = {}\n", fmt_f64(self.w_align)));
        s.push_str(&format!("scene_mode = {}\n", self.scene_mode.name()));
        s.push_str(&format!("gan_saturating = {}\n", self.gan_saturating));
        s.push_str("\n[generator]\n");
        s.push_str(&format!("embed_dim = {}\n", self.g_embed_dim));
        s.push_str(&format!("arch = {}\n", self.g_arch));
        s.push_str(&format!("fc_dropout = {}\n", fmt_f64(self.g_fc_dropout)));
        s.push_str(&format!("fc_norm = {}\n", self.g_fc_norm.name()));
        s.push_str(&format!("fc_activation = {}\n", self.g_fc_activation.name()));
        s.push_str(&format!("classifier_layers = {}\n", self.g_classifier_layers));
        s.push_str(&format!("edge_layers = {}\n", self.g_edge_layers));
        s.push_str("\n[discriminator]\n");
        s.push_str(&format!("embed_dim = {}\n", self.d_embed_dim));
        s.push_str(&format!("arch = {}\n", self.d_arch));
        s.push_str(&format!("update_every = {}\n", self.d_update_every));
        s.push_str("\n[optimizer]\n");
        s.push_str(&format!("lr = {}\n", fmt_f64(self.lr)));
        s.push_str(&format!("beta1 = {}\n", fmt_f64(self.beta1)));
        s.push_str(&format!("beta2 = {}\n", fmt_f64(self.beta2)));
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.eval_interval == 0 || self.max_steps == 0 {
            return fail("max_steps and eval_interval must be >= 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be >= 1".into());
        }
        for (name, d) in [
            ("gconv.dropout", self.gconv_dropout),
            ("generator.fc_dropout", self.g_fc_dropout),
        ] {
            if !(0.0..1.0).contains(&d) {
                return fail(format!("{name} must lie in [0, 1), got {d}"));
            }
        }
        self.loss_weights()
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.g_embed_dim == 0 || self.d_embed_dim == 0 {
            return fail("embed dims must be >= 1".into());
        }
        let g_arch = ArchSpec::parse(&self.g_arch)
            .map_err(|e| ConfigError::Invalid(format!("generator.arch: {e}")))?;
        g_arch
            .dims(self.g_embed_dim)
            .map_err(|e| ConfigError::Invalid(format!("generator.arch: {e}")))?;
        let d_arch = ArchSpec::parse(&self.d_arch)
            .map_err(|e| ConfigError::Invalid(format!("discriminator.arch: {e}")))?;
        d_arch
            .dims(self.d_embed_dim)
            .map_err(|e| ConfigError::Invalid(format!("discriminator.arch: {e}")))?;
        if d_arch.layer_count() <= 2 {
            return fail("discriminator.arch needs more than 2 GConv layers (the local branch drops two)".into());
        }
        if self.g_classifier_layers == 0 || self.g_edge_layers == 0 {
            return fail("classifier_layers and edge_layers must be >= 1".into());
        }
        if self.d_update_every == 0 {
            return fail("discriminator.update_every must be >= 1".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return fail(format!("optimizer.lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("optimizer.{name} must lie in [0, 1), got {b}"));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            obj: self.w_obj,
            edges: self.w_edges,
            gan: self.w_gan,
            pred_avail: self.w_pred_avail,
            pred_not_avail: self.w_pred_not_avail,
            scene: self.w_scene,
            align: self.w_align,
        }
    }

    pub fn gconv_settings(&self) -> FcSettings {
        FcSettings {
            dropout: self.gconv_dropout,
            norm: self.gconv_norm,
            activation: self.gconv_activation,
        }
    }

    pub fn fc_settings(&self) -> FcSettings {
        FcSettings {
            dropout: self.g_fc_dropout,
            norm: self.g_fc_norm,
            activation: self.g_fc_activation,
        }
    }

    pub fn enricher_config(&self) -> Result<EnricherConfig> {
        Ok(EnricherConfig {
            d_emb: self.g_embed_dim,
            arch: ArchSpec::parse(&self.g_arch)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            gconv: self.gconv_settings(),
            fc: self.fc_settings(),
            classifier_layers: self.g_classifier_layers,
            edge_layers: self.g_edge_layers,
        })
    }

    pub fn critic_config(&self) -> Result<CriticConfig> {
        Ok(CriticConfig {
            d_emb: self.d_embed_dim,
            arch: ArchSpec::parse(&self.d_arch)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            gconv: self.gconv_settings(),
            // The searched FC table applies to the generator; the critic's
            // fusion MLP keeps the same activation but no norm or dropout.
            fc: FcSettings {
                dropout: 0.0,
                norm: Norm::None,
                activation: self.g_fc_activation,
            },
            fusion_layers: 2,
        })
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reported_best_run() {
        let c = RunConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.gconv_dropout, 0.1);
        assert_eq!(c.gconv_norm, Norm::None);
        assert_eq!(c.gconv_activation, Activation::LeakyRelu);
        assert_eq!(
            (c.w_obj, c.w_edges, c.w_gan, c.w_pred_avail, c.w_pred_not_avail, c.w_scene, c.w_align),
            (1000.0, 1.0, 0.1, 100.0, 0.1, 200.0, 0.0)
        );
        assert_eq!(c.scene_mode, SceneMode::HpooledL1);
        assert_eq!(c.g_embed_dim, 256);
        assert_eq!(c.g_arch, "1 1 1 1 1");
        assert_eq!(c.g_fc_dropout, 0.1);
        assert_eq!(c.g_fc_norm, Norm::Batch);
        assert_eq!(c.g_fc_activation, Activation::LeakyRelu);
        assert_eq!(c.g_classifier_layers, 2);
        assert_eq!(c.g_edge_layers, 2);
        assert_eq!(c.d_embed_dim, 16);
        assert_eq!(c.d_arch, "1 1 1/2 1/2 1/4 1/4 1/8 1/8 1/8");
        assert_eq!(c.d_update_every, 200);
        assert_eq!(c.lr, 1e-4);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.w_scene = 0.125;
        c.g_arch = "1 4 2 2 4 1".into();
        c.scene_mode = SceneMode::LogitCe;
        let text = c.emit();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(parsed.emit(), text);
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let err = RunConfig::parse("[run]\nbatch_sise = 32\n").unwrap_err();
        match err {
            ConfigError::UnknownKey(_, key, section) => {
                assert_eq!(key, "batch_sise");
                assert_eq!(section, "run");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(matches!(
            RunConfig::parse("[runn]\n"),
            Err(ConfigError::UnknownSection(1, _))
        ));
    }

    #[test]
    fn domain_violations_rejected() {
        for (text, what) in [
            ("[gconv]\ndropout = 1.0\n", "dropout 1.0"),
            ("[loss]\nobj = -5\n", "negative weight"),
            ("[optimizer]\nlr = 0\n", "zero lr"),
            ("[discriminator]\narch = 1 1\n", "too-shallow discriminator"),
            ("[generator]\narch = 1 1/3\n", "non-integral dims"),
            ("[run]\nbatch_size = 0\n", "zero batch"),
        ] {
            assert!(RunConfig::parse(text).is_err(), "{what} accepted");
        }
    }

    #[test]
    fn overrides_apply_on_top() {
        let mut c = RunConfig::default();
        c.apply_override("generator.embed_dim=32").unwrap();
        c.apply_override("run.seed=9").unwrap();
        assert_eq!(c.g_embed_dim, 32);
        assert_eq!(c.seed, 9);
        assert!(c.apply_override("nope.key=1").is_err());
    }
}
