//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are rejected. Recognized keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | model, data and evaluation seed |
//! | `arm` | `warmup` | `multimodal_only`, `hybrid` or `warmup` |
//! | `steps` | 1000 | fine-tuning steps |
//! | `eta` | 250 | multimodal-only warmup length (warmup arm) |
//! | `mix` | `1:1` | multimodal:linguistic ratio after warmup |
//! | `eval_interval` | 250 | steps between metric records |
//! | `lr`, `scale_lr`, `momentum`, `weight_decay`, `grad_clip` | see [`SgdConfig`] | optimizer |
//! | `batch_size` | 8 | sequences per fine-tuning batch |
//! | `lm_window` | 32 | tokens per linguistic sequence |
//! | `eval_multimodal` | 64 | held-out multimodal samples |
//! | `eval_windows` | 8 | held-out linguistic windows |
//! | `pretrain_steps`, `pretrain_lr`, `pretrain_batch`, `pretrain_window` | see [`PretrainConfig`] | language pretraining |
//! | `corpus` | none | UTF-8 text file; absent means the synthetic grammar |
//! | `output` | `runs` | output directory |
//! | `d_model`, `n_layers`, `n_heads`, `max_seq`, `d_vision`, `projector_hidden`, `group_size`, `bits` | see [`ToyConfig`] | model shape |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Arm, MixRatio, WarmupSchedule};
use crate::error::{config_err, Error, Result};
use crate::model::{PretrainConfig, SgdConfig, ToyConfig};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "QSLAW_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ToyConfig,
    pub arm: Arm,
    pub eta: u64,
    pub mix: MixRatio,
    pub sgd: SgdConfig,
    pub steps: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub lm_window: usize,
    pub eval_multimodal: usize,
    pub eval_windows: usize,
    pub pretrain: PretrainConfig,
    pub corpus: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ToyConfig::default(),
            arm: Arm::Warmup,
            eta: 250,
            mix: MixRatio::ONE_TO_ONE,
            sgd: SgdConfig::default(),
            steps: 1000,
            eval_interval: 250,
            seed: 0,
            batch_size: 8,
            lm_window: 32,
            eval_multimodal: 64,
            eval_windows: 8,
            pretrain: PretrainConfig::default(),
            corpus: None,
            output: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// Parses configuration text without consulting the environment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return config_err(format!("line {}: expected key = value", n + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return config_err(format!("line {}: duplicate key {key}", n + 1));
            }
            c.set(key, value)?;
        }
        c.model.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file, then applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::parse(&text)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            c.set_seed(parse(SEED_ENV, seed.trim())?);
        }
        Ok(c)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "arm" => self.arm = v.parse()?,
            "steps" => self.steps = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "mix" => self.mix = v.parse()?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "lr" => self.sgd.lr = parse(key, v)?,
            "scale_lr" => self.sgd.scale_lr = parse(key, v)?,
            "momentum" => self.sgd.momentum = parse(key, v)?,
            "weight_decay" => self.sgd.weight_decay = parse(key, v)?,
            "grad_clip" => self.sgd.grad_clip = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lm_window" => self.lm_window = parse(key, v)?,
            "eval_multimodal" => self.eval_multimodal = parse(key, v)?,
            "eval_windows" => self.eval_windows = parse(key, v)?,
            "pretrain_steps" => self.pretrain.steps = parse(key, v)?,
            "pretrain_lr" => self.pretrain.lr = parse(key, v)?,
            "pretrain_batch" => self.pretrain.batch_size = parse(key, v)?,
            "pretrain_window" => self.pretrain.window = parse(key, v)?,
            "corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "d_model" => m.d_model = parse(key, v)?,
            "n_layers" => m.n_layers = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "max_seq" => m.max_seq = parse(key, v)?,
            "d_vision" => m.d_vision = parse(key, v)?,
            "projector_hidden" => m.projector_hidden = parse(key, v)?,
            "group_size" => m.group_size = parse(key, v)?,
            "bits" => m.bits = parse(key, v)?,
            other => return config_err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sgd.validate()?;
        if self.model.seed != self.seed {
            return config_err("model seed differs from run seed");
        }
        if self.model.bits > 4 {
            return config_err(format!("bits {} exceed the 4-bit checkpoint codes", self.model.bits));
        }
        if self.arm == Arm::Warmup && self.steps <= self.eta {
            return config_err(format!("warmup arm needs steps > eta, got {} <= {}", self.steps, self.eta));
        }
        let positive = [
            ("eval_interval", self.eval_interval as usize),
            ("batch_size", self.batch_size),
            ("lm_window", self.lm_window),
            ("eval_multimodal", self.eval_multimodal),
            ("eval_windows", self.eval_windows),
            ("pretrain_batch", self.pretrain.batch_size),
            ("pretrain_window", self.pretrain.window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return config_err(format!("{name} must be positive"));
        }
        for (name, w) in [("lm_window", self.lm_window), ("pretrain_window", self.pretrain.window)] {
            if w > self.model.max_seq {
                return config_err(format!("{name} {w} exceeds max_seq {}", self.model.max_seq));
            }
        }
        if !(self.pretrain.lr.is_finite() && self.pretrain.lr >= 0.0) {
            return config_err("pretrain_lr must be finite and non-negative");
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupSchedule {
        self.arm.schedule(self.eta, self.mix)
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn render(&self) -> String {
        let m = &self.model;
        let s = &self.sgd;
        let p = &self.pretrain;
        let corpus = self.corpus.as_ref().map(|c| c.display().to_string()).unwrap_or_default();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("arm", self.arm.to_string()),
            ("steps", self.steps.to_string()),
            ("eta", self.eta.to_string()),
            ("mix", self.mix.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("lr", s.lr.to_string()),
            ("scale_lr", s.scale_lr.to_string()),
            ("momentum", s.momentum.to_string()),
            ("weight_decay", s.weight_decay.to_string()),
            ("grad_clip", s.grad_clip.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lm_window", self.lm_window.to_string()),
            ("eval_multimodal", self.eval_multimodal.to_string()),
            ("eval_windows", self.eval_windows.to_string()),
            ("pretrain_steps", p.steps.to_string()),
            ("pretrain_lr", p.lr.to_string()),
            ("pretrain_batch", p.batch_size.to_string()),
            ("pretrain_window", p.window.to_string()),
            ("corpus", corpus),
            ("output", self.output.display().to_string()),
            ("d_model", m.d_model.to_string()),
            ("n_layers", m.n_layers.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("max_seq", m.max_seq.to_string()),
            ("d_vision", m.d_vision.to_string()),
            ("projector_hidden", m.projector_hidden.to_string()),
            ("group_size", m.group_size.to_string()),
            ("bits", m.bits.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
