use std::fmt;
use std::str::FromStr;

use crate::error::{Result, RsmError};
use crate::kv::{render, KvMap};
use crate::model::ModelConfig;

/// A depth increment that applies from `percent` of training onwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Milestone {
    pub percent: f64,
    pub delta: usize,
}

/// Milestone lists are written `50:+8,95:+8` (the `+` is optional);
/// `none` or an empty value is the empty list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Milestones(pub Vec<Milestone>);

impl FromStr for Milestones {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Milestones(Vec::new()));
        }
        s.split(',')
            .map(|item| {
                let (p, d) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| format!("milestone `{item}` is not percent:delta"))?;
                let percent = p
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| format!("milestone percent `{p}`: {e}"))?;
                let d = d.trim();
                let delta = d
                    .strip_prefix('+')
                    .unwrap_or(d)
                    .parse::<usize>()
                    .map_err(|e| format!("milestone delta `{d}`: {e}"))?;
                Ok(Milestone { percent, delta })
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Milestones)
    }
}

impl fmt::Display for Milestones {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.0.iter().map(|m| format!("{:?}:+{}", m.percent, m.delta)).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    pub p_detach: f64,
    pub h_milestones: Vec<Milestone>,
    pub l_milestones: Vec<Milestone>,
    pub clip_norm: f64,
    pub ema_decay: Option<f64>,
    pub transition_lr_warmup_steps: u64,
    pub optimizer_reset_scale: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub puzzle_emb_lr_mult: f64,
    /// Apply a random validity-preserving symmetry to every Sudoku example.
    pub augment: bool,
    /// Write a checkpoint every this many steps (0: only the final one).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 1000,
            batch_size: 32,
            lr_max: 1e-3,
            lr_min: 1e-4,
            warmup_steps: 100,
            p_detach: 0.99,
            h_milestones: Vec::new(),
            l_milestones: Vec::new(),
            clip_norm: 1.0,
            ema_decay: None,
            transition_lr_warmup_steps: 0,
            optimizer_reset_scale: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            puzzle_emb_lr_mult: 1.0,
            augment: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.total_steps == 0 {
            errs.push("total_steps must be positive".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".to_string());
        }
        if self.warmup_steps >= self.total_steps.max(1) {
            errs.push(format!(
                "warmup_steps ({}) must be below total_steps ({})",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0) {
            errs.push("learning rates must be non-negative".to_string());
        }
        if !(0.0..=1.0).contains(&self.p_detach) {
            errs.push("p_detach must be in [0, 1]".to_string());
        }
        for (name, ms) in [
            ("h_milestones", &self.h_milestones),
            ("l_milestones", &self.l_milestones),
        ] {
            if ms.iter().any(|m| !(0.0..=100.0).contains(&m.percent)) {
                errs.push(format!("{name}: percents must lie in [0, 100]"));
            }
            if ms.windows(2).any(|w| w[1].percent <= w[0].percent) {
                errs.push(format!("{name}: percents must be strictly increasing"));
            }
        }
        if !(self.clip_norm > 0.0) {
            errs.push("clip_norm must be positive".to_string());
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                errs.push("ema_decay must be in [0, 1)".to_string());
            }
        }
        if !(0.0..=1.0).contains(&self.optimizer_reset_scale) {
            errs.push("optimizer_reset_scale must be in [0, 1]".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("adam betas must be in [0, 1)".to_string());
        }
        if !(self.adam_eps > 0.0) {
            errs.push("adam_eps must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RsmError::Config(errs.join("; ")))
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let f = |v: f64| format!("{v:?}");
        vec![
            ("total_steps".into(), self.total_steps.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr_max".into(), f(self.lr_max)),
            ("lr_min".into(), f(self.lr_min)),
            ("warmup_steps".into(), self.warmup_steps.to_string()),
            ("h_milestones".into(), Milestones(self.h_milestones.clone()).to_string()),
            ("l_milestones".into(), Milestones(self.l_milestones.clone()).to_string()),
            ("clip_norm".into(), f(self.clip_norm)),
            ("ema_decay".into(), self.ema_decay.map_or_else(|| "none".to_string(), f)),
            (
                "transition_lr_warmup_steps".into(),
                self.transition_lr_warmup_steps.to_string(),
            ),
            ("optimizer_reset_scale".into(), f(self.optimizer_reset_scale)),
            ("seed".into(), self.seed.to_string()),
            ("beta1".into(), f(self.beta1)),
            ("beta2".into(), f(self.beta2)),
            ("adam_eps".into(), f(self.adam_eps)),
            ("weight_decay".into(), f(self.weight_decay)),
            ("puzzle_emb_lr_mult".into(), f(self.puzzle_emb_lr_mult)),
            ("augment".into(), self.augment.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
        ]
    }

    /// Reads training keys from `kv` over `base`. `p_detach` is not read
    /// here: it lives with the model keys and the caller copies it over.
    pub fn read_from(kv: &mut KvMap, base: &TrainConfig) -> TrainConfig {
        let ema_decay = match kv.take_raw("ema_decay") {
            None => base.ema_decay,
            Some(v) if v == "none" || v.is_empty() => None,
            Some(v) => match v.parse() {
                Ok(x) => Some(x),
                Err(e) => {
                    kv.error(format!("`ema_decay`: {e}"));
                    base.ema_decay
                }
            },
        };
        TrainConfig {
            total_steps: kv.take_or("total_steps", base.total_steps),
            batch_size: kv.take_or("batch_size", base.batch_size),
            lr_max: kv.take_or("lr_max", base.lr_max),
            lr_min: kv.take_or("lr_min", base.lr_min),
            warmup_steps: kv.take_or("warmup_steps", base.warmup_steps),
            p_detach: base.p_detach,
            h_milestones: kv
                .take::<Milestones>("h_milestones")
                .map_or_else(|| base.h_milestones.clone(), |m| m.0),
            l_milestones: kv
                .take::<Milestones>("l_milestones")
                .map_or_else(|| base.l_milestones.clone(), |m| m.0),
            clip_norm: kv.take_or("clip_norm", base.clip_norm),
            ema_decay,
            transition_lr_warmup_steps: kv.take_or("transition_lr_warmup_steps", base.transition_lr_warmup_steps),
            optimizer_reset_scale: kv.take_or("optimizer_reset_scale", base.optimizer_reset_scale),
            seed: kv.take_or("seed", base.seed),
            beta1: kv.take_or("beta1", base.beta1),
            beta2: kv.take_or("beta2", base.beta2),
            adam_eps: kv.take_or("adam_eps", base.adam_eps),
            weight_decay: kv.take_or("weight_decay", base.weight_decay),
            puzzle_emb_lr_mult: kv.take_or("puzzle_emb_lr_mult", base.puzzle_emb_lr_mult),
            augment: kv.take_or("augment", base.augment),
            checkpoint_every: kv.take_or("checkpoint_every", base.checkpoint_every),
        }
    }
}

/// A training config file: model keys and training keys side by side in
/// one flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Parses `text` over `model_base` (typically the defaults with the
    /// dataset's vocabulary and grid filled in). Unknown keys, malformed
    /// values and failed validation are all reported in a single error.
    pub fn parse(text: &str, model_base: &ModelConfig) -> Result<RunConfig> {
        let mut kv = KvMap::parse(text);
        let model = ModelConfig::read_from(&mut kv, model_base);
        let mut train = TrainConfig::read_from(&mut kv, &TrainConfig::default());
        train.p_detach = model.p_detach;
        let mut errs: Vec<String> = Vec::new();
        if let Err(RsmError::Config(m)) = kv.finish() {
            errs.push(m);
        }
        for r in [model.validate(), train.validate()] {
            if let Err(e) = r {
                errs.push(match e {
                    RsmError::Config(m) => m,
                    other => other.to_string(),
                });
            }
        }
        if errs.is_empty() {
            Ok(RunConfig { model, train })
        } else {
            Err(RsmError::Config(errs.join("; ")))
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train.to_pairs());
        pairs
    }

    pub fn to_text(&self) -> String {
        render(&self.to_pairs())
    }
}
