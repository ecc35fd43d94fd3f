//! Model configuration, presets, and the `key = value` config file format.
//!
//! Config files are line oriented: blank lines and `#` comments are ignored,
//! every other line must be `key = value`, and unknown keys are hard errors.
//! A `preset = tiny|default|table2|paper` line (applied first) selects a
//! baseline that later keys override.

use crate::error::{DustError, Result};
use crate::train::TrainConfig;
use crate::wavelet::WaveletBasis;

/// Full architectural hyperparameter record.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stages: usize,
    /// Channel width per encoder stage (decoder mirrors).
    pub channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub window_size: usize,
    pub num_heads: Vec<usize>,
    pub mlp_ratio: f64,
    pub sfas_enabled: bool,
    pub cifm_enabled: bool,
    pub dcm_enabled: bool,
    pub dcm_dilations: Vec<usize>,
    pub wavelet_basis: String,
    pub rel_bias_enabled: bool,
    /// (lambda_l1, lambda_msssim, lambda_perceptual).
    pub loss_weights: (f64, f64, f64),
    /// 32 or 64; run-level scalar width.
    pub precision: u8,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 3,
            channels: vec![32, 64, 128],
            blocks_per_stage: vec![1, 1, 1],
            window_size: 4,
            num_heads: vec![2, 4, 8],
            mlp_ratio: 2.0,
            sfas_enabled: true,
            cifm_enabled: true,
            dcm_enabled: true,
            dcm_dilations: vec![1, 2, 4],
            wavelet_basis: "db1".into(),
            rel_bias_enabled: true,
            loss_weights: (1.0, 0.4, 0.01),
            precision: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Two-stage model small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            stages: 2,
            channels: vec![8, 16],
            blocks_per_stage: vec![1, 1],
            num_heads: vec![2, 4],
            dcm_dilations: vec![1, 2],
            ..Default::default()
        }
    }

    /// Desk-scale default (three stages).
    pub fn desk_default() -> Self {
        Default::default()
    }

    /// Configuration sized to land near the published 1.866M parameter
    /// budget at 256x256.
    pub fn table2() -> Self {
        ModelConfig {
            stages: 3,
            channels: vec![24, 48, 96],
            blocks_per_stage: vec![1, 1, 1],
            num_heads: vec![2, 4, 8],
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "default" => Some(Self::desk_default()),
            "table2" => Some(Self::table2()),
            "paper" => Some(Self::desk_default()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(DustError::config("stages must be >= 1"));
        }
        for (name, v) in [
            ("channels", self.channels.len()),
            ("blocks", self.blocks_per_stage.len()),
            ("num_heads", self.num_heads.len()),
        ] {
            if v != self.stages {
                return Err(DustError::config(format!(
                    "{name} has {v} entries for {} stages",
                    self.stages
                )));
            }
        }
        for (i, (&c, &h)) in self.channels.iter().zip(&self.num_heads).enumerate() {
            if c == 0 || h == 0 || c % h != 0 {
                return Err(DustError::config(format!(
                    "stage {i}: channels {c} not divisible by num_heads {h}"
                )));
            }
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) {
            return Err(DustError::config("blocks_per_stage entries must be >= 1"));
        }
        if self.window_size < 2 {
            return Err(DustError::config("window_size must be >= 2"));
        }
        if self.dcm_dilations.is_empty()
            || self.dcm_dilations.windows(2).any(|p| p[1] <= p[0])
        {
            return Err(DustError::config("dcm_dilations must be nonempty and strictly increasing"));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(DustError::config("mlp_ratio must be positive"));
        }
        WaveletBasis::from_name(&self.wavelet_basis)?;
        let (l1, l2, l3) = self.loss_weights;
        if l1 < 0.0 || l2 < 0.0 || l3 < 0.0 || (l1 == 0.0 && l2 == 0.0 && l3 == 0.0) {
            return Err(DustError::config("loss weights must be non-negative with at least one positive"));
        }
        if self.precision != 32 && self.precision != 64 {
            return Err(DustError::config(format!("precision must be 32 or 64, got {}", self.precision)));
        }
        Ok(())
    }

    /// Hidden width of the attention MLP for a stage width.
    pub fn mlp_hidden(&self, channels: usize) -> usize {
        ((channels as f64) * self.mlp_ratio).round().max(1.0) as usize
    }

    /// Canonical text form (fixed key order); embedded in checkpoints.
    pub fn to_canonical_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        s.push_str(&format!("stages = {}\n", self.stages));
        s.push_str(&format!("channels = {}\n", join(&self.channels)));
        s.push_str(&format!("blocks = {}\n", join(&self.blocks_per_stage)));
        s.push_str(&format!("window_size = {}\n", self.window_size));
        s.push_str(&format!("num_heads = {}\n", join(&self.num_heads)));
        s.push_str(&format!("mlp_ratio = {}\n", self.mlp_ratio));
        s.push_str(&format!("sfas = {}\n", self.sfas_enabled));
        s.push_str(&format!("cifm = {}\n", self.cifm_enabled));
        s.push_str(&format!("dcm = {}\n", self.dcm_enabled));
        s.push_str(&format!("dcm_dilations = {}\n", join(&self.dcm_dilations)));
        s.push_str(&format!("wavelet = {}\n", self.wavelet_basis));
        s.push_str(&format!("rel_bias = {}\n", self.rel_bias_enabled));
        s.push_str(&format!("lambda_l1 = {}\n", self.loss_weights.0));
        s.push_str(&format!("lambda_msssim = {}\n", self.loss_weights.1));
        s.push_str(&format!("lambda_perc = {}\n", self.loss_weights.2));
        s.push_str(&format!("precision = {}\n", self.precision));
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }
}

/// Model + training settings parsed from one config source.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let model = ModelConfig::preset(name)?;
        let mut train = TrainConfig::default();
        if name == "paper" {
            train.batch_size = 16;
            train.patch = 256;
            train.epochs = Some(150);
        }
        Some(RunConfig { model, train })
    }
}

fn parse_usize_list(v: &str, key: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| DustError::config(format!("bad value for {key}: '{v}'"))))
        .collect()
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| DustError::config(format!("bad value for {key}: '{v}'")))
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(DustError::config(format!("bad boolean for {key}: '{v}'"))),
    }
}

/// Parse config text into model + training settings. Unknown keys are errors.
pub fn parse_config_text(text: &str) -> Result<RunConfig> {
    // preset first, regardless of position
    let mut cfg = RunConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("preset") {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix('=') {
                let name = v.trim();
                cfg = RunConfig::preset(name)
                    .ok_or_else(|| DustError::config(format!("unknown preset '{name}'")))?;
            }
        }
    }
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(DustError::config(format!("line {}: expected 'key = value', got '{raw}'", ln + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        match key {
            "preset" => {} // handled above
            "stages" => m.stages = parse_num(value, key)?,
            "channels" => m.channels = parse_usize_list(value, key)?,
            "blocks" => m.blocks_per_stage = parse_usize_list(value, key)?,
            "window_size" => m.window_size = parse_num(value, key)?,
            "num_heads" => m.num_heads = parse_usize_list(value, key)?,
            "mlp_ratio" => m.mlp_ratio = parse_num(value, key)?,
            "sfas" => m.sfas_enabled = parse_bool(value, key)?,
            "cifm" => m.cifm_enabled = parse_bool(value, key)?,
            "dcm" => m.dcm_enabled = parse_bool(value, key)?,
            "dcm_dilations" => m.dcm_dilations = parse_usize_list(value, key)?,
            "wavelet" => m.wavelet_basis = value.to_string(),
            "rel_bias" => m.rel_bias_enabled = parse_bool(value, key)?,
            "lambda_l1" => m.loss_weights.0 = parse_num(value, key)?,
            "lambda_msssim" => m.loss_weights.1 = parse_num(value, key)?,
            "lambda_perc" => m.loss_weights.2 = parse_num(value, key)?,
            "precision" => m.precision = parse_num(value, key)?,
            "seed" => {
                m.seed = parse_num(value, key)?;
                t.seed = m.seed;
            }
            "lr" => t.lr = parse_num(value, key)?,
            "beta1" => t.beta1 = parse_num(value, key)?,
            "beta2" => t.beta2 = parse_num(value, key)?,
            "eps" => t.eps = parse_num(value, key)?,
            "batch_size" => t.batch_size = parse_num(value, key)?,
            "patch" => t.patch = parse_num(value, key)?,
            "steps" => t.steps = parse_num(value, key)?,
            "epochs" => t.epochs = Some(parse_num(value, key)?),
            "eval_every" => t.eval_every = parse_num(value, key)?,
            "eval_images" => t.eval_images = parse_num(value, key)?,
            "clip_norm" => t.clip_norm = parse_num(value, key)?,
            other => {
                return Err(DustError::config(format!("unknown config key '{other}' (line {})", ln + 1)));
            }
        }
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let cfg = ModelConfig::tiny();
        let parsed = parse_config_text(&cfg.to_canonical_text()).unwrap();
        assert_eq!(parsed.model, cfg);
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let err = parse_config_text("stagse = 3\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("stagse"), "{msg}");
    }

    #[test]
    fn preset_then_override() {
        let cfg = parse_config_text("preset = tiny\nwindow_size = 8\n").unwrap();
        assert_eq!(cfg.model.stages, 2);
        assert_eq!(cfg.model.window_size, 8);
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.num_heads = vec![3, 4, 8];
        assert!(cfg.validate().is_err());
    }
}
