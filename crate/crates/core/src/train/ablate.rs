//! Ablation harness: train the base configuration and single-toggle
//! variants on identical seeds and data, and tabulate the final metrics.

use super::{train, SyntheticSource, TrainConfig};
use crate::error::{DustError, Result};
use crate::net::accounting::count_params;
use crate::net::config::ModelConfig;
use crate::net::model::DedustNet;
use crate::objectives::perceptual::PerceptualExtractor;
use crate::real::Real;
use crate::rng::derive_seed;
use crate::synth::SynthOptions;

/// Ablatable pieces: modules and loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toggle {
    Sfas,
    Cifm,
    Dcm,
    RelBias,
    MsSsimTerm,
    PerceptualTerm,
}

impl Toggle {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sfas" => Ok(Toggle::Sfas),
            "cifm" => Ok(Toggle::Cifm),
            "dcm" => Ok(Toggle::Dcm),
            "rel_bias" => Ok(Toggle::RelBias),
            "ms_ssim_term" => Ok(Toggle::MsSsimTerm),
            "perceptual_term" => Ok(Toggle::PerceptualTerm),
            other => Err(DustError::config(format!(
                "unknown toggle '{other}' (sfas|cifm|dcm|rel_bias|ms_ssim_term|perceptual_term)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Toggle::Sfas => "sfas",
            Toggle::Cifm => "cifm",
            Toggle::Dcm => "dcm",
            Toggle::RelBias => "rel_bias",
            Toggle::MsSsimTerm => "ms_ssim_term",
            Toggle::PerceptualTerm => "perceptual_term",
        }
    }

    /// Apply "without this piece" to a config. Loss-term toggles change only
    /// the mixing weights, never the architecture.
    pub fn apply_off(&self, cfg: &mut ModelConfig) {
        match self {
            Toggle::Sfas => cfg.sfas_enabled = false,
            Toggle::Cifm => cfg.cifm_enabled = false,
            Toggle::Dcm => cfg.dcm_enabled = false,
            Toggle::RelBias => cfg.rel_bias_enabled = false,
            Toggle::MsSsimTerm => cfg.loss_weights.1 = 0.0,
            Toggle::PerceptualTerm => cfg.loss_weights.2 = 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub best_psnr: f64,
    pub best_ssim: f64,
    pub final_loss: f64,
}

/// Train one variant to completion and report its metrics.
fn run_variant<P: Real>(
    label: &str,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    n_base: usize,
    sink: &mut dyn FnMut(&str),
) -> Result<AblationRow> {
    let model = DedustNet::<P>::new(model_cfg)?;
    let opts = SynthOptions::default();
    let base_extent = train_cfg.patch + train_cfg.patch / 2;
    let source = SyntheticSource::<P>::new(n_base, base_extent, train_cfg.seed, opts.clone())?;
    let eval = SyntheticSource::<P>::eval_pairs(
        train_cfg.eval_images,
        train_cfg.patch,
        derive_seed(train_cfg.seed, "ablate_eval", 0),
        &opts,
    )?;
    let extractor = PerceptualExtractor::<P>::new(derive_seed(model.cfg.seed, "perceptual", 0));
    sink(&format!("# variant {label}: {} params", count_params(&model)));
    let outcome = train(&model, &source, &eval, train_cfg, &extractor, Some(sink))?;
    Ok(AblationRow {
        variant: label.to_string(),
        params: count_params(&model),
        best_psnr: outcome.best_psnr,
        best_ssim: outcome.best_ssim,
        final_loss: outcome.log.steps.last().map(|r| r.loss).unwrap_or(f64::NAN),
    })
}

/// Train the full configuration plus one variant per toggle, all under
/// identical seeds and data streams.
pub fn ablate<P: Real>(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    toggles: &[Toggle],
    n_base_images: usize,
    sink: &mut dyn FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(toggles.len() + 1);
    rows.push(run_variant::<P>("full", base_model.clone(), base_train, n_base_images, sink)?);
    for t in toggles {
        let mut cfg = base_model.clone();
        t.apply_off(&mut cfg);
        rows.push(run_variant::<P>(&format!("w/o {}", t.name()), cfg, base_train, n_base_images, sink)?);
    }
    Ok(rows)
}

/// Fixed-width comparison table.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant              params      psnr_db   ssim     final_loss\n");
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:<11} {:<9.3} {:<8.4} {:.6}\n",
            r.variant, r.params, r.best_psnr, r.best_ssim, r.final_loss
        ));
    }
    s
}
