//! Training loop: Adam on the composite loss with periodic evaluation,
//! best-checkpoint tracking, and line-oriented run logging.

mod ablate;
mod adam;
mod data;

pub use ablate::{ablate, format_ablation_table, AblationRow, Toggle};
pub use adam::{adam_step, AdamState};
pub use data::{Batch, BatchSource, PairDirSource, SyntheticSource};

use crate::error::{DustError, Result};
use crate::net::model::DedustNet;
use crate::objectives::losses::{l1_loss, ms_ssim_loss, LossWeights, MS_SSIM_WEIGHTS};
use crate::objectives::metrics::{psnr, ssim};
use crate::objectives::perceptual::PerceptualExtractor;
use crate::real::Real;
use crate::tensor::{add, mul_scalar, with_no_grad, Tensor};

/// Optimization settings (the model architecture lives in `ModelConfig`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub patch: usize,
    pub steps: usize,
    /// When set and the data source is finite, overrides `steps` with
    /// `epochs * ceil(len / batch_size)`.
    pub epochs: Option<usize>,
    pub eval_every: usize,
    pub eval_images: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            patch: 64,
            steps: 500,
            epochs: None,
            eval_every: 100,
            eval_images: 8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(DustError::config("lr must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(DustError::config("betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(DustError::config("eps must be positive"));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return Err(DustError::config("batch_size and patch must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(DustError::config("eval_every must be >= 1"));
        }
        Ok(())
    }

    pub fn effective_steps(&self, data_len: Option<usize>) -> usize {
        match (self.epochs, data_len) {
            (Some(e), Some(n)) if n > 0 => e * n.div_ceil(self.batch_size),
            _ => self.steps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub l1: f64,
    pub msssim: f64,
    pub perc: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "step={} loss={:.6} l1={:.6} msssim={:.6} perc={:.6} gnorm={:.6}",
            self.step, self.loss, self.l1, self.msssim, self.perc, self.grad_norm
        )
    }
}

#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub step: u64,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalRecord {
    pub fn to_line(&self) -> String {
        format!("eval step={} psnr={:.6} ssim={:.6}", self.step, self.psnr, self.ssim)
    }
}

/// Per-run records plus the config snapshot they were produced under.
#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub config_text: String,
    pub wall_seconds: f64,
}

impl RunLog {
    /// Line-oriented text form (`step=... loss=...` / `eval step=...`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for line in self.config_text.lines() {
            s.push_str(&format!("# {line}\n"));
        }
        let mut ei = 0usize;
        for r in &self.steps {
            s.push_str(&r.to_line());
            s.push('\n');
            while ei < self.evals.len() && self.evals[ei].step == r.step {
                s.push_str(&self.evals[ei].to_line());
                s.push('\n');
                ei += 1;
            }
        }
        s
    }

    /// Machine-readable tab-separated copy (one table per record kind).
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("kind\tstep\tloss\tl1\tmsssim\tperc\tgnorm\tpsnr\tssim\n");
        for r in &self.steps {
            s.push_str(&format!(
                "step\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t\t\n",
                r.step, r.loss, r.l1, r.msssim, r.perc, r.grad_norm
            ));
        }
        for e in &self.evals {
            s.push_str(&format!("eval\t{}\t\t\t\t\t\t{:.6}\t{:.6}\n", e.step, e.psnr, e.ssim));
        }
        s
    }
}

pub struct TrainOutcome<P: Real> {
    pub log: RunLog,
    pub best_step: u64,
    pub best_psnr: f64,
    pub best_ssim: f64,
    /// Parameter data at the best evaluation, in parameter order.
    pub best_snapshot: Vec<Vec<P>>,
    pub optimizer: AdamState<P>,
}

fn snapshot<P: Real>(model: &DedustNet<P>) -> Vec<Vec<P>> {
    model.params().iter().map(|p| p.tensor().data().to_vec()).collect()
}

/// Overwrite model parameters from a snapshot taken by [`train`].
pub fn apply_snapshot<P: Real>(model: &DedustNet<P>, snap: &[Vec<P>]) -> Result<()> {
    if snap.len() != model.params().len() {
        return Err(DustError::dim("apply_snapshot", "parameter count mismatch"));
    }
    for (p, data) in model.params().iter().zip(snap) {
        p.set_data(data.clone())?;
    }
    Ok(())
}

/// Mean restored-vs-clean PSNR/SSIM over held-out pairs.
pub fn evaluate<P: Real>(model: &DedustNet<P>, pairs: &[(Tensor<P>, Tensor<P>)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(DustError::config("empty evaluation set"));
    }
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    for (clean, dusty) in pairs {
        let restored = with_no_grad(|| model.forward(dusty))?;
        psnr_acc += psnr(&restored, clean, 1.0)?;
        ssim_acc += ssim(&restored, clean)?;
    }
    Ok((psnr_acc / pairs.len() as f64, ssim_acc / pairs.len() as f64))
}

fn provenance_dump(batch: &Batch<impl Real>) -> String {
    batch.provenance.iter().map(|p| p.to_line()).collect::<Vec<_>>().join("; ")
}

/// Run the optimization loop. Evaluation runs every `eval_every` steps and at
/// the end; the best-PSNR parameter snapshot is returned alongside the log.
/// `sink` (when given) receives each log line as it is produced.
pub fn train<P: Real>(
    model: &DedustNet<P>,
    source: &dyn BatchSource<P>,
    eval_pairs: &[(Tensor<P>, Tensor<P>)],
    cfg: &TrainConfig,
    extractor: &PerceptualExtractor<P>,
    mut sink: Option<&mut dyn FnMut(&str)>,
) -> Result<TrainOutcome<P>> {
    cfg.validate()?;
    let weights = LossWeights::from_tuple(model.cfg.loss_weights);
    weights.validate()?;
    let started = std::time::Instant::now();
    let frozen_hash = extractor.weight_hash();
    let steps = cfg.effective_steps(source.len_hint());
    let mut state = AdamState::new(model.params());
    let mut log = RunLog { config_text: model.cfg.to_canonical_text(), ..Default::default() };
    let mut best_step = 0u64;
    let mut best_psnr = f64::NEG_INFINITY;
    let mut best_ssim = 0.0f64;
    let mut best_snapshot = snapshot(model);

    let emit = |line: &str, sink: &mut Option<&mut dyn FnMut(&str)>| {
        if let Some(s) = sink.as_mut() {
            s(line);
        }
    };

    for step in 0..steps as u64 {
        let batch = source.batch(step, cfg.batch_size, cfg.patch)?;
        let abort = |e: crate::error::DustError, batch: &Batch<P>| -> crate::error::DustError {
            DustError::NonFinite {
                op: "train",
                detail: format!("aborted at step {step}: {e}; last batch: {}", provenance_dump(batch)),
            }
        };
        let restored = model.forward(&batch.degraded).map_err(|e| abort(e, &batch))?;

        let mut l1_val = 0.0;
        let mut ms_val = 0.0;
        let mut perc_val = 0.0;
        let mut total: Option<Tensor<P>> = None;
        let accumulate = |term: Tensor<P>, total: &mut Option<Tensor<P>>| -> Result<()> {
            *total = Some(match total.take() {
                Some(t) => add(&t, &term)?,
                None => term,
            });
            Ok(())
        };
        if weights.l1 > 0.0 {
            let t = l1_loss(&restored, &batch.clean)?;
            l1_val = t.item().as_f64();
            accumulate(mul_scalar(&t, P::from_f64(weights.l1))?, &mut total)?;
        }
        if weights.ms_ssim > 0.0 {
            let t = ms_ssim_loss(&restored, &batch.clean, MS_SSIM_WEIGHTS.len())?;
            ms_val = t.item().as_f64();
            accumulate(mul_scalar(&t, P::from_f64(weights.ms_ssim))?, &mut total)?;
        }
        if weights.perceptual > 0.0 {
            let t = extractor.loss(&restored, &batch.clean)?;
            perc_val = t.item().as_f64();
            accumulate(mul_scalar(&t, P::from_f64(weights.perceptual))?, &mut total)?;
        }
        let loss = total.expect("validated weights");
        let loss_val = loss.item().as_f64();
        if !loss_val.is_finite() {
            return Err(abort(
                DustError::NonFinite { op: "loss", detail: format!("loss value {loss_val}") },
                &batch,
            ));
        }
        loss.backward().map_err(|e| abort(e, &batch))?;
        let grads: Vec<Vec<P>> = model
            .params()
            .iter()
            .map(|p| p.take_grad().unwrap_or_else(|| vec![P::zero(); p.numel()]))
            .collect();
        let gnorm = adam_step(model.params(), &grads, &mut state, cfg).map_err(|e| abort(e, &batch))?;

        let rec = StepRecord {
            step,
            loss: loss_val,
            l1: l1_val,
            msssim: ms_val,
            perc: perc_val,
            grad_norm: gnorm,
        };
        emit(&rec.to_line(), &mut sink);
        log.steps.push(rec);

        let last = step + 1 == steps as u64;
        if (step + 1) % cfg.eval_every as u64 == 0 || last {
            let (p, s) = evaluate(model, eval_pairs)?;
            let er = EvalRecord { step, psnr: p, ssim: s };
            emit(&er.to_line(), &mut sink);
            log.evals.push(er);
            if p > best_psnr {
                best_psnr = p;
                best_ssim = s;
                best_step = step;
                best_snapshot = snapshot(model);
            }
        }
    }

    if extractor.weight_hash() != frozen_hash {
        return Err(DustError::Verify {
            suite: "train".into(),
            detail: "frozen perceptual extractor changed during training".into(),
        });
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { log, best_step, best_psnr, best_ssim, best_snapshot, optimizer: state })
}
