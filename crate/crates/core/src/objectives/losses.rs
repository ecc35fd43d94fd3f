//! Training losses: L1, multi-scale structural similarity, and their
//! weighted combination with the perceptual term.

use super::perceptual::PerceptualExtractor;
use crate::error::{DustError, Result};
use crate::real::Real;
use crate::tensor::{
    abs, add, add_scalar, clamp_min, crop_br, depthwise_filter2d, div, mean_all, mul, mul_scalar,
    powf_scalar, sub, Tensor,
};

/// Mixing weights of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub ms_ssim: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { l1: 1.0, ms_ssim: 0.4, perceptual: 0.01 }
    }
}

impl LossWeights {
    pub fn from_tuple(t: (f64, f64, f64)) -> Self {
        LossWeights { l1: t.0, ms_ssim: t.1, perceptual: t.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l1 < 0.0 || self.ms_ssim < 0.0 || self.perceptual < 0.0 {
            return Err(DustError::config("loss weights must be non-negative"));
        }
        if self.l1 == 0.0 && self.ms_ssim == 0.0 && self.perceptual == 0.0 {
            return Err(DustError::config("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Mean absolute difference.
pub fn l1_loss<P: Real>(pred: &Tensor<P>, target: &Tensor<P>) -> Result<Tensor<P>> {
    mean_all(&abs(&sub(pred, target)?)?)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Standard five-scale exponent weights (not renormalized when fewer scales
/// are used).
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalized 2-d Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; size * size];
    let mut sum = 0.0;
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            w[y * size + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Largest scale count (<= requested) supported at this resolution:
/// the window must fit after every dyadic downsampling.
pub fn usable_scales(h: usize, w: usize, requested: usize) -> Result<usize> {
    let min_dim = h.min(w);
    if min_dim < SSIM_WINDOW {
        return Err(DustError::geometry(
            "ms_ssim",
            format!("min extent {min_dim} below the {SSIM_WINDOW}-pixel window"),
        ));
    }
    let mut s = requested.clamp(1, MS_SSIM_WEIGHTS.len());
    while s > 1 && min_dim < SSIM_WINDOW << (s - 1) {
        s -= 1;
    }
    Ok(s)
}

fn gaussian_filter<P: Real>(x: &Tensor<P>, window: &[P]) -> Result<Tensor<P>> {
    depthwise_filter2d(x, window, SSIM_WINDOW, 1)
}

/// 2x2 mean-pool, stride 2, odd edge rows/columns dropped first.
fn half_resolution<P: Real>(x: &Tensor<P>) -> Result<Tensor<P>> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let x = if h % 2 != 0 || w % 2 != 0 { crop_br(x, h - h % 2, w - w % 2)? } else { x.clone() };
    let quarter = P::from_f64(0.25);
    depthwise_filter2d(&x, &[quarter; 4], 2, 2)
}

/// Multi-scale structural similarity in [0, 1]; differentiable.
///
/// Contrast/structure terms at every scale, luminance at the coarsest,
/// combined with the standard exponent weights. Fewer scales are selected
/// automatically when the image is too small (see [`usable_scales`]).
pub fn ms_ssim<P: Real>(pred: &Tensor<P>, target: &Tensor<P>, scales: usize) -> Result<Tensor<P>> {
    if pred.shape() != target.shape() {
        return Err(DustError::dim(
            "ms_ssim",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if pred.shape().len() != 4 {
        return Err(DustError::dim("ms_ssim", format!("expected NCHW, got {:?}", pred.shape())));
    }
    let used = usable_scales(pred.shape()[2], pred.shape()[3], scales)?;
    let window: Vec<P> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA).iter().map(|&v| P::from_f64(v)).collect();
    let c1 = P::from_f64(SSIM_K1 * SSIM_K1);
    let c2 = P::from_f64(SSIM_K2 * SSIM_K2);
    let two = P::from_f64(2.0);
    // guards the fractional powers; real similarity terms sit far above it
    let floor = P::from_f64(1e-12);

    let mut x = pred.clone();
    let mut y = target.clone();
    let mut value: Option<Tensor<P>> = None;
    for s in 0..used {
        let mu_x = gaussian_filter(&x, &window)?;
        let mu_y = gaussian_filter(&y, &window)?;
        let mu_xx = mul(&mu_x, &mu_x)?;
        let mu_yy = mul(&mu_y, &mu_y)?;
        let mu_xy = mul(&mu_x, &mu_y)?;
        let sigma_x = sub(&gaussian_filter(&mul(&x, &x)?, &window)?, &mu_xx)?;
        let sigma_y = sub(&gaussian_filter(&mul(&y, &y)?, &window)?, &mu_yy)?;
        let sigma_xy = sub(&gaussian_filter(&mul(&x, &y)?, &window)?, &mu_xy)?;

        let cs_map = div(
            &add_scalar(&mul_scalar(&sigma_xy, two)?, c2)?,
            &add_scalar(&add(&sigma_x, &sigma_y)?, c2)?,
        )?;
        let cs_mean = clamp_min(&mean_all(&cs_map)?, floor)?;
        let weight = P::from_f64(MS_SSIM_WEIGHTS[s]);
        let mut term = powf_scalar(&cs_mean, weight)?;
        if s == used - 1 {
            let l_map = div(
                &add_scalar(&mul_scalar(&mu_xy, two)?, c1)?,
                &add_scalar(&add(&mu_xx, &mu_yy)?, c1)?,
            )?;
            let l_mean = clamp_min(&mean_all(&l_map)?, floor)?;
            term = mul(&term, &powf_scalar(&l_mean, weight)?)?;
        } else {
            x = half_resolution(&x)?;
            y = half_resolution(&y)?;
        }
        value = Some(match value {
            Some(v) => mul(&v, &term)?,
            None => term,
        });
    }
    Ok(value.expect("at least one scale"))
}

/// `1 - ms_ssim` as a loss term.
pub fn ms_ssim_loss<P: Real>(pred: &Tensor<P>, target: &Tensor<P>, scales: usize) -> Result<Tensor<P>> {
    let v = ms_ssim(pred, target, scales)?;
    add_scalar(&mul_scalar(&v, -P::one())?, P::one())
}

/// lambda1 * L1 + lambda2 * (1 - MS-SSIM) + lambda3 * perceptual.
/// Terms with zero weight are skipped entirely.
pub fn total_loss<P: Real>(
    pred: &Tensor<P>,
    target: &Tensor<P>,
    weights: &LossWeights,
    extractor: &PerceptualExtractor<P>,
) -> Result<Tensor<P>> {
    weights.validate()?;
    let mut total: Option<Tensor<P>> = None;
    let mut accumulate = |term: Tensor<P>| -> Result<()> {
        total = Some(match total.take() {
            Some(t) => add(&t, &term)?,
            None => term,
        });
        Ok(())
    };
    if weights.l1 > 0.0 {
        accumulate(mul_scalar(&l1_loss(pred, target)?, P::from_f64(weights.l1))?)?;
    }
    if weights.ms_ssim > 0.0 {
        accumulate(mul_scalar(
            &ms_ssim_loss(pred, target, MS_SSIM_WEIGHTS.len())?,
            P::from_f64(weights.ms_ssim),
        )?)?;
    }
    if weights.perceptual > 0.0 {
        accumulate(mul_scalar(&extractor.loss(pred, target)?, P::from_f64(weights.perceptual))?)?;
    }
    Ok(total.expect("validated weights have a positive term"))
}
