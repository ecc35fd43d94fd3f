//! Central finite-difference gradient verification.
//!
//! Runs at 64-bit precision only. For each checked scalar of each input,
//! the closure is re-evaluated at `x +- h` and the symmetric difference is
//! compared against the analytic gradient from the tape. Large inputs can be
//! subsampled (`max_checks`) with a seeded choice of positions; the analytic
//! backward pass itself always covers every scalar.

use rand::Rng;

use super::{with_no_grad, Tensor};
use crate::error::{DustError, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed error per scalar (relative with an absolute floor).
    pub tolerance: f64,
    /// Check at most this many positions per input (None = all).
    pub max_checks: Option<usize>,
    /// Seed for position subsampling.
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: 1e-5, tolerance: 1e-5, max_checks: None, seed: 0 }
    }
}

impl GradcheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradcheckOptions { tolerance, ..Default::default() }
    }

    pub fn subsampled(tolerance: f64, max_checks: usize, seed: u64) -> Self {
        GradcheckOptions { tolerance, max_checks: Some(max_checks), seed, ..Default::default() }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub input_index: usize,
    pub checked: usize,
    pub max_err: f64,
    pub worst_flat_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_err).fold(0.0, f64::max)
    }
}

/// Error measure: |fd - g| / max(|fd|, |g|, 1e-4). Behaves like a relative
/// error at ordinary magnitudes and like a scaled absolute error near zero.
fn err_measure(fd: f64, g: f64) -> f64 {
    (fd - g).abs() / fd.abs().max(g.abs()).max(1e-4)
}

pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    // Fresh gradient-accumulating leaves so the analytic pass is isolated.
    let leaves: Vec<Tensor<f64>> =
        inputs.iter().map(|t| Tensor::leaf(t.shape(), t.data().to_vec())).collect::<Result<_>>()?;
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(DustError::Contract {
            detail: format!("gradcheck closure must return a scalar, got shape {:?}", out.shape()),
        });
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> =
        leaves.iter().map(|l| l.take_grad().unwrap_or_else(|| vec![0.0; l.numel()])).collect();

    let mut rng = rng_from_seed(opts.seed);
    let mut reports = Vec::with_capacity(inputs.len());
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let positions: Vec<usize> = match opts.max_checks {
            Some(limit) if limit < n => {
                let mut p: Vec<usize> = (0..limit).map(|_| rng.gen_range(0..n)).collect();
                p.sort_unstable();
                p.dedup();
                p
            }
            _ => (0..n).collect(),
        };
        let mut max_err = 0.0f64;
        let mut worst = 0usize;
        for &pos in &positions {
            let eval = |delta: f64| -> Result<f64> {
                let mut probe: Vec<Tensor<f64>> = Vec::with_capacity(inputs.len());
                for (jj, orig) in inputs.iter().enumerate() {
                    if jj == ii {
                        let mut data = orig.data().to_vec();
                        data[pos] += delta;
                        probe.push(Tensor::from_vec(orig.shape(), data)?);
                    } else {
                        probe.push(orig.detach());
                    }
                }
                with_no_grad(|| f(&probe)).map(|t| t.item())
            };
            let plus = eval(opts.step)?;
            let minus = eval(-opts.step)?;
            let fd = (plus - minus) / (2.0 * opts.step);
            let e = err_measure(fd, analytic[ii][pos]);
            if e > max_err {
                max_err = e;
                worst = pos;
            }
        }
        reports.push(InputReport {
            input_index: ii,
            checked: positions.len(),
            max_err,
            worst_flat_index: worst,
        });
    }
    let passed = reports.iter().all(|r| r.max_err < opts.tolerance);
    Ok(GradcheckReport { inputs: reports, tolerance: opts.tolerance, passed })
}
