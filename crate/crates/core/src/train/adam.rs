//! Adam with bias correction, optional global-norm gradient clipping, and a
//! NaN guard that aborts before any parameter is touched.

use super::TrainConfig;
use crate::error::{DustError, Result};
use crate::net::checkpoint::OptimSnapshot;
use crate::param::ParamSet;
use crate::real::Real;

pub struct AdamState<P: Real> {
    pub step: u64,
    pub first: Vec<Vec<P>>,
    pub second: Vec<Vec<P>>,
}

impl<P: Real> AdamState<P> {
    pub fn new(params: &ParamSet<P>) -> Self {
        AdamState {
            step: 0,
            first: params.iter().map(|p| vec![P::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![P::zero(); p.numel()]).collect(),
        }
    }

    pub fn from_snapshot(s: OptimSnapshot<P>) -> Self {
        AdamState { step: s.step, first: s.first, second: s.second }
    }

    pub fn to_snapshot(&self) -> OptimSnapshot<P> {
        OptimSnapshot { step: self.step, first: self.first.clone(), second: self.second.clone() }
    }
}

/// One optimizer step. `grads` must align with the parameter order.
/// Returns the pre-clip global gradient norm.
pub fn adam_step<P: Real>(
    params: &ParamSet<P>,
    grads: &[Vec<P>],
    state: &mut AdamState<P>,
    cfg: &TrainConfig,
) -> Result<f64> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(DustError::dim("adam_step", "gradient/moment count mismatch"));
    }
    // abort before mutating anything
    let mut sq_norm = 0.0f64;
    for (p, g) in params.iter().zip(grads) {
        if g.len() != p.numel() {
            return Err(DustError::dim("adam_step", format!("gradient shape mismatch for {}", p.name())));
        }
        for &v in g {
            let v = v.as_f64();
            if !v.is_finite() {
                return Err(DustError::NonFinite {
                    op: "adam_step",
                    detail: format!("gradient of parameter '{}'", p.name()),
                });
            }
            sq_norm += v * v;
        }
    }
    let norm = sq_norm.sqrt();
    let clip_scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        P::from_f64(cfg.clip_norm / (norm + 1e-12))
    } else {
        P::one()
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = P::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = P::from_f64(1.0 - cfg.beta2.powi(t));
    let b1 = P::from_f64(cfg.beta1);
    let b2 = P::from_f64(cfg.beta2);
    let lr = P::from_f64(cfg.lr);
    let eps = P::from_f64(cfg.eps);

    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let old = p.tensor();
        let mut new_data = old.data().to_vec();
        for i in 0..g.len() {
            let gi = g[i] * clip_scale;
            m[i] = b1 * m[i] + (P::one() - b1) * gi;
            v[i] = b2 * v[i] + (P::one() - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            new_data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.set_data(new_data)?;
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::InitSpec;
    use crate::rng::rng_from_seed;

    fn scalar_param(value: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let mut rng = rng_from_seed(0);
        let p = ps.create("w", &[1], InitSpec::Zeros, &mut rng).unwrap();
        p.set_data(vec![value]).unwrap();
        ps
    }

    fn cfg() -> TrainConfig {
        TrainConfig { clip_norm: 0.0, ..Default::default() }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let ps = scalar_param(1.5);
        let mut st = AdamState::new(&ps);
        for _ in 0..5 {
            adam_step(&ps, &[vec![0.0]], &mut st, &cfg()).unwrap();
        }
        assert_eq!(ps.find("w").unwrap().tensor().data(), &[1.5]);
        assert_eq!(st.first[0][0], 0.0);
        assert_eq!(st.second[0][0], 0.0);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // g = 1 at step 1: m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
        let ps = scalar_param(0.0);
        let mut st = AdamState::new(&ps);
        let c = cfg();
        adam_step(&ps, &[vec![1.0]], &mut st, &c).unwrap();
        let w = ps.find("w").unwrap().tensor().data()[0];
        let expected = -c.lr / (1.0 + c.eps);
        assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
    }

    #[test]
    fn matches_reference_trajectory_on_quadratic() {
        // f(w) = w^2, grad = 2w, 10 steps; reference coded independently.
        let c = cfg();
        let ps = scalar_param(1.0);
        let mut st = AdamState::new(&ps);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=10 {
            let w = ps.find("w").unwrap().tensor().data()[0];
            adam_step(&ps, &[vec![2.0 * w]], &mut st, &c).unwrap();

            let g = 2.0 * w_ref;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t));
            let vh = v / (1.0 - c.beta2.powi(t));
            w_ref -= c.lr * mh / (vh.sqrt() + c.eps);
            let w_new = ps.find("w").unwrap().tensor().data()[0];
            assert!((w_new - w_ref).abs() < 1e-10, "step {t}: {w_new} vs {w_ref}");
        }
    }

    #[test]
    fn nan_gradient_aborts_before_update() {
        let ps = scalar_param(2.0);
        let mut st = AdamState::new(&ps);
        let err = adam_step(&ps, &[vec![f64::NAN]], &mut st, &cfg()).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("'w'"), "{msg}");
        assert_eq!(ps.find("w").unwrap().tensor().data(), &[2.0]);
        assert_eq!(st.step, 0);
    }
}
