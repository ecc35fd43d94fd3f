//! Frozen feature extractor backing the perceptual loss.
//!
//! Three stride-2 conv stages (3 -> 16 -> 32 -> 64 channels) with seeded
//! deterministic initialization. The weights never receive gradients;
//! identical seeds give identical features on every platform. Externally
//! trained weights can be loaded from a raw blob (see `from_raw_blob`).

use std::path::Path;

use crate::error::{DustError, Result};
use crate::net::checkpoint::crc64;
use crate::param::InitSpec;
use crate::real::Real;
use crate::rng::{rng_from_seed, SeededRng};
use crate::tensor::{conv2d, mean_all, mul, relu, sub, with_no_grad, Tensor};
use rand::Rng;

pub const PERC_MAGIC: &[u8; 8] = b"DDNPERC1";
const STAGE_CHANNELS: [usize; 4] = [3, 16, 32, 64];
const KERNEL: usize = 3;

pub struct PerceptualExtractor<P: Real> {
    /// (weight `[Cout,Cin,3,3]`, bias `[Cout]`) per stage; plain leaves, no grad.
    stages: Vec<(Tensor<P>, Tensor<P>)>,
    /// Per-stage loss weights.
    pub stage_weights: Vec<f64>,
    pub seed: u64,
}

fn sample_conv<P: Real>(rng: &mut SeededRng, cout: usize, cin: usize) -> (Tensor<P>, Tensor<P>) {
    let fan_in = cin * KERNEL * KERNEL;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<P> = (0..cout * fan_in).map(|_| P::from_f64(rng.gen_range(-bound..bound))).collect();
    let weight = Tensor::from_vec(&[cout, cin, KERNEL, KERNEL], w).expect("perc weight");
    let bias = Tensor::zeros(&[cout]);
    (weight, bias)
}

impl<P: Real> PerceptualExtractor<P> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let stages = (0..STAGE_CHANNELS.len() - 1)
            .map(|i| sample_conv(&mut rng, STAGE_CHANNELS[i + 1], STAGE_CHANNELS[i]))
            .collect();
        PerceptualExtractor { stages, stage_weights: vec![1.0; STAGE_CHANNELS.len() - 1], seed }
    }

    /// Per-stage feature maps (post-ReLU), halving resolution each stage.
    pub fn features(&self, x: &Tensor<P>) -> Result<Vec<Tensor<P>>> {
        if x.shape().len() != 4 || x.shape()[1] != 3 {
            return Err(DustError::dim("perceptual", format!("expected [N,3,H,W], got {:?}", x.shape())));
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (w, b) in &self.stages {
            cur = relu(&conv2d(&cur, w, Some(b), 2, 1, 1)?)?;
            feats.push(cur.clone());
        }
        Ok(feats)
    }

    /// Weighted mean-squared feature distance; gradients flow to `pred` only.
    pub fn loss(&self, pred: &Tensor<P>, target: &Tensor<P>) -> Result<Tensor<P>> {
        if pred.shape() != target.shape() {
            return Err(DustError::dim(
                "perceptual",
                format!("{:?} vs {:?}", pred.shape(), target.shape()),
            ));
        }
        let fp = self.features(pred)?;
        let ft = with_no_grad(|| self.features(target))?;
        let mut total: Option<Tensor<P>> = None;
        for ((a, b), &w) in fp.iter().zip(&ft).zip(&self.stage_weights) {
            let d = sub(a, &b.detach())?;
            let term = crate::tensor::mul_scalar(&mean_all(&mul(&d, &d)?)?, P::from_f64(w))?;
            total = Some(match total {
                Some(t) => crate::tensor::add(&t, &term)?,
                None => term,
            });
        }
        total.ok_or_else(|| DustError::config("perceptual extractor has no stages"))
    }

    /// Content hash of all weights (frozen-parameter check).
    pub fn weight_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for (w, b) in &self.stages {
            for &v in w.data() {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            for &v in b.data() {
                bytes.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        crc64(&bytes)
    }

    pub fn init_spec(&self) -> InitSpec {
        InitSpec::UniformFanIn { fan_in: STAGE_CHANNELS[0] * KERNEL * KERNEL }
    }

    /// Load externally supplied weights. Raw blob layout (little-endian):
    /// magic "DDNPERC1", u32 stage count, then per stage:
    /// weight u8 rank + rank*u64 extents + f64 scalars, bias u64 len + f64
    /// scalars. Stage shapes must match the built-in 3->16->32->64 layout.
    pub fn from_raw_blob(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(DustError::io(path.display().to_string(), "truncated blob"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != PERC_MAGIC {
            return Err(DustError::io(path.display().to_string(), "bad perceptual blob magic"));
        }
        let n_stages = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if n_stages != STAGE_CHANNELS.len() - 1 {
            return Err(DustError::io(
                path.display().to_string(),
                format!("expected {} stages, got {n_stages}", STAGE_CHANNELS.len() - 1),
            ));
        }
        let mut stages = Vec::with_capacity(n_stages);
        for i in 0..n_stages {
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
            }
            let expect = [STAGE_CHANNELS[i + 1], STAGE_CHANNELS[i], KERNEL, KERNEL];
            if shape != expect {
                return Err(DustError::io(
                    path.display().to_string(),
                    format!("stage {i} weight shape {:?}, expected {:?}", shape, expect),
                ));
            }
            let numel: usize = shape.iter().product();
            let wdata: Vec<P> = take(&mut pos, numel * 8)?
                .chunks_exact(8)
                .map(|c| P::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            let blen = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            if blen != expect[0] {
                return Err(DustError::io(path.display().to_string(), format!("stage {i} bias len {blen}")));
            }
            let bdata: Vec<P> = take(&mut pos, blen * 8)?
                .chunks_exact(8)
                .map(|c| P::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            stages.push((Tensor::from_vec(&shape, wdata)?, Tensor::from_vec(&[blen], bdata)?));
        }
        Ok(PerceptualExtractor { stages, stage_weights: vec![1.0; n_stages], seed: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = rng_from_seed(seed);
        let data: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[1, 3, h, w], data).unwrap()
    }

    #[test]
    fn identical_inputs_give_zero_loss() {
        let ex = PerceptualExtractor::<f64>::new(7);
        let x = sample_image(1, 16, 16);
        let loss = ex.loss(&x, &x).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn same_seed_same_features_and_hash() {
        let a = PerceptualExtractor::<f64>::new(3);
        let b = PerceptualExtractor::<f64>::new(3);
        assert_eq!(a.weight_hash(), b.weight_hash());
        let x = sample_image(2, 16, 16);
        let fa = a.features(&x).unwrap();
        let fb = b.features(&x).unwrap();
        for (u, v) in fa.iter().zip(&fb) {
            assert_eq!(u.data(), v.data());
        }
    }

    #[test]
    fn extractor_receives_no_gradient() {
        let ex = PerceptualExtractor::<f64>::new(5);
        let pred = Tensor::leaf(&[1, 3, 8, 8], sample_image(4, 8, 8).data().to_vec()).unwrap();
        let target = sample_image(9, 8, 8);
        let loss = ex.loss(&pred, &target).unwrap();
        loss.backward().unwrap();
        assert!(pred.grad().is_some());
        for (w, b) in &ex.stages {
            assert!(w.grad().is_none());
            assert!(b.grad().is_none());
        }
    }
}
