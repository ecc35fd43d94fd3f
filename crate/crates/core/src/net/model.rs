//! The full encoder-decoder restoration network.
//!
//! stem conv -> encoder stages (DWTFormer blocks) -> DCM bottleneck ->
//! decoder stages (IDWTFormer blocks) with a CIFM at every resolution level
//! -> head conv -> global residual add with the input, clamped to [0,1].
//!
//! The head conv is zero-initialized, so an untrained model is exactly the
//! identity on its input.

use super::blocks::{Cifm, Conv2dLayer, Dcm, DwtFormerBlock, IdwtFormerBlock, MixerSpec};
use super::config::ModelConfig;
use crate::error::{DustError, Result};
use crate::param::{InitSpec, ParamSet};
use crate::real::Real;
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;
use crate::wavelet::WaveletBasis;

pub struct DedustNet<P: Real> {
    pub cfg: ModelConfig,
    basis: WaveletBasis,
    stem: Conv2dLayer<P>,
    enc: Vec<Vec<DwtFormerBlock<P>>>,
    dcm: Option<Dcm<P>>,
    /// Decoder stages indexed like the encoder (stage 0 = finest); forward
    /// walks them deepest-first.
    dec: Vec<Vec<IdwtFormerBlock<P>>>,
    /// One fusion per resolution level; `cifms[j]` pairs the feature entering
    /// encoder stage j with the decoder feature after stage j's synthesis.
    cifms: Vec<Option<Cifm<P>>>,
    head: Conv2dLayer<P>,
    params: ParamSet<P>,
}

impl<P: Real> DedustNet<P> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let basis = WaveletBasis::from_name(&cfg.wavelet_basis)?;
        let mut ps = ParamSet::new();
        let mut rng = rng_from_seed(cfg.seed);
        let s = cfg.stages;

        let stem = Conv2dLayer::build(&mut ps, &mut rng, "stem", 3, cfg.channels[0], 3, 1, 1, 1, None)?;

        let mut enc = Vec::with_capacity(s);
        for i in 0..s {
            let in_ch = if i == 0 { cfg.channels[0] } else { cfg.channels[i - 1] };
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage[i]);
            for b in 0..cfg.blocks_per_stage[i] {
                let spec = MixerSpec {
                    channels: cfg.channels[i],
                    num_heads: cfg.num_heads[i],
                    window: cfg.window_size,
                    shift: if b % 2 == 1 { cfg.window_size / 2 } else { 0 },
                    mlp_hidden: cfg.mlp_hidden(cfg.channels[i]),
                    sfas: cfg.sfas_enabled,
                    rel_bias: cfg.rel_bias_enabled,
                };
                blocks.push(DwtFormerBlock::build(
                    &mut ps,
                    &mut rng,
                    &format!("enc.stage{i}.block{b}"),
                    in_ch,
                    &spec,
                    b == 0,
                    &basis,
                )?);
            }
            enc.push(blocks);
        }

        let dcm = if cfg.dcm_enabled {
            Some(Dcm::build(&mut ps, &mut rng, "dcm", cfg.channels[s - 1], &cfg.dcm_dilations, &basis)?)
        } else {
            None
        };

        // built deepest-first to match execution order, stored by stage index
        let mut dec: Vec<Option<Vec<IdwtFormerBlock<P>>>> = (0..s).map(|_| None).collect();
        for j in (0..s).rev() {
            let out_ch = if j == 0 { cfg.channels[0] } else { cfg.channels[j - 1] };
            let n_blocks = cfg.blocks_per_stage[j];
            let mut blocks = Vec::with_capacity(n_blocks);
            for b in 0..n_blocks {
                let spec = MixerSpec {
                    channels: cfg.channels[j],
                    num_heads: cfg.num_heads[j],
                    window: cfg.window_size,
                    shift: if b % 2 == 1 { cfg.window_size / 2 } else { 0 },
                    mlp_hidden: cfg.mlp_hidden(cfg.channels[j]),
                    sfas: cfg.sfas_enabled,
                    rel_bias: cfg.rel_bias_enabled,
                };
                blocks.push(IdwtFormerBlock::build(
                    &mut ps,
                    &mut rng,
                    &format!("dec.stage{j}.block{b}"),
                    out_ch,
                    &spec,
                    b == n_blocks - 1,
                    &basis,
                )?);
            }
            dec[j] = Some(blocks);
        }
        let dec: Vec<Vec<IdwtFormerBlock<P>>> = dec.into_iter().map(|d| d.unwrap()).collect();

        let mut cifms: Vec<Option<Cifm<P>>> = Vec::with_capacity(s);
        for _ in 0..s {
            cifms.push(None);
        }
        if cfg.cifm_enabled {
            for j in (0..s).rev() {
                let ch = if j == 0 { cfg.channels[0] } else { cfg.channels[j - 1] };
                let heads = if j == 0 { cfg.num_heads[0] } else { cfg.num_heads[j - 1] };
                cifms[j] = Some(Cifm::build(
                    &mut ps,
                    &mut rng,
                    &format!("cifm.level{j}"),
                    ch,
                    heads,
                    cfg.window_size,
                )?);
            }
        }

        let head = Conv2dLayer::build(
            &mut ps,
            &mut rng,
            "head",
            cfg.channels[0],
            3,
            3,
            1,
            1,
            1,
            Some(InitSpec::Zeros),
        )?;

        Ok(DedustNet { cfg, basis, stem, enc, dcm, dec, cifms, head, params: ps })
    }

    pub fn params(&self) -> &ParamSet<P> {
        &self.params
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    /// Spatial extents must be divisible by this before calling forward.
    pub fn extent_multiple(&self) -> usize {
        1 << self.cfg.stages
    }

    /// Restore a batch of dusty images `[N,3,H,W]` in [0,1].
    pub fn forward(&self, dusty: &Tensor<P>) -> Result<Tensor<P>> {
        let s = dusty.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(DustError::dim("forward", format!("expected [N,3,H,W], got {:?}", s)));
        }
        let m = self.extent_multiple();
        if s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0 {
            return Err(DustError::geometry(
                "forward",
                format!("spatial extents {}x{} must be positive multiples of {m}", s[2], s[3]),
            ));
        }

        let stem_out = self.stem.forward(dusty)?;
        // level j feature = input to encoder stage j (level 0 = stem output)
        let mut level_feats: Vec<Tensor<P>> = Vec::with_capacity(self.cfg.stages);
        let mut level_dims: Vec<(usize, usize)> = Vec::with_capacity(self.cfg.stages);
        let mut cur = stem_out;
        for stage in &self.enc {
            level_feats.push(cur.clone());
            level_dims.push((cur.shape()[2], cur.shape()[3]));
            for block in stage {
                cur = block.forward(&cur)?;
            }
        }

        if let Some(dcm) = &self.dcm {
            cur = dcm.forward(&cur)?;
        }

        for j in (0..self.cfg.stages).rev() {
            let blocks = &self.dec[j];
            let target = level_dims[j];
            for block in blocks {
                cur = block.forward(&cur, target)?;
            }
            if let Some(cifm) = &self.cifms[j] {
                cur = cifm.forward(&level_feats[j], &cur)?;
            }
        }

        let delta = self.head.forward(&cur)?;
        super::blocks::residual_output(dusty, &delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_input(n: usize, h: usize, w: usize) -> Tensor<f32> {
        let total = n * 3 * h * w;
        let data: Vec<f32> = (0..total).map(|i| (i % 251) as f32 / 255.0).collect();
        Tensor::from_vec(&[n, 3, h, w], data).unwrap()
    }

    #[test]
    fn zero_head_untrained_model_is_identity_bitwise() {
        let model = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
        let x = ramp_input(1, 16, 16);
        let y = model.forward(&x).unwrap();
        assert_eq!(x.data(), y.data());
        assert_eq!(x.shape(), y.shape());
    }

    #[test]
    fn forward_preserves_shape_default_config() {
        let model = DedustNet::<f32>::new(ModelConfig::desk_default()).unwrap();
        let x = ramp_input(1, 64, 64);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn forward_rejects_bad_extents() {
        let model = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
        let x = ramp_input(1, 10, 16);
        assert!(model.forward(&x).is_err());
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let model = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
        let x = ramp_input(2, 16, 16);
        let y1 = model.forward(&x).unwrap();
        let y2 = model.forward(&x).unwrap();
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn ablation_toggles_strictly_reduce_params() {
        let base = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap().params().total_scalars();
        for toggle in ["sfas", "cifm", "dcm", "rel_bias"] {
            let mut cfg = ModelConfig::tiny();
            match toggle {
                "sfas" => cfg.sfas_enabled = false,
                "cifm" => cfg.cifm_enabled = false,
                "dcm" => cfg.dcm_enabled = false,
                _ => cfg.rel_bias_enabled = false,
            }
            let n = DedustNet::<f32>::new(cfg).unwrap().params().total_scalars();
            assert!(n < base, "disabling {toggle} did not reduce params ({n} vs {base})");
        }
    }
}
