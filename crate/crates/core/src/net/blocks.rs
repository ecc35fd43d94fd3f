//! Network building blocks.
//!
//! The token mixer is shared by encoder and decoder blocks: layer norm, then
//! window attention in parallel with the SFAS convolution branch, channel
//! concat, 1x1 fuse, residual add; then layer norm, MLP, residual add.
//! Encoder blocks prepend a wavelet analysis step (DWT -> pack -> 1x1 proj)
//! on the first block of a stage; decoder blocks append the mirror synthesis
//! step (1x1 proj -> unpack -> IDWT) on the last block of a stage.

use crate::attention::{
    fuse_branches, mhca, mhsa, rel_bias_table_len, sfas_branch, AttentionHeads, MhcaParams,
    MhsaParams, SfasParams, WindowGrid,
};
use crate::error::{DustError, Result};
use crate::param::{InitSpec, ParamSet, Parameter};
use crate::real::Real;
use crate::rng::SeededRng;
use crate::tensor::{
    add, clamp01, concat, conv2d, crop_br, gelu, layer_norm, mul, pad_br, relu, upsample_nearest,
    PadMode, Tensor,
};
use crate::wavelet::{dwt2_packed, idwt2_packed, WaveletBasis};

pub const LAYER_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// parameterized layers
// ---------------------------------------------------------------------------

pub struct Conv2dLayer<P: Real> {
    pub weight: Parameter<P>,
    pub bias: Parameter<P>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<P: Real> Conv2dLayer<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        weight_init: Option<InitSpec>,
    ) -> Result<Self> {
        let init = weight_init.unwrap_or(InitSpec::UniformFanIn { fan_in: cin * k * k });
        let weight = ps.create(format!("{name}.weight"), &[cout, cin, k, k], init, rng)?;
        let bias = ps.create(format!("{name}.bias"), &[cout], InitSpec::Zeros, rng)?;
        Ok(Conv2dLayer { weight, bias, stride, padding, dilation })
    }

    pub fn forward(&self, x: &Tensor<P>) -> Result<Tensor<P>> {
        conv2d(x, &self.weight.tensor(), Some(&self.bias.tensor()), self.stride, self.padding, self.dilation)
    }
}

pub struct LinearParams<P: Real> {
    pub weight: Parameter<P>,
    pub bias: Parameter<P>,
}

impl<P: Real> LinearParams<P> {
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Result<Self> {
        let weight =
            ps.create(format!("{name}.weight"), &[dout, din], InitSpec::TruncNormal { std: 0.02 }, rng)?;
        let bias = ps.create(format!("{name}.bias"), &[dout], InitSpec::Zeros, rng)?;
        Ok(LinearParams { weight, bias })
    }
}

pub struct LayerNormParams<P: Real> {
    pub gain: Parameter<P>,
    pub offset: Parameter<P>,
}

impl<P: Real> LayerNormParams<P> {
    pub fn build(ps: &mut ParamSet<P>, rng: &mut SeededRng, name: &str, channels: usize) -> Result<Self> {
        let gain = ps.create(format!("{name}.gain"), &[channels], InitSpec::Ones, rng)?;
        let offset = ps.create(format!("{name}.offset"), &[channels], InitSpec::Zeros, rng)?;
        Ok(LayerNormParams { gain, offset })
    }

    /// Normalize over the channel axis of an NCHW map.
    pub fn forward(&self, x: &Tensor<P>) -> Result<Tensor<P>> {
        layer_norm(x, 1, &self.gain.tensor(), &self.offset.tensor(), P::from_f64(LAYER_NORM_EPS))
    }
}

// ---------------------------------------------------------------------------
// token mixer
// ---------------------------------------------------------------------------

pub struct Mixer<P: Real> {
    pub channels: usize,
    pub heads: AttentionHeads,
    pub window: usize,
    pub shift: usize,
    ln1: LayerNormParams<P>,
    qkv: LinearParams<P>,
    proj: LinearParams<P>,
    rel_bias: Option<Parameter<P>>,
    sfas: Option<(Conv2dLayer<P>, Conv2dLayer<P>)>,
    fuse: Option<Conv2dLayer<P>>,
    ln2: LayerNormParams<P>,
    fc1: Conv2dLayer<P>,
    fc2: Conv2dLayer<P>,
}

pub struct MixerSpec {
    pub channels: usize,
    pub num_heads: usize,
    pub window: usize,
    pub shift: usize,
    pub mlp_hidden: usize,
    pub sfas: bool,
    pub rel_bias: bool,
}

impl<P: Real> Mixer<P> {
    pub fn build(ps: &mut ParamSet<P>, rng: &mut SeededRng, name: &str, spec: &MixerSpec) -> Result<Self> {
        let c = spec.channels;
        let heads = AttentionHeads::new(c, spec.num_heads)?;
        let ln1 = LayerNormParams::build(ps, rng, &format!("{name}.ln1"), c)?;
        let qkv = LinearParams::build(ps, rng, &format!("{name}.attn.qkv"), c, 3 * c)?;
        let proj = LinearParams::build(ps, rng, &format!("{name}.attn.proj"), c, c)?;
        let rel_bias = if spec.rel_bias {
            Some(ps.create(
                format!("{name}.attn.rel_bias.table"),
                &[spec.num_heads, rel_bias_table_len(spec.window)],
                InitSpec::TruncNormal { std: 0.02 },
                rng,
            )?)
        } else {
            None
        };
        let (sfas, fuse) = if spec.sfas {
            let c1 = Conv2dLayer::build(ps, rng, &format!("{name}.sfas.conv1"), c, c, 3, 1, 1, 1, None)?;
            let c2 = Conv2dLayer::build(ps, rng, &format!("{name}.sfas.conv2"), c, c, 3, 1, 1, 1, None)?;
            let f = Conv2dLayer::build(ps, rng, &format!("{name}.fuse"), 2 * c, c, 1, 1, 0, 1, None)?;
            (Some((c1, c2)), Some(f))
        } else {
            (None, None)
        };
        let ln2 = LayerNormParams::build(ps, rng, &format!("{name}.ln2"), c)?;
        let fc1 = Conv2dLayer::build(ps, rng, &format!("{name}.mlp.fc1"), c, spec.mlp_hidden, 1, 1, 0, 1, None)?;
        let fc2 = Conv2dLayer::build(ps, rng, &format!("{name}.mlp.fc2"), spec.mlp_hidden, c, 1, 1, 0, 1, None)?;
        Ok(Mixer {
            channels: c,
            heads,
            window: spec.window,
            shift: spec.shift,
            ln1,
            qkv,
            proj,
            rel_bias,
            sfas,
            fuse,
            ln2,
            fc1,
            fc2,
        })
    }

    /// Shift is dropped when the whole map fits in a single window.
    fn effective_shift(&self, h: usize, w: usize) -> usize {
        if h <= self.window && w <= self.window {
            0
        } else {
            self.shift
        }
    }

    pub fn forward(&self, x: &Tensor<P>) -> Result<Tensor<P>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(DustError::dim(
                "mixer",
                format!("expected [N,{},H,W], got {:?}", self.channels, s),
            ));
        }
        let (h, w) = (s[2], s[3]);
        let grid = WindowGrid::new(h, w, self.window, self.effective_shift(h, w))?;
        let normed = self.ln1.forward(x)?;
        let attn_params = MhsaParams {
            qkv_w: self.qkv.weight.tensor(),
            qkv_b: self.qkv.bias.tensor(),
            proj_w: self.proj.weight.tensor(),
            proj_b: self.proj.bias.tensor(),
            rel_bias: self.rel_bias.as_ref().map(|p| p.tensor()),
        };
        let attn_out = mhsa(&normed, &grid, &self.heads, &attn_params)?;
        let mixed = match (&self.sfas, &self.fuse) {
            (Some((c1, c2)), Some(f)) => {
                let sfas_params = SfasParams {
                    conv1_w: c1.weight.tensor(),
                    conv1_b: c1.bias.tensor(),
                    conv2_w: c2.weight.tensor(),
                    conv2_b: c2.bias.tensor(),
                };
                let conv_out = sfas_branch(&normed, &sfas_params)?;
                fuse_branches(&attn_out, &conv_out, &f.weight.tensor(), &f.bias.tensor())?
            }
            _ => attn_out,
        };
        let x = add(x, &mixed)?;
        let normed = self.ln2.forward(&x)?;
        let hidden = gelu(&self.fc1.forward(&normed)?)?;
        let mlp_out = self.fc2.forward(&hidden)?;
        add(&x, &mlp_out)
    }
}

// ---------------------------------------------------------------------------
// wavelet resampling helpers
// ---------------------------------------------------------------------------

/// Analysis step: symmetric-pad odd extents, then one packed DWT level.
pub fn wavelet_down<P: Real>(x: &Tensor<P>, basis: &WaveletBasis) -> Result<Tensor<P>> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let padded = if h % 2 != 0 || w % 2 != 0 {
        pad_br(x, h % 2, w % 2, PadMode::Symmetric)?
    } else {
        x.clone()
    };
    dwt2_packed(&padded, basis)
}

/// Synthesis step: packed IDWT, cropped to the target extents.
pub fn wavelet_up<P: Real>(packed: &Tensor<P>, basis: &WaveletBasis, out_h: usize, out_w: usize) -> Result<Tensor<P>> {
    let full = idwt2_packed(packed, basis)?;
    if full.shape()[2] != out_h || full.shape()[3] != out_w {
        crop_br(&full, out_h, out_w)
    } else {
        Ok(full)
    }
}

// ---------------------------------------------------------------------------
// encoder / decoder blocks
// ---------------------------------------------------------------------------

/// Encoder block: on the first block of a stage the input is taken to the
/// wavelet domain at half resolution and projected to the stage width.
pub struct DwtFormerBlock<P: Real> {
    pre: Option<Conv2dLayer<P>>,
    pub mixer: Mixer<P>,
    basis: WaveletBasis,
}

impl<P: Real> DwtFormerBlock<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        in_channels: usize,
        spec: &MixerSpec,
        first_in_stage: bool,
        basis: &WaveletBasis,
    ) -> Result<Self> {
        let pre = if first_in_stage {
            Some(Conv2dLayer::build(ps, rng, &format!("{name}.pre"), 4 * in_channels, spec.channels, 1, 1, 0, 1, None)?)
        } else {
            None
        };
        let mixer = Mixer::build(ps, rng, name, spec)?;
        Ok(DwtFormerBlock { pre, mixer, basis: basis.clone() })
    }

    pub fn forward(&self, x: &Tensor<P>) -> Result<Tensor<P>> {
        let x = match &self.pre {
            Some(proj) => {
                let packed = wavelet_down(x, &self.basis)?;
                proj.forward(&packed)?
            }
            None => x.clone(),
        };
        self.mixer.forward(&x)
    }
}

/// Decoder block: on the last block of a stage the mixed feature is projected
/// to four subbands per output channel and synthesized to double resolution.
pub struct IdwtFormerBlock<P: Real> {
    pub mixer: Mixer<P>,
    post: Option<Conv2dLayer<P>>,
    basis: WaveletBasis,
}

impl<P: Real> IdwtFormerBlock<P> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        out_channels: usize,
        spec: &MixerSpec,
        last_in_stage: bool,
        basis: &WaveletBasis,
    ) -> Result<Self> {
        let mixer = Mixer::build(ps, rng, name, spec)?;
        let post = if last_in_stage {
            Some(Conv2dLayer::build(ps, rng, &format!("{name}.post"), spec.channels, 4 * out_channels, 1, 1, 0, 1, None)?)
        } else {
            None
        };
        Ok(IdwtFormerBlock { mixer, post, basis: basis.clone() })
    }

    /// `out_extents` gives the spatial size of the matching encoder level so
    /// that odd-extent analysis padding is undone exactly.
    pub fn forward(&self, x: &Tensor<P>, out_extents: (usize, usize)) -> Result<Tensor<P>> {
        let mixed = self.mixer.forward(x)?;
        match &self.post {
            Some(proj) => {
                let packed = proj.forward(&mixed)?;
                wavelet_up(&packed, &self.basis, out_extents.0, out_extents.1)
            }
            None => Ok(mixed),
        }
    }
}

// ---------------------------------------------------------------------------
// cross-level information fusion
// ---------------------------------------------------------------------------

/// Cross-attention gate between an encoder skip feature and the decoder
/// feature at the same resolution; the gated skip is fused back with a 1x1.
pub struct Cifm<P: Real> {
    pub channels: usize,
    heads: AttentionHeads,
    window: usize,
    q: LinearParams<P>,
    kv: LinearParams<P>,
    proj: LinearParams<P>,
    fuse: Conv2dLayer<P>,
}

impl<P: Real> Cifm<P> {
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        channels: usize,
        num_heads: usize,
        window: usize,
    ) -> Result<Self> {
        let heads = AttentionHeads::new(channels, num_heads)?;
        let q = LinearParams::build(ps, rng, &format!("{name}.q"), channels, channels)?;
        let kv = LinearParams::build(ps, rng, &format!("{name}.kv"), channels, 2 * channels)?;
        let proj = LinearParams::build(ps, rng, &format!("{name}.proj"), channels, channels)?;
        let fuse = Conv2dLayer::build(ps, rng, &format!("{name}.fuse"), 2 * channels, channels, 1, 1, 0, 1, None)?;
        Ok(Cifm { channels, heads, window, q, kv, proj, fuse })
    }

    pub fn forward(&self, encoder_feat: &Tensor<P>, decoder_feat: &Tensor<P>) -> Result<Tensor<P>> {
        let (es, ds) = (encoder_feat.shape(), decoder_feat.shape());
        if es[1] != self.channels || ds[1] != self.channels {
            return Err(DustError::dim(
                "cifm",
                format!("channels {} / {} vs configured {}", es[1], ds[1], self.channels),
            ));
        }
        let enc = if es[2] != ds[2] || es[3] != ds[3] {
            if ds[2] % es[2] == 0 && ds[3] % es[3] == 0 && ds[2] / es[2] == ds[3] / es[3] {
                upsample_nearest(encoder_feat, ds[2] / es[2])?
            } else {
                return Err(DustError::dim(
                    "cifm",
                    format!("encoder {:?} not nearest-resamplable to decoder {:?}", es, ds),
                ));
            }
        } else {
            encoder_feat.clone()
        };
        let grid = WindowGrid::new(ds[2], ds[3], self.window, 0)?;
        let params = MhcaParams {
            q_w: self.q.weight.tensor(),
            q_b: self.q.bias.tensor(),
            kv_w: self.kv.weight.tensor(),
            kv_b: self.kv.bias.tensor(),
            proj_w: self.proj.weight.tensor(),
            proj_b: self.proj.bias.tensor(),
        };
        let gate = mhca(decoder_feat, &enc, &grid, &self.heads, &params)?;
        let filtered = mul(&gate, &enc)?;
        let cat = concat(&[filtered, decoder_feat.clone()], 1)?;
        self.fuse.forward(&cat)
    }
}

// ---------------------------------------------------------------------------
// dilated convolution module
// ---------------------------------------------------------------------------

/// Bottleneck: wavelet analysis, parallel dilated 3x3 branches plus a 1x1
/// branch, 1x1 fusion back to the packed band layout, synthesis, residual.
pub struct Dcm<P: Real> {
    channels: usize,
    dilations: Vec<usize>,
    branches: Vec<Conv2dLayer<P>>,
    point: Conv2dLayer<P>,
    fuse: Conv2dLayer<P>,
    basis: WaveletBasis,
}

impl<P: Real> Dcm<P> {
    pub fn build(
        ps: &mut ParamSet<P>,
        rng: &mut SeededRng,
        name: &str,
        channels: usize,
        dilations: &[usize],
        basis: &WaveletBasis,
    ) -> Result<Self> {
        let band_ch = 4 * channels;
        let mut branches = Vec::with_capacity(dilations.len());
        for (i, &d) in dilations.iter().enumerate() {
            branches.push(Conv2dLayer::build(
                ps,
                rng,
                &format!("{name}.branch{i}"),
                band_ch,
                channels,
                3,
                1,
                d,
                d,
                None,
            )?);
        }
        let point = Conv2dLayer::build(ps, rng, &format!("{name}.point"), band_ch, channels, 1, 1, 0, 1, None)?;
        let fuse = Conv2dLayer::build(
            ps,
            rng,
            &format!("{name}.fuse"),
            (dilations.len() + 1) * channels,
            band_ch,
            1,
            1,
            0,
            1,
            None,
        )?;
        Ok(Dcm {
            channels,
            dilations: dilations.to_vec(),
            branches,
            point,
            fuse,
            basis: basis.clone(),
        })
    }

    pub fn effective_kernel_extent(dilation: usize) -> usize {
        3 + 2 * (dilation - 1)
    }

    pub fn forward(&self, x: &Tensor<P>) -> Result<Tensor<P>> {
        let s = x.shape();
        if s[1] != self.channels {
            return Err(DustError::dim("dcm", format!("channels {} vs configured {}", s[1], self.channels)));
        }
        let (h, w) = (s[2], s[3]);
        let packed = wavelet_down(x, &self.basis)?;
        let mut outs = Vec::with_capacity(self.branches.len() + 1);
        for b in &self.branches {
            outs.push(relu(&b.forward(&packed)?)?);
        }
        outs.push(relu(&self.point.forward(&packed)?)?);
        let cat = concat(&outs, 1)?;
        let fused = self.fuse.forward(&cat)?;
        let up = wavelet_up(&fused, &self.basis, h, w)?;
        add(x, &up)
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }
}

/// Global residual head: restored = clamp01(input + delta).
pub fn residual_output<P: Real>(input: &Tensor<P>, delta: &Tensor<P>) -> Result<Tensor<P>> {
    clamp01(&add(input, delta)?)
}
