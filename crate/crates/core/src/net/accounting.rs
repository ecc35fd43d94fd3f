//! Parameter and FLOP accounting.
//!
//! FLOP convention (stated in every report):
//!   - conv2d: 2 * k^2 * Cin * Cout * H' * W'   (bias excluded)
//!   - linear: 2 * Din * Dout per application
//!   - attention: 2 * L^2 * head_dim per score pass and per apply pass,
//!     per window per head
//! Elementwise ops, normalization, softmax, and the wavelet transforms are
//! not counted.

use super::config::ModelConfig;
use super::model::DedustNet;
use crate::real::Real;

pub const FLOP_CONVENTION: &str = "conv 2*k^2*Cin*Cout*H'*W' (bias excluded); \
linear 2*Din*Dout per token; attention 2*L^2*dh per score/apply pass per window per head; \
elementwise/norm/wavelet ops uncounted";

#[derive(Clone, Debug)]
pub struct FlopReport {
    pub items: Vec<(String, u64)>,
    pub total: u64,
    pub resolution: (usize, usize),
}

impl FlopReport {
    fn push(&mut self, name: impl Into<String>, flops: u64) {
        self.items.push((name.into(), flops));
        self.total += flops;
    }
}

/// Exact count of trainable scalars.
pub fn count_params<P: Real>(model: &DedustNet<P>) -> usize {
    model.params().total_scalars()
}

fn conv_flops(k: usize, cin: usize, cout: usize, oh: usize, ow: usize) -> u64 {
    2 * (k * k * cin * cout * oh * ow) as u64
}

fn attention_flops(cfg: &ModelConfig, h: usize, w: usize, channels: usize, heads: usize) -> u64 {
    let win = cfg.window_size;
    let (ph, pw) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
    let n_windows = (ph / win) * (pw / win);
    let l = win * win;
    let tokens = (n_windows * l) as u64;
    let dh = channels / heads;
    let qkv = 2 * (channels * 3 * channels) as u64 * tokens;
    let scores_apply = 2 * (n_windows * heads) as u64 * (2 * l * l * dh) as u64;
    let proj = 2 * (channels * channels) as u64 * tokens;
    qkv + scores_apply + proj
}

fn mixer_flops(cfg: &ModelConfig, h: usize, w: usize, channels: usize, heads: usize) -> u64 {
    let mut f = attention_flops(cfg, h, w, channels, heads);
    if cfg.sfas_enabled {
        f += 2 * conv_flops(3, channels, channels, h, w); // two 3x3 convs
        f += conv_flops(1, 2 * channels, channels, h, w); // fuse
    }
    let hidden = cfg.mlp_hidden(channels);
    f += conv_flops(1, channels, hidden, h, w);
    f += conv_flops(1, hidden, channels, h, w);
    f
}

fn cifm_flops(cfg: &ModelConfig, h: usize, w: usize, channels: usize, heads: usize) -> u64 {
    let win = cfg.window_size;
    let (ph, pw) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
    let n_windows = (ph / win) * (pw / win);
    let l = win * win;
    let tokens = (n_windows * l) as u64;
    let dh = channels / heads;
    let q = 2 * (channels * channels) as u64 * tokens;
    let kv = 2 * (channels * 2 * channels) as u64 * tokens;
    let scores_apply = 2 * (n_windows * heads) as u64 * (2 * l * l * dh) as u64;
    let proj = 2 * (channels * channels) as u64 * tokens;
    let fuse = conv_flops(1, 2 * channels, channels, h, w);
    q + kv + scores_apply + proj + fuse
}

/// Walk the architecture symbolically at the given input resolution.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> FlopReport {
    let mut report = FlopReport { items: Vec::new(), total: 0, resolution: (h, w) };
    let s = cfg.stages;
    report.push("stem", conv_flops(3, 3, cfg.channels[0], h, w));

    // encoder
    let mut dims = (h, w);
    let mut level_dims = Vec::with_capacity(s);
    for i in 0..s {
        level_dims.push(dims);
        let in_ch = if i == 0 { cfg.channels[0] } else { cfg.channels[i - 1] };
        let half = (dims.0.div_ceil(2), dims.1.div_ceil(2));
        let mut f = conv_flops(1, 4 * in_ch, cfg.channels[i], half.0, half.1);
        for _ in 0..cfg.blocks_per_stage[i] {
            f += mixer_flops(cfg, half.0, half.1, cfg.channels[i], cfg.num_heads[i]);
        }
        report.push(format!("enc.stage{i}"), f);
        dims = half;
    }

    if cfg.dcm_enabled {
        let c = cfg.channels[s - 1];
        let band = (dims.0.div_ceil(2), dims.1.div_ceil(2));
        let mut f = 0u64;
        for _ in &cfg.dcm_dilations {
            f += conv_flops(3, 4 * c, c, band.0, band.1);
        }
        f += conv_flops(1, 4 * c, c, band.0, band.1);
        f += conv_flops(1, (cfg.dcm_dilations.len() + 1) * c, 4 * c, band.0, band.1);
        report.push("dcm", f);
    }

    // decoder (deepest first)
    for j in (0..s).rev() {
        let out_ch = if j == 0 { cfg.channels[0] } else { cfg.channels[j - 1] };
        let here = (level_dims[j].0.div_ceil(2), level_dims[j].1.div_ceil(2));
        let mut f = 0u64;
        for _ in 0..cfg.blocks_per_stage[j] {
            f += mixer_flops(cfg, here.0, here.1, cfg.channels[j], cfg.num_heads[j]);
        }
        f += conv_flops(1, cfg.channels[j], 4 * out_ch, here.0, here.1);
        report.push(format!("dec.stage{j}"), f);
        if cfg.cifm_enabled {
            let heads = if j == 0 { cfg.num_heads[0] } else { cfg.num_heads[j - 1] };
            report.push(
                format!("cifm.level{j}"),
                cifm_flops(cfg, level_dims[j].0, level_dims[j].1, out_ch, heads),
            );
        }
    }

    report.push("head", conv_flops(3, cfg.channels[0], 3, h, w));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamSet;
    use crate::rng::rng_from_seed;

    #[test]
    fn single_conv_param_count() {
        // 3x3 conv, 3 -> 16 with bias: 3*3*3*16 + 16 = 448
        let mut ps = ParamSet::<f32>::new();
        let mut rng = rng_from_seed(0);
        super::super::blocks::Conv2dLayer::build(&mut ps, &mut rng, "c", 3, 16, 3, 1, 1, 1, None).unwrap();
        assert_eq!(ps.total_scalars(), 448);
    }

    #[test]
    fn single_conv_flops() {
        // 3x3 conv 3->16 on 8x8 with padding 1: 2*9*3*16*8*8 = 55296
        assert_eq!(conv_flops(3, 3, 16, 8, 8), 55_296);
    }

    #[test]
    fn tiny_has_fewer_params_than_table2() {
        use super::super::model::DedustNet;
        let tiny = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
        let t2 = DedustNet::<f32>::new(ModelConfig::table2()).unwrap();
        assert!(count_params(&tiny) < count_params(&t2));
    }
}
