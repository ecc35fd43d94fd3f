//! Synthetic paired-data generation via the atmospheric scattering model
//! `I = J*t + A*(1 - t)` with `t = exp(-beta * d)`.
//!
//! Depth maps are seeded smooth random fields; every sample is a pure
//! function of `(seed, epoch, idx)` plus its clean source, so provenance
//! lines are sufficient to regenerate any sample bit-exactly.

mod augment;
mod imageio;

pub use augment::{apply_transform, augment_pair, crop_patch, random_patch_offsets, random_patches, Transform};
pub use imageio::{read_image, write_image};

use crate::error::{DustError, Result};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;

/// Default warm-gray ambient color (dust is yellower than haze).
pub const DEFAULT_AMBIENT: [f64; 3] = [0.82, 0.78, 0.72];
pub const DEFAULT_BETA_RANGE: (f64, f64) = (0.4, 2.0);
pub const DEPTH_RANGE: (f64, f64) = (0.5, 3.0);

/// One synthetic degradation: ambient light, scattering coefficient, and a
/// per-pixel depth map (plus an optional ambient modulation field).
#[derive(Clone, Debug)]
pub struct DustField<P: Real> {
    pub ambient: [f64; 3],
    pub beta: f64,
    /// `[1,1,H,W]`, values in [DEPTH_RANGE].
    pub depth: Tensor<P>,
    /// Optional `[1,1,H,W]` multiplier on the ambient light.
    pub ambient_mod: Option<Tensor<P>>,
}

impl<P: Real> DustField<P> {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(DustError::config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.ambient.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(DustError::config(format!("ambient {:?} outside [0,1]", self.ambient)));
        }
        if self.depth.shape().len() != 4 || self.depth.shape()[0] != 1 || self.depth.shape()[1] != 1 {
            return Err(DustError::dim("dust_field", format!("depth must be [1,1,H,W], got {:?}", self.depth.shape())));
        }
        if self.depth.data().iter().any(|&d| d < P::zero()) {
            return Err(DustError::config("depth map contains negative values"));
        }
        Ok(())
    }

    /// Transmission `t = exp(-beta * d)` as raw values.
    pub fn transmission(&self) -> Vec<P> {
        let beta = P::from_f64(self.beta);
        self.depth.data().iter().map(|&d| (-beta * d).exp()).collect()
    }
}

/// Deterministic smooth positive depth field: a coarse uniform grid is
/// bilinearly upsampled and mapped affinely onto [0.5, 3.0].
pub fn make_depth<P: Real>(h: usize, w: usize, seed: u64, smoothness: f64) -> Result<Tensor<P>> {
    if !(0.0..=1.0).contains(&smoothness) {
        return Err(DustError::config(format!("smoothness {smoothness} outside [0,1]")));
    }
    if h == 0 || w == 0 {
        return Err(DustError::geometry("make_depth", "empty extents"));
    }
    let side = (((1.0 - smoothness) * h.min(w) as f64 / 4.0).round() as usize).max(2);
    let mut rng = rng_from_seed(seed);
    let grid: Vec<f64> = (0..side * side).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (lo, span) = (DEPTH_RANGE.0, DEPTH_RANGE.1 - DEPTH_RANGE.0);
    let mut data = vec![P::zero(); h * w];
    for y in 0..h {
        let fy = if h > 1 { y as f64 / (h - 1) as f64 * (side - 1) as f64 } else { 0.0 };
        let y0 = (fy.floor() as usize).min(side - 2);
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = if w > 1 { x as f64 / (w - 1) as f64 * (side - 1) as f64 } else { 0.0 };
            let x0 = (fx.floor() as usize).min(side - 2);
            let tx = fx - x0 as f64;
            let g00 = grid[y0 * side + x0];
            let g01 = grid[y0 * side + x0 + 1];
            let g10 = grid[(y0 + 1) * side + x0];
            let g11 = grid[(y0 + 1) * side + x0 + 1];
            let v = g00 * (1.0 - ty) * (1.0 - tx)
                + g01 * (1.0 - ty) * tx
                + g10 * ty * (1.0 - tx)
                + g11 * ty * tx;
            data[y * w + x] = P::from_f64(lo + span * v);
        }
    }
    Tensor::from_vec(&[1, 1, h, w], data)
}

/// Degrade a clean image: `I = J*t + A*(1-t)` per pixel per channel.
pub fn apply_asm<P: Real>(clean: &Tensor<P>, field: &DustField<P>) -> Result<Tensor<P>> {
    field.validate()?;
    let s = clean.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(DustError::dim("apply_asm", format!("expected [N,3,H,W], got {:?}", s)));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    if field.depth.shape()[2] != h || field.depth.shape()[3] != w {
        return Err(DustError::dim(
            "apply_asm",
            format!("depth {:?} vs image {h}x{w}", field.depth.shape()),
        ));
    }
    if let Some(m) = &field.ambient_mod {
        if m.shape() != field.depth.shape() {
            return Err(DustError::dim("apply_asm", "ambient modulation shape mismatch"));
        }
    }
    let t = field.transmission();
    let hw = h * w;
    let mut out = vec![P::zero(); clean.numel()];
    for ni in 0..n {
        for c in 0..3 {
            let a_base = P::from_f64(field.ambient[c]);
            let src = &clean.data()[(ni * 3 + c) * hw..(ni * 3 + c + 1) * hw];
            let dst = &mut out[(ni * 3 + c) * hw..(ni * 3 + c + 1) * hw];
            match &field.ambient_mod {
                None => {
                    for i in 0..hw {
                        dst[i] = src[i] * t[i] + a_base * (P::one() - t[i]);
                    }
                }
                Some(m) => {
                    let md = m.data();
                    for i in 0..hw {
                        let a = (a_base * md[i]).max(P::zero()).min(P::one());
                        dst[i] = src[i] * t[i] + a * (P::one() - t[i]);
                    }
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Recover the clean image from a degraded one with the true field:
/// `J = (I - A*(1-t)) / t`. Only meaningful where `t` is not vanishing.
pub fn invert_asm<P: Real>(degraded: &Tensor<P>, field: &DustField<P>) -> Result<Tensor<P>> {
    field.validate()?;
    let s = degraded.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let t = field.transmission();
    let hw = h * w;
    let mut out = vec![P::zero(); degraded.numel()];
    for ni in 0..n {
        for c in 0..3 {
            let a = P::from_f64(field.ambient[c]);
            let src = &degraded.data()[(ni * 3 + c) * hw..(ni * 3 + c + 1) * hw];
            let dst = &mut out[(ni * 3 + c) * hw..(ni * 3 + c + 1) * hw];
            for i in 0..hw {
                let ti = t[i].max(P::from_f64(1e-12));
                dst[i] = (src[i] - a * (P::one() - ti)) / ti;
            }
        }
    }
    Tensor::from_vec(s, out)
}

/// Generation knobs for synthetic pairs.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub beta_min: f64,
    pub beta_max: f64,
    pub ambient: [f64; 3],
    pub depth_smoothness: f64,
    pub augment: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            beta_min: DEFAULT_BETA_RANGE.0,
            beta_max: DEFAULT_BETA_RANGE.1,
            ambient: DEFAULT_AMBIENT,
            depth_smoothness: 0.7,
            augment: true,
        }
    }
}

/// Record sufficient to regenerate a sample bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub epoch: u32,
    pub idx: u32,
    pub ambient: [f64; 3],
    pub beta: f64,
    pub transform: String,
}

impl Provenance {
    /// `seed=<u64> epoch=<u32> idx=<u32> A=<r,g,b> beta=<f> transform=<code>`
    pub fn to_line(&self) -> String {
        format!(
            "seed={} epoch={} idx={} A={},{},{} beta={} transform={}",
            self.seed, self.epoch, self.idx, self.ambient[0], self.ambient[1], self.ambient[2], self.beta, self.transform
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut seed = None;
        let mut epoch = None;
        let mut idx = None;
        let mut ambient = None;
        let mut beta = None;
        let mut transform = None;
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| DustError::config(format!("bad provenance token '{tok}'")))?;
            match k {
                "seed" => seed = v.parse::<u64>().ok(),
                "epoch" => epoch = v.parse::<u32>().ok(),
                "idx" => idx = v.parse::<u32>().ok(),
                "A" => {
                    let parts: Vec<f64> = v.split(',').filter_map(|p| p.parse().ok()).collect();
                    if parts.len() == 3 {
                        ambient = Some([parts[0], parts[1], parts[2]]);
                    }
                }
                "beta" => beta = v.parse::<f64>().ok(),
                "transform" => transform = Some(v.to_string()),
                _ => return Err(DustError::config(format!("unknown provenance key '{k}'"))),
            }
        }
        match (seed, epoch, idx, ambient, beta, transform) {
            (Some(seed), Some(epoch), Some(idx), Some(ambient), Some(beta), Some(transform)) => {
                Ok(Provenance { seed, epoch, idx, ambient, beta, transform })
            }
            _ => Err(DustError::config(format!("incomplete provenance line '{line}'"))),
        }
    }
}

/// A clean/degraded pair plus the record that regenerates it.
#[derive(Clone, Debug)]
pub struct PairedSample<P: Real> {
    pub clean: Tensor<P>,
    pub degraded: Tensor<P>,
    pub provenance: Provenance,
}

/// Build the dust field for `(seed, epoch, idx)` at the given extents.
pub fn field_for<P: Real>(
    seed: u64,
    epoch: u32,
    idx: u32,
    h: usize,
    w: usize,
    opts: &SynthOptions,
) -> Result<DustField<P>> {
    let tag = ((epoch as u64) << 32) | idx as u64;
    let field_seed = derive_seed(seed, "dustfield", tag);
    let depth = make_depth::<P>(h, w, derive_seed(field_seed, "depth", 0), opts.depth_smoothness)?;
    let beta = if opts.beta_max > opts.beta_min {
        rng_from_seed(derive_seed(field_seed, "beta", 0)).gen_range(opts.beta_min..opts.beta_max)
    } else {
        opts.beta_min
    };
    Ok(DustField { ambient: opts.ambient, beta, depth, ambient_mod: None })
}

/// Degrade a clean patch into a paired sample; augmentation (when enabled)
/// applies the same seeded transform to both sides.
pub fn synth_pair<P: Real>(
    clean: &Tensor<P>,
    seed: u64,
    epoch: u32,
    idx: u32,
    opts: &SynthOptions,
) -> Result<PairedSample<P>> {
    let (h, w) = (clean.shape()[2], clean.shape()[3]);
    let field = field_for::<P>(seed, epoch, idx, h, w, opts)?;
    let degraded = apply_asm(clean, &field)?;
    let provenance = Provenance {
        seed,
        epoch,
        idx,
        ambient: field.ambient,
        beta: field.beta,
        transform: "r0".into(),
    };
    let sample = PairedSample { clean: clean.clone(), degraded, provenance };
    if opts.augment {
        let tag = ((epoch as u64) << 32) | idx as u64;
        augment_pair(sample, derive_seed(seed, "augment", tag))
    } else {
        Ok(sample)
    }
}

/// Procedural clean image: a smooth color field with solid shapes on top.
/// Purely seeded; used for desk-scale training and tests.
pub fn make_clean_image<P: Real>(seed: u64, h: usize, w: usize) -> Result<Tensor<P>> {
    let mut rng = rng_from_seed(derive_seed(seed, "clean", 0));
    let hw = h * w;
    let mut data = vec![0.0f64; 3 * hw];
    // smooth base per channel
    for c in 0..3 {
        let side = rng.gen_range(3..7usize);
        let grid: Vec<f64> = (0..side * side).map(|_| rng.gen_range(0.05..0.95)).collect();
        for y in 0..h {
            let fy = if h > 1 { y as f64 / (h - 1) as f64 * (side - 1) as f64 } else { 0.0 };
            let y0 = (fy.floor() as usize).min(side - 2);
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = if w > 1 { x as f64 / (w - 1) as f64 * (side - 1) as f64 } else { 0.0 };
                let x0 = (fx.floor() as usize).min(side - 2);
                let tx = fx - x0 as f64;
                let v = grid[y0 * side + x0] * (1.0 - ty) * (1.0 - tx)
                    + grid[y0 * side + x0 + 1] * (1.0 - ty) * tx
                    + grid[(y0 + 1) * side + x0] * ty * (1.0 - tx)
                    + grid[(y0 + 1) * side + x0 + 1] * ty * tx;
                data[c * hw + y * w + x] = v;
            }
        }
    }
    // solid rectangles and discs for edges and texture
    let shapes = rng.gen_range(4..9usize);
    for _ in 0..shapes {
        let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let alpha: f64 = rng.gen_range(0.6..1.0);
        if rng.gen_bool(0.5) {
            let rh = rng.gen_range(h / 8..h / 2 + 1).max(1);
            let rw = rng.gen_range(w / 8..w / 2 + 1).max(1);
            let oy = rng.gen_range(0..h.saturating_sub(rh).max(1));
            let ox = rng.gen_range(0..w.saturating_sub(rw).max(1));
            for y in oy..(oy + rh).min(h) {
                for x in ox..(ox + rw).min(w) {
                    for c in 0..3 {
                        let p = &mut data[c * hw + y * w + x];
                        *p = *p * (1.0 - alpha) + color[c] * alpha;
                    }
                }
            }
        } else {
            let r = rng.gen_range((h.min(w) / 10).max(2)..(h.min(w) / 3).max(3)) as f64;
            let cy = rng.gen_range(0..h) as f64;
            let cx = rng.gen_range(0..w) as f64;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d2 <= r * r {
                        for c in 0..3 {
                            let p = &mut data[c * hw + y * w + x];
                            *p = *p * (1.0 - alpha) + color[c] * alpha;
                        }
                    }
                }
            }
        }
    }
    let out: Vec<P> = data.iter().map(|&v| P::from_f64(v.clamp(0.0, 1.0))).collect();
    Tensor::from_vec(&[1, 3, h, w], out)
}

pub const PROVENANCE_HEADER: &str = "# dustlab provenance v1";

pub fn write_provenance(lines: &[Provenance], path: &std::path::Path) -> Result<()> {
    let mut text = String::from(PROVENANCE_HEADER);
    text.push('\n');
    for p in lines {
        text.push_str(&p.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))
}

pub fn read_provenance(path: &std::path::Path) -> Result<Vec<Provenance>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(Provenance::parse_line)
        .collect()
}
