//! Geometric augmentation (quarter-turn rotations and horizontal flips) and
//! seeded patch sampling.

use super::{PairedSample, Provenance};
use crate::error::{DustError, Result};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;

/// Rotation in quarter turns (clockwise), then optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { quarter_turns: 0, flip: false };

    pub fn code(&self) -> String {
        let deg = self.quarter_turns as usize * 90;
        if self.flip {
            format!("r{deg}f")
        } else {
            format!("r{deg}")
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        let (body, flip) = match code.strip_suffix('f') {
            Some(b) => (b, true),
            None => (code, false),
        };
        let deg: usize = body
            .strip_prefix('r')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| DustError::config(format!("bad transform code '{code}'")))?;
        if deg % 90 != 0 || deg >= 360 {
            return Err(DustError::config(format!("bad rotation '{code}'")));
        }
        Ok(Transform { quarter_turns: (deg / 90) as u8, flip })
    }

    pub fn sample(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Transform { quarter_turns: rng.gen_range(0..4u8), flip: rng.gen_bool(0.5) }
    }
}

fn rot90_cw<P: Real>(x: &Tensor<P>) -> Result<Tensor<P>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h != w {
        return Err(DustError::geometry("rot90", format!("rotation needs a square patch, got {h}x{w}")));
    }
    let mut out = vec![P::zero(); x.numel()];
    for pc in 0..n * c {
        let src = &x.data()[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * h * w..(pc + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                // clockwise: destination (y, x) reads source (h-1-x, y)
                dst[y * w + xx] = src[(h - 1 - xx) * w + y];
            }
        }
    }
    Tensor::from_vec(s, out)
}

fn flip_h<P: Real>(x: &Tensor<P>) -> Result<Tensor<P>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![P::zero(); x.numel()];
    for pc in 0..n * c {
        let src = &x.data()[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * h * w..(pc + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[y * w + (w - 1 - xx)];
            }
        }
    }
    Tensor::from_vec(s, out)
}

pub fn apply_transform<P: Real>(x: &Tensor<P>, t: Transform) -> Result<Tensor<P>> {
    if x.shape().len() != 4 {
        return Err(DustError::dim("apply_transform", format!("expected NCHW, got {:?}", x.shape())));
    }
    let mut cur = x.clone();
    for _ in 0..t.quarter_turns {
        cur = rot90_cw(&cur)?;
    }
    if t.flip {
        cur = flip_h(&cur)?;
    }
    Ok(cur)
}

/// Apply one seeded transform identically to both sides of a pair and record
/// it in the provenance.
pub fn augment_pair<P: Real>(sample: PairedSample<P>, seed: u64) -> Result<PairedSample<P>> {
    let t = Transform::sample(seed);
    let clean = apply_transform(&sample.clean, t)?;
    let degraded = apply_transform(&sample.degraded, t)?;
    let provenance = Provenance { transform: t.code(), ..sample.provenance };
    Ok(PairedSample { clean, degraded, provenance })
}

/// Seeded crop offsets; the epoch index is mixed into the stream so patches
/// differ between epochs under the same seed.
pub fn random_patch_offsets(
    h: usize,
    w: usize,
    patch: usize,
    count: usize,
    seed: u64,
    epoch: u32,
) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || patch > h || patch > w {
        return Err(DustError::geometry(
            "random_patches",
            format!("patch {patch} vs image {h}x{w}"),
        ));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "patches", epoch as u64));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let oy = if h > patch { rng.gen_range(0..=h - patch) } else { 0 };
        let ox = if w > patch { rng.gen_range(0..=w - patch) } else { 0 };
        out.push((oy, ox));
    }
    Ok(out)
}

pub fn crop_patch<P: Real>(image: &Tensor<P>, oy: usize, ox: usize, patch: usize) -> Result<Tensor<P>> {
    let s = image.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if oy + patch > h || ox + patch > w {
        return Err(DustError::geometry("crop_patch", format!("offset ({oy},{ox}) patch {patch} in {h}x{w}")));
    }
    let mut out = vec![P::zero(); n * c * patch * patch];
    for pc in 0..n * c {
        let src = &image.data()[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * patch * patch..(pc + 1) * patch * patch];
        for y in 0..patch {
            dst[y * patch..(y + 1) * patch]
                .copy_from_slice(&src[(oy + y) * w + ox..(oy + y) * w + ox + patch]);
        }
    }
    Tensor::from_vec(&[n, c, patch, patch], out)
}

/// Seeded square patches from an image; epoch-aware (see
/// [`random_patch_offsets`]).
pub fn random_patches<P: Real>(
    image: &Tensor<P>,
    patch: usize,
    count: usize,
    seed: u64,
    epoch: u32,
) -> Result<Vec<Tensor<P>>> {
    let s = image.shape();
    let offsets = random_patch_offsets(s[2], s[3], patch, count, seed, epoch)?;
    offsets.into_iter().map(|(oy, ox)| crop_patch(image, oy, ox, patch)).collect()
}
