//! Batch sources for training.
//!
//! Batch generation is a pure function of `(seed, step)`; sources hand whole
//! batches to the trainer by value. The synthetic source degrades seeded
//! procedural clean images through the scattering model; the directory
//! source serves user-supplied pairs (or degrades user cleans on the fly).

use std::path::Path;

use crate::error::{DustError, Result};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{
    apply_transform, crop_patch, make_clean_image, random_patch_offsets, read_image, synth_pair,
    Provenance, SynthOptions, Transform,
};
use crate::tensor::{concat, Tensor};
use rand::Rng;

pub struct Batch<P: Real> {
    pub clean: Tensor<P>,
    pub degraded: Tensor<P>,
    pub provenance: Vec<Provenance>,
}

pub trait BatchSource<P: Real> {
    fn batch(&self, step: u64, batch_size: usize, patch: usize) -> Result<Batch<P>>;
    /// Number of distinct underlying images, when finite.
    fn len_hint(&self) -> Option<usize>;
}

fn stack<P: Real>(items: &[Tensor<P>]) -> Result<Tensor<P>> {
    concat(items, 0)
}

// ---------------------------------------------------------------------------
// synthetic source
// ---------------------------------------------------------------------------

pub struct SyntheticSource<P: Real> {
    base: Vec<Tensor<P>>,
    seed: u64,
    opts: SynthOptions,
}

impl<P: Real> SyntheticSource<P> {
    /// `n_base` procedural clean images of side `base_extent`.
    pub fn new(n_base: usize, base_extent: usize, seed: u64, opts: SynthOptions) -> Result<Self> {
        let base: Vec<Tensor<P>> = (0..n_base)
            .map(|i| make_clean_image(derive_seed(seed, "base_image", i as u64), base_extent, base_extent))
            .collect::<Result<_>>()?;
        Ok(SyntheticSource { base, seed, opts })
    }

    /// Fixed held-out pairs, disjoint from the training stream by label.
    pub fn eval_pairs(count: usize, patch: usize, seed: u64, opts: &SynthOptions) -> Result<Vec<(Tensor<P>, Tensor<P>)>> {
        let eval_opts = SynthOptions { augment: false, ..opts.clone() };
        (0..count)
            .map(|i| {
                let s = derive_seed(seed, "eval_image", i as u64);
                let clean = make_clean_image::<P>(s, patch, patch)?;
                let pair = synth_pair(&clean, derive_seed(seed, "eval_field", i as u64), 0, i as u32, &eval_opts)?;
                Ok((pair.clean, pair.degraded))
            })
            .collect()
    }
}

impl<P: Real> BatchSource<P> for SyntheticSource<P> {
    fn batch(&self, step: u64, batch_size: usize, patch: usize) -> Result<Batch<P>> {
        let mut cleans = Vec::with_capacity(batch_size);
        let mut dusties = Vec::with_capacity(batch_size);
        let mut provs = Vec::with_capacity(batch_size);
        for slot in 0..batch_size {
            let tag = step * batch_size as u64 + slot as u64;
            let mut rng = rng_from_seed(derive_seed(self.seed, "choose", tag));
            let base = &self.base[rng.gen_range(0..self.base.len())];
            let (h, w) = (base.shape()[2], base.shape()[3]);
            let (oy, ox) = random_patch_offsets(h, w, patch, 1, derive_seed(self.seed, "offset", tag), step as u32)?[0];
            let clean = crop_patch(base, oy, ox, patch)?;
            let pair = synth_pair(&clean, self.seed, step as u32, slot as u32, &self.opts)?;
            cleans.push(pair.clean);
            dusties.push(pair.degraded);
            provs.push(pair.provenance);
        }
        Ok(Batch { clean: stack(&cleans)?, degraded: stack(&dusties)?, provenance: provs })
    }

    fn len_hint(&self) -> Option<usize> {
        None
    }
}

// ---------------------------------------------------------------------------
// paired-directory source
// ---------------------------------------------------------------------------

/// `<root>/clean/*.png|ppm` with an optional filename-matched
/// `<root>/dusty/*`; cleans without a dusty partner are degraded on the fly.
pub struct PairDirSource<P: Real> {
    items: Vec<(String, Tensor<P>, Option<Tensor<P>>)>,
    seed: u64,
    opts: SynthOptions,
}

impl<P: Real> PairDirSource<P> {
    pub fn load(root: &Path, seed: u64, opts: SynthOptions) -> Result<Self> {
        let clean_dir = root.join("clean");
        let dusty_dir = root.join("dusty");
        let mut names: Vec<String> = std::fs::read_dir(&clean_dir)
            .map_err(|e| DustError::io(clean_dir.display().to_string(), e.to_string()))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".png") || n.ends_with(".ppm"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(DustError::io(clean_dir.display().to_string(), "no .png/.ppm images"));
        }
        let mut items = Vec::with_capacity(names.len());
        for name in names {
            let clean = read_image::<P>(&clean_dir.join(&name))?;
            let dusty_path = dusty_dir.join(&name);
            let dusty = if dusty_path.exists() {
                let d = read_image::<P>(&dusty_path)?;
                if d.shape() != clean.shape() {
                    return Err(DustError::dim(
                        "pair_dir",
                        format!("{name}: clean {:?} vs dusty {:?}", clean.shape(), d.shape()),
                    ));
                }
                Some(d)
            } else {
                None
            };
            items.push((name, clean, dusty));
        }
        Ok(PairDirSource { items, seed, opts })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(n, _, _)| n.as_str())
    }
}

impl<P: Real> BatchSource<P> for PairDirSource<P> {
    fn batch(&self, step: u64, batch_size: usize, patch: usize) -> Result<Batch<P>> {
        let mut cleans = Vec::with_capacity(batch_size);
        let mut dusties = Vec::with_capacity(batch_size);
        let mut provs = Vec::with_capacity(batch_size);
        for slot in 0..batch_size {
            let tag = step * batch_size as u64 + slot as u64;
            let mut rng = rng_from_seed(derive_seed(self.seed, "choose", tag));
            let (_, clean, dusty) = &self.items[rng.gen_range(0..self.items.len())];
            let (h, w) = (clean.shape()[2], clean.shape()[3]);
            let p = patch.min(h).min(w);
            let (oy, ox) = random_patch_offsets(h, w, p, 1, derive_seed(self.seed, "offset", tag), step as u32)?[0];
            let clean_patch = crop_patch(clean, oy, ox, p)?;
            match dusty {
                Some(d) => {
                    let dusty_patch = crop_patch(d, oy, ox, p)?;
                    let (cp, dp, code) = if self.opts.augment {
                        let t = Transform::sample(derive_seed(self.seed, "augment", tag));
                        (apply_transform(&clean_patch, t)?, apply_transform(&dusty_patch, t)?, t.code())
                    } else {
                        (clean_patch, dusty_patch, Transform::IDENTITY.code())
                    };
                    cleans.push(cp);
                    dusties.push(dp);
                    provs.push(Provenance {
                        seed: self.seed,
                        epoch: step as u32,
                        idx: slot as u32,
                        ambient: [0.0; 3],
                        beta: 0.0,
                        transform: code,
                    });
                }
                None => {
                    let pair = synth_pair(&clean_patch, self.seed, step as u32, slot as u32, &self.opts)?;
                    cleans.push(pair.clean);
                    dusties.push(pair.degraded);
                    provs.push(pair.provenance);
                }
            }
        }
        Ok(Batch { clean: stack(&cleans)?, degraded: stack(&dusties)?, provenance: provs })
    }

    fn len_hint(&self) -> Option<usize> {
        Some(self.items.len())
    }
}
