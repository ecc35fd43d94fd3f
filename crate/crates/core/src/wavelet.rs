//! Orthonormal 2-d discrete wavelet transform and inverse.
//!
//! One level splits a feature map into the four subbands LL/LH/HL/HH at half
//! resolution. Filtering is separable with periodic extension, which keeps
//! the transform exactly orthogonal: the backward pass of the analysis is the
//! synthesis and vice versa. Odd extents are handled by symmetric padding of
//! one row/column before analysis; the original size is carried on the
//! subbands and restored after synthesis.
//!
//! Band naming: the first letter is the filter along width, the second along
//! height (`lh` = lowpass-W, highpass-H). Packed layout is `ll,lh,hl,hh` on
//! the channel axis.

use crate::error::{DustError, Result};
use crate::real::Real;
use crate::tensor::{concat, crop_br, pad_br, slice_axis, PadMode, Tensor};

/// Daubechies bases available to the network.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BasisKind {
    /// db1 / Haar.
    Db1,
    Db2,
}

/// Orthonormal analysis filter pair; synthesis follows from orthogonality.
#[derive(Clone, Debug)]
pub struct WaveletBasis {
    pub kind: BasisKind,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletBasis {
    pub fn db1() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_lowpass(BasisKind::Db1, vec![s, s])
    }

    pub fn db2() -> Self {
        let r3 = 3.0f64.sqrt();
        let norm = 4.0 * 2.0f64.sqrt();
        let lo = vec![(1.0 + r3) / norm, (3.0 + r3) / norm, (3.0 - r3) / norm, (1.0 - r3) / norm];
        Self::from_lowpass(BasisKind::Db2, lo)
    }

    /// Quadrature-mirror highpass: g[t] = (-1)^t h[T-1-t].
    fn from_lowpass(kind: BasisKind, lowpass: Vec<f64>) -> Self {
        let t = lowpass.len();
        let highpass: Vec<f64> = (0..t)
            .map(|i| if i % 2 == 0 { lowpass[t - 1 - i] } else { -lowpass[t - 1 - i] })
            .collect();
        WaveletBasis { kind, lowpass, highpass }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "db1" | "haar" => Ok(Self::db1()),
            "db2" => Ok(Self::db2()),
            other => Err(DustError::config(format!("unknown wavelet basis '{other}' (db1|db2)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            BasisKind::Db1 => "db1",
            BasisKind::Db2 => "db2",
        }
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn taps(&self) -> usize {
        self.lowpass.len()
    }
}

/// The four-band decomposition of a feature map, each `[N,C,H/2,W/2]`.
#[derive(Clone, Debug)]
pub struct Subbands<P: Real> {
    pub ll: Tensor<P>,
    pub lh: Tensor<P>,
    pub hl: Tensor<P>,
    pub hh: Tensor<P>,
    /// Pre-padding spatial extents; synthesis crops back to these.
    pub orig_h: usize,
    pub orig_w: usize,
}

impl<P: Real> Subbands<P> {
    pub fn new(ll: Tensor<P>, lh: Tensor<P>, hl: Tensor<P>, hh: Tensor<P>) -> Result<Self> {
        for (name, t) in [("lh", &lh), ("hl", &hl), ("hh", &hh)] {
            if t.shape() != ll.shape() {
                return Err(DustError::dim(
                    "subbands",
                    format!("band {name} shape {:?} vs ll {:?}", t.shape(), ll.shape()),
                ));
            }
        }
        if ll.shape().len() != 4 {
            return Err(DustError::dim("subbands", format!("expected NCHW bands, got {:?}", ll.shape())));
        }
        let (orig_h, orig_w) = (ll.shape()[2] * 2, ll.shape()[3] * 2);
        Ok(Subbands { ll, lh, hl, hh, orig_h, orig_w })
    }

    pub fn band_shape(&self) -> &[usize] {
        self.ll.shape()
    }
}

// --- core separable kernels (even extents, periodic extension) -------------

/// Analysis along the last axis of a `[rows, n]` plane: writes the lowpass
/// half then the highpass half of each row into `dst[rows, n]`.
fn analyze_rows<P: Real>(src: &[P], dst: &mut [P], rows: usize, n: usize, lo: &[P], hi: &[P]) {
    let half = n / 2;
    let taps = lo.len();
    for r in 0..rows {
        let x = &src[r * n..(r + 1) * n];
        let out = &mut dst[r * n..(r + 1) * n];
        for j in 0..half {
            let mut a = P::zero();
            let mut d = P::zero();
            for t in 0..taps {
                let idx = (2 * j + t) % n;
                let v = x[idx];
                a += lo[t] * v;
                d += hi[t] * v;
            }
            out[j] = a;
            out[half + j] = d;
        }
    }
}

/// Synthesis along the last axis: inverse of [`analyze_rows`].
fn synthesize_rows<P: Real>(src: &[P], dst: &mut [P], rows: usize, n: usize, lo: &[P], hi: &[P]) {
    let half = n / 2;
    let taps = lo.len();
    for r in 0..rows {
        let y = &src[r * n..(r + 1) * n];
        let out = &mut dst[r * n..(r + 1) * n];
        for v in out.iter_mut() {
            *v = P::zero();
        }
        for j in 0..half {
            let a = y[j];
            let d = y[half + j];
            for t in 0..taps {
                let idx = (2 * j + t) % n;
                out[idx] += lo[t] * a + hi[t] * d;
            }
        }
    }
}

fn transpose_plane<P: Real>(src: &[P], h: usize, w: usize) -> Vec<P> {
    let mut out = vec![P::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// Forward analysis of one `[h, w]` plane into a packed `[h, w]` buffer laid
/// out as four `h/2 x w/2` quadrant blocks in ll,lh,hl,hh order.
fn dwt_plane<P: Real>(plane: &[P], h: usize, w: usize, lo: &[P], hi: &[P]) -> Vec<P> {
    // filter along W
    let mut rowpass = vec![P::zero(); h * w];
    analyze_rows(plane, &mut rowpass, h, w, lo, hi);
    // filter along H (work transposed so rows are contiguous)
    let t = transpose_plane(&rowpass, h, w);
    let mut colpass = vec![P::zero(); h * w];
    analyze_rows(&t, &mut colpass, w, h, lo, hi);
    // colpass is [w, h]: col index selects W-band/pos, first half of each row is lowpass-H
    let (h2, w2) = (h / 2, w / 2);
    let mut packed = vec![P::zero(); h * w];
    let quad = h2 * w2;
    for wx in 0..w {
        for hy in 0..h {
            let v = colpass[wx * h + hy];
            let (wlow, j) = if wx < w2 { (true, wx) } else { (false, wx - w2) };
            let (hlow, i) = if hy < h2 { (true, hy) } else { (false, hy - h2) };
            let band = match (wlow, hlow) {
                (true, true) => 0,
                (true, false) => 1,  // lh: lowpass W, highpass H
                (false, true) => 2,  // hl
                (false, false) => 3, // hh
            };
            packed[band * quad + i * w2 + j] = v;
        }
    }
    packed
}

/// Inverse of [`dwt_plane`].
fn idwt_plane<P: Real>(packed: &[P], h: usize, w: usize, lo: &[P], hi: &[P]) -> Vec<P> {
    let (h2, w2) = (h / 2, w / 2);
    let quad = h2 * w2;
    // rebuild the [w, h] column-pass layout
    let mut colpass = vec![P::zero(); h * w];
    for wx in 0..w {
        for hy in 0..h {
            let (wlow, j) = if wx < w2 { (true, wx) } else { (false, wx - w2) };
            let (hlow, i) = if hy < h2 { (true, hy) } else { (false, hy - h2) };
            let band = match (wlow, hlow) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            colpass[wx * h + hy] = packed[band * quad + i * w2 + j];
        }
    }
    let mut t = vec![P::zero(); h * w];
    synthesize_rows(&colpass, &mut t, w, h, lo, hi);
    let rowpass = transpose_plane(&t, w, h);
    let mut out = vec![P::zero(); h * w];
    synthesize_rows(&rowpass, &mut out, h, w, lo, hi);
    out
}

fn filters_as<P: Real>(basis: &WaveletBasis) -> (Vec<P>, Vec<P>) {
    (
        basis.lowpass.iter().map(|&v| P::from_f64(v)).collect(),
        basis.highpass.iter().map(|&v| P::from_f64(v)).collect(),
    )
}

fn dwt_forward_raw<P: Real>(x: &[P], n: usize, c: usize, h: usize, w: usize, lo: &[P], hi: &[P]) -> Vec<P> {
    let (h2, w2) = (h / 2, w / 2);
    let quad = h2 * w2;
    let mut out = vec![P::zero(); n * 4 * c * quad];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            let packed = dwt_plane(plane, h, w, lo, hi);
            for band in 0..4 {
                let dst_c = band * c + ci; // packed channel layout: [ll(0..C), lh, hl, hh]
                let dst = &mut out[(ni * 4 * c + dst_c) * quad..(ni * 4 * c + dst_c + 1) * quad];
                dst.copy_from_slice(&packed[band * quad..(band + 1) * quad]);
            }
        }
    }
    out
}

fn idwt_forward_raw<P: Real>(y: &[P], n: usize, c: usize, h: usize, w: usize, lo: &[P], hi: &[P]) -> Vec<P> {
    // y: [n, 4c, h/2, w/2] packed; output [n, c, h, w]
    let (h2, w2) = (h / 2, w / 2);
    let quad = h2 * w2;
    let mut out = vec![P::zero(); n * c * h * w];
    let mut packed = vec![P::zero(); 4 * quad];
    for ni in 0..n {
        for ci in 0..c {
            for band in 0..4 {
                let src_c = band * c + ci;
                packed[band * quad..(band + 1) * quad]
                    .copy_from_slice(&y[(ni * 4 * c + src_c) * quad..(ni * 4 * c + src_c + 1) * quad]);
            }
            let plane = idwt_plane(&packed, h, w, lo, hi);
            out[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w].copy_from_slice(&plane);
        }
    }
    out
}

/// One analysis level producing the packed `[N,4C,H/2,W/2]` layout directly.
/// Requires even extents; [`dwt2`] wraps this with the odd-extent pad policy.
pub fn dwt2_packed<P: Real>(x: &Tensor<P>, basis: &WaveletBasis) -> Result<Tensor<P>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(DustError::dim("dwt2", format!("expected NCHW, got {:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(DustError::geometry("dwt2", format!("extents {h}x{w} must be even and positive")));
    }
    let (lo, hi) = filters_as::<P>(basis);
    let data = dwt_forward_raw(x.data(), n, c, h, w, &lo, &hi);
    let xc = x.clone();
    let (lo_b, hi_b) = (lo.clone(), hi.clone());
    Tensor::from_op("dwt2", vec![n, 4 * c, h / 2, w / 2], data, vec![x.clone()], move |dy| {
        // adjoint of an orthogonal analysis = synthesis
        let dx = idwt_forward_raw(dy, n, c, h, w, &lo_b, &hi_b);
        xc.accumulate_grad(&dx);
    })
}

/// Inverse of [`dwt2_packed`].
pub fn idwt2_packed<P: Real>(y: &Tensor<P>, basis: &WaveletBasis) -> Result<Tensor<P>> {
    let s = y.shape();
    if s.len() != 4 {
        return Err(DustError::dim("idwt2", format!("expected NCHW, got {:?}", s)));
    }
    if s[1] % 4 != 0 {
        return Err(DustError::dim("idwt2", format!("channel count {} not divisible by 4", s[1])));
    }
    let (n, c, h, w) = (s[0], s[1] / 4, s[2] * 2, s[3] * 2);
    let (lo, hi) = filters_as::<P>(basis);
    let data = idwt_forward_raw(y.data(), n, c, h, w, &lo, &hi);
    let yc = y.clone();
    let (lo_b, hi_b) = (lo.clone(), hi.clone());
    Tensor::from_op("idwt2", vec![n, c, h, w], data, vec![y.clone()], move |dy| {
        let dband = dwt_forward_raw(dy, n, c, h, w, &lo_b, &hi_b);
        yc.accumulate_grad(&dband);
    })
}

/// Decompose into four subbands; odd extents are symmetric-padded first and
/// the original size is recorded for exact reconstruction.
pub fn dwt2<P: Real>(x: &Tensor<P>, basis: &WaveletBasis) -> Result<Subbands<P>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(DustError::dim("dwt2", format!("expected NCHW, got {:?}", s)));
    }
    let (orig_h, orig_w) = (s[2], s[3]);
    let padded = if orig_h % 2 != 0 || orig_w % 2 != 0 {
        pad_br(x, orig_h % 2, orig_w % 2, PadMode::Symmetric)?
    } else {
        x.clone()
    };
    let packed = dwt2_packed(&padded, basis)?;
    let c = s[1];
    let bands = split(&packed, c)?;
    let [ll, lh, hl, hh] = bands;
    Ok(Subbands { ll, lh, hl, hh, orig_h, orig_w })
}

fn split<P: Real>(packed: &Tensor<P>, c: usize) -> Result<[Tensor<P>; 4]> {
    Ok([
        slice_axis(packed, 1, 0, c)?,
        slice_axis(packed, 1, c, c)?,
        slice_axis(packed, 1, 2 * c, c)?,
        slice_axis(packed, 1, 3 * c, c)?,
    ])
}

/// Reconstruct from subbands, cropping away any analysis padding.
pub fn idwt2<P: Real>(bands: &Subbands<P>, basis: &WaveletBasis) -> Result<Tensor<P>> {
    let packed = pack_bands(bands)?;
    let full = idwt2_packed(&packed, basis)?;
    let (h, w) = (full.shape()[2], full.shape()[3]);
    if bands.orig_h != h || bands.orig_w != w {
        crop_br(&full, bands.orig_h, bands.orig_w)
    } else {
        Ok(full)
    }
}

/// Channel-concatenate the bands in ll,lh,hl,hh order.
pub fn pack_bands<P: Real>(bands: &Subbands<P>) -> Result<Tensor<P>> {
    concat(&[bands.ll.clone(), bands.lh.clone(), bands.hl.clone(), bands.hh.clone()], 1)
}

/// Inverse of [`pack_bands`].
pub fn unpack_bands<P: Real>(packed: &Tensor<P>) -> Result<Subbands<P>> {
    let s = packed.shape();
    if s.len() != 4 || s[1] % 4 != 0 {
        return Err(DustError::dim(
            "unpack_bands",
            format!("channel count {} not divisible by 4", s.get(1).copied().unwrap_or(0)),
        ));
    }
    let c = s[1] / 4;
    let [ll, lh, hl, hh] = split(packed, c)?;
    Subbands::new(ll, lh, hl, hh)
}
