//! Shifted-window multi-head self-attention, windowed cross-attention, and
//! the parallel spatial aggregation (SFAS) branch.
//!
//! Features stay in `[N,C,H,W]` layout; attention flattens each window into
//! `L = window^2` tokens. Windows are tiled on a canvas padded up to a
//! multiple of the window size; a cyclic shift (when enabled) is folded into
//! the same gather. An additive mask keeps tokens from attending across the
//! wrap seam or into padding: the pre-softmax mask value is -1e9.

use std::rc::Rc;

use crate::error::{DustError, Result};
use crate::param::Parameter;
use crate::real::Real;
use crate::tensor::{concat, conv2d, linear, relu, sigmoid, split, Tensor};

pub const MASK_NEG: f64 = -1e9;

/// Head layout of an attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionHeads {
    pub num_heads: usize,
    pub head_dim: usize,
}

impl AttentionHeads {
    pub fn new(channels: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || channels % num_heads != 0 {
            return Err(DustError::config(format!(
                "channels {channels} not divisible by num_heads {num_heads}"
            )));
        }
        Ok(AttentionHeads { num_heads, head_dim: channels / num_heads })
    }

    pub fn channels(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Query scaling 1/sqrt(head_dim).
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }
}

/// Window tiling of a feature map: padding, optional cyclic shift, and the
/// token gather maps shared by partition/reverse and the attention mask.
#[derive(Clone, Debug)]
pub struct WindowGrid {
    pub window: usize,
    pub shift: usize,
    pub h: usize,
    pub w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    /// Per (window, token): source spatial index into the unpadded map, or -1.
    token_src: Rc<Vec<i64>>,
    /// Per content position: window*L + token.
    position_to_token: Rc<Vec<usize>>,
    /// Additive mask `[nW, L, L]` in f64; None when no seam and no padding.
    mask: Option<Rc<Vec<f64>>>,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, window: usize, shift: usize) -> Result<Self> {
        if window < 1 || h == 0 || w == 0 {
            return Err(DustError::geometry("window_grid", format!("{h}x{w}, window {window}")));
        }
        if shift != 0 && shift != window / 2 {
            return Err(DustError::geometry(
                "window_grid",
                format!("shift {shift} must be 0 or window/2 ({})", window / 2),
            ));
        }
        let padded_h = h.div_ceil(window) * window;
        let padded_w = w.div_ceil(window) * window;
        let (wy_n, wx_n) = (padded_h / window, padded_w / window);
        let n_windows = wy_n * wx_n;
        let l = window * window;

        let mut token_src = vec![-1i64; n_windows * l];
        let mut position_to_token = vec![0usize; h * w];
        // flags per token for mask construction
        let mut wrapped_h = vec![false; n_windows * l];
        let mut wrapped_w = vec![false; n_windows * l];
        let mut is_pad = vec![false; n_windows * l];
        for vy in 0..wy_n {
            for vx in 0..wx_n {
                let v = vy * wx_n + vx;
                for ty in 0..window {
                    for tx in 0..window {
                        let t = ty * window + tx;
                        // post-shift canvas position
                        let py = vy * window + ty;
                        let px = vx * window + tx;
                        // source on the padded canvas (cyclic shift by -shift)
                        let sy = (py + shift) % padded_h;
                        let sx = (px + shift) % padded_w;
                        let idx = v * l + t;
                        wrapped_h[idx] = py + shift >= padded_h;
                        wrapped_w[idx] = px + shift >= padded_w;
                        if sy < h && sx < w {
                            token_src[idx] = (sy * w + sx) as i64;
                            position_to_token[sy * w + sx] = idx;
                        } else {
                            is_pad[idx] = true;
                        }
                    }
                }
            }
        }

        let needs_mask = shift > 0 || padded_h != h || padded_w != w;
        let mask = if needs_mask {
            let mut m = vec![0.0f64; n_windows * l * l];
            for v in 0..n_windows {
                for i in 0..l {
                    for j in 0..l {
                        let a = v * l + i;
                        let b = v * l + j;
                        let compatible = wrapped_h[a] == wrapped_h[b]
                            && wrapped_w[a] == wrapped_w[b]
                            && is_pad[a] == is_pad[b];
                        if !compatible {
                            m[(v * l + i) * l + j] = MASK_NEG;
                        }
                    }
                }
            }
            Some(Rc::new(m))
        } else {
            None
        };

        Ok(WindowGrid {
            window,
            shift,
            h,
            w,
            padded_h,
            padded_w,
            token_src: Rc::new(token_src),
            position_to_token: Rc::new(position_to_token),
            mask,
        })
    }

    pub fn n_windows(&self) -> usize {
        (self.padded_h / self.window) * (self.padded_w / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn padding(&self) -> (usize, usize) {
        (self.padded_h - self.h, self.padded_w - self.w)
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    /// Additive mask `[nW * L * L]` (0 or -1e9), present when the grid has a
    /// wrap seam or padding.
    pub fn mask_values<P: Real>(&self) -> Option<Vec<P>> {
        self.mask.as_ref().map(|m| m.iter().map(|&v| P::from_f64(v)).collect())
    }
}

/// Tile `[N,C,H,W]` into `[N*nW, C, window, window]` (shift applied first).
pub fn window_partition<P: Real>(x: &Tensor<P>, grid: &WindowGrid) -> Result<Tensor<P>> {
    let s = x.shape();
    if s.len() != 4 || s[2] != grid.h || s[3] != grid.w {
        return Err(DustError::geometry(
            "window_partition",
            format!("input {:?} vs grid {}x{}", s, grid.h, grid.w),
        ));
    }
    let (n, c) = (s[0], s[1]);
    let (nw, l) = (grid.n_windows(), grid.tokens_per_window());
    let hw = grid.h * grid.w;
    let map = Rc::clone(&grid.token_src);
    let mut data = vec![P::zero(); n * nw * c * l];
    for ni in 0..n {
        for v in 0..nw {
            for ci in 0..c {
                let src_plane = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                let dst = &mut data[((ni * nw + v) * c + ci) * l..((ni * nw + v) * c + ci + 1) * l];
                for (t, o) in dst.iter_mut().enumerate() {
                    let src = map[v * l + t];
                    if src >= 0 {
                        *o = src_plane[src as usize];
                    }
                }
            }
        }
    }
    let xc = x.clone();
    let shape = vec![n * nw, c, grid.window, grid.window];
    Tensor::from_op("window_partition", shape, data, vec![x.clone()], move |dy| {
        let mut dx = vec![P::zero(); xc.numel()];
        for ni in 0..n {
            for v in 0..nw {
                for ci in 0..c {
                    let dplane = &mut dx[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let row = &dy[((ni * nw + v) * c + ci) * l..((ni * nw + v) * c + ci + 1) * l];
                    for (t, &g) in row.iter().enumerate() {
                        let src = map[v * l + t];
                        if src >= 0 {
                            dplane[src as usize] += g;
                        }
                    }
                }
            }
        }
        xc.accumulate_grad(&dx);
    })
}

/// Exact inverse of [`window_partition`] (unshift and crop included).
pub fn window_reverse<P: Real>(windows: &Tensor<P>, grid: &WindowGrid, n: usize) -> Result<Tensor<P>> {
    let s = windows.shape();
    let (nw, l) = (grid.n_windows(), grid.tokens_per_window());
    if s.len() != 4 || s[0] != n * nw || s[2] != grid.window || s[3] != grid.window {
        return Err(DustError::geometry(
            "window_reverse",
            format!("input {:?} vs grid with {} windows of {}", s, nw, grid.window),
        ));
    }
    let c = s[1];
    let hw = grid.h * grid.w;
    let inv = Rc::clone(&grid.position_to_token);
    let mut data = vec![P::zero(); n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            for (p, o) in dst.iter_mut().enumerate() {
                let vt = inv[p];
                let (v, t) = (vt / l, vt % l);
                *o = windows.data()[((ni * nw + v) * c + ci) * l + t];
            }
        }
    }
    let wc = windows.clone();
    let shape = vec![n, c, grid.h, grid.w];
    Tensor::from_op("window_reverse", shape, data, vec![windows.clone()], move |dy| {
        let mut dw = vec![P::zero(); wc.numel()];
        for ni in 0..n {
            for ci in 0..c {
                let row = &dy[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                for (p, &g) in row.iter().enumerate() {
                    let vt = inv[p];
                    let (v, t) = (vt / l, vt % l);
                    dw[((ni * nw + v) * c + ci) * l + t] += g;
                }
            }
        }
        wc.accumulate_grad(&dw);
    })
}

/// Relative-position index table for an `window x window` token grid:
/// entry (i, j) indexes a `(2w-1)^2` bias table.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let l = window * window;
    let side = 2 * window - 1;
    let mut idx = vec![0usize; l * l];
    for iy in 0..window {
        for ix in 0..window {
            for jy in 0..window {
                for jx in 0..window {
                    let i = iy * window + ix;
                    let j = jy * window + jx;
                    let dy = iy as isize - jy as isize + window as isize - 1;
                    let dx = ix as isize - jx as isize + window as isize - 1;
                    idx[i * l + j] = dy as usize * side + dx as usize;
                }
            }
        }
    }
    idx
}

pub fn rel_bias_table_len(window: usize) -> usize {
    (2 * window - 1) * (2 * window - 1)
}

/// scores `[B,H,L,L]` plus a learnable per-head relative position bias.
pub fn add_rel_bias<P: Real>(scores: &Tensor<P>, table: &Tensor<P>, index: Rc<Vec<usize>>) -> Result<Tensor<P>> {
    let s = scores.shape();
    if s.len() != 4 || table.shape().len() != 2 || table.shape()[0] != s[1] {
        return Err(DustError::dim(
            "add_rel_bias",
            format!("scores {:?} vs table {:?}", s, table.shape()),
        ));
    }
    let (b, heads, l) = (s[0], s[1], s[2]);
    if index.len() != l * l {
        return Err(DustError::dim("add_rel_bias", format!("index len {} vs L^2 {}", index.len(), l * l)));
    }
    let tlen = table.shape()[1];
    let mut data = scores.data().to_vec();
    for bi in 0..b {
        for hi in 0..heads {
            let trow = &table.data()[hi * tlen..(hi + 1) * tlen];
            let base = (bi * heads + hi) * l * l;
            for (p, &t) in index.iter().enumerate() {
                data[base + p] += trow[t];
            }
        }
    }
    let (sc, tc) = (scores.clone(), table.clone());
    let idx = Rc::clone(&index);
    Tensor::from_op("add_rel_bias", s.to_vec(), data, vec![scores.clone(), table.clone()], move |dy| {
        sc.accumulate_grad(dy);
        if tc.requires_grad() {
            let mut dt = vec![P::zero(); tc.numel()];
            for bi in 0..b {
                for hi in 0..heads {
                    let base = (bi * heads + hi) * l * l;
                    let drow = &mut dt[hi * tlen..(hi + 1) * tlen];
                    for (p, &t) in idx.iter().enumerate() {
                        drow[t] += dy[base + p];
                    }
                }
            }
            tc.accumulate_grad(&dt);
        }
    })
}

/// scores `[N*nW,H,L,L]` plus the constant window mask `[nW,L,L]`.
pub fn add_window_mask<P: Real>(scores: &Tensor<P>, mask: Vec<P>, n_windows: usize) -> Result<Tensor<P>> {
    let s = scores.shape();
    let (b, heads, l) = (s[0], s[1], s[2]);
    if b % n_windows != 0 || mask.len() != n_windows * l * l {
        return Err(DustError::dim(
            "add_window_mask",
            format!("scores {:?} vs mask for {} windows", s, n_windows),
        ));
    }
    let mut data = scores.data().to_vec();
    for bi in 0..b {
        let v = bi % n_windows;
        let mrow = &mask[v * l * l..(v + 1) * l * l];
        for hi in 0..heads {
            let base = (bi * heads + hi) * l * l;
            for (p, &m) in mrow.iter().enumerate() {
                data[base + p] += m;
            }
        }
    }
    let sc = scores.clone();
    Tensor::from_op("add_window_mask", s.to_vec(), data, vec![scores.clone()], move |dy| {
        sc.accumulate_grad(dy);
    })
}

// ---------------------------------------------------------------------------
// multi-head attention over windows
// ---------------------------------------------------------------------------

pub struct MhsaParams<P: Real> {
    pub qkv_w: Tensor<P>,
    pub qkv_b: Tensor<P>,
    pub proj_w: Tensor<P>,
    pub proj_b: Tensor<P>,
    pub rel_bias: Option<Tensor<P>>,
}

/// Gather `[N,C,H,W]` directly into window tokens `[N*nW, L, C]`
/// (shift applied, padding zero-filled).
pub fn window_tokens<P: Real>(x: &Tensor<P>, grid: &WindowGrid) -> Result<Tensor<P>> {
    let s = x.shape();
    if s.len() != 4 || s[2] != grid.h || s[3] != grid.w {
        return Err(DustError::geometry(
            "window_tokens",
            format!("input {:?} vs grid {}x{}", s, grid.h, grid.w),
        ));
    }
    let (n, c) = (s[0], s[1]);
    let (nw, l) = (grid.n_windows(), grid.tokens_per_window());
    let hw = grid.h * grid.w;
    let map = Rc::clone(&grid.token_src);
    let mut data = vec![P::zero(); n * nw * l * c];
    for ni in 0..n {
        let img = &x.data()[ni * c * hw..(ni + 1) * c * hw];
        for v in 0..nw {
            for t in 0..l {
                let src = map[v * l + t];
                if src >= 0 {
                    let dst = &mut data[((ni * nw + v) * l + t) * c..((ni * nw + v) * l + t + 1) * c];
                    let mut off = src as usize;
                    for o in dst.iter_mut() {
                        *o = img[off];
                        off += hw;
                    }
                }
            }
        }
    }
    let xc = x.clone();
    Tensor::from_op("window_tokens", vec![n * nw, l, c], data, vec![x.clone()], move |dy| {
        let mut dx = vec![P::zero(); xc.numel()];
        for ni in 0..n {
            let dimg = &mut dx[ni * c * hw..(ni + 1) * c * hw];
            for v in 0..nw {
                for t in 0..l {
                    let src = map[v * l + t];
                    if src >= 0 {
                        let row = &dy[((ni * nw + v) * l + t) * c..((ni * nw + v) * l + t + 1) * c];
                        let mut off = src as usize;
                        for &g in row {
                            dimg[off] += g;
                            off += hw;
                        }
                    }
                }
            }
        }
        xc.accumulate_grad(&dx);
    })
}

/// Inverse of [`window_tokens`]: scatter tokens back to `[N,C,H,W]`.
pub fn tokens_to_feature<P: Real>(tokens: &Tensor<P>, grid: &WindowGrid, n: usize) -> Result<Tensor<P>> {
    let s = tokens.shape();
    let (nw, l) = (grid.n_windows(), grid.tokens_per_window());
    if s.len() != 3 || s[0] != n * nw || s[1] != l {
        return Err(DustError::geometry(
            "tokens_to_feature",
            format!("input {:?} vs grid with {} windows of {} tokens", s, nw, l),
        ));
    }
    let c = s[2];
    let hw = grid.h * grid.w;
    let inv = Rc::clone(&grid.position_to_token);
    let mut data = vec![P::zero(); n * c * hw];
    for ni in 0..n {
        let img = &mut data[ni * c * hw..(ni + 1) * c * hw];
        for (p_idx, &vt) in inv.iter().enumerate() {
            let (v, t) = (vt / l, vt % l);
            let row = &tokens.data()[((ni * nw + v) * l + t) * c..((ni * nw + v) * l + t + 1) * c];
            let mut off = p_idx;
            for &val in row {
                img[off] = val;
                off += hw;
            }
        }
    }
    let tc = tokens.clone();
    Tensor::from_op("tokens_to_feature", vec![n, c, grid.h, grid.w], data, vec![tokens.clone()], move |dy| {
        let mut dt = vec![P::zero(); tc.numel()];
        for ni in 0..n {
            let dimg = &dy[ni * c * hw..(ni + 1) * c * hw];
            for (p_idx, &vt) in inv.iter().enumerate() {
                let (v, t) = (vt / l, vt % l);
                let row = &mut dt[((ni * nw + v) * l + t) * c..((ni * nw + v) * l + t + 1) * c];
                let mut off = p_idx;
                for g in row.iter_mut() {
                    *g += dimg[off];
                    off += hw;
                }
            }
        }
        tc.accumulate_grad(&dt);
    })
}

/// Small row-major matmul on scratch buffers (single window/head).
fn mm_into<P: Real>(out: &mut [P], a: &[P], b: &[P], m: usize, k: usize, n: usize) {
    for v in out.iter_mut() {
        *v = P::zero();
    }
    for i in 0..m {
        for ll in 0..k {
            let av = a[i * k + ll];
            let brow = &b[ll * n..(ll + 1) * n];
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Fused multi-head scaled dot-product attention over window tokens:
/// q, k, v are `[B, L, C]`; relative bias (per head) and the grid's window
/// mask are added to the scores before the row softmax. One tape node.
pub fn attention_core<P: Real>(
    q: &Tensor<P>,
    k: &Tensor<P>,
    v: &Tensor<P>,
    heads: &AttentionHeads,
    grid: &WindowGrid,
    rel_bias: Option<&Tensor<P>>,
) -> Result<Tensor<P>> {
    let s = q.shape();
    if s.len() != 3 || k.shape() != s || v.shape() != s {
        return Err(DustError::dim("attention_core", format!("q {:?} k {:?} v {:?}", s, k.shape(), v.shape())));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    if heads.channels() != c {
        return Err(DustError::config(format!(
            "attention configured for {} channels, tokens have {c}",
            heads.channels()
        )));
    }
    if l != grid.tokens_per_window() || b % grid.n_windows() != 0 {
        return Err(DustError::geometry(
            "attention_core",
            format!("tokens {:?} vs grid with {} windows of {}", s, grid.n_windows(), grid.tokens_per_window()),
        ));
    }
    let nh = heads.num_heads;
    let dh = heads.head_dim;
    let scale = P::from_f64(heads.scale());
    let n_windows = grid.n_windows();
    let mask: Option<Vec<P>> = grid.mask_values::<P>();
    let rel_index: Option<Rc<Vec<usize>>> =
        rel_bias.map(|_| Rc::new(relative_position_index(grid.window)));
    let table_len = rel_bias.map(|t| t.shape()[1]).unwrap_or(0);
    if let Some(t) = rel_bias {
        if t.shape().len() != 2 || t.shape()[0] != nh || t.shape()[1] != rel_bias_table_len(grid.window) {
            return Err(DustError::dim(
                "attention_core",
                format!("bias table {:?} vs heads {nh} window {}", t.shape(), grid.window),
            ));
        }
    }

    let mut out = vec![P::zero(); b * l * c];
    // softmax weights saved for the backward pass
    let mut attn_saved = vec![P::zero(); b * nh * l * l];
    let mut qh = vec![P::zero(); l * dh];
    let mut kh = vec![P::zero(); l * dh];
    let mut vh = vec![P::zero(); l * dh];
    let mut scores = vec![P::zero(); l * l];
    let gather = |dst: &mut [P], src: &[P], bi: usize, h: usize| {
        for t in 0..l {
            let row = &src[(bi * l + t) * c + h * dh..(bi * l + t) * c + (h + 1) * dh];
            dst[t * dh..(t + 1) * dh].copy_from_slice(row);
        }
    };
    for bi in 0..b {
        for h in 0..nh {
            gather(&mut qh, q.data(), bi, h);
            gather(&mut kh, k.data(), bi, h);
            gather(&mut vh, v.data(), bi, h);
            // scores = q k^T * scale (+ bias + mask)
            for i in 0..l {
                let qi = &qh[i * dh..(i + 1) * dh];
                for j in 0..l {
                    let mut acc = P::zero();
                    let kj = &kh[j * dh..(j + 1) * dh];
                    for d in 0..dh {
                        acc += qi[d] * kj[d];
                    }
                    scores[i * l + j] = acc * scale;
                }
            }
            if let (Some(tbl), Some(idx)) = (rel_bias, rel_index.as_ref()) {
                let trow = &tbl.data()[h * table_len..(h + 1) * table_len];
                for (p_idx, &t_idx) in idx.iter().enumerate() {
                    scores[p_idx] += trow[t_idx];
                }
            }
            if let Some(m) = &mask {
                let mrow = &m[(bi % n_windows) * l * l..(bi % n_windows + 1) * l * l];
                for (sv, &mv) in scores.iter_mut().zip(mrow) {
                    *sv += mv;
                }
            }
            // row softmax
            for i in 0..l {
                let row = &mut scores[i * l..(i + 1) * l];
                let mut mx = row[0];
                for &val in row.iter() {
                    mx = mx.max(val);
                }
                let mut sum = P::zero();
                for val in row.iter_mut() {
                    *val = (*val - mx).exp();
                    sum += *val;
                }
                let inv = P::one() / sum;
                for val in row.iter_mut() {
                    *val *= inv;
                }
            }
            attn_saved[(bi * nh + h) * l * l..(bi * nh + h + 1) * l * l].copy_from_slice(&scores);
            // out = attn . v, scattered back to the interleaved head layout
            for i in 0..l {
                let arow = &scores[i * l..(i + 1) * l];
                let orow = &mut out[(bi * l + i) * c + h * dh..(bi * l + i) * c + (h + 1) * dh];
                for (j, &a) in arow.iter().enumerate() {
                    let vrow = &vh[j * dh..(j + 1) * dh];
                    for (o, &vv) in orow.iter_mut().zip(vrow) {
                        *o += a * vv;
                    }
                }
            }
        }
    }

    let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
    let bias_c = rel_bias.cloned();
    let mut parents = vec![q.clone(), k.clone(), v.clone()];
    if let Some(t) = rel_bias {
        parents.push(t.clone());
    }
    let rel_index_b = rel_index.clone();
    Tensor::from_op("attention_core", vec![b, l, c], out, parents, move |dy| {
        let mut dq = vec![P::zero(); qc.numel()];
        let mut dk = vec![P::zero(); kc.numel()];
        let mut dv = vec![P::zero(); vc.numel()];
        let mut dtable = bias_c.as_ref().map(|t| vec![P::zero(); t.numel()]);
        let mut qh = vec![P::zero(); l * dh];
        let mut kh = vec![P::zero(); l * dh];
        let mut vh = vec![P::zero(); l * dh];
        let mut doh = vec![P::zero(); l * dh];
        let mut dattn = vec![P::zero(); l * l];
        let mut ds = vec![P::zero(); l * l];
        let mut dqh = vec![P::zero(); l * dh];
        let mut dkh = vec![P::zero(); l * dh];
        let mut dvh = vec![P::zero(); l * dh];
        let gather = |dst: &mut [P], src: &[P], bi: usize, h: usize| {
            for t in 0..l {
                let row = &src[(bi * l + t) * c + h * dh..(bi * l + t) * c + (h + 1) * dh];
                dst[t * dh..(t + 1) * dh].copy_from_slice(row);
            }
        };
        let scatter_add = |dst: &mut [P], src: &[P], bi: usize, h: usize| {
            for t in 0..l {
                let row = &mut dst[(bi * l + t) * c + h * dh..(bi * l + t) * c + (h + 1) * dh];
                for (o, &g) in row.iter_mut().zip(&src[t * dh..(t + 1) * dh]) {
                    *o += g;
                }
            }
        };
        for bi in 0..b {
            for h in 0..nh {
                gather(&mut qh, qc.data(), bi, h);
                gather(&mut kh, kc.data(), bi, h);
                gather(&mut vh, vc.data(), bi, h);
                gather(&mut doh, dy, bi, h);
                let attn = &attn_saved[(bi * nh + h) * l * l..(bi * nh + h + 1) * l * l];
                // dattn = dO . V^T ; dV = attn^T . dO
                for i in 0..l {
                    let di = &doh[i * dh..(i + 1) * dh];
                    for j in 0..l {
                        let vj = &vh[j * dh..(j + 1) * dh];
                        let mut acc = P::zero();
                        for d in 0..dh {
                            acc += di[d] * vj[d];
                        }
                        dattn[i * l + j] = acc;
                    }
                }
                for vv in dvh.iter_mut() {
                    *vv = P::zero();
                }
                for i in 0..l {
                    let ai = &attn[i * l..(i + 1) * l];
                    let di = &doh[i * dh..(i + 1) * dh];
                    for (j, &a) in ai.iter().enumerate() {
                        let dvj = &mut dvh[j * dh..(j + 1) * dh];
                        for (o, &g) in dvj.iter_mut().zip(di) {
                            *o += a * g;
                        }
                    }
                }
                // softmax backward per row: ds = attn * (dattn - <dattn, attn>)
                for i in 0..l {
                    let ai = &attn[i * l..(i + 1) * l];
                    let dai = &dattn[i * l..(i + 1) * l];
                    let mut dot_val = P::zero();
                    for (a, g) in ai.iter().zip(dai) {
                        dot_val += *a * *g;
                    }
                    let dsr = &mut ds[i * l..(i + 1) * l];
                    for ((o, &a), &g) in dsr.iter_mut().zip(ai).zip(dai) {
                        *o = a * (g - dot_val);
                    }
                }
                if let (Some(dt), Some(idx)) = (dtable.as_mut(), rel_index_b.as_ref()) {
                    let drow = &mut dt[h * table_len..(h + 1) * table_len];
                    for (p_idx, &t_idx) in idx.iter().enumerate() {
                        drow[t_idx] += ds[p_idx];
                    }
                }
                // dq = ds . k * scale ; dk = ds^T . q * scale
                mm_into(&mut dqh, &ds, &kh, l, l, dh);
                for o in dqh.iter_mut() {
                    *o *= scale;
                }
                for vv in dkh.iter_mut() {
                    *vv = P::zero();
                }
                for i in 0..l {
                    let qi = &qh[i * dh..(i + 1) * dh];
                    for j in 0..l {
                        let g = ds[i * l + j] * scale;
                        let dkj = &mut dkh[j * dh..(j + 1) * dh];
                        for (o, &qv) in dkj.iter_mut().zip(qi) {
                            *o += g * qv;
                        }
                    }
                }
                scatter_add(&mut dq, &dqh, bi, h);
                scatter_add(&mut dk, &dkh, bi, h);
                scatter_add(&mut dv, &dvh, bi, h);
            }
        }
        qc.accumulate_grad(&dq);
        kc.accumulate_grad(&dk);
        vc.accumulate_grad(&dv);
        if let (Some(t), Some(dt)) = (&bias_c, dtable) {
            t.accumulate_grad(&dt);
        }
    })
}

/// Window multi-head self-attention over an `[N,C,H,W]` feature map.
pub fn mhsa<P: Real>(
    x: &Tensor<P>,
    grid: &WindowGrid,
    heads: &AttentionHeads,
    p: &MhsaParams<P>,
) -> Result<Tensor<P>> {
    let c = x.shape()[1];
    if heads.channels() != c {
        return Err(DustError::config(format!(
            "attention configured for {} channels, input has {c}",
            heads.channels()
        )));
    }
    let n = x.shape()[0];
    let tokens = window_tokens(x, grid)?;
    let qkv = linear(&tokens, &p.qkv_w, Some(&p.qkv_b))?;
    let parts = split(&qkv, 2, &[c, c, c])?;
    let out = attention_core(&parts[0], &parts[1], &parts[2], heads, grid, p.rel_bias.as_ref())?;
    let out = linear(&out, &p.proj_w, Some(&p.proj_b))?;
    tokens_to_feature(&out, grid, n)
}

pub struct MhcaParams<P: Real> {
    pub q_w: Tensor<P>,
    pub q_b: Tensor<P>,
    pub kv_w: Tensor<P>,
    pub kv_b: Tensor<P>,
    pub proj_w: Tensor<P>,
    pub proj_b: Tensor<P>,
}

/// Windowed multi-head cross-attention: queries from `query_feat`, keys and
/// values from `keyval_feat`, attention output squashed by a sigmoid into a
/// gate in (0,1). Windows are unshifted.
pub fn mhca<P: Real>(
    query_feat: &Tensor<P>,
    keyval_feat: &Tensor<P>,
    grid: &WindowGrid,
    heads: &AttentionHeads,
    p: &MhcaParams<P>,
) -> Result<Tensor<P>> {
    if query_feat.shape() != keyval_feat.shape() {
        return Err(DustError::dim(
            "mhca",
            format!("query {:?} vs key/value {:?}", query_feat.shape(), keyval_feat.shape()),
        ));
    }
    if grid.shift != 0 {
        return Err(DustError::geometry("mhca", "cross-attention windows are unshifted"));
    }
    let c = query_feat.shape()[1];
    let n = query_feat.shape()[0];
    let q_tokens = window_tokens(query_feat, grid)?;
    let kv_tokens = window_tokens(keyval_feat, grid)?;
    let q = linear(&q_tokens, &p.q_w, Some(&p.q_b))?;
    let kv = linear(&kv_tokens, &p.kv_w, Some(&p.kv_b))?;
    let parts = split(&kv, 2, &[c, c])?;
    let out = attention_core(&q, &parts[0], &parts[1], heads, grid, None)?;
    let out = linear(&out, &p.proj_w, Some(&p.proj_b))?;
    let out = tokens_to_feature(&out, grid, n)?;
    sigmoid(&out)
}

pub struct SfasParams<P: Real> {
    pub conv1_w: Tensor<P>,
    pub conv1_b: Tensor<P>,
    pub conv2_w: Tensor<P>,
    pub conv2_b: Tensor<P>,
}

/// Channel-preserving convolutional branch run in parallel with window
/// attention: 3x3 conv -> ReLU -> 3x3 conv, padding 1.
pub fn sfas_branch<P: Real>(x: &Tensor<P>, p: &SfasParams<P>) -> Result<Tensor<P>> {
    let mid = relu(&conv2d(x, &p.conv1_w, Some(&p.conv1_b), 1, 1, 1)?)?;
    conv2d(&mid, &p.conv2_w, Some(&p.conv2_b), 1, 1, 1)
}

/// Concatenate the attention and convolution branch outputs on channels and
/// fuse back to C with a 1x1 conv.
pub fn fuse_branches<P: Real>(
    attn_out: &Tensor<P>,
    conv_out: &Tensor<P>,
    fuse_w: &Tensor<P>,
    fuse_b: &Tensor<P>,
) -> Result<Tensor<P>> {
    let cat = concat(&[attn_out.clone(), conv_out.clone()], 1)?;
    conv2d(&cat, fuse_w, Some(fuse_b), 1, 0, 1)
}

/// Convenience: collect MHSA parameter tensors out of [`Parameter`] handles.
pub fn mhsa_params_from<P: Real>(
    qkv_w: &Parameter<P>,
    qkv_b: &Parameter<P>,
    proj_w: &Parameter<P>,
    proj_b: &Parameter<P>,
    rel_bias: Option<&Parameter<P>>,
) -> MhsaParams<P> {
    MhsaParams {
        qkv_w: qkv_w.tensor(),
        qkv_b: qkv_b.tensor(),
        proj_w: proj_w.tensor(),
        proj_b: proj_b.tensor(),
        rel_bias: rel_bias.map(|p| p.tensor()),
    }
}
