//! Independent reference implementations used as oracles.
//!
//! Everything here is written as plain nested loops over f64 slices and
//! shares no code with the tensor engine, the attention stack, or the
//! wavelet kernels it is used to check.

use crate::wavelet::WaveletBasis;

/// Direct six-loop cross-correlation; `x` is `[n,cin,h,w]`, `w` is
/// `[cout,cin,k,k]`, output `[n,cout,oh,ow]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reference(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Vec<f64> {
    let eff = dil * (k - 1) + 1;
    let oh = (h + 2 * pad - eff) / stride + 1;
    let ow = (w + 2 * pad - eff) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b[co]).unwrap_or(0.0);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = (oy * stride + ky * dil) as isize - pad as isize;
                                let sx = (ox * stride + kx * dil) as isize - pad as isize;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    let xv = x[((ni * cin + ci) * h + sy as usize) * w + sx as usize];
                                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Plain `[m,k] . [k,n]` triple loop.
pub fn matmul_reference(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Mean absolute difference by direct loop.
pub fn l1_reference(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs();
    }
    acc / a.len() as f64
}

// ---------------------------------------------------------------------------
// attention oracle
// ---------------------------------------------------------------------------

/// Explicit projections for the attention oracles (row-major `[dout, din]`).
pub struct AttnOracleParams<'a> {
    pub qkv_w: &'a [f64],
    pub qkv_b: &'a [f64],
    pub proj_w: &'a [f64],
    pub proj_b: &'a [f64],
    /// Optional `[heads, (2w-1)^2]` relative bias table.
    pub rel_bias: Option<&'a [f64]>,
}

fn apply_linear(x: &[f64], w: &[f64], b: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let rows = x.len() / din;
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut acc = b[o];
            for i in 0..din {
                acc += x[r * din + i] * w[o * din + i];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

fn softmax_row(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Scaled dot-product attention over already-projected per-window tokens,
/// one head at a time: q,k,v are `[l, c]`, heads split on the channel axis.
fn per_head_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    l: usize,
    c: usize,
    heads: usize,
    rel_bias: Option<&[f64]>,
    window: usize,
) -> Vec<f64> {
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let rel_index = crate::attention::relative_position_index(window);
    let side = 2 * window - 1;
    let mut out = vec![0.0; l * c];
    for hd in 0..heads {
        for i in 0..l {
            let mut scores = vec![0.0; l];
            for j in 0..l {
                let mut acc = 0.0;
                for d in 0..dh {
                    acc += q[i * c + hd * dh + d] * k[j * c + hd * dh + d];
                }
                let mut s = acc * scale;
                if let Some(table) = rel_bias {
                    s += table[hd * side * side + rel_index[i * l + j]];
                }
                scores[j] = s;
            }
            softmax_row(&mut scores);
            for d in 0..dh {
                let mut acc = 0.0;
                for j in 0..l {
                    acc += scores[j] * v[j * c + hd * dh + d];
                }
                out[i * c + hd * dh + d] = acc;
            }
        }
    }
    out
}

/// Windowed MHSA oracle for `[n,c,h,w]` with `h`, `w` multiples of `window`
/// and no shift: hand-tiled windows, looped projections and per-head
/// attention, output placed back in NCHW.
#[allow(clippy::too_many_arguments)]
pub fn mhsa_oracle(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    heads: usize,
    p: &AttnOracleParams<'_>,
) -> Vec<f64> {
    assert!(h % window == 0 && w % window == 0);
    let l = window * window;
    let mut out = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for wy in (0..h).step_by(window) {
            for wx in (0..w).step_by(window) {
                // gather tokens [l, c]
                let mut tokens = vec![0.0; l * c];
                for ty in 0..window {
                    for tx in 0..window {
                        for ci in 0..c {
                            tokens[(ty * window + tx) * c + ci] =
                                x[((ni * c + ci) * h + wy + ty) * w + wx + tx];
                        }
                    }
                }
                let qkv = apply_linear(&tokens, p.qkv_w, p.qkv_b, c, 3 * c);
                let mut q = vec![0.0; l * c];
                let mut k = vec![0.0; l * c];
                let mut v = vec![0.0; l * c];
                for t in 0..l {
                    for ci in 0..c {
                        q[t * c + ci] = qkv[t * 3 * c + ci];
                        k[t * c + ci] = qkv[t * 3 * c + c + ci];
                        v[t * c + ci] = qkv[t * 3 * c + 2 * c + ci];
                    }
                }
                let attn = per_head_attention(&q, &k, &v, l, c, heads, p.rel_bias, window);
                let proj = apply_linear(&attn, p.proj_w, p.proj_b, c, c);
                for ty in 0..window {
                    for tx in 0..window {
                        for ci in 0..c {
                            out[((ni * c + ci) * h + wy + ty) * w + wx + tx] =
                                proj[(ty * window + tx) * c + ci];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Cross-attention oracle: queries from `xq`, keys/values from `xkv`,
/// sigmoid on the projected output.
#[allow(clippy::too_many_arguments)]
pub fn mhca_oracle(
    xq: &[f64],
    xkv: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    heads: usize,
    q_w: &[f64],
    q_b: &[f64],
    kv_w: &[f64],
    kv_b: &[f64],
    proj_w: &[f64],
    proj_b: &[f64],
) -> Vec<f64> {
    assert!(h % window == 0 && w % window == 0);
    let l = window * window;
    let mut out = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for wy in (0..h).step_by(window) {
            for wx in (0..w).step_by(window) {
                let mut tq = vec![0.0; l * c];
                let mut tk = vec![0.0; l * c];
                for ty in 0..window {
                    for tx in 0..window {
                        for ci in 0..c {
                            tq[(ty * window + tx) * c + ci] = xq[((ni * c + ci) * h + wy + ty) * w + wx + tx];
                            tk[(ty * window + tx) * c + ci] = xkv[((ni * c + ci) * h + wy + ty) * w + wx + tx];
                        }
                    }
                }
                let q = apply_linear(&tq, q_w, q_b, c, c);
                let kv = apply_linear(&tk, kv_w, kv_b, c, 2 * c);
                let mut k = vec![0.0; l * c];
                let mut v = vec![0.0; l * c];
                for t in 0..l {
                    for ci in 0..c {
                        k[t * c + ci] = kv[t * 2 * c + ci];
                        v[t * c + ci] = kv[t * 2 * c + c + ci];
                    }
                }
                let attn = per_head_attention(&q, &k, &v, l, c, heads, None, window);
                let proj = apply_linear(&attn, proj_w, proj_b, c, c);
                for ty in 0..window {
                    for tx in 0..window {
                        for ci in 0..c {
                            let s = proj[(ty * window + tx) * c + ci];
                            let gate = if s >= 0.0 { 1.0 / (1.0 + (-s).exp()) } else { s.exp() / (1.0 + s.exp()) };
                            out[((ni * c + ci) * h + wy + ty) * w + wx + tx] = gate;
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// wavelet matrix oracle
// ---------------------------------------------------------------------------

/// Dense analysis matrix of one DWT level over an `n x n` plane (periodic
/// extension), rows ordered `[ll, lh, hl, hh]` band-major with row-major
/// coefficients inside each band. Built directly from the filter definition:
/// band(i,j) = sum_{ty,tx} fH[ty] * fW[tx] * x[(2i+ty) mod n][(2j+tx) mod n].
pub fn wavelet_analysis_matrix(n: usize, basis: &WaveletBasis) -> Vec<f64> {
    assert!(n % 2 == 0);
    let lo = basis.lowpass();
    let hi = basis.highpass();
    let taps = lo.len();
    let half = n / 2;
    let quad = half * half;
    let mut m = vec![0.0; (n * n) * (n * n)];
    let bands: [(&[f64], &[f64]); 4] = [(lo, lo), (hi, lo), (lo, hi), (hi, hi)]; // (fH, fW): ll, lh, hl, hh
    for (b, (fh, fw)) in bands.iter().enumerate() {
        for i in 0..half {
            for j in 0..half {
                let row = b * quad + i * half + j;
                for ty in 0..taps {
                    for tx in 0..taps {
                        let y = (2 * i + ty) % n;
                        let x = (2 * j + tx) % n;
                        m[row * n * n + y * n + x] += fh[ty] * fw[tx];
                    }
                }
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------
// MS-SSIM reference
// ---------------------------------------------------------------------------

/// Straightforward loop implementation of multi-scale SSIM matching the
/// documented conventions: 11x1.5 Gaussian valid windows, k1=0.01, k2=0.03,
/// contrast-structure means at every scale, luminance at the coarsest,
/// standard exponent weights without renormalization, 2x2 mean-pool
/// downsampling with odd edges cropped.
pub fn ms_ssim_reference(pred: &[f64], target: &[f64], n: usize, c: usize, h: usize, w: usize, scales: usize) -> f64 {
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut used = scales.clamp(1, 5);
    while used > 1 && h.min(w) < WIN << (used - 1) {
        used -= 1;
    }

    // gaussian window
    let ctr = (WIN as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; WIN * WIN];
    let mut sum = 0.0;
    for y in 0..WIN {
        for x in 0..WIN {
            let v = (-((y as f64 - ctr).powi(2) + (x as f64 - ctr).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
            win[y * WIN + x] = v;
            sum += v;
        }
    }
    for v in &mut win {
        *v /= sum;
    }

    let gauss = |img: &[f64], h: usize, w: usize| -> Vec<f64> {
        let (oh, ow) = (h - WIN + 1, w - WIN + 1);
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..WIN {
                    for kx in 0..WIN {
                        acc += img[(oy + ky) * w + ox + kx] * win[ky * WIN + kx];
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
        out
    };

    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mut xs: Vec<Vec<f64>> = (0..n * c).map(|p| pred[p * h * w..(p + 1) * h * w].to_vec()).collect();
    let mut ys: Vec<Vec<f64>> = (0..n * c).map(|p| target[p * h * w..(p + 1) * h * w].to_vec()).collect();
    let (mut ch, mut cw) = (h, w);
    let mut value = 1.0;
    for s in 0..used {
        let mut cs_sum = 0.0;
        let mut cs_count = 0usize;
        let mut l_sum = 0.0;
        for (xp, yp) in xs.iter().zip(&ys) {
            let mu_x = gauss(xp, ch, cw);
            let mu_y = gauss(yp, ch, cw);
            let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = yp.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = xp.iter().zip(yp).map(|(a, b)| a * b).collect();
            let exx = gauss(&xx, ch, cw);
            let eyy = gauss(&yy, ch, cw);
            let exy = gauss(&xy, ch, cw);
            for i in 0..mu_x.len() {
                let sx = exx[i] - mu_x[i] * mu_x[i];
                let sy = eyy[i] - mu_y[i] * mu_y[i];
                let sxy = exy[i] - mu_x[i] * mu_y[i];
                cs_sum += (2.0 * sxy + c2) / (sx + sy + c2);
                if s == used - 1 {
                    l_sum += (2.0 * mu_x[i] * mu_y[i] + c1) / (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1);
                }
                cs_count += 1;
            }
        }
        let cs_mean = (cs_sum / cs_count as f64).max(1e-12);
        value *= cs_mean.powf(WEIGHTS[s]);
        if s == used - 1 {
            let l_mean = (l_sum / cs_count as f64).max(1e-12);
            value *= l_mean.powf(WEIGHTS[s]);
        } else {
            // 2x2 mean pool, odd edges cropped
            let (eh, ew) = (ch - ch % 2, cw - cw % 2);
            let (nh, nw) = (eh / 2, ew / 2);
            for plane in xs.iter_mut().chain(ys.iter_mut()) {
                let mut out = vec![0.0; nh * nw];
                for y in 0..nh {
                    for x in 0..nw {
                        out[y * nw + x] = 0.25
                            * (plane[2 * y * cw + 2 * x]
                                + plane[2 * y * cw + 2 * x + 1]
                                + plane[(2 * y + 1) * cw + 2 * x]
                                + plane[(2 * y + 1) * cw + 2 * x + 1]);
                    }
                }
                *plane = out;
            }
            ch = nh;
            cw = nw;
        }
    }
    value
}
