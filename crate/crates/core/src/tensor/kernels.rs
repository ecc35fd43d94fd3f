//! Raw compute kernels over contiguous slices.
//!
//! Hot loops are written so LLVM can vectorize them (contiguous inner loops,
//! no bounds checks after slicing). Accumulation order inside each output
//! element is fixed, so results do not depend on the thread count.

use crate::real::Real;
use crate::threads::for_each_chunk;

/// `out[m,n] += a[m,k] . b[k,n]` with `out` zero-initialized by the caller.
pub fn matmul_acc<P: Real>(out: &mut [P], a: &[P], b: &[P], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if m * n * k >= 1 << 17 {
        for_each_chunk(out, n, |i, row| {
            let arow = &a[i * k..(i + 1) * k];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        });
    } else {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let arow = &a[i * k..(i + 1) * k];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

pub fn matmul<P: Real>(a: &[P], b: &[P], m: usize, k: usize, n: usize) -> Vec<P> {
    let mut out = vec![P::zero(); m * n];
    matmul_acc(&mut out, a, b, m, k, n);
    out
}

/// Dot product with independent accumulator lanes (the single-accumulator
/// form is a serial dependency chain the compiler may not vectorize).
pub fn dot<P: Real>(a: &[P], b: &[P]) -> P {
    const LANES: usize = 16;
    let mut acc = [P::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = P::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let mut half = LANES / 2;
    while half > 0 {
        for l in 0..half {
            let hi = acc[l + half];
            acc[l] += hi;
        }
        half /= 2;
    }
    acc[0] + tail
}

/// `a[m,k] . b[n,k]^T -> [m,n]` (dot products of rows).
pub fn matmul_bt<P: Real>(a: &[P], b: &[P], m: usize, k: usize, n: usize) -> Vec<P> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![P::zero(); m * n];
    for_each_chunk(&mut out, n, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(arow, &b[j * k..(j + 1) * k]);
        }
    });
    out
}

pub fn transpose2<P: Real>(a: &[P], rows: usize, cols: usize) -> Vec<P> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![P::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Convolution geometry for one spatial axis.
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let eff = dil * (k - 1) + 1;
    let padded = extent + 2 * pad;
    if padded < eff {
        return None;
    }
    Some((padded - eff) / stride + 1)
}

/// Unfold one image `[c, h, w]` into columns `[c*k*k, oh*ow]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col<P: Real>(
    x: &[P],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    oh: usize,
    ow: usize,
) -> Vec<P> {
    let mut cols = vec![P::zero(); c * k * k * oh * ow];
    for_each_chunk(&mut cols, oh * ow, |row_idx, row| {
        let ci = row_idx / (k * k);
        let ky = (row_idx / k) % k;
        let kx = row_idx % k;
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            let sy = (oy * stride + ky * dil) as isize - pad as isize;
            let out_row = &mut row[oy * ow..(oy + 1) * ow];
            if sy < 0 || sy >= h as isize {
                continue; // stays zero
            }
            let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
            for (ox, o) in out_row.iter_mut().enumerate() {
                let sx = (ox * stride + kx * dil) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    *o = src_row[sx as usize];
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
#[allow(clippy::too_many_arguments)]
pub fn col2im_acc<P: Real>(
    cols: &[P],
    dx: &mut [P],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    oh: usize,
    ow: usize,
) {
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    debug_assert_eq!(dx.len(), c * h * w);
    for row_idx in 0..c * k * k {
        let ci = row_idx / (k * k);
        let ky = (row_idx / k) % k;
        let kx = row_idx % k;
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        let row = &cols[row_idx * oh * ow..(row_idx + 1) * oh * ow];
        for oy in 0..oh {
            let sy = (oy * stride + ky * dil) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
            let src = &row[oy * ow..(oy + 1) * ow];
            for (ox, &v) in src.iter().enumerate() {
                let sx = (ox * stride + kx * dil) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    dst[sx as usize] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] . [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_bt_matches_explicit_transpose() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 4x3
        let bt = transpose2(&b, 4, 3); // 3x4
        assert_eq!(matmul_bt(&a, &b, 2, 3, 4), matmul(&a, &bt, 2, 3, 4));
    }

    #[test]
    fn conv_extent_geometry() {
        assert_eq!(conv_out_extent(5, 3, 1, 0, 2), Some(1));
        assert_eq!(conv_out_extent(3, 3, 1, 1, 1), Some(3));
        assert_eq!(conv_out_extent(2, 3, 1, 0, 2), None);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish data.
        let (c, h, w, k, s, p, d) = (2usize, 5usize, 4usize, 3usize, 1usize, 1usize, 1usize);
        let oh = conv_out_extent(h, k, s, p, d).unwrap();
        let ow = conv_out_extent(w, k, s, p, d).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..c * k * k * oh * ow).map(|i| (i as f64 * 0.3).cos()).collect();
        let cols = im2col(&x, c, h, w, k, s, p, d, oh, ow);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im_acc(&y, &mut back, c, h, w, k, s, p, d, oh, ow);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
