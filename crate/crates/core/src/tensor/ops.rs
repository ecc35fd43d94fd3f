//! Differentiable tensor operations.
//!
//! Each constructor validates shapes, computes the forward value, and attaches
//! a backward closure that scatters gradients into its parents. Backward
//! closures work on raw slices and reuse the kernels in `kernels.rs`.

use super::kernels::{col2im_acc, conv_out_extent, im2col, matmul, matmul_acc, matmul_bt, transpose2};
use super::Tensor;
use crate::error::{DustError, Result};
use crate::real::Real;

fn same_shape<P: Real>(op: &'static str, a: &Tensor<P>, b: &Tensor<P>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DustError::dim(
            op,
            format!("shape {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

pub fn add<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("add", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |dy| {
        ac.accumulate_grad(dy);
        bc.accumulate_grad(dy);
    })
}

pub fn sub<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("sub", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |dy| {
        ac.accumulate_grad(dy);
        let neg: Vec<P> = dy.iter().map(|&v| -v).collect();
        bc.accumulate_grad(&neg);
    })
}

pub fn mul<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("mul", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |dy| {
        if ac.requires_grad() {
            let da: Vec<P> = dy.iter().zip(bc.data()).map(|(&g, &y)| g * y).collect();
            ac.accumulate_grad(&da);
        }
        if bc.requires_grad() {
            let db: Vec<P> = dy.iter().zip(ac.data()).map(|(&g, &x)| g * x).collect();
            bc.accumulate_grad(&db);
        }
    })
}

pub fn div<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
    same_shape("div", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("div", a.shape().to_vec(), data, vec![a.clone(), b.clone()], move |dy| {
        if ac.requires_grad() {
            let da: Vec<P> = dy.iter().zip(bc.data()).map(|(&g, &y)| g / y).collect();
            ac.accumulate_grad(&da);
        }
        if bc.requires_grad() {
            let db: Vec<P> = dy
                .iter()
                .zip(ac.data().iter().zip(bc.data()))
                .map(|(&g, (&x, &y))| -g * x / (y * y))
                .collect();
            bc.accumulate_grad(&db);
        }
    })
}

pub fn add_scalar<P: Real>(a: &Tensor<P>, s: P) -> Result<Tensor<P>> {
    let data = a.data().iter().map(|&x| x + s).collect();
    let ac = a.clone();
    Tensor::from_op("add_scalar", a.shape().to_vec(), data, vec![a.clone()], move |dy| {
        ac.accumulate_grad(dy);
    })
}

pub fn mul_scalar<P: Real>(a: &Tensor<P>, s: P) -> Result<Tensor<P>> {
    let data = a.data().iter().map(|&x| x * s).collect();
    let ac = a.clone();
    Tensor::from_op("mul_scalar", a.shape().to_vec(), data, vec![a.clone()], move |dy| {
        let da: Vec<P> = dy.iter().map(|&g| g * s).collect();
        ac.accumulate_grad(&da);
    })
}

pub fn neg<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    mul_scalar(a, -P::one())
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

fn unary<P: Real>(
    op: &'static str,
    a: &Tensor<P>,
    fwd: impl Fn(P) -> P,
    dfn: impl Fn(P, P) -> P + 'static, // (x, y) -> dy/dx
) -> Result<Tensor<P>> {
    let data: Vec<P> = a.data().iter().map(|&x| fwd(x)).collect();
    let ac = a.clone();
    let saved = data.clone();
    Tensor::from_op(op, a.shape().to_vec(), data, vec![a.clone()], move |dy| {
        let da: Vec<P> = dy
            .iter()
            .zip(ac.data().iter().zip(&saved))
            .map(|(&g, (&x, &y))| g * dfn(x, y))
            .collect();
        ac.accumulate_grad(&da);
    })
}

pub fn abs<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    unary("abs", a, |x| x.abs(), |x, _| {
        if x > P::zero() {
            P::one()
        } else if x < P::zero() {
            -P::one()
        } else {
            P::zero()
        }
    })
}

pub fn relu<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    unary("relu", a, |x| x.max(P::zero()), |x, _| if x > P::zero() { P::one() } else { P::zero() })
}

pub fn sigmoid<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    unary("sigmoid", a, sigmoid_scalar, |_, y| y * (P::one() - y))
}

pub(crate) fn sigmoid_scalar<P: Real>(x: P) -> P {
    // Evaluate on the side that keeps exp() small.
    if x >= P::zero() {
        P::one() / (P::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (P::one() + e)
    }
}

/// GELU, tanh approximation (the convention used by the attention MLPs).
pub fn gelu<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    let c = P::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = P::from_f64(0.044715);
    let half = P::from_f64(0.5);
    unary(
        "gelu",
        a,
        move |x| {
            let u = c * (x + k * x * x * x);
            half * x * (P::one() + u.tanh())
        },
        move |x, _| {
            let u = c * (x + k * x * x * x);
            let t = u.tanh();
            let sech2 = P::one() - t * t;
            let du = c * (P::one() + P::from_f64(3.0) * k * x * x);
            half * (P::one() + t) + half * x * sech2 * du
        },
    )
}

/// Clamp into [0, 1]; gradient passes only strictly inside the kept range.
pub fn clamp01<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    unary(
        "clamp01",
        a,
        |x| x.max(P::zero()).min(P::one()),
        |x, _| {
            if x >= P::zero() && x <= P::one() {
                P::one()
            } else {
                P::zero()
            }
        },
    )
}

pub fn clamp_min<P: Real>(a: &Tensor<P>, floor: P) -> Result<Tensor<P>> {
    unary("clamp_min", a, move |x| x.max(floor), move |x, _| {
        if x > floor {
            P::one()
        } else {
            P::zero()
        }
    })
}

/// Elementwise x^e for non-negative x.
pub fn powf_scalar<P: Real>(a: &Tensor<P>, e: P) -> Result<Tensor<P>> {
    unary("powf_scalar", a, move |x| x.powf(e), move |x, _| e * x.powf(e - P::one()))
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

pub fn mean_all<P: Real>(a: &Tensor<P>) -> Result<Tensor<P>> {
    let n = a.numel();
    if n == 0 {
        return Err(DustError::dim("mean_all", "empty tensor"));
    }
    let inv = P::one() / P::from_f64(n as f64);
    let mut acc = P::zero();
    for &v in a.data() {
        acc += v;
    }
    let ac = a.clone();
    Tensor::from_op("mean_all", vec![1], vec![acc * inv], vec![a.clone()], move |dy| {
        let g = dy[0] * inv;
        let da = vec![g; ac.numel()];
        ac.accumulate_grad(&da);
    })
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

pub fn reshape<P: Real>(a: &Tensor<P>, new_shape: &[usize]) -> Result<Tensor<P>> {
    if super::numel_of(new_shape) != a.numel() {
        return Err(DustError::dim(
            "reshape",
            format!("{:?} ({}) -> {:?} ({})", a.shape(), a.numel(), new_shape, super::numel_of(new_shape)),
        ));
    }
    let ac = a.clone();
    Tensor::from_op_shared("reshape", new_shape.to_vec(), a.data_rc(), vec![a.clone()], move |dy| {
        ac.accumulate_grad(dy);
    })
}

pub(crate) fn permute_raw<P: Real>(data: &[P], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<P>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let src_stride: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = vec![P::zero(); data.len()];
    // innermost output axis runs as one strided (or contiguous) copy;
    // the odometer only steps the outer axes
    let last_n = out_shape[rank - 1];
    let last_stride = src_stride[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut src_base = 0usize;
    let mut dst = 0usize;
    for _ in 0..outer {
        let row = &mut out[dst..dst + last_n];
        if last_stride == 1 {
            row.copy_from_slice(&data[src_base..src_base + last_n]);
        } else {
            let mut s = src_base;
            for o in row.iter_mut() {
                *o = data[s];
                s += last_stride;
            }
        }
        dst += last_n;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            src_base += src_stride[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src_base -= src_stride[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub fn permute<P: Real>(a: &Tensor<P>, axes: &[usize]) -> Result<Tensor<P>> {
    let rank = a.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
        return Err(DustError::dim("permute", format!("axes {:?} for rank {}", axes, rank)));
    }
    let (out_shape, out) = permute_raw(a.data(), a.shape(), axes);
    let mut inverse = vec![0usize; rank];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    let ac = a.clone();
    let fwd_shape = out_shape.clone();
    Tensor::from_op("permute", out_shape, out, vec![a.clone()], move |dy| {
        let (_, da) = permute_raw(dy, &fwd_shape, &inverse);
        ac.accumulate_grad(&da);
    })
}

/// Swap two axes.
pub fn transpose<P: Real>(a: &Tensor<P>, d0: usize, d1: usize) -> Result<Tensor<P>> {
    let mut axes: Vec<usize> = (0..a.shape().len()).collect();
    if d0 >= axes.len() || d1 >= axes.len() {
        return Err(DustError::dim("transpose", format!("axes {d0},{d1} for shape {:?}", a.shape())));
    }
    axes.swap(d0, d1);
    permute(a, &axes)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, extent, inner)
}

pub fn concat<P: Real>(parts: &[Tensor<P>], axis: usize) -> Result<Tensor<P>> {
    if parts.is_empty() {
        return Err(DustError::dim("concat", "no tensors"));
    }
    let rank = parts[0].shape().len();
    if axis >= rank {
        return Err(DustError::dim("concat", format!("axis {axis} for rank {rank}")));
    }
    for p in parts {
        if p.shape().len() != rank {
            return Err(DustError::dim("concat", "rank mismatch"));
        }
        for d in 0..rank {
            if d != axis && p.shape()[d] != parts[0].shape()[d] {
                return Err(DustError::dim(
                    "concat",
                    format!("axis {d}: extent {} vs {}", p.shape()[d], parts[0].shape()[d]),
                ));
            }
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let (outer, total_extent, inner) = axis_split(&out_shape, axis);
    let mut data = vec![P::zero(); outer * total_extent * inner];
    let mut offset = 0usize;
    for p in parts {
        let e = p.shape()[axis];
        for o in 0..outer {
            let src = &p.data()[o * e * inner..(o + 1) * e * inner];
            let dst = &mut data[(o * total_extent + offset) * inner..(o * total_extent + offset + e) * inner];
            dst.copy_from_slice(src);
        }
        offset += e;
    }
    let owned: Vec<Tensor<P>> = parts.to_vec();
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    Tensor::from_op("concat", out_shape, data, owned.clone(), move |dy| {
        let mut offset = 0usize;
        for (p, &e) in owned.iter().zip(&extents) {
            if p.requires_grad() {
                let mut da = vec![P::zero(); p.numel()];
                for o in 0..outer {
                    let src = &dy[(o * total_extent + offset) * inner..(o * total_extent + offset + e) * inner];
                    da[o * e * inner..(o + 1) * e * inner].copy_from_slice(src);
                }
                p.accumulate_grad(&da);
            }
            offset += e;
        }
    })
}

pub fn slice_axis<P: Real>(a: &Tensor<P>, axis: usize, start: usize, len: usize) -> Result<Tensor<P>> {
    let rank = a.shape().len();
    if axis >= rank || start + len > a.shape()[axis] || len == 0 {
        return Err(DustError::dim(
            "slice_axis",
            format!("axis {axis} range {start}..{} of shape {:?}", start + len, a.shape()),
        ));
    }
    let (outer, extent, inner) = axis_split(a.shape(), axis);
    let mut out_shape = a.shape().to_vec();
    out_shape[axis] = len;
    let mut data = vec![P::zero(); outer * len * inner];
    for o in 0..outer {
        let src = &a.data()[(o * extent + start) * inner..(o * extent + start + len) * inner];
        data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
    }
    let ac = a.clone();
    Tensor::from_op("slice_axis", out_shape, data, vec![a.clone()], move |dy| {
        let mut da = vec![P::zero(); ac.numel()];
        for o in 0..outer {
            let dst = &mut da[(o * extent + start) * inner..(o * extent + start + len) * inner];
            dst.copy_from_slice(&dy[o * len * inner..(o + 1) * len * inner]);
        }
        ac.accumulate_grad(&da);
    })
}

/// Split along an axis into pieces of the given extents (inverse of concat).
pub fn split<P: Real>(a: &Tensor<P>, axis: usize, extents: &[usize]) -> Result<Vec<Tensor<P>>> {
    let total: usize = extents.iter().sum();
    if axis >= a.shape().len() || total != a.shape()[axis] {
        return Err(DustError::dim(
            "split",
            format!("extents {:?} along axis {axis} of shape {:?}", extents, a.shape()),
        ));
    }
    let mut out = Vec::with_capacity(extents.len());
    let mut start = 0usize;
    for &e in extents {
        out.push(slice_axis(a, axis, start, e)?);
        start += e;
    }
    Ok(out)
}

/// Keep the top-left `[new_h, new_w]` spatial region of an NCHW tensor.
pub fn crop_br<P: Real>(a: &Tensor<P>, new_h: usize, new_w: usize) -> Result<Tensor<P>> {
    let s = a.shape();
    if s.len() != 4 || new_h > s[2] || new_w > s[3] || new_h == 0 || new_w == 0 {
        return Err(DustError::geometry("crop_br", format!("{:?} -> {new_h}x{new_w}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut data = vec![P::zero(); n * c * new_h * new_w];
    for pc in 0..n * c {
        for y in 0..new_h {
            let src = &a.data()[(pc * h + y) * w..(pc * h + y) * w + new_w];
            data[(pc * new_h + y) * new_w..(pc * new_h + y + 1) * new_w].copy_from_slice(src);
        }
    }
    let ac = a.clone();
    Tensor::from_op("crop_br", vec![n, c, new_h, new_w], data, vec![a.clone()], move |dy| {
        let mut da = vec![P::zero(); ac.numel()];
        for pc in 0..n * c {
            for y in 0..new_h {
                let dst = &mut da[(pc * h + y) * w..(pc * h + y) * w + new_w];
                dst.copy_from_slice(&dy[(pc * new_h + y) * new_w..(pc * new_h + y + 1) * new_w]);
            }
        }
        ac.accumulate_grad(&da);
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PadMode {
    Zero,
    /// Half-sample symmetric: mirrored copies starting from the edge sample.
    Symmetric,
}

/// Pad the bottom/right spatial edges of an NCHW tensor.
pub fn pad_br<P: Real>(a: &Tensor<P>, pad_h: usize, pad_w: usize, mode: PadMode) -> Result<Tensor<P>> {
    let s = a.shape();
    if s.len() != 4 {
        return Err(DustError::dim("pad_br", format!("expected NCHW, got {:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if mode == PadMode::Symmetric && (pad_h > h || pad_w > w) {
        return Err(DustError::geometry("pad_br", format!("symmetric pad {pad_h}x{pad_w} exceeds {h}x{w}")));
    }
    let (nh, nw) = (h + pad_h, w + pad_w);
    let mut data = vec![P::zero(); n * c * nh * nw];
    let src_row_idx = move |y: usize| -> Option<usize> {
        if y < h {
            Some(y)
        } else {
            match mode {
                PadMode::Zero => None,
                PadMode::Symmetric => Some(h - 1 - (y - h)),
            }
        }
    };
    let src_col_idx = move |x: usize| -> Option<usize> {
        if x < w {
            Some(x)
        } else {
            match mode {
                PadMode::Zero => None,
                PadMode::Symmetric => Some(w - 1 - (x - w)),
            }
        }
    };
    for pc in 0..n * c {
        let plane = &a.data()[pc * h * w..(pc + 1) * h * w];
        for y in 0..nh {
            let Some(sy) = src_row_idx(y) else { continue };
            let dst = &mut data[(pc * nh + y) * nw..(pc * nh + y + 1) * nw];
            for (x, o) in dst.iter_mut().enumerate() {
                if let Some(sx) = src_col_idx(x) {
                    *o = plane[sy * w + sx];
                }
            }
        }
    }
    let ac = a.clone();
    Tensor::from_op("pad_br", vec![n, c, nh, nw], data, vec![a.clone()], move |dy| {
        let mut da = vec![P::zero(); ac.numel()];
        for pc in 0..n * c {
            let dplane = &mut da[pc * h * w..(pc + 1) * h * w];
            for y in 0..nh {
                let Some(sy) = src_row_idx(y) else { continue };
                let row = &dy[(pc * nh + y) * nw..(pc * nh + y + 1) * nw];
                for (x, &g) in row.iter().enumerate() {
                    if let Some(sx) = src_col_idx(x) {
                        dplane[sy * w + sx] += g;
                    }
                }
            }
        }
        ac.accumulate_grad(&da);
    })
}

pub fn upsample_nearest<P: Real>(a: &Tensor<P>, factor: usize) -> Result<Tensor<P>> {
    let s = a.shape();
    if s.len() != 4 || factor == 0 {
        return Err(DustError::dim("upsample_nearest", format!("shape {:?}, factor {factor}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (nh, nw) = (h * factor, w * factor);
    let mut data = vec![P::zero(); n * c * nh * nw];
    for pc in 0..n * c {
        let plane = &a.data()[pc * h * w..(pc + 1) * h * w];
        for y in 0..nh {
            let src = &plane[(y / factor) * w..(y / factor + 1) * w];
            let dst = &mut data[(pc * nh + y) * nw..(pc * nh + y + 1) * nw];
            for (x, o) in dst.iter_mut().enumerate() {
                *o = src[x / factor];
            }
        }
    }
    let ac = a.clone();
    Tensor::from_op("upsample_nearest", vec![n, c, nh, nw], data, vec![a.clone()], move |dy| {
        let mut da = vec![P::zero(); ac.numel()];
        for pc in 0..n * c {
            let dplane = &mut da[pc * h * w..(pc + 1) * h * w];
            for y in 0..nh {
                let row = &dy[(pc * nh + y) * nw..(pc * nh + y + 1) * nw];
                let drow = &mut dplane[(y / factor) * w..(y / factor + 1) * w];
                for (x, &g) in row.iter().enumerate() {
                    drow[x / factor] += g;
                }
            }
        }
        ac.accumulate_grad(&da);
    })
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

pub fn softmax<P: Real>(a: &Tensor<P>, axis: usize) -> Result<Tensor<P>> {
    if axis >= a.shape().len() {
        return Err(DustError::dim("softmax", format!("axis {axis} for shape {:?}", a.shape())));
    }
    let (outer, extent, inner) = axis_split(a.shape(), axis);
    let mut data = vec![P::zero(); a.numel()];
    let x = a.data();
    for o in 0..outer {
        for j in 0..inner {
            let base = o * extent * inner + j;
            let mut m = x[base];
            for i in 1..extent {
                m = m.max(x[base + i * inner]);
            }
            let mut sum = P::zero();
            for i in 0..extent {
                let e = (x[base + i * inner] - m).exp();
                data[base + i * inner] = e;
                sum += e;
            }
            let inv = P::one() / sum;
            for i in 0..extent {
                data[base + i * inner] *= inv;
            }
        }
    }
    let y_saved = data.clone();
    let ac = a.clone();
    Tensor::from_op("softmax", a.shape().to_vec(), data, vec![a.clone()], move |dy| {
        let mut da = vec![P::zero(); dy.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * extent * inner + j;
                let mut dot = P::zero();
                for i in 0..extent {
                    let idx = base + i * inner;
                    dot += dy[idx] * y_saved[idx];
                }
                for i in 0..extent {
                    let idx = base + i * inner;
                    da[idx] = y_saved[idx] * (dy[idx] - dot);
                }
            }
        }
        ac.accumulate_grad(&da);
    })
}

/// Normalize along one axis to zero mean / unit variance, then apply the
/// per-position affine `gain`/`offset` (each of length `shape[axis]`).
pub fn layer_norm<P: Real>(
    a: &Tensor<P>,
    axis: usize,
    gain: &Tensor<P>,
    offset: &Tensor<P>,
    eps: P,
) -> Result<Tensor<P>> {
    if axis >= a.shape().len() {
        return Err(DustError::dim("layer_norm", format!("axis {axis} for shape {:?}", a.shape())));
    }
    let (outer, extent, inner) = axis_split(a.shape(), axis);
    if gain.numel() != extent || offset.numel() != extent {
        return Err(DustError::dim(
            "layer_norm",
            format!("affine len {} / {} vs axis extent {extent}", gain.numel(), offset.numel()),
        ));
    }
    let x = a.data();
    let g = gain.data();
    let b = offset.data();
    let inv_m = P::one() / P::from_f64(extent as f64);
    let mut data = vec![P::zero(); a.numel()];
    let mut xhat = vec![P::zero(); a.numel()];
    let mut istds = vec![P::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * extent * inner + j;
            let mut mean = P::zero();
            for i in 0..extent {
                mean += x[base + i * inner];
            }
            mean *= inv_m;
            let mut var = P::zero();
            for i in 0..extent {
                let d = x[base + i * inner] - mean;
                var += d * d;
            }
            var *= inv_m;
            let istd = P::one() / (var + eps).sqrt();
            istds[o * inner + j] = istd;
            for i in 0..extent {
                let idx = base + i * inner;
                let xh = (x[idx] - mean) * istd;
                xhat[idx] = xh;
                data[idx] = xh * g[i] + b[i];
            }
        }
    }
    let (ac, gc, bc) = (a.clone(), gain.clone(), offset.clone());
    Tensor::from_op(
        "layer_norm",
        a.shape().to_vec(),
        data,
        vec![a.clone(), gain.clone(), offset.clone()],
        move |dy| {
            let g = gc.data();
            if ac.requires_grad() {
                let mut da = vec![P::zero(); ac.numel()];
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * extent * inner + j;
                        let istd = istds[o * inner + j];
                        let mut mean_dxh = P::zero();
                        let mut mean_dxh_xh = P::zero();
                        for i in 0..extent {
                            let idx = base + i * inner;
                            let dxh = dy[idx] * g[i];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xhat[idx];
                        }
                        mean_dxh *= inv_m;
                        mean_dxh_xh *= inv_m;
                        for i in 0..extent {
                            let idx = base + i * inner;
                            let dxh = dy[idx] * g[i];
                            da[idx] = istd * (dxh - mean_dxh - xhat[idx] * mean_dxh_xh);
                        }
                    }
                }
                ac.accumulate_grad(&da);
            }
            if gc.requires_grad() || bc.requires_grad() {
                let mut dg = vec![P::zero(); extent];
                let mut db = vec![P::zero(); extent];
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * extent * inner + j;
                        for i in 0..extent {
                            let idx = base + i * inner;
                            dg[i] += dy[idx] * xhat[idx];
                            db[i] += dy[idx];
                        }
                    }
                }
                gc.accumulate_grad(&dg);
                bc.accumulate_grad(&db);
            }
        },
    )
}

// ---------------------------------------------------------------------------
// linear / batched matmul
// ---------------------------------------------------------------------------

/// `y[..., j] = sum_i x[..., i] * w[j, i] + b[j]`
pub fn linear<P: Real>(x: &Tensor<P>, w: &Tensor<P>, b: Option<&Tensor<P>>) -> Result<Tensor<P>> {
    let xs = x.shape();
    let ws = w.shape();
    if ws.len() != 2 {
        return Err(DustError::dim("linear", format!("weight must be 2-d, got {:?}", ws)));
    }
    let din = *xs.last().ok_or_else(|| DustError::dim("linear", "input rank 0"))?;
    let (dout, win) = (ws[0], ws[1]);
    if win != din {
        return Err(DustError::dim("linear", format!("input extent {din} vs weight {win}")));
    }
    if let Some(bias) = b {
        if bias.numel() != dout {
            return Err(DustError::dim("linear", format!("bias len {} vs {dout}", bias.numel())));
        }
    }
    let m = x.numel() / din;
    let mut y = matmul_bt(x.data(), w.data(), m, din, dout);
    if let Some(bias) = b {
        let bd = bias.data();
        for row in y.chunks_mut(dout) {
            for (o, &bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
    }
    let mut out_shape = xs.to_vec();
    *out_shape.last_mut().unwrap() = dout;
    let (xc, wc) = (x.clone(), w.clone());
    let bc = b.cloned();
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = b {
        parents.push(bias.clone());
    }
    Tensor::from_op("linear", out_shape, y, parents, move |dy| {
        if xc.requires_grad() {
            let dx = matmul(dy, wc.data(), m, dout, din);
            xc.accumulate_grad(&dx);
        }
        if wc.requires_grad() {
            let dyt = transpose2(dy, m, dout);
            let dw = matmul(&dyt, xc.data(), dout, m, din);
            wc.accumulate_grad(&dw);
        }
        if let Some(bias) = &bc {
            if bias.requires_grad() {
                let mut db = vec![P::zero(); dout];
                for row in dy.chunks(dout) {
                    for (acc, &g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }
    })
}

/// Batched matmul `[B,M,K] . [B,K,N] -> [B,M,N]`.
pub fn bmm<P: Real>(a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(DustError::dim("bmm", format!("{:?} x {:?}", sa, sb)));
    }
    let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut y = vec![P::zero(); bt * m * n];
    for i in 0..bt {
        matmul_acc(
            &mut y[i * m * n..(i + 1) * m * n],
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
        );
    }
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op("bmm", vec![bt, m, n], y, vec![a.clone(), b.clone()], move |dy| {
        let need_a = ac.requires_grad();
        let need_b = bc.requires_grad();
        let mut da = if need_a { vec![P::zero(); ac.numel()] } else { Vec::new() };
        let mut db = if need_b { vec![P::zero(); bc.numel()] } else { Vec::new() };
        for i in 0..bt {
            let dyi = &dy[i * m * n..(i + 1) * m * n];
            if need_a {
                // dA = dY . B^T
                let d = matmul_bt(dyi, &bc.data()[i * k * n..(i + 1) * k * n], m, n, k);
                da[i * m * k..(i + 1) * m * k].copy_from_slice(&d);
            }
            if need_b {
                // dB = A^T . dY
                let at = transpose2(&ac.data()[i * m * k..(i + 1) * m * k], m, k);
                matmul_acc(&mut db[i * k * n..(i + 1) * k * n], &at, dyi, k, m, n);
            }
        }
        if need_a {
            ac.accumulate_grad(&da);
        }
        if need_b {
            bc.accumulate_grad(&db);
        }
    })
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// 2-d cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,k,k]`.
pub fn conv2d<P: Real>(
    x: &Tensor<P>,
    w: &Tensor<P>,
    b: Option<&Tensor<P>>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<Tensor<P>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(DustError::dim("conv2d", format!("input {:?}, weight {:?}", xs, ws)));
    }
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw || kh % 2 == 0 {
        return Err(DustError::dim("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(DustError::dim("conv2d", format!("input channels {cin} vs weight {wcin}")));
    }
    if stride == 0 || dilation == 0 {
        return Err(DustError::dim("conv2d", "stride and dilation must be >= 1"));
    }
    if let Some(bias) = b {
        if bias.numel() != cout {
            return Err(DustError::dim("conv2d", format!("bias len {} vs {cout}", bias.numel())));
        }
    }
    let k = kh;
    let oh = conv_out_extent(h, k, stride, padding, dilation)
        .ok_or_else(|| DustError::geometry("conv2d", format!("H={h} too small for k={k} dil={dilation} pad={padding}")))?;
    let ow = conv_out_extent(wd, k, stride, padding, dilation)
        .ok_or_else(|| DustError::geometry("conv2d", format!("W={wd} too small for k={k} dil={dilation} pad={padding}")))?;
    let kk = cin * k * k;
    let l = oh * ow;
    let mut y = vec![P::zero(); n * cout * l];
    for i in 0..n {
        let cols = im2col(&x.data()[i * cin * h * wd..(i + 1) * cin * h * wd], cin, h, wd, k, stride, padding, dilation, oh, ow);
        matmul_acc(&mut y[i * cout * l..(i + 1) * cout * l], w.data(), &cols, cout, kk, l);
    }
    if let Some(bias) = b {
        let bd = bias.data();
        for i in 0..n {
            for co in 0..cout {
                let bv = bd[co];
                for v in &mut y[(i * cout + co) * l..(i * cout + co + 1) * l] {
                    *v += bv;
                }
            }
        }
    }
    let (xc, wc) = (x.clone(), w.clone());
    let bc = b.cloned();
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = b {
        parents.push(bias.clone());
    }
    Tensor::from_op("conv2d", vec![n, cout, oh, ow], y, parents, move |dy| {
        let need_x = xc.requires_grad();
        let need_w = wc.requires_grad();
        let mut dw = if need_w { vec![P::zero(); wc.numel()] } else { Vec::new() };
        let mut dx = if need_x { vec![P::zero(); xc.numel()] } else { Vec::new() };
        let wt = if need_x { transpose2(wc.data(), cout, kk) } else { Vec::new() };
        for i in 0..n {
            let dyi = &dy[i * cout * l..(i + 1) * cout * l];
            if need_w {
                let cols = im2col(&xc.data()[i * cin * h * wd..(i + 1) * cin * h * wd], cin, h, wd, k, stride, padding, dilation, oh, ow);
                // dW += dY . cols^T
                let contrib = matmul_bt(dyi, &cols, cout, l, kk);
                for (acc, v) in dw.iter_mut().zip(contrib) {
                    *acc += v;
                }
            }
            if need_x {
                let dcols = matmul(&wt, dyi, kk, cout, l);
                col2im_acc(&dcols, &mut dx[i * cin * h * wd..(i + 1) * cin * h * wd], cin, h, wd, k, stride, padding, dilation, oh, ow);
            }
        }
        if need_x {
            xc.accumulate_grad(&dx);
        }
        if need_w {
            wc.accumulate_grad(&dw);
        }
        if let Some(bias) = &bc {
            if bias.requires_grad() {
                let mut db = vec![P::zero(); cout];
                for i in 0..n {
                    for co in 0..cout {
                        let mut acc = P::zero();
                        for &g in &dy[(i * cout + co) * l..(i * cout + co + 1) * l] {
                            acc += g;
                        }
                        db[co] += acc;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }
    })
}

/// Per-channel valid filtering with one shared, non-learnable `k x k` kernel
/// (Gaussian windows, average pooling). Gradients flow to the input only.
pub fn depthwise_filter2d<P: Real>(x: &Tensor<P>, kernel: &[P], k: usize, stride: usize) -> Result<Tensor<P>> {
    let s = x.shape();
    if s.len() != 4 || kernel.len() != k * k || k == 0 || stride == 0 {
        return Err(DustError::dim("depthwise_filter2d", format!("shape {:?}, k {k}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let oh = conv_out_extent(h, k, stride, 0, 1)
        .ok_or_else(|| DustError::geometry("depthwise_filter2d", format!("H={h} < k={k}")))?;
    let ow = conv_out_extent(w, k, stride, 0, 1)
        .ok_or_else(|| DustError::geometry("depthwise_filter2d", format!("W={w} < k={k}")))?;
    let mut y = vec![P::zero(); n * c * oh * ow];
    let kern = kernel.to_vec();
    for pc in 0..n * c {
        let plane = &x.data()[pc * h * w..(pc + 1) * h * w];
        let out = &mut y[pc * oh * ow..(pc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = P::zero();
                for ky in 0..k {
                    let row = &plane[(oy * stride + ky) * w + ox * stride..];
                    let kr = &kern[ky * k..(ky + 1) * k];
                    for (kx, &kv) in kr.iter().enumerate() {
                        acc += row[kx] * kv;
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
    }
    let xc = x.clone();
    Tensor::from_op("depthwise_filter2d", vec![n, c, oh, ow], y, vec![x.clone()], move |dy| {
        let mut dx = vec![P::zero(); xc.numel()];
        for pc in 0..n * c {
            let dplane = &mut dx[pc * h * w..(pc + 1) * h * w];
            let dout = &dy[pc * oh * ow..(pc + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dout[oy * ow + ox];
                    for ky in 0..k {
                        let drow = &mut dplane[(oy * stride + ky) * w + ox * stride..];
                        let kr = &kern[ky * k..(ky + 1) * k];
                        for (kx, &kv) in kr.iter().enumerate() {
                            drow[kx] += g * kv;
                        }
                    }
                }
            }
        }
        xc.accumulate_grad(&dx);
    })
}
