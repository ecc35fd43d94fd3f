//! Evaluation metrics (plain f64, no tape): PSNR, single-scale SSIM, and
//! Shannon entropy of the 8-bit-quantized luma histogram.
//!
//! SSIM uses the 11x1.5 Gaussian window with k1=0.01, k2=0.03, valid-window
//! maps, channels averaged. Reports carry the column order
//! `file, psnr_db, ssim, entropy_bits`.

use super::losses::{gaussian_window, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::error::{DustError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn as_f64<P: Real>(t: &Tensor<P>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

pub fn mse<P: Real>(pred: &Tensor<P>, target: &Tensor<P>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(DustError::dim("mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let (p, t) = (as_f64(pred), as_f64(target));
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(&t) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / p.len() as f64)
}

/// Peak signal-to-noise ratio in dB; +inf when the images are identical.
pub fn psnr<P: Real>(pred: &Tensor<P>, target: &Tensor<P>, max_val: f64) -> Result<f64> {
    let e = mse(pred, target)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / e).log10())
}

/// Valid-window Gaussian filter of one `[h, w]` plane.
fn gauss_plane(x: &[f64], h: usize, w: usize, win: &[f64], k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..k {
                let row = &x[(oy + ky) * w + ox..];
                let kr = &win[ky * k..(ky + 1) * k];
                for (kx, &kv) in kr.iter().enumerate() {
                    acc += row[kx] * kv;
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    out
}

/// Single-scale SSIM, channels averaged.
pub fn ssim<P: Real>(pred: &Tensor<P>, target: &Tensor<P>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(DustError::dim("ssim", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s = pred.shape();
    if s.len() != 4 {
        return Err(DustError::dim("ssim", format!("expected NCHW, got {:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(DustError::geometry("ssim", format!("{h}x{w} below the {k}-pixel window")));
    }
    let win = gaussian_window(k, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (p, t) = (as_f64(pred), as_f64(target));
    let mut total = 0.0;
    let mut planes = 0usize;
    for pc in 0..n * c {
        let xp = &p[pc * h * w..(pc + 1) * h * w];
        let tp = &t[pc * h * w..(pc + 1) * h * w];
        let mu_x = gauss_plane(xp, h, w, &win, k);
        let mu_y = gauss_plane(tp, h, w, &win, k);
        let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = tp.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xp.iter().zip(tp).map(|(a, b)| a * b).collect();
        let exx = gauss_plane(&xx, h, w, &win, k);
        let eyy = gauss_plane(&yy, h, w, &win, k);
        let exy = gauss_plane(&xy, h, w, &win, k);
        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let sx = exx[i] - mu_x[i] * mu_x[i];
            let sy = eyy[i] - mu_y[i] * mu_y[i];
            let sxy = exy[i] - mu_x[i] * mu_y[i];
            let num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * sxy + c2);
            let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (sx + sy + c2);
            acc += num / den;
        }
        total += acc / mu_x.len() as f64;
        planes += 1;
    }
    Ok(total / planes as f64)
}

/// Shannon entropy (bits) of the 256-bin histogram of 8-bit-quantized luma
/// (0.299 R + 0.587 G + 0.114 B).
pub fn entropy<P: Real>(img: &Tensor<P>) -> Result<f64> {
    let s = img.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(DustError::dim("entropy", format!("expected [N,3,H,W], got {:?}", s)));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let data = as_f64(img);
    let hw = h * w;
    let mut hist = [0u64; 256];
    for ni in 0..n {
        let base = ni * 3 * hw;
        for i in 0..hw {
            let r = data[base + i];
            let g = data[base + hw + i];
            let b = data[base + 2 * hw + i];
            let luma = (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0);
            let bin = (luma * 255.0).round() as usize;
            hist[bin.min(255)] += 1;
        }
    }
    let total = (n * hw) as f64;
    let mut ent = 0.0;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / total;
            ent -= p * p.log2();
        }
    }
    Ok(ent)
}

/// One evaluation row; `psnr_db` may be +inf.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub file: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub entropy_bits: f64,
}

pub fn format_metric_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Line-oriented `key=value` form of a row.
pub fn metric_line(row: &MetricRow) -> String {
    format!(
        "file={} psnr_db={} ssim={} entropy_bits={}",
        row.file,
        format_metric_value(row.psnr_db),
        format_metric_value(row.ssim),
        format_metric_value(row.entropy_bits)
    )
}

/// Tab-separated table with the documented column order.
pub fn metric_table(rows: &[MetricRow]) -> String {
    let mut s = String::from("file\tpsnr_db\tssim\tentropy_bits\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.file,
            format_metric_value(r.psnr_db),
            format_metric_value(r.ssim),
            format_metric_value(r.entropy_bits)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_is_exactly_20db_at_one_percent_mse() {
        // 100 scalars, one differing by exactly 1.0: MSE = 1/100
        let mut pred = vec![0.0f64; 100];
        pred[37] = 1.0;
        let target = vec![0.0f64; 100];
        let p = Tensor::from_vec(&[1, 1, 10, 10], pred).unwrap();
        let t = Tensor::from_vec(&[1, 1, 10, 10], target).unwrap();
        assert_eq!(psnr(&p, &t, 1.0).unwrap(), 20.0);
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1f64, 0.2, 0.3, 0.4]).unwrap();
        assert!(psnr(&x, &x, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn entropy_uniform_256_levels_is_8_bits() {
        // 16x16 gray image covering every 8-bit level exactly once
        let hw = 256;
        let mut data = vec![0.0f64; 3 * hw];
        for i in 0..hw {
            let v = i as f64 / 255.0;
            data[i] = v;
            data[hw + i] = v;
            data[2 * hw + i] = v;
        }
        let img = Tensor::from_vec(&[1, 3, 16, 16], data).unwrap();
        assert_eq!(entropy(&img).unwrap(), 8.0);
    }

    #[test]
    fn entropy_constant_image_is_zero() {
        let img = Tensor::full(&[1, 3, 4, 4], 0.5f64);
        assert_eq!(entropy(&img).unwrap(), 0.0);
    }

    #[test]
    fn ssim_self_is_one() {
        let data: Vec<f64> = (0..3 * 16 * 16).map(|i| ((i * 31) % 97) as f64 / 97.0).collect();
        let x = Tensor::from_vec(&[1, 3, 16, 16], data).unwrap();
        let v = ssim(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }
}
