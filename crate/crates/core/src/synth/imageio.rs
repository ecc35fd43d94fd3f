//! Image I/O: 8-bit RGB/RGBA PNG (alpha dropped) and binary PPM (P6).
//!
//! Reads scale to [0,1]; writes quantize with round-half-away-from-zero to
//! 8 bits, so a write/read round trip moves any scalar by at most 1/510.

use std::path::Path;

use crate::error::{DustError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn io_err(path: &Path, detail: impl Into<String>) -> DustError {
    DustError::io(path.display().to_string(), detail)
}

/// Read a PNG or P6 PPM into `[1,3,H,W]` with values in [0,1].
pub fn read_image<P: Real>(path: &Path) -> Result<Tensor<P>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => read_png(path),
        "ppm" => read_ppm(path),
        other => Err(io_err(path, format!("unsupported format '.{other}' (png|ppm)"))),
    }
}

/// Write `[1,3,H,W]` (or `[N,...]`, first item) as PNG or P6 PPM.
pub fn write_image<P: Real>(t: &Tensor<P>, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(DustError::dim("write_image", format!("expected [N,3,H,W], got {:?}", s)));
    }
    let (h, w) = (s[2], s[3]);
    let hw = h * w;
    let data = t.data();
    let mut rgb = vec![0u8; hw * 3];
    for i in 0..hw {
        for c in 0..3 {
            let v = data[c * hw + i].as_f64().clamp(0.0, 1.0);
            rgb[i * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => {
            let img = image::RgbImage::from_raw(w as u32, h as u32, rgb)
                .ok_or_else(|| io_err(path, "buffer size mismatch"))?;
            img.save(path).map_err(|e| io_err(path, e.to_string()))
        }
        "ppm" => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&rgb);
            std::fs::write(path, out).map_err(|e| io_err(path, e.to_string()))
        }
        other => Err(io_err(path, format!("unsupported format '.{other}' (png|ppm)"))),
    }
}

fn rgb_to_tensor<P: Real>(rgb: &[u8], h: usize, w: usize) -> Result<Tensor<P>> {
    let hw = h * w;
    let scale = P::from_f64(1.0 / 255.0);
    let mut data = vec![P::zero(); 3 * hw];
    for i in 0..hw {
        for c in 0..3 {
            data[c * hw + i] = P::from_f64(rgb[i * 3 + c] as f64) * scale;
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data)
}

fn read_png<P: Real>(path: &Path) -> Result<Tensor<P>> {
    let img = image::open(path).map_err(|e| io_err(path, e.to_string()))?;
    let (rgb, h, w) = match img {
        image::DynamicImage::ImageRgb8(im) => {
            let (w, h) = (im.width() as usize, im.height() as usize);
            (im.into_raw(), h, w)
        }
        image::DynamicImage::ImageRgba8(im) => {
            let (w, h) = (im.width() as usize, im.height() as usize);
            let raw = im.into_raw();
            let mut rgb = vec![0u8; w * h * 3];
            for i in 0..w * h {
                rgb[i * 3..i * 3 + 3].copy_from_slice(&raw[i * 4..i * 4 + 3]);
            }
            (rgb, h, w)
        }
        _ => return Err(io_err(path, "PNG must be 8-bit RGB or RGBA")),
    };
    rgb_to_tensor(&rgb, h, w)
}

/// Minimal P6 parser: `P6`, whitespace/comments, width, height, maxval 255,
/// one whitespace byte, then raw RGB triples.
fn read_ppm<P: Real>(path: &Path) -> Result<Tensor<P>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e.to_string()))?;
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DustError::io("ppm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token(&bytes).map_err(|_| io_err(path, "truncated header"))?;
    if magic != "P6" {
        return Err(io_err(path, format!("expected P6 magic, got '{magic}'")));
    }
    let w: usize = next_token(&bytes)
        .ok()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| io_err(path, "bad width"))?;
    let h: usize = next_token(&bytes)
        .ok()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| io_err(path, "bad height"))?;
    let maxval: usize = next_token(&bytes)
        .ok()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| io_err(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(io_err(path, format!("only maxval 255 supported, got {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(io_err(path, format!("truncated pixel data ({} of {need} bytes)", bytes.len().saturating_sub(pos))));
    }
    rgb_to_tensor(&bytes[pos..pos + need], h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_hand_decoded_bytes() {
        let dir = std::env::temp_dir().join("dustlab_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tiny.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        std::fs::write(&path, bytes).unwrap();
        let t = read_image::<f64>(&path).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        // planar layout: R plane, G plane, B plane
        assert_eq!(t.data()[0..4], [1.0, 0.0, 0.0, 1.0]); // R
        assert_eq!(t.data()[4..8], [0.0, 1.0, 0.0, 1.0]); // G
        assert_eq!(t.data()[8..12], [0.0, 0.0, 1.0, 1.0]); // B
    }

    #[test]
    fn write_read_quantization_bound() {
        let dir = std::env::temp_dir().join("dustlab_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ppm");
        let data: Vec<f64> = (0..3 * 8 * 8).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let t = Tensor::from_vec(&[1, 3, 8, 8], data).unwrap();
        write_image(&t, &path).unwrap();
        let back = read_image::<f64>(&path).unwrap();
        let max_diff = t
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff <= 1.0 / 510.0 + 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn png_and_ppm_agree() {
        let dir = std::env::temp_dir().join("dustlab_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let data: Vec<f64> = (0..3 * 6 * 5).map(|i| ((i * 53) % 89) as f64 / 89.0).collect();
        let t = Tensor::from_vec(&[1, 3, 6, 5], data).unwrap();
        let p_png = dir.join("x.png");
        let p_ppm = dir.join("x.ppm");
        write_image(&t, &p_png).unwrap();
        write_image(&t, &p_ppm).unwrap();
        let a = read_image::<f64>(&p_png).unwrap();
        let b = read_image::<f64>(&p_ppm).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_ppm_is_io_error() {
        let dir = std::env::temp_dir().join("dustlab_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\nabc").unwrap();
        let err = read_image::<f32>(&path).unwrap_err();
        assert!(matches!(err, DustError::Io { .. }));
    }
}
