//! Image decoding, grayscale conversion, bilinear resampling and 8-bit export.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};

use crate::error::{FadsError, Result};
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Bilinear resize of a `[C,H,W]` tensor with half-pixel sample centres:
/// output pixel `i` samples source coordinate `(i + 0.5) * in/out - 0.5`,
/// clamped to the image. Same-size requests return an exact copy.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(FadsError::InvalidArgument("resize target must be positive".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let axis = |in_n: usize, out_n: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_n as f64 / out_n as f64;
        (0..out_n)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_n - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(in_n - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Separable Gaussian blur of a single `h x w` plane with clamp-to-edge
/// borders; kernel radius is `ceil(3 * sigma)`. `sigma <= 0` is a no-op.
pub fn gaussian_blur(values: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut rows = vec![0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * values[y * w + at(x as isize + j as isize - radius, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * rows[at(y as isize + j as isize - radius, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Converts a decoded image to a `[C,H,W]` tensor in `[0, 1]`; with
/// `grayscale` set the result has one channel computed from [`LUMA`].
pub fn image_to_tensor(img: &DynamicImage, grayscale: bool, path: &Path) -> Result<Tensor> {
    let bad_depth = || FadsError::Image {
        path: path.to_path_buf(),
        message: format!("unsupported pixel format {:?}; expected 8-bit gray or RGB", img.color()),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Tensor::new(vec![1, h, w], data)
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            if grayscale {
                let data = raw
                    .chunks_exact(3)
                    .map(|p| (LUMA[0] * p[0] as f32 + LUMA[1] * p[1] as f32 + LUMA[2] * p[2] as f32) / 255.0)
                    .collect();
                Tensor::new(vec![1, h, w], data)
            } else {
                let mut data = vec![0f32; 3 * h * w];
                for (i, p) in raw.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        data[c * h * w + i] = p[c] as f32 / 255.0;
                    }
                }
                Tensor::new(vec![3, h, w], data)
            }
        }
        _ => Err(bad_depth()),
    }
}

pub fn load_image(path: impl AsRef<Path>, grayscale: bool) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FadsError::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| FadsError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    image_to_tensor(&img, grayscale, path)
}

/// Loads an image and resizes it to `[c, h, w]`.
pub fn load_resized(path: impl AsRef<Path>, grayscale: bool, size: [usize; 3]) -> Result<Tensor> {
    let path = path.as_ref();
    let t = load_image(path, grayscale)?;
    if t.shape()[0] != size[0] {
        return Err(FadsError::Image {
            path: path.to_path_buf(),
            message: format!("has {} channels, model expects {}", t.shape()[0], size[0]),
        });
    }
    resize_bilinear(&t, size[1], size[2])
}

/// Quantises a map in `[0, 1]` to 8 bits as `round(255 * v)`.
pub fn to_gray8(values: &[f32], h: usize, w: usize) -> GrayImage {
    let mut img = GrayImage::new(w as u32, h as u32);
    for (i, &v) in values.iter().enumerate() {
        let q = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
        img.put_pixel((i % w) as u32, (i / w) as u32, Luma([q]));
    }
    img
}

/// Writes an 8-bit grayscale PNG or binary PGM, chosen by extension.
pub fn save_gray8(values: &[f32], h: usize, w: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => ImageFormat::Png,
        _ => ImageFormat::Pnm,
    };
    let img = to_gray8(values, h, w);
    if format == ImageFormat::Pnm {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(img.as_raw());
        return std::fs::write(path, bytes).map_err(|e| FadsError::io(path, e));
    }
    img.save_with_format(path, format).map_err(|e| FadsError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
