//! Deterministic pixel operations used by view augmentation.

use crate::model::{CropBox, Image, PhotometricOps};
use ndarray::{Array2, Array3};

/// Bilinear resize of `crop` to `oh x ow` using pixel-center alignment.
/// A crop whose size equals the output size is copied exactly.
pub fn crop_resize(img: &Image, crop: &CropBox, oh: usize, ow: usize) -> Image {
    let c = img.dim().2;
    let sy = crop.height as f64 / oh as f64;
    let sx = crop.width as f64 / ow as f64;
    let mut out = Array3::zeros((oh, ow, c));
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (crop.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(crop.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (crop.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(crop.width - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| img[[crop.top + yy, crop.left + xx, ch]];
                let v = if wy == 0.0 && wx == 0.0 {
                    p(y0, x0)
                } else {
                    (1.0 - wy) * ((1.0 - wx) * p(y0, x0) + wx * p(y0, x1))
                        + wy * ((1.0 - wx) * p(y1, x0) + wx * p(y1, x1))
                };
                out[[y, x, ch]] = v;
            }
        }
    }
    out
}

pub fn flip_horizontal(img: &mut Image) {
    let w = img.dim().1;
    let src = img.clone();
    for ((y, x, c), v) in img.indexed_iter_mut() {
        *v = src[[y, w - 1 - x, c]];
    }
}

fn luminance(img: &Image, y: usize, x: usize) -> f64 {
    if img.dim().2 >= 3 {
        0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
    } else {
        img[[y, x, 0]]
    }
}

/// Applies jitter, grayscale, blur and solarize in that fixed order.
pub fn apply_photometric(img: &mut Image, ops: &PhotometricOps) {
    if ops.is_identity() {
        return;
    }
    let (h, w, c) = img.dim();
    if ops.brightness != 1.0 {
        img.mapv_inplace(|v| (v * ops.brightness).clamp(0.0, 1.0));
    }
    if ops.contrast != 1.0 {
        let mean = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| luminance(img, y, x))
            .sum::<f64>()
            / (h * w) as f64;
        img.mapv_inplace(|v| (mean + (v - mean) * ops.contrast).clamp(0.0, 1.0));
    }
    if ops.saturation != 1.0 && c >= 3 {
        for y in 0..h {
            for x in 0..w {
                let l = luminance(img, y, x);
                for ch in 0..c {
                    let v = img[[y, x, ch]];
                    img[[y, x, ch]] = (l + (v - l) * ops.saturation).clamp(0.0, 1.0);
                }
            }
        }
    }
    if ops.grayscale {
        for y in 0..h {
            for x in 0..w {
                let l = luminance(img, y, x);
                for ch in 0..c {
                    img[[y, x, ch]] = l;
                }
            }
        }
    }
    if let Some(sigma) = ops.blur_sigma {
        gaussian_blur3(img, sigma);
    }
    if ops.solarize {
        img.mapv_inplace(|v| if v >= 0.5 { 1.0 - v } else { v });
    }
}

/// Separable 3-tap Gaussian blur with edge replication.
fn gaussian_blur3(img: &mut Image, sigma: f64) {
    let e = (-1.0 / (2.0 * sigma * sigma)).exp();
    let k = [e / (1.0 + 2.0 * e), 1.0 / (1.0 + 2.0 * e), e / (1.0 + 2.0 * e)];
    let (h, w, c) = img.dim();
    let src = img.clone();
    let mut tmp = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                tmp[[y, x, ch]] = k[0] * src[[y, xm, ch]] + k[1] * src[[y, x, ch]] + k[2] * src[[y, xp, ch]];
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                img[[y, x, ch]] = k[0] * tmp[[ym, x, ch]] + k[1] * tmp[[y, x, ch]] + k[2] * tmp[[yp, x, ch]];
            }
        }
    }
}

/// Splits an image into `p x p` patches, one row per patch in row-major grid
/// order; within a patch, values are ordered (dy, dx, channel).
pub fn patchify(img: &Image, p: usize) -> Array2<f64> {
    let (h, w, c) = img.dim();
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::zeros((gh * gw, p * p * c));
    for gy in 0..gh {
        for gx in 0..gw {
            let row = gy * gw + gx;
            let mut k = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        out[[row, k]] = img[[gy * p + dy, gx * p + dx, ch]];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}
