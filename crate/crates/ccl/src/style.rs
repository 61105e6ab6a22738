//! RGB/LAB conversion and Reinhard-style per-channel statistics matching.
//!
//! Translation moves an image to another domain's color style by matching
//! channel mean and standard deviation in CIE L*a*b*. The transform is
//! per-pixel and content-independent, so paired label maps are untouched.
//!
//! Conventions: D65 white point, standard sRGB companding for RGB<->XYZ.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ImageTensor;

/// Channel standard deviations are clamped to at least this.
pub const MIN_STD: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("cannot compute style statistics over an empty image collection")]
    EmptyCollection,
}

/// Per-channel LAB mean/std summarizing a domain's color style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub sample_count: usize,
}

// sRGB -> XYZ (D65), IEC 61966-2-1.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

// CIE f with the (6/29)^3 linear segment.
const LAB_EPS: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > LAB_EPS {
        t3
    } else {
        (116.0 * t - 16.0) / LAB_KAPPA
    }
}

/// Convert one sRGB pixel (channels in [0,1]) to L*a*b*.
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = [srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])];
    let mut xyz = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        xyz[i] = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Convert one L*a*b* pixel back to sRGB, clamping to [0,1].
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [lab_f_inv(fx) * WHITE[0], lab_f_inv(fy) * WHITE[1], lab_f_inv(fz) * WHITE[2]];
    let mut out = [0.0; 3];
    for (i, row) in XYZ_TO_RGB.iter().enumerate() {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        out[i] = linear_to_srgb(lin).clamp(0.0, 1.0);
    }
    out
}

/// Convert an image to an H x W x 3 LAB array. L lands in [0,100], a and b
/// roughly in [-128,127].
pub fn rgb_to_lab(image: &ImageTensor) -> Array3<f64> {
    let (h, w, _) = image.data().dim();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let px = rgb_to_lab_pixel([
                image.data()[(y, x, 0)],
                image.data()[(y, x, 1)],
                image.data()[(y, x, 2)],
            ]);
            for c in 0..3 {
                out[(y, x, c)] = px[c];
            }
        }
    }
    out
}

/// Inverse of [`rgb_to_lab`] with gamut clamping to [0,1].
pub fn lab_to_rgb(lab: &Array3<f64>) -> ImageTensor {
    let (h, w, _) = lab.dim();
    let mut out = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let px = lab_to_rgb_pixel([lab[(y, x, 0)], lab[(y, x, 1)], lab[(y, x, 2)]]);
            for c in 0..3 {
                out[(y, x, c)] = px[c];
            }
        }
    }
    ImageTensor::new(out).expect("clamped pixels are in range")
}

/// Population LAB statistics over an array of LAB pixels.
pub fn lab_stats(lab_images: &[Array3<f64>]) -> Result<StyleStats, StyleError> {
    if lab_images.is_empty() {
        return Err(StyleError::EmptyCollection);
    }
    let mut sum = [0.0f64; 3];
    let mut sumsq = [0.0f64; 3];
    let mut n = 0usize;
    for lab in lab_images {
        let (h, w, _) = lab.dim();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = lab[(y, x, c)];
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
        }
        n += h * w;
    }
    let nf = n as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        mean[c] = sum[c] / nf;
        let var = (sumsq[c] / nf - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt().max(MIN_STD);
    }
    Ok(StyleStats { mean, std, sample_count: n })
}

/// Pooled per-channel LAB mean and std over all pixels of all images.
pub fn compute_style<'a, I>(images: I) -> Result<StyleStats, StyleError>
where
    I: IntoIterator<Item = &'a ImageTensor>,
{
    let labs: Vec<Array3<f64>> = images.into_iter().map(rgb_to_lab).collect();
    lab_stats(&labs)
}

/// The core affine restyle in LAB space, before any gamut clamping:
/// per channel, x' = (x - mu_src) / sigma_src * sigma_tgt + mu_tgt.
pub fn translate_lab(
    lab: &Array3<f64>,
    source_stats: &StyleStats,
    target_stats: &StyleStats,
) -> Array3<f64> {
    let mut out = lab.clone();
    let (h, w, _) = out.dim();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = lab[(y, x, c)];
                out[(y, x, c)] = (v - source_stats.mean[c]) / source_stats.std[c]
                    * target_stats.std[c]
                    + target_stats.mean[c];
            }
        }
    }
    out
}

/// Restyle an image from `source_stats` to `target_stats`. Label maps are
/// not part of the transform; callers keep whatever labels they had.
pub fn translate(
    image: &ImageTensor,
    source_stats: &StyleStats,
    target_stats: &StyleStats,
) -> ImageTensor {
    let lab = rgb_to_lab(image);
    let moved = translate_lab(&lab, source_stats, target_stats);
    lab_to_rgb(&moved)
}
