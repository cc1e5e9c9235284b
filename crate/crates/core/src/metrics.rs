//! Classical full-reference image metrics on luminance: MSE, PSNR, SSIM and GMSD.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("image sizes differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image of {width}x{height} is smaller than the required {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Row-major luminance plane with samples on the 0..255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(MetricError::InvalidImage(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=255.0).contains(*v))) {
            return Err(MetricError::InvalidImage(format!("sample {v} outside [0, 255]")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn from_dynamic(image: &DynamicImage) -> Self {
        let (width, height) = (image.width() as usize, image.height() as usize);
        let luma = |r: f64, g: f64, b: f64| 0.299 * r + 0.587 * g + 0.114 * b;
        let data: Vec<f64> = match image {
            DynamicImage::ImageLuma8(img) => img.pixels().map(|p| p[0] as f64).collect(),
            DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| p[0] as f64).collect(),
            DynamicImage::ImageLuma16(img) => {
                img.pixels().map(|p| p[0] as f64 / 257.0).collect()
            }
            DynamicImage::ImageLumaA16(img) => {
                img.pixels().map(|p| p[0] as f64 / 257.0).collect()
            }
            DynamicImage::ImageRgb8(img) => img
                .pixels()
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            DynamicImage::ImageRgba8(img) => img
                .pixels()
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            other => other
                .to_rgb32f()
                .pixels()
                .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) * 255.0)
                .collect(),
        };
        let data = data.into_iter().map(|v| v.clamp(0.0, 255.0)).collect();
        GrayImage {
            width,
            height,
            data,
        }
    }
}

/// Decodes a PNG or JPEG file to Rec.601 luma. Single-channel inputs pass through.
pub fn to_gray(path: &Path) -> Result<GrayImage> {
    let decode_err = |reason: String| MetricError::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    let image = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    Ok(GrayImage::from_dynamic(&image))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Psnr,
    Ssim,
    Gmsd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Mse, MetricKind::Psnr, MetricKind::Ssim, MetricKind::Gmsd];

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Psnr | MetricKind::Ssim)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::Gmsd => "gmsd",
        }
    }

    pub fn compute(self, a: &GrayImage, b: &GrayImage, params: &MetricParams) -> Result<MetricValue> {
        match self {
            MetricKind::Mse => mse(a, b),
            MetricKind::Psnr => psnr(a, b),
            MetricKind::Ssim => ssim_with(a, b, &params.ssim),
            MetricKind::Gmsd => gmsd_with(a, b, &params.gmsd),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric `{s}` (expected mse, psnr, ssim or gmsd)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub metric: MetricKind,
    /// `f64::INFINITY` is the PSNR sentinel for identical images.
    pub value: f64,
    pub higher_is_better: bool,
}

impl MetricValue {
    fn new(metric: MetricKind, value: f64) -> Self {
        MetricValue {
            metric,
            value,
            higher_is_better: metric.higher_is_better(),
        }
    }

    pub fn is_infinite_sentinel(&self) -> bool {
        self.value == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmsdParams {
    /// Stabilizing constant for 0..255 inputs.
    pub c: f64,
}

impl Default for GmsdParams {
    fn default() -> Self {
        GmsdParams { c: 170.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub ssim: SsimParams,
    pub gmsd: GmsdParams,
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(())
}

fn at_least(a: &GrayImage, min: usize) -> Result<()> {
    if a.width < min || a.height < min {
        return Err(MetricError::TooSmall {
            width: a.width,
            height: a.height,
            min,
        });
    }
    Ok(())
}

fn mse_value(a: &GrayImage, b: &GrayImage) -> f64 {
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.data.len().max(1) as f64
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<MetricValue> {
    same_dims(a, b)?;
    Ok(MetricValue::new(MetricKind::Mse, mse_value(a, b)))
}

pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<MetricValue> {
    same_dims(a, b)?;
    let err = mse_value(a, b);
    let value = if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / err).log10()
    };
    Ok(MetricValue::new(MetricKind::Psnr, value))
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering: output is (w - k + 1) x (h - k + 1).
fn filter_valid(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let out_w = width - k + 1;
    let out_h = height - k + 1;
    let mut horizontal = vec![0.0; out_w * height];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..out_w {
            horizontal[y * out_w + x] = kernel.iter().zip(&row[x..x + k]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            out[y * out_w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * horizontal[(y + i) * out_w + x])
                .sum();
        }
    }
    out
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<MetricValue> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean of the local SSIM map under a Gaussian window, valid region only.
pub fn ssim_with(a: &GrayImage, b: &GrayImage, params: &SsimParams) -> Result<MetricValue> {
    same_dims(a, b)?;
    at_least(a, params.window)?;
    let kernel = gaussian_kernel(params.window, params.sigma);
    let (w, h) = a.dims();
    let product = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect()
    };
    let mu_a = filter_valid(&a.data, w, h, &kernel);
    let mu_b = filter_valid(&b.data, w, h, &kernel);
    let e_aa = filter_valid(&product(&|x, _| x * x), w, h, &kernel);
    let e_bb = filter_valid(&product(&|_, y| y * y), w, h, &kernel);
    let e_ab = filter_valid(&product(&|x, y| x * y), w, h, &kernel);

    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    let value = (total / mu_a.len() as f64).clamp(-1.0, 1.0);
    Ok(MetricValue::new(MetricKind::Ssim, value))
}

/// Prewitt gradient magnitude at every interior pixel.
fn gradient_magnitude(img: &GrayImage) -> Vec<f64> {
    let (w, h) = img.dims();
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for d in [-1isize, 0, 1] {
                let yy = (y as isize + d) as usize;
                let xx = (x as isize + d) as usize;
                gx += img.at(x + 1, yy) - img.at(x - 1, yy);
                gy += img.at(xx, y + 1) - img.at(xx, y - 1);
            }
            gx /= 3.0;
            gy /= 3.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

pub fn gmsd(a: &GrayImage, b: &GrayImage) -> Result<MetricValue> {
    gmsd_with(a, b, &GmsdParams::default())
}

/// Population standard deviation of the gradient-magnitude similarity map.
pub fn gmsd_with(a: &GrayImage, b: &GrayImage, params: &GmsdParams) -> Result<MetricValue> {
    same_dims(a, b)?;
    at_least(a, 3)?;
    let ga = gradient_magnitude(a);
    let gb = gradient_magnitude(b);
    let gms: Vec<f64> = ga
        .iter()
        .zip(&gb)
        .map(|(m1, m2)| (2.0 * m1 * m2 + params.c) / (m1 * m1 + m2 * m2 + params.c))
        .collect();
    let n = gms.len() as f64;
    let mean = gms.iter().sum::<f64>() / n;
    let var = gms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MetricValue::new(MetricKind::Gmsd, var.sqrt()))
}
