//! Image quality metrics and score aggregation.
//!
//! PSNR and SSIM are computed natively on 8-bit PNG images. LPIPS requires a
//! pretrained perceptual network and is delegated to an external scorer
//! invoked through a command template. Per-task scores are aggregated into
//! pass@1 plus means over the passing tasks, with pass@1-scaled variants of
//! each image metric.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SSIM window side length.
const SSIM_WINDOW: usize = 11;
/// Gaussian sigma for the SSIM window.
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range of 8-bit samples.
const DYNAMIC_RANGE: f64 = 255.0;

/// Stand-in for infinite PSNR when averaging across tasks.
pub const PSNR_INFINITE_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("image shapes differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    ShapeMismatch(u32, u32, u8, u32, u32, u8),
    #[error("image side {0} is smaller than the {SSIM_WINDOW}-pixel SSIM window")]
    TooSmall(u32),
    #[error("cannot aggregate an empty score list")]
    EmptyInput,
    #[error("LPIPS plugin not runnable: {0}")]
    PluginMissing(String),
    #[error("LPIPS plugin printed unusable output: {0:?}")]
    PluginMalformedOutput(String),
    #[error("unsupported channel count {0}")]
    BadChannels(u8),
    #[error("buffer length {0} does not match {1}x{2}x{3}")]
    BadBufferLength(usize, u32, u32, u8),
    #[error("image decode failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit image, grayscale or RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: u8,
    pub data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, MetricError> {
        if channels != 1 && channels != 3 {
            return Err(MetricError::BadChannels(channels));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(MetricError::BadBufferLength(data.len(), width, height, channels));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Decode a PNG file. Grayscale stays single-channel, everything else
    /// becomes RGB; alpha is dropped.
    pub fn from_png(path: &Path) -> Result<Self, MetricError> {
        let img = image::ImageReader::open(path)?.decode()?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width(), g.height());
                Self::new(w, h, 1, g.into_raw())?
            }
            image::DynamicImage::ImageLumaA8(_) | image::DynamicImage::ImageLuma16(_) => {
                let g = img.into_luma8();
                let (w, h) = (g.width(), g.height());
                Self::new(w, h, 1, g.into_raw())?
            }
            other => {
                let rgb = other.into_rgb8();
                let (w, h) = (rgb.width(), rgb.height());
                Self::new(w, h, 3, rgb.into_raw())?
            }
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<(), MetricError> {
        match self.channels {
            1 => image::GrayImage::from_raw(self.width, self.height, self.data.clone())
                .expect("validated dimensions")
                .save_with_format(path, image::ImageFormat::Png)?,
            3 => image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                .expect("validated dimensions")
                .save_with_format(path, image::ImageFormat::Png)?,
            c => return Err(MetricError::BadChannels(c)),
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> Result<(), MetricError> {
        if self.width != other.width || self.height != other.height || self.channels != other.channels {
            return Err(MetricError::ShapeMismatch(
                self.width, self.height, self.channels, other.width, other.height, other.channels,
            ));
        }
        Ok(())
    }

    /// Luminance plane as f64. BT.601 weights for RGB.
    fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|px| 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64)
                .collect(),
        }
    }
}

/// Nearest-neighbor downscale to `(width, height)`.
pub fn resize_nearest(img: &ImageBuffer, width: u32, height: u32) -> ImageBuffer {
    let ch = img.channels as usize;
    let mut data = Vec::with_capacity(width as usize * height as usize * ch);
    for y in 0..height {
        let sy = (y as u64 * img.height as u64 / height as u64).min(img.height as u64 - 1) as usize;
        for x in 0..width {
            let sx = (x as u64 * img.width as u64 / width as u64).min(img.width as u64 - 1) as usize;
            let off = (sy * img.width as usize + sx) * ch;
            data.extend_from_slice(&img.data[off..off + ch]);
        }
    }
    ImageBuffer { width, height, channels: img.channels, data }
}

/// Peak signal-to-noise ratio in dB over all samples, peak 255.
///
/// Identical images have zero MSE; that is reported as `f64::INFINITY` and
/// substituted with [`PSNR_INFINITE_DB`] only when averaging.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    a.same_shape(b)?;
    let n = a.data.len() as f64;
    let sum_sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sum_sq / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter over the valid region (no padding).
/// Input is `w x h`; output is `(w-10) x (h-10)`.
fn window_means(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    // Horizontal pass: vw x h.
    let mut horiz = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * plane[y * w + x + t];
            }
            horiz[y * vw + x] = acc;
        }
    }
    // Vertical pass: vw x vh.
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(y + t) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Single-scale SSIM on luminance with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 255. Mean over all window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    a.same_shape(b)?;
    let min_side = a.width.min(a.height);
    if (min_side as usize) < SSIM_WINDOW {
        return Err(MetricError::TooSmall(min_side));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    let x = a.luma();
    let y = b.luma();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let kernel = gaussian_kernel();
    let mu_x = window_means(&x, w, h, &kernel);
    let mu_y = window_means(&y, w, h, &kernel);
    let m_xx = window_means(&xx, w, h, &kernel);
    let m_yy = window_means(&yy, w, h, &kernel);
    let m_xy = window_means(&xy, w, h, &kernel);

    let c1 = (SSIM_K1 * DYNAMIC_RANGE) * (SSIM_K1 * DYNAMIC_RANGE);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE) * (SSIM_K2 * DYNAMIC_RANGE);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// Run the external LPIPS scorer. `template` is split on whitespace; `{A}`
/// and `{B}` inside tokens are replaced by the two image paths. The scorer
/// must print one decimal in [0, 1] to stdout and exit 0.
pub fn lpips(a_path: &Path, b_path: &Path, template: &str) -> Result<f64, MetricError> {
    let args: Vec<String> = template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{A}", &a_path.to_string_lossy())
                .replace("{B}", &b_path.to_string_lossy())
        })
        .collect();
    let (program, rest) = args
        .split_first()
        .ok_or_else(|| MetricError::PluginMissing("empty plugin template".into()))?;
    let output = Command::new(program).args(rest).output().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            MetricError::PluginMissing(format!("{program}: not found"))
        } else {
            MetricError::PluginMissing(format!("{program}: {e}"))
        }
    })?;
    if !output.status.success() {
        return Err(MetricError::PluginMalformedOutput(format!(
            "exit status {:?}",
            output.status.code()
        )));
    }
    let text = String::from_utf8_lossy(&output.stdout);
    let value: f64 = text
        .trim()
        .parse()
        .map_err(|_| MetricError::PluginMalformedOutput(text.trim().to_string()))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(MetricError::PluginMalformedOutput(text.trim().to_string()));
    }
    Ok(value)
}

/// Score of one benchmark task. Image metrics are recorded only for tasks
/// whose script executed successfully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, with = "psnr_serde", skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

/// Suite-level scores: pass@1 plus metric means over the passing tasks and
/// their pass@1-scaled counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    /// Percentage of tasks that passed, in [0, 100].
    pub pass_at_1: f64,
    pub mean_ssim: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_lpips: Option<f64>,
    pub scaled_ssim: Option<f64>,
    pub scaled_psnr: Option<f64>,
    pub scaled_lpips: Option<f64>,
}

/// Aggregate per-task scores.
///
/// Means are taken over the passing tasks only; infinite PSNR contributes
/// [`PSNR_INFINITE_DB`]. Scaled values weight each mean by pass@1/100
/// (`scaled_lpips` is pulled toward its worst value 1.0 instead, since lower
/// is better). With zero passing tasks the means are absent and the scaled
/// values take their worst-case 0 / 0 / 1.
pub fn aggregate(scores: &[TaskScore]) -> Result<AggregateScores, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let passed: Vec<&TaskScore> = scores.iter().filter(|s| s.passed).collect();
    let pass_at_1 = (100.0 * passed.len() as f64) / scores.len() as f64;

    let mean = |values: Vec<f64>| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let mean_ssim = mean(passed.iter().filter_map(|s| s.ssim).collect());
    let mean_psnr = mean(
        passed
            .iter()
            .filter_map(|s| s.psnr)
            .map(|v| if v.is_infinite() { PSNR_INFINITE_DB } else { v })
            .collect(),
    );
    let mean_lpips = mean(passed.iter().filter_map(|s| s.lpips).collect());

    let fraction = pass_at_1 / 100.0;
    let (scaled_ssim, scaled_psnr, scaled_lpips) = if passed.is_empty() {
        (Some(0.0), Some(0.0), Some(1.0))
    } else {
        (
            mean_ssim.map(|m| fraction * m),
            mean_psnr.map(|m| fraction * m),
            mean_lpips.map(|m| 1.0 - (1.0 - m) * fraction),
        )
    };

    Ok(AggregateScores {
        pass_at_1,
        mean_ssim,
        mean_psnr,
        mean_lpips,
        scaled_ssim,
        scaled_psnr,
        scaled_lpips,
    })
}

/// PSNR serialization that survives the infinite sentinel: finite values are
/// numbers, infinity is the string `"inf"`.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => Repr::Text("inf".into()).serialize(s),
            Some(x) => Repr::Num(*x).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
        }
    }
}
