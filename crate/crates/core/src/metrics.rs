//! Full-reference and consistency metrics on 8-bit frames.
//!
//! View and temporal consistency compare cheap deterministic patch features
//! (8x8 block means of luma plus block means of Sobel gradient magnitude)
//! with cosine similarity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ensure_same_dims, Frame, OcclusionMask, Plane, Video};

/// Reported PSNR for identical inputs (and the ceiling for everything else).
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;
pub const FEATURE_BLOCK: u32 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl MetricReport {
    fn new(metric: &str, per_frame: Vec<f64>) -> Self {
        let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        MetricReport {
            metric: metric.to_string(),
            per_frame,
            mean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMetric {
    Ssim,
    Psnr,
    PatchCosine,
}

impl PairMetric {
    pub fn name(self) -> &'static str {
        match self {
            PairMetric::Ssim => "ssim",
            PairMetric::Psnr => "psnr",
            PairMetric::PatchCosine => "patch_cosine",
        }
    }

    pub fn score(self, a: &Frame, b: &Frame) -> Result<f64> {
        match self {
            PairMetric::Ssim => ssim_frame(a, b),
            PairMetric::Psnr => psnr_frame(a, b, None),
            PairMetric::PatchCosine => patch_cosine(a, b),
        }
    }
}

fn check_frames(a: &Frame, b: &Frame) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// PSNR over all channels of the pixels where `mask` is 0 (all pixels when
/// no mask is given), capped at [`PSNR_CAP_DB`].
pub fn psnr_frame(a: &Frame, b: &Frame, mask: Option<&Plane<u8>>) -> Result<f64> {
    check_frames(a, b)?;
    if let Some(m) = mask {
        if (m.width(), m.height()) != a.dimensions() {
            return Err(Error::DimensionMismatch("psnr mask size differs from frames".into()));
        }
    }
    let mut sse = 0u64;
    let mut count = 0u64;
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        if mask.is_some_and(|m| m.as_slice()[i] != 0) {
            continue;
        }
        for c in 0..3 {
            let d = pa.0[c] as i64 - pb.0[c] as i64;
            sse += (d * d) as u64;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / count as f64;
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

/// Per-frame PSNR of two clips, optionally restricted to mask-0 pixels.
pub fn psnr(a: &Video, b: &Video, mask: Option<&OcclusionMask>) -> Result<MetricReport> {
    ensure_same_dims("psnr", a, b)?;
    if let Some(m) = mask {
        ensure_same_dims("psnr mask", a, m)?;
    }
    let per_frame = (0..a.len())
        .into_par_iter()
        .map(|i| psnr_frame(a.frame(i), b.frame(i), mask.map(|m| m.frame(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new("psnr", per_frame))
}

pub fn luma(frame: &Frame) -> Plane<f64> {
    Plane::from_vec(
        frame.width(),
        frame.height(),
        frame
            .pixels()
            .map(|p| 0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64)
            .collect(),
    )
    .expect("same size")
}

fn ssim_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Valid-region separable filtering with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of the luma planes over all valid 11x11 window positions.
pub fn ssim_frame(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: a.width(),
            height: a.height(),
            min: SSIM_WINDOW as u32,
        });
    }
    let (ya, yb) = (luma(a), luma(b));
    let (x, y) = (ya.as_slice(), yb.as_slice());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let k = ssim_window();
    let (mu_x, _, _) = filter_valid(x, w, h, &k);
    let (mu_y, _, _) = filter_valid(y, w, h, &k);
    let (e_xx, _, _) = filter_valid(&xx, w, h, &k);
    let (e_yy, _, _) = filter_valid(&yy, w, h, &k);
    let (e_xy, ow, oh) = filter_valid(&xy, w, h, &k);

    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * (mx * my) + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / (ow * oh) as f64)
}

pub fn ssim(a: &Video, b: &Video) -> Result<MetricReport> {
    ensure_same_dims("ssim", a, b)?;
    let per_frame = (0..a.len())
        .into_par_iter()
        .map(|i| ssim_frame(a.frame(i), b.frame(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new("ssim", per_frame))
}

/// Patch feature vector: 8x8 block means of luma followed by block means of
/// Sobel gradient magnitude (edge-replicated borders).
pub fn patch_features(frame: &Frame) -> Vec<f64> {
    let y = luma(frame);
    let (w, h) = (y.width() as i64, y.height() as i64);
    let at = |x: i64, yy: i64| y.get(x.clamp(0, w - 1) as u32, yy.clamp(0, h - 1) as u32);
    let (bw, bh) = (w as u32 / FEATURE_BLOCK, h as u32 / FEATURE_BLOCK);
    let nblocks = (bw * bh) as usize;
    let mut means = vec![0.0; nblocks];
    let mut grads = vec![0.0; nblocks];
    for by in 0..bh {
        for bx in 0..bw {
            let (mut s, mut g) = (0.0, 0.0);
            for py in 0..FEATURE_BLOCK {
                for px in 0..FEATURE_BLOCK {
                    let x = (bx * FEATURE_BLOCK + px) as i64;
                    let yy = (by * FEATURE_BLOCK + py) as i64;
                    s += at(x, yy);
                    let gx = (at(x + 1, yy - 1) + 2.0 * at(x + 1, yy) + at(x + 1, yy + 1))
                        - (at(x - 1, yy - 1) + 2.0 * at(x - 1, yy) + at(x - 1, yy + 1));
                    let gy = (at(x - 1, yy + 1) + 2.0 * at(x, yy + 1) + at(x + 1, yy + 1))
                        - (at(x - 1, yy - 1) + 2.0 * at(x, yy - 1) + at(x + 1, yy - 1));
                    g += (gx * gx + gy * gy).sqrt();
                }
            }
            let n = (FEATURE_BLOCK * FEATURE_BLOCK) as f64;
            let idx = (by * bw + bx) as usize;
            means[idx] = s / n;
            grads[idx] = g / n;
        }
    }
    means.extend(grads);
    let norm = means.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        means.iter_mut().for_each(|v| *v /= norm);
    }
    means
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 && bb == 0.0 {
        return 1.0;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

pub fn patch_cosine(a: &Frame, b: &Frame) -> Result<f64> {
    check_frames(a, b)?;
    if a.width() < FEATURE_BLOCK || a.height() < FEATURE_BLOCK {
        return Err(Error::TooSmall {
            width: a.width(),
            height: a.height(),
            min: FEATURE_BLOCK,
        });
    }
    Ok(cosine(&patch_features(a), &patch_features(b)))
}

/// Mean of `metric` over the consecutive frame pairs of `video`.
pub fn temporal_consistency(video: &Video, metric: PairMetric) -> Result<MetricReport> {
    if video.len() < 2 {
        return Err(Error::SingleFrame);
    }
    let per_pair = (1..video.len())
        .into_par_iter()
        .map(|i| metric.score(video.frame(i - 1), video.frame(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new(&format!("temporal_{}", metric.name()), per_pair))
}

/// Mean patch cosine between the two views, frame by frame.
pub fn view_consistency(left: &Video, right: &Video) -> Result<MetricReport> {
    ensure_same_dims("view consistency", left, right)?;
    let per_frame = (0..left.len())
        .into_par_iter()
        .map(|i| patch_cosine(left.frame(i), right.frame(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::new("view_patch_cosine", per_frame))
}
