//! Depth to disparity conversion and left-to-right forward warping.
//!
//! Every left pixel is splatted to `round(x - disparity)` on its own row. When
//! several sources land on one target the nearest one wins; at equal depth
//! the source with the larger x wins, which makes the result independent of
//! traversal order. Targets that receive nothing are holes (mask = 1,
//! pixel = 0).

use image::Rgb;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::tensorio::{
    ensure_same_dims, DepthSequence, Frame, OcclusionMask, Plane, SequenceDims, Video,
};

/// Disparity used at inference when none is given.
pub const DEFAULT_SCALE: f64 = 0.03;
/// Search grid for [`calibrate_disparity_scale`], in thousandths.
pub const CALIBRATION_GRID_MILLI: (u32, u32, u32) = (20, 200, 5);
pub const DEFAULT_OVERLAP_THRESHOLD_DB: f64 = 20.0;

/// Per-pixel horizontal disparity in pixels, finite and non-negative.
/// Positive values move content toward -x when warping left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityField {
    frames: Vec<Plane<f32>>,
}

impl DisparityField {
    pub fn new(frames: Vec<Plane<f32>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::FrameCountMismatch {
                expected: 1,
                found: 0,
            });
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        for (i, p) in frames.iter().enumerate() {
            if (p.width(), p.height()) != (w, h) {
                return Err(Error::DimensionMismatch(format!("disparity frame {i} differs in size")));
            }
            if p.as_slice().iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "disparity frame {i} has negative or non-finite values"
                )));
            }
        }
        Ok(DisparityField { frames })
    }

    pub fn frames(&self) -> &[Plane<f32>] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Plane<f32> {
        &self.frames[index]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max(&self) -> f32 {
        self.frames
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .fold(0.0, f32::max)
    }
}

impl SequenceDims for DisparityField {
    fn dims(&self) -> (usize, u32, u32) {
        (self.frames.len(), self.frames[0].width(), self.frames[0].height())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DisparityMode {
    /// `focal_px * baseline_m / z`.
    Metric { focal_px: f64, baseline_m: f64 },
    /// `scale * W * q` with `q` the clip-wide min-max normalized inverse depth.
    Scaled { scale: f64 },
}

impl Default for DisparityMode {
    fn default() -> Self {
        DisparityMode::Scaled {
            scale: DEFAULT_SCALE,
        }
    }
}

pub fn depth_to_disparity(depth: &DepthSequence, mode: DisparityMode) -> Result<DisparityField> {
    for (i, plane) in depth.frames().iter().enumerate() {
        if let Some(pos) = plane.as_slice().iter().position(|&z| !(z > 0.0 && z.is_finite())) {
            let w = plane.width() as usize;
            return Err(Error::NonPositiveDepth {
                frame: i,
                x: (pos % w) as u32,
                y: (pos / w) as u32,
                value: plane.as_slice()[pos],
            });
        }
    }
    let frames = match mode {
        DisparityMode::Metric {
            focal_px,
            baseline_m,
        } => {
            if !(focal_px > 0.0 && baseline_m > 0.0) {
                return Err(Error::InvalidConfig("metric mode needs focal_px > 0 and baseline_m > 0".into()));
            }
            let fb = focal_px * baseline_m;
            depth
                .frames()
                .par_iter()
                .map(|p| map_plane(p, |z| (fb / z as f64) as f32))
                .collect()
        }
        DisparityMode::Scaled { scale } => {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::InvalidConfig(format!("disparity scale {scale} must be >= 0")));
            }
            let (lo, hi) = depth
                .frames()
                .iter()
                .flat_map(|p| p.as_slice().iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| {
                    let inv = 1.0 / z as f64;
                    (lo.min(inv), hi.max(inv))
                });
            let max_disp = scale * depth.width() as f64;
            let range = hi - lo;
            depth
                .frames()
                .par_iter()
                .map(|p| {
                    map_plane(p, |z| {
                        if range > 0.0 {
                            let q = (1.0 / z as f64 - lo) / range;
                            (max_disp * q) as f32
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        }
    };
    DisparityField::new(frames)
}

fn map_plane(p: &Plane<f32>, f: impl Fn(f32) -> f32) -> Plane<f32> {
    Plane::from_vec(p.width(), p.height(), p.as_slice().iter().map(|&z| f(z)).collect())
        .expect("same size")
}

/// Splat target column for source column `x`; `None` when it falls off the row.
#[inline]
pub fn splat_target(x: u32, disparity: f32, width: u32) -> Option<u32> {
    let t = (x as f64 - disparity as f64 + 0.5).floor();
    (t >= 0.0 && t < width as f64).then_some(t as u32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpedFrame {
    pub image: Frame,
    /// 1 where no source pixel landed.
    pub mask: Plane<u8>,
    /// Depth key of the winning source, `+inf` at holes.
    pub zbuf: Plane<f32>,
}

/// Forward-warps one frame. `depth` orders collisions when given; otherwise
/// `-disparity` is the depth proxy (larger disparity is nearer).
pub fn forward_warp(frame: &Frame, disparity: &Plane<f32>, depth: Option<&Plane<f32>>) -> Result<WarpedFrame> {
    let (w, h) = frame.dimensions();
    if (disparity.width(), disparity.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "frame {w}x{h} vs disparity {}x{}",
            disparity.width(),
            disparity.height()
        )));
    }
    if let Some(d) = depth {
        if (d.width(), d.height()) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "frame {w}x{h} vs depth {}x{}",
                d.width(),
                d.height()
            )));
        }
    }

    let mut image = Frame::new(w, h);
    let mut mask = Plane::filled(w, h, 1u8);
    let mut zbuf = Plane::filled(w, h, f32::INFINITY);
    let mut winner = vec![0u32; w as usize];

    for y in 0..h {
        let disp_row = disparity.row(y);
        for x in 0..w {
            let d = disp_row[x as usize];
            let Some(t) = splat_target(x, d, w) else {
                continue;
            };
            let key = match depth {
                Some(z) => z.get(x, y),
                None => -d,
            };
            let current = zbuf.get(t, y);
            let empty = mask.get(t, y) == 1;
            let wins = empty || key < current || (key == current && x > winner[t as usize]);
            if wins {
                zbuf.set(t, y, key);
                mask.set(t, y, 0);
                winner[t as usize] = x;
                image.put_pixel(t, y, *frame.get_pixel(x, y));
            }
        }
    }
    Ok(WarpedFrame { image, mask, zbuf })
}

/// Warps every frame of `video`.
pub fn warp_video(
    video: &Video,
    disparity: &DisparityField,
    depth: Option<&DepthSequence>,
) -> Result<(Video, OcclusionMask)> {
    ensure_same_dims("warp video/disparity", video, disparity)?;
    if let Some(d) = depth {
        ensure_same_dims("warp video/depth", video, d)?;
    }
    let warped = (0..video.len())
        .into_par_iter()
        .map(|i| forward_warp(video.frame(i), disparity.frame(i), depth.map(|d| d.frame(i))))
        .collect::<Result<Vec<_>>>()?;
    let (images, masks): (Vec<_>, Vec<_>) = warped.into_iter().map(|w| (w.image, w.mask)).unzip();
    Ok((Video::new(images)?, OcclusionMask::new(masks)?))
}

/// Fills short horizontal hole runs by linear interpolation between the
/// valid pixels on either side. Runs longer than `max_span` or touching the
/// frame border are left alone.
pub fn fill_flying_pixels(image: &Frame, mask: &Plane<u8>, max_span: u32) -> (Frame, Plane<u8>) {
    let mut image = image.clone();
    let mut mask = mask.clone();
    if max_span == 0 {
        return (image, mask);
    }
    let w = mask.width();
    for y in 0..mask.height() {
        let mut x = 0;
        while x < w {
            if mask.get(x, y) == 0 {
                x += 1;
                continue;
            }
            let start = x;
            while x < w && mask.get(x, y) == 1 {
                x += 1;
            }
            let len = x - start;
            if start == 0 || x == w || len > max_span {
                continue;
            }
            let a = image.get_pixel(start - 1, y).0;
            let b = image.get_pixel(x, y).0;
            let n = len + 1;
            for k in 1..=len {
                let mut px = [0u8; 3];
                for c in 0..3 {
                    // (a*(n-k) + b*k) / n, rounded half up
                    let num = a[c] as u32 * (n - k) + b[c] as u32 * k;
                    px[c] = ((2 * num + n) / (2 * n)) as u8;
                }
                image.put_pixel(start - 1 + k, y, Rgb(px));
                mask.set(start - 1 + k, y, 0);
            }
        }
    }
    (image, mask)
}

/// Binary dilation with a `(2 * radius + 1)^2` square, repeated `iterations` times.
pub fn dilate_mask(mask: &Plane<u8>, radius: u32, iterations: u32) -> Plane<u8> {
    let mut cur = mask.clone();
    if radius == 0 {
        return cur;
    }
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let r = radius as i64;
    for _ in 0..iterations {
        let mut horiz = Plane::filled(mask.width(), mask.height(), 0u8);
        for y in 0..h {
            let row = cur.row(y as u32);
            let out = horiz.row_mut(y as u32);
            for x in 0..w {
                let lo = (x - r).max(0) as usize;
                let hi = (x + r).min(w - 1) as usize;
                out[x as usize] = row[lo..=hi].iter().copied().max().unwrap_or(0);
            }
        }
        let mut next = Plane::filled(mask.width(), mask.height(), 0u8);
        for y in 0..h {
            let lo = (y - r).max(0);
            let hi = (y + r).min(h - 1);
            for x in 0..w {
                let v = (lo..=hi).any(|yy| horiz.get(x as u32, yy as u32) != 0);
                next.set(x as u32, y as u32, v as u8);
            }
        }
        cur = next;
    }
    cur
}

/// Outcome of the disparity-scale search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub scale: f64,
    /// Mean masked PSNR at `scale`, dB.
    pub psnr: f64,
    /// `(scale, mean masked PSNR)` for every grid point.
    pub scores: Vec<(f64, f64)>,
}

pub fn calibration_grid() -> Vec<f64> {
    let (lo, hi, step) = CALIBRATION_GRID_MILLI;
    (lo..=hi).step_by(step as usize).map(|m| m as f64 / 1000.0).collect()
}

/// Grid-searches the disparity scale whose scaled-mode warp of `left` best
/// matches `right` over non-hole pixels. Fails with `NoOverlap` when no grid
/// point reaches `threshold_db`; ties go to the smaller scale.
pub fn calibrate_disparity_scale(
    left: &Video,
    depth: &DepthSequence,
    right: &Video,
    threshold_db: f64,
) -> Result<Calibration> {
    ensure_same_dims("calibrate left/depth", left, depth)?;
    ensure_same_dims("calibrate left/right", left, right)?;
    let scores = calibration_grid()
        .into_par_iter()
        .map(|scale| {
            let disp = depth_to_disparity(depth, DisparityMode::Scaled { scale })?;
            let mut total = 0.0;
            for i in 0..left.len() {
                let warped = forward_warp(left.frame(i), disp.frame(i), None)?;
                total += match metrics::psnr_frame(&warped.image, right.frame(i), Some(&warped.mask)) {
                    Ok(db) => db,
                    Err(Error::EmptyMask) => 0.0,
                    Err(e) => return Err(e),
                };
            }
            Ok((scale, total / left.len() as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (scale, psnr) = scores
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    if psnr < threshold_db {
        return Err(Error::NoOverlap {
            best_scale: scale,
            best_psnr: psnr,
            threshold: threshold_db,
        });
    }
    Ok(Calibration { scale, psnr, scores })
}
