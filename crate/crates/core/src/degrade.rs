//! Temporally-consistent degradation: `X' = Up(Down(X))`.
//!
//! `Down` runs the recipe's stage chain (blur at source resolution, area
//! downsample, then noise and JPEG at target resolution). `Up` is area
//! interpolation back to the source size. One recipe is drawn per clip and
//! applied unchanged to every frame; only the noise stream differs per frame
//! and it is derived from `(seed, frame index)`.

use std::fmt;
use std::str::FromStr;

use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitmix64;
use crate::tensorio::{Frame, Video};

pub const BLUR_SIGMA_BOUNDS: (f64, f64) = (0.2, 3.0);
pub const NOISE_SIGMA_BOUNDS: (f64, f64) = (1.0, 30.0);
pub const JPEG_QUALITY_BOUNDS: (u8, u8) = (30, 95);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Blur,
    #[serde(alias = "down")]
    ResizeDown,
    Noise,
    Jpeg,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Blur, Stage::ResizeDown, Stage::Noise, Stage::Jpeg];
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "blur" => Ok(Stage::Blur),
            "down" | "resize_down" => Ok(Stage::ResizeDown),
            "noise" => Ok(Stage::Noise),
            "jpeg" => Ok(Stage::Jpeg),
            other => Err(format!("unknown stage {other:?}; use blur, down, noise, jpeg")),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Blur => "blur",
            Stage::ResizeDown => "down",
            Stage::Noise => "noise",
            Stage::Jpeg => "jpeg",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMethod {
    #[default]
    AreaInterp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub blur_sigma: f64,
    pub target_w: u32,
    pub target_h: u32,
    pub noise_sigma: f64,
    pub jpeg_quality: u8,
    pub stages: Vec<Stage>,
    pub up_method: UpMethod,
}

impl DegradationRecipe {
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecipe(m));
        if self.target_w == 0 || self.target_h == 0 || self.target_w > width || self.target_h > height {
            return bad(format!(
                "target {}x{} must be within 1x1..={width}x{height}",
                self.target_w, self.target_h
            ));
        }
        if !in_range(self.blur_sigma, BLUR_SIGMA_BOUNDS) {
            return bad(format!("blur_sigma {} outside {:?}", self.blur_sigma, BLUR_SIGMA_BOUNDS));
        }
        if !in_range(self.noise_sigma, NOISE_SIGMA_BOUNDS) {
            return bad(format!("noise_sigma {} outside {:?}", self.noise_sigma, NOISE_SIGMA_BOUNDS));
        }
        if !(JPEG_QUALITY_BOUNDS.0..=JPEG_QUALITY_BOUNDS.1).contains(&self.jpeg_quality) {
            return bad(format!("jpeg_quality {} outside {:?}", self.jpeg_quality, JPEG_QUALITY_BOUNDS));
        }
        let mut seen = [false; 4];
        let mut last = None;
        for s in &self.stages {
            let pos = Stage::ALL.iter().position(|a| a == s).expect("stage listed");
            if seen[pos] {
                return bad(format!("stage {s} listed twice"));
            }
            if last.is_some_and(|l| pos < l) {
                return bad("stages must follow the order blur, down, noise, jpeg".into());
            }
            seen[pos] = true;
            last = Some(pos);
        }
        Ok(())
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

/// Sampling ranges for [`sample_recipe`]. Target size and stage list are
/// fixed per run, not sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeRanges {
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub target_w: u32,
    pub target_h: u32,
    pub stages: Vec<Stage>,
}

impl RecipeRanges {
    pub fn new(target_w: u32, target_h: u32) -> Self {
        RecipeRanges {
            blur_sigma: BLUR_SIGMA_BOUNDS,
            noise_sigma: NOISE_SIGMA_BOUNDS,
            jpeg_quality: JPEG_QUALITY_BOUNDS,
            target_w,
            target_h,
            stages: Stage::ALL.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): (f64, f64), bounds: (f64, f64)| {
            if !(lo <= hi && in_range(lo, bounds) && in_range(hi, bounds)) {
                return Err(Error::InvalidRange(format!("{name} ({lo}, {hi}) must lie within {bounds:?}")));
            }
            Ok(())
        };
        check("blur_sigma", self.blur_sigma, BLUR_SIGMA_BOUNDS)?;
        check("noise_sigma", self.noise_sigma, NOISE_SIGMA_BOUNDS)?;
        let (qlo, qhi) = self.jpeg_quality;
        if !(qlo <= qhi && qlo >= JPEG_QUALITY_BOUNDS.0 && qhi <= JPEG_QUALITY_BOUNDS.1) {
            return Err(Error::InvalidRange(format!(
                "jpeg_quality ({qlo}, {qhi}) must lie within {JPEG_QUALITY_BOUNDS:?}"
            )));
        }
        if self.target_w == 0 || self.target_h == 0 {
            return Err(Error::InvalidRange("target size must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws every recipe parameter uniformly from `ranges`, deterministically in `seed`.
pub fn sample_recipe(seed: u64, ranges: &RecipeRanges) -> Result<DegradationRecipe> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blur_sigma = uniform(&mut rng, ranges.blur_sigma);
    let noise_sigma = uniform(&mut rng, ranges.noise_sigma);
    let jpeg_quality = rng.random_range(ranges.jpeg_quality.0..=ranges.jpeg_quality.1);
    Ok(DegradationRecipe {
        seed,
        blur_sigma,
        target_w: ranges.target_w,
        target_h: ranges.target_h,
        noise_sigma,
        jpeg_quality,
        stages: ranges.stages.clone(),
        up_method: UpMethod::AreaInterp,
    })
}

/// Seed of the second recipe when degrading second-order.
pub fn second_pass_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x5EC0_4D0A_D3C0_5EED)
}

/// Seed of the noise stream for `frame_index` under recipe seed `seed`.
pub fn stream_seed(seed: u64, frame_index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(frame_index as u64 ^ 0xF4A3_E1D0_0000_0000))
}

pub fn noise_stream(seed: u64, frame_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, frame_index))
}

/// Overlap weights of input pixels covering each output pixel along one axis,
/// in units where every output footprint has total weight `src`.
fn area_weights(src: u32, dst: u32) -> Vec<Vec<(usize, u64)>> {
    let (src, dst) = (src as u64, dst as u64);
    (0..dst)
        .map(|j| {
            let (lo, hi) = (j * src, (j + 1) * src);
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) * dst) - lo.max(i * dst);
                    (overlap > 0).then_some((i as usize, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted resampling with exact rational weights: each output pixel
/// averages the input pixels under its footprint, weighted by overlap area.
pub fn area_resize(frame: &Frame, width: u32, height: u32) -> Frame {
    assert!(width >= 1 && height >= 1, "area_resize target must be at least 1x1");
    let (sw, sh) = frame.dimensions();
    if (sw, sh) == (width, height) {
        return frame.clone();
    }
    let wx = area_weights(sw, width);
    let wy = area_weights(sh, height);
    let src = frame.as_raw();
    let (sw_us, w_us) = (sw as usize, width as usize);

    let mut rows = vec![0u64; sh as usize * w_us * 3];
    for y in 0..sh as usize {
        let line = &src[y * sw_us * 3..(y + 1) * sw_us * 3];
        for (j, weights) in wx.iter().enumerate() {
            let out = &mut rows[(y * w_us + j) * 3..(y * w_us + j) * 3 + 3];
            for &(i, w) in weights {
                for c in 0..3 {
                    out[c] += line[i * 3 + c] as u64 * w;
                }
            }
        }
    }

    let denom = sw as u64 * sh as u64;
    let mut out = Frame::new(width, height);
    for (k, weights) in wy.iter().enumerate() {
        for j in 0..w_us {
            let mut acc = [0u64; 3];
            for &(y, w) in weights {
                let cell = &rows[(y * w_us + j) * 3..(y * w_us + j) * 3 + 3];
                for c in 0..3 {
                    acc[c] += cell[c] * w;
                }
            }
            let px = acc.map(|a| ((2 * a + denom) / (2 * denom)) as u8);
            out.put_pixel(j as u32, k as u32, Rgb(px));
        }
    }
    out
}

/// Normalized sampled Gaussian with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Reflect-101 index into `0..n` (`-1 -> 1`, `n -> n - 2`).
fn reflect101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Separable Gaussian blur, reflect-101 borders, rounded half up.
pub fn gaussian_blur(frame: &Frame, sigma: f64) -> Frame {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let src = frame.as_raw();

    let mut tmp = vec![0.0f64; (w * h * 3) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, kv) in k.iter().enumerate() {
                let sx = reflect101(x + t as i64 - r, w);
                let base = ((y * w) as usize + sx) * 3;
                for c in 0..3 {
                    acc[c] += kv * src[base + c] as f64;
                }
            }
            let o = ((y * w + x) * 3) as usize;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }

    let mut out = Frame::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, kv) in k.iter().enumerate() {
                let sy = reflect101(y + t as i64 - r, h);
                let base = (sy * w as usize + x as usize) * 3;
                for c in 0..3 {
                    acc[c] += kv * tmp[base + c];
                }
            }
            out.put_pixel(x as u32, y as u32, Rgb(acc.map(round_u8)));
        }
    }
    out
}

/// Adds i.i.d. `N(0, sigma^2)` to every sample, clamps and rounds half up.
pub fn add_noise(frame: &Frame, sigma: f64, rng: &mut impl Rng) -> Frame {
    if sigma == 0.0 {
        return frame.clone();
    }
    let mut out = frame.clone();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = round_u8(*v as f64 + sigma * z);
    }
    out
}

/// Baseline JFIF encoding with 4:2:0 chroma and the standard scaled tables.
pub fn jpeg_encode(frame: &Frame, quality: u8) -> Result<Vec<u8>> {
    let (w, h) = frame.dimensions();
    if w > u16::MAX as u32 || h > u16::MAX as u32 {
        return Err(Error::Encode(format!("{w}x{h} exceeds the JPEG size limit")));
    }
    let mut bytes = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut bytes, quality.clamp(1, 100));
    encoder.set_sampling_factor(jpeg_encoder::SamplingFactor::R_4_2_0);
    encoder
        .encode(frame.as_raw(), w as u16, h as u16, jpeg_encoder::ColorType::Rgb)
        .map_err(|e| Error::Encode(format!("jpeg: {e}")))?;
    Ok(bytes)
}

pub fn jpeg_roundtrip(frame: &Frame, quality: u8) -> Result<Frame> {
    let bytes = jpeg_encode(frame, quality)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Decode(format!("jpeg: {e}")))?;
    Ok(decoded.to_rgb8())
}

/// Runs the stage chain of one recipe at the current resolution (no `Up`).
fn apply_down(frame: Frame, recipe: &DegradationRecipe, frame_index: usize) -> Result<Frame> {
    let mut cur = frame;
    if recipe.has(Stage::Blur) {
        cur = gaussian_blur(&cur, recipe.blur_sigma);
    }
    if recipe.has(Stage::ResizeDown) {
        cur = area_resize(&cur, recipe.target_w, recipe.target_h);
    }
    if recipe.has(Stage::Noise) {
        cur = add_noise(&cur, recipe.noise_sigma, &mut noise_stream(recipe.seed, frame_index));
    }
    if recipe.has(Stage::Jpeg) {
        cur = jpeg_roundtrip(&cur, recipe.jpeg_quality)?;
    }
    Ok(cur)
}

/// `Up(Down(frame))` for a chain of one or more recipe passes.
pub fn degrade_frame(frame: &Frame, passes: &[DegradationRecipe], frame_index: usize) -> Result<Frame> {
    let (w, h) = frame.dimensions();
    let mut cur = frame.clone();
    for recipe in passes {
        cur = apply_down(cur, recipe, frame_index)?;
    }
    Ok(match passes.first().map(|r| r.up_method).unwrap_or_default() {
        UpMethod::AreaInterp => area_resize(&cur, w, h),
    })
}

pub fn degrade_video(video: &Video, recipe: &DegradationRecipe) -> Result<Video> {
    degrade_video_passes(video, std::slice::from_ref(recipe))
}

/// Applies the passes to every frame with identical parameters. Output size
/// equals input size.
pub fn degrade_video_passes(video: &Video, passes: &[DegradationRecipe]) -> Result<Video> {
    for r in passes {
        r.validate(video.width(), video.height())?;
    }
    let frames = parallel_frames(video, |i, f| degrade_frame(f, passes, i))?;
    Video::new(frames)
}

/// Deliberately temporally-inconsistent degradation: every frame draws its
/// own recipe. Used as the negative control for temporal-consistency checks.
pub fn degrade_video_resampled(video: &Video, seed: u64, ranges: &RecipeRanges) -> Result<Video> {
    let frames = parallel_frames(video, |i, f| {
        let recipe = sample_recipe(stream_seed(seed, i), ranges)?;
        recipe.validate(video.width(), video.height())?;
        degrade_frame(f, std::slice::from_ref(&recipe), i)
    })?;
    Video::new(frames)
}

fn parallel_frames(video: &Video, f: impl Fn(usize, &Frame) -> Result<Frame> + Sync) -> Result<Vec<Frame>> {
    use rayon::prelude::*;
    video
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, fr)| f(i, fr))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::texture_noise;

    fn texture(seed: u64, w: u32, h: u32, cell: f64) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let px = |c: u64| (255.0 * texture_noise(seed + c, x as f64 / cell, y as f64 / cell)) as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    fn gray(w: u32, h: u32, v: u8) -> Frame {
        Frame::from_pixel(w, h, Rgb([v; 3]))
    }

    #[test]
    fn recipe_is_deterministic() {
        let ranges = RecipeRanges::new(64, 32);
        assert_eq!(sample_recipe(9, &ranges).unwrap(), sample_recipe(9, &ranges).unwrap());
    }

    #[test]
    fn degenerate_range_is_exact() {
        let ranges = RecipeRanges {
            blur_sigma: (1.3, 1.3),
            noise_sigma: (4.0, 4.0),
            jpeg_quality: (77, 77),
            ..RecipeRanges::new(8, 8)
        };
        let r = sample_recipe(1, &ranges).unwrap();
        assert_eq!(r.blur_sigma, 1.3);
        assert_eq!(r.noise_sigma, 4.0);
        assert_eq!(r.jpeg_quality, 77);
    }

    #[test]
    fn out_of_bounds_range_is_rejected() {
        let ranges = RecipeRanges {
            blur_sigma: (0.1, 2.0),
            ..RecipeRanges::new(8, 8)
        };
        assert!(matches!(sample_recipe(0, &ranges), Err(Error::InvalidRange(_))));
        let ranges = RecipeRanges {
            jpeg_quality: (20, 90),
            ..RecipeRanges::new(8, 8)
        };
        assert!(matches!(sample_recipe(0, &ranges), Err(Error::InvalidRange(_))));
    }

    #[test]
    fn jpeg_quality_is_uniform() {
        let ranges = RecipeRanges::new(8, 8);
        let mut counts = [0u32; 66];
        for seed in 0..1000 {
            let q = sample_recipe(seed, &ranges).unwrap().jpeg_quality;
            counts[(q - 30) as usize] += 1;
        }
        let expected = 1000.0 / 66.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square 0.99 quantile, 65 degrees of freedom
        assert!(chi2 < 94.422, "chi2 = {chi2}");
    }

    #[test]
    fn area_resize_block_mean() {
        let f = Frame::from_fn(2, 2, |x, y| Rgb([(10 + 10 * x + 20 * y) as u8; 3]));
        assert_eq!(area_resize(&f, 1, 1).get_pixel(0, 0).0, [25; 3]);
    }

    #[test]
    fn area_resize_three_to_two() {
        let f = Frame::from_fn(3, 1, |x, _| Rgb([(90 * x) as u8; 3]));
        let out = area_resize(&f, 2, 1);
        assert_eq!(out.get_pixel(0, 0).0[0], 30);
        assert_eq!(out.get_pixel(1, 0).0[0], 150);
    }

    #[test]
    fn area_resize_same_size_is_identity() {
        let f = texture(1, 17, 9, 3.0);
        assert_eq!(area_resize(&f, 17, 9), f);
    }

    #[test]
    fn kernel_center_weight() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        let sum: f64 = (-3i32..=3).map(|i| 0.3989 * (-(i * i) as f64 / 2.0).exp()).sum();
        assert!((k[3] - 0.3989 / sum).abs() < 1e-6);
    }

    #[test]
    fn impulse_response_matches_kernel() {
        let mut f = gray(15, 15, 0);
        f.put_pixel(7, 7, Rgb([255; 3]));
        let out = gaussian_blur(&f, 1.0);
        let k = gaussian_kernel(1.0);
        for dx in -3i32..=3 {
            let expected = 255.0 * k[(dx + 3) as usize] * k[3];
            let got = out.get_pixel((7 + dx) as u32, 7).0[0] as f64;
            assert!((got - expected).abs() <= 0.5 + 1e-9, "dx={dx}: {got} vs {expected}");
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let f = gray(20, 13, 133);
        assert_eq!(gaussian_blur(&f, 2.3), f);
        // radius far larger than the frame
        let tiny = gray(2, 1, 77);
        assert_eq!(gaussian_blur(&tiny, 3.0), tiny);
    }

    #[test]
    fn blur_semigroup() {
        let f = texture(4, 96, 64, 4.0);
        let (a, b) = (1.0, 1.5);
        let twice = gaussian_blur(&gaussian_blur(&f, a), b);
        let once = gaussian_blur(&f, (a * a + b * b).sqrt());
        let max = twice
            .iter()
            .zip(once.iter())
            .map(|(p, q)| (*p as i32 - *q as i32).abs())
            .max()
            .unwrap();
        assert!(max <= 2, "max diff {max}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let f = texture(5, 16, 16, 3.0);
        assert_eq!(add_noise(&f, 0.0, &mut noise_stream(1, 0)), f);
    }

    #[test]
    fn noise_sigma_is_honoured() {
        let f = gray(256, 256, 128);
        let out = add_noise(&f, 10.0, &mut noise_stream(3, 0));
        let n = out.as_raw().len() as f64;
        let mean = out.iter().map(|&v| v as f64 - 128.0).sum::<f64>() / n;
        let var = out.iter().map(|&v| (v as f64 - 128.0 - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        assert!((9.5..=10.5).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn noise_stream_is_deterministic_and_per_frame() {
        let f = gray(32, 32, 100);
        let a = add_noise(&f, 5.0, &mut noise_stream(42, 3));
        let b = add_noise(&f, 5.0, &mut noise_stream(42, 3));
        let c = add_noise(&f, 5.0, &mut noise_stream(42, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn jpeg_is_baseline_420() {
        let bytes = jpeg_encode(&texture(6, 32, 32, 4.0), 75).unwrap();
        let sof = bytes.windows(2).position(|w| w == [0xFF, 0xC0]).expect("baseline SOF0");
        // SOF0: marker, length(2), precision, height(2), width(2), ncomp, then per component id, sampling, table
        let ncomp = bytes[sof + 9];
        assert_eq!(ncomp, 3);
        let sampling: Vec<u8> = (0..3).map(|c| bytes[sof + 10 + 3 * c + 1]).collect();
        assert_eq!(sampling, vec![0x22, 0x11, 0x11]);
    }

    #[test]
    fn jpeg_high_quality_gradient() {
        let f = Frame::from_fn(64, 64, |x, y| Rgb([(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8]));
        let out = jpeg_roundtrip(&f, 100).unwrap();
        let db = crate::metrics::psnr_frame(&f, &out, None).unwrap();
        assert!(db >= 45.0, "{db} dB");
    }

    #[test]
    fn jpeg_constant_gray_stays_flat() {
        // every quality keeps a flat frame flat; only the DC level can shift
        for q in (1..=100u8).step_by(3) {
            for g in [0u8, 17, 117, 128, 200, 255] {
                let out = jpeg_roundtrip(&gray(48, 40, g), q).unwrap();
                let first = out.get_pixel(0, 0).0;
                assert!(out.pixels().all(|p| p.0 == first), "q{q} gray {g}");
            }
        }
    }

    #[test]
    fn jpeg_constant_gray_psnr() {
        // a DC quantizer step of 8 or less is exact; that holds from quality 74 up
        for q in 74..=100u8 {
            for g in 0..=255u8 {
                let f = gray(16, 16, g);
                let db = crate::metrics::psnr_frame(&f, &jpeg_roundtrip(&f, q).unwrap(), None).unwrap();
                assert!(db >= 50.0, "q{q} gray {g}: {db} dB");
            }
        }
        let f = gray(16, 16, 117);
        let low = crate::metrics::psnr_frame(&f, &jpeg_roundtrip(&f, 1).unwrap(), None).unwrap();
        assert!(low < 50.0);
    }

    #[test]
    fn jpeg_recompression_changes_less() {
        let f = texture(7, 96, 64, 3.0);
        let once = jpeg_roundtrip(&f, 30).unwrap();
        let twice = jpeg_roundtrip(&once, 30).unwrap();
        let changed = |a: &Frame, b: &Frame| a.pixels().zip(b.pixels()).filter(|(p, q)| p != q).count();
        assert!(changed(&once, &twice) < changed(&f, &once));
    }

    fn clip(frames: usize, w: u32, h: u32) -> Video {
        Video::new((0..frames).map(|i| texture(i as u64, w, h, 5.0)).collect()).unwrap()
    }

    #[test]
    fn empty_recipe_same_size_is_identity() {
        let v = clip(3, 32, 16);
        let recipe = DegradationRecipe {
            seed: 1,
            blur_sigma: 1.0,
            target_w: 32,
            target_h: 16,
            noise_sigma: 5.0,
            jpeg_quality: 50,
            stages: vec![],
            up_method: UpMethod::AreaInterp,
        };
        assert_eq!(degrade_video(&v, &recipe).unwrap(), v);
    }

    #[test]
    fn degrade_keeps_dims() {
        let v = clip(2, 64, 32);
        let recipe = sample_recipe(3, &RecipeRanges::new(16, 8)).unwrap();
        let out = degrade_video(&v, &recipe).unwrap();
        assert_eq!((out.len(), out.width(), out.height()), (2, 64, 32));
        assert_ne!(out, v);
    }

    #[test]
    fn invalid_recipe_is_rejected() {
        let v = clip(1, 16, 16);
        let mut recipe = sample_recipe(3, &RecipeRanges::new(32, 8)).unwrap();
        assert!(matches!(degrade_video(&v, &recipe), Err(Error::InvalidRecipe(_))));
        recipe.target_w = 8;
        recipe.stages = vec![Stage::Jpeg, Stage::Blur];
        assert!(matches!(degrade_video(&v, &recipe), Err(Error::InvalidRecipe(_))));
    }

    #[test]
    fn second_order_differs_from_single_pass() {
        let v = clip(2, 32, 32);
        let ranges = RecipeRanges::new(16, 16);
        let first = sample_recipe(5, &ranges).unwrap();
        let second = sample_recipe(second_pass_seed(5), &ranges).unwrap();
        let single = degrade_video(&v, &first).unwrap();
        let double = degrade_video_passes(&v, &[first, second]).unwrap();
        assert_ne!(single, double);
        assert_eq!(double.dims(), v.dims());
    }

    use crate::tensorio::SequenceDims;
}
