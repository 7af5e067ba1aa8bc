//! Array types shared by every stage and their on-disk formats.
//!
//! A sequence lives in a directory: one file per frame named by the
//! manifest's `frame_pattern` plus a `manifest.json`. Colour frames are 8-bit
//! RGB PNG, masks 8-bit grayscale PNG (255 = hole), depth either PFM or 16-bit
//! PNG with an explicit scale.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ImageBuffer, ImageEncoder, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Frame = image::RgbImage;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: &str = "stereoforge/1";
pub const DEFAULT_FRAME_PATTERN: &str = "frame_%05d.png";
pub const DEFAULT_DEPTH_PATTERN: &str = "frame_%05d.pfm";
pub const MIN_SIDE: u32 = 8;

/// Dense row-major single-channel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "plane {width}x{height} needs {} samples, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn row(&self, y: u32) -> &[T] {
        let w = self.width as usize;
        &self.data[y as usize * w..(y as usize + 1) * w]
    }

    pub fn row_mut(&mut self, y: u32) -> &mut [T] {
        let w = self.width as usize;
        &mut self.data[y as usize * w..(y as usize + 1) * w]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// `(frames, width, height)` of any sequence type.
pub trait SequenceDims {
    fn dims(&self) -> (usize, u32, u32);
}

/// Fails unless both sequences have the same frame count and frame size.
pub fn ensure_same_dims(
    what: &str,
    a: &impl SequenceDims,
    b: &impl SequenceDims,
) -> Result<()> {
    let (da, db) = (a.dims(), b.dims());
    if da != db {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{}x{} vs {}x{}x{} (frames x width x height)",
            da.0, da.1, da.2, db.0, db.1, db.2
        )));
    }
    Ok(())
}

fn check_frame_dims(frames: impl Iterator<Item = (u32, u32)>) -> Result<(usize, u32, u32)> {
    let mut count = 0;
    let mut size = None;
    for (i, (w, h)) in frames.enumerate() {
        count += 1;
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} is {w}x{h}, frame 0 is {}x{}",
                    s.0, s.1
                )))
            }
            _ => {}
        }
    }
    let (w, h) = size.ok_or(Error::FrameCountMismatch {
        expected: 1,
        found: 0,
    })?;
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::DimensionMismatch(format!(
            "frames are {w}x{h}, minimum is {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    Ok((count, w, h))
}

/// F x H x W x 3 stack of 8-bit sRGB frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    frames: Vec<Frame>,
}

impl Video {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        check_frame_dims(frames.iter().map(|f| f.dimensions()))?;
        Ok(Video { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }

    /// Applies `f` to every frame in parallel, keeping frame order.
    pub fn map_frames(&self, f: impl Fn(usize, &Frame) -> Frame + Sync) -> Result<Video> {
        let frames = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(i, fr)| f(i, fr))
            .collect();
        Video::new(frames)
    }
}

impl SequenceDims for Video {
    fn dims(&self) -> (usize, u32, u32) {
        (self.len(), self.width(), self.height())
    }
}

/// Per-pixel depth, strictly positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSequence {
    frames: Vec<Plane<f32>>,
}

impl DepthSequence {
    pub fn new(frames: Vec<Plane<f32>>) -> Result<Self> {
        check_frame_dims(frames.iter().map(|p| (p.width(), p.height())))?;
        for (i, plane) in frames.iter().enumerate() {
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
        Ok(DepthSequence { frames })
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

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }
}

impl SequenceDims for DepthSequence {
    fn dims(&self) -> (usize, u32, u32) {
        (self.len(), self.width(), self.height())
    }
}

/// Binary hole mask: 1 = no source pixel landed here, inpaint it.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    frames: Vec<Plane<u8>>,
}

impl OcclusionMask {
    pub fn new(frames: Vec<Plane<u8>>) -> Result<Self> {
        check_frame_dims(frames.iter().map(|p| (p.width(), p.height())))?;
        if frames.iter().any(|p| p.as_slice().iter().any(|&b| b > 1)) {
            return Err(Error::Decode("mask values must be 0 or 1".into()));
        }
        Ok(OcclusionMask { frames })
    }

    /// The all-zero mask that marks the left-to-left branch.
    pub fn zeros(frames: usize, width: u32, height: u32) -> Self {
        OcclusionMask {
            frames: vec![Plane::filled(width, height, 0); frames],
        }
    }

    pub fn frames(&self) -> &[Plane<u8>] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> &Plane<u8> {
        &self.frames[index]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }

    pub fn is_all_zero(&self) -> bool {
        self.frames.iter().all(|p| p.as_slice().iter().all(|&b| b == 0))
    }

    pub fn count_set(&self) -> usize {
        self.frames
            .iter()
            .map(|p| p.as_slice().iter().filter(|&&b| b != 0).count())
            .sum()
    }
}

impl SequenceDims for OcclusionMask {
    fn dims(&self) -> (usize, u32, u32) {
        (self.len(), self.width(), self.height())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthEncoding {
    Pfm,
    Png16,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub frame_pattern: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_encoding: Option<DepthEncoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_scale: Option<f64>,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(frame_pattern: &str, frame_count: usize, width: u32, height: u32) -> Self {
        Manifest {
            version: MANIFEST_VERSION.to_string(),
            frame_pattern: frame_pattern.to_string(),
            frame_count,
            width,
            height,
            depth_encoding: None,
            depth_scale: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::MissingManifest(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn frame_path(&self, dir: &Path, index: usize) -> Result<PathBuf> {
        Ok(dir.join(format_frame_name(&self.frame_pattern, index)?))
    }

    fn check_count(&self, dir: &Path) -> Result<()> {
        let found = (0..)
            .take_while(|&i| {
                self.frame_path(dir, i)
                    .map(|p| p.is_file())
                    .unwrap_or(false)
            })
            .count();
        if found != self.frame_count {
            return Err(Error::FrameCountMismatch {
                expected: self.frame_count,
                found,
            });
        }
        Ok(())
    }
}

/// Expands a printf-style `%d` / `%0Nd` frame pattern.
pub fn format_frame_name(pattern: &str, index: usize) -> Result<String> {
    let bad = || Error::InvalidConfig(format!("unsupported frame pattern {pattern:?}"));
    let start = pattern.find('%').ok_or_else(bad)?;
    let rest = &pattern[start + 1..];
    let end = rest.find('d').ok_or_else(bad)?;
    let spec = &rest[..end];
    let width = if spec.is_empty() {
        0
    } else if spec.starts_with('0') && spec[1..].chars().all(|c| c.is_ascii_digit()) {
        spec[1..].parse::<usize>().map_err(|_| bad())?
    } else {
        return Err(bad());
    };
    Ok(format!(
        "{}{:0width$}{}",
        &pattern[..start],
        index,
        &rest[end + 1..],
        width = width
    ))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_png(path: &Path, data: &[u8], width: u32, height: u32, color: image::ExtendedColorType) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    PngEncoder::new_with_quality(&mut writer, CompressionType::Fast, FilterType::Adaptive)
        .write_image(data, width, height, color)
        .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_image(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

pub fn read_rgb_png(path: &Path) -> Result<Frame> {
    match read_image(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(Error::Decode(format!(
            "{}: expected 8-bit RGB, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn write_rgb_png(path: &Path, frame: &Frame) -> Result<()> {
    write_png(
        path,
        frame.as_raw(),
        frame.width(),
        frame.height(),
        image::ExtendedColorType::Rgb8,
    )
}

/// Loads `count` frames named by `pattern` without consulting a manifest.
///
/// This is how backend output directories are read: the external backend
/// contract only promises `frame_%05d.png` files.
pub fn load_frames(dir: &Path, pattern: &str, count: usize) -> Result<Vec<Frame>> {
    let names = (0..count)
        .map(|i| format_frame_name(pattern, i).map(|n| dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    names.par_iter().map(|p| read_rgb_png(p)).collect()
}

pub fn load_video(dir: &Path) -> Result<Video> {
    let manifest = Manifest::read(dir)?;
    manifest.check_count(dir)?;
    let frames = load_frames(dir, &manifest.frame_pattern, manifest.frame_count)?;
    let video = Video::new(frames)?;
    if (video.width(), video.height()) != (manifest.width, manifest.height) {
        return Err(Error::DimensionMismatch(format!(
            "manifest says {}x{}, frames are {}x{}",
            manifest.width,
            manifest.height,
            video.width(),
            video.height()
        )));
    }
    Ok(video)
}

pub fn save_video(video: &Video, dir: &Path) -> Result<()> {
    save_video_with(video, dir, BTreeMap::new())
}

pub fn save_video_with(video: &Video, dir: &Path, extras: BTreeMap<String, String>) -> Result<()> {
    create_dir(dir)?;
    let mut manifest = Manifest::new(DEFAULT_FRAME_PATTERN, video.len(), video.width(), video.height());
    manifest.extras = extras;
    video
        .frames()
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_rgb_png(&manifest.frame_path(dir, i)?, f))?;
    manifest.write(dir)
}

pub fn load_mask(dir: &Path) -> Result<OcclusionMask> {
    let manifest = Manifest::read(dir)?;
    manifest.check_count(dir)?;
    let frames = (0..manifest.frame_count)
        .into_par_iter()
        .map(|i| {
            let path = manifest.frame_path(dir, i)?;
            let img = match read_image(&path)? {
                DynamicImage::ImageLuma8(img) => img,
                other => {
                    return Err(Error::Decode(format!(
                        "{}: mask must be 8-bit grayscale, got {:?}",
                        path.display(),
                        other.color()
                    )))
                }
            };
            let bits = img
                .as_raw()
                .iter()
                .map(|&v| match v {
                    0 => Ok(0u8),
                    255 => Ok(1u8),
                    v => Err(Error::Decode(format!(
                        "{}: mask value {v} is neither 0 nor 255",
                        path.display()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            Plane::from_vec(img.width(), img.height(), bits)
        })
        .collect::<Result<Vec<_>>>()?;
    OcclusionMask::new(frames)
}

pub fn save_mask(mask: &OcclusionMask, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let manifest = Manifest::new(DEFAULT_FRAME_PATTERN, mask.len(), mask.width(), mask.height());
    mask.frames().par_iter().enumerate().try_for_each(|(i, p)| {
        let bytes: Vec<u8> = p.as_slice().iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
        write_png(
            &manifest.frame_path(dir, i)?,
            &bytes,
            p.width(),
            p.height(),
            image::ExtendedColorType::L8,
        )
    })?;
    manifest.write(dir)
}

pub fn load_depth(dir: &Path) -> Result<DepthSequence> {
    let manifest = Manifest::read(dir)?;
    manifest.check_count(dir)?;
    let encoding = manifest
        .depth_encoding
        .ok_or_else(|| Error::Decode(format!("{}: manifest has no depth_encoding", dir.display())))?;
    let scale = match encoding {
        DepthEncoding::Png16 => {
            let s = manifest.depth_scale.unwrap_or(0.0);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Decode(format!(
                    "{}: png16 depth needs depth_scale > 0",
                    dir.display()
                )));
            }
            s
        }
        DepthEncoding::Pfm => 1.0,
    };
    let planes = (0..manifest.frame_count)
        .into_par_iter()
        .map(|i| {
            let path = manifest.frame_path(dir, i)?;
            match encoding {
                DepthEncoding::Pfm => {
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    decode_pfm(&bytes).map_err(|e| match e {
                        Error::Decode(m) => Error::Decode(format!("{}: {m}", path.display())),
                        e => e,
                    })
                }
                DepthEncoding::Png16 => {
                    let img = match read_image(&path)? {
                        DynamicImage::ImageLuma16(img) => img,
                        other => {
                            return Err(Error::Decode(format!(
                                "{}: png16 depth must be 16-bit grayscale, got {:?}",
                                path.display(),
                                other.color()
                            )))
                        }
                    };
                    let data = img
                        .as_raw()
                        .iter()
                        .map(|&code| (code as f64 * scale) as f32)
                        .collect();
                    Plane::from_vec(img.width(), img.height(), data)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let depth = DepthSequence::new(planes)?;
    if (depth.width(), depth.height()) != (manifest.width, manifest.height) {
        return Err(Error::DimensionMismatch(format!(
            "manifest says {}x{}, depth frames are {}x{}",
            manifest.width,
            manifest.height,
            depth.width(),
            depth.height()
        )));
    }
    Ok(depth)
}

/// Writes depth as PFM (bit-exact) or 16-bit PNG with `code = round(z / scale)`.
pub fn save_depth(depth: &DepthSequence, dir: &Path, encoding: DepthEncoding, png16_scale: f64) -> Result<()> {
    create_dir(dir)?;
    let pattern = match encoding {
        DepthEncoding::Pfm => DEFAULT_DEPTH_PATTERN,
        DepthEncoding::Png16 => {
            if !(png16_scale > 0.0 && png16_scale.is_finite()) {
                return Err(Error::InvalidConfig("png16 depth_scale must be > 0".into()));
            }
            DEFAULT_FRAME_PATTERN
        }
    };
    let mut manifest = Manifest::new(pattern, depth.len(), depth.width(), depth.height());
    manifest.depth_encoding = Some(encoding);
    if encoding == DepthEncoding::Png16 {
        manifest.depth_scale = Some(png16_scale);
    }
    depth.frames().par_iter().enumerate().try_for_each(|(i, plane)| {
        let path = manifest.frame_path(dir, i)?;
        match encoding {
            DepthEncoding::Pfm => {
                fs::write(&path, encode_pfm(plane)).map_err(|e| Error::io(&path, e))
            }
            DepthEncoding::Png16 => {
                let codes = plane
                    .as_slice()
                    .iter()
                    .map(|&z| {
                        let code = (z as f64 / png16_scale).round();
                        if (1.0..=65535.0).contains(&code) {
                            Ok(code as u16)
                        } else {
                            Err(Error::Encode(format!(
                                "depth {z} does not fit png16 at scale {png16_scale}"
                            )))
                        }
                    })
                    .collect::<Result<Vec<u16>>>()?;
                let img: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::from_raw(plane.width(), plane.height(), codes)
                        .expect("buffer sized from plane");
                let bytes: Vec<u8> = img.as_raw().iter().flat_map(|v| v.to_ne_bytes()).collect();
                write_png(&path, &bytes, plane.width(), plane.height(), image::ExtendedColorType::L16)
            }
        }
    })?;
    manifest.write(dir)
}

/// Single-channel PFM, little-endian, rows stored bottom-to-top.
pub fn encode_pfm(plane: &Plane<f32>) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", plane.width(), plane.height()).into_bytes();
    out.reserve(plane.as_slice().len() * 4);
    for y in (0..plane.height()).rev() {
        for &v in plane.row(y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a single-channel PFM. The sign of the scale field picks the byte
/// order; samples are multiplied by its magnitude.
pub fn decode_pfm(bytes: &[u8]) -> Result<Plane<f32>> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Decode("truncated PFM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(Error::Decode(format!("expected single-channel PFM (Pf), got {magic:?}")));
    }
    let parse_dim = |t: String| {
        t.parse::<u32>()
            .map_err(|_| Error::Decode(format!("bad PFM dimension {t:?}")))
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale_tok = token()?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::Decode(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Decode("PFM scale must be non-zero".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width as usize * height as usize;
    let raster = bytes
        .get(pos..pos + n * 4)
        .ok_or_else(|| Error::Decode("truncated PFM raster".into()))?;
    let little = scale < 0.0;
    let mag = scale.abs();
    let mut data = vec![0f32; n];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, x) = (k / width as usize, k % width as usize);
        let y = height as usize - 1 - file_row;
        data[y * width as usize + x] = if mag == 1.0 { v } else { v * mag };
    }
    Plane::from_vec(width, height, data)
}
