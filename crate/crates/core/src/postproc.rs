//! Histogram matching and stereo packing.

use std::fmt;
use std::str::FromStr;

use image::{GenericImage, GenericImageView, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ensure_same_dims, Frame, Video};

/// Cumulative 256-bin counts of one channel.
fn cumulative_counts(frame: &Frame, channel: usize) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in frame.pixels() {
        hist[p.0[channel] as usize] += 1;
    }
    let mut acc = 0;
    for h in hist.iter_mut() {
        acc += *h;
        *h = acc;
    }
    hist
}

/// Lookup table mapping each source value `v` to the smallest reference
/// value `u` with `F_ref(u) >= F_src(v)`. Comparisons are exact integer
/// cross-multiplications of the two empirical CDFs.
pub fn matching_lut(src: &Frame, reference: &Frame, channel: usize) -> [u8; 256] {
    let cs = cumulative_counts(src, channel);
    let cr = cumulative_counts(reference, channel);
    let (ns, nr) = (cs[255], cr[255]);
    let mut lut = [0u8; 256];
    let mut u = 0usize;
    for v in 0..256 {
        // F_ref(u) >= F_src(v)  <=>  cr[u] * ns >= cs[v] * nr
        while u < 255 && cr[u] * ns < cs[v] * nr {
            u += 1;
        }
        lut[v] = u as u8;
    }
    lut
}

pub fn match_histograms_frame(src: &Frame, reference: &Frame) -> Frame {
    let luts = [0, 1, 2].map(|c| matching_lut(src, reference, c));
    let mut out = src.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p.0[c] = luts[c][p.0[c] as usize];
        }
    }
    out
}

/// Per-frame, per-channel histogram matching of `src` to `reference`.
/// Frame sizes may differ; frame counts may not.
pub fn match_histograms(src: &Video, reference: &Video) -> Result<Video> {
    if src.len() != reference.len() {
        return Err(Error::FrameCountMismatch {
            expected: src.len(),
            found: reference.len(),
        });
    }
    src.map_frames(|i, f| match_histograms_frame(f, reference.frame(i)))
}

/// Kolmogorov-Smirnov distance between the per-channel value distributions
/// of two frames.
pub fn ks_distance(a: &Frame, b: &Frame, channel: usize) -> f64 {
    let ca = cumulative_counts(a, channel);
    let cb = cumulative_counts(b, channel);
    let (na, nb) = (ca[255] as f64, cb[255] as f64);
    (0..256)
        .map(|v| (ca[v] as f64 / na - cb[v] as f64 / nb).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PackMode {
    Sbs,
    Tb,
    Anaglyph,
}

impl FromStr for PackMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sbs" => Ok(PackMode::Sbs),
            "tb" => Ok(PackMode::Tb),
            "anaglyph" => Ok(PackMode::Anaglyph),
            other => Err(format!("unknown pack mode {other:?}; use sbs, tb, anaglyph")),
        }
    }
}

impl fmt::Display for PackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PackMode::Sbs => "sbs",
            PackMode::Tb => "tb",
            PackMode::Anaglyph => "anaglyph",
        })
    }
}

pub fn pack_frame(left: &Frame, right: &Frame, mode: PackMode) -> Result<Frame> {
    if left.dimensions() != right.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "left {:?} vs right {:?}",
            left.dimensions(),
            right.dimensions()
        )));
    }
    let (w, h) = left.dimensions();
    Ok(match mode {
        PackMode::Sbs => {
            let mut out = Frame::new(2 * w, h);
            out.copy_from(left, 0, 0).expect("fits");
            out.copy_from(right, w, 0).expect("fits");
            out
        }
        PackMode::Tb => {
            let mut out = Frame::new(w, 2 * h);
            out.copy_from(left, 0, 0).expect("fits");
            out.copy_from(right, 0, h).expect("fits");
            out
        }
        PackMode::Anaglyph => Frame::from_fn(w, h, |x, y| {
            let l = left.get_pixel(x, y).0;
            let r = right.get_pixel(x, y).0;
            Rgb([l[0], r[1], r[2]])
        }),
    })
}

pub fn pack(left: &Video, right: &Video, mode: PackMode) -> Result<Video> {
    ensure_same_dims("pack", left, right)?;
    let frames = (0..left.len())
        .into_par_iter()
        .map(|i| pack_frame(left.frame(i), right.frame(i), mode))
        .collect::<Result<Vec<_>>>()?;
    Video::new(frames)
}

/// Splits a side-by-side or top-bottom frame back into its two views.
pub fn unpack_frame(packed: &Frame, mode: PackMode) -> Result<(Frame, Frame)> {
    let (w, h) = packed.dimensions();
    match mode {
        PackMode::Sbs if w % 2 == 0 => Ok((
            packed.view(0, 0, w / 2, h).to_image(),
            packed.view(w / 2, 0, w / 2, h).to_image(),
        )),
        PackMode::Tb if h % 2 == 0 => Ok((
            packed.view(0, 0, w, h / 2).to_image(),
            packed.view(0, h / 2, w, h / 2).to_image(),
        )),
        PackMode::Anaglyph => Err(Error::InvalidConfig("anaglyph packing is lossy".into())),
        _ => Err(Error::DimensionMismatch(format!("{w}x{h} cannot be split for {mode}"))),
    }
}
