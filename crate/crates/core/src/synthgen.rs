//! Deterministic software renderer for synthetic stereo clips.
//!
//! The rig is rectified: the left camera sits at the origin looking down +z
//! and the right camera is displaced by `baseline_m` along +x, so every scene
//! point lands on the same row in both views and its disparity is
//! `focal_px * baseline_m / z`. Scenes are fronto-parallel textured squares
//! in front of a textured background plane, rasterized with one sample per
//! pixel centre and a per-pixel z-buffer.

use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splitmix64;
use crate::tensorio::{DepthSequence, Frame, Plane, Video};

pub const BASELINE_MEAN_M: f64 = 0.065;
pub const BASELINE_STD_M: f64 = 0.001;
pub const BASELINE_CLAMP_M: (f64, f64) = (0.060, 0.070);
pub const MIN_VISIBLE_Z: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraRig {
    /// Rig with the default focal length of `width / 2` pixels.
    pub fn new(width: u32, height: u32, baseline_m: f64) -> Self {
        CameraRig {
            focal_px: width as f64 / 2.0,
            baseline_m,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::InvalidConfig("focal_px must be > 0".into()));
        }
        if !(self.baseline_m > 0.0 && self.baseline_m.is_finite()) {
            return Err(Error::InvalidConfig("baseline_m must be > 0".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidConfig("rig must be at least 8x8 px".into()));
        }
        Ok(())
    }

    /// Pinhole disparity in pixels of a point at depth `z`.
    pub fn disparity_at(&self, z: f64) -> f64 {
        self.focal_px * self.baseline_m / z
    }
}

/// Band-limited colour texture: two octaves of value noise per channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Lattice spacing of the coarse octave, in metres on the surface.
    pub cell_m: f64,
    pub base: [f32; 3],
    pub amplitude: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    /// Centre at frame 0, metres, left-camera coordinates.
    pub center: [f64; 3],
    pub half_extent: f64,
    /// Displacement per frame, metres.
    pub velocity: [f64; 3],
    pub texture: Texture,
}

impl Quad {
    pub fn center_at(&self, frame: usize) -> [f64; 3] {
        let t = frame as f64;
        [
            self.center[0] + self.velocity[0] * t,
            self.center[1] + self.velocity[1] * t,
            self.center[2] + self.velocity[2] * t,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub depth_m: f64,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub baseline_m: f64,
    pub objects: Vec<Quad>,
    pub background: Background,
    pub frame_count: usize,
}

impl SceneSpec {
    /// Checks the visibility invariant: every object in front of both
    /// cameras, and of the background, on every frame.
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig("frame_count must be >= 1".into()));
        }
        let bg = self.background.depth_m;
        if !(bg > MIN_VISIBLE_Z && bg.is_finite()) {
            return Err(Error::InvalidConfig(format!("background depth {bg} must be > {MIN_VISIBLE_Z}")));
        }
        for (k, q) in self.objects.iter().enumerate() {
            if !(q.half_extent > 0.0) {
                return Err(Error::InvalidConfig(format!("object {k} has non-positive extent")));
            }
            for f in 0..self.frame_count {
                let z = q.center_at(f)[2];
                if !(z > MIN_VISIBLE_Z && z < bg) {
                    return Err(Error::InvalidConfig(format!(
                        "object {k} at z={z:.3} m on frame {f} is outside ({MIN_VISIBLE_Z}, {bg})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub num_objects: usize,
    /// Range of initial object depths, metres.
    pub depth_range: (f64, f64),
    /// Range of per-frame object speed, metres/frame.
    pub speed_range: (f64, f64),
    pub frame_count: usize,
    pub background_depth_m: f64,
    /// Angular size of a coarse texture cell, radians.
    pub texture_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_objects: 4,
            depth_range: (1.0, 4.0),
            speed_range: (0.005, 0.03),
            frame_count: 21,
            background_depth_m: 8.0,
            texture_scale: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (near, far) = self.depth_range;
        let (slow, fast) = self.speed_range;
        if self.num_objects == 0 {
            return Err(Error::InvalidConfig("num_objects must be >= 1".into()));
        }
        if !(near > MIN_VISIBLE_Z && far >= near && far.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "depth_range ({near}, {far}) must lie within ({MIN_VISIBLE_Z}, inf)"
            )));
        }
        if !(slow >= 0.0 && fast >= slow && fast.is_finite()) {
            return Err(Error::InvalidConfig(format!("speed_range ({slow}, {fast}) is invalid")));
        }
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig("frame_count must be >= 1".into()));
        }
        if !(self.background_depth_m > far) {
            return Err(Error::InvalidConfig(
                "background must lie behind the depth range".into(),
            ));
        }
        if !(self.texture_scale > 0.0) {
            return Err(Error::InvalidConfig("texture_scale must be > 0".into()));
        }
        Ok(())
    }
}

pub fn sample_baseline(rng: &mut impl Rng) -> f64 {
    let normal = Normal::new(BASELINE_MEAN_M, BASELINE_STD_M).expect("valid normal");
    normal
        .sample(rng)
        .clamp(BASELINE_CLAMP_M.0, BASELINE_CLAMP_M.1)
}

fn sample_texture(rng: &mut impl Rng, cell_m: f64) -> Texture {
    Texture {
        seed: rng.random(),
        cell_m,
        base: [
            rng.random_range(70.0..185.0),
            rng.random_range(70.0..185.0),
            rng.random_range(70.0..185.0),
        ],
        amplitude: rng.random_range(35.0..60.0),
    }
}

/// Draws a random scene. Identical `(seed, config)` always yields the same scene.
pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let baseline_m = sample_baseline(&mut rng);
    let (near, far) = config.depth_range;
    let span = (config.frame_count - 1) as f64;
    let floor = (near * 0.5).max(MIN_VISIBLE_Z * 1.5);

    let objects = (0..config.num_objects)
        .map(|_| {
            let z0 = if far > near { rng.random_range(near..=far) } else { near };
            let mut speed = if config.speed_range.1 > config.speed_range.0 {
                rng.random_range(config.speed_range.0..=config.speed_range.1)
            } else {
                config.speed_range.0
            };
            if span > 0.0 {
                speed = speed.min((z0 - floor).max(0.0) / span);
            }
            let heading = rng.random_range(-0.3..=0.3);
            let lift = rng.random_range(-0.15..=0.15);
            let center = [
                z0 * rng.random_range(-0.6..=0.6),
                z0 * rng.random_range(-0.3..=0.3),
                z0,
            ];
            let half_extent = z0 * rng.random_range(0.08..=0.25);
            let cell_m = config.texture_scale * z0;
            Quad {
                center,
                half_extent,
                velocity: [speed * heading, speed * lift, -speed],
                texture: sample_texture(&mut rng, cell_m),
            }
        })
        .collect();

    let background = Background {
        depth_m: config.background_depth_m,
        texture: sample_texture(&mut rng, config.texture_scale * config.background_depth_m),
    };
    let scene = SceneSpec {
        seed,
        baseline_m,
        objects,
        background,
        frame_count: config.frame_count,
    };
    scene.validate()?;
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoRender {
    pub left: Video,
    pub right: Video,
    pub left_depth: DepthSequence,
    pub right_depth: DepthSequence,
}

impl StereoRender {
    /// Drops the first `n` frames of every stream.
    pub fn drop_leading(self, n: usize) -> Result<StereoRender> {
        if n >= self.left.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot drop {n} of {} frames",
                self.left.len()
            )));
        }
        let video = |v: Video| Video::new(v.into_frames().into_iter().skip(n).collect());
        let depth = |d: DepthSequence| DepthSequence::new(d.frames()[n..].to_vec());
        Ok(StereoRender {
            left: video(self.left)?,
            right: video(self.right)?,
            left_depth: depth(self.left_depth)?,
            right_depth: depth(self.right_depth)?,
        })
    }
}

/// Renders both views and their depth for every frame of `scene`.
pub fn render_stereo(scene: &SceneSpec, rig: &CameraRig) -> Result<StereoRender> {
    scene.validate()?;
    rig.validate()?;
    let views: Vec<_> = (0..scene.frame_count)
        .into_par_iter()
        .map(|f| (render_view(scene, rig, f, 0.0), render_view(scene, rig, f, rig.baseline_m)))
        .collect();
    let (mut left, mut right, mut left_depth, mut right_depth) = (vec![], vec![], vec![], vec![]);
    for ((lf, ld), (rf, rd)) in views {
        left.push(lf);
        left_depth.push(ld);
        right.push(rf);
        right_depth.push(rd);
    }
    Ok(StereoRender {
        left: Video::new(left)?,
        right: Video::new(right)?,
        left_depth: DepthSequence::new(left_depth)?,
        right_depth: DepthSequence::new(right_depth)?,
    })
}

/// One view from a camera at `(cam_x, 0, 0)`.
fn render_view(scene: &SceneSpec, rig: &CameraRig, frame: usize, cam_x: f64) -> (Frame, Plane<f32>) {
    let (w, h) = (rig.width, rig.height);
    let centers: Vec<[f64; 3]> = scene.objects.iter().map(|q| q.center_at(frame)).collect();
    let bg = &scene.background;
    let mut image = Frame::new(w, h);
    let mut depth = Plane::filled(w, h, bg.depth_m as f32);

    for y in 0..h {
        let dy = (y as f64 + 0.5 - h as f64 / 2.0) / rig.focal_px;
        for x in 0..w {
            let dx = (x as f64 + 0.5 - w as f64 / 2.0) / rig.focal_px;
            let mut best: Option<(f64, usize)> = None;
            for (k, (q, c)) in scene.objects.iter().zip(&centers).enumerate() {
                let z = c[2];
                if best.is_some_and(|(bz, _)| z >= bz) {
                    continue;
                }
                let px = cam_x + dx * z;
                let py = dy * z;
                if (px - c[0]).abs() <= q.half_extent && (py - c[1]).abs() <= q.half_extent {
                    best = Some((z, k));
                }
            }
            let (z, rgb) = match best {
                Some((z, k)) => {
                    let c = centers[k];
                    let tex = &scene.objects[k].texture;
                    (z, shade(tex, cam_x + dx * z - c[0], dy * z - c[1]))
                }
                None => {
                    let z = bg.depth_m;
                    (z, shade(&bg.texture, cam_x + dx * z, dy * z))
                }
            };
            image.put_pixel(x, y, rgb);
            depth.set(x, y, z as f32);
        }
    }
    (image, depth)
}

fn shade(tex: &Texture, u: f64, v: f64) -> Rgb<u8> {
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let seed = tex.seed ^ (c as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let n = texture_noise(seed, u / tex.cell_m, v / tex.cell_m);
        let value = tex.base[c] as f64 + tex.amplitude as f64 * (2.0 * n - 1.0);
        *o = (value + 0.5).floor().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Two-octave value noise in [0, 1].
pub fn texture_noise(seed: u64, u: f64, v: f64) -> f64 {
    let coarse = value_noise(seed, u, v);
    let fine = value_noise(seed.rotate_left(17) ^ 0xA5A5_A5A5, 2.0 * u + 17.3, 2.0 * v - 5.1);
    0.7 * coarse + 0.3 * fine
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((ix as u64).wrapping_mul(0x632B_E59B_D9B4_E019) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Lattice value noise with quintic interpolation, in [0, 1).
pub fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (fu, fv) = (u.floor(), v.floor());
    let (ix, iy) = (fu as i64, fv as i64);
    let (tu, tv) = (fade(u - fu), fade(v - fv));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tu;
    let bottom = c + (d - c) * tu;
    top + (bottom - top) * tv
}
