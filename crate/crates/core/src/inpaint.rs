//! Dual-branch stereo conversion.
//!
//! Both branches hand the same kind of job to a backend: a frame directory,
//! a mask directory and an output directory. The left-to-right branch gets
//! the warped left view and its hole mask; the left-to-left branch gets the
//! input left view and an all-zero mask. Backends are either built in or an
//! external process driven through a `job.json` manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::match_histograms;
use crate::tensorio::{
    self, ensure_same_dims, format_frame_name, load_frames, load_mask, load_video, save_mask,
    save_video, DepthSequence, Frame, OcclusionMask, Plane, Video, DEFAULT_FRAME_PATTERN,
    MANIFEST_FILE, MANIFEST_VERSION,
};
use crate::warp::{
    depth_to_disparity, dilate_mask, fill_flying_pixels, warp_video, DisparityMode,
};

pub const JOB_FILE: &str = "job.json";
pub const JOB_PLACEHOLDER: &str = "{job}";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LeftToRight,
    LeftToLeft,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::LeftToRight => "left_to_right",
            Branch::LeftToLeft => "left_to_left",
        })
    }
}

/// The `job.json` manifest handed to a backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendJob {
    pub version: String,
    pub branch: Branch,
    pub input_frames: PathBuf,
    pub mask: PathBuf,
    pub output_frames: PathBuf,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl BackendJob {
    /// Where the manifest is written: next to the output directory.
    pub fn manifest_path(&self) -> PathBuf {
        self.output_frames
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(JOB_FILE)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    BuiltinBaseline,
    Identity,
    /// Command line template; `{job}` is replaced by the manifest path.
    ExternalProcess { command: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRegistration {
    pub name: String,
    #[serde(flatten)]
    pub kind: BackendKind,
}

impl BackendRegistration {
    pub fn baseline() -> Self {
        BackendRegistration {
            name: "baseline".into(),
            kind: BackendKind::BuiltinBaseline,
        }
    }

    pub fn identity() -> Self {
        BackendRegistration {
            name: "identity".into(),
            kind: BackendKind::Identity,
        }
    }

    pub fn external(name: &str, command: &str) -> Result<Self> {
        let tokens = shlex::split(command)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::InvalidConfig(format!("cannot parse backend command {command:?}")))?;
        if !tokens.iter().any(|t| t.contains(JOB_PLACEHOLDER)) {
            return Err(Error::InvalidConfig(format!(
                "backend command {command:?} has no {JOB_PLACEHOLDER} placeholder"
            )));
        }
        Ok(BackendRegistration {
            name: name.into(),
            kind: BackendKind::ExternalProcess {
                command: command.into(),
            },
        })
    }
}

/// Parses `baseline`, `identity` or `exec:CMD {job}`.
impl FromStr for BackendRegistration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(BackendRegistration::baseline()),
            "identity" => Ok(BackendRegistration::identity()),
            _ => match s.strip_prefix("exec:") {
                Some(cmd) => BackendRegistration::external("exec", cmd),
                None => Err(Error::InvalidConfig(format!(
                    "unknown backend {s:?}; use baseline, identity or exec:\"CMD {{job}}\""
                ))),
            },
        }
    }
}

/// Named backends; names are unique.
#[derive(Clone, Debug, Default)]
pub struct BackendRegistry {
    entries: BTreeMap<String, BackendRegistration>,
}

impl BackendRegistry {
    pub fn with_builtins() -> Self {
        let mut r = BackendRegistry::default();
        r.register(BackendRegistration::baseline()).expect("fresh registry");
        r.register(BackendRegistration::identity()).expect("fresh registry");
        r
    }

    pub fn register(&mut self, registration: BackendRegistration) -> Result<()> {
        if self.entries.contains_key(&registration.name) {
            return Err(Error::InvalidConfig(format!(
                "backend {:?} is already registered",
                registration.name
            )));
        }
        self.entries.insert(registration.name.clone(), registration);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BackendRegistration> {
        self.entries.get(name)
    }
}

/// Fills holes from the nearest valid pixel to the right on the same row,
/// else the nearest to the left. Rows with no valid pixel copy the nearest
/// filled row (the upper one on ties).
pub fn baseline_inpaint(frame: &Frame, mask: &Plane<u8>) -> Result<Frame> {
    let (w, h) = frame.dimensions();
    if (mask.width(), mask.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "frame {w}x{h} vs mask {}x{}",
            mask.width(),
            mask.height()
        )));
    }
    let mut out = frame.clone();
    let mut row_has_valid = vec![false; h as usize];
    for y in 0..h {
        let bits = mask.row(y);
        let Some(last_valid) = bits.iter().rposition(|&b| b == 0) else {
            continue;
        };
        row_has_valid[y as usize] = true;
        let mut source = last_valid as u32;
        for x in (0..w).rev() {
            if bits[x as usize] == 0 {
                source = x;
            } else {
                // holes right of the last valid pixel keep `source = last_valid`
                let px = *frame.get_pixel(source, y);
                out.put_pixel(x, y, px);
            }
        }
    }
    if !row_has_valid.iter().any(|&v| v) {
        return Err(Error::FullyMaskedFrame(0));
    }
    for y in 0..h as usize {
        if row_has_valid[y] {
            continue;
        }
        let up = (0..y).rev().find(|&r| row_has_valid[r]);
        let down = (y + 1..h as usize).find(|&r| row_has_valid[r]);
        let src = match (up, down) {
            (Some(u), Some(d)) => {
                if y - u <= d - y {
                    u
                } else {
                    d
                }
            }
            (Some(u), None) => u,
            (None, Some(d)) => d,
            (None, None) => unreachable!("some row is valid"),
        };
        for x in 0..w {
            let px = *out.get_pixel(x, src as u32);
            out.put_pixel(x, y as u32, px);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Removes stale frame files and manifest from a backend output directory.
fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0.. {
        let path = dir.join(format_frame_name(DEFAULT_FRAME_PATTERN, i)?);
        if !path.exists() {
            break;
        }
        fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(())
}

fn load_job_inputs(job: &BackendJob) -> Result<(Video, OcclusionMask)> {
    let input = load_video(&job.input_frames)?;
    let mask = load_mask(&job.mask)?;
    ensure_same_dims("job input/mask", &input, &mask)?;
    if input.len() != job.frame_count || (input.width(), input.height()) != (job.width, job.height) {
        return Err(Error::DimensionMismatch(format!(
            "job declares {}x{}x{}, input is {}x{}x{}",
            job.frame_count,
            job.width,
            job.height,
            input.len(),
            input.width(),
            input.height()
        )));
    }
    Ok((input, mask))
}

/// Reads the backend's output and checks it against the job's declared shape.
fn collect_output(job: &BackendJob) -> Result<Video> {
    let frames = load_frames(&job.output_frames, DEFAULT_FRAME_PATTERN, job.frame_count)
        .map_err(|e| Error::OutputMismatch(format!("{}: {e}", job.output_frames.display())))?;
    let extra = job
        .output_frames
        .join(format_frame_name(DEFAULT_FRAME_PATTERN, job.frame_count)?);
    if extra.exists() {
        return Err(Error::OutputMismatch(format!(
            "more than {} frames in {}",
            job.frame_count,
            job.output_frames.display()
        )));
    }
    if let Some((i, f)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.dimensions() != (job.width, job.height))
    {
        return Err(Error::OutputMismatch(format!(
            "frame {i} is {}x{}, job declares {}x{}",
            f.width(),
            f.height(),
            job.width,
            job.height
        )));
    }
    Video::new(frames).map_err(|e| Error::OutputMismatch(e.to_string()))
}

#[cfg(unix)]
fn child_stdout() -> Stdio {
    use std::os::fd::AsFd;
    // backend chatter goes to our stderr so stdout stays machine-readable
    std::io::stderr()
        .as_fd()
        .try_clone_to_owned()
        .map(Stdio::from)
        .unwrap_or_else(|_| Stdio::null())
}

#[cfg(not(unix))]
fn child_stdout() -> Stdio {
    Stdio::inherit()
}

fn run_external(job: &BackendJob, name: &str, template: &str, opts: &RunOptions) -> Result<()> {
    let manifest = job.manifest_path();
    job.write(&manifest)?;
    let job_arg = manifest.to_string_lossy();
    let argv: Vec<String> = shlex::split(template)
        .ok_or_else(|| Error::InvalidConfig(format!("cannot parse backend command {template:?}")))?
        .into_iter()
        .map(|t| t.replace(JOB_PLACEHOLDER, &job_arg))
        .collect();
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| Error::InvalidConfig("empty backend command".into()))?;
    log::info!("running backend {name}: {argv:?}");
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(child_stdout())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| Error::BackendFailed(format!("{name}: cannot start {program:?}: {e}")))?;
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= opts.timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Timeout(opts.timeout.as_secs()));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(Error::BackendFailed(format!("{name}: wait failed: {e}"))),
        }
    };
    if !status.success() {
        return Err(Error::BackendFailed(format!("{name} exited with {status}")));
    }
    Ok(())
}

/// Runs one branch job and returns the backend's frames.
pub fn run_backend(job: &BackendJob, registration: &BackendRegistration, opts: &RunOptions) -> Result<Video> {
    if job.branch == Branch::LeftToLeft {
        let mask = load_mask(&job.mask)?;
        if !mask.is_all_zero() {
            return Err(Error::InvalidConfig("left_to_left job must carry an all-zero mask".into()));
        }
    }
    prepare_output_dir(&job.output_frames)?;
    match &registration.kind {
        BackendKind::BuiltinBaseline => {
            let (input, mask) = load_job_inputs(job)?;
            let frames = (0..input.len())
                .into_par_iter()
                .map(|i| {
                    baseline_inpaint(input.frame(i), mask.frame(i)).map_err(|e| match e {
                        Error::FullyMaskedFrame(_) => Error::FullyMaskedFrame(i),
                        e => e,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            save_video(&Video::new(frames)?, &job.output_frames)?;
        }
        BackendKind::Identity => {
            let (input, _) = load_job_inputs(job)?;
            save_video(&input, &job.output_frames)?;
        }
        BackendKind::ExternalProcess { command } => {
            run_external(job, &registration.name, command, opts)?;
        }
    }
    collect_output(job)
}

/// Histogram-matching reference for the right view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistRef {
    /// The left input as given to `convert_stereo`.
    #[default]
    Input,
    /// The left-to-left branch output.
    OutputLeft,
}

impl FromStr for HistRef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "input" => Ok(HistRef::Input),
            "output-left" => Ok(HistRef::OutputLeft),
            other => Err(format!("unknown histogram reference {other:?}; use input or output-left")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvertConfig {
    pub mode: DisparityMode,
    /// Longest hole run closed by interpolation; 0 disables.
    pub fill_span: u32,
    /// Dilation radius for the hole mask; 0 disables.
    pub dilate_radius: u32,
    pub dilate_iterations: u32,
    pub backend: BackendRegistration,
    pub hist_match: bool,
    pub hist_ref: HistRef,
    /// Directory holding branch inputs, masks, outputs and job manifests.
    pub work_dir: PathBuf,
    #[serde(skip)]
    pub run: RunOptions,
}

impl ConvertConfig {
    pub fn new(work_dir: impl Into<PathBuf>, backend: BackendRegistration) -> Self {
        ConvertConfig {
            mode: DisparityMode::default(),
            fill_span: 2,
            dilate_radius: 1,
            dilate_iterations: 1,
            backend,
            hist_match: false,
            hist_ref: HistRef::Input,
            work_dir: work_dir.into(),
            run: RunOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conversion {
    pub left: Video,
    pub right: Video,
    /// Warped left view after flying-pixel filling, as given to the backend.
    pub warped: Video,
    /// Final hole mask of the left-to-right branch.
    pub mask: OcclusionMask,
    pub jobs: [BackendJob; 2],
}

/// Writes a branch's inputs under `work_dir/<branch>/` and describes it.
pub fn prepare_job(work_dir: &Path, branch: Branch, frames: &Video, mask: &OcclusionMask) -> Result<BackendJob> {
    ensure_same_dims("job frames/mask", frames, mask)?;
    if branch == Branch::LeftToLeft && !mask.is_all_zero() {
        return Err(Error::InvalidConfig("left_to_left job must carry an all-zero mask".into()));
    }
    let root = work_dir.join(branch.to_string());
    let job = BackendJob {
        version: MANIFEST_VERSION.into(),
        branch,
        input_frames: root.join("input"),
        mask: root.join("mask"),
        output_frames: root.join("output"),
        width: frames.width(),
        height: frames.height(),
        frame_count: frames.len(),
        extras: BTreeMap::new(),
    };
    save_video(frames, &job.input_frames)?;
    save_mask(mask, &job.mask)?;
    job.write(&job.manifest_path())?;
    Ok(job)
}

/// Warps `left` by `depth`, runs both branches and assembles the stereo pair.
pub fn convert_stereo(left: &Video, depth: &DepthSequence, cfg: &ConvertConfig) -> Result<Conversion> {
    ensure_same_dims("convert left/depth", left, depth)?;
    let disparity = depth_to_disparity(depth, cfg.mode)?;
    let ordering = match cfg.mode {
        DisparityMode::Metric { .. } => Some(depth),
        DisparityMode::Scaled { .. } => None,
    };
    let (warped, holes) = warp_video(left, &disparity, ordering)?;

    let cleaned = (0..warped.len())
        .into_par_iter()
        .map(|i| {
            let (img, m) = fill_flying_pixels(warped.frame(i), holes.frame(i), cfg.fill_span);
            let m = if cfg.dilate_radius > 0 {
                dilate_mask(&m, cfg.dilate_radius, cfg.dilate_iterations)
            } else {
                m
            };
            (img, m)
        })
        .collect::<Vec<_>>();
    let (images, masks): (Vec<_>, Vec<_>) = cleaned.into_iter().unzip();
    let warped = Video::new(images)?;
    let mask = OcclusionMask::new(masks)?;

    let zero = OcclusionMask::zeros(left.len(), left.width(), left.height());
    let right_job = prepare_job(&cfg.work_dir, Branch::LeftToRight, &warped, &mask)?;
    let left_job = prepare_job(&cfg.work_dir, Branch::LeftToLeft, left, &zero)?;

    let (right_out, left_out) = rayon::join(
        || run_backend(&right_job, &cfg.backend, &cfg.run),
        || run_backend(&left_job, &cfg.backend, &cfg.run),
    );
    let (mut right_out, left_out) = (right_out?, left_out?);
    ensure_same_dims("backend right output", left, &right_out)?;
    ensure_same_dims("backend left output", left, &left_out)?;

    if cfg.hist_match {
        let reference = match cfg.hist_ref {
            HistRef::Input => left,
            HistRef::OutputLeft => &left_out,
        };
        right_out = match_histograms(&right_out, reference)?;
    }

    Ok(Conversion {
        left: left_out,
        right: right_out,
        warped,
        mask,
        jobs: [right_job, left_job],
    })
}

/// Saves a conversion as `left/`, `right/`, `warped/` and `mask/` under `dir`.
pub fn save_conversion(conv: &Conversion, dir: &Path) -> Result<()> {
    save_video(&conv.left, &dir.join("left"))?;
    save_video(&conv.right, &dir.join("right"))?;
    save_video(&conv.warped, &dir.join("warped"))?;
    tensorio::save_mask(&conv.mask, &dir.join("mask"))
}
