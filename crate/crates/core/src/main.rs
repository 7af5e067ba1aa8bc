use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use stereoforge::degrade::{
    degrade_video_passes, sample_recipe, second_pass_seed, RecipeRanges, Stage,
};
use stereoforge::inpaint::{convert_stereo, save_conversion, BackendRegistration, ConvertConfig, HistRef, RunOptions};
use stereoforge::metrics::{psnr, ssim, temporal_consistency, view_consistency, PairMetric};
use stereoforge::postproc::{match_histograms, pack, PackMode};
use stereoforge::synthgen::{render_stereo, sample_scene, CameraRig, SceneConfig};
use stereoforge::tensorio::{
    load_depth, load_mask, load_video, save_depth, save_mask, save_video, save_video_with, DepthEncoding,
};
use stereoforge::warp::{depth_to_disparity, dilate_mask, fill_flying_pixels, warp_video, DisparityMode};
use stereoforge::{Error, OcclusionMask, Result, Video};

#[derive(Parser)]
#[command(name = "stereoforge", version, about = "Stereo video generation, warping, degradation and conversion")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "STEREOFORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic stereo clip with ground-truth depth.
    Gen(GenArgs),
    /// Forward-warp a left view to the right using depth.
    Warp(WarpArgs),
    /// Apply a seeded, clip-constant degradation recipe.
    Degrade(DegradeArgs),
    /// Run the dual-branch stereo conversion.
    Convert(ConvertArgs),
    /// Match each frame's histograms to the corresponding reference frame.
    Histmatch(HistmatchArgs),
    /// Pack left and right views into one video.
    Pack(PackArgs),
    /// Compute a consistency or fidelity metric and print it as JSON.
    Metrics(MetricsArgs),
}

#[derive(Args, Serialize)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 21)]
    frames: usize,
    /// Leading frames discarded after rendering.
    #[arg(long, default_value_t = 5)]
    drop: usize,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 512)]
    height: u32,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    #[arg(long, value_enum, default_value_t = DepthFormat::Pfm)]
    depth_format: DepthFormat,
    /// Metres per code for png16 depth.
    #[arg(long, default_value_t = 0.001)]
    depth_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DepthFormat {
    Pfm,
    Png16,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Scaled,
    Metric,
}

#[derive(Args, Serialize)]
struct DisparityArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Scaled)]
    mode: ModeArg,
    /// Disparity scale for scaled mode.
    #[arg(long, default_value_t = stereoforge::warp::DEFAULT_SCALE)]
    scale: f64,
    /// Focal length in pixels for metric mode; defaults to half the width.
    #[arg(long)]
    focal: Option<f64>,
    /// Baseline in metres for metric mode.
    #[arg(long, default_value_t = 0.065)]
    baseline: f64,
    /// Mask dilation radius; 0 disables.
    #[arg(long, default_value_t = 1)]
    dilate: u32,
    #[arg(long, default_value_t = 1)]
    dilate_iterations: u32,
    /// Longest hole run closed by interpolation; 0 disables.
    #[arg(long, default_value_t = 2)]
    fill: u32,
}

impl DisparityArgs {
    fn mode(&self, width: u32) -> DisparityMode {
        match self.mode {
            ModeArg::Scaled => DisparityMode::Scaled { scale: self.scale },
            ModeArg::Metric => DisparityMode::Metric {
                focal_px: self.focal.unwrap_or(width as f64 / 2.0),
                baseline_m: self.baseline,
            },
        }
    }
}

#[derive(Args, Serialize)]
struct WarpArgs {
    #[command(flatten)]
    #[serde(flatten)]
    disparity: DisparityArgs,
    input: PathBuf,
    depth: PathBuf,
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DegradeArgs {
    #[arg(long)]
    seed: u64,
    /// Downsampling target, WxH.
    #[arg(long, value_parser = parse_size)]
    target: (u32, u32),
    /// Comma-separated stage list in pipeline order.
    #[arg(long, value_delimiter = ',', default_value = "blur,down,noise,jpeg")]
    stages: Vec<Stage>,
    /// Apply a second, independently seeded pass.
    #[arg(long)]
    second_order: bool,
    input: PathBuf,
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ConvertArgs {
    #[command(flatten)]
    #[serde(flatten)]
    disparity: DisparityArgs,
    /// baseline, identity or exec:"CMD {job}".
    #[arg(long, default_value = "baseline")]
    backend: String,
    #[arg(long)]
    hist_match: bool,
    /// Histogram reference: the input left view or the left-branch output.
    #[arg(long, default_value = "input")]
    hist_ref: String,
    /// Backend timeout in seconds.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Directory for branch jobs; defaults to OUT/work.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    left: PathBuf,
    depth: PathBuf,
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct HistmatchArgs {
    src: PathBuf,
    reference: PathBuf,
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PackArgs {
    #[arg(long, default_value = "sbs")]
    mode: PackMode,
    left: PathBuf,
    right: PathBuf,
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MetricKind {
    View,
    Temporal,
    Psnr,
    Ssim,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum TemporalMetric {
    PatchCosine,
    Ssim,
    Psnr,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    kind: MetricKind,
    /// Frame metric for --kind temporal.
    #[arg(long, value_enum, default_value_t = TemporalMetric::PatchCosine)]
    temporal_metric: TemporalMetric,
    /// Pixels with mask 1 are excluded (psnr only).
    #[arg(long)]
    mask: Option<PathBuf>,
    a: PathBuf,
    b: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(w)?, parse(h)?))
}

fn echo_config(command: &str, args: &impl Serialize) {
    let line = json!({ "command": command, "config": args });
    eprintln!("{line}");
}

fn gen(args: &GenArgs) -> Result<()> {
    let cfg = SceneConfig {
        num_objects: args.objects,
        frame_count: args.frames,
        ..SceneConfig::default()
    };
    let scene = sample_scene(args.seed, &cfg)?;
    let rig = CameraRig::new(args.width, args.height, scene.baseline_m);
    let render = render_stereo(&scene, &rig)?.drop_leading(args.drop)?;
    let extras = BTreeMap::from([
        ("seed".to_string(), args.seed.to_string()),
        ("focal_px".to_string(), rig.focal_px.to_string()),
        ("baseline_m".to_string(), rig.baseline_m.to_string()),
    ]);
    save_video_with(&render.left, &args.out.join("left"), extras.clone())?;
    save_video_with(&render.right, &args.out.join("right"), extras)?;
    let (encoding, scale) = match args.depth_format {
        DepthFormat::Pfm => (DepthEncoding::Pfm, 1.0),
        DepthFormat::Png16 => (DepthEncoding::Png16, args.depth_scale),
    };
    save_depth(&render.left_depth, &args.out.join("depth_left"), encoding, scale)?;
    save_depth(&render.right_depth, &args.out.join("depth_right"), encoding, scale)?;
    write_json(&args.out.join("scene.json"), &json!({ "scene": scene, "rig": rig }))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn warp(args: &WarpArgs) -> Result<()> {
    let left = load_video(&args.input)?;
    let depth = load_depth(&args.depth)?;
    let d = &args.disparity;
    let mode = d.mode(left.width());
    let disparity = depth_to_disparity(&depth, mode)?;
    let ordering = matches!(mode, DisparityMode::Metric { .. }).then_some(&depth);
    let (warped, holes) = warp_video(&left, &disparity, ordering)?;
    let mut images = Vec::with_capacity(warped.len());
    let mut masks = Vec::with_capacity(warped.len());
    for i in 0..warped.len() {
        let (img, m) = fill_flying_pixels(warped.frame(i), holes.frame(i), d.fill);
        images.push(img);
        masks.push(if d.dilate > 0 {
            dilate_mask(&m, d.dilate, d.dilate_iterations)
        } else {
            m
        });
    }
    save_video(&Video::new(images)?, &args.out.join("warped"))?;
    save_mask(&OcclusionMask::new(masks)?, &args.out.join("mask"))
}

fn degrade(args: &DegradeArgs) -> Result<()> {
    let video = load_video(&args.input)?;
    let mut ranges = RecipeRanges::new(args.target.0, args.target.1);
    ranges.stages = args.stages.clone();
    let mut passes = vec![sample_recipe(args.seed, &ranges)?];
    if args.second_order {
        passes.push(sample_recipe(second_pass_seed(args.seed), &ranges)?);
    }
    let out = degrade_video_passes(&video, &passes)?;
    save_video(&out, &args.out)?;
    write_json(&args.out.join("recipe.json"), &json!({ "passes": passes }))
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let left = load_video(&args.left)?;
    let depth = load_depth(&args.depth)?;
    let backend = BackendRegistration::from_str(&args.backend)?;
    let hist_ref = HistRef::from_str(&args.hist_ref).map_err(Error::InvalidConfig)?;
    let d = &args.disparity;
    let mut cfg = ConvertConfig::new(
        args.work_dir.clone().unwrap_or_else(|| args.out.join("work")),
        backend,
    );
    cfg.mode = d.mode(left.width());
    cfg.fill_span = d.fill;
    cfg.dilate_radius = d.dilate;
    cfg.dilate_iterations = d.dilate_iterations;
    cfg.hist_match = args.hist_match;
    cfg.hist_ref = hist_ref;
    cfg.run = RunOptions {
        timeout: Duration::from_secs(args.timeout),
    };
    let conv = convert_stereo(&left, &depth, &cfg)?;
    save_conversion(&conv, &args.out)
}

fn histmatch(args: &HistmatchArgs) -> Result<()> {
    let src = load_video(&args.src)?;
    let reference = load_video(&args.reference)?;
    save_video(&match_histograms(&src, &reference)?, &args.out)
}

fn pack_cmd(args: &PackArgs) -> Result<()> {
    let left = load_video(&args.left)?;
    let right = load_video(&args.right)?;
    save_video(&pack(&left, &right, args.mode)?, &args.out)
}

fn metrics(args: &MetricsArgs) -> Result<Value> {
    let a = load_video(&args.a)?;
    let second = || -> Result<Video> {
        let b = args
            .b
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("this metric needs a second video".into()))?;
        load_video(b)
    };
    let report = match args.kind {
        MetricKind::View => view_consistency(&a, &second()?)?,
        MetricKind::Ssim => ssim(&a, &second()?)?,
        MetricKind::Psnr => {
            let mask = args.mask.as_deref().map(load_mask).transpose()?;
            psnr(&a, &second()?, mask.as_ref())?
        }
        MetricKind::Temporal => {
            let metric = match args.temporal_metric {
                TemporalMetric::PatchCosine => PairMetric::PatchCosine,
                TemporalMetric::Ssim => PairMetric::Ssim,
                TemporalMetric::Psnr => PairMetric::Psnr,
            };
            temporal_consistency(&a, metric)?
        }
    };
    Ok(serde_json::to_value(report)?)
}

fn run(command: &Command) -> Result<Option<Value>> {
    match command {
        Command::Gen(a) => {
            echo_config("gen", a);
            gen(a)?
        }
        Command::Warp(a) => {
            echo_config("warp", a);
            warp(a)?
        }
        Command::Degrade(a) => {
            echo_config("degrade", a);
            degrade(a)?
        }
        Command::Convert(a) => {
            echo_config("convert", a);
            convert(a)?
        }
        Command::Histmatch(a) => {
            echo_config("histmatch", a);
            histmatch(a)?
        }
        Command::Pack(a) => {
            echo_config("pack", a);
            pack_cmd(a)?
        }
        Command::Metrics(a) => {
            echo_config("metrics", a);
            return metrics(a).map(Some);
        }
    }
    Ok(None)
}

fn error_json(e: &Error) -> Value {
    let context = match e {
        Error::Io { path, .. } | Error::MissingManifest(path) => json!({ "path": path }),
        Error::FrameCountMismatch { expected, found } => json!({ "expected": expected, "found": found }),
        Error::NonPositiveDepth { frame, x, y, value } => {
            json!({ "frame": frame, "x": x, "y": y, "value": value })
        }
        Error::NoOverlap {
            best_scale,
            best_psnr,
            threshold,
        } => json!({ "best_scale": best_scale, "best_psnr": best_psnr, "threshold": threshold }),
        Error::FullyMaskedFrame(frame) => json!({ "frame": frame }),
        Error::Timeout(secs) => json!({ "timeout_s": secs }),
        Error::TooSmall { width, height, min } => json!({ "width": width, "height": height, "min": min }),
        _ => json!({}),
    };
    json!({ "code": e.code(), "message": e.to_string(), "context": context })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size thread pool: {e}");
        }
    }
    match run(&cli.command) {
        Ok(Some(value)) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}
