//! Command-line front end: simulate, reconstruct, convolve, calibrate-ct, evaluate.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand};
use eventfuse::augment::{global_ct_estimate, EventIndex};
use eventfuse::conv::{gradient_color_encode, Kernel};
use eventfuse::filters::FilterMode;
use eventfuse::io::{
    self, snapshot_name, snapshot_time, write_output, DatasetManifest, FrameEntry, RunConfig, CONFIG_KEYS,
};
use eventfuse::metrics::MetricReport;
use eventfuse::noise::{CrfModel, SensorProfile};
use eventfuse::pipeline::{reconstruct, reconstruct_convolved, stream_start};
use eventfuse::sim::{simulate, Scene, SimConfig};
use eventfuse::{Event, Frame, Image, Timestamp};

enum CliError {
    Usage(String),
    Data(eventfuse::Error),
}

impl From<eventfuse::Error> for CliError {
    fn from(e: eventfuse::Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_help() -> &'static str {
    static HELP: OnceLock<String> = OnceLock::new();
    HELP.get_or_init(|| {
        let mut s = String::from("Configuration keys (config file lines `key = value`, or `--set key=value`):\n");
        for (k, doc) in CONFIG_KEYS {
            s.push_str(&format!("  {k:<24} {doc}\n"));
        }
        s
    })
}

#[derive(Parser)]
#[command(name = "eventfuse", version, about = "Fuse event streams with frames into continuous-time log-intensity estimates")]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct log intensity at the output schedule.
    #[command(after_help = config_help())]
    Reconstruct(ReconstructArgs),
    /// Reconstruct a spatially filtered image directly from events and frames.
    #[command(after_help = config_help())]
    Convolve(ConvolveArgs),
    /// Render a synthetic scene into a dataset.
    #[command(after_help = config_help())]
    Simulate(SimulateArgs),
    /// Estimate the global contrast threshold from frame pairs.
    #[command(name = "calibrate-ct", after_help = config_help())]
    CalibrateCt(CalibrateArgs),
    /// Compare a reconstruction directory against a reference directory.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FilterArgs {
    /// cf | akf | highpass
    #[arg(long)]
    mode: Option<String>,
    /// Crossover gain, rad/s.
    #[arg(long)]
    alpha: Option<f64>,
    /// Contrast threshold.
    #[arg(long)]
    c: Option<f64>,
    /// full | zoh
    #[arg(long)]
    augment: Option<String>,
    /// Output schedule: rate:<hz> | events | list:<t,...>
    #[arg(long)]
    schedule: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CRF table, overriding the dataset's.
    #[arg(long)]
    crf: Option<PathBuf>,
    /// Sensor profile: davis240c | flir | dsec | hdr | sim
    #[arg(long)]
    profile: Option<String>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Dataset manifest.
    manifest: PathBuf,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ConvolveArgs {
    manifest: PathBuf,
    /// identity | gaussian | sobelx | sobely | laplacian | gradient | custom
    #[arg(long)]
    kernel: Option<String>,
    /// Gaussian sigma in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Kernel file (`dx dy w` lines) for custom kernels.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene preset: hdr | edge | ramp
    #[arg(long, default_value = "hdr")]
    scene: String,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Exposure time, seconds.
    #[arg(long, default_value_t = 0.005)]
    exposure: f64,
    /// Contrast threshold.
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    #[arg(long, default_value_t = 0.1)]
    clip_lo: f64,
    #[arg(long, default_value_t = 0.9)]
    clip_hi: f64,
    /// Relative per-event threshold jitter.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Spurious events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    /// Refractory period, seconds.
    #[arg(long, default_value_t = 0.0)]
    refractory: f64,
    /// Frame noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    frame_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write ground-truth images at the output schedule into `<out>/truth`.
    #[arg(long)]
    ground_truth: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    manifest: PathBuf,
    /// Responses outside [band_lo, band_hi] are ignored.
    #[arg(long, default_value_t = 0.05)]
    band_lo: f64,
    #[arg(long, default_value_t = 0.95)]
    band_hi: f64,
    #[arg(long)]
    crf: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of reconstructed snapshots.
    reconstruction: PathBuf,
    /// Directory of reference images with matching timestamps.
    reference: PathBuf,
    /// Per-frame CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Convolve(a) => cmd_convolve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::CalibrateCt(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// Config file (relative paths resolved against its directory), then `--set` overrides.
fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let mut c = RunConfig::read(p).map_err(usage)?;
            let base = p.parent().unwrap_or(Path::new("."));
            for f in [&mut c.crf_file, &mut c.kernel_file].into_iter().flatten() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
            c
        }
        None => RunConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    Ok(cfg)
}

fn apply_filter_flags(cfg: &mut RunConfig, f: &FilterArgs) -> CliResult<()> {
    let pairs = [
        ("filter.mode", f.mode.clone()),
        ("filter.alpha", f.alpha.map(|v| v.to_string())),
        ("filter.c", f.c.map(|v| v.to_string())),
        ("augment.mode", f.augment.clone()),
        ("output.schedule", f.schedule.clone()),
        ("crf.profile", f.profile.clone()),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    if let Some(o) = &f.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = &f.crf {
        cfg.crf_file = Some(c.clone());
    }
    cfg.validate().map_err(usage)
}

struct Dataset {
    events: Vec<Event>,
    frames: Vec<Frame>,
    width: usize,
    height: usize,
    crf: CrfModel,
}

/// Loads a dataset; the manifest's CRF and profile fill in unset config values.
fn load_dataset(manifest: &Path, cfg: &mut RunConfig) -> CliResult<Dataset> {
    let m = DatasetManifest::read(manifest)?;
    if cfg.crf_file.is_none() {
        cfg.crf_file = m.crf.clone();
    }
    if cfg.profile.is_none() {
        if let Some(p) = &m.profile {
            cfg.profile = Some(SensorProfile::parse(p)?);
        }
    }
    let (ef, frames) = m.load()?;
    if ef.dropped_sync > 0 {
        log::warn!("dropped {} zero-polarity records", ef.dropped_sync);
    }
    let crf = cfg.crf(None)?;
    Ok(Dataset {
        events: ef.events,
        frames,
        width: m.width,
        height: m.height,
        crf,
    })
}

/// Data span: from the first event or exposure start to the last event or
/// exposure end, inclusive.
fn span(events: &[Event], frames: &[Frame]) -> (Timestamp, Timestamp) {
    let start = stream_start(events, frames);
    let last_event = events.last().map(|e| e.t);
    let last_frame = frames.last().map(|f| f.window().1);
    let end = last_event.max(last_frame).unwrap_or(start).max(start);
    (start, end.offset_micros(1))
}

fn schedule_times(cfg: &RunConfig, events: &[Event], frames: &[Frame]) -> CliResult<Vec<Timestamp>> {
    let (start, end) = span(events, frames);
    let times: Vec<Timestamp> = cfg
        .schedule
        .times(events, start, end)
        .into_iter()
        .filter(|&t| t >= start)
        .collect();
    if times.is_empty() {
        return Err(CliError::Usage(format!("output schedule {} selects no times in the data span", cfg.schedule)));
    }
    Ok(times)
}

fn cmd_reconstruct(a: ReconstructArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    apply_filter_flags(&mut cfg, &a.filter)?;
    let d = load_dataset(&a.manifest, &mut cfg)?;
    let times = schedule_times(&cfg, &d.events, &d.frames)?;
    let r = reconstruct(&d.events, &d.frames, d.width, d.height, &d.crf, &cfg.filter, &cfg.augment, &times)?;
    let snaps: Vec<(Timestamp, Image)> = r.times.iter().copied().zip(r.snapshots).collect();
    let files = write_output(&cfg.output_dir, &snaps, cfg.normalization(), cfg.i0, &cfg.format, cfg.bits)?;
    println!(
        "wrote {} snapshots to {} ({} events, {} frames, mode {})",
        files.len(),
        cfg.output_dir.display(),
        r.stats.events,
        r.stats.frames,
        mode_name(cfg.filter.mode)
    );
    Ok(())
}

fn mode_name(m: FilterMode) -> &'static str {
    match m {
        FilterMode::Cf => "cf",
        FilterMode::Akf => "akf",
        FilterMode::HighPass => "highpass",
    }
}

/// Maps signed values symmetrically about 0.5 using the 99th percentile of |v|.
fn signed_to_unit(images: &[Image]) -> Vec<Image> {
    let mut mags: Vec<f64> = images.iter().flat_map(|i| i.iter().map(|v| v.abs())).collect();
    mags.sort_by(f64::total_cmp);
    let s = mags
        .get(((0.99 * mags.len() as f64).ceil() as usize).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);
    let scale = if s > 0.0 { 0.5 / s } else { 0.0 };
    images.iter().map(|i| i.mapv(|v| (0.5 + v * scale).clamp(0.0, 1.0))).collect()
}

fn cmd_convolve(a: ConvolveArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    apply_filter_flags(&mut cfg, &a.filter)?;
    if let Some(k) = &a.kernel {
        cfg.set("conv.kernel", k).map_err(usage)?;
    }
    if let Some(s) = a.sigma {
        cfg.set("conv.sigma", &s.to_string()).map_err(usage)?;
    }
    if let Some(f) = &a.kernel_file {
        cfg.kernel_file = Some(f.clone());
    }
    let gradient = cfg.kernel == "gradient";
    let kernels = match cfg.kernel.as_str() {
        "gradient" => vec![Kernel::sobel_x(), Kernel::sobel_y()],
        "custom" => {
            let p = cfg
                .kernel_file
                .as_ref()
                .ok_or_else(|| CliError::Usage("custom kernel needs conv.file or --kernel-file".into()))?;
            vec![io::read_kernel(p)?]
        }
        name => vec![Kernel::parse_name(name, cfg.kernel_sigma).map_err(usage)?],
    };
    let d = load_dataset(&a.manifest, &mut cfg)?;
    let times = schedule_times(&cfg, &d.events, &d.frames)?;
    let runs = reconstruct_convolved(
        &d.events,
        &d.frames,
        d.width,
        d.height,
        &d.crf,
        &cfg.filter,
        &cfg.augment,
        &kernels,
        &times,
    )?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| eventfuse::Error::io(dir, e))?;
    if gradient {
        for (seq, (t, (gx, gy))) in times.iter().zip(runs[0].snapshots.iter().zip(&runs[1].snapshots)).enumerate() {
            let p = dir.join(snapshot_name(seq, *t, "png"));
            gradient_color_encode(gx, gy)?
                .save(&p)
                .map_err(|source| eventfuse::Error::Image { path: p.clone(), source })?;
        }
    } else {
        let run = &runs[0];
        if (run.kernel.sum() - 1.0).abs() < 1e-9 {
            // smoothing kernels keep log-intensity semantics
            let snaps: Vec<(Timestamp, Image)> = times.iter().copied().zip(run.snapshots.iter().cloned()).collect();
            write_output(dir, &snaps, cfg.normalization(), cfg.i0, &cfg.format, cfg.bits)?;
        } else {
            for (seq, (t, img)) in times.iter().zip(signed_to_unit(&run.snapshots)).enumerate() {
                io::write_image(&dir.join(snapshot_name(seq, *t, &cfg.format)), &img, cfg.bits)?;
            }
        }
    }
    println!("wrote {} {} snapshots to {}", times.len(), cfg.kernel, dir.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let scene = Scene::preset(&a.scene, a.width, a.height).map_err(usage)?;
    let sim = SimConfig {
        duration: a.duration,
        c: a.c,
        refractory: a.refractory,
        threshold_jitter: a.jitter,
        noise_rate: a.noise_rate,
        fps: a.fps,
        exposure: a.exposure,
        clip: (a.clip_lo, a.clip_hi),
        frame_noise_std: a.frame_noise,
        i0: cfg.i0,
        seed: a.seed,
        ..SimConfig::default()
    };
    sim.validate(&scene).map_err(usage)?;
    let out = simulate(&scene, &sim, &CrfModel::identity())?;
    let dir = &a.out;
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir).map_err(|e| eventfuse::Error::io(&frame_dir, e))?;
    let geometry = Some((a.width, a.height));
    io::write_events(&dir.join("events.txt"), &out.events, geometry)?;
    let mut entries = Vec::with_capacity(out.frames.len());
    for (k, f) in out.frames.iter().enumerate() {
        let name = format!("{k:06}.png");
        io::write_image(&frame_dir.join(&name), &f.response, 8)?;
        entries.push(FrameEntry {
            t_mid: f.t_mid,
            filename: name,
            exposure: f.exposure,
        });
    }
    io::write_frame_index(&dir.join("frames.csv"), &entries)?;
    io::write_crf(&dir.join("crf.txt"), &out.crf)?;
    let manifest = DatasetManifest {
        events: dir.join("events.txt"),
        frame_index: dir.join("frames.csv"),
        frame_dir: frame_dir.clone(),
        width: a.width,
        height: a.height,
        crf: Some(dir.join("crf.txt")),
        profile: Some("sim".into()),
    };
    manifest.write(&dir.join("manifest.txt"))?;
    if a.ground_truth {
        let times = schedule_times(&cfg, &out.events, &out.frames)?;
        let snaps: Vec<(Timestamp, Image)> = times.iter().map(|&t| (t, scene.ground_truth(t.as_secs()))).collect();
        write_output(&dir.join("truth"), &snaps, cfg.normalization(), cfg.i0, &cfg.format, cfg.bits)?;
    }
    println!(
        "simulated {} events and {} frames into {}",
        out.events.len(),
        out.frames.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(p) = &a.profile {
        cfg.set("crf.profile", p).map_err(usage)?;
    }
    if let Some(c) = &a.crf {
        cfg.crf_file = Some(c.clone());
    }
    if !(a.band_lo < a.band_hi) {
        return Err(CliError::Usage(format!("band [{}, {}] is empty", a.band_lo, a.band_hi)));
    }
    let d = load_dataset(&a.manifest, &mut cfg)?;
    let index = EventIndex::build(&d.events, d.width, d.height);
    let c = global_ct_estimate(&d.frames, &index, &d.crf, (a.band_lo, a.band_hi))?;
    println!("c = {c:.6}");
    Ok(())
}

fn snapshot_files(dir: &Path) -> CliResult<Vec<(Timestamp, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| eventfuse::Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| eventfuse::Error::io(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(t) = snapshot_time(name) {
            out.push((t, p));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let recon = snapshot_files(&a.reconstruction)?;
    let reference = snapshot_files(&a.reference)?;
    let mut pairs = Vec::new();
    for (t, p) in &recon {
        if let Ok(k) = reference.binary_search_by_key(t, |(u, _)| *u) {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            pairs.push((name, io::read_image(p)?, io::read_image(&reference[k].1)?));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Data(eventfuse::Error::invalid(format!(
            "no snapshots in {} match timestamps in {}",
            a.reconstruction.display(),
            a.reference.display()
        ))));
    }
    let unmatched = recon.len() - pairs.len();
    if unmatched > 0 {
        log::warn!("{unmatched} reconstructed snapshots have no reference");
    }
    let report = MetricReport::evaluate(&pairs)?;
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv()).map_err(|e| eventfuse::Error::io(p, e))?;
    }
    println!("{}", report.summary());
    Ok(())
}
