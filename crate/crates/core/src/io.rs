//! Dataset files: event text, frame index, grayscale images, CRF tables,
//! kernels, run configuration, manifests and output snapshots.
//!
//! Text formats are line based with `#` comments.
//!
//! * events: `t x y p`, `t` in decimal seconds (at most microsecond
//!   precision), `p` in `{0, 1}`. A `# width height` header may give the
//!   geometry; `# polarity signed` switches `p` to `{-1, 0, 1}`, where 0 marks
//!   a synchronisation record that is dropped.
//! * frame index: `t_mid, filename, exposure` (seconds).
//! * CRF: 256 lines `irradiance response`.
//! * kernel: lines `dx dy weight`.
//! * config / manifest: `key = value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use rayon::prelude::*;

use crate::augment::{AugmentMode, AugmentParams};
use crate::conv::{percentile, Kernel};
use crate::error::{Error, Result};
use crate::filters::{FilterMode, FilterParams, ReferenceSampling};
use crate::noise::{CrfModel, SensorProfile, CRF_SAMPLES};
use crate::types::{Event, Frame, Image, Timestamp};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses non-negative decimal seconds into whole microseconds. Digits past
/// the sixth decimal must be zero.
pub fn parse_seconds(s: &str) -> std::result::Result<Timestamp, String> {
    let s = s.trim();
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(format!("invalid time {s:?}"));
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("invalid time {s:?}"));
    }
    if frac.len() > 6 && frac[6..].bytes().any(|b| b != b'0') {
        return Err(format!("time {s:?} has sub-microsecond digits"));
    }
    let whole: i64 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| format!("time {s:?} out of range"))?
    };
    let mut micros = 0i64;
    for i in 0..6 {
        micros = micros * 10 + frac.as_bytes().get(i).map_or(0, |b| i64::from(b - b'0'));
    }
    whole
        .checked_mul(1_000_000)
        .and_then(|w| w.checked_add(micros))
        .map(Timestamp::from_micros)
        .ok_or_else(|| format!("time {s:?} out of range"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventFile {
    pub events: Vec<Event>,
    pub geometry: Option<(usize, usize)>,
    /// Zero-polarity records dropped while reading.
    pub dropped_sync: usize,
}

pub fn parse_events(text: &str, path: &Path) -> Result<EventFile> {
    let mut out = EventFile::default();
    let mut signed = false;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let words: Vec<&str> = comment.split_whitespace().collect();
            match words.as_slice() {
                ["polarity", "signed"] => signed = true,
                [w, h] => {
                    if let (Ok(w), Ok(h)) = (w.parse(), h.parse()) {
                        out.geometry = Some((w, h));
                    }
                }
                _ => {}
            }
            continue;
        }
        let err = |msg: String| Error::parse(path, n + 1, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [t, x, y, p] = fields.as_slice() else {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        };
        let t = parse_seconds(t).map_err(err)?;
        let x: u16 = x.parse().map_err(|_| err(format!("invalid x {x:?}")))?;
        let y: u16 = y.parse().map_err(|_| err(format!("invalid y {y:?}")))?;
        let polarity: i8 = match (signed, *p) {
            (false, "1") | (true, "1") | (true, "+1") => 1,
            (false, "0") | (true, "-1") => -1,
            (true, "0") => 0,
            _ => return Err(err(format!("invalid polarity {p:?}"))),
        };
        if polarity == 0 {
            out.dropped_sync += 1;
            continue;
        }
        out.events.push(Event::new(t, x, y, polarity));
    }
    if out.dropped_sync > 0 {
        log::info!("{}: dropped {} sync records", path.display(), out.dropped_sync);
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<EventFile> {
    parse_events(&read_text(path)?, path)
}

pub fn format_events(events: &[Event], geometry: Option<(usize, usize)>) -> String {
    let mut s = String::with_capacity(events.len() * 24 + 16);
    if let Some((w, h)) = geometry {
        let _ = writeln!(s, "# {w} {h}");
    }
    for e in events.iter().filter(|e| e.polarity != 0) {
        let _ = writeln!(s, "{} {} {} {}", e.t, e.x, e.y, u8::from(e.polarity > 0));
    }
    s
}

pub fn write_events(path: &Path, events: &[Event], geometry: Option<(usize, usize)>) -> Result<()> {
    write_text(path, &format_events(events, geometry))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub t_mid: Timestamp,
    pub filename: String,
    pub exposure: f64,
}

pub fn read_frame_index(path: &Path) -> Result<Vec<FrameEntry>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(path, n + 1, msg);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [t, name, exposure] = fields.as_slice() else {
            return Err(err(format!("expected 3 comma-separated fields, got {}", fields.len())));
        };
        let exposure: f64 = exposure.parse().map_err(|_| err(format!("invalid exposure {exposure:?}")))?;
        if !(exposure >= 0.0 && exposure.is_finite()) {
            return Err(err(format!("exposure {exposure} must be >= 0")));
        }
        out.push(FrameEntry {
            t_mid: parse_seconds(t).map_err(err)?,
            filename: (*name).to_string(),
            exposure,
        });
    }
    Ok(out)
}

pub fn write_frame_index(path: &Path, entries: &[FrameEntry]) -> Result<()> {
    let mut s = String::from("# t_mid, filename, exposure\n");
    for e in entries {
        let _ = writeln!(s, "{}, {}, {}", e.t_mid, e.filename, e.exposure);
    }
    write_text(path, &s)
}

/// Grayscale image scaled to `[0, 1]`; colour images are converted by luma.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        DynamicImage::ImageLuma8(buf) => Image::from_shape_fn((h, w), |(y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[0]) / 255.0),
        DynamicImage::ImageLuma16(buf) => Image::from_shape_fn((h, w), |(y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[0]) / 65535.0),
        other if other.color().bytes_per_pixel() / other.color().channel_count().max(1) > 1 => {
            let buf = other.to_luma16();
            Image::from_shape_fn((h, w), |(y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[0]) / 65535.0)
        }
        other => {
            let buf = other.to_luma8();
            Image::from_shape_fn((h, w), |(y, x)| f64::from(buf.get_pixel(x as u32, y as u32)[0]) / 255.0)
        }
    })
}

/// Writes `[0, 1]` values as 8- or 16-bit grayscale; the format follows the
/// extension (`png`, `pgm`).
pub fn write_image(path: &Path, img: &Image, bits: u8) -> Result<()> {
    let (h, w) = img.dim();
    let to_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    match bits {
        8 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([(img[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            buf.save(path).map_err(to_err)
        }
        16 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([(img[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
            });
            buf.save(path).map_err(to_err)
        }
        other => Err(Error::invalid(format!("unsupported bit depth {other}"))),
    }
}

/// Loads the frames listed in an index; all must share `geometry` if given.
pub fn read_frames(index: &Path, dir: &Path, geometry: Option<(usize, usize)>) -> Result<Vec<Frame>> {
    let entries = read_frame_index(index)?;
    let frames: Vec<Frame> = entries
        .par_iter()
        .map(|e| {
            let p = dir.join(&e.filename);
            Frame::new(e.t_mid, e.exposure, read_image(&p)?)
        })
        .collect::<Result<_>>()?;
    let expected = geometry.or_else(|| frames.first().map(|f| (f.width(), f.height())));
    for (f, e) in frames.iter().zip(&entries) {
        if Some((f.width(), f.height())) != expected {
            return Err(Error::Geometry(format!(
                "frame {} is {}x{}, expected {:?}",
                e.filename,
                f.width(),
                f.height(),
                expected
            )));
        }
    }
    Ok(frames)
}

pub fn read_crf(path: &Path, sigma2_im: f64, f_w_floor: f64, i0: f64) -> Result<CrfModel> {
    let text = read_text(path)?;
    let (mut irr, mut resp) = (Vec::new(), Vec::new());
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(path, n + 1, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b] = fields.as_slice() else {
            return Err(err(format!("expected 2 fields, got {}", fields.len())));
        };
        let a: f64 = a.parse().map_err(|_| err(format!("invalid irradiance {a:?}")))?;
        let b: f64 = b.parse().map_err(|_| err(format!("invalid response {b:?}")))?;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(err("values must lie in [0, 1]".into()));
        }
        irr.push(a);
        resp.push(b);
    }
    if irr.len() != CRF_SAMPLES {
        return Err(Error::CrfLength {
            expected: CRF_SAMPLES,
            got: irr.len(),
        });
    }
    CrfModel::from_table(irr, resp, sigma2_im, f_w_floor, i0)
}

pub fn write_crf(path: &Path, crf: &CrfModel) -> Result<()> {
    let mut s = String::from("# irradiance response\n");
    for (i, r) in crf.irradiance_samples().iter().zip(crf.response_samples()) {
        let _ = writeln!(s, "{i} {}", r.clamp(0.0, 1.0));
    }
    write_text(path, &s)
}

pub fn read_kernel(path: &Path) -> Result<Kernel> {
    let text = read_text(path)?;
    let mut taps = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(path, n + 1, msg);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [dx, dy, w] = fields.as_slice() else {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        };
        taps.push((
            dx.parse().map_err(|_| err(format!("invalid dx {dx:?}")))?,
            dy.parse().map_err(|_| err(format!("invalid dy {dy:?}")))?,
            w.parse().map_err(|_| err(format!("invalid weight {w:?}")))?,
        ));
    }
    Kernel::custom(taps)
}

pub fn write_kernel(path: &Path, kernel: &Kernel) -> Result<()> {
    let mut s = String::from("# dx dy weight\n");
    for t in kernel.taps() {
        let _ = writeln!(s, "{} {} {}", t.dx, t.dy, t.w);
    }
    write_text(path, &s)
}

/// When snapshots are taken.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Every `1 / hz` seconds from the start of the span.
    Rate(f64),
    /// At every event.
    PerEvent,
    List(Vec<Timestamp>),
}

impl Schedule {
    /// `rate:<hz>`, `events`, or `list:<t1>,<t2>,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "events" {
            return Ok(Schedule::PerEvent);
        }
        if let Some(hz) = s.strip_prefix("rate:") {
            let hz: f64 = hz.parse().map_err(|_| Error::invalid(format!("invalid rate {hz:?}")))?;
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(Error::NonPositive { name: "rate", value: hz });
            }
            return Ok(Schedule::Rate(hz));
        }
        if let Some(list) = s.strip_prefix("list:") {
            let mut times = list
                .split(',')
                .map(|t| parse_seconds(t).map_err(Error::InvalidParameter))
                .collect::<Result<Vec<_>>>()?;
            if times.is_empty() {
                return Err(Error::invalid("empty schedule list"));
            }
            times.sort();
            return Ok(Schedule::List(times));
        }
        Err(Error::invalid(format!("unknown schedule {s:?}; use rate:<hz>, events or list:<t,...>")))
    }

    /// Snapshot times over `[start, end)` (lists are used as given).
    pub fn times(&self, events: &[Event], start: Timestamp, end: Timestamp) -> Vec<Timestamp> {
        match self {
            Schedule::Rate(hz) => {
                let span = end.secs_since(start);
                let n = (span * hz + 1e-9).floor().max(0.0) as i64;
                (0..n)
                    .map(|k| start.offset_micros((k as f64 * 1e6 / hz).round() as i64))
                    .collect()
            }
            Schedule::PerEvent => events.iter().map(|e| e.t).collect(),
            Schedule::List(v) => v.clone(),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Schedule::Rate(hz) => write!(f, "rate:{hz}"),
            Schedule::PerEvent => write!(f, "events"),
            Schedule::List(v) => {
                let parts: Vec<String> = v.iter().map(|t| t.to_string()).collect();
                write!(f, "list:{}", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Maps `[lo, hi]` to `[0, 1]`.
    Fixed(f64, f64),
    /// Maps the sequence's 1st..99th percentile to `[0, 1]`.
    Percentile,
}

/// Snapshot file name: sequence number and microsecond timestamp.
pub fn snapshot_name(seq: usize, t: Timestamp, ext: &str) -> String {
    format!("{seq:06}_{}.{ext}", t.micros())
}

/// Timestamp encoded in a snapshot file name.
pub fn snapshot_time(name: &str) -> Option<Timestamp> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let (_, micros) = stem.split_once('_')?;
    micros.parse().ok().map(Timestamp::from_micros)
}

/// Writes log-intensity snapshots as images of `exp(L) - I0`.
pub fn write_output(
    dir: &Path,
    snapshots: &[(Timestamp, Image)],
    norm: Normalization,
    i0: f64,
    ext: &str,
    bits: u8,
) -> Result<Vec<PathBuf>> {
    if snapshots.is_empty() {
        return Err(Error::invalid("empty output schedule"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let intens: Vec<Image> = snapshots.iter().map(|(_, l)| crate::metrics::log_to_intensity(l, i0)).collect();
    let (lo, hi) = match norm {
        Normalization::Fixed(lo, hi) => (lo, hi),
        Normalization::Percentile => {
            let mut all: Vec<f64> = intens.iter().flat_map(|i| i.iter().copied()).collect();
            let lo = percentile(&mut all, 0.01);
            let hi = percentile(&mut all, 0.99);
            (lo, hi)
        }
    };
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
    snapshots
        .par_iter()
        .zip(intens.par_iter())
        .enumerate()
        .map(|(seq, ((t, _), img))| {
            let p = dir.join(snapshot_name(seq, *t, ext));
            write_image(&p, &img.mapv(|v| ((v - lo) * scale).clamp(0.0, 1.0)), bits)?;
            Ok(p)
        })
        .collect()
}

/// Every configurable key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("filter.mode", "cf | akf | highpass"),
    ("filter.alpha", "crossover gain in rad/s (also the start-up decay)"),
    ("filter.c", "contrast threshold, log intensity per event"),
    ("filter.p_init", "initial state covariance"),
    ("filter.l_init", "initial log intensity"),
    ("filter.scale_state", "true: scale event jumps by the calibrated threshold factor"),
    ("filter.sampling", "endpoints | start: where the frame reference is read within an interval"),
    ("noise.sigma2_proc", "process noise rate, per second"),
    ("noise.sigma2_iso", "isolated-pixel noise rate, per second"),
    ("noise.sigma2_ref", "refractory noise variance"),
    ("noise.rho_bar", "refractory period bound, seconds"),
    ("noise.radius", "neighbourhood radius in pixels"),
    ("noise.q_init", "event covariance for a pixel's first event"),
    ("crf.file", "CRF table path (default: linear)"),
    ("crf.profile", "davis240c | flir | dsec | hdr | sim"),
    ("crf.sigma2_im", "image noise scale (overrides the profile)"),
    ("crf.f_w_floor", "weighting floor capping the frame covariance"),
    ("crf.i0", "intensity offset inside the logarithm"),
    ("augment.mode", "full | zoh"),
    ("augment.ct_lo", "lower clamp of the threshold scaling"),
    ("augment.ct_hi", "upper clamp of the threshold scaling"),
    ("augment.min_abs", "smallest |event integral| used for calibration (default: c)"),
    ("augment.literal_blend", "true: far-anchor blend orientation"),
    ("conv.kernel", "identity | gaussian | sobelx | sobely | laplacian | gradient | custom"),
    ("conv.sigma", "Gaussian kernel sigma in pixels"),
    ("conv.file", "kernel file for custom kernels"),
    ("output.schedule", "rate:<hz> | events | list:<t,...>"),
    ("output.dir", "output directory"),
    ("output.normalize", "fixed | percentile"),
    ("output.range_lo", "fixed normalisation lower intensity"),
    ("output.range_hi", "fixed normalisation upper intensity"),
    ("output.format", "png | pgm"),
    ("output.bits", "8 | 16"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub filter: FilterParams,
    pub crf_file: Option<PathBuf>,
    pub profile: Option<SensorProfile>,
    pub sigma2_im: Option<f64>,
    pub f_w_floor: f64,
    pub i0: f64,
    pub augment: AugmentParams,
    pub kernel: String,
    pub kernel_sigma: f64,
    pub kernel_file: Option<PathBuf>,
    pub schedule: Schedule,
    pub output_dir: PathBuf,
    pub normalize_percentile: bool,
    pub range: (f64, f64),
    pub format: String,
    pub bits: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: FilterParams::default(),
            crf_file: None,
            profile: None,
            sigma2_im: None,
            f_w_floor: 0.01,
            i0: 0.01,
            augment: AugmentParams::default(),
            kernel: "identity".into(),
            kernel_sigma: 1.0,
            kernel_file: None,
            schedule: Schedule::Rate(30.0),
            output_dir: PathBuf::from("out"),
            normalize_percentile: false,
            range: (0.0, 1.0),
            format: "png".into(),
            bits: 8,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("invalid boolean {v:?}"))),
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::invalid(format!("{key}: invalid number {v:?}")))?;
    if !x.is_finite() {
        return Err(Error::invalid(format!("{key}: {v} is not finite")));
    }
    Ok(x)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let f = |v: &str| parse_f64(key, v);
        match key {
            "filter.mode" => self.filter.mode = FilterMode::parse(v)?,
            "filter.alpha" => self.filter.alpha = f(v)?,
            "filter.c" => self.filter.c = f(v)?,
            "filter.p_init" => self.filter.p_init = f(v)?,
            "filter.l_init" => self.filter.l_init = f(v)?,
            "filter.scale_state" => self.filter.scale_state = parse_bool(v)?,
            "filter.sampling" => {
                self.filter.sampling = match v {
                    "endpoints" => ReferenceSampling::Endpoints,
                    "start" => ReferenceSampling::IntervalStart,
                    _ => return Err(Error::invalid(format!("invalid sampling {v:?}"))),
                }
            }
            "noise.sigma2_proc" => self.filter.noise.sigma2_proc = f(v)?,
            "noise.sigma2_iso" => self.filter.noise.sigma2_iso = f(v)?,
            "noise.sigma2_ref" => self.filter.noise.sigma2_ref = f(v)?,
            "noise.rho_bar" => self.filter.noise.rho_bar = f(v)?,
            "noise.radius" => {
                self.filter.noise.neighborhood_radius = v.parse().map_err(|_| Error::invalid(format!("invalid radius {v:?}")))?
            }
            "noise.q_init" => self.filter.noise.q_init = f(v)?,
            "crf.file" => self.crf_file = Some(PathBuf::from(v)),
            "crf.profile" => self.profile = Some(SensorProfile::parse(v)?),
            "crf.sigma2_im" => self.sigma2_im = Some(f(v)?),
            "crf.f_w_floor" => self.f_w_floor = f(v)?,
            "crf.i0" => self.i0 = f(v)?,
            "augment.mode" => self.augment.mode = AugmentMode::parse(v)?,
            "augment.ct_lo" => self.augment.ct_clamp.0 = f(v)?,
            "augment.ct_hi" => self.augment.ct_clamp.1 = f(v)?,
            "augment.min_abs" => self.augment.min_abs_integral = Some(f(v)?),
            "augment.literal_blend" => self.augment.literal_blend = parse_bool(v)?,
            "conv.kernel" => self.kernel = v.to_ascii_lowercase(),
            "conv.sigma" => self.kernel_sigma = f(v)?,
            "conv.file" => self.kernel_file = Some(PathBuf::from(v)),
            "output.schedule" => self.schedule = Schedule::parse(v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "output.normalize" => {
                self.normalize_percentile = match v {
                    "fixed" => false,
                    "percentile" => true,
                    _ => return Err(Error::invalid(format!("invalid normalisation {v:?}"))),
                }
            }
            "output.range_lo" => self.range.0 = f(v)?,
            "output.range_hi" => self.range.1 = f(v)?,
            "output.format" => {
                if v != "png" && v != "pgm" {
                    return Err(Error::invalid(format!("invalid output format {v:?}")));
                }
                self.format = v.to_string()
            }
            "output.bits" => {
                self.bits = match v {
                    "8" => 8,
                    "16" => 16,
                    _ => return Err(Error::invalid(format!("invalid bit depth {v:?}"))),
                }
            }
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v, line) in parse_key_values(text, path)? {
            cfg.set(&k, &v).map_err(|e| Error::parse(path, line, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse_str(&read_text(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.augment.validate()?;
        if !(self.i0 > 0.0) {
            return Err(Error::NonPositive { name: "i0", value: self.i0 });
        }
        if !(self.f_w_floor > 0.0 && self.f_w_floor <= 1.0) {
            return Err(Error::invalid(format!("f_w_floor {} must be in (0, 1]", self.f_w_floor)));
        }
        if !(self.range.1 > self.range.0) {
            return Err(Error::invalid("output range must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn normalization(&self) -> Normalization {
        if self.normalize_percentile {
            Normalization::Percentile
        } else {
            Normalization::Fixed(self.range.0, self.range.1)
        }
    }

    /// Camera response model implied by the file, profile and overrides.
    pub fn crf(&self, base_dir: Option<&Path>) -> Result<CrfModel> {
        let sigma2_im = self
            .sigma2_im
            .or(self.profile.map(SensorProfile::sigma2_im))
            .unwrap_or(SensorProfile::Sim.sigma2_im());
        match &self.crf_file {
            Some(p) => {
                let p = resolve(base_dir, p);
                read_crf(&p, sigma2_im, self.f_w_floor, self.i0)
            }
            None => CrfModel::from_fn(|i| i, sigma2_im, self.f_w_floor, self.i0),
        }
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, n + 1, "expected key = value"));
        };
        out.push((k.trim().to_string(), v.trim().to_string(), n + 1));
    }
    Ok(out)
}

/// Locations and geometry of a dataset on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub events: PathBuf,
    pub frame_index: PathBuf,
    pub frame_dir: PathBuf,
    pub width: usize,
    pub height: usize,
    pub crf: Option<PathBuf>,
    pub profile: Option<String>,
}

impl DatasetManifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut map = BTreeMap::new();
        for (k, v, line) in parse_key_values(&text, path)? {
            if !matches!(k.as_str(), "events" | "frames.index" | "frames.dir" | "width" | "height" | "crf" | "profile") {
                return Err(Error::parse(path, line, format!("unknown manifest key {k:?}")));
            }
            map.insert(k, v);
        }
        let need = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::parse(path, 0, format!("missing manifest key {k:?}")))
        };
        let dim = |k: &str| -> Result<usize> {
            need(k)?
                .parse()
                .map_err(|_| Error::parse(path, 0, format!("invalid {k}")))
        };
        let m = DatasetManifest {
            events: base.join(need("events")?),
            frame_index: base.join(need("frames.index")?),
            frame_dir: base.join(map.get("frames.dir").cloned().unwrap_or_else(|| ".".into())),
            width: dim("width")?,
            height: dim("height")?,
            crf: map.get("crf").map(|c| base.join(c)),
            profile: map.get("profile").cloned(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.events, &self.frame_index] {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
        }
        if let Some(c) = &self.crf {
            if !c.is_file() {
                return Err(Error::io(c, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Geometry("manifest geometry must be nonzero".into()));
        }
        Ok(())
    }

    /// Writes the manifest with paths relative to `dir`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut s = String::new();
        let _ = writeln!(s, "events = {}", rel(&self.events));
        let _ = writeln!(s, "frames.index = {}", rel(&self.frame_index));
        let _ = writeln!(s, "frames.dir = {}", rel(&self.frame_dir));
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        if let Some(c) = &self.crf {
            let _ = writeln!(s, "crf = {}", rel(c));
        }
        if let Some(p) = &self.profile {
            let _ = writeln!(s, "profile = {p}");
        }
        write_text(path, &s)
    }

    /// Events and frames, with the geometry checked against both.
    pub fn load(&self) -> Result<(EventFile, Vec<Frame>)> {
        let events = read_events(&self.events)?;
        if let Some(g) = events.geometry {
            if g != (self.width, self.height) {
                return Err(Error::Geometry(format!(
                    "event header {g:?} differs from manifest {:?}",
                    (self.width, self.height)
                )));
            }
        }
        let frames = read_frames(&self.frame_index, &self.frame_dir, Some((self.width, self.height)))?;
        Ok((events, frames))
    }
}
