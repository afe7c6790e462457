//! Synthetic scenes with exact ground truth, event synthesis by threshold
//! crossing and exposure-integrated frame synthesis.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::CrfModel;
use crate::types::{Event, Frame, Image, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneComponent {
    Constant(f64),
    /// `base + rate t + gx x + gy y`.
    LinearRamp { base: f64, rate: f64, gx: f64, gy: f64 },
    /// `amp sin(2 pi (u - speed t) / wavelength + phase)` along direction `angle`.
    MovingSinusoid {
        amp: f64,
        wavelength: f64,
        angle: f64,
        speed: f64,
        phase: f64,
    },
    /// Step of height `delta` on pixels the edge front has passed. The front is
    /// at `pos0 + velocity t` along direction `angle`; `width` 0 is a hard edge.
    MovingEdge {
        delta: f64,
        pos0: f64,
        velocity: f64,
        angle: f64,
        width: f64,
    },
}

impl SceneComponent {
    #[inline]
    fn along(angle: f64, x: f64, y: f64) -> f64 {
        x * angle.cos() + y * angle.sin()
    }

    #[inline]
    fn eval(&self, x: f64, y: f64, t: f64, left: bool) -> f64 {
        match *self {
            SceneComponent::Constant(v) => v,
            SceneComponent::LinearRamp { base, rate, gx, gy } => base + rate * t + gx * x + gy * y,
            SceneComponent::MovingSinusoid {
                amp,
                wavelength,
                angle,
                speed,
                phase,
            } => amp * (2.0 * PI * (Self::along(angle, x, y) - speed * t) / wavelength + phase).sin(),
            SceneComponent::MovingEdge {
                delta,
                pos0,
                velocity,
                angle,
                width,
            } => {
                let u = Self::along(angle, x, y);
                if width > 0.0 {
                    delta * 0.5 * (1.0 + ((pos0 + velocity * t - u) / width).tanh())
                } else {
                    // compared in time against the same expression as the
                    // breakpoint; at the crossing instant the post-crossing value holds
                    let passed = if velocity == 0.0 {
                        pos0 - u > 0.0
                    } else {
                        let tb = (u - pos0) / velocity;
                        if t == tb {
                            (velocity > 0.0) != left
                        } else {
                            (t > tb) == (velocity > 0.0)
                        }
                    };
                    if passed {
                        delta
                    } else {
                        0.0
                    }
                }
            }
        }
    }

    /// Bound on `|dL/dt|` of the continuous part.
    fn rate_bound(&self) -> f64 {
        match *self {
            SceneComponent::Constant(_) => 0.0,
            SceneComponent::LinearRamp { rate, .. } => rate.abs(),
            SceneComponent::MovingSinusoid {
                amp, wavelength, speed, ..
            } => (amp * 2.0 * PI * speed / wavelength).abs(),
            SceneComponent::MovingEdge {
                delta, velocity, width, ..
            } => {
                if width > 0.0 {
                    (delta * velocity / (2.0 * width)).abs()
                } else {
                    0.0
                }
            }
        }
    }

    fn breakpoint(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            SceneComponent::MovingEdge {
                pos0,
                velocity,
                angle,
                width,
                ..
            } if width == 0.0 && velocity != 0.0 => Some((Self::along(angle, x, y) - pos0) / velocity),
            _ => None,
        }
    }
}

/// Log-intensity field over a pixel grid; components add.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub components: Vec<SceneComponent>,
}

impl Scene {
    pub fn new(width: usize, height: usize, components: Vec<SceneComponent>) -> Self {
        Scene {
            width,
            height,
            components,
        }
    }

    #[inline]
    pub fn eval(&self, x: usize, y: usize, t: f64) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        self.components.iter().map(|c| c.eval(xf, yf, t, false)).sum()
    }

    /// Left limit in time.
    #[inline]
    pub fn eval_left(&self, x: usize, y: usize, t: f64) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        self.components.iter().map(|c| c.eval(xf, yf, t, true)).sum()
    }

    pub fn rate_bound(&self) -> f64 {
        self.components.iter().map(|c| c.rate_bound()).sum()
    }

    /// Sorted times in `(t0, t1]` where the pixel value jumps.
    pub fn breakpoints(&self, x: usize, y: usize, t0: f64, t1: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .components
            .iter()
            .filter_map(|c| c.breakpoint(x as f64, y as f64))
            .filter(|&t| t > t0 && t <= t1)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Exact log-intensity image at `t` seconds.
    pub fn ground_truth(&self, t: f64) -> Image {
        Image::from_shape_fn((self.height, self.width), |(y, x)| self.eval(x, y, t))
    }

    /// Built-in scenes: `hdr` (drifting sinusoid under a bright moving step),
    /// `edge` (hard edge crossing the sensor) and `ramp` (uniform brightening).
    pub fn preset(name: &str, width: usize, height: usize) -> Result<Self> {
        let w = width as f64;
        let components = match name {
            "hdr" => vec![
                SceneComponent::Constant(0.3f64.ln()),
                SceneComponent::MovingSinusoid {
                    amp: 0.8,
                    wavelength: w / 3.0,
                    angle: 0.4,
                    speed: w / 6.0,
                    phase: 0.0,
                },
                SceneComponent::MovingEdge {
                    delta: 1.6,
                    pos0: -0.1 * w,
                    velocity: w / 3.0,
                    angle: 0.0,
                    width: 1.5,
                },
            ],
            "edge" => vec![
                SceneComponent::Constant(0.2f64.ln()),
                SceneComponent::MovingEdge {
                    delta: 1.0,
                    pos0: 0.5,
                    velocity: 100.0,
                    angle: 0.0,
                    width: 0.0,
                },
            ],
            "ramp" => vec![SceneComponent::LinearRamp {
                base: 0.1f64.ln(),
                rate: 1.0,
                gx: 0.5 / w,
                gy: 0.0,
            }],
            other => return Err(Error::invalid(format!("unknown scene preset {other:?}; use hdr, edge or ramp"))),
        };
        Ok(Scene::new(width, height, components))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    /// Contrast threshold, used where `c_map` is absent.
    pub c: f64,
    /// Per-pixel thresholds.
    pub c_map: Option<Image>,
    /// Seconds; events closer than this to the previous one at a pixel are lost.
    pub refractory: f64,
    /// Standard deviation of the per-event threshold, relative to the threshold.
    pub threshold_jitter: f64,
    /// Spurious events per pixel per second.
    pub noise_rate: f64,
    pub fps: f64,
    pub exposure: f64,
    /// Midpoint of the first frame; `None` starts the first exposure at 0.
    pub first_frame: Option<f64>,
    /// Irradiance band passed by the frame sensor.
    pub clip: (f64, f64),
    pub frame_noise_std: f64,
    pub quantize: bool,
    pub i0: f64,
    /// Crossing-time resolution of the event search, seconds.
    pub time_tolerance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 1.0,
            c: 0.1,
            c_map: None,
            refractory: 0.0,
            threshold_jitter: 0.0,
            noise_rate: 0.0,
            fps: 30.0,
            exposure: 0.0,
            first_frame: None,
            clip: (0.0, 1.0),
            frame_noise_std: 0.0,
            quantize: true,
            i0: 0.01,
            time_tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::NonPositive {
                name: "duration",
                value: self.duration,
            });
        }
        if !(self.c > 0.0) {
            return Err(Error::NonPositive { name: "c", value: self.c });
        }
        if let Some(m) = &self.c_map {
            if m.dim() != (scene.height, scene.width) {
                return Err(Error::ShapeMismatch {
                    left: m.dim(),
                    right: (scene.height, scene.width),
                });
            }
            if m.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("threshold map entries must be positive"));
            }
        }
        if !(self.fps > 0.0) {
            return Err(Error::NonPositive { name: "fps", value: self.fps });
        }
        if !(self.exposure >= 0.0 && self.exposure < 1.0 / self.fps) {
            return Err(Error::invalid(format!(
                "exposure {} must be in [0, frame spacing {})",
                self.exposure,
                1.0 / self.fps
            )));
        }
        if self.refractory < 0.0 || self.threshold_jitter < 0.0 || self.noise_rate < 0.0 || self.frame_noise_std < 0.0 {
            return Err(Error::invalid("refractory, jitter and noise settings must be >= 0"));
        }
        let (lo, hi) = self.clip;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!("clip band [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")));
        }
        if !(self.time_tolerance > 0.0) {
            return Err(Error::NonPositive {
                name: "time_tolerance",
                value: self.time_tolerance,
            });
        }
        if scene.width == 0 || scene.height == 0 || scene.width > 65_536 || scene.height > 65_536 {
            return Err(Error::Geometry(format!("unsupported scene size {}x{}", scene.width, scene.height)));
        }
        Ok(())
    }

    pub fn threshold(&self, x: usize, y: usize) -> f64 {
        self.c_map.as_ref().map_or(self.c, |m| m[[y, x]])
    }

    /// Exposure midpoints of all frames that fit in the duration.
    pub fn frame_times(&self) -> Vec<f64> {
        let first = self.first_frame.unwrap_or(self.exposure / 2.0);
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let t = first + f64::from(k) / self.fps;
            if t + self.exposure / 2.0 > self.duration + 1e-12 {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }
}

/// First `t` in `[a, b]` at which `f` leaves `(lo, hi)`, given `|f'| <= k`.
/// Intervals that cannot reach either bound are pruned.
fn first_exit(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, lo: f64, hi: f64, k: f64, tol: f64) -> Option<(f64, f64)> {
    let reach_hi = 0.5 * (fa + fb + k * (b - a));
    let reach_lo = 0.5 * (fa + fb - k * (b - a));
    if reach_hi < hi && reach_lo > lo {
        return None;
    }
    if b - a <= tol {
        return (fb >= hi || fb <= lo).then_some((b, fb));
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    if fm >= hi || fm <= lo {
        // exit happened in (a, m]
        return first_exit(f, a, fa, m, fm, lo, hi, k, tol).or(Some((m, fm)));
    }
    first_exit(f, a, fa, m, fm, lo, hi, k, tol).or_else(|| first_exit(f, m, fm, b, fb, lo, hi, k, tol))
}

struct PixelEmitter<'a> {
    out: Vec<(i64, i8)>,
    last_us: Option<i64>,
    refractory_us: f64,
    rng: &'a mut ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    c: f64,
}

impl PixelEmitter<'_> {
    fn next_threshold(&mut self) -> f64 {
        match &self.jitter {
            Some(n) => (self.c * (1.0 + n.sample(self.rng))).max(0.05 * self.c),
            None => self.c,
        }
    }

    fn emit(&mut self, t: f64, polarity: i8) {
        let us = Timestamp::from_secs_f64(t).micros();
        if let Some(last) = self.last_us {
            if ((us - last) as f64) < self.refractory_us {
                return;
            }
        }
        self.last_us = Some(us);
        self.out.push((us, polarity));
    }
}

fn pixel_events(scene: &Scene, cfg: &SimConfig, x: usize, y: usize) -> Vec<(i64, i8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((y * scene.width + x) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let jitter = (cfg.threshold_jitter > 0.0).then(|| Normal::new(0.0, cfg.threshold_jitter).expect("finite std"));
    let mut em = PixelEmitter {
        out: Vec::new(),
        last_us: None,
        refractory_us: cfg.refractory * 1e6,
        rng: &mut rng,
        jitter,
        c: cfg.threshold(x, y),
    };
    let k = scene.rate_bound();
    let mut reference = scene.eval(x, y, 0.0);
    let mut th_up = em.next_threshold();
    let mut th_down = em.next_threshold();
    let mut breaks = scene.breakpoints(x, y, 0.0, cfg.duration);
    breaks.push(f64::INFINITY);
    let mut a = 0.0;
    for &bp in &breaks {
        let end = bp.min(cfg.duration);
        // continuous part on [a, end)
        let f = |t: f64| if t >= bp { scene.eval_left(x, y, bp) } else { scene.eval(x, y, t) };
        if k > 0.0 {
            loop {
                let fa = f(a);
                let fb = f(end);
                let Some((tc, _)) = first_exit(&f, a, fa, end, fb, reference - th_down, reference + th_up, k, cfg.time_tolerance) else {
                    break;
                };
                let fc = f(tc);
                if fc >= reference + th_up {
                    reference += th_up;
                    em.emit(tc, 1);
                    th_up = em.next_threshold();
                } else {
                    reference -= th_down;
                    em.emit(tc, -1);
                    th_down = em.next_threshold();
                }
                a = tc;
            }
        }
        if !bp.is_finite() || bp > cfg.duration {
            break;
        }
        // jump at the breakpoint
        let v = scene.eval(x, y, bp);
        loop {
            if v - reference >= th_up - 1e-9 * th_up {
                reference += th_up;
                em.emit(bp, 1);
                th_up = em.next_threshold();
            } else if reference - v >= th_down - 1e-9 * th_down {
                reference -= th_down;
                em.emit(bp, -1);
                th_down = em.next_threshold();
            } else {
                break;
            }
        }
        a = bp;
    }
    let mut events = em.out;
    if cfg.noise_rate > 0.0 {
        let gap = Exp::new(cfg.noise_rate).expect("positive rate");
        let mut t = gap.sample(&mut rng);
        let mut noise = Vec::new();
        while t < cfg.duration {
            noise.push((Timestamp::from_secs_f64(t).micros(), if rng.random_bool(0.5) { 1 } else { -1 }));
            t += gap.sample(&mut rng);
        }
        events.extend(noise);
        events.sort_by_key(|e| e.0);
    }
    events
}

/// Threshold-crossing events of the scene over `[0, duration]`, sorted by
/// time, then row, then column.
pub fn simulate_events(scene: &Scene, cfg: &SimConfig) -> Result<Vec<Event>> {
    cfg.validate(scene)?;
    let w = scene.width;
    let per_pixel: Vec<Vec<(i64, i8)>> = (0..w * scene.height)
        .into_par_iter()
        .map(|i| pixel_events(scene, cfg, i % w, i / w))
        .collect();
    let mut events: Vec<Event> = Vec::with_capacity(per_pixel.iter().map(Vec::len).sum());
    for (i, list) in per_pixel.into_iter().enumerate() {
        let (x, y) = ((i % w) as u16, (i / w) as u16);
        events.extend(list.into_iter().map(|(t, p)| Event::new(Timestamp::from_micros(t), x, y, p)));
    }
    events.sort_by_key(|e| (e.t, e.y, e.x));
    Ok(events)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Mean of `exp(L) - I0` over `[t - T/2, t + T/2]` at one pixel; hard edges
/// split the quadrature.
pub fn exposure_mean(scene: &Scene, x: usize, y: usize, t_mid: f64, exposure: f64, i0: f64) -> f64 {
    if exposure <= 0.0 {
        return scene.eval(x, y, t_mid).exp() - i0;
    }
    let (s, e) = (t_mid - exposure / 2.0, t_mid + exposure / 2.0);
    let mut cuts = vec![s];
    cuts.extend(scene.breakpoints(x, y, s, e));
    if *cuts.last().unwrap() < e {
        cuts.push(e);
    }
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // left limit at the segment end, right value at its start
        let f = |t: f64| if t >= b { scene.eval_left(x, y, b).exp() } else { scene.eval(x, y, t).exp() };
        total += integrate(&f, a, b, 1e-13 * (b - a).max(1e-9));
    }
    total / exposure - i0
}

/// Frames of the scene through the clip band, the CRF, optional noise and
/// optional 8-bit quantisation.
pub fn simulate_frames(scene: &Scene, cfg: &SimConfig, crf: &CrfModel) -> Result<Vec<Frame>> {
    cfg.validate(scene)?;
    let (w, h) = (scene.width, scene.height);
    cfg.frame_times()
        .into_par_iter()
        .enumerate()
        .map(|(k, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5851_F42D_4C95_7F2D).wrapping_add(k as u64));
            let noise = (cfg.frame_noise_std > 0.0).then(|| Normal::new(0.0, cfg.frame_noise_std).expect("finite std"));
            let mut resp = Image::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let i = exposure_mean(scene, x, y, t, cfg.exposure, cfg.i0).clamp(cfg.clip.0, cfg.clip.1);
                    let mut v = crf.forward(i);
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    v = v.clamp(0.0, 1.0);
                    if cfg.quantize {
                        v = (v * 255.0).round() / 255.0;
                    }
                    resp[[y, x]] = v;
                }
            }
            Frame::new(Timestamp::from_secs_f64(t), cfg.exposure, resp)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub frames: Vec<Frame>,
    /// Response model of the simulated frame sensor (clip band folded in).
    pub crf: CrfModel,
}

pub fn simulate(scene: &Scene, cfg: &SimConfig, crf: &CrfModel) -> Result<SimOutput> {
    Ok(SimOutput {
        events: simulate_events(scene, cfg)?,
        frames: simulate_frames(scene, cfg, crf)?,
        crf: crf.clip_band(cfg.clip.0, cfg.clip.1)?,
    })
}

/// Generates a random threshold map within `c (1 +- spread)`.
pub fn perturbed_threshold_map(width: usize, height: usize, c: f64, spread: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_shape_fn((height, width), |_| c * (1.0 + rng.random_range(-spread..=spread)))
}
