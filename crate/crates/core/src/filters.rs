//! Per-pixel asynchronous filters.
//!
//! Each pixel holds a log-intensity estimate that decays towards a frame
//! reference between updates and jumps by the contrast threshold at events.
//! Interval solutions are closed form, so the state can be read at any time
//! without stepping.

use rayon::prelude::*;

use crate::conv::Kernel;
use crate::error::{Error, Result};
use crate::noise::{EventNoiseParams, NoiseHistory};
use crate::timeline::{ItemKind, TimelineItem};
use crate::types::{Event, Image, Timestamp};

const P_FLOOR: f64 = 1e-12;

/// `e^{-alpha dt} l_i + (1 - e^{-alpha dt}) l_a`.
pub fn cf_interval(l_hat_i: f64, l_a: f64, alpha: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return l_hat_i;
    }
    let x = -alpha * dt;
    x.exp() * l_hat_i - x.exp_m1() * l_a
}

/// State immediately after an event of the given polarity.
pub fn event_jump(l_hat_minus: f64, polarity: i8, c_effective: f64) -> Result<f64> {
    if !(c_effective > 0.0) {
        return Err(Error::NonPositive {
            name: "c_effective",
            value: c_effective,
        });
    }
    Ok(l_hat_minus + c_effective * f64::from(polarity))
}

/// The state is continuous across a frame boundary.
pub fn frame_boundary(l_hat_minus: f64) -> f64 {
    l_hat_minus
}

pub fn highpass_interval(l_hat_i: f64, alpha: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return l_hat_i;
    }
    (-alpha * dt).exp() * l_hat_i
}

/// Covariance after `dt` seconds of measurement with covariance `r`.
pub fn riccati_interval(p_i: f64, r: f64, dt: f64) -> Result<f64> {
    if !(p_i > 0.0) {
        return Err(Error::NonPositive { name: "P", value: p_i });
    }
    if !(r > 0.0) {
        return Err(Error::NonPositive { name: "R", value: r });
    }
    if dt < 0.0 {
        return Err(Error::NegativeInterval(dt));
    }
    Ok(riccati(p_i, r, dt))
}

#[inline]
fn riccati(p_i: f64, r: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return p_i;
    }
    (1.0 / (1.0 / p_i + dt / r)).max(P_FLOOR)
}

pub fn riccati_event_update(p_minus: f64, q: f64) -> f64 {
    p_minus + q
}

pub fn kalman_gain(p: f64, r: f64) -> f64 {
    p / r
}

/// Kalman interval solution with reference `l_a_i` at the interval start and
/// `l_a_t` at the query time.
pub fn akf_interval(l_hat_i: f64, l_a_i: f64, l_a_t: f64, p_i: f64, r: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        return l_hat_i + (l_a_t - l_a_i);
    }
    let inv_p = 1.0 / p_i;
    (l_hat_i - l_a_i) * inv_p / (inv_p + dt / r) + l_a_t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    Cf,
    HighPass,
    Akf,
}

impl FilterMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cf" => Ok(FilterMode::Cf),
            "highpass" | "hp" => Ok(FilterMode::HighPass),
            "akf" => Ok(FilterMode::Akf),
            other => Err(Error::invalid(format!("unknown filter mode {other:?}"))),
        }
    }
}

/// Where the frame reference is read within an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSampling {
    /// At the interval start and at the query time. The estimate then follows
    /// every change of the reference, whatever the gain.
    Endpoints,
    /// Held at its interval-start value, so that between updates only the
    /// gain moves the estimate towards the reference.
    IntervalStart,
}

/// Left or right limit of a piecewise signal at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Excludes events stamped exactly at `t`.
    Before,
    /// Includes events stamped at `t`.
    After,
}

/// Continuous-time frame reference `L^A` and its covariance `R`.
pub trait Reference: Sync {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64;
    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64;
    /// Per-pixel scaling of the contrast threshold active at `t`.
    fn contrast_scale(&self, _x: usize, _y: usize, _t: Timestamp) -> f64 {
        1.0
    }
}

impl<T: Reference + ?Sized> Reference for &T {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64 {
        (**self).log_intensity(x, y, t, side)
    }
    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        (**self).covariance(x, y, t)
    }
    fn contrast_scale(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        (**self).contrast_scale(x, y, t)
    }
}

/// Reference for event-only filtering; never consulted in high-pass mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoReference;

impl Reference for NoReference {
    fn log_intensity(&self, _: usize, _: usize, _: Timestamp, _: Side) -> f64 {
        0.0
    }
    fn covariance(&self, _: usize, _: usize, _: Timestamp) -> f64 {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub mode: FilterMode,
    /// Crossover gain, rad/s. Also the decay rate before the first frame.
    pub alpha: f64,
    /// Contrast threshold, log intensity per event.
    pub c: f64,
    pub p_init: f64,
    pub l_init: f64,
    /// Multiply event jumps by the reference's contrast scale.
    pub scale_state: bool,
    pub sampling: ReferenceSampling,
    pub noise: EventNoiseParams,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            mode: FilterMode::Akf,
            alpha: 20.0,
            c: 0.1,
            p_init: 100.0,
            l_init: (0.5f64 + 0.01).ln(),
            scale_state: false,
            sampling: ReferenceSampling::IntervalStart,
            noise: EventNoiseParams::default(),
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) && self.mode != FilterMode::Akf {
            return Err(Error::NonPositive {
                name: "alpha",
                value: self.alpha,
            });
        }
        if !(self.c > 0.0) {
            return Err(Error::NonPositive { name: "c", value: self.c });
        }
        if !(self.p_init > 0.0) {
            return Err(Error::NonPositive {
                name: "p_init",
                value: self.p_init,
            });
        }
        if !self.l_init.is_finite() {
            return Err(Error::invalid("l_init must be finite"));
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelState {
    pub l_hat: f64,
    pub p: f64,
    pub t_last: Timestamp,
    /// Reference value the state was committed against.
    pub l_ref: f64,
    /// Covariance held over the current interval.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterStats {
    pub events: u64,
    pub skipped: u64,
    pub frames: u64,
    /// Per-pixel state updates caused by events (one per landed kernel tap).
    pub state_updates: u64,
}

/// One event-driven state update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub x: usize,
    pub y: usize,
    pub t: Timestamp,
    /// Committed covariance at the start of the interval ending here.
    pub p_start: f64,
    pub l_minus: f64,
    pub l_plus: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    pub q: f64,
    pub magnitude: f64,
    /// Frame covariance in effect over the interval ending here.
    pub r_interval: f64,
    /// Frame covariance committed with the update.
    pub r: f64,
}

/// Image-wide filter state driven by a timeline.
pub struct AsyncFilter<R: Reference> {
    params: FilterParams,
    width: usize,
    height: usize,
    reference: R,
    pixels: Vec<PixelState>,
    noise: NoiseHistory,
    kernel: Option<Kernel>,
    started: bool,
    cursor: Timestamp,
    stats: FilterStats,
    trace: Option<Vec<TraceRecord>>,
}

impl<R: Reference> AsyncFilter<R> {
    pub fn new(params: FilterParams, width: usize, height: usize, reference: R, stream_start: Timestamp) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 || width > usize::from(u16::MAX) + 1 || height > usize::from(u16::MAX) + 1 {
            return Err(Error::Geometry(format!("unsupported image size {width}x{height}")));
        }
        let init = PixelState {
            l_hat: params.l_init,
            p: params.p_init,
            t_last: stream_start,
            l_ref: 0.0,
            r: f64::INFINITY,
        };
        Ok(AsyncFilter {
            params,
            width,
            height,
            reference,
            pixels: vec![init; width * height],
            noise: NoiseHistory::new(width, height, params.noise.neighborhood_radius, stream_start),
            kernel: None,
            started: false,
            cursor: stream_start,
            stats: FilterStats::default(),
            trace: None,
        })
    }

    /// Expands every event through `kernel`; initial estimates are scaled by
    /// the kernel sum so they match a convolved constant image.
    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        let sum = kernel.sum();
        for px in &mut self.pixels {
            px.l_hat = self.params.l_init * sum;
        }
        self.kernel = Some(kernel);
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stats(&self) -> FilterStats {
        self.stats
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn reference(&self) -> &R {
        &self.reference
    }

    /// Time of the latest processed timeline item.
    pub fn cursor(&self) -> Timestamp {
        self.cursor
    }

    pub fn pixel(&self, x: usize, y: usize) -> &PixelState {
        &self.pixels[y * self.width + x]
    }

    /// Committed covariance image.
    pub fn covariance_image(&self) -> Image {
        Image::from_shape_fn((self.height, self.width), |(y, x)| self.pixels[y * self.width + x].p)
    }

    fn uses_reference(&self) -> bool {
        self.started && self.params.mode != FilterMode::HighPass
    }

    /// Interval solution for one pixel at `t >= t_last`, as `(L, P)`.
    #[inline]
    fn evaluate(&self, idx: usize, x: usize, y: usize, t: Timestamp, side: Side) -> (f64, f64) {
        let st = &self.pixels[idx];
        if t == st.t_last {
            return (st.l_hat, st.p);
        }
        let dt = t.secs_since(st.t_last);
        if !self.uses_reference() {
            return (highpass_interval(st.l_hat, self.params.alpha, dt), st.p);
        }
        let l_a = match self.params.sampling {
            ReferenceSampling::Endpoints => self.reference.log_intensity(x, y, t, side),
            ReferenceSampling::IntervalStart => st.l_ref,
        };
        match self.params.mode {
            FilterMode::Cf => (cf_interval(st.l_hat - st.l_ref + l_a, l_a, self.params.alpha, dt), st.p),
            FilterMode::Akf => {
                let p = riccati(st.p, st.r, dt);
                (akf_interval(st.l_hat, st.l_ref, l_a, st.p, st.r, dt), p)
            }
            FilterMode::HighPass => unreachable!(),
        }
    }

    #[inline]
    fn commit(&mut self, idx: usize, x: usize, y: usize, t: Timestamp, l: f64, p: f64) {
        let (l_ref, r) = if self.uses_reference() {
            (
                self.reference.log_intensity(x, y, t, Side::After),
                self.reference.covariance(x, y, t),
            )
        } else {
            (0.0, f64::INFINITY)
        };
        self.pixels[idx] = PixelState {
            l_hat: l,
            p: p.max(P_FLOOR),
            t_last: t,
            l_ref,
            r,
        };
    }

    fn check_order(&self, t: Timestamp) -> Result<()> {
        if t < self.cursor {
            return Err(Error::RetroQuery {
                query: t,
                committed: self.cursor,
                x: 0,
                y: 0,
            });
        }
        Ok(())
    }

    /// Frame boundary: every pixel is brought to `t` and re-anchored on the
    /// reference. The first boundary ends the event-only start-up phase.
    pub fn apply_frame(&mut self, t: Timestamp) -> Result<()> {
        self.check_order(t)?;
        self.cursor = t;
        self.stats.frames += 1;
        if self.params.mode == FilterMode::HighPass {
            return Ok(());
        }
        let was_started = self.started;
        let w = self.width;
        let evaluated: Vec<(f64, f64)> = (0..self.pixels.len())
            .into_par_iter()
            .map(|i| self.evaluate(i, i % w, i / w, t, Side::Before))
            .collect();
        self.started = true;
        let refs: Vec<(f64, f64)> = (0..self.pixels.len())
            .into_par_iter()
            .map(|i| {
                let (x, y) = (i % w, i / w);
                (
                    self.reference.log_intensity(x, y, t, Side::After),
                    self.reference.covariance(x, y, t),
                )
            })
            .collect();
        for (i, ((l, p), (l_ref, r))) in evaluated.into_iter().zip(refs).enumerate() {
            self.pixels[i] = PixelState {
                l_hat: frame_boundary(l),
                p: p.max(P_FLOOR),
                t_last: t,
                l_ref,
                r,
            };
        }
        if !was_started {
            log::debug!("first frame at {t}: switching from high-pass start-up");
        }
        Ok(())
    }

    /// One state update of magnitude `magnitude` and covariance increment `q`.
    #[inline]
    fn impulse(&mut self, x: usize, y: usize, t: Timestamp, magnitude: f64, q: f64) {
        let idx = y * self.width + x;
        let p_start = self.pixels[idx].p;
        let r_interval = self.pixels[idx].r;
        let (l_minus, p_minus) = self.evaluate(idx, x, y, t, Side::Before);
        let l_plus = l_minus + magnitude;
        let p_plus = riccati_event_update(p_minus, q);
        self.commit(idx, x, y, t, l_plus, p_plus);
        self.stats.state_updates += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                x,
                y,
                t,
                p_start,
                l_minus,
                l_plus,
                p_minus,
                p_plus,
                q,
                magnitude,
                r_interval,
                r: self.pixels[idx].r,
            });
        }
    }

    /// Applies events sharing one timestamp. Out-of-bounds and zero-polarity
    /// records are skipped and counted.
    pub fn apply_events(&mut self, batch: &[Event]) -> Result<()> {
        let Some(first) = batch.first() else {
            return Ok(());
        };
        let t = first.t;
        self.check_order(t)?;
        if let Some(i) = batch.iter().position(|e| e.t != t) {
            return Err(Error::invalid(format!("event batch mixes timestamps at index {i}")));
        }
        self.cursor = t;
        let kernel = self.kernel.take();
        for ev in batch {
            let (x, y) = (usize::from(ev.x), usize::from(ev.y));
            if x >= self.width || y >= self.height || ev.polarity == 0 {
                self.stats.skipped += 1;
                continue;
            }
            self.stats.events += 1;
            let q = self.noise.covariance(x, y, t, &self.params.noise);
            self.noise.record(x, y, t);
            let scale = if self.params.scale_state && self.uses_reference() {
                self.reference.contrast_scale(x, y, t)
            } else {
                1.0
            };
            let magnitude = self.params.c * scale * ev.sign();
            match &kernel {
                None => self.impulse(x, y, t, magnitude, q),
                Some(k) => {
                    for (tx, ty, w) in k.expand(x, y, self.width, self.height) {
                        self.impulse(tx, ty, t, magnitude * w, q * w * w);
                    }
                }
            }
        }
        self.kernel = kernel;
        self.noise.flush();
        Ok(())
    }

    /// Processes `items` in order; `events` is the slice their batches index.
    pub fn process(&mut self, items: &[TimelineItem], events: &[Event]) -> Result<()> {
        for item in items {
            match item.kind {
                ItemKind::FrameBoundary { .. } => self.apply_frame(item.t)?,
                ItemKind::EventBatch { start, end } => self.apply_events(&events[start..end])?,
            }
        }
        Ok(())
    }

    /// Processes items from `*next` while their time is at most `t`.
    pub fn process_until(
        &mut self,
        items: &[TimelineItem],
        events: &[Event],
        next: &mut usize,
        t: Timestamp,
    ) -> Result<()> {
        let end = *next + items[*next..].partition_point(|i| i.t <= t);
        self.process(&items[*next..end], events)?;
        *next = end;
        Ok(())
    }

    /// Runs the timeline, reading the estimate at each of the sorted `times`.
    pub fn snapshots(&mut self, items: &[TimelineItem], events: &[Event], times: &[Timestamp]) -> Result<Vec<Image>> {
        let mut next = 0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            self.process_until(items, events, &mut next, t)?;
            out.push(self.query(t)?);
        }
        Ok(out)
    }

    /// Estimate at one pixel without committing.
    pub fn query_pixel(&self, x: usize, y: usize, t: Timestamp) -> Result<f64> {
        let idx = y * self.width + x;
        let st = &self.pixels[idx];
        if t < st.t_last {
            return Err(Error::RetroQuery {
                query: t,
                committed: st.t_last,
                x,
                y,
            });
        }
        Ok(self.evaluate(idx, x, y, t, Side::After).0)
    }

    /// Log-intensity image at `t`; the committed state is not modified.
    pub fn query(&self, t: Timestamp) -> Result<Image> {
        let w = self.width;
        if let Some((i, st)) = self.pixels.iter().enumerate().find(|(_, st)| t < st.t_last) {
            return Err(Error::RetroQuery {
                query: t,
                committed: st.t_last,
                x: i % w,
                y: i / w,
            });
        }
        let values: Vec<f64> = (0..self.pixels.len())
            .into_par_iter()
            .map(|i| self.evaluate(i, i % w, i / w, t, Side::After).0)
            .collect();
        Ok(Image::from_shape_vec((self.height, self.width), values).expect("pixel count matches shape"))
    }

    /// Covariance image at `t` without committing.
    pub fn query_covariance(&self, t: Timestamp) -> Result<Image> {
        let w = self.width;
        let mut out = Image::zeros((self.height, self.width));
        for (i, st) in self.pixels.iter().enumerate() {
            if t < st.t_last {
                return Err(Error::RetroQuery {
                    query: t,
                    committed: st.t_last,
                    x: i % w,
                    y: i / w,
                });
            }
            out[[i / w, i % w]] = self.evaluate(i, i % w, i / w, t, Side::After).1;
        }
        Ok(out)
    }
}
