//! Frame augmentation: exposure deblurring, event-driven interpolation between
//! frames, per-pixel contrast-threshold calibration and the zero-order-hold
//! fallback reference.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{Reference, Side};
use crate::noise::{interval_weight, lerp, CrfModel};
use crate::types::{check_frame_spacing, Event, Frame, Image, Timestamp};

/// Per-pixel event times with cumulative signed counts, for O(log n) event
/// integrals over arbitrary intervals.
#[derive(Debug, Clone)]
pub struct EventIndex {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    times: Vec<i64>,
    cum: Vec<i64>,
}

impl EventIndex {
    /// Out-of-bounds and zero-polarity records are ignored.
    pub fn build(events: &[Event], width: usize, height: usize) -> Self {
        let n = width * height;
        let valid = |e: &Event| usize::from(e.x) < width && usize::from(e.y) < height && e.polarity != 0;
        let mut offsets = vec![0usize; n + 1];
        for e in events.iter().filter(|e| valid(e)) {
            offsets[usize::from(e.y) * width + usize::from(e.x) + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let total = offsets[n];
        let mut fill = offsets.clone();
        let mut times = vec![0i64; total];
        let mut cum = vec![0i64; total];
        for e in events.iter().filter(|e| valid(e)) {
            let p = usize::from(e.y) * width + usize::from(e.x);
            let slot = fill[p];
            times[slot] = e.t.micros();
            cum[slot] = i64::from(e.polarity.signum()) + if slot > offsets[p] { cum[slot - 1] } else { 0 };
            fill[p] += 1;
        }
        EventIndex {
            width,
            height,
            offsets,
            times,
            cum,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn times(&self, x: usize, y: usize) -> &[i64] {
        let p = y * self.width + x;
        &self.times[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Signed event count at the pixel up to `t` (excluding `t` for `Before`).
    #[inline]
    pub fn cum(&self, x: usize, y: usize, t: Timestamp, side: Side) -> i64 {
        let p = y * self.width + x;
        let (lo, hi) = (self.offsets[p], self.offsets[p + 1]);
        let ts = &self.times[lo..hi];
        let tm = t.micros();
        let n = match side {
            Side::Before => ts.partition_point(|&s| s < tm),
            Side::After => ts.partition_point(|&s| s <= tm),
        };
        if n == 0 {
            0
        } else {
            self.cum[lo + n - 1]
        }
    }

    /// Signed count over `(a, b]`.
    pub fn signed_between(&self, x: usize, y: usize, a: Timestamp, b: Timestamp) -> i64 {
        self.cum(x, y, b, Side::After) - self.cum(x, y, a, Side::After)
    }

    /// Unsigned count over `(a, b]`.
    pub fn count_between(&self, x: usize, y: usize, a: Timestamp, b: Timestamp) -> usize {
        let ts = self.times(x, y);
        ts.partition_point(|&s| s <= b.micros()) - ts.partition_point(|&s| s <= a.micros())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Full,
    Zoh,
}

impl AugmentMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(AugmentMode::Full),
            "zoh" => Ok(AugmentMode::Zoh),
            other => Err(Error::invalid(format!("unknown augmentation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub mode: AugmentMode,
    pub ct_clamp: (f64, f64),
    /// Smallest `|integral of e|` trusted for calibration; `None` means one nominal event.
    pub min_abs_integral: Option<f64>,
    /// Weight the far anchor at each end of the inter-exposure window.
    pub literal_blend: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            mode: AugmentMode::Full,
            ct_clamp: (0.1, 10.0),
            min_abs_integral: None,
            literal_blend: false,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ct_clamp;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!("ct clamp [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        if let Some(m) = self.min_abs_integral {
            if !(m >= 0.0) {
                return Err(Error::invalid(format!("min_abs_integral {m} must be >= 0")));
            }
        }
        Ok(())
    }
}

fn pixel_edi_correction(index: &EventIndex, x: usize, y: usize, frame: &Frame, c: f64) -> f64 {
    let (s, e) = frame.window();
    let span = (e.micros() - s.micros()) as f64;
    if span <= 0.0 {
        return 0.0;
    }
    let base = index.cum(x, y, frame.t_mid, Side::After);
    let mut cur = index.cum(x, y, s, Side::After);
    let mut cur_t = s.micros();
    let ts = index.times(x, y);
    let first = ts.partition_point(|&v| v <= s.micros());
    let mut integral = 0.0;
    let p = y * index.width + x;
    for (j, &te) in ts.iter().enumerate().skip(first) {
        if te > e.micros() {
            break;
        }
        integral += (te - cur_t) as f64 * (c * (cur - base) as f64).exp();
        cur = index.cum[index.offsets[p] + j];
        cur_t = te;
    }
    integral += (e.micros() - cur_t) as f64 * (c * (cur - base) as f64).exp();
    (integral / span).ln()
}

fn check_geometry(frame: &Frame, index: &EventIndex) -> Result<()> {
    if frame.width() != index.width || frame.height() != index.height {
        return Err(Error::Geometry(format!(
            "frame is {}x{}, events are {}x{}",
            frame.width(),
            frame.height(),
            index.width,
            index.height
        )));
    }
    Ok(())
}

/// Sharp log image at the exposure midpoint from a blurred frame and the
/// events inside its exposure. The exposure integral is evaluated exactly
/// over the piecewise-constant event integral.
pub fn edi_deblur(frame: &Frame, index: &EventIndex, crf: &CrfModel, c: f64) -> Result<Image> {
    check_geometry(frame, index)?;
    let mut out = crf.log_image(&frame.response);
    if frame.exposure > 0.0 {
        let w = frame.width();
        let corr: Vec<f64> = (0..w * frame.height())
            .into_par_iter()
            .map(|i| pixel_edi_correction(index, i % w, i / w, frame, c))
            .collect();
        for (v, k) in out.iter_mut().zip(corr) {
            *v -= k;
        }
    }
    Ok(out)
}

fn check_window(t: Timestamp, start: Timestamp, end: Timestamp, inclusive_end: bool) -> Result<()> {
    let ok = t >= start && (t < end || (inclusive_end && t == end));
    if ok {
        Ok(())
    } else {
        Err(Error::OutsideWindow { t, start, end })
    }
}

/// Log image at `t` inside frame `frame`'s exposure by direct event integration
/// from the deblurred midpoint image.
pub fn intra_exposure(l_d_mid: &Image, frame: &Frame, index: &EventIndex, c: f64, t: Timestamp) -> Result<Image> {
    let (s, e) = frame.window();
    check_window(t, s, e, s == e)?;
    Ok(Image::from_shape_fn(l_d_mid.dim(), |(y, x)| {
        let n = index.cum(x, y, t, Side::After) - index.cum(x, y, frame.t_mid, Side::After);
        l_d_mid[[y, x]] + c * n as f64
    }))
}

/// Forward interpolation from the end-of-exposure anchor at `start` over
/// `[start, end)`.
pub fn forward_interp(
    l_d_end: &Image,
    index: &EventIndex,
    start: Timestamp,
    end: Timestamp,
    t: Timestamp,
    ct_scale: &Image,
    c: f64,
) -> Result<Image> {
    check_window(t, start, end, start == end)?;
    Ok(Image::from_shape_fn(l_d_end.dim(), |(y, x)| {
        l_d_end[[y, x]] + ct_scale[[y, x]] * c * index.signed_between(x, y, start, t) as f64
    }))
}

/// Backward interpolation from the next frame's start-of-exposure anchor at `end`.
pub fn backward_interp(
    l_d_next_begin: &Image,
    index: &EventIndex,
    start: Timestamp,
    end: Timestamp,
    t: Timestamp,
    ct_scale: &Image,
    c: f64,
) -> Result<Image> {
    check_window(t, start, end, true)?;
    Ok(Image::from_shape_fn(l_d_next_begin.dim(), |(y, x)| {
        l_d_next_begin[[y, x]] - ct_scale[[y, x]] * c * index.signed_between(x, y, t, end) as f64
    }))
}

#[inline]
fn calibrate_pixel(delta_l: f64, integral: f64, min_abs: f64, clamp: (f64, f64)) -> f64 {
    if integral.abs() < min_abs || integral == 0.0 || delta_l * integral <= 0.0 {
        return 1.0;
    }
    (delta_l / integral).clamp(clamp.0, clamp.1)
}

/// Per-pixel ratio of the frame-measured change to the event-integrated change
/// between two exposures.
pub fn calibrate_ct(
    l_d_end: &Image,
    l_d_next_begin: &Image,
    index: &EventIndex,
    start: Timestamp,
    end: Timestamp,
    c: f64,
    params: &AugmentParams,
) -> Image {
    let min_abs = params.min_abs_integral.unwrap_or(c);
    Image::from_shape_fn(l_d_end.dim(), |(y, x)| {
        let integral = c * index.signed_between(x, y, start, end) as f64;
        calibrate_pixel(l_d_next_begin[[y, x]] - l_d_end[[y, x]], integral, min_abs, params.ct_clamp)
    })
}

#[inline]
fn blend_weight(t: Timestamp, start: Timestamp, end: Timestamp) -> f64 {
    if end <= start {
        return 0.0;
    }
    (t.secs_since(start) / end.secs_since(start)).clamp(0.0, 1.0)
}

#[inline]
fn blend_pixel(fwd: f64, bwd: f64, w: f64, literal: bool) -> f64 {
    if literal {
        w * fwd + (1.0 - w) * bwd
    } else {
        (1.0 - w) * fwd + w * bwd
    }
}

/// Weighted average of the two interpolations over `[start, end]`; by default
/// the anchor nearest to `t` dominates.
pub fn blend(l_fwd: &Image, l_bwd: &Image, t: Timestamp, start: Timestamp, end: Timestamp, literal: bool) -> Result<Image> {
    if l_fwd.dim() != l_bwd.dim() {
        return Err(Error::ShapeMismatch {
            left: l_fwd.dim(),
            right: l_bwd.dim(),
        });
    }
    let w = blend_weight(t, start, end);
    let mut out = l_fwd.clone();
    out.zip_mut_with(l_bwd, |a, &b| *a = blend_pixel(*a, b, w, literal));
    Ok(out)
}

/// Median of per-pixel `delta L / signed event count` over consecutive frame
/// pairs, restricted to pixels whose responses lie in `band` at both frames.
pub fn global_ct_estimate(frames: &[Frame], index: &EventIndex, crf: &CrfModel, band: (f64, f64)) -> Result<f64> {
    let mut raw = Vec::new();
    for pair in frames.windows(2) {
        check_geometry(&pair[0], index)?;
        check_geometry(&pair[1], index)?;
        for ((y, x), &y0) in pair[0].response.indexed_iter() {
            let y1 = pair[1].response[[y, x]];
            let inside = |v: f64| v >= band.0 && v <= band.1;
            if !inside(y0) || !inside(y1) {
                continue;
            }
            let n = index.signed_between(x, y, pair[0].t_mid, pair[1].t_mid);
            if n == 0 {
                continue;
            }
            let dl = crf.log_intensity(y1) - crf.log_intensity(y0);
            let c = dl / n as f64;
            if c > 0.0 && c.is_finite() {
                raw.push(c);
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::NoQualifyingPixels);
    }
    raw.sort_by(f64::total_cmp);
    let m = raw.len();
    Ok(if m % 2 == 1 {
        raw[m / 2]
    } else {
        0.5 * (raw[m / 2 - 1] + raw[m / 2])
    })
}

/// Linearised log image of the latest frame with midpoint at or before `t`.
pub fn zoh_reference(frames: &[Frame], crf: &CrfModel, t: Timestamp) -> Result<Image> {
    let k = frames.partition_point(|f| f.t_mid <= t);
    if k == 0 {
        return Err(Error::NoFrame(t));
    }
    Ok(crf.log_image(&frames[k - 1].response))
}

/// Holds the latest frame and its covariance.
#[derive(Debug, Clone)]
pub struct ZohReference {
    t_mid: Vec<Timestamp>,
    log: Vec<Image>,
    r: Vec<Image>,
}

impl ZohReference {
    pub fn new(frames: &[Frame], crf: &CrfModel) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::NoFrame(Timestamp::ZERO));
        }
        check_frame_spacing(frames)?;
        let (log, r) = frames
            .par_iter()
            .map(|f| (crf.log_image(&f.response), crf.frame_covariance(&f.response, f.t_mid).r))
            .unzip();
        Ok(ZohReference {
            t_mid: frames.iter().map(|f| f.t_mid).collect(),
            log,
            r,
        })
    }

    #[inline]
    fn frame_at(&self, t: Timestamp, side: Side) -> usize {
        let k = match side {
            Side::After => self.t_mid.partition_point(|&m| m <= t),
            Side::Before => self.t_mid.partition_point(|&m| m < t),
        };
        k.saturating_sub(1)
    }
}

impl Reference for ZohReference {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64 {
        self.log[self.frame_at(t, side)][[y, x]]
    }

    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        self.r[self.frame_at(t, Side::After)][[y, x]]
    }
}

/// Deblurred anchors of one frame.
#[derive(Debug, Clone)]
pub struct AugmentedFrame {
    pub t_mid: Timestamp,
    pub window: (Timestamp, Timestamp),
    pub l_d_mid: Image,
    /// Extension to the start of the exposure.
    pub l_d_begin: Image,
    /// Extension to the end of the exposure.
    pub l_d_end: Image,
    /// Threshold scaling over the gap to the next exposure (ones after the last frame).
    pub ct_scale: Image,
    pub r: Image,
}

/// Continuous-time reference built from deblurred frames and events.
#[derive(Debug, Clone)]
pub struct AugmentedReference {
    c: f64,
    literal_blend: bool,
    index: EventIndex,
    frames: Vec<AugmentedFrame>,
    starts: Vec<Timestamp>,
}

impl AugmentedReference {
    pub fn build(frames: &[Frame], events: &[Event], crf: &CrfModel, c: f64, params: &AugmentParams) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::NoFrame(Timestamp::ZERO));
        }
        Self::with_index(frames, EventIndex::build(events, frames[0].width(), frames[0].height()), crf, c, params)
    }

    pub fn with_index(frames: &[Frame], index: EventIndex, crf: &CrfModel, c: f64, params: &AugmentParams) -> Result<Self> {
        params.validate()?;
        if !(c > 0.0) {
            return Err(Error::NonPositive { name: "c", value: c });
        }
        if frames.is_empty() {
            return Err(Error::NoFrame(Timestamp::ZERO));
        }
        check_frame_spacing(frames)?;
        let mut aug: Vec<AugmentedFrame> = frames
            .par_iter()
            .map(|f| {
                let mid = edi_deblur(f, &index, crf, c)?;
                let (s, e) = f.window();
                let l_d_begin = Image::from_shape_fn(mid.dim(), |(y, x)| {
                    mid[[y, x]] - c * index.signed_between(x, y, s, f.t_mid) as f64
                });
                let l_d_end = Image::from_shape_fn(mid.dim(), |(y, x)| {
                    mid[[y, x]] + c * index.signed_between(x, y, f.t_mid, e) as f64
                });
                Ok(AugmentedFrame {
                    t_mid: f.t_mid,
                    window: (s, e),
                    ct_scale: Image::ones(mid.dim()),
                    r: crf.frame_covariance(&f.response, f.t_mid).r,
                    l_d_mid: mid,
                    l_d_begin,
                    l_d_end,
                })
            })
            .collect::<Result<_>>()?;
        let scales: Vec<Image> = aug
            .par_windows(2)
            .map(|w| calibrate_ct(&w[0].l_d_end, &w[1].l_d_begin, &index, w[0].window.1, w[1].window.0, c, params))
            .collect();
        for (f, s) in aug.iter_mut().zip(scales) {
            f.ct_scale = s;
        }
        Ok(AugmentedReference {
            c,
            literal_blend: params.literal_blend,
            starts: aug.iter().map(|f| f.window.0).collect(),
            frames: aug,
            index,
        })
    }

    pub fn frames(&self) -> &[AugmentedFrame] {
        &self.frames
    }

    pub fn index(&self) -> &EventIndex {
        &self.index
    }

    /// Whole reference image at `t`.
    pub fn image(&self, t: Timestamp, side: Side) -> Image {
        Image::from_shape_fn((self.index.height, self.index.width), |(y, x)| self.log_intensity(x, y, t, side))
    }
}

impl Reference for AugmentedReference {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64 {
        let c = self.c;
        let idx = &self.index;
        let k = self.starts.partition_point(|&s| s <= t);
        if k == 0 {
            let f = &self.frames[0];
            let n = idx.cum(x, y, t, side) - idx.cum(x, y, f.t_mid, Side::After);
            return f.l_d_mid[[y, x]] + c * n as f64;
        }
        let f = &self.frames[k - 1];
        let (_, e) = f.window;
        if t < e {
            let n = idx.cum(x, y, t, side) - idx.cum(x, y, f.t_mid, Side::After);
            return f.l_d_mid[[y, x]] + c * n as f64;
        }
        let now = idx.cum(x, y, t, side);
        let from_end = (now - idx.cum(x, y, e, Side::After)) as f64;
        let Some(next) = self.frames.get(k) else {
            return f.l_d_end[[y, x]] + c * from_end;
        };
        let s1 = next.window.0;
        let scale = f.ct_scale[[y, x]];
        let fwd = f.l_d_end[[y, x]] + scale * c * from_end;
        let to_next = (idx.cum(x, y, s1, Side::After) - now) as f64;
        let bwd = next.l_d_begin[[y, x]] - scale * c * to_next;
        blend_pixel(fwd, bwd, blend_weight(t, e, s1), self.literal_blend)
    }

    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        let k = self.frames.partition_point(|f| f.t_mid <= t);
        if k == 0 {
            return self.frames[0].r[[y, x]];
        }
        let a = &self.frames[k - 1];
        match self.frames.get(k) {
            None => a.r[[y, x]],
            Some(b) => lerp(a.r[[y, x]], b.r[[y, x]], interval_weight(a.t_mid, b.t_mid, t)),
        }
    }

    fn contrast_scale(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        let k = self.starts.partition_point(|&s| s <= t);
        if k == 0 || k == self.frames.len() {
            return 1.0;
        }
        let f = &self.frames[k - 1];
        if t < f.window.1 {
            1.0
        } else {
            f.ct_scale[[y, x]]
        }
    }
}

/// Either reference kind behind one type.
#[derive(Debug, Clone)]
pub enum FrameReference {
    Zoh(ZohReference),
    Full(AugmentedReference),
}

impl FrameReference {
    pub fn build(frames: &[Frame], events: &[Event], crf: &CrfModel, c: f64, params: &AugmentParams) -> Result<Self> {
        match params.mode {
            AugmentMode::Zoh => Ok(FrameReference::Zoh(ZohReference::new(frames, crf)?)),
            AugmentMode::Full => Ok(FrameReference::Full(AugmentedReference::build(frames, events, crf, c, params)?)),
        }
    }
}

impl Reference for FrameReference {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64 {
        match self {
            FrameReference::Zoh(r) => r.log_intensity(x, y, t, side),
            FrameReference::Full(r) => r.log_intensity(x, y, t, side),
        }
    }

    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        match self {
            FrameReference::Zoh(r) => r.covariance(x, y, t),
            FrameReference::Full(r) => r.covariance(x, y, t),
        }
    }

    fn contrast_scale(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        match self {
            FrameReference::Zoh(r) => r.contrast_scale(x, y, t),
            FrameReference::Full(r) => r.contrast_scale(x, y, t),
        }
    }
}
