//! Event-space spatial convolution.
//!
//! An event at `p` becomes one impulse per kernel tap, landing on `p + d` with
//! weight `K(d)`; frames are convolved as `sum_d K(d) L(p - d)`. Filtering the
//! convolved streams yields the convolved estimate directly.

use std::fmt;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{AsyncFilter, FilterParams, FilterStats, Reference, Side};
use crate::timeline::TimelineItem;
use crate::types::{Event, Image, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub dx: i32,
    pub dy: i32,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelName {
    Identity,
    Gaussian { sigma: f64, radius: usize },
    SobelX,
    SobelY,
    Laplacian,
    Custom,
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelName::Identity => write!(f, "identity"),
            KernelName::Gaussian { sigma, .. } => write!(f, "gaussian({sigma})"),
            KernelName::SobelX => write!(f, "sobelx"),
            KernelName::SobelY => write!(f, "sobely"),
            KernelName::Laplacian => write!(f, "laplacian"),
            KernelName::Custom => write!(f, "custom"),
        }
    }
}

/// Sparse spatial kernel. Zero-weight taps are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    taps: Vec<Tap>,
    name: KernelName,
}

impl Kernel {
    pub fn custom(taps: impl IntoIterator<Item = (i32, i32, f64)>) -> Result<Self> {
        Self::build(taps, KernelName::Custom)
    }

    fn build(taps: impl IntoIterator<Item = (i32, i32, f64)>, name: KernelName) -> Result<Self> {
        let mut out: Vec<Tap> = Vec::new();
        for (dx, dy, w) in taps {
            if !w.is_finite() {
                return Err(Error::invalid(format!("kernel weight {w} at ({dx}, {dy}) is not finite")));
            }
            if out.iter().any(|t| t.dx == dx && t.dy == dy) {
                return Err(Error::invalid(format!("duplicate kernel tap ({dx}, {dy})")));
            }
            if w != 0.0 {
                out.push(Tap { dx, dy, w });
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("kernel has no nonzero taps"));
        }
        Ok(Kernel { taps: out, name })
    }

    pub fn identity() -> Self {
        Kernel {
            taps: vec![Tap { dx: 0, dy: 0, w: 1.0 }],
            name: KernelName::Identity,
        }
    }

    /// Truncated at `ceil(3 sigma)`, normalised to unit sum.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::NonPositive {
                name: "sigma",
                value: sigma,
            });
        }
        let radius = (3.0 * sigma).ceil() as i32;
        let mut taps = Vec::new();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let r2 = f64::from(dx * dx + dy * dy);
                taps.push((dx, dy, (-r2 / (2.0 * sigma * sigma)).exp()));
            }
        }
        let sum: f64 = taps.iter().map(|t| t.2).sum();
        for t in &mut taps {
            t.2 /= sum;
        }
        Self::build(
            taps,
            KernelName::Gaussian {
                sigma,
                radius: radius as usize,
            },
        )
    }

    /// Positive response where intensity increases with `x`.
    pub fn sobel_x() -> Self {
        let taps = [(-1, -1, 1.0), (-1, 0, 2.0), (-1, 1, 1.0), (1, -1, -1.0), (1, 0, -2.0), (1, 1, -1.0)];
        Self::build(taps, KernelName::SobelX).expect("static kernel")
    }

    /// Positive response where intensity increases with `y`.
    pub fn sobel_y() -> Self {
        let taps = [(-1, -1, 1.0), (0, -1, 2.0), (1, -1, 1.0), (-1, 1, -1.0), (0, 1, -2.0), (1, 1, -1.0)];
        Self::build(taps, KernelName::SobelY).expect("static kernel")
    }

    pub fn laplacian() -> Self {
        let taps = [(0, 0, -4.0), (-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0)];
        Self::build(taps, KernelName::Laplacian).expect("static kernel")
    }

    pub fn parse_name(s: &str, sigma: f64) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::identity()),
            "gaussian" => Self::gaussian(sigma),
            "sobelx" => Ok(Self::sobel_x()),
            "sobely" => Ok(Self::sobel_y()),
            "laplacian" => Ok(Self::laplacian()),
            other => Err(Error::invalid(format!("unknown kernel {other:?}"))),
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn name(&self) -> KernelName {
        self.name
    }

    pub fn nnz(&self) -> usize {
        self.taps.len()
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|t| t.w).sum()
    }

    /// Largest `|dx|` or `|dy|` over the taps.
    pub fn radius(&self) -> usize {
        self.taps
            .iter()
            .map(|t| t.dx.unsigned_abs().max(t.dy.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Impulse targets `(x + dx, y + dy, w)` for an event at `(x, y)`;
    /// taps landing outside the image are dropped.
    pub fn expand(&self, x: usize, y: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.taps.iter().filter_map(move |t| {
            let tx = x as i64 + i64::from(t.dx);
            let ty = y as i64 + i64::from(t.dy);
            (tx >= 0 && ty >= 0 && (tx as usize) < width && (ty as usize) < height).then(|| (tx as usize, ty as usize, t.w))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvolvedEventBatch {
    pub t: Timestamp,
    /// `(x, y, magnitude)` with magnitude `c * polarity * weight`.
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn convolve_event(event: &Event, kernel: &Kernel, c: f64, width: usize, height: usize) -> ConvolvedEventBatch {
    let m = c * event.sign();
    ConvolvedEventBatch {
        t: event.t,
        entries: kernel
            .expand(usize::from(event.x), usize::from(event.y), width, height)
            .map(|(x, y, w)| (x, y, m * w))
            .collect(),
    }
}

#[inline]
fn clamp_offset(p: usize, d: i32, n: usize) -> usize {
    (p as i64 - i64::from(d)).clamp(0, n as i64 - 1) as usize
}

/// `sum_d K(d) L(p - d)` with replicated borders.
pub fn convolve_frame(image: &Image, kernel: &Kernel) -> Image {
    let (h, w) = image.dim();
    Image::from_shape_fn((h, w), |(y, x)| {
        let mut taps = kernel.taps.iter();
        let first = taps.next().expect("kernel has taps");
        let mut acc = first.w * image[[clamp_offset(y, first.dy, h), clamp_offset(x, first.dx, w)]];
        for t in taps {
            acc += t.w * image[[clamp_offset(y, t.dy, h), clamp_offset(x, t.dx, w)]];
        }
        acc
    })
}

/// Frame reference seen through a kernel: log intensity `sum w L(p - d)` and
/// covariance `sum w^2 R(p - d)`.
pub struct ConvolvedReference<R> {
    inner: R,
    kernel: Kernel,
    width: usize,
    height: usize,
}

impl<R: Reference> ConvolvedReference<R> {
    pub fn new(inner: R, kernel: Kernel, width: usize, height: usize) -> Self {
        ConvolvedReference {
            inner,
            kernel,
            width,
            height,
        }
    }

    #[inline]
    fn fold(&self, x: usize, y: usize, f: impl Fn(usize, usize, f64) -> f64) -> f64 {
        let mut taps = self.kernel.taps.iter();
        let first = taps.next().expect("kernel has taps");
        let at = |t: &Tap| f(clamp_offset(x, t.dx, self.width), clamp_offset(y, t.dy, self.height), t.w);
        let mut acc = at(first);
        for t in taps {
            acc += at(t);
        }
        acc
    }
}

impl<R: Reference> Reference for ConvolvedReference<R> {
    fn log_intensity(&self, x: usize, y: usize, t: Timestamp, side: Side) -> f64 {
        self.fold(x, y, |px, py, w| w * self.inner.log_intensity(px, py, t, side))
    }

    fn covariance(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        self.fold(x, y, |px, py, w| w * w * self.inner.covariance(px, py, t))
    }

    fn contrast_scale(&self, x: usize, y: usize, t: Timestamp) -> f64 {
        self.inner.contrast_scale(x, y, t)
    }
}

/// Output of one convolved filter.
#[derive(Debug, Clone)]
pub struct ConvolvedRun {
    pub kernel: Kernel,
    pub snapshots: Vec<Image>,
    pub stats: FilterStats,
}

/// Runs one independent filter per kernel, concurrently, and samples each at
/// `times` (sorted).
#[allow(clippy::too_many_arguments)]
pub fn run_convolved_pipeline<R: Reference>(
    events: &[Event],
    timeline: &[TimelineItem],
    reference: &R,
    kernels: &[Kernel],
    params: FilterParams,
    width: usize,
    height: usize,
    stream_start: Timestamp,
    times: &[Timestamp],
) -> Result<Vec<ConvolvedRun>> {
    kernels
        .par_iter()
        .map(|k| {
            let conv_ref = ConvolvedReference::new(reference, k.clone(), width, height);
            let mut filter = AsyncFilter::new(params, width, height, conv_ref, stream_start)?.with_kernel(k.clone());
            let snapshots = filter.snapshots(timeline, events, times)?;
            Ok(ConvolvedRun {
                kernel: k.clone(),
                snapshots,
                stats: filter.stats(),
            })
        })
        .collect()
}

/// Hue (degrees, `[0, 360)`) and saturation images of a gradient field.
/// Saturation is the magnitude over its 99th percentile, capped at 1.
pub fn gradient_hsv(gx: &Image, gy: &Image) -> Result<(Image, Image)> {
    if gx.dim() != gy.dim() {
        return Err(Error::ShapeMismatch {
            left: gx.dim(),
            right: gy.dim(),
        });
    }
    let mut mag: Vec<f64> = gx.iter().zip(gy.iter()).map(|(a, b)| a.hypot(*b)).collect();
    let scale = percentile(&mut mag, 0.99);
    let mut hue = gx.clone();
    hue.zip_mut_with(gy, |a, &b| *a = b.atan2(*a).to_degrees().rem_euclid(360.0));
    let mut sat = gx.clone();
    sat.zip_mut_with(gy, |a, &b| {
        let m = a.hypot(b);
        *a = if scale > 0.0 { (m / scale).min(1.0) } else { 0.0 };
    });
    Ok((hue, sat))
}

/// Nearest-rank percentile; reorders `values`.
pub(crate) fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Colour-wheel rendering of a gradient: hue from direction, saturation from
/// normalised magnitude, full value (zero gradient is white).
pub fn gradient_color_encode(gx: &Image, gy: &Image) -> Result<RgbImage> {
    let (hue, sat) = gradient_hsv(gx, gy)?;
    let (h, w) = gx.dim();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb(hsv_to_rgb(hue[[y, x]], sat[[y, x]], 1.0))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_expansion() {
        let ev = Event::new(Timestamp::from_micros(3), 2, 2, -1);
        let b = convolve_event(&ev, &Kernel::identity(), 0.1, 5, 5);
        assert_eq!(b.entries, vec![(2, 2, -0.1)]);
    }

    #[test]
    fn sobel_expansion_enumerates_taps() {
        let ev = Event::new(Timestamp::from_micros(3), 2, 2, 1);
        let k = Kernel::sobel_x();
        assert_eq!(k.nnz(), 6);
        let b = convolve_event(&ev, &k, 0.1, 5, 5);
        assert_eq!(b.entries.len(), 6);
        for t in k.taps() {
            let target = ((2 + t.dx) as usize, (2 + t.dy) as usize);
            let e = b.entries.iter().find(|e| (e.0, e.1) == target).unwrap();
            assert!((e.2 - 0.1 * t.w).abs() < 1e-15);
        }
        // corner event keeps only in-bounds taps
        let corner = Event::new(Timestamp::ZERO, 0, 0, 1);
        assert_eq!(convolve_event(&corner, &k, 0.1, 5, 5).entries.len(), 2);
    }

    #[test]
    fn gaussian_mass_conserved() {
        let k = Kernel::gaussian(1.0).unwrap();
        assert_eq!(k.radius(), 3);
        let ev = Event::new(Timestamp::ZERO, 10, 10, 1);
        let b = convolve_event(&ev, &k, 0.1, 21, 21);
        let total: f64 = b.entries.iter().map(|e| e.2).sum();
        assert!((total - 0.1).abs() < 1e-15);
    }

    #[test]
    fn frame_convolution() {
        let img = Image::from_shape_fn((6, 7), |(y, x)| (x * 3 + y) as f64 * 0.1);
        assert_eq!(convolve_frame(&img, &Kernel::identity()), img);
        let flat = Image::from_elem((5, 5), 0.7);
        assert!(convolve_frame(&flat, &Kernel::laplacian()).iter().all(|&v| v.abs() < 1e-15));
        let mut delta = Image::zeros((11, 11));
        delta[[5, 5]] = 1.0;
        let k = Kernel::gaussian(0.8).unwrap();
        let out = convolve_frame(&delta, &k);
        for t in k.taps() {
            let (x, y) = ((5 + t.dx) as usize, (5 + t.dy) as usize);
            assert_eq!(out[[y, x]], t.w);
        }
        // x-ramp gives positive SobelX, zero SobelY in the interior
        let ramp = Image::from_shape_fn((5, 5), |(_, x)| x as f64);
        assert_eq!(convolve_frame(&ramp, &Kernel::sobel_x())[[2, 2]], 8.0);
        assert_eq!(convolve_frame(&ramp, &Kernel::sobel_y())[[2, 2]], 0.0);
    }

    #[test]
    fn color_encoding() {
        let z = Image::zeros((4, 4));
        let img = gradient_color_encode(&z, &z).unwrap();
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));

        let gx = Image::from_elem((4, 4), 2.0);
        let (hue, sat) = gradient_hsv(&gx, &z).unwrap();
        assert!(hue.iter().all(|&h| h == 0.0));
        assert!(sat.iter().all(|&s| s == 1.0));

        let theta: f64 = 40f64.to_radians();
        let base_x = Image::from_shape_fn((5, 5), |(y, x)| 1.0 + x as f64 * 0.3 - y as f64 * 0.1);
        let base_y = Image::from_shape_fn((5, 5), |(y, x)| 0.5 - x as f64 * 0.2 + y as f64 * 0.4);
        let rx = &base_x * theta.cos() - &base_y * theta.sin();
        let ry = &base_x * theta.sin() + &base_y * theta.cos();
        let (h0, _) = gradient_hsv(&base_x, &base_y).unwrap();
        let (h1, _) = gradient_hsv(&rx, &ry).unwrap();
        for (a, b) in h0.iter().zip(h1.iter()) {
            let d = (b - a).rem_euclid(360.0);
            assert!((d - 40.0).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::custom([(0, 0, 0.0)]).is_err());
        assert!(Kernel::custom([(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        let k = Kernel::custom([(1, 0, 0.5), (0, 0, 0.0), (-1, 0, 0.5)]).unwrap();
        assert_eq!(k.nnz(), 2);
    }
}
