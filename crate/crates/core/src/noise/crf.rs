//! Camera response model: tabulated CRF, its inverse, the weighting function
//! and the frame covariance it induces.

use log::warn;

use crate::error::{Error, Result};
use crate::types::{Image, Timestamp};

pub const CRF_SAMPLES: usize = 256;
const REPAIR_EPS: f64 = 1e-6;
/// Largest drop between consecutive response samples still treated as a plateau.
const DECREASE_TOLERANCE: f64 = 1e-3;

/// Monotone camera response `I -> I^F` with derived weighting `f^w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    irradiance: Vec<f64>,
    response: Vec<f64>,
    weighting: Vec<f64>,
    pub sigma2_im: f64,
    pub f_w_floor: f64,
    /// Offset keeping log intensities finite.
    pub i0: f64,
}

/// Named camera setups with their image-noise scale and nominal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorProfile {
    Davis240c,
    Flir,
    Dsec,
    Hdr,
    Sim,
}

impl SensorProfile {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "davis240c" | "davis" => Ok(SensorProfile::Davis240c),
            "flir" => Ok(SensorProfile::Flir),
            "dsec" => Ok(SensorProfile::Dsec),
            "hdr" | "ahdr" => Ok(SensorProfile::Hdr),
            "sim" => Ok(SensorProfile::Sim),
            other => Err(Error::invalid(format!("unknown sensor profile {other:?}"))),
        }
    }

    pub fn sigma2_im(self) -> f64 {
        match self {
            SensorProfile::Davis240c => 7e5,
            SensorProfile::Flir | SensorProfile::Dsec | SensorProfile::Hdr => 7e7,
            SensorProfile::Sim => 1e-4,
        }
    }

    pub fn contrast_threshold(self) -> f64 {
        match self {
            SensorProfile::Davis240c | SensorProfile::Flir | SensorProfile::Sim => 0.1,
            SensorProfile::Dsec => 0.05,
            SensorProfile::Hdr => 0.033,
        }
    }
}

/// Makes `r` strictly increasing: cumulative max, then an `eps` ramp over
/// plateaus. A plateau at the start of the table ramps downwards so that its
/// last sample (the clip edge) keeps the measured value.
fn repair(r: &mut [f64]) -> Result<()> {
    for i in 1..r.len() {
        if r[i] < r[i - 1] - DECREASE_TOLERANCE {
            return Err(Error::NonMonotoneCrf { index: i });
        }
        r[i] = r[i].max(r[i - 1]);
    }
    let lead_end = r.iter().position(|&v| v > r[0]).unwrap_or(r.len()) - 1;
    for i in (0..lead_end).rev() {
        r[i] = r[i + 1] - REPAIR_EPS;
    }
    for i in 1..r.len() {
        if r[i] <= r[i - 1] {
            r[i] = r[i - 1] + REPAIR_EPS;
        }
    }
    Ok(())
}

/// Piecewise-linear interpolation on increasing `xs`, clamped to the end values.
fn lerp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let s = (x - x0) / (x1 - x0);
    ys[j - 1] + s * (ys[j] - ys[j - 1])
}

impl CrfModel {
    /// Builds a model from 256 `(irradiance, response)` samples.
    pub fn from_table(
        irradiance: Vec<f64>,
        mut response: Vec<f64>,
        sigma2_im: f64,
        f_w_floor: f64,
        i0: f64,
    ) -> Result<Self> {
        if irradiance.len() != CRF_SAMPLES || response.len() != CRF_SAMPLES {
            return Err(Error::CrfLength {
                expected: CRF_SAMPLES,
                got: irradiance.len().min(response.len()),
            });
        }
        if let Some(w) = irradiance.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Unsorted {
                stream: "CRF irradiance samples",
                index: w + 1,
            });
        }
        if irradiance.iter().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::invalid("CRF table contains non-finite values"));
        }
        if !(sigma2_im > 0.0) {
            return Err(Error::NonPositive {
                name: "sigma2_im",
                value: sigma2_im,
            });
        }
        if !(f_w_floor > 0.0 && f_w_floor <= 1.0) {
            return Err(Error::invalid(format!("f_w_floor {f_w_floor} must be in (0, 1]")));
        }
        if !(i0 > 0.0) {
            return Err(Error::NonPositive { name: "i0", value: i0 });
        }
        repair(&mut response)?;
        let mut model = CrfModel {
            irradiance,
            response,
            weighting: Vec::new(),
            sigma2_im,
            f_w_floor,
            i0,
        };
        model.weighting = model.compute_weighting();
        Ok(model)
    }

    /// Samples `crf` on a uniform irradiance grid over `[0, 1]`.
    pub fn from_fn(crf: impl Fn(f64) -> f64, sigma2_im: f64, f_w_floor: f64, i0: f64) -> Result<Self> {
        let irr: Vec<f64> = (0..CRF_SAMPLES).map(|k| k as f64 / 255.0).collect();
        let resp = irr.iter().map(|&i| crf(i)).collect();
        Self::from_table(irr, resp, sigma2_im, f_w_floor, i0)
    }

    /// Linear response with the default noise parameters.
    pub fn identity() -> Self {
        Self::from_fn(|i| i, 1.0, 0.01, 0.01).expect("identity CRF is valid")
    }

    /// Response of a sensor that clips irradiance to `[lo, hi]` before this CRF.
    pub fn clip_band(&self, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!("clip band [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")));
        }
        let resp = self.irradiance.iter().map(|&i| self.forward(i.clamp(lo, hi))).collect();
        Self::from_table(self.irradiance.clone(), resp, self.sigma2_im, self.f_w_floor, self.i0)
    }

    pub fn with_noise(mut self, sigma2_im: f64, f_w_floor: f64) -> Result<Self> {
        if !(sigma2_im > 0.0) || !(f_w_floor > 0.0 && f_w_floor <= 1.0) {
            return Err(Error::invalid(format!(
                "sigma2_im {sigma2_im} must be > 0 and f_w_floor {f_w_floor} in (0, 1]"
            )));
        }
        self.sigma2_im = sigma2_im;
        self.f_w_floor = f_w_floor;
        self.weighting = self.compute_weighting();
        Ok(self)
    }

    pub fn irradiance_samples(&self) -> &[f64] {
        &self.irradiance
    }

    /// Repaired, strictly increasing response samples.
    pub fn response_samples(&self) -> &[f64] {
        &self.response
    }

    /// Weighting at the 256 response levels `k / 255`.
    pub fn weighting(&self) -> &[f64] {
        &self.weighting
    }

    pub fn forward(&self, irradiance: f64) -> f64 {
        lerp_table(&self.irradiance, &self.response, irradiance)
    }

    pub fn inverse(&self, response: f64) -> f64 {
        lerp_table(&self.response, &self.irradiance, response)
    }

    /// `log(CRF^{-1}(y) + I0)`.
    pub fn log_intensity(&self, response: f64) -> f64 {
        (self.inverse(response) + self.i0).ln()
    }

    pub fn log_image(&self, response: &Image) -> Image {
        response.mapv(|y| self.log_intensity(y))
    }

    fn compute_weighting(&self) -> Vec<f64> {
        let lo = self.response[0];
        let hi = self.response[CRF_SAMPLES - 1];
        let half = 0.5 / 255.0;
        let mut w: Vec<f64> = (0..CRF_SAMPLES)
            .map(|k| {
                let y = k as f64 / 255.0;
                let y0 = (y - half).clamp(lo, hi);
                let y1 = (y + half).clamp(lo, hi);
                let di = self.inverse(y1) - self.inverse(y0);
                if di > 0.0 {
                    (y1 - y0) / di
                } else {
                    0.0
                }
            })
            .collect();
        let max = w.iter().cloned().fold(0.0, f64::max);
        for v in &mut w {
            *v = if max > 0.0 { (*v / max).max(self.f_w_floor) } else { 1.0 };
        }
        w
    }

    /// Weighting at an arbitrary response, interpolated between levels.
    pub fn weight_at(&self, response: f64) -> f64 {
        let s = (response.clamp(0.0, 1.0) * 255.0).min(255.0);
        let k = (s.floor() as usize).min(CRF_SAMPLES - 2);
        let f = s - k as f64;
        self.weighting[k] + f * (self.weighting[k + 1] - self.weighting[k])
    }

    /// Covariance of the linear intensity at response `y`, saturating at
    /// `sigma2_im / f_w_floor`.
    pub fn linear_covariance(&self, response: f64) -> f64 {
        self.sigma2_im / self.weight_at(response).max(self.f_w_floor)
    }

    pub fn frame_covariance(&self, response: &Image, t: Timestamp) -> FrameCovariance {
        let r_bar = response.mapv(|y| self.linear_covariance(y));
        let mut r = r_bar.clone();
        for (rv, &y) in r.iter_mut().zip(response.iter()) {
            *rv = log_covariance(*rv, self.inverse(y), self.i0);
        }
        FrameCovariance { r_bar, r, t }
    }
}

/// Log-domain covariance from linear covariance at intensity `i`.
pub fn log_covariance(r_bar: f64, intensity: f64, i0: f64) -> f64 {
    let d = intensity + i0;
    r_bar / (d * d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCovariance {
    pub r_bar: Image,
    pub r: Image,
    pub t: Timestamp,
}

/// Linear interpolation in time between two covariance images.
///
/// Times outside `[t_k, t_k1]` are clamped to the nearest endpoint.
pub fn interpolate_r(r_k: &Image, t_k: Timestamp, r_k1: &Image, t_k1: Timestamp, t: Timestamp) -> Result<Image> {
    if r_k.dim() != r_k1.dim() {
        return Err(Error::ShapeMismatch {
            left: r_k.dim(),
            right: r_k1.dim(),
        });
    }
    let w = interval_weight(t_k, t_k1, t);
    if w == 0.0 {
        return Ok(r_k.clone());
    }
    if w == 1.0 {
        return Ok(r_k1.clone());
    }
    let mut out = r_k.clone();
    out.zip_mut_with(r_k1, |a, &b| *a = lerp(*a, b, w));
    Ok(out)
}

/// Weight of the later endpoint, clamped to `[0, 1]` with a warning.
pub(crate) fn interval_weight(t_k: Timestamp, t_k1: Timestamp, t: Timestamp) -> f64 {
    if t_k1 <= t_k {
        return 0.0;
    }
    if t < t_k || t > t_k1 {
        warn!("interpolation time {t} outside [{t_k}, {t_k1}], clamping");
    }
    (t.secs_since(t_k) / t_k1.secs_since(t_k)).clamp(0.0, 1.0)
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if a == b {
        a
    } else {
        (1.0 - w) * a + w * b
    }
}
