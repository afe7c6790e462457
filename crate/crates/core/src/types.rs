//! Domain types shared by every stage: timestamps, events and frames.
//!
//! Timestamps are integer microseconds since the stream epoch so that ordering
//! is exact; all filter arithmetic converts intervals to seconds in `f64`.

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Row-major grayscale image, indexed `[[y, x]]`.
pub type Image = Array2<f64>;

/// Microseconds since the stream epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(i64::MAX);

    pub const fn from_micros(micros: i64) -> Self {
        Timestamp(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    /// Nearest microsecond to `secs`.
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as i64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Signed interval `self - earlier` in seconds.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1e6
    }

    pub fn offset_micros(self, delta: i64) -> Self {
        Timestamp(self.0 + delta)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / 1_000_000, abs % 1_000_000)
    }
}

/// One polarity impulse at a pixel.
///
/// `polarity` is `+1` or `-1`; zero marks a synchronisation record that carries
/// no intensity information and is rejected by [`crate::timeline::validate_stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: Timestamp,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

impl Event {
    pub fn new(t: Timestamp, x: u16, y: u16, polarity: i8) -> Self {
        Event { t, x, y, polarity }
    }

    pub fn sign(&self) -> f64 {
        f64::from(self.polarity)
    }
}

/// A conventional camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Midpoint of the exposure window.
    pub t_mid: Timestamp,
    /// Exposure duration in seconds.
    pub exposure: f64,
    /// Raw camera response in `[0, 1]`.
    pub response: Image,
}

impl Frame {
    pub fn new(t_mid: Timestamp, exposure: f64, response: Image) -> Result<Self> {
        if !(exposure >= 0.0 && exposure.is_finite()) {
            return Err(Error::invalid(format!("exposure {exposure} must be finite and >= 0")));
        }
        if let Some(v) = response.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("frame response {v} outside [0, 1]")));
        }
        Ok(Frame {
            t_mid,
            exposure,
            response,
        })
    }

    pub fn width(&self) -> usize {
        self.response.ncols()
    }

    pub fn height(&self) -> usize {
        self.response.nrows()
    }

    /// Half the exposure, rounded to the nearest microsecond.
    pub fn half_exposure_micros(&self) -> i64 {
        (self.exposure * 0.5e6).round() as i64
    }

    /// Exposure window `[t_mid - T/2, t_mid + T/2]`.
    pub fn window(&self) -> (Timestamp, Timestamp) {
        let half = self.half_exposure_micros();
        (self.t_mid.offset_micros(-half), self.t_mid.offset_micros(half))
    }
}

/// Checks that consecutive frames have non-overlapping exposures.
pub fn check_frame_spacing(frames: &[Frame]) -> Result<()> {
    for (k, pair) in frames.windows(2).enumerate() {
        if pair[1].t_mid <= pair[0].t_mid {
            return Err(Error::Unsorted {
                stream: "frames",
                index: k + 1,
            });
        }
        if pair[0].window().1 > pair[1].window().0 {
            return Err(Error::invalid(format!(
                "exposures of frames {k} and {} overlap",
                k + 1
            )));
        }
    }
    Ok(())
}
