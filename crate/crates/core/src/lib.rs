//! Continuous-time fusion of event streams and camera frames.
//!
//! Per-pixel complementary and Kalman filters fed by events and by augmented
//! (deblurred, interpolated) frames, with event-space convolution, a
//! ground-truth simulator and image metrics.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod conv;
pub mod error;
pub mod filters;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod sim;
pub mod timeline;
pub mod types;

pub use error::{Error, Result};
pub use types::{Event, Frame, Image, Timestamp};
