//! Event and frame uncertainty models.

mod crf;
mod event;

pub use crf::{interpolate_r, log_covariance, CrfModel, FrameCovariance, SensorProfile, CRF_SAMPLES};
pub(crate) use crf::{interval_weight, lerp};
pub use event::{
    event_covariance, q_isolated, q_process, q_refractory, EventNoiseParams, NoiseHistory, PixelHistory,
};
