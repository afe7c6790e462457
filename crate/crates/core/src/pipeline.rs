//! End-to-end reconstruction: timeline, frame reference, filter, snapshots.

use crate::augment::{AugmentParams, FrameReference};
use crate::conv::{run_convolved_pipeline, ConvolvedRun, Kernel};
use crate::error::{Error, Result};
use crate::filters::{AsyncFilter, FilterMode, FilterParams, FilterStats, NoReference, Reference};
use crate::noise::CrfModel;
use crate::timeline::{interleave, interleave_frames, validate_stream, TimelineItem};
use crate::types::{check_frame_spacing, Event, Frame, Image, Timestamp};

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub times: Vec<Timestamp>,
    /// Log-intensity estimates, one per time.
    pub snapshots: Vec<Image>,
    pub stats: FilterStats,
}

/// Earliest moment covered by the data.
pub fn stream_start(events: &[Event], frames: &[Frame]) -> Timestamp {
    let e = events.first().map(|e| e.t);
    let f = frames.first().map(|f| f.window().0);
    match (e, f) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => Timestamp::ZERO,
    }
}

/// Validated inputs and the reference implied by the filter mode.
pub struct Prepared {
    pub timeline: Vec<TimelineItem>,
    pub reference: Option<FrameReference>,
    pub start: Timestamp,
}

impl Prepared {
    pub fn reference(&self) -> &dyn Reference {
        match &self.reference {
            Some(r) => r,
            None => &NoReference,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn prepare(
    events: &[Event],
    frames: &[Frame],
    width: usize,
    height: usize,
    crf: &CrfModel,
    filter: &FilterParams,
    augment: &AugmentParams,
) -> Result<Prepared> {
    filter.validate()?;
    augment.validate()?;
    for f in frames {
        if (f.width(), f.height()) != (width, height) {
            return Err(Error::Geometry(format!(
                "frame at {} is {}x{}, sensor is {width}x{height}",
                f.t_mid,
                f.width(),
                f.height()
            )));
        }
    }
    check_frame_spacing(frames)?;
    let report = validate_stream(events, width, height);
    if report.out_of_bounds + report.zero_polarity > 0 {
        log::warn!(
            "{} out-of-bounds and {} zero-polarity events will be skipped",
            report.out_of_bounds,
            report.zero_polarity
        );
    }
    let start = stream_start(events, frames);
    if filter.mode == FilterMode::HighPass || frames.is_empty() {
        return Ok(Prepared {
            timeline: interleave(events, &[])?,
            reference: None,
            start,
        });
    }
    Ok(Prepared {
        timeline: interleave_frames(events, frames)?,
        reference: Some(FrameReference::build(frames, events, crf, filter.c, augment)?),
        start,
    })
}

fn check_times(times: &[Timestamp]) -> Result<()> {
    if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Unsorted {
            stream: "snapshot times",
            index: i + 1,
        });
    }
    Ok(())
}

/// Log-intensity estimates at the sorted `times`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    events: &[Event],
    frames: &[Frame],
    width: usize,
    height: usize,
    crf: &CrfModel,
    filter: &FilterParams,
    augment: &AugmentParams,
    times: &[Timestamp],
) -> Result<Reconstruction> {
    check_times(times)?;
    let prep = prepare(events, frames, width, height, crf, filter, augment)?;
    let mut f = AsyncFilter::new(*filter, width, height, prep.reference(), prep.start)?;
    let snapshots = f.snapshots(&prep.timeline, events, times)?;
    Ok(Reconstruction {
        times: times.to_vec(),
        snapshots,
        stats: f.stats(),
    })
}

/// One filter per kernel, each sampled at the sorted `times`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_convolved(
    events: &[Event],
    frames: &[Frame],
    width: usize,
    height: usize,
    crf: &CrfModel,
    filter: &FilterParams,
    augment: &AugmentParams,
    kernels: &[Kernel],
    times: &[Timestamp],
) -> Result<Vec<ConvolvedRun>> {
    check_times(times)?;
    let prep = prepare(events, frames, width, height, crf, filter, augment)?;
    run_convolved_pipeline(
        events,
        &prep.timeline,
        &prep.reference(),
        kernels,
        *filter,
        width,
        height,
        prep.start,
        times,
    )
}
