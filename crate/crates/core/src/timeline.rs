//! Merging the event stream and the frame sequence into one ordered timeline.

use crate::error::{Error, Result};
use crate::types::{Event, Frame, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    /// Index into the frame sequence.
    FrameBoundary { frame: usize },
    /// Half-open range into the event sequence; all events share one timestamp.
    EventBatch { start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineItem {
    pub t: Timestamp,
    pub kind: ItemKind,
}

fn first_unsorted<T>(items: &[T], key: impl Fn(&T) -> Timestamp) -> Option<usize> {
    items
        .windows(2)
        .position(|w| key(&w[1]) < key(&w[0]))
        .map(|i| i + 1)
}

/// Merges events and frame timestamps into one timeline, sorted by time.
///
/// Events sharing a timestamp are grouped into a single batch. A frame boundary
/// is placed before any event batch with the same timestamp.
pub fn interleave(events: &[Event], frame_times: &[Timestamp]) -> Result<Vec<TimelineItem>> {
    if let Some(index) = first_unsorted(events, |e| e.t) {
        return Err(Error::Unsorted {
            stream: "events",
            index,
        });
    }
    if let Some(index) = first_unsorted(frame_times, |t| *t) {
        return Err(Error::Unsorted {
            stream: "frames",
            index,
        });
    }

    let mut out = Vec::with_capacity(frame_times.len() + events.len() / 4 + 1);
    let mut e = 0;
    let mut f = 0;
    while e < events.len() || f < frame_times.len() {
        let take_frame = match (events.get(e), frame_times.get(f)) {
            (Some(ev), Some(&tf)) => tf <= ev.t,
            (None, Some(_)) => true,
            _ => false,
        };
        if take_frame {
            out.push(TimelineItem {
                t: frame_times[f],
                kind: ItemKind::FrameBoundary { frame: f },
            });
            f += 1;
        } else {
            let t = events[e].t;
            let start = e;
            while e < events.len() && events[e].t == t {
                e += 1;
            }
            out.push(TimelineItem {
                t,
                kind: ItemKind::EventBatch { start, end: e },
            });
        }
    }
    Ok(out)
}

/// Convenience wrapper over [`interleave`] taking frames directly.
pub fn interleave_frames(events: &[Event], frames: &[Frame]) -> Result<Vec<TimelineItem>> {
    let times: Vec<Timestamp> = frames.iter().map(|f| f.t_mid).collect();
    interleave(events, &times)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamReport {
    pub out_of_bounds: usize,
    pub out_of_order: usize,
    pub zero_polarity: usize,
}

impl StreamReport {
    pub fn accepted(&self) -> bool {
        self.out_of_bounds == 0 && self.out_of_order == 0 && self.zero_polarity == 0
    }
}

/// Counts records that would be rejected by the filters.
pub fn validate_stream(events: &[Event], width: usize, height: usize) -> StreamReport {
    let mut report = StreamReport::default();
    for (i, ev) in events.iter().enumerate() {
        if usize::from(ev.x) >= width || usize::from(ev.y) >= height {
            report.out_of_bounds += 1;
        }
        if ev.polarity == 0 {
            report.zero_polarity += 1;
        }
        if i > 0 && ev.t < events[i - 1].t {
            report.out_of_order += 1;
        }
    }
    report
}
