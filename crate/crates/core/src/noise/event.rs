//! Event covariance: process, isolated-pixel and refractory contributions.

use crate::error::{Error, Result};
use crate::types::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventNoiseParams {
    /// Process-noise rate, log-intensity² per second.
    pub sigma2_proc: f64,
    /// Isolated-pixel rate, log-intensity² per second.
    pub sigma2_iso: f64,
    /// Refractory variance, log-intensity².
    pub sigma2_ref: f64,
    /// Upper bound on the refractory period, seconds.
    pub rho_bar: f64,
    /// Chebyshev radius of the neighbourhood used by the isolation term.
    pub neighborhood_radius: usize,
    /// Covariance used for the first event seen at a pixel.
    pub q_init: f64,
}

impl Default for EventNoiseParams {
    fn default() -> Self {
        EventNoiseParams {
            sigma2_proc: 0.0005,
            sigma2_iso: 0.03,
            sigma2_ref: 0.01,
            rho_bar: 1e-3,
            neighborhood_radius: 1,
            q_init: 0.01,
        }
    }
}

impl EventNoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma2_proc", self.sigma2_proc),
            ("sigma2_iso", self.sigma2_iso),
            ("sigma2_ref", self.sigma2_ref),
            ("q_init", self.q_init),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !(self.rho_bar > 0.0) {
            return Err(Error::NonPositive {
                name: "rho_bar",
                value: self.rho_bar,
            });
        }
        Ok(())
    }
}

/// Brownian process noise accumulated since the previous event at the pixel.
pub fn q_process(dt: f64, params: &EventNoiseParams) -> Result<f64> {
    if dt < 0.0 {
        return Err(Error::NegativeInterval(dt));
    }
    Ok(params.sigma2_proc * dt)
}

/// Isolation noise: grows with the time since the latest neighbour event, or
/// since `stream_start` when no neighbour has fired yet.
pub fn q_isolated(
    t_event: Timestamp,
    last_neighbor_event: Option<Timestamp>,
    stream_start: Timestamp,
    params: &EventNoiseParams,
) -> f64 {
    let since = last_neighbor_event.unwrap_or(stream_start);
    params.sigma2_iso * t_event.secs_since(since).max(0.0)
}

/// Refractory noise: `sigma2_ref` when the previous event is at most `rho_bar` ago.
pub fn q_refractory(dt: f64, params: &EventNoiseParams) -> f64 {
    if dt <= params.rho_bar {
        params.sigma2_ref
    } else {
        0.0
    }
}

/// Event history of one pixel as seen by the noise model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PixelHistory {
    pub last_event: Option<Timestamp>,
    pub last_neighbor_event: Option<Timestamp>,
}

/// Total event covariance `Q` for an event at `t`.
///
/// A pixel's first event has no own history; its process and refractory terms
/// are replaced by `q_init`.
pub fn event_covariance(
    history: &PixelHistory,
    t: Timestamp,
    stream_start: Timestamp,
    params: &EventNoiseParams,
) -> f64 {
    let iso = q_isolated(t, history.last_neighbor_event, stream_start, params);
    let own = match history.last_event {
        Some(prev) => {
            let dt = t.secs_since(prev).max(0.0);
            params.sigma2_proc * dt + q_refractory(dt, params)
        }
        None => params.q_init,
    };
    own + iso
}

/// Per-pixel last-event and last-neighbour-event maps for a whole image.
///
/// Neighbour timestamps are only published by [`NoiseHistory::flush`], so events
/// that share a timestamp never see each other as neighbours.
#[derive(Debug, Clone)]
pub struct NoiseHistory {
    width: usize,
    height: usize,
    radius: usize,
    stream_start: Timestamp,
    cells: Vec<PixelHistory>,
    pending: Vec<(usize, usize, Timestamp)>,
}

impl NoiseHistory {
    pub fn new(width: usize, height: usize, radius: usize, stream_start: Timestamp) -> Self {
        NoiseHistory {
            width,
            height,
            radius,
            stream_start,
            cells: vec![PixelHistory::default(); width * height],
            pending: Vec::new(),
        }
    }

    pub fn history(&self, x: usize, y: usize) -> &PixelHistory {
        &self.cells[y * self.width + x]
    }

    pub fn covariance(&self, x: usize, y: usize, t: Timestamp, params: &EventNoiseParams) -> f64 {
        event_covariance(self.history(x, y), t, self.stream_start, params)
    }

    /// Records an event; the pixel's own history updates immediately.
    pub fn record(&mut self, x: usize, y: usize, t: Timestamp) {
        self.cells[y * self.width + x].last_event = Some(t);
        self.pending.push((x, y, t));
    }

    /// Publishes recorded events to their neighbourhoods (centre excluded,
    /// clipped at the image border).
    pub fn flush(&mut self) {
        let r = self.radius;
        for (x, y, t) in self.pending.drain(..) {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(self.width - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(self.height - 1));
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    if nx == x && ny == y {
                        continue;
                    }
                    let cell = &mut self.cells[ny * self.width + nx];
                    cell.last_neighbor_event = Some(cell.last_neighbor_event.map_or(t, |o| o.max(t)));
                }
            }
        }
    }
}
