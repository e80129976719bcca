//! Rough intensity reconstruction by leaky integration of events.
//!
//! Each pixel carries a state that jumps by `polarity * tau` at every event
//! and decays exponentially at rate `decay` (1/s) in between. The state at
//! the end of the window is min-max normalized to `[0, 1]`; edges survive,
//! absolute brightness does not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::EventStream;
use crate::imageops::{Image, Modality};

/// Default integration window length, microseconds.
pub const DEFAULT_WINDOW_US: u64 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Assumed contrast threshold.
    pub tau: f64,
    /// High-pass rate in 1/s.
    pub decay: f64,
    /// Closed window `[t0, t1]` in microseconds. When unset, the window is
    /// the [`DEFAULT_WINDOW_US`] ending at the last event.
    pub window: Option<[u64; 2]>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            tau: 0.15,
            decay: 10.0,
            window: None,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("reconstruction tau must be positive".into()));
        }
        if !(self.decay >= 0.0) {
            return Err(Error::Config("decay must be >= 0".into()));
        }
        if let Some([t0, t1]) = self.window {
            if t0 >= t1 {
                return Err(Error::Config(format!(
                    "empty reconstruction window [{t0}, {t1}]"
                )));
            }
        }
        Ok(())
    }

    /// The default-length window ending at `t_frame`.
    pub fn window_ending_at(mut self, t_frame: u64) -> Self {
        self.window = Some([t_frame.saturating_sub(DEFAULT_WINDOW_US), t_frame.max(1)]);
        self
    }

    fn resolve_window(&self, stream: &EventStream) -> (u64, u64) {
        match self.window {
            Some([t0, t1]) => (t0, t1),
            None => {
                let end = stream.events().last().map_or(DEFAULT_WINDOW_US, |e| e.t);
                (end.saturating_sub(DEFAULT_WINDOW_US), end.max(1))
            }
        }
    }
}

/// Per-pixel state at the end of the window, before normalization.
pub fn integrate_state(stream: &EventStream, cfg: &ReconstructionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (t0, t1) = cfg.resolve_window(stream);
    let w = stream.width();
    let mut state = vec![0.0; w * stream.height()];
    for e in stream.events().iter().filter(|e| e.t >= t0 && e.t <= t1) {
        let age = (t1 - e.t) as f64 * 1e-6;
        let weight = if cfg.decay > 0.0 {
            (-cfg.decay * age).exp()
        } else {
            1.0
        };
        state[e.y as usize * w + e.x as usize] += e.polarity.sign() * cfg.tau * weight;
    }
    Ok(state)
}

/// Min-max maps `values` onto `[0, 1]`; a constant raster maps to 0.5.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Reconstructs a normalized intensity image from the events in the window.
pub fn integrate_events(stream: &EventStream, cfg: &ReconstructionConfig) -> Result<Image> {
    let state = integrate_state(stream, cfg)?;
    Image::new(
        stream.width(),
        stream.height(),
        normalize_min_max(&state),
        Modality::Reconstruction,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{Event, Polarity};

    fn cfg(decay: f64) -> ReconstructionConfig {
        ReconstructionConfig {
            tau: 0.15,
            decay,
            window: Some([0, 1000]),
        }
    }

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(8, 8, events).unwrap()
    }

    #[test]
    fn empty_stream_is_uniform_gray() {
        let img = integrate_events(&stream(vec![]), &cfg(10.0)).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.5));
        assert_eq!(img.modality(), Modality::Reconstruction);
    }

    #[test]
    fn single_event_is_one_hot() {
        let img = integrate_events(
            &stream(vec![Event::new(10, 3, 4, Polarity::Positive)]),
            &cfg(0.0),
        )
        .unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (x, y) == (3, 4) { 1.0 } else { 0.0 };
                assert_eq!(img.get(x, y), expect);
            }
        }
    }

    #[test]
    fn jump_recurrence_by_hand() {
        let s = stream(vec![
            Event::new(10, 1, 1, Polarity::Positive),
            Event::new(20, 1, 1, Polarity::Positive),
            Event::new(30, 2, 1, Polarity::Positive),
        ]);
        let state = integrate_state(&s, &cfg(0.0)).unwrap();
        assert!((state[9] - 0.30).abs() < 1e-12);
        assert!((state[10] - 0.15).abs() < 1e-12);
        let img = integrate_events(&s, &cfg(0.0)).unwrap();
        assert_eq!(img.get(1, 1), 1.0);
        assert!((img.get(2, 1) - 0.5).abs() < 1e-12);
        assert_eq!(img.get(0, 0), 0.0);
    }

    #[test]
    fn decay_attenuates_old_events() {
        let s = stream(vec![Event::new(0, 0, 0, Polarity::Positive)]);
        let c = ReconstructionConfig {
            window: Some([0, 100_000]),
            ..cfg(10.0)
        };
        let state = integrate_state(&s, &c).unwrap();
        assert!((state[0] - 0.15 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn events_outside_window_are_ignored() {
        let s = stream(vec![
            Event::new(5, 0, 0, Polarity::Positive),
            Event::new(2000, 1, 0, Polarity::Positive),
        ]);
        let c = ReconstructionConfig {
            window: Some([10, 1000]),
            ..cfg(0.0)
        };
        assert!(integrate_state(&s, &c).unwrap().iter().all(|&v| v == 0.0));
        let bad = ReconstructionConfig {
            window: Some([10, 10]),
            ..cfg(0.0)
        };
        assert!(integrate_state(&s, &bad).is_err());
    }

    #[test]
    fn adding_positive_event_never_decreases_state() {
        let base = vec![
            Event::new(100, 2, 2, Polarity::Negative),
            Event::new(300, 2, 2, Polarity::Positive),
        ];
        let before = integrate_state(&stream(base.clone()), &cfg(10.0)).unwrap();
        let mut more = base;
        more.push(Event::new(200, 2, 2, Polarity::Positive));
        let after = integrate_state(&stream(more), &cfg(10.0)).unwrap();
        assert!(after[18] > before[18]);
    }
}
