use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// History length, future length and the re-inference gap, all in steps.
/// The per-window prediction length equals the gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub history: usize,
    pub future: usize,
    pub gap: usize,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        HorizonSpec {
            history: 8,
            future: 12,
            gap: 4,
        }
    }
}

impl HorizonSpec {
    pub fn new(history: usize, future: usize, gap: usize) -> Result<Self> {
        let spec = HorizonSpec {
            history,
            future,
            gap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history < 1 {
            return Err(Error::Config("history must be >= 1".into()));
        }
        if self.gap < 1 {
            return Err(Error::Config("re-inference gap must be >= 1".into()));
        }
        if self.future < 1 || self.gap > self.future {
            return Err(Error::Config(format!(
                "need 1 <= gap <= future, got gap {} future {}",
                self.gap, self.future
            )));
        }
        Ok(())
    }

    /// Steps decoded per window.
    pub fn per_window(&self) -> usize {
        self.gap
    }

    pub fn total(&self) -> usize {
        self.history + self.future
    }

    pub fn window_count(&self) -> usize {
        self.future.div_ceil(self.gap)
    }
}

/// One relational re-inference window. Ranges are 0-based, half-open step
/// indices into the full `history + future` timeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub encode: Range<usize>,
    pub decode: Range<usize>,
}

impl Window {
    /// 1-based inclusive encoder step range `[first, last]`.
    pub fn encode_one_based(&self) -> (usize, usize) {
        (self.encode.start + 1, self.encode.end)
    }

    /// Decode range as the 1-based half-open interval `(after, last]`.
    pub fn decode_one_based(&self) -> (usize, usize) {
        (self.decode.start, self.decode.end)
    }

    pub fn decode_len(&self) -> usize {
        self.decode.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub spec: HorizonSpec,
    pub windows: Vec<Window>,
}

pub fn make_window_plan(spec: HorizonSpec) -> Result<WindowPlan> {
    spec.validate()?;
    let end = spec.total();
    let windows = (0..spec.window_count())
        .map(|b| {
            let shift = b * spec.gap;
            Window {
                index: b,
                encode: shift..spec.history + shift,
                decode: spec.history + shift..(spec.history + shift + spec.gap).min(end),
            }
        })
        .collect();
    Ok(WindowPlan { spec, windows })
}
