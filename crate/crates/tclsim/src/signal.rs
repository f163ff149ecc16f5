//! Piecewise-constant dimensionless power references.
//!
//! A [`ReferenceSignal`] is an ordered list of breakpoints `(t_start, pi)`.
//! Segments are left-open and right-closed: a breakpoint's value applies to
//! times *strictly after* it, so the value *at* a breakpoint instant still
//! belongs to the preceding segment. The controller, invoked at `t`,
//! therefore asks for the value just after `t` ([`ReferenceSignal::value_after`]),
//! while instruments sampling the past interval use [`ReferenceSignal::value_at`].

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("could not read signal file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid signal: {0}")]
    Invalid(String),
    #[error("time {t} s outside the signal domain [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
}

/// Piecewise-constant reference, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    /// `(t_start, pi)` with strictly increasing times, first at `t = 0`.
    breakpoints: Vec<(f64, f64)>,
    horizon: f64,
}

impl ReferenceSignal {
    pub fn from_breakpoints(
        breakpoints: Vec<(f64, f64)>,
        horizon: f64,
    ) -> Result<Self, SignalError> {
        if breakpoints.is_empty() {
            return Err(SignalError::Invalid("no breakpoints".into()));
        }
        if breakpoints[0].0 != 0.0 {
            return Err(SignalError::Invalid(format!(
                "first breakpoint must be at t = 0, got {}",
                breakpoints[0].0
            )));
        }
        for pair in breakpoints.windows(2) {
            if pair[1].0 <= pair[0].0 || pair[1].0.is_nan() {
                return Err(SignalError::Invalid(format!(
                    "breakpoint times must be strictly increasing, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for &(t, pi) in &breakpoints {
            if pi <= 0.0 || !pi.is_finite() {
                return Err(SignalError::Invalid(format!(
                    "reference must be positive and finite, got {pi} at t = {t}"
                )));
            }
        }
        if horizon < breakpoints.last().unwrap().0 || horizon.is_nan() {
            return Err(SignalError::Invalid(format!(
                "horizon {horizon} precedes the last breakpoint"
            )));
        }
        Ok(ReferenceSignal {
            breakpoints,
            horizon,
        })
    }

    /// Constant reference `pi` over `horizon` seconds.
    pub fn constant(pi: f64, horizon: f64) -> Result<Self, SignalError> {
        Self::from_breakpoints(vec![(0.0, pi)], horizon)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Value of the segment containing `t`: the latest breakpoint strictly
    /// before `t` (at `t = 0`, the initial value).
    pub fn value_at(&self, t: f64) -> Result<f64, SignalError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(SignalError::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let idx = self.breakpoints.partition_point(|&(start, _)| start < t);
        Ok(self.breakpoints[idx.saturating_sub(1).min(self.breakpoints.len() - 1)].1)
    }

    /// Value applying immediately *after* `t`: the latest breakpoint at or
    /// before `t`. Past the horizon, the final segment's value holds.
    pub fn value_after(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&(start, _)| start <= t);
        self.breakpoints[idx.saturating_sub(1)].1
    }

    /// Exact time integral of the signal over `[0, horizon]`.
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        for (i, &(start, pi)) in self.breakpoints.iter().enumerate() {
            let end = self
                .breakpoints
                .get(i + 1)
                .map_or(self.horizon, |&(next, _)| next);
            total += pi * (end - start);
        }
        total
    }

    /// Tile the signal `n` times end to end.
    pub fn repeat(&self, n: usize) -> Result<Self, SignalError> {
        if n == 0 {
            return Err(SignalError::Invalid("cannot repeat a signal 0 times".into()));
        }
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len() * n);
        for copy in 0..n {
            let offset = copy as f64 * self.horizon;
            for &(t, pi) in &self.breakpoints {
                let shifted = t + offset;
                // the copy boundary coincides with the previous horizon
                if breakpoints.last().is_some_and(|&(prev, _)| prev >= shifted) {
                    continue;
                }
                breakpoints.push((shifted, pi));
            }
        }
        Self::from_breakpoints(breakpoints, self.horizon * n as f64)
    }

    /// Parse a two-column `t_start,pi` text file. `#` starts a comment; a
    /// non-numeric first line is accepted as a header. The final segment
    /// extends indefinitely (unbounded horizon).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SignalError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| SignalError::Io {
            path: display.clone(),
            source,
        })?;
        Self::parse(&text, &display)
    }

    fn parse(text: &str, path: &str) -> Result<Self, SignalError> {
        let mut breakpoints = Vec::new();
        let mut saw_data = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(SignalError::Parse {
                        path: path.into(),
                        line: line_no,
                        msg: format!("expected two comma-separated fields, got `{line}`"),
                    })
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(pi)) => {
                    breakpoints.push((t, pi));
                    saw_data = true;
                }
                _ if !saw_data => continue, // header line
                _ => {
                    return Err(SignalError::Parse {
                        path: path.into(),
                        line: line_no,
                        msg: format!("could not parse `{line}` as two floats"),
                    })
                }
            }
        }
        if breakpoints.is_empty() {
            return Err(SignalError::Parse {
                path: path.into(),
                line: 1,
                msg: "no data lines".into(),
            });
        }
        Self::from_breakpoints(breakpoints, f64::INFINITY)
    }

    /// Render in the same two-column format accepted by [`ReferenceSignal::load`].
    pub fn to_file_format(&self) -> String {
        let mut out = String::from("time_s,pi\n");
        for &(t, pi) in &self.breakpoints {
            let _ = writeln!(out, "{t},{pi}");
        }
        out
    }
}

/// Deterministic five-hour test reference exercising the feature classes a
/// dispatch signal can show: steps both ways, a square wave, a smooth
/// (sampled-and-held) modulation, and recovery to nominal.
///
/// Layout, with `h` in hours from the start:
/// `1.0` on `[0, 0.5h]`; `0.7` on `(0.5h, 1h]`; `1.3` on `(1h, 1.5h]`;
/// a `1.25/0.75` square wave with 10-minute half-period on `(1.5h, 2.5h]`;
/// `1 + 0.3 sin(2 pi (t - 2.5h) / 1h)` held per 10 s on `(2.5h, 4h]`;
/// `1.0` on `(4h, 5h]`.
pub fn canonical_test_signal() -> ReferenceSignal {
    let hour = 3600.0;
    let mut breakpoints = vec![(0.0, 1.0), (0.5 * hour, 0.7), (1.0 * hour, 1.3)];
    // square wave, half-period 600 s
    let mut t = 1.5 * hour;
    let mut high = true;
    while t < 2.5 * hour {
        breakpoints.push((t, if high { 1.25 } else { 0.75 }));
        high = !high;
        t += 600.0;
    }
    // sampled-and-held sinusoid, 10 s resolution
    let sin_start = 2.5 * hour;
    let mut t = sin_start;
    while t < 4.0 * hour {
        let pi = 1.0 + 0.3 * (2.0 * std::f64::consts::PI * (t - sin_start) / hour).sin();
        breakpoints.push((t, pi));
        t += 10.0;
    }
    breakpoints.push((4.0 * hour, 1.0));
    ReferenceSignal::from_breakpoints(breakpoints, 5.0 * hour)
        .expect("canonical signal is valid by construction")
}
