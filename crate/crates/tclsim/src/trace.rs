//! Simulation traces and their on-disk format.
//!
//! Traces are plain delimited text: `#`-prefixed reproducibility comments
//! (seed, config fingerprint, code version), one header line, then fixed
//! columns `time_s,aggregate_w,target_w,error_w_per_device,mean_z,n_on`.
//! Files written by `tclsim run` parse back losslessly for analysis.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::ControllerState;
use crate::model::DeviceState;

pub const TRACE_COLUMNS: &str = "time_s,aggregate_w,target_w,error_w_per_device,mean_z,n_on";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("could not access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed trace at {path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("trace is missing required column `{0}`")]
    MissingColumn(String),
}

/// Aggregate time series of one simulation run. All series share one clock.
#[derive(Debug, Clone, Default)]
pub struct TraceSet {
    pub times: Vec<f64>,
    /// Realized fleet power at each record, W.
    pub aggregate_w: Vec<f64>,
    /// Reference power for the upcoming interval, W.
    pub target_w: Vec<f64>,
    /// Fleet-average stored-energy coordinate.
    pub mean_z: Vec<f64>,
    /// Number of compressors running.
    pub n_on: Vec<u64>,
    pub per_device: Option<PerDeviceTrace>,
    pub n_devices: usize,
    /// Fleet total steady-state power, W.
    pub sum_p0: f64,
    pub energy_clip_events: u64,
    pub power_clip_events: u64,
    /// Worst thermostat-band excursion beyond the per-device drift
    /// allowance; nonpositive means every device stayed within bounds.
    pub max_band_margin: f64,
    /// Largest stochastic switching probability any controller emitted.
    pub max_switch_probability: f64,
    /// Reproducibility metadata recovered when parsing a written trace.
    pub source_seed: Option<u64>,
    pub source_fingerprint: Option<u64>,
}

impl TraceSet {
    pub fn with_capacity(records: usize, n_devices: usize, sum_p0: f64) -> Self {
        TraceSet {
            times: Vec::with_capacity(records),
            aggregate_w: Vec::with_capacity(records),
            target_w: Vec::with_capacity(records),
            mean_z: Vec::with_capacity(records),
            n_on: Vec::with_capacity(records),
            per_device: None,
            n_devices,
            sum_p0,
            energy_clip_events: 0,
            power_clip_events: 0,
            max_band_margin: f64::NEG_INFINITY,
            max_switch_probability: 0.0,
            source_seed: None,
            source_fingerprint: None,
        }
    }

    pub fn push_row(&mut self, t: f64, aggregate: f64, target: f64, mean_z: f64, n_on: u64) {
        self.times.push(t);
        self.aggregate_w.push(aggregate);
        self.target_w.push(target);
        self.mean_z.push(mean_z);
        self.n_on.push(n_on);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Per-appliance tracking error at record `i`, W.
    pub fn error_per_device(&self, i: usize) -> f64 {
        (self.aggregate_w[i] - self.target_w[i]) / self.n_devices as f64
    }

    /// Render in the trace file format, with reproducibility comments.
    pub fn to_csv(&self, seed: u64, config_fingerprint: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tclsim trace v{}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# seed={seed}");
        let _ = writeln!(out, "# config_hash={config_fingerprint:016x}");
        let _ = writeln!(out, "# n_devices={}", self.n_devices);
        let _ = writeln!(out, "# sum_p0_w={}", self.sum_p0);
        let _ = writeln!(out, "{TRACE_COLUMNS}");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[i],
                self.aggregate_w[i],
                self.target_w[i],
                self.error_per_device(i),
                self.mean_z[i],
                self.n_on[i]
            );
        }
        out
    }

    pub fn write_csv(
        &self,
        path: impl AsRef<Path>,
        seed: u64,
        config_fingerprint: u64,
    ) -> Result<(), TraceError> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(self.to_csv(seed, config_fingerprint).as_bytes())
            .map_err(|source| TraceError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: display.clone(),
            source,
        })?;
        Self::parse_csv(&text, &display)
    }

    pub fn parse_csv(text: &str, path: &str) -> Result<Self, TraceError> {
        let mut trace = TraceSet {
            max_band_margin: f64::NEG_INFINITY,
            max_switch_probability: 0.0,
            ..TraceSet::default()
        };
        let mut header_seen = false;
        let mut columns: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("n_devices=") {
                    trace.n_devices = v.trim().parse().unwrap_or(0);
                } else if let Some(v) = comment.strip_prefix("sum_p0_w=") {
                    trace.sum_p0 = v.trim().parse().unwrap_or(0.0);
                } else if let Some(v) = comment.strip_prefix("seed=") {
                    trace.source_seed = v.trim().parse().ok();
                } else if let Some(v) = comment.strip_prefix("config_hash=") {
                    trace.source_fingerprint = u64::from_str_radix(v.trim(), 16).ok();
                }
                continue;
            }
            if !header_seen {
                columns = line.split(',').map(|c| c.trim().to_string()).collect();
                for required in ["time_s", "aggregate_w", "target_w", "mean_z", "n_on"] {
                    if !columns.iter().any(|c| c == required) {
                        return Err(TraceError::MissingColumn(required.into()));
                    }
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(TraceError::Malformed {
                    path: path.into(),
                    line: line_no,
                    msg: format!(
                        "expected {} fields, got {}",
                        columns.len(),
                        fields.len()
                    ),
                });
            }
            let get = |name: &str| -> Result<f64, TraceError> {
                let pos = columns.iter().position(|c| c == name).unwrap();
                fields[pos].parse().map_err(|_| TraceError::Malformed {
                    path: path.into(),
                    line: line_no,
                    msg: format!("could not parse `{}` in column {name}", fields[pos]),
                })
            };
            trace.times.push(get("time_s")?);
            trace.aggregate_w.push(get("aggregate_w")?);
            trace.target_w.push(get("target_w")?);
            trace.mean_z.push(get("mean_z")?);
            trace.n_on.push(get("n_on")? as u64);
        }
        if !header_seen || trace.is_empty() {
            return Err(TraceError::Malformed {
                path: path.into(),
                line: 1,
                msg: "no trace data".into(),
            });
        }
        Ok(trace)
    }
}

/// Optional per-device recording: one row of temperatures, compressor bits
/// and controller coordinates per record instant.
#[derive(Debug, Clone)]
pub struct PerDeviceTrace {
    pub temperatures: Vec<Vec<f64>>,
    pub compressors: Vec<Vec<bool>>,
    pub z: Vec<Vec<f64>>,
}

impl PerDeviceTrace {
    pub fn with_capacity(records: usize, _n_devices: usize) -> Self {
        PerDeviceTrace {
            temperatures: Vec::with_capacity(records),
            compressors: Vec::with_capacity(records),
            z: Vec::with_capacity(records),
        }
    }

    pub fn push_row<'a>(
        &mut self,
        devices: impl Iterator<Item = (&'a DeviceState, &'a ControllerState)>,
    ) {
        let mut temps = Vec::new();
        let mut comps = Vec::new();
        let mut zs = Vec::new();
        for (state, ctrl) in devices {
            temps.push(state.temperature);
            comps.push(state.compressor);
            zs.push(ctrl.z);
        }
        self.temperatures.push(temps);
        self.compressors.push(comps);
        self.z.push(zs);
    }
}
