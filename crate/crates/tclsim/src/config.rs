//! Experiment configuration: a flat `section.key = value` text format plus
//! command-line overrides.
//!
//! ```text
//! # fleet
//! fleet.devices = 1000
//! fleet.hetero_lo = 0.8
//! fleet.hetero_hi = 1.2
//! fleet.w = 0.9
//! fleet.model_error = known      # known | common | random
//! fleet.seed = 1
//!
//! sim.step_s = 10
//! sim.horizon_s = 18000
//! sim.skip_prob = 0
//! sim.door_rate_per_day = 0      # > 0 enables door events
//! sim.door_duration_s = 20
//! sim.door_alpha_factor = 25
//!
//! signal.builtin = canonical     # or signal.path = my_signal.csv
//! signal.repeat = 1
//!
//! output.dir = out
//! analyses = tracking,acf
//! acf.max_lag = 100
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fleet::{FleetConfig, ModelErrorMode, SimConfig};
use crate::signal::{canonical_test_signal, ReferenceSignal, SignalError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("exactly one signal source required, got builtin `{builtin}` and path `{path}`")]
    AmbiguousSignal { builtin: String, path: String },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Which analyses to run after a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Tracking,
    Acf,
    Convergence,
    Doors,
}

impl Analysis {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "tracking" => Ok(Analysis::Tracking),
            "acf" => Ok(Analysis::Acf),
            "convergence" => Ok(Analysis::Convergence),
            "doors" => Ok(Analysis::Doors),
            other => Err(ConfigError::BadValue {
                key: "analyses".into(),
                msg: format!("unknown analysis `{other}`"),
            }),
        }
    }
}

/// Where the reference signal comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Builtin(String),
    Path(PathBuf),
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub fleet: FleetConfig,
    pub sim: SimConfig,
    pub signal_source: SignalSource,
    pub signal_repeat: usize,
    pub output_dir: PathBuf,
    pub analyses: Vec<Analysis>,
    pub acf_max_lag: usize,
    pub convergence_n_list: Vec<usize>,
    pub convergence_repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fleet: FleetConfig::default(),
            sim: SimConfig::default(),
            signal_source: SignalSource::Builtin("canonical".into()),
            signal_repeat: 1,
            output_dir: PathBuf::from("out"),
            analyses: vec![Analysis::Tracking],
            acf_max_lag: 100,
            convergence_n_list: vec![1000, 10_000],
            convergence_repetitions: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        Self::parse(&text, &display)
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    path: path.into(),
                    line: idx + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_pairs(pairs)
    }

    fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut builtin: Option<String> = None;
        let mut sig_path: Option<String> = None;
        let mut door_rate_per_day: Option<f64> = None;
        let mut door_profile: Option<Vec<f64>> = None;

        for (key, value) in &pairs {
            match key.as_str() {
                "fleet.devices" => cfg.fleet.n_devices = parse_num(key, value)?,
                "fleet.hetero_lo" => cfg.fleet.hetero_range.0 = parse_num(key, value)?,
                "fleet.hetero_hi" => cfg.fleet.hetero_range.1 = parse_num(key, value)?,
                "fleet.w" => cfg.fleet.w = parse_num(key, value)?,
                "fleet.seed" => cfg.fleet.master_seed = parse_num(key, value)?,
                "fleet.model_error" => {
                    cfg.fleet.model_error_mode = parse_model_error(value)?;
                }
                "sim.step_s" => cfg.sim.step_s = parse_num(key, value)?,
                "sim.horizon_s" => cfg.sim.horizon_s = parse_num(key, value)?,
                "sim.skip_prob" => cfg.sim.skip_probability = parse_num(key, value)?,
                "sim.door_rate_per_day" => door_rate_per_day = Some(parse_num(key, value)?),
                "sim.door_profile" => {
                    door_profile = Some(
                        value
                            .split(',')
                            .map(|v| parse_num(key, v.trim()))
                            .collect::<Result<_, _>>()?,
                    )
                }
                "sim.door_duration_s" => cfg.sim.door_duration_s = parse_num(key, value)?,
                "sim.door_alpha_factor" => cfg.sim.door_alpha_factor = parse_num(key, value)?,
                "sim.record_per_device" => {
                    cfg.sim.record_per_device = parse_bool(key, value)?;
                }
                "signal.builtin" => builtin = Some(value.clone()),
                "signal.path" => sig_path = Some(value.clone()),
                "signal.repeat" => cfg.signal_repeat = parse_num(key, value)?,
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                "analyses" => {
                    cfg.analyses = value
                        .split(',')
                        .map(|a| Analysis::parse(a.trim()))
                        .collect::<Result<_, _>>()?;
                }
                "acf.max_lag" => cfg.acf_max_lag = parse_num(key, value)?,
                "convergence.n_list" => {
                    cfg.convergence_n_list = value
                        .split(',')
                        .map(|v| parse_num(key, v.trim()))
                        .collect::<Result<_, _>>()?;
                }
                "convergence.repetitions" => {
                    cfg.convergence_repetitions = parse_num(key, value)?;
                }
                other => return Err(ConfigError::UnknownKey(other.into())),
            }
        }

        match (builtin, sig_path) {
            (Some(b), Some(p)) => {
                return Err(ConfigError::AmbiguousSignal {
                    builtin: b,
                    path: p,
                })
            }
            (Some(b), None) => cfg.signal_source = SignalSource::Builtin(b),
            (None, Some(p)) => cfg.signal_source = SignalSource::Path(PathBuf::from(p)),
            (None, None) => {}
        }

        cfg.sim.door_profile = match (door_profile, door_rate_per_day) {
            (Some(profile), _) => Some(profile),
            (None, Some(rate)) if rate > 0.0 => Some(vec![rate / 24.0]),
            _ => None,
        };
        Ok(cfg)
    }

    /// Materialize the configured reference signal, tiled `signal_repeat`
    /// times.
    pub fn build_signal(&self) -> Result<ReferenceSignal, ConfigError> {
        let base = match &self.signal_source {
            SignalSource::Builtin(name) => match name.as_str() {
                "canonical" => canonical_test_signal(),
                "unit" => ReferenceSignal::constant(1.0, self.sim.horizon_s)?,
                other => {
                    return Err(ConfigError::BadValue {
                        key: "signal.builtin".into(),
                        msg: format!("unknown builtin signal `{other}` (canonical, unit)"),
                    })
                }
            },
            SignalSource::Path(path) => ReferenceSignal::load(path)?,
        };
        if self.signal_repeat > 1 && base.horizon().is_finite() {
            Ok(base.repeat(self.signal_repeat)?)
        } else {
            Ok(base)
        }
    }

    /// Stable fingerprint of the resolved configuration, for the
    /// reproducibility header of output files.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.canonical_string().as_bytes())
    }

    fn canonical_string(&self) -> String {
        format!(
            "devices={};hetero={:?};w={};mode={:?};seed={};step={};horizon={};skip={};\
             doors={:?}/{}/{};signal={:?}x{};analyses={:?}",
            self.fleet.n_devices,
            self.fleet.hetero_range,
            self.fleet.w,
            self.fleet.model_error_mode,
            self.fleet.master_seed,
            self.sim.step_s,
            self.sim.horizon_s,
            self.sim.skip_probability,
            self.sim.door_profile,
            self.sim.door_duration_s,
            self.sim.door_alpha_factor,
            self.signal_source,
            self.signal_repeat,
            self.analyses,
        )
    }
}

fn parse_model_error(value: &str) -> Result<ModelErrorMode, ConfigError> {
    match value {
        "known" => Ok(ModelErrorMode::Known),
        "common" => Ok(ModelErrorMode::CommonNominal),
        "random" => Ok(ModelErrorMode::Randomized),
        other => Err(ConfigError::BadValue {
            key: "fleet.model_error".into(),
            msg: format!("expected known|common|random, got `{other}`"),
        }),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.into(),
            msg: format!("expected a boolean, got `{other}`"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        msg: format!("could not parse `{value}`"),
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# experiment
fleet.devices = 500
fleet.hetero_lo = 0.9
fleet.hetero_hi = 1.1
fleet.w = 0.85
fleet.model_error = common
fleet.seed = 99
sim.step_s = 5
sim.horizon_s = 3600
sim.skip_prob = 0.25
sim.door_rate_per_day = 20
signal.builtin = canonical
signal.repeat = 2
output.dir = results
analyses = tracking, acf
acf.max_lag = 50
";
        let cfg = ExperimentConfig::parse(text, "test").unwrap();
        assert_eq!(cfg.fleet.n_devices, 500);
        assert_eq!(cfg.fleet.hetero_range, (0.9, 1.1));
        assert_eq!(cfg.fleet.model_error_mode, ModelErrorMode::CommonNominal);
        assert_eq!(cfg.fleet.master_seed, 99);
        assert_eq!(cfg.sim.step_s, 5.0);
        assert_eq!(cfg.sim.skip_probability, 0.25);
        assert_eq!(cfg.sim.door_profile, Some(vec![20.0 / 24.0]));
        assert_eq!(cfg.signal_repeat, 2);
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
        assert_eq!(cfg.analyses, vec![Analysis::Tracking, Analysis::Acf]);
        assert_eq!(cfg.acf_max_lag, 50);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::parse("fleet.devicess = 3\n", "t"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("fleet.devices = many\n", "t"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("no equals sign here\n", "t"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_two_signal_sources() {
        let text = "signal.builtin = canonical\nsignal.path = sig.csv\n";
        assert!(matches!(
            ExperimentConfig::parse(text, "t"),
            Err(ConfigError::AmbiguousSignal { .. })
        ));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::parse("fleet.seed = 1\n", "t").unwrap();
        let b = ExperimentConfig::parse("fleet.seed = 2\n", "t").unwrap();
        let a2 = ExperimentConfig::parse("fleet.seed = 1\n", "t").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a2.fingerprint());
    }

    #[test]
    fn builds_builtin_and_repeated_signals() {
        let cfg = ExperimentConfig::parse("signal.builtin = canonical\nsignal.repeat = 5\n", "t")
            .unwrap();
        let signal = cfg.build_signal().unwrap();
        assert_eq!(signal.horizon(), 5.0 * 18000.0);
        let unit = ExperimentConfig::parse("signal.builtin = unit\n", "t")
            .unwrap()
            .build_signal()
            .unwrap();
        assert_eq!(unit.value_after(0.0), 1.0);
    }
}
