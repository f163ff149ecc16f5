//! Tracking-error statistics, autocorrelation with significance bands,
//! door-aware targets and population-size convergence scans.

use thiserror::Error;

use crate::fleet::{build_fleet, run_simulation, FleetConfig, SimConfig, SimError};
use crate::signal::ReferenceSignal;
use crate::trace::TraceSet;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("series of length {len} cannot support max_lag {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("series variance is zero; autocorrelation is undefined")]
    DegenerateSeries,
    #[error("trace lengths differ: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
}

/// Per-appliance tracking error of a run.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub error_w_per_device: Vec<f64>,
    /// Population standard deviation of the error series, W per appliance.
    pub std_w_per_device: f64,
}

impl ErrorSeries {
    pub fn from_errors(times: Vec<f64>, error_w_per_device: Vec<f64>) -> Self {
        let std_w_per_device = population_std(&error_w_per_device);
        ErrorSeries {
            times,
            error_w_per_device,
            std_w_per_device,
        }
    }
}

fn population_std(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / series.len() as f64).sqrt()
}

/// Pointwise `(realized - target) / n_devices` plus its standard deviation.
pub fn tracking_error(trace: &TraceSet) -> ErrorSeries {
    let errors: Vec<f64> = (0..trace.len()).map(|i| trace.error_per_device(i)).collect();
    ErrorSeries::from_errors(trace.times.clone(), errors)
}

/// Sample autocorrelation function with a flat 95% significance band.
#[derive(Debug, Clone)]
pub struct Autocorrelation {
    /// `acf[k]` for lags `0..=max_lag`; `acf[0]` is exactly 1.
    pub acf: Vec<f64>,
    /// Two-sided 95% band half-width, `1.96 / sqrt(len)`.
    pub band: f64,
}

impl Autocorrelation {
    pub fn is_significant(&self, lag: usize) -> bool {
        self.acf[lag].abs() > self.band
    }
}

/// Mean-removed sample ACF with biased normalization (every lag divided by
/// the lag-0 sum), which keeps the Bartlett band applicable.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Autocorrelation, AnalysisError> {
    let len = series.len();
    if len <= max_lag || len < 2 {
        return Err(AnalysisError::SeriesTooShort { len, max_lag });
    }
    let mean = series.iter().sum::<f64>() / len as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum::<f64>() / len as f64;
    if c0 <= 0.0 {
        return Err(AnalysisError::DegenerateSeries);
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    for lag in 1..=max_lag {
        let c: f64 = centered[..len - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / len as f64;
        acf.push(c / c0);
    }
    Ok(Autocorrelation {
        acf,
        band: 1.96 / (len as f64).sqrt(),
    })
}

/// Door-aware tracking target: the empirical uncontrolled baseline plus the
/// commanded modulation around the fleet's steady-state power.
pub fn door_target_power(
    baseline: &TraceSet,
    signal: &ReferenceSignal,
    sum_p0: f64,
) -> Vec<f64> {
    baseline
        .times
        .iter()
        .zip(&baseline.aggregate_w)
        .map(|(&t, &base)| base + (signal.value_after(t) - 1.0) * sum_p0)
        .collect()
}

/// Tracking error of a controlled doors-on run against the target built
/// from its uncontrolled twin.
pub fn door_tracking_error(
    controlled: &TraceSet,
    baseline: &TraceSet,
    signal: &ReferenceSignal,
) -> Result<ErrorSeries, AnalysisError> {
    if controlled.len() != baseline.len() {
        return Err(AnalysisError::LengthMismatch {
            a: controlled.len(),
            b: baseline.len(),
        });
    }
    let target = door_target_power(baseline, signal, controlled.sum_p0);
    let errors: Vec<f64> = controlled
        .aggregate_w
        .iter()
        .zip(&target)
        .map(|(&realized, &tgt)| (realized - tgt) / controlled.n_devices as f64)
        .collect();
    Ok(ErrorSeries::from_errors(controlled.times.clone(), errors))
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n_devices: usize,
    pub std_w_per_device: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceScan {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln std` against `ln n`; `None` for a single
    /// population size.
    pub loglog_slope: Option<f64>,
}

/// Re-run the same experiment at each population size and report the
/// per-appliance tracking std (averaged over `repetitions` seeds).
pub fn convergence_scan(
    n_list: &[usize],
    repetitions: usize,
    base: &FleetConfig,
    sim: &SimConfig,
    signal: &ReferenceSignal,
) -> Result<ConvergenceScan, SimError> {
    if n_list.is_empty() || repetitions == 0 {
        return Err(SimError::InvalidConfig(
            "convergence scan needs population sizes and at least one repetition".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut std_sum = 0.0;
        for rep in 0..repetitions {
            let cfg = FleetConfig {
                n_devices: n,
                master_seed: base.master_seed.wrapping_add(rep as u64),
                ..base.clone()
            };
            let mut fleet = build_fleet(&cfg)?;
            let trace = run_simulation(&mut fleet, signal, sim)?;
            std_sum += tracking_error(&trace).std_w_per_device;
        }
        rows.push(ConvergenceRow {
            n_devices: n,
            std_w_per_device: std_sum / repetitions as f64,
        });
    }
    let loglog_slope = (rows.len() >= 2).then(|| {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.n_devices as f64).ln(), r.std_w_per_device.ln()))
            .collect();
        let n = points.len() as f64;
        let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points
            .iter()
            .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
            .sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
        sxy / sxx
    });
    Ok(ConvergenceScan { rows, loglog_slope })
}
