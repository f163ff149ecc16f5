//! Fleet construction and the coupled physics/controller time loop.
//!
//! A fleet couples, per device, a *physical* appliance model (which drives
//! the temperature) with a controller holding its own *control* model
//! (which may be wrong on purpose). Each device owns dedicated,
//! deterministically derived RNG streams, so a run is bit-identical for a
//! given configuration no matter how work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{ControllerError, ControllerState};
use crate::model::{
    derive_quantities, integrate_device, perturb_model, sample_initial_state, ApplianceModel,
    DeviceState, ModelError,
};
use crate::signal::ReferenceSignal;
use crate::trace::{PerDeviceTrace, TraceSet};

/// Run fleets of at least this size through the rayon pool.
const PARALLEL_THRESHOLD: usize = 512;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("signal horizon {signal} s is shorter than the simulation horizon {sim} s")]
    HorizonMismatch { signal: f64, sim: f64 },
}

/// How each device's control model relates to its physical model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelErrorMode {
    /// Control model identical to the physical one.
    Known,
    /// Every device controls with the shared nominal model (thermostat
    /// bounds still taken from the physical device, as user settings).
    CommonNominal,
    /// Control model drawn independently from the same heterogeneity
    /// distribution (thermostat bounds from the physical device).
    Randomized,
}

#[derive(Debug, Clone)]
pub struct FleetConfig {
    pub n_devices: usize,
    pub nominal: ApplianceModel,
    /// Uniform multiplicative heterogeneity range `(lo, hi)`.
    pub hetero_range: (f64, f64),
    /// Usable fraction of the feasible mean-temperature band, in (0, 1].
    pub w: f64,
    pub model_error_mode: ModelErrorMode,
    pub master_seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_devices: 1000,
            nominal: ApplianceModel::domestic_refrigerator(),
            hetero_range: (0.8, 1.2),
            w: 0.9,
            model_error_mode: ModelErrorMode::Known,
            master_seed: 1,
        }
    }
}

impl FleetConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n_devices == 0 {
            return Err(SimError::InvalidConfig("n_devices must be >= 1".into()));
        }
        let (lo, hi) = self.hetero_range;
        if lo <= 0.0 || lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(SimError::InvalidConfig(format!(
                "heterogeneity range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if self.w <= 0.0 || self.w > 1.0 || self.w.is_nan() {
            return Err(SimError::InvalidConfig(format!(
                "w must lie in (0, 1], got {}",
                self.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Controller (and physics) step, s.
    pub step_s: f64,
    pub horizon_s: f64,
    /// Probability that a device independently skips a controller
    /// invocation (its physics still advances).
    pub skip_probability: f64,
    /// Door openings per hour, by hour; cycled over the horizon. `None`
    /// disables door events entirely.
    pub door_profile: Option<Vec<f64>>,
    pub door_duration_s: f64,
    /// Multiplier on the thermal coupling while a door is open.
    pub door_alpha_factor: f64,
    /// Also record per-device temperature/compressor series (memory-heavy;
    /// meant for small fleets).
    pub record_per_device: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step_s: 10.0,
            horizon_s: 5.0 * 3600.0,
            skip_probability: 0.0,
            door_profile: None,
            door_duration_s: 20.0,
            door_alpha_factor: 25.0,
            record_per_device: false,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.step_s <= 0.0 || !self.step_s.is_finite() {
            return Err(SimError::InvalidConfig("step_s must be positive".into()));
        }
        if self.horizon_s < self.step_s || self.horizon_s.is_nan() {
            return Err(SimError::InvalidConfig(
                "horizon_s must cover at least one step".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.skip_probability) {
            return Err(SimError::InvalidConfig(format!(
                "skip_probability must lie in [0, 1), got {}",
                self.skip_probability
            )));
        }
        if self.door_duration_s <= 0.0
            || self.door_duration_s.is_nan()
            || self.door_alpha_factor < 1.0
            || self.door_alpha_factor.is_nan()
        {
            return Err(SimError::InvalidConfig(
                "door events need positive duration and alpha factor >= 1".into(),
            ));
        }
        if let Some(profile) = &self.door_profile {
            if profile.is_empty() || profile.iter().any(|&r| r < 0.0 || r.is_nan()) {
                return Err(SimError::InvalidConfig(
                    "door profile must be non-empty with nonnegative rates".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One appliance in the fleet: physical state, controller, RNG streams and
/// its door-opening schedule.
#[derive(Debug, Clone)]
pub struct Device {
    pub physical: ApplianceModel,
    /// Steady-state mean power of the physical model, W.
    pub p_0: f64,
    pub state: DeviceState,
    pub ctrl: ControllerState,
    rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
    door_events: Vec<(f64, f64)>,
    door_cursor: usize,
    /// Worst observed excursion beyond the thermostat band net of the
    /// per-device one-step drift allowance (negative while compliant).
    band_margin: f64,
    max_switch_prob: f64,
    energy_clips: u64,
    power_clips: u64,
}

impl Device {
    /// Advance the cabinet physics from `t0` to `t1`, walking the door
    /// schedule so open intervals integrate with the boosted coupling.
    fn advance_physics(&mut self, t0: f64, t1: f64, door_alpha_factor: f64) {
        while self.door_cursor < self.door_events.len()
            && self.door_events[self.door_cursor].1 <= t0
        {
            self.door_cursor += 1;
        }
        let mut idx = self.door_cursor;
        let mut t = t0;
        while t < t1 {
            let (seg_end, open) = match self.door_events.get(idx) {
                Some(&(start, end)) if start <= t => (end.min(t1), true),
                Some(&(start, _)) if start < t1 => (start, false),
                _ => (t1, false),
            };
            let dt = seg_end - t;
            if dt > 0.0 {
                self.state.door_open = open;
                let factor = if open { door_alpha_factor } else { 1.0 };
                self.state = integrate_device(&self.state, &self.physical, dt, factor);
            }
            if open && seg_end >= self.door_events[idx].1 {
                idx += 1;
            }
            t = seg_end;
        }
    }

    /// Compare against the thermostat band widened by the one-step drift a
    /// device can physically accumulate between invocations: an off device
    /// warms past `t_max` at `alpha (t_off - t_max)`, an on device cools
    /// past `t_min` at `alpha (t_min - t_on)`.
    fn track_band_margin(&mut self, step_s: f64) {
        let m = &self.physical;
        let over_allowance = m.alpha * step_s * (m.t_off - m.t_max);
        let under_allowance = m.alpha * step_s * (m.t_min - m.t_on);
        let over = self.state.temperature - (m.t_max + over_allowance);
        let under = (m.t_min - under_allowance) - self.state.temperature;
        self.band_margin = self.band_margin.max(over).max(under);
    }
}

/// A constructed fleet ready to simulate.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub devices: Vec<Device>,
    /// Sum of the physical steady-state powers, W.
    pub sum_p0: f64,
    pub config: FleetConfig,
}

/// Derive the RNG for one of a device's independent substreams. All
/// randomness in a run flows through these, keyed only by the master seed,
/// the device index and the substream role.
fn device_stream(master_seed: u64, device: usize, substream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((device as u64) << 1 | substream);
    rng
}

/// Build `cfg.n_devices` appliances: a perturbed physical model, a control
/// model per the configured error mode, a steady-state initial state drawn
/// from the physical model, and a freshly initialized controller.
pub fn build_fleet(cfg: &FleetConfig) -> Result<Fleet, SimError> {
    cfg.validate()?;
    let (lo, hi) = cfg.hetero_range;
    let build_one = |i: usize| -> Result<Device, SimError> {
        let mut rng = device_stream(cfg.master_seed, i, 0);
        let physical = perturb_model(&cfg.nominal, &mut rng, lo, hi)?;
        let control = match cfg.model_error_mode {
            ModelErrorMode::Known => physical,
            ModelErrorMode::CommonNominal => ApplianceModel {
                t_min: physical.t_min,
                t_max: physical.t_max,
                ..cfg.nominal
            },
            ModelErrorMode::Randomized => {
                let drawn = perturb_model(&cfg.nominal, &mut rng, lo, hi)?;
                ApplianceModel {
                    t_min: physical.t_min,
                    t_max: physical.t_max,
                    ..drawn
                }
            }
        };
        control.validate()?;
        let dq_physical = derive_quantities(&physical)?;
        let dq_control = derive_quantities(&control)?;
        let state = sample_initial_state(&physical, &dq_physical, &mut rng);
        let ctrl = ControllerState::new(control, dq_control, cfg.w, 0.0, state.compressor);
        Ok(Device {
            physical,
            p_0: dq_physical.p_0,
            state,
            ctrl,
            rng,
            env_rng: device_stream(cfg.master_seed, i, 1),
            door_events: Vec::new(),
            door_cursor: 0,
            band_margin: f64::NEG_INFINITY,
            max_switch_prob: 0.0,
            energy_clips: 0,
            power_clips: 0,
        })
    };
    let devices: Vec<Device> = if cfg.n_devices >= PARALLEL_THRESHOLD {
        (0..cfg.n_devices)
            .into_par_iter()
            .map(build_one)
            .collect::<Result<_, _>>()?
    } else {
        (0..cfg.n_devices)
            .map(build_one)
            .collect::<Result<_, _>>()?
    };
    let sum_p0 = devices.iter().map(|d| d.p_0).sum();
    Ok(Fleet {
        devices,
        sum_p0,
        config: cfg.clone(),
    })
}

/// Sample one device's door-opening schedule over `[0, horizon_s]` as an
/// inhomogeneous Poisson process with the piecewise-constant hourly rates
/// (cycled when the horizon outruns the profile). Each arrival opens the
/// door for `duration_s`; overlapping events merge.
pub fn door_opening_schedule<R: Rng + ?Sized>(
    hourly_rates: &[f64],
    duration_s: f64,
    horizon_s: f64,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    if hourly_rates.iter().all(|&r| r <= 0.0) {
        return Vec::new();
    }
    let mut arrivals = Vec::new();
    let mut t: f64 = 0.0;
    'outer: loop {
        // advance by one unit-rate exponential in integrated-rate time
        let mut need = -(1.0 - rng.random::<f64>()).ln();
        loop {
            if t >= horizon_s {
                break 'outer;
            }
            let hour = (t / 3600.0).floor();
            let seg_end = (hour + 1.0) * 3600.0;
            let rate = hourly_rates[(hour as usize) % hourly_rates.len()] / 3600.0;
            if rate <= 0.0 {
                t = seg_end;
                continue;
            }
            let capacity = (seg_end - t) * rate;
            if capacity >= need {
                t += need / rate;
                break;
            }
            need -= capacity;
            t = seg_end;
        }
        if t >= horizon_s {
            break;
        }
        arrivals.push(t);
    }
    // merge overlapping open intervals
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(arrivals.len());
    for start in arrivals {
        let end = start + duration_s;
        match events.last_mut() {
            Some(last) if start <= last.1 => last.1 = last.1.max(end),
            _ => events.push((start, end)),
        }
    }
    events
}

/// Drive the fleet over `[0, sim.horizon_s]` against `signal`.
///
/// At every global tick each device first advances its physics over the
/// elapsed interval, then (unless it independently skips the invocation)
/// runs its controller with the reference value for the upcoming interval.
/// Aggregates are recorded immediately after the switching action; the
/// recorded target is the upcoming reference times the fleet's total
/// steady-state power.
pub fn run_simulation(
    fleet: &mut Fleet,
    signal: &ReferenceSignal,
    sim: &SimConfig,
) -> Result<TraceSet, SimError> {
    sim.validate()?;
    if signal.horizon() < sim.horizon_s {
        return Err(SimError::HorizonMismatch {
            signal: signal.horizon(),
            sim: sim.horizon_s,
        });
    }
    let n_ticks = ((sim.horizon_s + 1e-9) / sim.step_s) as usize;
    let n = fleet.devices.len();
    let parallel = n >= PARALLEL_THRESHOLD;

    // per-device door schedules, drawn from the dedicated stream
    if let Some(profile) = &sim.door_profile {
        let draw = |d: &mut Device| {
            d.door_events =
                door_opening_schedule(profile, sim.door_duration_s, sim.horizon_s, &mut d.env_rng);
            d.door_cursor = 0;
        };
        if parallel {
            fleet.devices.par_iter_mut().for_each(draw);
        } else {
            fleet.devices.iter_mut().for_each(draw);
        }
    }

    let mut trace = TraceSet::with_capacity(n_ticks + 1, n, fleet.sum_p0);
    let mut per_device = sim
        .record_per_device
        .then(|| PerDeviceTrace::with_capacity(n_ticks + 1, n));
    let record =
        |trace: &mut TraceSet, per_device: &mut Option<PerDeviceTrace>, fleet: &Fleet, t: f64| {
            let mut aggregate = 0.0;
            let mut n_on = 0u64;
            let mut z_sum = 0.0;
            for d in &fleet.devices {
                if d.state.compressor {
                    aggregate += d.physical.p_on;
                    n_on += 1;
                }
                z_sum += d.ctrl.z;
            }
            let target = signal.value_after(t) * fleet.sum_p0;
            trace.push_row(t, aggregate, target, z_sum / n as f64, n_on);
            if let Some(pd) = per_device {
                pd.push_row(fleet.devices.iter().map(|d| (&d.state, &d.ctrl)));
            }
        };

    record(&mut trace, &mut per_device, fleet, 0.0);

    let skip = sim.skip_probability;
    for i in 1..=n_ticks {
        let t0 = (i - 1) as f64 * sim.step_s;
        let t1 = i as f64 * sim.step_s;
        let pi_next = signal.value_after(t1);
        let step_device = |d: &mut Device| -> Result<(), SimError> {
            d.advance_physics(t0, t1, sim.door_alpha_factor);
            d.track_band_margin(sim.step_s);
            if skip > 0.0 && d.env_rng.random::<f64>() < skip {
                return Ok(());
            }
            let out = d
                .ctrl
                .update_compressor_state(pi_next, d.state.temperature, t1, &mut d.rng)?;
            d.state.compressor = out.compressor;
            d.max_switch_prob = d.max_switch_prob.max(out.pr_on_to_off).max(out.pr_off_to_on);
            d.energy_clips += u64::from(out.energy_clipped);
            d.power_clips += u64::from(out.power_clipped);
            Ok(())
        };
        if parallel {
            fleet.devices.par_iter_mut().try_for_each(step_device)?;
        } else {
            fleet.devices.iter_mut().try_for_each(step_device)?;
        }
        record(&mut trace, &mut per_device, fleet, t1);
    }

    trace.per_device = per_device;
    trace.energy_clip_events = fleet.devices.iter().map(|d| d.energy_clips).sum();
    trace.power_clip_events = fleet.devices.iter().map(|d| d.power_clips).sum();
    trace.max_band_margin = fleet
        .devices
        .iter()
        .map(|d| d.band_margin)
        .fold(f64::NEG_INFINITY, f64::max);
    trace.max_switch_probability = fleet
        .devices
        .iter()
        .map(|d| d.max_switch_prob)
        .fold(0.0, f64::max);
    Ok(trace)
}

/// Door-opening experiment: a controlled run and its uncontrolled twin.
///
/// Both runs are built from the same configuration, so device models,
/// initial states and door schedules coincide draw for draw; the twin just
/// holds the reference at 1. Its empirical consumption is the baseline the
/// door-aware tracking target is built from.
pub struct DoorExperiment {
    pub controlled: TraceSet,
    pub baseline: TraceSet,
}

pub fn run_door_experiment(
    cfg: &FleetConfig,
    sim: &SimConfig,
    signal: &ReferenceSignal,
) -> Result<DoorExperiment, SimError> {
    let mut fleet = build_fleet(cfg)?;
    let controlled = run_simulation(&mut fleet, signal, sim)?;
    let mut twin = build_fleet(cfg)?;
    let unit = ReferenceSignal::constant(1.0, sim.horizon_s)
        .expect("constant unit signal is always valid");
    let baseline = run_simulation(&mut twin, &unit, sim)?;
    Ok(DoorExperiment {
        controlled,
        baseline,
    })
}
