//! Decentralized aggregate power control of thermostatic loads.
//!
//! A broadcast, dimensionless reference `pi(t)` tells every appliance what
//! fraction of its nominal consumption the fleet should draw. Each device
//! runs the same small discrete-time controller against its own thermal
//! model and a private randomness stream, with no communication between
//! devices; in expectation every device consumes `pi(t)` times its
//! steady-state power, and a large fleet therefore tracks the reference to
//! within root-N fluctuations while every cabinet stays inside its
//! thermostat band.
//!
//! The crate provides:
//!
//! - [`model`]: first-order appliance physics, steady-state constants,
//!   heterogeneous model generation, steady-state initial sampling;
//! - [`controller`]: the per-device control algorithm (energy coordinate,
//!   mode selection, energy/power clipping, switching rates and
//!   probabilities, compressor decision);
//! - [`signal`]: piecewise-constant reference signals, file format and a
//!   canonical test pattern;
//! - [`fleet`]: fleet construction, the simulation loop, variable and
//!   randomly skipped time steps, door-opening disturbances, model-error
//!   scenarios;
//! - [`analysis`]: tracking-error statistics, autocorrelation with
//!   significance bands, door-aware targets and convergence scans;
//! - [`trace`] and [`config`]: the machine-readable output format and the
//!   experiment configuration language used by the `tclsim` binary.
//!
//! The simulation is deterministic: all randomness derives from a master
//! seed through per-device counter-based streams, so a configuration
//! reproduces bit-identical traces on any machine and thread count.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod controller;
pub mod fleet;
pub mod model;
pub mod signal;
pub mod trace;

pub use analysis::{
    autocorrelation, convergence_scan, door_target_power, door_tracking_error, tracking_error,
    Autocorrelation, ErrorSeries,
};
pub use config::{Analysis, ExperimentConfig, SignalSource};
pub use controller::{ControllerState, Mode, StepOutcome};
pub use fleet::{
    build_fleet, door_opening_schedule, run_door_experiment, run_simulation, Fleet, FleetConfig,
    ModelErrorMode, SimConfig,
};
pub use model::{
    derive_quantities, hysteresis_step, integrate_device, perturb_model, sample_initial_state,
    ApplianceModel, DerivedQuantities, DeviceState,
};
pub use signal::{canonical_test_signal, ReferenceSignal};
pub use trace::TraceSet;
