//! Per-device discrete-time controller.
//!
//! Each appliance independently shapes a *hypothetical population* of
//! devices that share its model: a dimensionless stored-cooling-energy
//! coordinate `z` summarises how far the population-average temperature has
//! been pushed from its uncontrolled steady state, and the broadcast
//! reference `pi` says what fraction of nominal power the population should
//! draw. From `z` and `pi` the controller derives, per invocation:
//!
//! 1. the pivot temperature the temperature distribution contracts towards
//!    (`t_max` to provide energy, `t_min` to absorb it),
//! 2. clipped, feasible values of the requested reference (energy limits
//!    from the allowed band of `z`, power limits from the physical heating
//!    and cooling rates),
//! 3. deterministic switching bounds plus stochastic switching rates and
//!    probabilities that realise the desired distribution, and
//! 4. the next compressor state, by forced switching or a Bernoulli draw.
//!
//! Invocation times may be arbitrary (increasing) instants: each call
//! integrates the interval since the previous one in closed form, so time
//! steps can be skipped or stretched freely.

use rand::Rng;
use thiserror::Error;

use crate::model::{ApplianceModel, DerivedQuantities};

/// Below this gap between `z` and its mode's `zeta`, the population counts
/// as fully contracted and the scale/gain quantities are undefined.
const DEGENERATE_EPS: f64 = 1e-9;

/// Stand-in for a diverging switching rate (1/s). Any positive time step
/// turns it into certainty after the probability clamp.
const SATURATED_RATE: f64 = 1e9;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("controller invoked at t={t} not after previous invocation at t={t_prev}")]
    NonMonotoneTime { t: f64, t_prev: f64 },
    #[error("population fully contracted: |z - zeta| = {0} below tolerance")]
    DegenerateState(f64),
}

/// Controller mode: which thermostat bound the temperature distribution is
/// contracting towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `z <= 0`: population is lending energy to the grid; pivot `t_max`.
    Provision,
    /// `z > 0`: population is storing extra cooling energy; pivot `t_min`.
    Absorption,
}

impl Mode {
    pub fn from_z(z: f64) -> Self {
        if z <= 0.0 {
            Mode::Provision
        } else {
            Mode::Absorption
        }
    }

    pub fn pivot(self, model: &ApplianceModel) -> f64 {
        match self {
            Mode::Provision => model.t_max,
            Mode::Absorption => model.t_min,
        }
    }

    pub fn zeta(self, dq: &DerivedQuantities) -> f64 {
        match self {
            Mode::Provision => dq.zeta_at_tmax,
            Mode::Absorption => dq.zeta_at_tmin,
        }
    }
}

/// Pivot temperature for a given energy coordinate (`t_max` if `z <= 0`,
/// `t_min` otherwise).
pub fn select_mode(z: f64, model: &ApplianceModel) -> f64 {
    Mode::from_z(z).pivot(model)
}

/// Advance the stored-energy coordinate over an interval of `dt` seconds
/// during which the applied reference was `pi`:
///
/// ```text
/// z' = z * exp(-alpha dt) + (pi - 1)(1 - exp(-alpha dt))
/// ```
pub fn update_z(z_prev: f64, pi: f64, alpha: f64, dt: f64) -> f64 {
    let decay = (-alpha * dt).exp();
    z_prev * decay + (pi - 1.0) * (1.0 - decay)
}

/// Restrict a requested reference so it does not push `z` further outside
/// the allowed band `[w*zeta(t_max), w*zeta(t_min)]`.
pub fn clip_energy(pi_next: f64, z: f64, w: f64, dq: &DerivedQuantities) -> f64 {
    let floor = w * dq.zeta_at_tmax;
    let ceil = w * dq.zeta_at_tmin;
    if z <= floor {
        pi_next.max(1.0 + floor)
    } else if z >= ceil {
        pi_next.min(1.0 + ceil)
    } else {
        pi_next
    }
}

/// Clamp a requested reference to the instantaneous power limits implied by
/// the physical heating/cooling rates at the most extreme attainable
/// temperature.
pub fn clip_power(pi_next: f64, zeta_plus: f64, r_plus: f64, model: &ApplianceModel) -> f64 {
    let denom = model.t_min + model.t_max - 2.0 * r_plus;
    debug_assert!(denom != 0.0);
    let lo = 1.0 + zeta_plus * ((model.t_min + model.t_max - model.t_off - r_plus) / denom);
    let hi = 1.0 + zeta_plus * ((model.t_min + model.t_max - model.t_on - r_plus) / denom);
    pi_next.clamp(lo, hi)
}

/// Distribution-level quantities for one side (left or right limit) of a
/// controller invocation: pivot `r`, its energy coordinate `zeta`, the
/// distribution scale `s` and the control gain `beta`.
#[derive(Debug, Clone, Copy)]
pub struct SideQuantities {
    pub r: f64,
    pub zeta: f64,
    pub s: f64,
    pub beta: f64,
}

impl SideQuantities {
    /// Build the side quantities for energy coordinate `z`, effective
    /// reference `pi_eff` and mode pivot `mode`.
    pub fn new(
        z: f64,
        pi_eff: f64,
        mode: Mode,
        model: &ApplianceModel,
        dq: &DerivedQuantities,
    ) -> Result<Self, ControllerError> {
        let zeta = mode.zeta(dq);
        let gap = z - zeta;
        if gap.abs() < DEGENERATE_EPS {
            return Err(ControllerError::DegenerateState(gap.abs()));
        }
        Ok(SideQuantities {
            r: mode.pivot(model),
            zeta,
            s: 1.0 - z / zeta,
            beta: ((pi_eff - 1.0) - z) / gap,
        })
    }
}

/// Both-side scale and gain computation: the left limit uses the reference
/// applied over the ending interval, the right limit the (clipped) upcoming
/// one.
pub fn scale_and_beta(
    z: f64,
    pi_eff_minus: f64,
    pi_eff_plus: f64,
    mode_minus: Mode,
    mode_plus: Mode,
    model: &ApplianceModel,
    dq: &DerivedQuantities,
) -> Result<(SideQuantities, SideQuantities), ControllerError> {
    Ok((
        SideQuantities::new(z, pi_eff_minus, mode_minus, model, dq)?,
        SideQuantities::new(z, pi_eff_plus, mode_plus, model, dq)?,
    ))
}

/// Temperature-field intermediates for one side at device temperature `t`.
///
/// `p` and `q` locate `t` relative to the scaled distribution support;
/// `x` and `y` are (up to a factor `alpha`) the margins of the desired net
/// heating rate to the physical off- and on-state rates.
#[derive(Debug, Clone, Copy)]
pub struct FieldQuantities {
    pub p: f64,
    pub q: f64,
    pub x: f64,
    pub y: f64,
    pub xi: f64,
}

impl FieldQuantities {
    pub fn new(t: f64, side: &SideQuantities, model: &ApplianceModel, alpha: f64) -> Self {
        // P and Q are algebraically (R - T_off)s + (T - R) and
        // (R - T_on)s + (T - R); this rearrangement makes them bitwise equal
        // to X and Y in the uncontrolled state (s = 1, beta = 0), so the two
        // xi terms cancel exactly and the steady state is a true no-op.
        let rel = (t - side.r) * (1.0 - side.s);
        let p = (t - model.t_off) * side.s + rel;
        let q = (t - model.t_on) * side.s + rel;
        let x = (t - model.t_off) + (t - side.r) * side.beta;
        let y = (t - model.t_on) + (t - side.r) * side.beta;
        let alpha_sq = alpha * alpha;
        let xi = alpha_sq * ((p + q) * ((x * y) / (p * q)) - (1.0 + side.beta) * (x + y));
        FieldQuantities { p, q, x, y, xi }
    }
}

/// Stochastic switching rates (on-to-off, off-to-on) implied by the field
/// quantities, with degenerate geometry saturated rather than propagated.
pub fn switching_rates(fq: &FieldQuantities, alpha: f64) -> (f64, f64) {
    (
        guarded_rate(fq.xi, alpha * fq.x),
        guarded_rate(fq.xi, alpha * fq.y),
    )
}

/// `max(0, -xi/denom)` with the diverging and 0/0 limits pinned: a genuine
/// divergence saturates (the device sits on a boundary where switching is
/// certain), an indeterminate form counts as no demand to switch.
fn guarded_rate(xi: f64, denom: f64) -> f64 {
    let raw = -xi / denom;
    if raw.is_nan() {
        0.0
    } else {
        raw.clamp(0.0, SATURATED_RATE)
    }
}

/// Probability that the continuous-time switching process fired during an
/// interval of `dt` seconds, from the rates at the interval's two inner
/// edges (trapezoid), clamped to `[0, 1]`.
pub fn continuous_switch_prob(r_prev_plus: f64, r_now_minus: f64, dt: f64) -> f64 {
    clamp_unit(0.5 * dt * (r_prev_plus + r_now_minus))
}

/// Probability of an instantaneous switch at the invocation instant, from
/// the jump of the rate-margin across the reference/mode discontinuity.
/// On-state devices use the `x` margins, off-state devices the `y` margins.
pub fn instantaneous_switch_prob(
    x_minus: f64,
    x_plus: f64,
    y_minus: f64,
    y_plus: f64,
    compressor: bool,
) -> f64 {
    let ratio = if compressor {
        x_plus / x_minus
    } else {
        y_plus / y_minus
    };
    clamp_unit(1.0 - ratio)
}

fn clamp_unit(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// Forced-switching band `[t_low, t_high]`: the steady-state support
/// linearly contracted around the pivot by the scale factor.
pub fn temperature_bounds(r_plus: f64, s_plus: f64, model: &ApplianceModel) -> (f64, f64) {
    (
        r_plus - (r_plus - model.t_min) * s_plus,
        r_plus - (r_plus - model.t_max) * s_plus,
    )
}

/// Everything a single controller invocation decided, mostly for tests and
/// instrumentation; the simulation loop only consumes `compressor`.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub compressor: bool,
    /// Combined on-to-off switching probability (continuous + instantaneous).
    pub pr_on_to_off: f64,
    /// Combined off-to-on switching probability.
    pub pr_off_to_on: f64,
    /// The reference actually applied after energy and power clipping.
    pub pi_applied: f64,
    /// Forced-switching band at the right limit.
    pub t_low: f64,
    pub t_high: f64,
    /// Whether this invocation's switch decision was forced by the band.
    pub forced: bool,
    pub energy_clipped: bool,
    pub power_clipped: bool,
}

/// Persistent per-device controller memory.
///
/// The controller only ever reads `model` (its own copy, which may differ
/// from the physical appliance) — model error enters purely through that
/// separation.
#[derive(Debug, Clone)]
pub struct ControllerState {
    /// Stored-cooling-energy coordinate as of `t_prev`.
    pub z: f64,
    /// Reference applied over the interval that ends at the next invocation.
    pub pi_prev: f64,
    /// Time of the previous invocation, s.
    pub t_prev: f64,
    /// Right-limit switching rates stored at the previous invocation, 1/s.
    pub r10_prev_plus: f64,
    pub r01_prev_plus: f64,
    /// Compressor state decided at the previous invocation.
    pub compressor: bool,
    /// The controller's model of the appliance.
    pub model: ApplianceModel,
    pub dq: DerivedQuantities,
    /// Fraction of the feasible mean-temperature band the controller may
    /// use, in (0, 1].
    pub w: f64,
    // memoised exp(-alpha dt) for the common fixed-step case
    cached_dt: f64,
    cached_decay: f64,
}

impl ControllerState {
    /// Steady-state initialization at simulation time `t_start`: `z = 0`,
    /// unit reference, zero stored rates.
    pub fn new(
        model: ApplianceModel,
        dq: DerivedQuantities,
        w: f64,
        t_start: f64,
        compressor: bool,
    ) -> Self {
        ControllerState {
            z: 0.0,
            pi_prev: 1.0,
            t_prev: t_start,
            r10_prev_plus: 0.0,
            r01_prev_plus: 0.0,
            compressor,
            model,
            dq,
            w,
            cached_dt: f64::NAN,
            cached_decay: f64::NAN,
        }
    }

    fn decay(&mut self, dt: f64) -> f64 {
        if dt != self.cached_dt {
            self.cached_dt = dt;
            self.cached_decay = (-self.model.alpha * dt).exp();
        }
        self.cached_decay
    }

    /// One controller invocation at time `t` with measured cabinet
    /// temperature `temperature` and newly broadcast reference `pi_next`.
    ///
    /// Updates the population coordinate, applies energy and power limits,
    /// computes switching rates and probabilities for the elapsed interval,
    /// then decides the next compressor state (forced if the temperature
    /// left the allowed band, otherwise by a single uniform draw).
    pub fn update_compressor_state<R: Rng + ?Sized>(
        &mut self,
        pi_next: f64,
        temperature: f64,
        t: f64,
        rng: &mut R,
    ) -> Result<StepOutcome, ControllerError> {
        if t <= self.t_prev || t.is_nan() {
            return Err(ControllerError::NonMonotoneTime {
                t,
                t_prev: self.t_prev,
            });
        }
        let dt = t - self.t_prev;
        let alpha = self.model.alpha;

        // population coordinate: mode of the ending interval comes from the
        // previous z, the new mode from the updated one
        let mode_minus = Mode::from_z(self.z);
        let decay = self.decay(dt);
        let z = self.z * decay + (self.pi_prev - 1.0) * (1.0 - decay);
        let mode_plus = Mode::from_z(z);

        // energy and power limits on the upcoming reference
        let after_energy = clip_energy(pi_next, z, self.w, &self.dq);
        let zeta_plus = mode_plus.zeta(&self.dq);
        let r_plus = mode_plus.pivot(&self.model);
        let pi_applied = clip_power(after_energy, zeta_plus, r_plus, &self.model);

        // distribution variables; the right-limit gain uses the reference
        // as actually applied after clipping
        let (side_minus, side_plus) = scale_and_beta(
            z,
            self.pi_prev,
            pi_applied,
            mode_minus,
            mode_plus,
            &self.model,
            &self.dq,
        )?;

        // switching rates and probabilities
        let fq_minus = FieldQuantities::new(temperature, &side_minus, &self.model, alpha);
        let fq_plus = FieldQuantities::new(temperature, &side_plus, &self.model, alpha);
        let (r10_minus, r01_minus) = switching_rates(&fq_minus, alpha);
        let (r10_plus, r01_plus) = switching_rates(&fq_plus, alpha);
        let pr_on_to_off = clamp_unit(
            continuous_switch_prob(self.r10_prev_plus, r10_minus, dt)
                + instantaneous_switch_prob(fq_minus.x, fq_plus.x, fq_minus.y, fq_plus.y, true),
        );
        let pr_off_to_on = clamp_unit(
            continuous_switch_prob(self.r01_prev_plus, r01_minus, dt)
                + instantaneous_switch_prob(fq_minus.x, fq_plus.x, fq_minus.y, fq_plus.y, false),
        );

        // Compressor decision: outside the band the band decides — the
        // population has no mass there, so the stochastic rates are
        // extrapolations and a draw could push the device further out.
        // Inside, a single uniform draw against the combined probability.
        let (t_low, t_high) = temperature_bounds(r_plus, side_plus.s, &self.model);
        let mut forced = true;
        let compressor = if temperature <= t_low {
            false
        } else if temperature >= t_high {
            true
        } else {
            forced = false;
            if self.compressor {
                rng.random::<f64>() >= pr_on_to_off
            } else {
                rng.random::<f64>() < pr_off_to_on
            }
        };

        self.z = z;
        self.pi_prev = pi_applied;
        self.t_prev = t;
        self.r10_prev_plus = r10_plus;
        self.r01_prev_plus = r01_plus;
        self.compressor = compressor;

        Ok(StepOutcome {
            compressor,
            pr_on_to_off,
            pr_off_to_on,
            pi_applied,
            t_low,
            t_high,
            forced,
            energy_clipped: after_energy != pi_next,
            power_clipped: pi_applied != after_energy,
        })
    }
}
