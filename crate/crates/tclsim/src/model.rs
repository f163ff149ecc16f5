//! First-order thermal model of a single compressor-driven appliance.
//!
//! The cabinet temperature obeys
//!
//! ```text
//! dT/dt = -alpha * (T - T_off + c * (T_off - T_on))
//! ```
//!
//! where `c` is the compressor state. With the compressor off the
//! temperature relaxes towards the ambient asymptote `T_off`; with it on,
//! towards the (much colder) running asymptote `T_on`. An uncontrolled
//! appliance cycles between the thermostat bounds `T_min` and `T_max`,
//! which yields a closed-form steady-state temperature distribution and
//! mean power draw. Those steady-state constants are what the controller
//! works with, so they are computed once per model as [`DerivedQuantities`].

use rand::Rng;
use thiserror::Error;

/// Retry budget for re-sampling a heterogeneous model whose drawn
/// parameters violate the temperature ordering.
const PERTURB_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid appliance model: {0}")]
    InvalidModel(String),
    #[error("log argument out of domain deriving steady-state constants ({0})")]
    Domain(String),
    #[error("could not draw a valid heterogeneous model in {0} attempts; check the range")]
    PerturbationRange(usize),
}

/// Physical parameters of one appliance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApplianceModel {
    /// Inverse thermal time constant, 1/s.
    pub alpha: f64,
    /// Compressor power draw, W.
    pub p_on: f64,
    /// Asymptotic temperature with the compressor off (ambient), degC.
    pub t_off: f64,
    /// Asymptotic temperature with the compressor on, degC.
    pub t_on: f64,
    /// Lower thermostat bound, degC.
    pub t_min: f64,
    /// Upper thermostat bound, degC.
    pub t_max: f64,
}

impl ApplianceModel {
    pub fn new(
        alpha: f64,
        p_on: f64,
        t_off: f64,
        t_on: f64,
        t_min: f64,
        t_max: f64,
    ) -> Result<Self, ModelError> {
        let m = Self {
            alpha,
            p_on,
            t_off,
            t_on,
            t_min,
            t_max,
        };
        m.validate()?;
        Ok(m)
    }

    /// Domestic refrigerator class: alpha = 1/7200 1/s, 70 W compressor,
    /// thermostat band 2..7 degC, asymptotes -44 and 20 degC.
    pub fn domestic_refrigerator() -> Self {
        Self {
            alpha: 1.0 / 7200.0,
            p_on: 70.0,
            t_off: 20.0,
            t_on: -44.0,
            t_min: 2.0,
            t_max: 7.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(ModelError::InvalidModel(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.p_on <= 0.0 || !self.p_on.is_finite() {
            return Err(ModelError::InvalidModel(format!(
                "p_on must be positive, got {}",
                self.p_on
            )));
        }
        let ordered = self.t_on < self.t_min && self.t_min < self.t_max && self.t_max < self.t_off;
        if !ordered {
            return Err(ModelError::InvalidModel(format!(
                "temperature ordering t_on < t_min < t_max < t_off violated: \
                 t_on={}, t_min={}, t_max={}, t_off={}",
                self.t_on, self.t_min, self.t_max, self.t_off
            )));
        }
        Ok(())
    }
}

/// Steady-state constants of a model, used throughout the controller.
///
/// `k` normalises the steady-state temperature density, `t_bar_0` is the
/// population-average temperature of an uncontrolled fleet, `p_0` its mean
/// power draw, and the two `zeta` values are the dimensionless energy
/// coordinates of the thermostat bounds (the reachable range of the
/// stored-energy coordinate `z`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    pub k: f64,
    pub t_bar_0: f64,
    pub p_0: f64,
    /// zeta evaluated at the `t_max` pivot; negative.
    pub zeta_at_tmax: f64,
    /// zeta evaluated at the `t_min` pivot; positive.
    pub zeta_at_tmin: f64,
}

/// Evaluate the closed-form steady-state constants of `model`.
pub fn derive_quantities(model: &ApplianceModel) -> Result<DerivedQuantities, ModelError> {
    model.validate()?;
    // Written with positive factors so each log argument is manifestly > 1
    // for an ordered model.
    let band_ratio = (model.t_max - model.t_on) / (model.t_min - model.t_on);
    let cycle_ratio = ((model.t_max - model.t_on) * (model.t_off - model.t_min))
        / ((model.t_min - model.t_on) * (model.t_off - model.t_max));
    if band_ratio <= 0.0 || cycle_ratio <= 0.0 {
        return Err(ModelError::Domain(format!(
            "band_ratio={band_ratio}, cycle_ratio={cycle_ratio}"
        )));
    }
    let log_band = band_ratio.ln();
    let log_cycle = cycle_ratio.ln();
    if log_cycle <= 0.0 {
        return Err(ModelError::Domain(format!(
            "cycle log must be positive, got {log_cycle}"
        )));
    }
    let k = (model.t_off - model.t_on) / log_cycle;
    let t_bar_0 = model.t_off - k * log_band;
    let p_0 = model.p_on * log_band / log_cycle;
    let denom = model.t_off - t_bar_0;
    Ok(DerivedQuantities {
        k,
        t_bar_0,
        p_0,
        zeta_at_tmax: (t_bar_0 - model.t_max) / denom,
        zeta_at_tmin: (t_bar_0 - model.t_min) / denom,
    })
}

/// Instantaneous physical state of one appliance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    pub temperature: f64,
    /// Compressor on/off.
    pub compressor: bool,
    /// Door open, i.e. thermal coupling to ambient multiplied by the
    /// configured factor.
    pub door_open: bool,
}

/// One explicit-Euler step of the cabinet temperature over `dt` seconds.
///
/// An open door multiplies the thermal coupling to ambient by
/// `door_alpha_factor` (a conductance reduction): `alpha` scales up and the
/// on-state asymptote rises to `t_off - (t_off - t_on) / factor`, keeping
/// the compressor's absolute pull-down power unchanged while ambient heat
/// pours in. To stay accurate under the much faster dynamics, the step is
/// internally split into `factor` equal substeps. The compressor state is
/// untouched.
pub fn integrate_device(
    state: &DeviceState,
    model: &ApplianceModel,
    dt: f64,
    door_alpha_factor: f64,
) -> DeviceState {
    debug_assert!(dt > 0.0);
    debug_assert!(door_alpha_factor >= 1.0);
    let mut temperature = state.temperature;
    if state.door_open {
        let alpha_eff = door_alpha_factor * model.alpha;
        let asymptote = if state.compressor {
            model.t_off - (model.t_off - model.t_on) / door_alpha_factor
        } else {
            model.t_off
        };
        let substeps = door_alpha_factor.ceil().max(1.0) as usize;
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            temperature += h * alpha_eff * (asymptote - temperature);
        }
    } else {
        let asymptote = if state.compressor {
            model.t_on
        } else {
            model.t_off
        };
        temperature += dt * model.alpha * (asymptote - temperature);
    }
    DeviceState {
        temperature,
        ..*state
    }
}

/// Advance one appliance by `dt` under its native thermostat: integrate the
/// temperature, then switch on at `t_max` and off at `t_min`.
pub fn hysteresis_step(state: &DeviceState, model: &ApplianceModel, dt: f64) -> DeviceState {
    let mut next = integrate_device(state, model, dt, 1.0);
    if next.temperature >= model.t_max {
        next.compressor = true;
    } else if next.temperature <= model.t_min {
        next.compressor = false;
    }
    next
}

/// Draw a heterogeneous model from `nominal` by multiplying `alpha` and the
/// four temperatures with independent uniform factors in `[lo, hi]`.
/// `p_on` is kept at its nominal value.
///
/// A draw that breaks the temperature ordering is rejected and re-sampled;
/// running out of the retry budget means the range itself is bad.
pub fn perturb_model<R: Rng + ?Sized>(
    nominal: &ApplianceModel,
    rng: &mut R,
    lo: f64,
    hi: f64,
) -> Result<ApplianceModel, ModelError> {
    if lo <= 0.0 || lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(ModelError::InvalidModel(format!(
            "perturbation range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    nominal.validate()?;
    let factor = |rng: &mut R| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    };
    for _ in 0..PERTURB_RETRIES {
        let candidate = ApplianceModel {
            alpha: nominal.alpha * factor(rng),
            p_on: nominal.p_on,
            t_off: nominal.t_off * factor(rng),
            t_on: nominal.t_on * factor(rng),
            t_min: nominal.t_min * factor(rng),
            t_max: nominal.t_max * factor(rng),
        };
        if candidate.validate().is_ok() {
            return Ok(candidate);
        }
    }
    Err(ModelError::PerturbationRange(PERTURB_RETRIES))
}

/// Sample an initial device state from the steady-state distribution of an
/// uncontrolled appliance: the compressor is on with probability equal to
/// the duty cycle `p_0 / p_on`, and the temperature is drawn on
/// `[t_min, t_max]` from the steady-state density conditional on that
/// compressor state (inverse-CDF, no rejection).
pub fn sample_initial_state<R: Rng + ?Sized>(
    model: &ApplianceModel,
    dq: &DerivedQuantities,
    rng: &mut R,
) -> DeviceState {
    let duty = dq.p_0 / model.p_on;
    let compressor = rng.random::<f64>() < duty;
    let u = rng.random::<f64>();
    let temperature = if compressor {
        // density 1/(T - t_on) on [t_min, t_max]
        model.t_on
            + (model.t_min - model.t_on)
                * ((model.t_max - model.t_on) / (model.t_min - model.t_on)).powf(u)
    } else {
        // density 1/(t_off - T) on [t_min, t_max]
        model.t_off
            - (model.t_off - model.t_min)
                * ((model.t_off - model.t_max) / (model.t_off - model.t_min)).powf(u)
    };
    DeviceState {
        temperature,
        compressor,
        door_open: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nominal() -> ApplianceModel {
        ApplianceModel::domestic_refrigerator()
    }

    /// Brute-force oracle: fine-step Euler hysteresis run returning
    /// (mean power, time-average temperature) over `horizon` seconds.
    fn brute_force_hysteresis(model: &ApplianceModel, dt: f64, horizon: f64) -> (f64, f64) {
        let mut state = DeviceState {
            temperature: 0.5 * (model.t_min + model.t_max),
            compressor: false,
            door_open: false,
        };
        // settle onto the limit cycle before measuring
        let mut t = 0.0;
        while t < 4.0 / model.alpha {
            state = hysteresis_step(&state, model, dt);
            t += dt;
        }
        let steps = (horizon / dt) as usize;
        let mut on_time = 0.0;
        let mut temp_integral = 0.0;
        for _ in 0..steps {
            state = hysteresis_step(&state, model, dt);
            if state.compressor {
                on_time += dt;
            }
            temp_integral += state.temperature * dt;
        }
        let total = steps as f64 * dt;
        (model.p_on * on_time / total, temp_integral / total)
    }

    #[test]
    fn derived_quantities_match_closed_forms() {
        let dq = derive_quantities(&nominal()).unwrap();
        // direct evaluation of the closed forms, written out independently
        let (t_on, t_off, t_min, t_max) = (-44.0_f64, 20.0_f64, 2.0_f64, 7.0_f64);
        let log_band = ((t_max - t_on) / (t_min - t_on)).ln();
        let log_cycle = (((t_max - t_on) * (t_min - t_off)) / ((t_min - t_on) * (t_max - t_off)))
            .abs()
            .ln();
        let k = (t_off - t_on) / log_cycle;
        let t_bar_0 = t_off - k * log_band;
        assert!((dq.k - k).abs() < 1e-12);
        assert!((dq.t_bar_0 - t_bar_0).abs() < 1e-12);
        assert!((dq.p_0 - 70.0 * log_band / log_cycle).abs() < 1e-12);
        // frozen values from the formulas above
        assert!((dq.k - 149.3210662748021).abs() < 1e-9);
        assert!((dq.t_bar_0 - 4.592419822604265).abs() < 1e-9);
        assert!((dq.p_0 - 16.852040819026584).abs() < 1e-9);
        assert!((dq.zeta_at_tmax - (-0.1562594612311585)).abs() < 1e-9);
        assert!((dq.zeta_at_tmin - 0.16825613060301134).abs() < 1e-9);
        assert!(dq.zeta_at_tmax < 0.0 && dq.zeta_at_tmin > 0.0);
        assert!(dq.t_bar_0 > 2.0 && dq.t_bar_0 < 7.0);
    }

    #[test]
    fn steady_state_power_agrees_with_brute_force_duty_cycle() {
        let model = nominal();
        let dq = derive_quantities(&model).unwrap();
        let (mean_power, mean_temp) = brute_force_hysteresis(&model, 0.05, 48.0 * 3600.0);
        assert!(
            (mean_power - dq.p_0).abs() / dq.p_0 < 0.005,
            "duty-cycle power {mean_power} vs p_0 {}",
            dq.p_0
        );
        assert!(
            (mean_temp - dq.t_bar_0).abs() < 0.05,
            "trace average {mean_temp} vs t_bar_0 {}",
            dq.t_bar_0
        );
    }

    #[test]
    fn long_run_power_at_coarse_step_is_within_two_percent() {
        let model = nominal();
        let dq = derive_quantities(&model).unwrap();
        let (mean_power, _) = brute_force_hysteresis(&model, 10.0, 48.0 * 3600.0);
        assert!((mean_power - dq.p_0).abs() / dq.p_0 < 0.02);
    }

    #[test]
    fn asymptotes_are_fixed_points() {
        let model = nominal();
        for dt in [0.1, 10.0, 3600.0] {
            let off = DeviceState {
                temperature: model.t_off,
                compressor: false,
                door_open: false,
            };
            assert_eq!(integrate_device(&off, &model, dt, 1.0).temperature, 20.0);
            let on = DeviceState {
                temperature: model.t_on,
                compressor: true,
                door_open: false,
            };
            assert_eq!(integrate_device(&on, &model, dt, 1.0).temperature, -44.0);
        }
    }

    #[test]
    fn euler_step_matches_exact_solution() {
        let model = nominal();
        let state = DeviceState {
            temperature: 5.0,
            compressor: false,
            door_open: false,
        };
        let next = integrate_device(&state, &model, 10.0, 1.0);
        let expected = 5.0 + 10.0 * (1.0 / 7200.0) * (20.0 - 5.0);
        assert!((next.temperature - expected).abs() < 1e-12);
        let exact = 20.0 - (20.0 - 5.0) * (-10.0 / 7200.0_f64).exp();
        assert!((next.temperature - exact).abs() < 1e-4);
    }

    #[test]
    fn euler_step_is_monotone_towards_asymptote() {
        let model = nominal();
        for compressor in [false, true] {
            let asymptote = if compressor { model.t_on } else { model.t_off };
            for t0 in [-10.0, 2.0, 4.5, 7.0, 15.0] {
                let state = DeviceState {
                    temperature: t0,
                    compressor,
                    door_open: false,
                };
                let next = integrate_device(&state, &model, 1.0 / model.alpha, 1.0);
                let before = (t0 - asymptote).abs();
                let after = (next.temperature - asymptote).abs();
                assert!(after <= before);
                // never crosses the asymptote for dt <= 1/alpha
                assert!((next.temperature - asymptote).signum() == (t0 - asymptote).signum()
                    || next.temperature == asymptote);
            }
        }
    }

    #[test]
    fn door_open_substepping_tracks_fast_dynamics() {
        let model = nominal();
        let state = DeviceState {
            temperature: 5.0,
            compressor: false,
            door_open: true,
        };
        let next = integrate_device(&state, &model, 20.0, 25.0);
        let alpha_eff = 25.0 / 7200.0;
        let exact = 20.0 - (20.0 - 5.0) * (-alpha_eff * 20.0_f64).exp();
        // 25 substeps of 0.8 s keep the error well below a single coarse step
        assert!((next.temperature - exact).abs() < 5e-3);
        let single = 5.0 + 20.0 * alpha_eff * (20.0 - 5.0);
        assert!((next.temperature - exact).abs() < (single - exact).abs() / 10.0);
    }

    #[test]
    fn hysteresis_switches_at_bounds() {
        let model = nominal();
        let hot = DeviceState {
            temperature: 7.05,
            compressor: false,
            door_open: false,
        };
        assert!(hysteresis_step(&hot, &model, 1.0).compressor);
        let cold = DeviceState {
            temperature: 1.99,
            compressor: true,
            door_open: false,
        };
        assert!(!hysteresis_step(&cold, &model, 1.0).compressor);
        let mid = DeviceState {
            temperature: 4.0,
            compressor: true,
            door_open: false,
        };
        assert!(hysteresis_step(&mid, &model, 1.0).compressor);
    }

    #[test]
    fn identity_perturbation_returns_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = perturb_model(&nominal(), &mut rng, 1.0, 1.0).unwrap();
        assert_eq!(m, nominal());
    }

    #[test]
    fn perturbation_is_deterministic_under_a_fixed_seed() {
        let a = perturb_model(&nominal(), &mut ChaCha8Rng::seed_from_u64(42), 0.8, 1.2).unwrap();
        let b = perturb_model(&nominal(), &mut ChaCha8Rng::seed_from_u64(42), 0.8, 1.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_models_always_satisfy_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nominal = nominal();
        for _ in 0..1_000_000 {
            let m = perturb_model(&nominal, &mut rng, 0.8, 1.2).unwrap();
            assert!(m.t_on < m.t_min && m.t_min < m.t_max && m.t_max < m.t_off);
            assert_eq!(m.p_on, nominal.p_on);
        }
    }

    #[test]
    fn initial_sampler_matches_steady_state_distribution() {
        let model = nominal();
        let dq = derive_quantities(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000usize;
        let mut on_temps = Vec::new();
        let mut off_temps = Vec::new();
        for _ in 0..n {
            let s = sample_initial_state(&model, &dq, &mut rng);
            assert!(s.temperature >= model.t_min && s.temperature <= model.t_max);
            assert!(!s.door_open);
            if s.compressor {
                on_temps.push(s.temperature);
            } else {
                off_temps.push(s.temperature);
            }
        }
        // duty-cycle fraction within 3 binomial sigmas
        let duty = dq.p_0 / model.p_on;
        let sigma = (duty * (1.0 - duty) / n as f64).sqrt();
        let frac = on_temps.len() as f64 / n as f64;
        assert!(
            (frac - duty).abs() < 3.0 * sigma,
            "on fraction {frac} vs duty {duty}"
        );

        // Kolmogorov-Smirnov against the closed-form conditional CDFs
        let ks = |temps: &mut Vec<f64>, cdf: &dyn Fn(f64) -> f64| -> f64 {
            temps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = temps.len() as f64;
            temps
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let f = cdf(t);
                    let lo = i as f64 / m;
                    let hi = (i + 1) as f64 / m;
                    (f - lo).abs().max((hi - f).abs())
                })
                .fold(0.0, f64::max)
        };
        let on_cdf = |t: f64| {
            ((t - model.t_on) / (model.t_min - model.t_on)).ln()
                / ((model.t_max - model.t_on) / (model.t_min - model.t_on)).ln()
        };
        let off_cdf = |t: f64| {
            ((model.t_off - model.t_min) / (model.t_off - t)).ln()
                / ((model.t_off - model.t_min) / (model.t_off - model.t_max)).ln()
        };
        assert!(ks(&mut on_temps, &on_cdf) < 0.005);
        assert!(ks(&mut off_temps, &off_cdf) < 0.005);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ApplianceModel::new(1e-4, 70.0, 20.0, -44.0, 7.0, 2.0).is_err());
        assert!(ApplianceModel::new(-1e-4, 70.0, 20.0, -44.0, 2.0, 7.0).is_err());
        assert!(ApplianceModel::new(1e-4, 0.0, 20.0, -44.0, 2.0, 7.0).is_err());
        assert!(ApplianceModel::new(1e-4, 70.0, 5.0, -44.0, 2.0, 7.0).is_err());
    }
}
