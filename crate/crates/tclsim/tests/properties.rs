//! Property tests for the controller's algebraic invariants.

use proptest::prelude::*;

use tclsim::controller::{
    clip_energy, clip_power, continuous_switch_prob, instantaneous_switch_prob, switching_rates,
    temperature_bounds, update_z, FieldQuantities, Mode, SideQuantities,
};
use tclsim::{derive_quantities, ApplianceModel, DerivedQuantities};

fn nominal() -> (ApplianceModel, DerivedQuantities) {
    let m = ApplianceModel::domestic_refrigerator();
    let dq = derive_quantities(&m).unwrap();
    (m, dq)
}

/// Energy coordinates inside the usable band (w = 0.9 of the feasible
/// range), which is where a running controller lives.
fn z_in_band() -> impl Strategy<Value = f64> {
    let (_, dq) = nominal();
    (0.9 * dq.zeta_at_tmax)..(0.9 * dq.zeta_at_tmin)
}

proptest! {
    /// Every emitted probability lies in [0, 1] and every rate is
    /// nonnegative, for any in-band state, any requested reference and any
    /// in-band temperature.
    #[test]
    fn probabilities_and_rates_stay_in_range(
        z in z_in_band(),
        pi_prev in 0.3f64..2.5,
        pi_next in 0.0f64..4.0,
        temperature in 2.0f64..7.0,
        dt in 0.5f64..120.0,
        r_prev in 0.0f64..0.01,
    ) {
        let (m, dq) = nominal();
        let mode_minus = Mode::from_z(z);
        let clipped = clip_power(
            clip_energy(pi_next, z, 0.9, &dq),
            mode_minus.zeta(&dq),
            mode_minus.pivot(&m),
            &m,
        );
        let minus = SideQuantities::new(z, pi_prev, mode_minus, &m, &dq).unwrap();
        let plus = SideQuantities::new(z, clipped, mode_minus, &m, &dq).unwrap();
        let fq_minus = FieldQuantities::new(temperature, &minus, &m, m.alpha);
        let fq_plus = FieldQuantities::new(temperature, &plus, &m, m.alpha);

        let (r10_minus, r01_minus) = switching_rates(&fq_minus, m.alpha);
        let (r10_plus, r01_plus) = switching_rates(&fq_plus, m.alpha);
        for rate in [r10_minus, r01_minus, r10_plus, r01_plus] {
            prop_assert!(rate >= 0.0 && rate.is_finite());
        }

        let pr_cont = continuous_switch_prob(r_prev, r10_minus, dt);
        prop_assert!((0.0..=1.0).contains(&pr_cont));
        for compressor in [true, false] {
            let pr = instantaneous_switch_prob(
                fq_minus.x, fq_plus.x, fq_minus.y, fq_plus.y, compressor,
            );
            prop_assert!((0.0..=1.0).contains(&pr));
        }
    }

    /// Energy and power clipping are idempotent, and the energy-then-power
    /// order is stable: re-applying the pipeline changes nothing.
    #[test]
    fn clipping_is_idempotent_and_order_stable(
        z in z_in_band(),
        pi_next in 0.0f64..4.0,
    ) {
        let (m, dq) = nominal();
        let mode = Mode::from_z(z);
        let zeta = mode.zeta(&dq);
        let pivot = mode.pivot(&m);

        let once_energy = clip_energy(pi_next, z, 0.9, &dq);
        prop_assert_eq!(clip_energy(once_energy, z, 0.9, &dq), once_energy);

        let once_power = clip_power(once_energy, zeta, pivot, &m);
        prop_assert_eq!(clip_power(once_power, zeta, pivot, &m), once_power);

        let replayed = clip_power(clip_energy(once_power, z, 0.9, &dq), zeta, pivot, &m);
        prop_assert_eq!(replayed, once_power);
    }

    /// The clipped reference keeps the desired average temperature velocity
    /// between the all-on and all-off physical rates at the extreme
    /// attainable temperature.
    #[test]
    fn clipped_velocity_is_feasible(
        z in z_in_band(),
        pi_next in 0.0f64..4.0,
    ) {
        let (m, dq) = nominal();
        let mode = Mode::from_z(z);
        let clipped = clip_power(
            clip_energy(pi_next, z, 0.9, &dq),
            mode.zeta(&dq),
            mode.pivot(&m),
            &m,
        );
        let side = SideQuantities::new(z, clipped, mode, &m, &dq).unwrap();
        let t_limit = side.r + (m.t_min + m.t_max - 2.0 * side.r) * side.s;
        let v = m.alpha * side.beta * (t_limit - side.r);
        let v_on = -m.alpha * (t_limit - m.t_on);
        let v_off = -m.alpha * (t_limit - m.t_off);
        prop_assert!(v >= v_on - 1e-9 && v <= v_off + 1e-9);
    }

    /// Forced-switching bounds stay inside the thermostat band and keep
    /// their order for any scale in [0, 1].
    #[test]
    fn temperature_bounds_stay_inside_the_band(
        s in 0.0f64..=1.0,
        provision in any::<bool>(),
    ) {
        let (m, _) = nominal();
        let pivot = if provision { m.t_max } else { m.t_min };
        let (lo, hi) = temperature_bounds(pivot, s, &m);
        prop_assert!(lo >= m.t_min - 1e-12);
        prop_assert!(hi <= m.t_max + 1e-12);
        prop_assert!(lo <= hi);
    }

    /// The closed-form coordinate update composes exactly: one long
    /// interval equals any two-way split of it.
    #[test]
    fn z_update_composes_over_split_intervals(
        z0 in -0.15f64..0.15,
        pi in 0.3f64..2.5,
        dt in 1.0f64..600.0,
        split in 0.01f64..0.99,
    ) {
        let alpha = 1.0 / 7200.0;
        let whole = update_z(z0, pi, alpha, dt);
        let part = update_z(update_z(z0, pi, alpha, dt * split), pi, alpha, dt * (1.0 - split));
        prop_assert!((whole - part).abs() < 1e-12);
    }
}
