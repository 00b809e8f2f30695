//! Slow PCC-voltage-magnitude PI loop producing the reactive power
//! reference, with apparent-power prioritization, the maximum-input-power
//! signal, and anti-windup.
//!
//! Reactive injection gets priority: the reference is clamped to the
//! apparent-power ceiling `i_max * V_p`, and whatever headroom remains is
//! exported as the input power limit `p_imax = sqrt(s_max^2 - q*^2)`.

use crate::{Error, Result};

/// Droop integral state plus the outputs computed this step.
#[derive(Debug, Clone, Copy, Default)]
pub struct DroopState {
    /// Integral of the (possibly back-calculated) voltage error (V*s).
    pub x_vp: f64,
    pub q_ref_out: f64,
    pub p_i_max_out: f64,
}

/// Droop PI gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopGains {
    /// Proportional gain (var/V); kept small, it exists to implement the
    /// anti-windup back-calculation.
    pub g_p: f64,
    /// Integral gain (var/(V*s)).
    pub g_i: f64,
}

/// One droop step: PI action on the voltage-magnitude error, clamp of the
/// reactive reference to the apparent-power ceiling, input-power limit, and
/// anti-windup back-calculation when clamped.
pub fn droop_step(
    state: &DroopState,
    v_p: f64,
    v_p_ref: f64,
    i_max: f64,
    gains: &DroopGains,
    dt: f64,
) -> (f64, f64, DroopState) {
    debug_assert!(v_p >= 0.0);
    let mut e = v_p - v_p_ref;
    let mut q_ref = -gains.g_p * e - gains.g_i * state.x_vp;
    let s_max = i_max * v_p;
    let clamped = q_ref.abs() > s_max;
    if clamped {
        q_ref = s_max * q_ref.signum();
    }
    let p_i_max = (s_max * s_max - q_ref * q_ref).max(0.0).sqrt();
    if clamped {
        e = (q_ref + gains.g_i * state.x_vp) / -gains.g_p;
    }
    let next = DroopState {
        x_vp: state.x_vp + e * dt,
        q_ref_out: q_ref,
        p_i_max_out: p_i_max,
    };
    (q_ref, p_i_max, next)
}

/// Worst-case droop design: `g_i = (4.6/tau) * v_g_min / x_g_max` places the
/// approximate error dynamics at the 1 %-criterion settling time `tau` for
/// the weakest expected grid; `g_p` is a small fraction of the same ratio.
pub fn design_droop_gains(
    tau: f64,
    v_g_min: f64,
    x_g_max: f64,
    g_p_ratio: f64,
) -> Result<DroopGains> {
    if !(tau > 0.0 && v_g_min > 0.0 && x_g_max > 0.0) {
        return Err(Error::InvalidTarget(
            "droop design inputs must be positive".into(),
        ));
    }
    if !(g_p_ratio > 0.0 && g_p_ratio < 1.0) {
        return Err(Error::InvalidTarget(
            "g_p ratio must lie in (0, 1), well below 1".into(),
        ));
    }
    Ok(DroopGains {
        g_p: g_p_ratio * v_g_min / x_g_max,
        g_i: 4.6 / tau * v_g_min / x_g_max,
    })
}

/// Steady-state PCC voltage magnitude squared as a function of the injected
/// powers on an inductive grid:
///
/// ```text
/// V_p^2 = X_g*q + (|v_g|/2) * [|v_g| + sqrt(|v_g|^2 - 4*X_g*(X_g*p^2/|v_g|^2 - q))]
/// ```
pub fn steady_state_vp_squared(p: f64, q: f64, v_g_mag: f64, x_g: f64) -> Result<f64> {
    if v_g_mag <= 0.0 {
        return Err(Error::NoOperatingPoint { p, q });
    }
    let disc = v_g_mag * v_g_mag - 4.0 * x_g * (x_g * p * p / (v_g_mag * v_g_mag) - q);
    if disc < 0.0 {
        return Err(Error::NoOperatingPoint { p, q });
    }
    Ok(x_g * q + 0.5 * v_g_mag * (v_g_mag + disc.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    const DT: f64 = 1e-4;

    fn v_nominal() -> f64 {
        3f64.sqrt() * 94.0
    }

    fn paper_gains() -> DroopGains {
        design_droop_gains(50e-3, 0.8 * v_nominal(), 0.8 * 13.254, 0.01).unwrap()
    }

    #[test]
    fn at_reference_with_zero_integral() {
        let gains = paper_gains();
        let v = v_nominal();
        let (q, p_max, _) = droop_step(&DroopState::default(), v, v, 7.1, &gains, DT);
        assert_eq!(q, 0.0);
        assert!((p_max - 7.1 * v).abs() < 1e-12);
    }

    #[test]
    fn full_saturation_zeroes_power_headroom() {
        // g_i*x = 2*s_max with zero error: unclamped q* = -2*s_max.
        let gains = paper_gains();
        let v = v_nominal();
        let s_max = 7.1 * v;
        let state = DroopState {
            x_vp: 2.0 * s_max / gains.g_i,
            ..DroopState::default()
        };
        let (q, p_max, next) = droop_step(&state, v, v, 7.1, &gains, DT);
        assert!((q.abs() - s_max).abs() < 1e-9);
        assert_eq!(p_max, 0.0);
        // Back-calculated error keeps the integral from growing further.
        let q_check = -gains.g_p * (next.x_vp - state.x_vp) / DT - gains.g_i * state.x_vp;
        assert!((q_check.abs() - s_max).abs() < 1e-6 * s_max);
    }

    #[test]
    fn pythagorean_power_split() {
        let gains = paper_gains();
        let v = v_nominal();
        let s_max = 7.1 * v;
        // Hold the integral so q* = 693.5 var exactly, no clamping.
        let q_target = 693.5;
        let state = DroopState {
            x_vp: -q_target / gains.g_i,
            ..DroopState::default()
        };
        let (q, p_max, _) = droop_step(&state, v, v, 7.1, &gains, DT);
        assert!((q - q_target).abs() < 1e-9);
        let expected = (s_max * s_max - q_target * q_target).sqrt();
        assert!((p_max - expected).abs() < 1e-9);
        assert!((expected - 924.9).abs() < 0.1, "p_imax = {expected}");
    }

    #[test]
    fn feasibility_invariants_random_inputs() {
        let gains = paper_gains();
        let mut rng = StdRng::seed_from_u64(0xd009);
        for _ in 0..500 {
            let state = DroopState {
                x_vp: rng.gen_range(-100.0..100.0),
                ..DroopState::default()
            };
            let v_p = rng.gen_range(0.0..250.0);
            let v_ref = rng.gen_range(100.0..200.0);
            let i_max = rng.gen_range(0.1..20.0);
            let (q, p_max, _) = droop_step(&state, v_p, v_ref, i_max, &gains, DT);
            let s_max = i_max * v_p;
            assert!(q.abs() <= s_max + 1e-9);
            let lhs = q * q + p_max * p_max;
            assert!(
                (lhs - s_max * s_max).abs() <= 1e-12 * (s_max * s_max).max(1.0),
                "q^2 + p_imax^2 = {lhs} vs s_max^2 = {}",
                s_max * s_max
            );
        }
    }

    #[test]
    fn integral_bounded_under_sustained_clamping() {
        let gains = paper_gains();
        let v_p = 0.5 * v_nominal();
        let s_max = 0.5 * v_p;
        // Integral preloaded well past the ceiling, with a persistent error
        // that keeps pushing the same way.
        let mut state = DroopState {
            x_vp: -2.0 * s_max / gains.g_i,
            ..DroopState::default()
        };
        let mut peak: f64 = 0.0;
        for _ in 0..10_000 {
            let (q, _, next) = droop_step(&state, v_p, v_nominal(), 0.5, &gains, DT);
            assert!((q.abs() - s_max).abs() < 1e-9, "should stay clamped");
            state = next;
            peak = peak.max(state.x_vp.abs());
        }
        assert!(peak <= 2.0 * s_max / gains.g_i + 1e-9, "integral grew to {peak}");
    }

    #[test]
    fn design_gains_paper_values() {
        let gains = paper_gains();
        let v_g_min = 0.8 * v_nominal();
        let x_g_max = 0.8 * 13.254;
        assert!((gains.g_i - 4.6 / 50e-3 * v_g_min / x_g_max).abs() < 1e-9);
        assert!((gains.g_i - 1130.2).abs() < 1.0, "g_i = {}", gains.g_i);
        assert!((gains.g_p - 0.01 * v_g_min / x_g_max).abs() < 1e-12);
        assert!((gains.g_p - 0.1229).abs() < 1e-3);
    }

    #[test]
    fn doubling_tau_halves_integral_gain() {
        let a = design_droop_gains(0.05, 130.0, 10.6, 0.01).unwrap();
        let b = design_droop_gains(0.10, 130.0, 10.6, 0.01).unwrap();
        assert!((a.g_i - 2.0 * b.g_i).abs() < 1e-9);
    }

    #[test]
    fn invalid_design_inputs_rejected() {
        assert!(design_droop_gains(0.0, 130.0, 10.6, 0.01).is_err());
        assert!(design_droop_gains(0.05, 130.0, 10.6, 0.0).is_err());
        assert!(design_droop_gains(0.05, -1.0, 10.6, 0.01).is_err());
    }

    #[test]
    fn no_load_voltage_equals_grid_emf() {
        let v = v_nominal();
        let y = steady_state_vp_squared(0.0, 0.0, v, 6.627).unwrap();
        assert!((y - v * v).abs() < 1e-9);
    }

    /// Independent oracle: bisection on the phasor power-flow residual
    /// `(V - X*q/V)^2 + (X*p/V)^2 - |v_g|^2 = 0`, taking the high-voltage
    /// branch.
    fn power_flow_oracle(p: f64, q: f64, v_g: f64, x: f64) -> Option<f64> {
        let residual = |v: f64| {
            let a = v - x * q / v;
            let b = x * p / v;
            a * a + b * b - v_g * v_g
        };
        // The high root lies between the residual minimum and an upper bound.
        let mut lo = 1e-6;
        let mut hi = 2.0 * v_g + x * (q.abs() + p.abs()) / v_g + 10.0;
        // Find the minimizing point by golden-section to bracket the root.
        let mut a = lo;
        let mut b = hi;
        let phi = 0.5 * (3.0 - 5f64.sqrt());
        for _ in 0..200 {
            let x1 = a + phi * (b - a);
            let x2 = b - phi * (b - a);
            if residual(x1) < residual(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let v_min = 0.5 * (a + b);
        if residual(v_min) > 0.0 {
            return None; // no crossing: collapse region
        }
        lo = v_min;
        if residual(hi) < 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    #[test]
    fn closed_form_matches_power_flow_oracle() {
        let v_g = v_nominal();
        let x = 6.627;
        let y = steady_state_vp_squared(1000.0, 0.0, v_g, x).unwrap();
        let v_oracle = power_flow_oracle(1000.0, 0.0, v_g, x).unwrap();
        assert!(
            (y.sqrt() - v_oracle).abs() / v_oracle < 1e-9,
            "{} vs {v_oracle}",
            y.sqrt()
        );
    }

    #[test]
    fn closed_form_matches_oracle_on_grid() {
        // 10 x 10 x 5 grid over (p, q, X_g) inside the feasible region.
        let v_g = v_nominal();
        for xi in 0..5 {
            let x = 2.0 + 2.0 * xi as f64;
            for pi in 0..10 {
                let p = 150.0 * pi as f64;
                for qi in 0..10 {
                    let q = -400.0 + 100.0 * qi as f64;
                    match steady_state_vp_squared(p, q, v_g, x) {
                        Ok(y) => {
                            let v = power_flow_oracle(p, q, v_g, x)
                                .unwrap_or_else(|| panic!("oracle failed at p={p} q={q} x={x}"));
                            assert!(
                                (y.sqrt() - v).abs() / v < 1e-9,
                                "p={p} q={q} x={x}: {} vs {v}",
                                y.sqrt()
                            );
                        }
                        Err(Error::NoOperatingPoint { .. }) => {
                            assert!(
                                power_flow_oracle(p, q, v_g, x).is_none(),
                                "formula says collapse but oracle found a root at p={p} q={q} x={x}"
                            );
                        }
                        Err(e) => panic!("unexpected error {e}"),
                    }
                }
            }
        }
    }

    #[test]
    fn collapse_region_detected() {
        let v_g = v_nominal();
        let x = 6.627;
        // Static transfer limit at q=0 is v_g^2/(2X) (about 2 kW here).
        let err = steady_state_vp_squared(2100.0, 0.0, v_g, x).unwrap_err();
        assert!(matches!(err, Error::NoOperatingPoint { .. }));
    }

    #[test]
    fn linearized_slope_matches_reactance_over_voltage() {
        let v_g = v_nominal();
        let x = 6.627;
        let h = 1e-4;
        let vp = |q: f64| steady_state_vp_squared(0.0, q, v_g, x).unwrap().sqrt();
        let slope = (vp(h) - vp(-h)) / (2.0 * h);
        assert!(
            (slope - x / v_g).abs() < 1e-6,
            "dV_p/dq = {slope}, expected {}",
            x / v_g
        );
    }

    #[test]
    fn settling_time_against_static_grid_map() {
        // Worst-case design values: response settles within [tau, 2*tau].
        let tau = 50e-3;
        let v_g_min = 0.8 * v_nominal();
        let x_g_max = 0.8 * 13.254;
        let gains = design_droop_gains(tau, v_g_min, x_g_max, 0.01).unwrap();
        let settle = |x_g: f64, v_g: f64| -> f64 {
            let mut state = DroopState::default();
            let v_ref = v_g + 5.0; // small magnitude step
            let mut t = 0.0;
            let mut settled_at = None;
            while t < 1.0 {
                let v_p = steady_state_vp_squared(0.0, state.q_ref_out, v_g, x_g)
                    .unwrap()
                    .sqrt();
                let (_, _, next) = droop_step(&state, v_p, v_ref, 7.1, &gains, DT);
                state = next;
                let e = (v_p - v_ref).abs();
                if e <= 0.01 * 5.0 {
                    settled_at.get_or_insert(t);
                } else {
                    settled_at = None;
                }
                t += DT;
            }
            settled_at.expect("never settled")
        };
        let t_worst = settle(x_g_max, v_g_min);
        assert!(
            t_worst >= tau * 0.9 && t_worst <= 2.0 * tau,
            "worst-case settling {t_worst}"
        );
        // Weaker coupling settles more slowly but remains stable.
        let t_half = settle(0.5 * x_g_max, v_g_min);
        assert!(t_half > t_worst);
    }
}
