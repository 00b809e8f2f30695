//! Continuous-time truth model: inverter filter, weak grid, DC link,
//! pre-charge path, and the lag-limited input power source.
//!
//! The inverter bridge is averaged — its AC-side voltage is exactly
//! `v_c * mu` — and the grid EMF is a positive-sequence rotating vector of
//! configurable magnitude. While the pre-charge resistor is not bypassed
//! (`sw2 == false`) it appears in series with the AC current path, which is
//! the model the start-up law and the observer are built against.

use serde::{Deserialize, Serialize};

use crate::space_vector::SpaceVector;
use crate::{Error, Result};

/// Division guard on `p_i / v_c`. The term is only active after pre-charge,
/// where `v_c` is far above this.
pub const V_C_MIN_DIV: f64 = 1.0;

/// Physical parameters of the power stage.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlantParams {
    /// Inverter filter inductance (H).
    pub l: f64,
    /// Grid inductance (H).
    pub l_g: f64,
    /// DC-link capacitance (F).
    pub c: f64,
    /// Pre-charge resistance (ohm).
    pub r_ch: f64,
    /// Grid angular frequency (rad/s).
    pub omega: f64,
    /// Modulation-index limit (1/sqrt(2) under space-vector modulation).
    pub mu_max: f64,
    /// 1 %-settling time of the input-power lag response (s).
    pub tau_pi: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l, self.l_g, self.c, self.r_ch, self.omega, self.mu_max, self.tau_pi,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Scenario(
                "plant parameters must all be strictly positive".into(),
            ));
        }
        if self.mu_max > std::f64::consts::FRAC_1_SQRT_2 + 1e-12 {
            return Err(Error::Scenario(
                "mu_max must not exceed 1/sqrt(2)".into(),
            ));
        }
        Ok(())
    }

    /// Total series inductance between bridge and grid EMF.
    pub fn l_total(&self) -> f64 {
        self.l + self.l_g
    }
}

/// Grid-side condition: EMF magnitude and reactance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridCondition {
    /// Grid EMF space-vector magnitude (V).
    pub v_g_magnitude: f64,
    /// Grid reactance `omega * L_g` (ohm).
    pub x_g: f64,
}

/// Operating regime the plant integrates under. Set by the supervisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantMode {
    /// Breaker open: no current, DC link holds.
    Idle,
    /// Breaker closed, inverter in high impedance; averaged diode bridge
    /// charges the DC link through the pre-charge resistor.
    Precharge,
    /// Inverter active with the pre-charge resistor still in series.
    Startup,
    /// Pre-charge resistor bypassed; normal operation.
    Run,
}

/// Plant state advanced by the integrator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlantState {
    /// Injected current space vector (A).
    pub i: SpaceVector,
    /// DC-link voltage (V).
    pub v_c: f64,
    /// Instantaneous injected input power after the lag filter (W).
    pub p_i_actual: f64,
    /// Accumulated grid phase `omega * t` (rad).
    pub grid_phase: f64,
    /// Breaker closed.
    pub sw1: bool,
    /// Pre-charge resistor bypassed.
    pub sw2: bool,
}

impl PlantState {
    /// Discharged, disconnected initial state.
    pub fn discharged() -> Self {
        Self {
            i: SpaceVector::zero(),
            v_c: 0.0,
            p_i_actual: 0.0,
            grid_phase: 0.0,
            sw1: false,
            sw2: false,
        }
    }

    /// Grid EMF vector at the current phase.
    pub fn v_g(&self, grid: &GridCondition) -> SpaceVector {
        SpaceVector::from_polar(grid.v_g_magnitude, self.grid_phase)
    }
}

/// Inputs held constant over one integration interval.
#[derive(Debug, Clone, Copy)]
pub struct PlantInputs {
    pub mode: PlantMode,
    /// Modulation index commanded by the controller (ignored unless the
    /// inverter is active).
    pub mu: SpaceVector,
    /// Power commanded from the primary source (W).
    pub p_i_command: f64,
    /// Input power limit exported by the droop loop (W); `f64::INFINITY`
    /// when inactive.
    pub p_i_limit: f64,
}

/// Time derivatives of the plant state.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlantDerivatives {
    pub di: SpaceVector,
    pub dv_c: f64,
    pub dp_i: f64,
    pub dphase: f64,
}

/// Dynamics with the inverter active.
///
/// `di/dt = (v_c*mu - v_g - (1 - sw2)*R_ch*i) / (L + L_g)`, and the DC link
/// balances the input power against the bridge power:
/// `dv_c/dt = (p_i/v_c - Re{mu * conj(i)}) / C`. The input power itself lags
/// toward `min(p_i_command, p_i_limit)` with a first-order response whose
/// 1 %-settling time is `tau_pi`.
pub fn plant_derivatives(
    state: &PlantState,
    mu: SpaceVector,
    p_i_command: f64,
    p_i_limit: f64,
    params: &PlantParams,
    grid: &GridCondition,
) -> Result<PlantDerivatives> {
    let v_g = state.v_g(grid);
    let r_series = if state.sw2 { 0.0 } else { params.r_ch };
    let di = (state.v_c * mu - v_g - r_series * state.i) / params.l_total();

    let p_i_term = if state.p_i_actual != 0.0 || p_i_command != 0.0 {
        if state.v_c < V_C_MIN_DIV {
            return Err(Error::NonPhysicalState(format!(
                "v_c = {:.3} V below division guard while input power flows",
                state.v_c
            )));
        }
        state.p_i_actual / state.v_c
    } else {
        0.0
    };
    let dv_c = (p_i_term - (mu * state.i.conj()).re) / params.c;

    let target = p_i_command.min(p_i_limit);
    let dp_i = (target - state.p_i_actual) * 4.6 / params.tau_pi;

    Ok(PlantDerivatives {
        di,
        dv_c,
        dp_i,
        dphase: params.omega,
    })
}

/// Algebraic PCC voltage consistent with both current equations:
/// `v_p = (L_g*(v_c*mu - (1 - sw2)*R_ch*i) + L*v_g) / (L + L_g)`.
pub fn pcc_voltage(
    state: &PlantState,
    mu: SpaceVector,
    params: &PlantParams,
    grid: &GridCondition,
) -> SpaceVector {
    let v_g = state.v_g(grid);
    let r_series = if state.sw2 { 0.0 } else { params.r_ch };
    (params.l_g * (state.v_c * mu - r_series * state.i) + params.l * v_g) / params.l_total()
}

/// Charging current magnitude of the averaged diode bridge:
/// `max(0, sqrt(2)*|v_p| - v_c) / (sqrt(2)*R_ch)`.
pub fn precharge_current(v_p_magnitude: f64, v_c: f64, r_ch: f64) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    (sqrt2 * v_p_magnitude - v_c).max(0.0) / (sqrt2 * r_ch)
}

/// Self-consistent algebraic pair (current, PCC voltage) of the averaged
/// diode bridge at a given DC-link voltage and grid phase. The two depend on
/// each other through the grid-reactance drop; the fixed point converges
/// geometrically with ratio ~ X_g/R_ch.
pub fn precharge_operating_point(
    v_c: f64,
    grid_phase: f64,
    params: &PlantParams,
    grid: &GridCondition,
) -> (SpaceVector, SpaceVector) {
    let v_g = SpaceVector::from_polar(grid.v_g_magnitude, grid_phase);
    let jx = SpaceVector::j() * (params.omega * params.l_g);
    let mut i = SpaceVector::zero();
    let mut v_p = v_g;
    for _ in 0..14 {
        v_p = v_g + jx * i;
        let i_ch = precharge_current(v_p.magnitude(), v_c, params.r_ch);
        i = if v_p.magnitude() > 0.0 {
            v_p.with_magnitude(i_ch)
        } else {
            SpaceVector::zero()
        };
    }
    (i, v_p)
}

/// Pre-charge dynamics: monotone first-order charge of the DC link toward
/// `sqrt(2)*|v_p|` through the averaged diode bridge and `R_ch`. The AC-side
/// current is algebraic (magnitude [`precharge_current`], aligned with the
/// PCC voltage) and is written back into the state by [`step_plant`].
pub fn precharge_derivatives(
    state: &PlantState,
    params: &PlantParams,
    grid: &GridCondition,
) -> PlantDerivatives {
    let (_, v_p) = precharge_operating_point(state.v_c, state.grid_phase, params, grid);
    let i_ch = precharge_current(v_p.magnitude(), state.v_c, params.r_ch);
    PlantDerivatives {
        di: SpaceVector::zero(),
        dv_c: i_ch / params.c,
        dp_i: -state.p_i_actual * 4.6 / params.tau_pi,
        dphase: params.omega,
    }
}

/// PCC voltage seen during pre-charge: grid EMF plus the small reactive drop
/// of the charging current across the grid inductance.
pub fn precharge_pcc_voltage(
    state: &PlantState,
    params: &PlantParams,
    grid: &GridCondition,
) -> SpaceVector {
    state.v_g(grid) + SpaceVector::j() * (params.omega * params.l_g) * state.i
}

fn pack(state: &PlantState) -> [f64; 5] {
    [
        state.i.re,
        state.i.im,
        state.v_c,
        state.p_i_actual,
        state.grid_phase,
    ]
}

fn unpack(y: &[f64; 5], template: &PlantState) -> PlantState {
    PlantState {
        i: SpaceVector::new(y[0], y[1]),
        v_c: y[2],
        p_i_actual: y[3],
        grid_phase: y[4],
        ..*template
    }
}

/// Advance the plant by one fixed step of the classic 4th-order Runge-Kutta
/// method, selecting the pre-charge or active dynamics by mode.
pub fn step_plant(
    state: &PlantState,
    inputs: &PlantInputs,
    params: &PlantParams,
    grid: &GridCondition,
    dt: f64,
) -> Result<PlantState> {
    debug_assert!(dt > 0.0);
    match inputs.mode {
        PlantMode::Idle => {
            let mut next = *state;
            next.i = SpaceVector::zero();
            next.grid_phase += params.omega * dt;
            Ok(next)
        }
        PlantMode::Precharge => {
            let deriv = |y: &[f64; 5]| -> Result<[f64; 5]> {
                let s = unpack(y, state);
                let d = precharge_derivatives(&s, params, grid);
                Ok([0.0, 0.0, d.dv_c, d.dp_i, d.dphase])
            };
            let y = crate::simkit::rk4_step_checked(&pack(state), dt, deriv)?;
            let mut next = unpack(&y, state);
            // Algebraic current write-back, self-consistent with the PCC
            // voltage at the new state so i_ch <= |v_p|/R_ch holds exactly.
            let (i, _) = precharge_operating_point(next.v_c, next.grid_phase, params, grid);
            next.i = i;
            Ok(next)
        }
        PlantMode::Startup | PlantMode::Run => {
            let deriv = |y: &[f64; 5]| -> Result<[f64; 5]> {
                let s = unpack(y, state);
                let d = plant_derivatives(
                    &s,
                    inputs.mu,
                    inputs.p_i_command,
                    inputs.p_i_limit,
                    params,
                    grid,
                )?;
                Ok([d.di.re, d.di.im, d.dv_c, d.dp_i, d.dphase])
            };
            let y = crate::simkit::rk4_step_checked(&pack(state), dt, deriv)?;
            Ok(unpack(&y, state))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn paper_params() -> PlantParams {
        PlantParams {
            l: 2.1e-3,
            l_g: 21e-3,
            c: 48e-6,
            r_ch: 100.0,
            omega: 2.0 * std::f64::consts::PI * 50.0,
            mu_max: std::f64::consts::FRAC_1_SQRT_2,
            tau_pi: 15e-3,
        }
    }

    fn paper_grid(params: &PlantParams) -> GridCondition {
        GridCondition {
            v_g_magnitude: 3.0f64.sqrt() * 94.0,
            x_g: params.omega * params.l_g,
        }
    }

    fn run_state(i: SpaceVector, v_c: f64) -> PlantState {
        PlantState {
            i,
            v_c,
            p_i_actual: 0.0,
            grid_phase: 0.0,
            sw1: true,
            sw2: true,
            ..PlantState::discharged()
        }
    }

    #[test]
    fn derivatives_zero_at_dead_equilibrium() {
        let params = paper_params();
        let grid = GridCondition {
            v_g_magnitude: 0.0,
            x_g: params.omega * params.l_g,
        };
        let state = run_state(SpaceVector::zero(), 0.0);
        let d = plant_derivatives(
            &state,
            SpaceVector::zero(),
            0.0,
            f64::INFINITY,
            &params,
            &grid,
        )
        .unwrap();
        assert_eq!(d.di, SpaceVector::zero());
        assert_eq!(d.dv_c, 0.0);
        assert_eq!(d.dp_i, 0.0);
    }

    #[test]
    fn current_derivative_direct_evaluation() {
        // v_c*mu = 150 V against a 162.8 V grid EMF over 23.1 mH.
        let params = paper_params();
        let grid = GridCondition {
            v_g_magnitude: 162.8,
            x_g: params.omega * params.l_g,
        };
        let state = run_state(SpaceVector::zero(), 300.0);
        let d = plant_derivatives(
            &state,
            SpaceVector::new(0.5, 0.0),
            0.0,
            f64::INFINITY,
            &params,
            &grid,
        )
        .unwrap();
        let expected = (150.0 - 162.8) / 0.0231;
        assert!((d.di.re - expected).abs() < 1e-9, "{} vs {expected}", d.di.re);
        assert!(d.di.im.abs() < 1e-12);
    }

    #[test]
    fn current_derivative_zero_when_bridge_matches_grid() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let state = run_state(SpaceVector::zero(), 300.0);
        let v_g = state.v_g(&grid);
        let mu = v_g / state.v_c;
        let d = plant_derivatives(&state, mu, 0.0, f64::INFINITY, &params, &grid).unwrap();
        assert!(d.di.magnitude() < 1e-12);
    }

    #[test]
    fn division_guard_trips_below_one_volt() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut state = run_state(SpaceVector::zero(), 0.5);
        state.p_i_actual = 100.0;
        let err = plant_derivatives(
            &state,
            SpaceVector::zero(),
            100.0,
            f64::INFINITY,
            &params,
            &grid,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonPhysicalState(_)));
    }

    #[test]
    fn pcc_voltage_stiff_grid_limit() {
        let mut params = paper_params();
        params.l_g = 1e-300; // exact L_g = 0 in the formula limit
        let grid = paper_grid(&params);
        let state = run_state(SpaceVector::new(3.0, -1.0), 300.0);
        let v_p = pcc_voltage(&state, SpaceVector::new(0.4, 0.1), &params, &grid);
        let v_g = state.v_g(&grid);
        assert!((v_p - v_g).magnitude() < 1e-9);
    }

    #[test]
    fn pcc_voltage_zero_ripple_case() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let state = run_state(SpaceVector::zero(), 300.0);
        let v_g = state.v_g(&grid);
        let mu = v_g / state.v_c;
        let v_p = pcc_voltage(&state, mu, &params, &grid);
        assert!((v_p - v_g).magnitude() < 1e-9);
    }

    #[test]
    fn pcc_voltage_direct_evaluation() {
        let params = paper_params();
        let grid = GridCondition {
            v_g_magnitude: 162.8,
            x_g: params.omega * params.l_g,
        };
        let state = run_state(SpaceVector::zero(), 400.0);
        let mu = SpaceVector::new(0.5, 0.0); // v_c*mu = (200, 0)
        let v_p = pcc_voltage(&state, mu, &params, &grid);
        let expected = (0.021 * 200.0 + 0.0021 * 162.8) / 0.0231;
        assert!((v_p.re - expected).abs() < 1e-9);
        assert!(v_p.im.abs() < 1e-12);
    }

    #[test]
    fn precharge_fully_charged_has_zero_rate() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut state = PlantState::discharged();
        state.sw1 = true;
        state.v_c = std::f64::consts::SQRT_2 * grid.v_g_magnitude;
        let d = precharge_derivatives(&state, &params, &grid);
        assert_eq!(d.dv_c, 0.0);
    }

    #[test]
    fn precharge_inrush_current_from_zero() {
        // i_ch = (sqrt(2)*162.8 - 0) / (sqrt(2)*100)
        let i_ch = precharge_current(162.8, 0.0, 100.0);
        let expected = std::f64::consts::SQRT_2 * 162.8 / (std::f64::consts::SQRT_2 * 100.0);
        assert!((i_ch - expected).abs() < 1e-12);
        assert!(i_ch > 1.6 && i_ch < 1.7);
    }

    #[test]
    fn precharge_reaches_230_volts_and_respects_current_bound() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut state = PlantState::discharged();
        state.sw1 = true;
        let inputs = PlantInputs {
            mode: PlantMode::Precharge,
            mu: SpaceVector::zero(),
            p_i_command: 0.0,
            p_i_limit: f64::INFINITY,
        };
        let dt = 10e-6;
        for _ in 0..5000 {
            // 50 ms
            state = step_plant(&state, &inputs, &params, &grid, dt).unwrap();
            let v_p = precharge_pcc_voltage(&state, &params, &grid);
            assert!(
                state.i.magnitude() <= v_p.magnitude() / params.r_ch + 1e-9,
                "pre-charge current exceeded |v_p|/R_ch"
            );
        }
        assert!(
            (state.v_c - 230.0).abs() < 0.05 * 230.0,
            "v_c after 50 ms = {}",
            state.v_c
        );
    }

    #[test]
    fn step_plant_identity_at_equilibrium() {
        let params = paper_params();
        let grid = GridCondition {
            v_g_magnitude: 0.0,
            x_g: params.omega * params.l_g,
        };
        let state = run_state(SpaceVector::zero(), 250.0);
        let inputs = PlantInputs {
            mode: PlantMode::Run,
            mu: SpaceVector::zero(),
            p_i_command: 0.0,
            p_i_limit: f64::INFINITY,
        };
        let next = step_plant(&state, &inputs, &params, &grid, 1e-5).unwrap();
        assert_eq!(next.i, state.i);
        assert_eq!(next.v_c, state.v_c);
        assert_eq!(next.p_i_actual, state.p_i_actual);
    }

    #[test]
    fn step_plant_single_step_matches_first_order_taylor() {
        let params = paper_params();
        let grid = GridCondition {
            v_g_magnitude: 162.8,
            x_g: params.omega * params.l_g,
        };
        let state = run_state(SpaceVector::zero(), 300.0);
        let inputs = PlantInputs {
            mode: PlantMode::Run,
            mu: SpaceVector::new(0.5, 0.0),
            p_i_command: 0.0,
            p_i_limit: f64::INFINITY,
        };
        let dt = 10e-6;
        let next = step_plant(&state, &inputs, &params, &grid, dt).unwrap();
        let first_order = -554.112_554_112_554 * dt;
        // RK4 differs from the first-order term by O(dt^2) curvature.
        assert!((next.i.re - first_order).abs() < 0.01 * first_order.abs());
        assert!(next.i.im.abs() < 2e-4);
    }

    #[test]
    fn energy_audit_with_inactive_bridge() {
        // With mu = 0 the DC link absorbs exactly the integral of p_i.
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut state = run_state(SpaceVector::zero(), 300.0);
        let inputs = PlantInputs {
            mode: PlantMode::Run,
            mu: SpaceVector::zero(),
            p_i_command: 500.0,
            p_i_limit: f64::INFINITY,
        };
        let dt = 10e-6;
        let e0 = 0.5 * params.c * state.v_c * state.v_c;
        let mut p_hist = vec![state.p_i_actual];
        for _ in 0..4000 {
            state = step_plant(&state, &inputs, &params, &grid, dt).unwrap();
            p_hist.push(state.p_i_actual);
        }
        let e1 = 0.5 * params.c * state.v_c * state.v_c;
        // Trapezoid integration oracle for the absorbed energy.
        let mut integral = 0.0;
        for w in p_hist.windows(2) {
            integral += 0.5 * (w[0] + w[1]) * dt;
        }
        let err = ((e1 - e0) - integral).abs() / integral;
        assert!(err < 1e-6, "energy audit off by {err}");
    }

    #[test]
    fn power_balance_at_random_evaluation_points() {
        // C*v_c*dv_c + Re{(v_c*mu)*conj(i)} = p_i at every evaluation point.
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut rng = StdRng::seed_from_u64(0xba1a);
        for _ in 0..300 {
            let state = PlantState {
                i: SpaceVector::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
                v_c: rng.gen_range(100.0..400.0),
                p_i_actual: rng.gen_range(-500.0..2000.0),
                grid_phase: rng.gen_range(0.0..6.28),
                sw1: true,
                sw2: true,
            };
            let mu = SpaceVector::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
            let d = plant_derivatives(&state, mu, 1000.0, f64::INFINITY, &params, &grid).unwrap();
            let balance = params.c * state.v_c * d.dv_c + (state.v_c * mu * state.i.conj()).re;
            let rel = (balance - state.p_i_actual).abs() / state.p_i_actual.abs().max(1.0);
            assert!(rel < 1e-9, "power balance off by {rel}");
        }
    }

    #[test]
    fn input_power_tracks_command_within_settling_time() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let mut state = run_state(SpaceVector::zero(), 300.0);
        let inputs = PlantInputs {
            mode: PlantMode::Run,
            mu: SpaceVector::zero(),
            p_i_command: 1000.0,
            p_i_limit: f64::INFINITY,
        };
        let dt = 1e-4;
        let mut t_settle = None;
        for k in 1..=300 {
            state = step_plant(&state, &inputs, &params, &grid, dt).unwrap();
            if t_settle.is_none() && (state.p_i_actual - 1000.0).abs() <= 10.0 {
                t_settle = Some(k as f64 * dt);
            }
        }
        let t = t_settle.expect("p_i never settled");
        assert!(
            (t - params.tau_pi).abs() <= dt + 1e-12,
            "1% settling at {t} s, expected {} s",
            params.tau_pi
        );
    }

    #[test]
    fn limit_applies_before_lag_filter() {
        let params = paper_params();
        let grid = paper_grid(&params);
        let state = run_state(SpaceVector::zero(), 300.0);
        let d = plant_derivatives(
            &state,
            SpaceVector::zero(),
            2000.0,
            800.0,
            &params,
            &grid,
        )
        .unwrap();
        assert!((d.dp_i - 800.0 * 4.6 / params.tau_pi).abs() < 1e-9);
    }
}
