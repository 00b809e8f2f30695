//! Fixed-step integration kernel, event scheduler, and time-series recorder.
//!
//! One run owns all of its state, so independent scenarios may execute on
//! separate threads; a single run is strictly sequential and deterministic —
//! identical inputs produce bit-identical traces.

use serde::{Deserialize, Serialize};

use crate::plant::{pcc_voltage, precharge_pcc_voltage, PlantInputs, PlantMode, PlantState};
use crate::scenario::SimConfig;
use crate::space_vector::SpaceVector;
use crate::supervisor::{ControlMode, Controller};
use crate::{Error, Result};

/// Classic 4th-order Runge-Kutta step for an autonomous system
/// `dy/dt = f(y)` (time enters through the state itself).
pub fn rk4_step<const N: usize>(y: &[f64; N], h: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let k1 = f(y);
    let k2 = f(&offset(y, &k1, h / 2.0));
    let k3 = f(&offset(y, &k2, h / 2.0));
    let k4 = f(&offset(y, &k3, h));
    let mut out = *y;
    for n in 0..N {
        out[n] += h * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]) / 6.0;
    }
    out
}

/// [`rk4_step`] for derivative functions that can fail (division guards).
pub fn rk4_step_checked<const N: usize>(
    y: &[f64; N],
    h: f64,
    f: impl Fn(&[f64; N]) -> Result<[f64; N]>,
) -> Result<[f64; N]> {
    let k1 = f(y)?;
    let k2 = f(&offset(y, &k1, h / 2.0))?;
    let k3 = f(&offset(y, &k2, h / 2.0))?;
    let k4 = f(&offset(y, &k3, h))?;
    let mut out = *y;
    for n in 0..N {
        out[n] += h * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]) / 6.0;
    }
    Ok(out)
}

fn offset<const N: usize>(y: &[f64; N], k: &[f64; N], h: f64) -> [f64; N] {
    let mut out = *y;
    for n in 0..N {
        out[n] += h * k[n];
    }
    out
}

/// Kinds of timed scenario events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Set the power commanded from the primary source (W).
    SetPICommand,
    /// Set the grid EMF magnitude (V); phase stays continuous.
    SetGridMagnitude,
    /// Force a mode transition (value = target mode index in the
    /// IDLE/PRECHARGE/STARTUP/RUN order).
    SetMode,
    /// Set the DC-link voltage reference (V).
    SetVcRef,
    /// Set the PCC voltage magnitude reference (V).
    SetVpRef,
}

/// A timed scenario event. Events are applied at the control instant
/// nearest their timestamp; ties keep list order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub value: f64,
}

/// One recorded control-rate sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub i_alpha: f64,
    pub i_beta: f64,
    /// True PCC voltage (plant side; never visible to the controllers).
    pub v_p_alpha: f64,
    pub v_p_beta: f64,
    /// Observer estimate of the PCC voltage.
    pub v_p_hat_alpha: f64,
    pub v_p_hat_beta: f64,
    pub v_c: f64,
    /// Injected active power computed with the true PCC voltage (W).
    pub p: f64,
    /// Injected reactive power computed with the true PCC voltage (var).
    pub q: f64,
    /// Reactive power reference from the droop loop (var).
    pub q_ref: f64,
    pub p_i_actual: f64,
    /// Input power limit exported to the source (W); infinity while the
    /// droop loop is inactive.
    pub p_i_max: f64,
    pub sat_i: bool,
    pub sat_mu: bool,
    pub mode: ControlMode,
}

/// Fixed-rate recording of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Rows with `t` in `[t0, t1)`.
    pub fn window(&self, t0: f64, t1: f64) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.t >= t0 && r.t < t1)
    }

    /// First row at or after `t`.
    pub fn at(&self, t: f64) -> Option<&TraceRow> {
        let idx = (t / self.dt).round() as usize;
        self.rows.get(idx)
    }
}

/// Run a configured scenario to completion.
///
/// The plant integrates with RK4 substeps between control instants; the
/// controller runs once per control period; events are applied at their
/// nearest control instant before the controller samples the plant.
pub fn run(cfg: &SimConfig) -> Result<Trace> {
    cfg.validate()?;
    let dt = cfg.control_dt;
    let substeps = cfg.plant_substeps.max(1);
    let dt_plant = dt / substeps as f64;
    let steps = (cfg.duration / dt).round() as usize;

    let mut grid = cfg.grid;
    let mut plant = PlantState::discharged();
    let mut ctl = Controller::new(cfg);
    let mut p_i_command = cfg.p_i_initial;

    // Snap events to control indices, keeping list order on ties.
    let mut events: Vec<(usize, Event)> = cfg
        .events
        .iter()
        .map(|e| ((e.time / dt).round() as usize, *e))
        .collect();
    events.sort_by_key(|(k, _)| *k);
    let mut next_event = 0usize;

    // Inputs held over the interval ending at the current sample; the PCC
    // voltage is recorded with these, i.e. at the sampling instant before
    // the new modulation command lands on the bridge.
    let mut held = PlantInputs {
        mode: PlantMode::Idle,
        mu: SpaceVector::zero(),
        p_i_command: cfg.p_i_initial,
        p_i_limit: f64::INFINITY,
    };

    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;

        while next_event < events.len() && events[next_event].0 <= k {
            let ev = events[next_event].1;
            apply_event(&ev, &mut p_i_command, &mut grid, &mut ctl)
                .map_err(|e| e.at_time(t))?;
            next_event += 1;
        }

        let v_p = true_pcc_voltage(&plant, &held, cfg, &grid);

        // The controller sees only its own measurements; the grid state and
        // true PCC voltage stay on the plant side of this call.
        let out = ctl
            .step(t, plant.i, plant.v_c, plant.p_i_actual)
            .map_err(|e| e.at_time(t))?;

        let mode = out.mode;
        plant.sw1 = mode != ControlMode::Idle;
        plant.sw2 = mode == ControlMode::Run;
        held = PlantInputs {
            mode: plant_mode(mode),
            mu: out.mu,
            p_i_command,
            p_i_limit: out.p_i_max,
        };

        let s = v_p * plant.i.conj();
        rows.push(TraceRow {
            t,
            i_alpha: plant.i.re,
            i_beta: plant.i.im,
            v_p_alpha: v_p.re,
            v_p_beta: v_p.im,
            v_p_hat_alpha: out.v_p_hat.re,
            v_p_hat_beta: out.v_p_hat.im,
            v_c: plant.v_c,
            p: s.re,
            q: s.im,
            q_ref: out.q_ref,
            p_i_actual: plant.p_i_actual,
            p_i_max: out.p_i_max,
            sat_i: out.sat_i,
            sat_mu: out.sat_mu,
            mode,
        });

        if k < steps {
            for _ in 0..substeps {
                plant = crate::plant::step_plant(&plant, &held, &cfg.params, &grid, dt_plant)
                    .map_err(|e| e.at_time(t))?;
            }
        }
    }

    Ok(Trace { dt, rows })
}

fn plant_mode(mode: ControlMode) -> PlantMode {
    match mode {
        ControlMode::Idle => PlantMode::Idle,
        ControlMode::Precharge => PlantMode::Precharge,
        ControlMode::Startup => PlantMode::Startup,
        ControlMode::Run => PlantMode::Run,
    }
}

fn true_pcc_voltage(
    plant: &PlantState,
    inputs: &PlantInputs,
    cfg: &SimConfig,
    grid: &crate::plant::GridCondition,
) -> SpaceVector {
    match inputs.mode {
        PlantMode::Idle => plant.v_g(grid),
        PlantMode::Precharge => precharge_pcc_voltage(plant, &cfg.params, grid),
        PlantMode::Startup | PlantMode::Run => pcc_voltage(plant, inputs.mu, &cfg.params, grid),
    }
}

fn apply_event(
    ev: &Event,
    p_i_command: &mut f64,
    grid: &mut crate::plant::GridCondition,
    ctl: &mut Controller,
) -> Result<()> {
    match ev.kind {
        EventKind::SetPICommand => *p_i_command = ev.value,
        EventKind::SetGridMagnitude => {
            if ev.value < 0.0 {
                return Err(Error::Scenario("grid magnitude must be >= 0".into()));
            }
            grid.v_g_magnitude = ev.value;
        }
        EventKind::SetMode => ctl.request_mode(ev.value as usize)?,
        EventKind::SetVcRef => ctl.set_v_c_ref(ev.value),
        EventKind::SetVpRef => ctl.set_v_p_ref(ev.value),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        // dy/dt = -y, y(0) = 1; after t = 1 expect 1/e.
        let mut y = [1.0];
        let h = 0.01;
        for _ in 0..100 {
            y = rk4_step(&y, h, |s| [-s[0]]);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rk4_rotation_preserves_magnitude_to_truncation() {
        // dy/dt = j*omega*y integrated for one cycle.
        let omega = 2.0 * std::f64::consts::PI;
        let mut y = [1.0, 0.0];
        let h = 1e-3;
        for _ in 0..1000 {
            y = rk4_step(&y, h, |s| [-omega * s[1], omega * s[0]]);
        }
        let mag = (y[0] * y[0] + y[1] * y[1]).sqrt();
        assert!((mag - 1.0).abs() < 1e-10);
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        // Smooth nonlinear test problem dy/dt = y*(1 - y), y(0)=0.1.
        let exact = |t: f64| {
            let y0: f64 = 0.1;
            y0 * t.exp() / (1.0 - y0 + y0 * t.exp())
        };
        let integrate = |h: f64| {
            let n = (2.0 / h).round() as usize;
            let mut y = [0.1];
            for _ in 0..n {
                y = rk4_step(&y, h, |s| [s[0] * (1.0 - s[0])]);
            }
            (y[0] - exact(2.0)).abs()
        };
        let e1 = integrate(0.02);
        let e2 = integrate(0.01);
        let e3 = integrate(0.005);
        let s1 = (e1 / e2).log2();
        let s2 = (e2 / e3).log2();
        assert!((s1 - 4.0).abs() < 0.5, "slope {s1}");
        assert!((s2 - 4.0).abs() < 0.5, "slope {s2}");
    }
}
