//! Scenario ingestion: the TOML file schema, the built-in study cases, and
//! assembly into a runnable configuration.

use serde::{Deserialize, Serialize};

use crate::plant::{GridCondition, PlantParams};
use crate::simkit::{Event, EventKind};
use crate::space_vector::ComplexGain;
use crate::supervisor::Schedule;
use crate::tuning::{synthesize_all, GainBundle, TuningReport, TuningSpec, WorstCaseGrid};
use crate::{Error, Result};

/// Controller-side settings.
#[derive(Debug, Clone, Copy)]
pub struct ControlConfig {
    /// Current limit (A, space-vector magnitude).
    pub i_max: f64,
    /// DC-link voltage reference (V).
    pub v_c_ref: f64,
    /// PCC voltage magnitude reference (V).
    pub v_p_ref: f64,
    /// Division guard of the active-power reference slope (W).
    pub delta_p: f64,
    /// 1 %-settling time of the |v_p| estimate smoother (s).
    pub vp_smooth_tau: f64,
    /// Fraction of the voltage reference below which the linearizing
    /// division is considered lost and the last output is held.
    pub vp_guard_fraction: f64,
    /// Feed the controller a finite-difference estimate of the input-power
    /// slope instead of zero. The slope cancels algebraically in the control
    /// law, so this exists to demonstrate that equivalence.
    pub use_measured_dp_i: bool,
}

/// Fully-assembled, runnable configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: PlantParams,
    pub grid: GridCondition,
    pub gains: GainBundle,
    pub control: ControlConfig,
    pub schedule: Schedule,
    pub control_dt: f64,
    pub plant_substeps: u32,
    pub duration: f64,
    pub p_i_initial: f64,
    pub events: Vec<Event>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !self.control_dt.is_finite() || self.control_dt <= 0.0 {
            return Err(Error::Scenario("control_dt must be positive".into()));
        }
        if self.plant_substeps == 0 {
            return Err(Error::Scenario("plant_substeps must be >= 1".into()));
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if let Some(last) = self
            .events
            .iter()
            .map(|e| e.time)
            .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |v| v.max(t))))
        {
            if self.duration < last {
                return Err(Error::Scenario(format!(
                    "duration {} s ends before the last event at {} s",
                    self.duration, last
                )));
            }
        }
        if self.events.iter().any(|e| e.time < 0.0) {
            return Err(Error::Scenario("event times must be >= 0".into()));
        }
        if !(self.control.i_max > 0.0 && self.control.v_c_ref > 0.0 && self.control.v_p_ref > 0.0)
        {
            return Err(Error::Scenario(
                "i_max, v_c_ref and v_p_ref must be positive".into(),
            ));
        }
        if !self.control.delta_p.is_finite() || self.control.delta_p <= 0.0 {
            return Err(Error::Scenario("delta_p must be positive".into()));
        }
        let s = &self.schedule;
        if let (Some(a), Some(b)) = (s.startup_start, s.run_start) {
            if b < a {
                return Err(Error::Scenario(
                    "run_start must not precede startup_start".into(),
                ));
            }
        }
        Ok(())
    }
}

fn default_mu_max() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}
fn default_tau_pi() -> f64 {
    15e-3
}
// 20 kHz control rate: the sampled PCC voltage inherits a phase staircase
// of about +-0.9*omega*dt/2 from the modulation zero-order hold, and the
// default rate keeps that artifact below the observer's 1 % tracking band.
fn default_control_dt() -> f64 {
    5e-5
}
fn default_substeps() -> u32 {
    10
}
fn default_vp_smooth_tau() -> f64 {
    10e-3
}
fn default_vp_guard_fraction() -> f64 {
    0.05
}
fn default_g_p_ratio() -> f64 {
    0.01
}
fn default_observer_slow_tau() -> f64 {
    50e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    /// Converter rating (VA).
    pub s_b: f64,
    /// Nominal grid voltage, space-vector magnitude (V).
    pub v_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Inverter filter inductance (H).
    pub l: f64,
    /// Grid inductance (H).
    pub l_g: f64,
    /// DC-link capacitance (F).
    pub c: f64,
    /// Pre-charge resistance (ohm).
    pub r_ch: f64,
    /// Grid frequency (Hz).
    pub frequency: f64,
    #[serde(default = "default_mu_max")]
    pub mu_max: f64,
    #[serde(default = "default_tau_pi")]
    pub tau_pi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Initial grid EMF magnitude (V).
    pub v_g_magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub observer_taus: [f64; 2],
    pub current_taus: [f64; 2],
    pub energy_taus: [f64; 3],
    pub droop_tau: f64,
    #[serde(default = "default_g_p_ratio")]
    pub g_p_ratio: f64,
    pub startup_tau: f64,
    /// Worst-case minimum grid EMF magnitude for the droop design (V).
    pub v_g_min: f64,
    /// Worst-case maximum grid reactance for the droop design (ohm).
    pub x_g_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub i_max: f64,
    pub v_c_ref: f64,
    pub v_p_ref: f64,
    /// Defaults to 1 % of the rating.
    #[serde(default)]
    pub delta_p: Option<f64>,
    #[serde(default = "default_vp_smooth_tau")]
    pub vp_smooth_tau: f64,
    #[serde(default = "default_vp_guard_fraction")]
    pub vp_guard_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub precharge_start: Option<f64>,
    #[serde(default)]
    pub startup_start: Option<f64>,
    #[serde(default)]
    pub run_start: Option<f64>,
    #[serde(default)]
    pub observer_enable: Option<f64>,
    #[serde(default)]
    pub use_thresholds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    #[serde(default = "default_control_dt")]
    pub control_dt: f64,
    #[serde(default = "default_substeps")]
    pub plant_substeps: u32,
    #[serde(default)]
    pub p_i_initial: f64,
}

/// Explicit gain overrides; when present, synthesis from the settling-time
/// menu is skipped. Complex gains are `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub observer_h1: [f64; 2],
    pub observer_h2: [f64; 2],
    pub current_k_p: [f64; 2],
    pub current_k_i: [f64; 2],
    pub energy_k1: [f64; 2],
    pub energy_k2: [f64; 2],
    pub energy_k3: [f64; 2],
    pub droop_g_p: f64,
    pub droop_g_i: f64,
    pub kappa: f64,
}

impl From<&GainBundle> for GainsSection {
    fn from(b: &GainBundle) -> Self {
        let pair = |c: ComplexGain| [c.re, c.im];
        GainsSection {
            observer_h1: pair(b.observer.h1),
            observer_h2: pair(b.observer.h2),
            current_k_p: pair(b.current.k_p),
            current_k_i: pair(b.current.k_i),
            energy_k1: pair(b.energy.k1),
            energy_k2: pair(b.energy.k2),
            energy_k3: pair(b.energy.k3),
            droop_g_p: b.droop.g_p,
            droop_g_i: b.droop.g_i,
            kappa: b.kappa,
        }
    }
}

impl GainsSection {
    fn to_bundle(&self) -> GainBundle {
        let c = |p: [f64; 2]| ComplexGain::new(p[0], p[1]);
        GainBundle {
            observer: crate::observer::ObserverGains {
                h1: c(self.observer_h1),
                h2: c(self.observer_h2),
            },
            current: crate::current_loop::CurrentLoopGains {
                k_p: c(self.current_k_p),
                k_i: c(self.current_k_i),
            },
            energy: crate::energy_control::EnergyGains {
                k1: c(self.energy_k1),
                k2: c(self.energy_k2),
                k3: c(self.energy_k3),
            },
            droop: crate::droop::DroopGains {
                g_p: self.droop_g_p,
                g_i: self.droop_g_i,
            },
            kappa: self.kappa,
        }
    }
}

/// Human-readable scenario description (nested key-value TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub base: BaseSection,
    pub plant: PlantSection,
    pub grid: GridSection,
    pub tuning: TuningSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub schedule: Option<ScheduleSection>,
    pub sim: SimSection,
    #[serde(default)]
    pub gains: Option<GainsSection>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl ScenarioFile {
    /// Parse scenario text; parse failures carry the offending key and the
    /// line/column from the TOML parser.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.plant.frequency
    }

    pub fn plant_params(&self) -> PlantParams {
        PlantParams {
            l: self.plant.l,
            l_g: self.plant.l_g,
            c: self.plant.c,
            r_ch: self.plant.r_ch,
            omega: self.omega(),
            mu_max: self.plant.mu_max,
            tau_pi: self.plant.tau_pi,
        }
    }

    pub fn tuning_spec(&self) -> TuningSpec {
        TuningSpec {
            observer_taus: (self.tuning.observer_taus[0], self.tuning.observer_taus[1]),
            current_taus: (self.tuning.current_taus[0], self.tuning.current_taus[1]),
            energy_taus: (
                self.tuning.energy_taus[0],
                self.tuning.energy_taus[1],
                self.tuning.energy_taus[2],
            ),
            droop_tau: self.tuning.droop_tau,
            g_p_ratio: self.tuning.g_p_ratio,
            startup_tau: self.tuning.startup_tau,
        }
    }

    /// Synthesize the gain bundle (or report on the overrides if present).
    pub fn synthesize(&self) -> Result<(GainBundle, TuningReport)> {
        let params = self.plant_params();
        let worst = WorstCaseGrid {
            v_g_min: self.tuning.v_g_min,
            x_g_max: self.tuning.x_g_max,
        };
        synthesize_all(
            &self.tuning_spec(),
            &params,
            &worst,
            self.controller.i_max,
            self.base.v_b,
        )
    }

    /// Build the runnable configuration, synthesizing gains unless an
    /// override section pins them.
    pub fn assemble(&self) -> Result<SimConfig> {
        let params = self.plant_params();
        let gains = match &self.gains {
            Some(section) => section.to_bundle(),
            None => self.synthesize()?.0,
        };
        let sched = self.schedule.clone().unwrap_or(ScheduleSection {
            precharge_start: Some(0.0),
            startup_start: Some(0.05),
            run_start: Some(0.1),
            observer_enable: Some(0.05),
            use_thresholds: false,
        });
        let cfg = SimConfig {
            params,
            grid: GridCondition {
                v_g_magnitude: self.grid.v_g_magnitude,
                x_g: self.omega() * self.plant.l_g,
            },
            gains,
            control: ControlConfig {
                i_max: self.controller.i_max,
                v_c_ref: self.controller.v_c_ref,
                v_p_ref: self.controller.v_p_ref,
                delta_p: self.controller.delta_p.unwrap_or(0.01 * self.base.s_b),
                vp_smooth_tau: self.controller.vp_smooth_tau,
                vp_guard_fraction: self.controller.vp_guard_fraction,
                use_measured_dp_i: false,
            },
            schedule: Schedule {
                precharge_start: sched.precharge_start,
                startup_start: sched.startup_start,
                run_start: sched.run_start,
                observer_enable: sched.observer_enable,
                use_thresholds: sched.use_thresholds,
                observer_slow_tau: default_observer_slow_tau()
                    .max(self.tuning.observer_taus[1]),
            },
            control_dt: self.sim.control_dt,
            plant_substeps: self.sim.plant_substeps,
            duration: self.sim.duration,
            p_i_initial: self.sim.p_i_initial,
            events: self.events.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Nominal values of the studied converter.
pub fn paper_base() -> (f64, f64) {
    let s_b = 2000.0;
    let v_b = 3f64.sqrt() * 94.0;
    (s_b, v_b)
}

fn paper_scenario(duration: f64, events: Vec<Event>) -> ScenarioFile {
    let (s_b, v_b) = paper_base();
    let z_b = v_b * v_b / s_b;
    ScenarioFile {
        base: BaseSection { s_b, v_b },
        plant: PlantSection {
            l: 2.1e-3,
            l_g: 21e-3,
            c: 48e-6,
            r_ch: 100.0,
            frequency: 50.0,
            mu_max: default_mu_max(),
            tau_pi: default_tau_pi(),
        },
        grid: GridSection { v_g_magnitude: v_b },
        tuning: TuningSection {
            observer_taus: [5e-3, 50e-3],
            current_taus: [1.5e-3, 1e-3],
            energy_taus: [20e-3, 1.5e-3, 1e-3],
            droop_tau: 50e-3,
            g_p_ratio: 0.01,
            startup_tau: 25e-3,
            v_g_min: 0.8 * v_b,
            x_g_max: 0.8 * z_b,
        },
        controller: ControllerSection {
            i_max: 7.1,
            v_c_ref: 300.0,
            v_p_ref: v_b,
            delta_p: None,
            vp_smooth_tau: default_vp_smooth_tau(),
            vp_guard_fraction: default_vp_guard_fraction(),
        },
        schedule: None,
        sim: SimSection {
            duration,
            control_dt: default_control_dt(),
            plant_substeps: default_substeps(),
            p_i_initial: 0.0,
        },
        gains: None,
        events,
    }
}

/// Names of the embedded study cases.
pub fn builtin_names() -> &'static [&'static str] {
    &["paper-startup", "paper-normal", "paper-sag-swell"]
}

/// Built-in scenarios reproducing the studied operating sequences:
/// pre-charge and start-up, normal operation with input power steps, and
/// the sag/swell ride-through.
pub fn builtin(name: &str) -> Option<ScenarioFile> {
    let (s_b, v_b) = paper_base();
    let p_event = |time: f64, value: f64| Event {
        time,
        kind: EventKind::SetPICommand,
        value,
    };
    let g_event = |time: f64, value: f64| Event {
        time,
        kind: EventKind::SetGridMagnitude,
        value,
    };
    match name {
        "paper-startup" => Some(paper_scenario(0.2, vec![])),
        "paper-normal" => Some(paper_scenario(
            0.45,
            vec![
                p_event(0.15, 0.5 * s_b),
                p_event(0.225, s_b),
                p_event(0.3, 0.0),
            ],
        )),
        "paper-sag-swell" => Some(paper_scenario(
            0.8,
            vec![
                p_event(0.15, 0.5 * s_b),
                p_event(0.225, s_b),
                p_event(0.3, 0.0),
                p_event(0.4, s_b),
                g_event(0.45, 0.8 * v_b),
                g_event(0.55, 1.2 * v_b),
                g_event(0.65, v_b),
            ],
        )),
        _ => None,
    }
}
