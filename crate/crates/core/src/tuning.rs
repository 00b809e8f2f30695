//! One-stop gain synthesis: assembles the loop error matrices, verifies
//! their eigenvalues against the settling-time targets, and produces the
//! full gain set.
//!
//! Eigenvalues are extracted by characteristic-polynomial root finding on
//! the small complex matrices (closed-form quadratic and Cardano cubic), so
//! no general eigensolver dependency is needed.

use serde::{Deserialize, Serialize};

use crate::current_loop::{self, place_current_poles, CurrentLoopGains};
use crate::droop::{design_droop_gains, DroopGains};
use crate::energy_control::{self, place_energy_poles, EnergyGains};
use crate::observer::{self, place_observer_poles, ObserverGains};
use crate::plant::PlantParams;
use crate::space_vector::SpaceVector;
use crate::startup::design_kappa;
use crate::{Error, Result};

type C = SpaceVector;

/// Roots of the monic complex quadratic `s^2 + b*s + c`.
pub fn quadratic_roots(b: C, c: C) -> (C, C) {
    let disc = b * b - 4.0 * c;
    let mut sq = disc.sqrt();
    // Sign choice that avoids cancellation in -b - sq.
    if (b.conj() * sq).re < 0.0 {
        sq = -sq;
    }
    let r1 = (-b - sq) / 2.0;
    let r2 = if r1.magnitude() > 0.0 { c / r1 } else { (-b + sq) / 2.0 };
    (r1, r2)
}

/// Roots of the monic complex cubic `s^3 + a2*s^2 + a1*s + a0` (Cardano).
pub fn cubic_roots(a2: C, a1: C, a0: C) -> [C; 3] {
    // Depressed cubic t^3 + p*t + q with s = t - a2/3.
    let shift = a2 / 3.0;
    let p = a1 - (a2 * a2) / 3.0;
    let q = a2 * ((a2 * a2) * (2.0 / 27.0)) - a2 * a1 / 3.0 + a0;

    let disc = (q * q) / 4.0 + (p * p * p) / 27.0;
    let sq = disc.sqrt();
    // Pick the branch of larger magnitude for the cube root.
    let cand1 = q * (-0.5) + sq;
    let cand2 = q * (-0.5) - sq;
    let w = if cand1.magnitude() >= cand2.magnitude() {
        cand1
    } else {
        cand2
    };

    if w.magnitude() == 0.0 {
        // p = q = 0: triple root.
        return [-shift, -shift, -shift];
    }
    let u = C::from_polar(w.magnitude().cbrt(), w.arg() / 3.0);
    let v = -(p / (u * 3.0));

    let omega = C::new(-0.5, 3f64.sqrt() / 2.0);
    let omega_bar = omega.conj();
    let mut roots = [C::zero(); 3];
    let mut uk = u;
    let mut vk = v;
    for r in roots.iter_mut() {
        *r = uk + vk - shift;
        uk = uk * omega;
        vk = vk * omega_bar;
    }
    roots
}

/// Eigenvalues of a complex 2x2 matrix via its characteristic polynomial.
pub fn eig2(a: &[[C; 2]; 2]) -> (C, C) {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    quadratic_roots(-tr, det)
}

/// Eigenvalues of a complex 3x3 matrix via its characteristic polynomial.
pub fn eig3(a: &[[C; 3]; 3]) -> [C; 3] {
    let tr = a[0][0] + a[1][1] + a[2][2];
    let m2 = (a[0][0] * a[1][1] - a[0][1] * a[1][0])
        + (a[0][0] * a[2][2] - a[0][2] * a[2][0])
        + (a[1][1] * a[2][2] - a[1][2] * a[2][1]);
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    cubic_roots(-tr, m2, -det)
}

/// Greedy nearest matching of computed eigenvalues to targets; returns the
/// largest relative mismatch.
pub fn max_relative_mismatch(got: &[C], want: &[f64]) -> f64 {
    let mut used = vec![false; got.len()];
    let mut worst = 0.0f64;
    for &w in want {
        let target = C::new(w, 0.0);
        let mut best = None;
        for (idx, g) in got.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let d = (*g - target).magnitude();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((idx, d));
            }
        }
        let (idx, d) = best.expect("more targets than eigenvalues");
        used[idx] = true;
        worst = worst.max(d / w.abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// Settling-time menu for every loop (1 % criterion; poles at -4.6/tau).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TuningSpec {
    pub observer_taus: (f64, f64),
    pub current_taus: (f64, f64),
    pub energy_taus: (f64, f64, f64),
    pub droop_tau: f64,
    pub g_p_ratio: f64,
    pub startup_tau: f64,
}

/// Worst-case grid assumption used by the droop design.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WorstCaseGrid {
    /// Minimum expected grid EMF magnitude (V).
    pub v_g_min: f64,
    /// Maximum expected grid reactance (ohm).
    pub x_g_max: f64,
}

/// Complete gain set for the controller stack.
#[derive(Debug, Clone, Copy)]
pub struct GainBundle {
    pub observer: ObserverGains,
    pub current: CurrentLoopGains,
    pub energy: EnergyGains,
    pub droop: DroopGains,
    pub kappa: f64,
}

/// Eigenvalue verification for one assembled matrix.
#[derive(Debug, Clone)]
pub struct EigReport {
    pub matrix: &'static str,
    pub targets: Vec<f64>,
    pub achieved: Vec<C>,
    pub max_rel_err: f64,
}

/// Synthesis report: per-matrix eigenvalue checks plus the stability check
/// on the current-loop gain ratio.
#[derive(Debug, Clone)]
pub struct TuningReport {
    pub eigs: Vec<EigReport>,
    /// `Re{k_i / k_p}` of the current loop; must be positive for the
    /// integral state to behave as a stable low-pass when the outer loop
    /// cancels this one.
    pub ki_over_kp_re: f64,
    /// Apparent-power ceiling `i_max * v_nominal` (VA), for reference.
    pub s_max_nominal: f64,
}

impl TuningReport {
    pub fn max_rel_err(&self) -> f64 {
        self.eigs.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Run the full synthesis from the settling-time menu, verifying each
/// assembled error matrix against its pole targets.
pub fn synthesize_all(
    spec: &TuningSpec,
    params: &PlantParams,
    worst: &WorstCaseGrid,
    i_max: f64,
    v_nominal: f64,
) -> Result<(GainBundle, TuningReport)> {
    let observer = place_observer_poles(
        spec.observer_taus.0,
        spec.observer_taus.1,
        params.l,
        params.omega,
    )?;
    let current = place_current_poles(spec.current_taus.0, spec.current_taus.1)?;
    let energy = place_energy_poles(
        spec.energy_taus.0,
        spec.energy_taus.1,
        spec.energy_taus.2,
    )?;
    let droop = design_droop_gains(spec.droop_tau, worst.v_g_min, worst.x_g_max, spec.g_p_ratio)?;
    let kappa = design_kappa(spec.startup_tau, params.r_ch, v_nominal)?;

    let mut eigs = Vec::new();

    let a_o = observer::error_matrix(&observer, params.l, params.omega);
    let (o1, o2) = eig2(&a_o);
    let o_targets = vec![-4.6 / spec.observer_taus.0, -4.6 / spec.observer_taus.1];
    eigs.push(EigReport {
        matrix: "A_o",
        max_rel_err: max_relative_mismatch(&[o1, o2], &o_targets),
        targets: o_targets,
        achieved: vec![o1, o2],
    });

    let a_i = current_loop::error_matrix(&current);
    let (c1, c2) = eig2(&a_i);
    let c_targets = vec![-4.6 / spec.current_taus.0, -4.6 / spec.current_taus.1];
    eigs.push(EigReport {
        matrix: "A_i",
        max_rel_err: max_relative_mismatch(&[c1, c2], &c_targets),
        targets: c_targets,
        achieved: vec![c1, c2],
    });

    let a_fl = energy_control::error_matrix(&energy);
    let f = eig3(&a_fl);
    let f_targets = vec![
        -4.6 / spec.energy_taus.0,
        -4.6 / spec.energy_taus.1,
        -4.6 / spec.energy_taus.2,
    ];
    eigs.push(EigReport {
        matrix: "A_fl",
        max_rel_err: max_relative_mismatch(&f, &f_targets),
        targets: f_targets,
        achieved: f.to_vec(),
    });

    let report = TuningReport {
        eigs,
        ki_over_kp_re: (current.k_i / current.k_p).re,
        s_max_nominal: i_max * v_nominal,
    };
    if report.ki_over_kp_re <= 0.0 {
        return Err(Error::InvalidTarget(
            "current-loop gains violate Re{k_i/k_p} > 0".into(),
        ));
    }
    Ok((
        GainBundle {
            observer,
            current,
            energy,
            droop,
            kappa,
        },
        report,
    ))
}
