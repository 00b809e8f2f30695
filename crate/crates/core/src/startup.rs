//! Variable-resistor start-up controller: raises the DC-link voltage from
//! its pre-charge value to the reference with the current kept bounded by
//! the pre-charge resistor.
//!
//! The law `mu = -kappa*(E_c* - E_c)*i / v_c` makes the inverter look like a
//! resistor of value `kappa*(E_c* - E_c)` in series with `R_ch`, so the
//! current magnitude never exceeds what `R_ch` alone would admit, and the
//! stored energy approaches its reference no slower than a first-order
//! response with settling time `tau_ch`.

use crate::space_vector::SpaceVector;
use crate::{Error, Result};

/// Start-up controller parameters.
#[derive(Debug, Clone, Copy)]
pub struct StartupParams {
    /// Energy feedback gain (V/(J*A), from the law's structure).
    pub kappa: f64,
    /// DC-link energy reference (J), captured at mode entry.
    pub e_c_ref: f64,
    /// Design settling time (s).
    pub tau_ch: f64,
}

/// Start-up modulation index, clamped to the physical ceiling `mu_max`.
pub fn startup_mu(
    i: SpaceVector,
    v_c: f64,
    c: f64,
    params: &StartupParams,
    mu_max: f64,
) -> Result<SpaceVector> {
    if v_c < crate::plant::V_C_MIN_DIV {
        return Err(Error::NonPhysicalState(format!(
            "start-up law with v_c = {v_c:.3} V below the division guard"
        )));
    }
    let e_c = 0.5 * c * v_c * v_c;
    let mu = -(params.kappa * (params.e_c_ref - e_c) / v_c) * i;
    Ok(if mu.magnitude() > mu_max {
        mu.with_magnitude(mu_max)
    } else {
        mu
    })
}

/// Gain for a desired minimum settling time of the energy response:
/// `kappa = 4.6 * R_ch^2 / (tau_ch * V_b^2)`.
pub fn design_kappa(tau_ch: f64, r_ch: f64, v_b: f64) -> Result<f64> {
    if !(tau_ch > 0.0 && r_ch > 0.0 && v_b > 0.0) {
        return Err(Error::InvalidTarget(
            "start-up design inputs must be positive".into(),
        ));
    }
    Ok(4.6 * r_ch * r_ch / (tau_ch * v_b * v_b))
}
