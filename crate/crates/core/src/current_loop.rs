//! PI current controller acting as the current-limiting loop, with
//! modulation-index saturation and back-calculation anti-windup.
//!
//! In normal operation the outer energy controller constructs its current
//! reference so that this loop is algebraically transparent; it only shapes
//! the output when the modulation index hits its ceiling.

use crate::space_vector::{ComplexGain, SpaceVector};
use crate::{Error, Result};

/// Integral state and saturation flag of the current loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct CurrentLoopState {
    /// Integral of the (possibly back-calculated) current error (A*s).
    pub x_i: SpaceVector,
    /// Modulation-index saturation flag of the last step.
    pub sat_mu: bool,
}

/// Proportional and integral gains of the current loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentLoopGains {
    /// Proportional gain (1/s).
    pub k_p: ComplexGain,
    /// Integral gain (1/s^2).
    pub k_i: ComplexGain,
}

/// Output of one current-loop step.
#[derive(Debug, Clone, Copy)]
pub struct CurrentLoopOutput {
    /// Final modulation index, `|mu| <= mu_max`.
    pub mu: SpaceVector,
    /// Final auxiliary control action (commanded di/dt, A/s).
    pub u: SpaceVector,
    pub sat_mu: bool,
}

/// One step of the current-limiting algorithm.
///
/// Sequence: error, PI action, modulation index, magnitude clamp, and — only
/// when the clamp engaged — back-calculation of `u` and the error so the
/// integral state stays consistent with the saturated output. When the clamp
/// does not engage the back-calculation is an algebraic identity and is
/// skipped, keeping the unsaturated path exact. The integral state always
/// updates last, with the final error.
#[allow(clippy::too_many_arguments)]
pub fn cla_step(
    state: &CurrentLoopState,
    i_meas: SpaceVector,
    i_ref: SpaceVector,
    v_p: SpaceVector,
    v_c: f64,
    gains: &CurrentLoopGains,
    l: f64,
    mu_max: f64,
    dt: f64,
) -> Result<(CurrentLoopOutput, CurrentLoopState)> {
    if v_c < crate::plant::V_C_MIN_DIV {
        return Err(Error::NonPhysicalState(format!(
            "current loop stepped with v_c = {v_c:.3} V below the division guard"
        )));
    }

    let mut e_i = i_meas - i_ref;
    let mut u = -(gains.k_p * e_i) - gains.k_i * state.x_i;
    let mut mu = (l * u + v_p) / v_c;
    let sat_mu = mu.magnitude() > mu_max;
    if sat_mu {
        mu = mu.with_magnitude(mu_max);
        u = (v_c * mu - v_p) / l;
        e_i = (u + gains.k_i * state.x_i) / -gains.k_p;
    }
    let next = CurrentLoopState {
        x_i: state.x_i + e_i * dt,
        sat_mu,
    };
    Ok((CurrentLoopOutput { mu, u, sat_mu }, next))
}

/// Choose `k_p`, `k_i` so the error matrix `A_i = [[-k_p, -k_i], [1, 0]]`
/// has real eigenvalues `-4.6/tau1`, `-4.6/tau2`:
/// `char(A_i) = s^2 + k_p*s + k_i = (s - l1)(s - l2)`.
pub fn place_current_poles(tau1: f64, tau2: f64) -> Result<CurrentLoopGains> {
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(Error::InvalidTarget(
            "current-loop settling times must be positive".into(),
        ));
    }
    let l1 = -4.6 / tau1;
    let l2 = -4.6 / tau2;
    Ok(CurrentLoopGains {
        k_p: ComplexGain::new(-(l1 + l2), 0.0),
        k_i: ComplexGain::new(l1 * l2, 0.0),
    })
}

/// Error matrix `A_i` of the loop, for eigenvalue verification.
pub fn error_matrix(gains: &CurrentLoopGains) -> [[ComplexGain; 2]; 2] {
    [
        [-gains.k_p, -gains.k_i],
        [ComplexGain::new(1.0, 0.0), ComplexGain::zero()],
    ]
}
