//! Full-order observer estimating the PCC voltage space vector from the
//! measured inductor current, enabling self-synchronization without a PCC
//! voltage sensor.
//!
//! The estimate model is `d(v_p)/dt = j*omega*v_p` (constant-amplitude
//! positive-sequence EMF); a pre-charge resistor term keeps the current
//! equation valid while `sw2` is open.

use crate::space_vector::{ComplexGain, SpaceVector};
use crate::{Error, Result};

/// Observer gain pair; the 2x2 error matrix built from it must be Hurwitz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverGains {
    /// Current-estimate correction gain (1/s).
    pub h1: ComplexGain,
    /// Voltage-estimate correction gain (V/(A*s)).
    pub h2: ComplexGain,
}

/// Observer state; outputs are zero while disabled.
#[derive(Debug, Clone, Copy)]
pub struct ObserverState {
    pub i_hat: SpaceVector,
    pub v_p_hat: SpaceVector,
    pub enabled: bool,
}

impl ObserverState {
    pub fn disabled() -> Self {
        Self {
            i_hat: SpaceVector::zero(),
            v_p_hat: SpaceVector::zero(),
            enabled: false,
        }
    }

    /// Enable mid-run: the current estimate seeds from the measurement, the
    /// voltage estimate starts at zero.
    pub fn enable(&mut self, i_meas: SpaceVector) {
        self.i_hat = i_meas;
        self.v_p_hat = SpaceVector::zero();
        self.enabled = true;
    }
}

/// Inputs held constant over one observer update.
#[derive(Debug, Clone, Copy)]
pub struct ObserverInputs {
    pub i_meas: SpaceVector,
    pub v_c: f64,
    pub mu: SpaceVector,
    /// Pre-charge resistor bypassed; while false the `R_ch * i` term is in
    /// the current equation.
    pub sw2: bool,
}

/// State derivatives of the observer:
///
/// ```text
/// eps_i = i_meas - i_hat
/// L * d(i_hat)/dt  = v_c*mu - v_p_hat + L*h1*eps_i - (1 - sw2)*R_ch*i_meas
/// d(v_p_hat)/dt    = j*omega*v_p_hat + h2*eps_i
/// ```
pub fn observer_derivatives(
    obs: &ObserverState,
    inputs: &ObserverInputs,
    gains: &ObserverGains,
    l: f64,
    r_ch: f64,
    omega: f64,
) -> Result<(SpaceVector, SpaceVector)> {
    if !obs.enabled {
        return Err(Error::ObserverDisabled);
    }
    let eps_i = inputs.i_meas - obs.i_hat;
    let r_term = if inputs.sw2 {
        SpaceVector::zero()
    } else {
        r_ch * inputs.i_meas
    };
    let di_hat = (inputs.v_c * inputs.mu - obs.v_p_hat + l * (gains.h1 * eps_i) - r_term) / l;
    let dv_p_hat = SpaceVector::j() * omega * obs.v_p_hat + gains.h2 * eps_i;
    Ok((di_hat, dv_p_hat))
}

/// Advance the observer by one control period with input zero-order hold.
/// Integrated with the same RK4 kernel as the plant so the structural
/// rotation of the voltage estimate carries no first-order truncation bias.
pub fn step_observer(
    obs: &mut ObserverState,
    inputs: &ObserverInputs,
    gains: &ObserverGains,
    l: f64,
    r_ch: f64,
    omega: f64,
    dt: f64,
) -> Result<()> {
    if !obs.enabled {
        return Err(Error::ObserverDisabled);
    }
    let y0 = [
        obs.i_hat.re,
        obs.i_hat.im,
        obs.v_p_hat.re,
        obs.v_p_hat.im,
    ];
    let y = crate::simkit::rk4_step_checked(&y0, dt, |y| {
        let state = ObserverState {
            i_hat: SpaceVector::new(y[0], y[1]),
            v_p_hat: SpaceVector::new(y[2], y[3]),
            enabled: true,
        };
        let (di, dv) = observer_derivatives(&state, inputs, gains, l, r_ch, omega)?;
        Ok([di.re, di.im, dv.re, dv.im])
    })?;
    obs.i_hat = SpaceVector::new(y[0], y[1]);
    obs.v_p_hat = SpaceVector::new(y[2], y[3]);
    Ok(())
}

/// Estimation-error matrix `A_o = [[-h1, -1/L], [-h2, j*omega]]` acting on
/// `[eps_i, eps_vp]`.
pub fn error_matrix(gains: &ObserverGains, l: f64, omega: f64) -> [[ComplexGain; 2]; 2] {
    [
        [-gains.h1, ComplexGain::new(-1.0 / l, 0.0)],
        [-gains.h2, ComplexGain::new(0.0, omega)],
    ]
}

/// Choose `h1`, `h2` so the error matrix has real eigenvalues `-4.6/tau1`
/// and `-4.6/tau2` (settling times under the 1 % criterion), by matching the
/// complex characteristic polynomial coefficient by coefficient.
pub fn place_observer_poles(tau1: f64, tau2: f64, l: f64, omega: f64) -> Result<ObserverGains> {
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(Error::InvalidTarget(
            "observer settling times must be positive".into(),
        ));
    }
    let l1 = -4.6 / tau1;
    let l2 = -4.6 / tau2;
    // char(A_o) = s^2 + (h1 - j*omega)*s - h1*j*omega - h2/L
    //           = (s - l1)(s - l2)
    let h1 = ComplexGain::new(-(l1 + l2), omega);
    let h2 = ComplexGain::new(-l * (l1 * l2 - omega * omega), l * omega * (l1 + l2));
    Ok(ObserverGains { h1, h2 })
}
