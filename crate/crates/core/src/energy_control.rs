//! Feedback-linearization controller of DC-link energy and injected
//! reactive power via the complex-energy change of variables.
//!
//! The flat output is the complex energy `xi1 = (L|i|^2 + C*v_c^2)/2 + j*eta`
//! whose derivative is the complex power balance `xi2 = p_i - p + j*q`. A
//! full-state-feedback law on the transformed errors produces the auxiliary
//! action `r = d(xi2)/dt`, which maps back to a commanded current slope and
//! from there to the current reference handed to the limiting loop. Error
//! signals are constructed directly so the divergent angle integrals
//! `eta`, `eta*` never materialize; only their difference is integrated.

use crate::current_loop::{cla_step, CurrentLoopGains, CurrentLoopState};
use crate::space_vector::{ComplexGain, SpaceVector};
use crate::{Error, Result};

/// Integral states and saturation flag of the energy controller.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyState {
    /// Integral of the (possibly back-calculated) energy error.
    pub x_fl: SpaceVector,
    /// Integral of the reactive-power error (var*s); forced to zero on any
    /// step where an anti-windup path acts, since it may diverge there.
    pub e_eta: f64,
    /// Current-reference saturation flag of the last step.
    pub sat_i: bool,
}

/// Full-state-feedback gains of the linearized error system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGains {
    pub k1: ComplexGain,
    pub k2: ComplexGain,
    pub k3: ComplexGain,
}

/// Reference set for the energy loop. `p_ref` is internal, integrated by
/// [`reference_generator`]; the derivative hooks exist for testing and stay
/// zero in normal operation.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReferences {
    /// DC-link voltage reference (V).
    pub v_c_ref: f64,
    /// DC-link voltage reference slope (V/s).
    pub dv_c_ref: f64,
    /// Reactive power reference (var), driven by the droop loop.
    pub q_ref: f64,
    /// Reactive power reference slope (var/s).
    pub dq_ref: f64,
    /// Internal active-power reference (W).
    pub p_ref: f64,
    /// Division guard of the reference slope equation (W); must be > 0.
    pub delta_p: f64,
}

impl EnergyReferences {
    pub fn new(v_c_ref: f64, delta_p: f64) -> Self {
        Self {
            v_c_ref,
            dv_c_ref: 0.0,
            q_ref: 0.0,
            dq_ref: 0.0,
            p_ref: 0.0,
            delta_p,
        }
    }
}

/// Complex-energy transformation: returns
/// `xi1 = (L|i|^2 + C v_c^2)/2 + j*eta` and `xi2 = p_i - p + j*q` with
/// `p = Re{v_p conj(i)}`, `q = Im{v_p conj(i)}`.
pub fn xi_transform(
    i: SpaceVector,
    v_c: f64,
    v_p: SpaceVector,
    p_i: f64,
    eta: f64,
    l: f64,
    c: f64,
) -> (SpaceVector, SpaceVector) {
    let s = v_p * i.conj();
    let xi1 = SpaceVector::new(0.5 * (l * i.magnitude_squared() + c * v_c * v_c), eta);
    let xi2 = SpaceVector::new(p_i - s.re, s.im);
    (xi1, xi2)
}

/// Reference quantities derived for the current step.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceOutputs {
    pub xi1_ref: SpaceVector,
    pub xi2_ref: SpaceVector,
    pub dxi2_ref: SpaceVector,
    /// Squared magnitude of the implied current reference.
    pub i_ref_mag_squared: f64,
}

/// Slope of the active-power reference:
/// `dp*/dt = [V_p^2 (p_i - p* - C*dv_c**v_c*) - L*dq**q*] / [L(|p*| + delta_p)]`.
pub fn p_ref_rate(refs: &EnergyReferences, p_i: f64, v_p_mag: f64, l: f64, c: f64) -> f64 {
    let v2 = v_p_mag * v_p_mag;
    (v2 * (p_i - refs.p_ref - c * refs.dv_c_ref * refs.v_c_ref) - l * refs.dq_ref * refs.q_ref)
        / (l * (refs.p_ref.abs() + refs.delta_p))
}

/// Advance `p_ref` one step and derive the reference set.
///
/// The slope equation is stiff near `p* = 0` (its local time constant is
/// `L*delta_p / V_p^2`, microseconds against a 100 us control period), so the
/// Euler update is clamped at the slope's own fixed point: the reference
/// lands on the equilibrium instead of overshooting it, and the exported
/// `d(xi2*)/dt` uses the slope the reference actually followed.
pub fn reference_generator(
    refs: &mut EnergyReferences,
    p_i: f64,
    dp_i: f64,
    v_p_mag: f64,
    l: f64,
    c: f64,
    dt: f64,
) -> Result<ReferenceOutputs> {
    if !v_p_mag.is_finite() || v_p_mag <= 0.0 {
        return Err(Error::InvalidReference(
            "PCC voltage magnitude must be positive for reference generation".into(),
        ));
    }
    debug_assert!(refs.delta_p > 0.0);

    let rate = p_ref_rate(refs, p_i, v_p_mag, l, c);
    // Fixed point of the slope equation in p*.
    let v2 = v_p_mag * v_p_mag;
    let p_eq = p_i - c * refs.dv_c_ref * refs.v_c_ref - l * refs.dq_ref * refs.q_ref / v2;
    let p_prev = refs.p_ref;
    let mut p_next = p_prev + rate * dt;
    if (p_eq - p_prev) * (p_eq - p_next) <= 0.0 {
        p_next = p_eq; // stepped past the equilibrium: land on it
    }
    refs.p_ref = p_next;
    let achieved_rate = (p_next - p_prev) / dt;

    let i_ref_mag_squared =
        (refs.p_ref * refs.p_ref + refs.q_ref * refs.q_ref) / (v_p_mag * v_p_mag);
    Ok(ReferenceOutputs {
        // eta* is never materialized; only the error integral exists.
        xi1_ref: SpaceVector::new(
            0.5 * (l * i_ref_mag_squared + c * refs.v_c_ref * refs.v_c_ref),
            0.0,
        ),
        xi2_ref: SpaceVector::new(p_i - refs.p_ref, refs.q_ref),
        dxi2_ref: SpaceVector::new(dp_i - achieved_rate, refs.dq_ref),
        i_ref_mag_squared,
    })
}

/// Error signals constructed directly from measurements and references:
///
/// ```text
/// e_xi1 = L/2 (|i|^2 - (p*^2 + q*^2)/V_p^2) + C/2 (v_c^2 - v_c*^2) + j*e_eta
/// e_xi2 = -(p - p*) + j(q - q*)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn error_signals(
    i: SpaceVector,
    v_c: f64,
    refs: &EnergyReferences,
    p: f64,
    q: f64,
    e_eta: f64,
    l: f64,
    c: f64,
    v_p_mag: f64,
) -> (SpaceVector, SpaceVector) {
    let i_ref_sq = (refs.p_ref * refs.p_ref + refs.q_ref * refs.q_ref) / (v_p_mag * v_p_mag);
    let e_xi1 = SpaceVector::new(
        0.5 * l * (i.magnitude_squared() - i_ref_sq)
            + 0.5 * c * (v_c * v_c - refs.v_c_ref * refs.v_c_ref),
        e_eta,
    );
    let e_xi2 = SpaceVector::new(-(p - refs.p_ref), q - refs.q_ref);
    (e_xi1, e_xi2)
}

/// Measurements and signals consumed by one [`fl_step`].
#[derive(Debug, Clone, Copy)]
pub struct FlInputs {
    pub i_meas: SpaceVector,
    pub v_c: f64,
    /// Estimated PCC voltage vector (the law divides by its conjugate).
    pub v_p: SpaceVector,
    /// Smoothed estimate magnitude used in the reference terms.
    pub v_p_mag: f64,
    pub p_i: f64,
    /// Input-power slope signal; zero in the implemented controller (its
    /// contribution cancels), kept as a hook for equivalence tests.
    pub dp_i: f64,
}

/// Output of one energy-control step.
#[derive(Debug, Clone, Copy)]
pub struct FlOutput {
    pub mu: SpaceVector,
    pub i_ref: SpaceVector,
    pub sat_i: bool,
    pub sat_mu: bool,
}

/// One step of the energy controller: FSF on the transformed errors,
/// current-reference construction and clamp, the inner limiting loop, and
/// the anti-windup back-calculation of the energy error when any clamp
/// engaged (an algebraic identity otherwise, so it is skipped).
#[allow(clippy::too_many_arguments)]
pub fn fl_step(
    state: &EnergyState,
    cla_state: &CurrentLoopState,
    inputs: &FlInputs,
    refs: &EnergyReferences,
    ref_out: &ReferenceOutputs,
    gains: &EnergyGains,
    cla_gains: &CurrentLoopGains,
    i_max: f64,
    omega: f64,
    l: f64,
    c: f64,
    mu_max: f64,
    dt: f64,
) -> Result<(FlOutput, EnergyState, CurrentLoopState)> {
    let v_p_conj = inputs.v_p.conj();
    if inputs.v_p.magnitude() == 0.0 {
        return Err(Error::DivisionGuard(
            "estimated PCC voltage is zero in the linearizing law".into(),
        ));
    }

    let s = inputs.v_p * inputs.i_meas.conj();
    let (p, q) = (s.re, s.im);
    let (e_xi1, e_xi2) = error_signals(
        inputs.i_meas,
        inputs.v_c,
        refs,
        p,
        q,
        state.e_eta,
        l,
        c,
        inputs.v_p_mag,
    );

    let alpha = ref_out.dxi2_ref - gains.k2 * e_xi2 - gains.k3 * state.x_fl;
    let r = alpha - gains.k1 * e_xi1;
    let u = (SpaceVector::new(inputs.dp_i, 0.0) - r + SpaceVector::j() * omega * (v_p_conj * inputs.i_meas))
        / v_p_conj;

    let mut i_ref = (u + cla_gains.k_i * cla_state.x_i) / cla_gains.k_p + inputs.i_meas;
    let sat_i = i_ref.magnitude() > i_max;
    if sat_i {
        i_ref = i_ref.with_magnitude(i_max);
    }

    let (cla_out, cla_next) = cla_step(
        cla_state,
        inputs.i_meas,
        i_ref,
        inputs.v_p,
        inputs.v_c,
        cla_gains,
        l,
        mu_max,
        dt,
    )?;

    let e_xi1_final = if sat_i || cla_out.sat_mu {
        let r_new = SpaceVector::new(inputs.dp_i, 0.0) - v_p_conj * cla_out.u
            + SpaceVector::j() * omega * (v_p_conj * inputs.i_meas);
        (r_new - alpha) / -gains.k1
    } else {
        e_xi1
    };

    let next = EnergyState {
        x_fl: state.x_fl + e_xi1_final * dt,
        e_eta: if sat_i || cla_out.sat_mu {
            0.0
        } else {
            state.e_eta + (q - refs.q_ref) * dt
        },
        sat_i,
    };

    Ok((
        FlOutput {
            mu: cla_out.mu,
            i_ref,
            sat_i,
            sat_mu: cla_out.sat_mu,
        },
        next,
        cla_next,
    ))
}

/// Choose `k1..k3` so the error matrix has real eigenvalues `-4.6/tau_k`:
/// `char(A_fl) = s^3 + k2 s^2 + k1 s + k3 = (s-l1)(s-l2)(s-l3)`.
pub fn place_energy_poles(tau1: f64, tau2: f64, tau3: f64) -> Result<EnergyGains> {
    if !(tau1 > 0.0 && tau2 > 0.0 && tau3 > 0.0) {
        return Err(Error::InvalidTarget(
            "energy-loop settling times must be positive".into(),
        ));
    }
    let l1 = -4.6 / tau1;
    let l2 = -4.6 / tau2;
    let l3 = -4.6 / tau3;
    Ok(EnergyGains {
        k1: ComplexGain::new(l1 * l2 + l1 * l3 + l2 * l3, 0.0),
        k2: ComplexGain::new(-(l1 + l2 + l3), 0.0),
        k3: ComplexGain::new(-(l1 * l2 * l3), 0.0),
    })
}

/// Error matrix `A_fl` acting on `[e_xi1, e_xi2, x_fl]`.
pub fn error_matrix(gains: &EnergyGains) -> [[ComplexGain; 3]; 3] {
    let zero = ComplexGain::zero();
    let one = ComplexGain::new(1.0, 0.0);
    [
        [zero, one, zero],
        [-gains.k1, -gains.k2, -gains.k3],
        [one, zero, zero],
    ]
}
