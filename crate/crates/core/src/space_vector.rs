//! Complex space-vector algebra and the power-invariant Clarke
//! transformation underpinning every other module.
//!
//! A space vector packs a balanced three-phase quantity into a single
//! complex number `alpha + j*beta`. The power-invariant scaling is used
//! throughout, so `Re{v * conj(i)}` is the total instantaneous three-phase
//! power of the pair.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Complex space vector (or any complex quantity of the model).
///
/// `re` is the alpha component, `im` the beta component; the same struct
/// doubles as a generic complex number for gains and intermediate algebra.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpaceVector {
    pub re: f64,
    pub im: f64,
}

/// Complex controller gain. Same algebra as [`SpaceVector`], kept as an
/// alias so signatures say what they mean.
pub type ComplexGain = SpaceVector;

/// Zero vector constant.
pub const ZERO: SpaceVector = SpaceVector { re: 0.0, im: 0.0 };

impl SpaceVector {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub const fn zero() -> Self {
        ZERO
    }

    /// Imaginary unit.
    pub const fn j() -> Self {
        Self { re: 0.0, im: 1.0 }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        Self {
            re: magnitude * angle.cos(),
            im: magnitude * angle.sin(),
        }
    }

    pub fn magnitude(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn magnitude_squared(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn arg(self) -> f64 {
        self.im.atan2(self.re)
    }

    /// Complex conjugate; an involution.
    pub fn conj(self) -> Self {
        Self {
            re: self.re,
            im: -self.im,
        }
    }

    /// Rotate by `angle` radians; preserves magnitude.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            re: self.re * c - self.im * s,
            im: self.re * s + self.im * c,
        }
    }

    /// Scale to the given magnitude, preserving the phase. Returns zero for
    /// the zero vector.
    pub fn with_magnitude(self, magnitude: f64) -> Self {
        let m = self.magnitude();
        if m == 0.0 {
            ZERO
        } else {
            self * (magnitude / m)
        }
    }

    /// Principal complex square root.
    pub fn sqrt(self) -> Self {
        Self::from_polar(self.magnitude().sqrt(), self.arg() / 2.0)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Add for SpaceVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.re + rhs.re, self.im + rhs.im)
    }
}

impl AddAssign for SpaceVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for SpaceVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.re - rhs.re, self.im - rhs.im)
    }
}

impl SubAssign for SpaceVector {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Neg for SpaceVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.im)
    }
}

impl Mul for SpaceVector {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.re * rhs.re - self.im * rhs.im,
            self.re * rhs.im + self.im * rhs.re,
        )
    }
}

impl Mul<f64> for SpaceVector {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.re * rhs, self.im * rhs)
    }
}

impl Mul<SpaceVector> for f64 {
    type Output = SpaceVector;
    fn mul(self, rhs: SpaceVector) -> SpaceVector {
        rhs * self
    }
}

impl Div<f64> for SpaceVector {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Self::new(self.re / rhs, self.im / rhs)
    }
}

impl Div for SpaceVector {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let d = rhs.magnitude_squared();
        Self::new(
            (self.re * rhs.re + self.im * rhs.im) / d,
            (self.im * rhs.re - self.re * rhs.im) / d,
        )
    }
}

const SQRT_2_3: f64 = 0.816_496_580_927_726; // sqrt(2/3)
const SQRT_3_2: f64 = 0.866_025_403_784_438_6; // sqrt(3)/2

/// Power-invariant Clarke transformation of a three-phase triple.
///
/// The zero-sequence component is discarded: the model is two-axis only.
/// Total instantaneous power is preserved, i.e. for any pair transformed
/// together `a*x_a + b*x_b + c*x_c = Re{clarke(v) * conj(clarke(x))}`.
pub fn clarke(a: f64, b: f64, c: f64) -> SpaceVector {
    SpaceVector::new(
        SQRT_2_3 * (a - 0.5 * b - 0.5 * c),
        SQRT_2_3 * SQRT_3_2 * (b - c),
    )
}

/// Inverse of [`clarke`] for zero-sequence-free triples (the transpose of
/// the power-invariant Clarke matrix), so `clarke(inverse_clarke(v)) == v`.
pub fn inverse_clarke(v: SpaceVector) -> (f64, f64, f64) {
    let a = SQRT_2_3 * v.re;
    let b = SQRT_2_3 * (-0.5 * v.re + SQRT_3_2 * v.im);
    let c = SQRT_2_3 * (-0.5 * v.re - SQRT_3_2 * v.im);
    (a, b, c)
}
