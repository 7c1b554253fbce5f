//! Scalar fields supported by the library.
//!
//! Everything is generic over [`Field`], implemented for `f64` (real
//! symmetric problems) and `Complex<f64>` (Hermitian problems). Real inputs
//! stay real end to end.

use nalgebra::{Complex, ComplexField};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldTag {
    Real,
    Complex,
}

impl std::fmt::Display for FieldTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldTag::Real => write!(f, "real"),
            FieldTag::Complex => write!(f, "complex"),
        }
    }
}

impl std::str::FromStr for FieldTag {
    type Err = crate::AceError;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "real" => Ok(FieldTag::Real),
            "complex" => Ok(FieldTag::Complex),
            other => Err(crate::AceError::UnknownName(format!("field {other}"))),
        }
    }
}

pub trait Field: ComplexField<RealField = f64> + Copy + Send + Sync {
    const TAG: FieldTag;

    /// Builds a scalar from real and imaginary parts; the imaginary part is
    /// dropped for real fields.
    fn from_parts(re: f64, im: f64) -> Self;

    /// Standard Gaussian sample with unit variance `E|z|^2 = 1`.
    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Unit-modulus scalar with the phase of `self` (1 for zero).
    fn phase(self) -> Self {
        let m = self.modulus();
        if m == 0.0 {
            Self::one()
        } else {
            self.unscale(m)
        }
    }
}

impl Field for f64 {
    const TAG: FieldTag = FieldTag::Real;

    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }

    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Field for C64 {
    const TAG: FieldTag = FieldTag::Complex;

    fn from_parts(re: f64, im: f64) -> Self {
        Complex::new(re, im)
    }

    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }
}
