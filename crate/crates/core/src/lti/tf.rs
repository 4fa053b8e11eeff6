use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::roots::{is_hurwitz, roots};
use super::{Polynomial, StateSpace};
use crate::error::{Error, Result};

/// Below this magnitude a denominator is considered to vanish.
pub const DEN_FLOOR: f64 = 1e-300;

/// Real-coefficient rational function `num(s) / den(s)`.
///
/// No pole-zero cancellation is ever performed; compositions keep every factor.
#[derive(Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawTf")]
pub struct TransferFunction {
    num: Polynomial,
    den: Polynomial,
}

#[derive(Deserialize)]
struct RawTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<RawTf> for TransferFunction {
    type Error = Error;
    fn try_from(raw: RawTf) -> Result<Self> {
        TransferFunction::new(raw.num, raw.den)
    }
}

/// How two transfer functions are interconnected by [`TransferFunction::combine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interconnection {
    Series,
    Parallel,
    /// `a / (1 + a b)`
    NegativeFeedback,
}

impl TransferFunction {
    pub fn new(num: impl Into<Polynomial>, den: impl Into<Polynomial>) -> Result<Self> {
        let num = num.into();
        let den = den.into();
        if den.is_zero() {
            return Err(Error::DegenerateResult);
        }
        Ok(Self { num, den })
    }

    pub fn gain(k: f64) -> Self {
        Self {
            num: Polynomial::constant(k),
            den: Polynomial::constant(1.0),
        }
    }

    pub fn zero() -> Self {
        Self::gain(0.0)
    }

    /// `1/s`
    pub fn integrator() -> Self {
        Self {
            num: Polynomial::constant(1.0),
            den: Polynomial::s(),
        }
    }

    pub fn num(&self) -> &Polynomial {
        &self.num
    }

    pub fn den(&self) -> &Polynomial {
        &self.den
    }

    pub fn is_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() <= self.den.degree()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() < self.den.degree()
    }

    pub fn relative_degree(&self) -> isize {
        self.den.degree() as isize - self.num.degree() as isize
    }

    /// Value at an arbitrary complex frequency.
    pub fn eval_s(&self, s: Complex64) -> Result<Complex64> {
        let d = self.den.eval(s);
        if d.norm() < DEN_FLOOR {
            return Err(Error::PoleOnGrid { omega: s.im });
        }
        Ok(self.num.eval(s) / d)
    }

    /// Frequency response at `s = j omega`.
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        self.eval_s(Complex64::new(0.0, omega))
    }

    /// Limit of the response as `omega -> 0+`, for functions without poles at the origin.
    pub fn dc_gain(&self) -> Result<f64> {
        let d = self.den.coeff(0);
        if d == 0.0 {
            return Err(Error::PoleOnGrid { omega: 0.0 });
        }
        Ok(self.num.coeff(0) / d)
    }

    pub fn series(&self, other: &Self) -> Self {
        Self {
            num: &self.num * &other.num,
            den: &self.den * &other.den,
        }
    }

    pub fn parallel(&self, other: &Self) -> Self {
        Self {
            num: &(&self.num * &other.den) + &(&other.num * &self.den),
            den: &self.den * &other.den,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            num: self.num.scale(k),
            den: self.den.clone(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    /// `1 / self`
    pub fn inverse(&self) -> Result<Self> {
        Self::new(self.den.clone(), self.num.clone())
    }

    pub fn combine(&self, other: &Self, mode: Interconnection) -> Result<Self> {
        let out = match mode {
            Interconnection::Series => self.series(other),
            Interconnection::Parallel => self.parallel(other),
            Interconnection::NegativeFeedback => {
                // a/(1+ab) = na db / (da db + na nb)
                let den = &(&self.den * &other.den) + &(&self.num * &other.num);
                if den.is_zero() {
                    return Err(Error::DegenerateResult);
                }
                Self {
                    num: &self.num * &other.den,
                    den,
                }
            }
        };
        if out.den.is_zero() {
            return Err(Error::DegenerateResult);
        }
        Ok(out)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        if self.den.degree() == 0 {
            return Ok(Vec::new());
        }
        roots(&self.den)
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        if self.num.is_zero() || self.num.degree() == 0 {
            return Ok(Vec::new());
        }
        roots(&self.num)
    }

    /// Whether every pole lies strictly in the open left half plane.
    pub fn is_stable(&self) -> Result<bool> {
        if self.den.degree() == 0 {
            return Ok(true);
        }
        is_hurwitz(&self.den)
    }

    /// Controllable canonical realization.
    pub fn realize(&self) -> Result<StateSpace> {
        StateSpace::from_transfer_function(self)
    }

    /// Mirror every right-half-plane zero into the left half plane.
    ///
    /// Magnitude is preserved at every frequency; the overall sign is chosen
    /// so the lowest-order nonzero numerator coefficient keeps its sign.
    pub fn minimum_phase_reflect(&self) -> Result<Self> {
        let zs = self.zeros()?;
        if zs.iter().all(|z| z.re <= 0.0) {
            return Ok(self.clone());
        }
        let c = self.num.coeffs();
        let low = c.iter().take_while(|&&x| x == 0.0).count();
        let reflected: Vec<Complex64> = zs
            .into_iter()
            .map(|z| if z.re > 0.0 { Complex64::new(-z.re, z.im) } else { z })
            .collect();
        let mut num = Polynomial::from_roots(&reflected).scale(self.num.leading().abs());
        if num.coeff(low).signum() != c[low].signum() {
            num = num.scale(-1.0);
        }
        Self::new(num, self.den.clone())
    }
}

impl fmt::Debug for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}

impl fmt::Display for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for TransferFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("TransferFunction", 2)?;
        st.serialize_field("num", self.num.coeffs())?;
        st.serialize_field("den", self.den.coeffs())?;
        st.end()
    }
}
