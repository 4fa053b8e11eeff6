//! Linear objective over rotated second-order cones with affine data.

mod cones;
mod ipm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ipm::{solve, SolverOptions};

/// `c0 + c . x`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl Affine {
    pub fn zero(nvars: usize) -> Self {
        Self {
            constant: 0.0,
            coeffs: vec![0.0; nvars],
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self {
            constant: c,
            coeffs: vec![0.0; nvars],
        }
    }

    /// The single variable `x_j`.
    pub fn var(nvars: usize, j: usize) -> Self {
        let mut a = Self::zero(nvars);
        a.coeffs[j] = 1.0;
        a
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn scale(&self, t: f64) -> Self {
        Self {
            constant: self.constant * t,
            coeffs: self.coeffs.iter().map(|c| c * t).collect(),
        }
    }

    fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(self.constant.abs(), |m, c| m.max(c.abs()))
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Complex affine functional stored as real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexAffine {
    pub re: Affine,
    pub im: Affine,
}

impl ComplexAffine {
    pub fn norm_sqr(&self, x: &[f64]) -> f64 {
        let (r, i) = (self.re.eval(x), self.im.eval(x));
        r * r + i * i
    }
}

/// `sum_k |b_k(x)|^2 <= a(x) g(x)` with `a(x), g(x) >= 0`.
///
/// This is the Schur-complement form of `[[a, b^H], [b, g I]] >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedCone {
    pub a: Affine,
    pub g: Affine,
    pub b: Vec<ComplexAffine>,
}

impl RotatedCone {
    /// Multiplies `a`, `g` and every `b_k` by `t > 0`; the feasible set is unchanged.
    pub fn scaled(&self, t: f64) -> Self {
        Self {
            a: self.a.scale(t),
            g: self.g.scale(t),
            b: self
                .b
                .iter()
                .map(|b| ComplexAffine {
                    re: b.re.scale(t),
                    im: b.im.scale(t),
                })
                .collect(),
        }
    }

    /// Normalized violation at `x`: the larger of the relative quadratic
    /// excess and the relative sign violations of `a` and `g`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let a = self.a.eval(x);
        let g = self.g.eval(x);
        let bb: f64 = self.b.iter().map(|b| b.norm_sqr(x)).sum();
        let quad = (bb - a * g) / (bb + (a * g).abs()).max(1.0);
        let sa = -a / a.abs().max(1.0);
        let sg = -g / g.abs().max(1.0);
        quad.max(sa).max(sg).max(0.0)
    }
}

/// Minimize `objective . x` subject to rotated cones and optional variable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub nvars: usize,
    pub objective: Vec<f64>,
    pub cones: Vec<RotatedCone>,
    /// Lower bounds, `-inf` when absent (`null` in JSON).
    #[serde(with = "bounds_serde")]
    pub lower: Vec<f64>,
    /// Upper bounds, `+inf` when absent (`null` in JSON).
    #[serde(with = "bounds_serde")]
    pub upper: Vec<f64>,
}

mod bounds_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        // null comes back as NaN; `ConicProgram::from_json` turns it into the right infinity
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

impl ConicProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let nvars = objective.len();
        Self {
            nvars,
            objective,
            cones: Vec::new(),
            lower: vec![f64::NEG_INFINITY; nvars],
            upper: vec![f64::INFINITY; nvars],
        }
    }

    pub fn push(&mut self, cone: RotatedCone) {
        self.cones.push(cone);
    }

    pub fn fix(&mut self, j: usize, value: f64) {
        self.lower[j] = value;
        self.upper[j] = value;
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut p: Self = serde_json::from_str(s)?;
        for l in p.lower.iter_mut().filter(|l| l.is_nan()) {
            *l = f64::NEG_INFINITY;
        }
        for u in p.upper.iter_mut().filter(|u| u.is_nan()) {
            *u = f64::INFINITY;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nvars;
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Config("objective or bounds length differs from nvars".into()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("objective is not finite".into()));
        }
        for (j, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Config(format!("bad bounds [{l}, {u}] on variable {j}")));
            }
        }
        for (i, c) in self.cones.iter().enumerate() {
            let affs = [&c.a, &c.g].into_iter().chain(c.b.iter().flat_map(|b| [&b.re, &b.im]));
            for a in affs {
                if a.coeffs.len() != n {
                    return Err(Error::Config(format!("cone {i} references undeclared variables")));
                }
                if !a.is_finite() {
                    return Err(Error::Config(format!("cone {i} has non-finite data")));
                }
            }
        }
        Ok(())
    }

    /// Largest data magnitude of cone `i`, used to report block scales.
    pub fn block_scale(&self, i: usize) -> f64 {
        let c = &self.cones[i];
        c.b.iter()
            .flat_map(|b| [&b.re, &b.im])
            .chain([&c.a, &c.g])
            .fold(1.0_f64, |m, a| m.max(a.max_abs()))
    }
}

/// Largest normalized cone or bound violation of `x`.
pub fn residuals(p: &ConicProgram, x: &[f64]) -> f64 {
    let cone = p.cones.iter().map(|c| c.residual(x)).fold(0.0_f64, f64::max);
    let bound = x
        .iter()
        .zip(p.lower.iter().zip(&p.upper))
        .map(|(&v, (&l, &u))| {
            let lo = if l.is_finite() { (l - v) / l.abs().max(1.0) } else { 0.0 };
            let hi = if u.is_finite() { (v - u) / u.abs().max(1.0) } else { 0.0 };
            lo.max(hi)
        })
        .fold(0.0_f64, f64::max);
    cone.max(bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: Status,
    pub max_cone_residual: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Met the tolerance only after relaxing it by 1e3 on a stalled run.
    pub reduced_accuracy: bool,
}

/// True iff `a >= 0`, `gamma >= 0` and `sum |b_k|^2 <= a gamma`.
pub fn reduce_hermitian_block(a: f64, b: &[num_complex::Complex64], gamma: f64) -> bool {
    a >= 0.0 && gamma >= 0.0 && b.iter().map(|z| z.norm_sqr()).sum::<f64>() <= a * gamma
}
