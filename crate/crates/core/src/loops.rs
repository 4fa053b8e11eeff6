//! Sensitivity functions of the 1-DOF, disturbance-observer and combined loops.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{is_hurwitz, FrequencyGrid, Interconnection, Polynomial, TransferFunction};
use crate::plant::{PlantSet, WeightSet};

/// Compensator `K(s) = X(s) / (s Y(s))` with monic `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComp")]
pub struct CompensatorParams {
    #[serde(rename = "X")]
    x: Polynomial,
    #[serde(rename = "Y")]
    y: Polynomial,
}

#[derive(Deserialize)]
struct RawComp {
    #[serde(rename = "X")]
    x: Vec<f64>,
    #[serde(rename = "Y")]
    y: Vec<f64>,
}

impl TryFrom<RawComp> for CompensatorParams {
    type Error = Error;
    fn try_from(r: RawComp) -> Result<Self> {
        Self::new(r.x.into(), r.y.into())
    }
}

impl CompensatorParams {
    pub fn new(x: Polynomial, y: Polynomial) -> Result<Self> {
        if y.leading() != 1.0 {
            return Err(Error::Config(format!("Y must be monic, leading coefficient is {}", y.leading())));
        }
        Ok(Self { x, y })
    }

    /// Splits the integrator off `K = num / (s * den')` and makes `Y` monic.
    pub fn from_transfer_function(k: &TransferFunction) -> Result<Self> {
        if k.den().coeff(0) != 0.0 || k.den().degree() == 0 {
            return Err(Error::Config("compensator denominator has no root at s = 0".into()));
        }
        let lead = k.den().leading();
        let y = Polynomial::new(k.den().coeffs()[1..].iter().map(|c| c / lead).collect::<Vec<_>>());
        let mut yc = y.coeffs().to_vec();
        *yc.last_mut().unwrap() = 1.0;
        Self::new(k.num().scale(1.0 / lead), Polynomial::new(yc))
    }

    pub fn x(&self) -> &Polynomial {
        &self.x
    }

    pub fn y(&self) -> &Polynomial {
        &self.y
    }

    /// `X / Y`, the compensator seen by the integrator-augmented plant.
    pub fn k_prime(&self) -> TransferFunction {
        TransferFunction::new(self.x.clone(), self.y.clone()).expect("monic Y is nonzero")
    }

    /// Delivered compensator `X / (s Y)`.
    pub fn transfer_function(&self) -> TransferFunction {
        TransferFunction::new(self.x.clone(), &self.y * &Polynomial::s()).expect("monic Y is nonzero")
    }
}

/// Q-filter `Q(s) = N(s) / M(s)` with monic `M` and `deg N < deg M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFilt")]
pub struct FilterParams {
    #[serde(rename = "N")]
    n: Polynomial,
    #[serde(rename = "M")]
    m: Polynomial,
}

#[derive(Deserialize)]
struct RawFilt {
    #[serde(rename = "N")]
    n: Vec<f64>,
    #[serde(rename = "M")]
    m: Vec<f64>,
}

impl TryFrom<RawFilt> for FilterParams {
    type Error = Error;
    fn try_from(r: RawFilt) -> Result<Self> {
        Self::new(r.n.into(), r.m.into())
    }
}

impl FilterParams {
    pub fn new(n: Polynomial, m: Polynomial) -> Result<Self> {
        if m.leading() != 1.0 {
            return Err(Error::Config(format!("M must be monic, leading coefficient is {}", m.leading())));
        }
        if !n.is_zero() && n.degree() >= m.degree() {
            return Err(Error::Config(format!(
                "Q must be strictly proper (deg N = {}, deg M = {})",
                n.degree(),
                m.degree()
            )));
        }
        Ok(Self { n, m })
    }

    /// Filter without normalization checks, used for scale-invariance checks.
    #[cfg(test)]
    pub(crate) fn unnormalized(n: Polynomial, m: Polynomial) -> Self {
        Self { n, m }
    }

    pub fn from_transfer_function(q: &TransferFunction) -> Result<Self> {
        let lead = q.den().leading();
        let mut mc: Vec<f64> = q.den().coeffs().iter().map(|c| c / lead).collect();
        *mc.last_mut().unwrap() = 1.0;
        Self::new(q.num().scale(1.0 / lead), Polynomial::new(mc))
    }

    pub fn n(&self) -> &Polynomial {
        &self.n
    }

    pub fn m(&self) -> &Polynomial {
        &self.m
    }

    pub fn q(&self) -> TransferFunction {
        TransferFunction::new(self.n.clone(), self.m.clone()).expect("monic M is nonzero")
    }
}

/// The eight closed-loop transfer functions, kept un-cancelled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopSet {
    #[serde(rename = "S")]
    pub s: TransferFunction,
    #[serde(rename = "T")]
    pub t: TransferFunction,
    #[serde(rename = "S_i")]
    pub s_i: TransferFunction,
    #[serde(rename = "S_o")]
    pub s_o: TransferFunction,
    #[serde(rename = "S_D")]
    pub s_d: TransferFunction,
    #[serde(rename = "T_D")]
    pub t_d: TransferFunction,
    #[serde(rename = "S_C")]
    pub s_c: TransferFunction,
    #[serde(rename = "T_C")]
    pub t_c: TransferFunction,
}

/// `G / s`
pub fn augmented_plant(g: &TransferFunction) -> TransferFunction {
    g.series(&TransferFunction::integrator())
}

/// `W_i G_i + W_v G_v`
pub fn disturbance_path(plants: &PlantSet, weights: &WeightSet) -> TransferFunction {
    weights.wi.series(&plants.g_i).parallel(&weights.wv.series(&plants.g_v))
}

/// `S = 1/(1 + G_aug K')`, `T = -W_n G_aug K' S`, `S_i = K' S`.
pub fn feedback_sensitivities(
    g_aug: &TransferFunction,
    w_n: &TransferFunction,
    comp: &CompensatorParams,
) -> Result<(TransferFunction, TransferFunction, TransferFunction)> {
    let l = g_aug.series(&comp.k_prime());
    let s = TransferFunction::gain(1.0)
        .combine(&l, Interconnection::NegativeFeedback)
        .map_err(|_| Error::DegenerateLoop)?;
    let t = w_n.series(&l).series(&s).neg();
    let s_i = comp.k_prime().series(&s);
    Ok((s, t, s_i))
}

/// `S_o = (W_v G_v + W_i G_i) / (1 + G_aug K')`
pub fn output_disturbance_sensitivity(
    weights: &WeightSet,
    plants: &PlantSet,
    comp: &CompensatorParams,
) -> Result<TransferFunction> {
    let g_aug = augmented_plant(&plants.g);
    let (s, _, _) = feedback_sensitivities(&g_aug, &plants.w_n, comp)?;
    Ok(disturbance_path(plants, weights).series(&s))
}

/// `S_D = P' M / (M + N)` and `T_D = G N W_n / (M + N)`.
pub fn dob_sensitivities(
    filt: &FilterParams,
    plants: &PlantSet,
    weights: &WeightSet,
) -> Result<(TransferFunction, TransferFunction)> {
    let h = filt.n() + filt.m();
    if h.is_zero() {
        return Err(Error::DegenerateLoop);
    }
    let s_d = disturbance_path(plants, weights).series(&TransferFunction::new(filt.m().clone(), h.clone())?);
    let t_d = plants
        .g
        .series(&plants.w_n)
        .series(&TransferFunction::new(filt.n().clone(), h)?);
    Ok((s_d, t_d))
}

/// `S_C = P' Y (M - N) / (M J)` and `T_C = W_n (N Y + M G_aug X) / (M J)` with `J = Y + G_aug X`.
pub fn closed_loop_sensitivities(
    comp: &CompensatorParams,
    filt: &FilterParams,
    plants: &PlantSet,
    weights: &WeightSet,
) -> Result<(TransferFunction, TransferFunction)> {
    // with G = nG/dG: J = (s dG Y + nG X) / (s dG)
    let s_dg = &Polynomial::s() * plants.g.den();
    let char_outer = &(&s_dg * comp.y()) + &(plants.g.num() * comp.x());
    let den = filt.m() * &char_outer;
    if den.is_zero() {
        return Err(Error::DegenerateLoop);
    }
    let p = disturbance_path(plants, weights);
    let s_c = p.series(&TransferFunction::new(
        &(comp.y() * &(filt.m() - filt.n())) * &s_dg,
        den.clone(),
    )?);
    let t_c_num = &(&(filt.n() * comp.y()) * &s_dg) + &(&(filt.m() * plants.g.num()) * comp.x());
    let t_c = plants.w_n.series(&TransferFunction::new(t_c_num, den)?);
    Ok((s_c, t_c))
}

pub fn loop_set(
    comp: &CompensatorParams,
    filt: &FilterParams,
    plants: &PlantSet,
    weights: &WeightSet,
) -> Result<LoopSet> {
    let g_aug = augmented_plant(&plants.g);
    let (s, t, s_i) = feedback_sensitivities(&g_aug, &plants.w_n, comp)?;
    let s_o = output_disturbance_sensitivity(weights, plants, comp)?;
    let (s_d, t_d) = dob_sensitivities(filt, plants, weights)?;
    let (s_c, t_c) = closed_loop_sensitivities(comp, filt, plants, weights)?;
    Ok(LoopSet {
        s,
        t,
        s_i,
        s_o,
        s_d,
        t_d,
        s_c,
        t_c,
    })
}

/// Plant and weight responses at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqPoint {
    pub omega: f64,
    pub s: Complex64,
    pub g: Complex64,
    pub g_aug: Complex64,
    /// `W_i G_i + W_v G_v`
    pub p: Complex64,
    pub w_n: Complex64,
    pub w1: Complex64,
    pub w2: Complex64,
    pub w3: Complex64,
    pub wq: Complex64,
    pub w1c: Complex64,
    pub w3c: Complex64,
}

impl FreqPoint {
    pub fn at(plants: &PlantSet, weights: &WeightSet, omega: f64) -> Result<Self> {
        let s = Complex64::new(0.0, omega);
        let g = plants.g.eval(omega)?;
        Ok(Self {
            omega,
            s,
            g,
            g_aug: g / s,
            p: weights.wi.eval(omega)? * plants.g_i.eval(omega)? + weights.wv.eval(omega)? * plants.g_v.eval(omega)?,
            w_n: plants.w_n.eval(omega)?,
            w1: weights.w1.eval(omega)?,
            w2: weights.w2.eval(omega)?,
            w3: weights.w3.eval(omega)?,
            wq: weights.wq.eval(omega)?,
            w1c: weights.w1c.eval(omega)?,
            w3c: weights.w3c.eval(omega)?,
        })
    }

    pub fn on_grid(plants: &PlantSet, weights: &WeightSet, grid: &FrequencyGrid) -> Result<Vec<Self>> {
        grid.omegas()
            .par_iter()
            .map(|&w| Self::at(plants, weights, w))
            .collect()
    }
}

/// Which constraint functions a report row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintGroup {
    Stage1,
    Stage2,
    Informational,
}

/// Named constraint functions evaluated pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    W1S,
    W3T,
    W3TNoise,
    W2Si,
    W2SiIntegrator,
    So,
    Sd,
    Td,
    SdTdJoint,
    W1cSc,
    W3cTc,
    WqOneMinusQ,
}

impl Constraint {
    pub const ALL: [Constraint; 12] = [
        Constraint::W1S,
        Constraint::W3T,
        Constraint::W2Si,
        Constraint::So,
        Constraint::Sd,
        Constraint::Td,
        Constraint::SdTdJoint,
        Constraint::W1cSc,
        Constraint::W3cTc,
        Constraint::WqOneMinusQ,
        Constraint::W3TNoise,
        Constraint::W2SiIntegrator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Constraint::W1S => "W1*S",
            Constraint::W3T => "W3*T",
            Constraint::W3TNoise => "W3*T (with W_n)",
            Constraint::W2Si => "W2*S_i",
            Constraint::W2SiIntegrator => "W2*K*S (with integrator)",
            Constraint::So => "S_o",
            Constraint::Sd => "S_D",
            Constraint::Td => "T_D",
            Constraint::SdTdJoint => "[S_D; T_D]",
            Constraint::W1cSc => "W1C*S_C",
            Constraint::W3cTc => "W3C*T_C",
            Constraint::WqOneMinusQ => "WQ*(1-Q)",
        }
    }

    pub fn group(self) -> ConstraintGroup {
        match self {
            Constraint::W1S | Constraint::W3T | Constraint::W2Si | Constraint::So => ConstraintGroup::Stage1,
            Constraint::W3TNoise | Constraint::W2SiIntegrator => ConstraintGroup::Informational,
            _ => ConstraintGroup::Stage2,
        }
    }

    /// Magnitude at one frequency for compensator values `x, y` and filter values `n, m`.
    pub fn magnitude(self, f: &FreqPoint, x: Complex64, y: Complex64, n: Complex64, m: Complex64) -> f64 {
        let j = y + f.g_aug * x;
        let h = m + n;
        match self {
            Constraint::W1S => (f.w1 * y / j).norm(),
            Constraint::W3T => (f.w3 * f.g_aug * x / j).norm(),
            Constraint::W3TNoise => (f.w3 * f.w_n * f.g_aug * x / j).norm(),
            Constraint::W2Si => (f.w2 * x / j).norm(),
            Constraint::W2SiIntegrator => (f.w2 * x / (f.s * j)).norm(),
            Constraint::So => (f.p * y / j).norm(),
            Constraint::Sd => (f.p * m / h).norm(),
            Constraint::Td => (f.g * f.w_n * n / h).norm(),
            Constraint::SdTdJoint => ((f.p * m / h).norm_sqr() + (f.g * f.w_n * n / h).norm_sqr()).sqrt(),
            Constraint::W1cSc => (f.w1c * f.p * y * (m - n) / (m * j)).norm(),
            Constraint::W3cTc => (f.w3c * f.w_n * (n * y + m * f.g_aug * x) / (m * j)).norm(),
            Constraint::WqOneMinusQ => (f.wq * (m - n) / m).norm(),
        }
    }
}

/// Bounds applied to the two constraint groups, as H-infinity magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub stage1: f64,
    pub stage2: f64,
}

impl NormBounds {
    /// From the squared bounds minimized by the synthesis, with a relative slack.
    pub fn from_gammas(gamma1: f64, gamma2: f64, slack: f64) -> Self {
        Self {
            stage1: gamma1.max(0.0).sqrt() * (1.0 + slack),
            stage2: gamma2.max(0.0).sqrt() * (1.0 + slack),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub name: String,
    pub group: ConstraintGroup,
    pub peak: f64,
    pub omega_at_peak: f64,
    pub bound: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityVerdicts {
    /// `s Y dG + X nG`
    pub outer: bool,
    /// `M + N`
    pub inner: bool,
    /// `M (s Y dG + X nG)`
    pub combined: bool,
}

impl StabilityVerdicts {
    pub fn all(&self) -> bool {
        self.outer && self.inner && self.combined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub grid_points: usize,
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub rows: Vec<NormRow>,
    pub stability: StabilityVerdicts,
}

impl NormReport {
    pub fn row(&self, name: &str) -> Option<&NormRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Every bounded row passes and every loop is stable.
    pub fn all_pass(&self) -> bool {
        self.stability.all() && self.rows.iter().all(|r| r.pass != Some(false))
    }
}

/// Characteristic polynomials of the outer, inner and combined loops.
pub fn characteristic_polynomials(
    comp: &CompensatorParams,
    filt: &FilterParams,
    g: &TransferFunction,
) -> (Polynomial, Polynomial, Polynomial) {
    let outer = &(&(&Polynomial::s() * g.den()) * comp.y()) + &(g.num() * comp.x());
    let inner = filt.m() + filt.n();
    let combined = filt.m() * &outer;
    (outer, inner, combined)
}

pub fn stability_verdicts(comp: &CompensatorParams, filt: &FilterParams, g: &TransferFunction) -> StabilityVerdicts {
    let (outer, inner, combined) = characteristic_polynomials(comp, filt, g);
    let ok = |p: &Polynomial| p.degree() >= 1 && is_hurwitz(p).unwrap_or(false);
    StabilityVerdicts {
        outer: ok(&outer),
        inner: ok(&inner),
        combined: ok(&combined),
    }
}

/// Grid peaks of every constraint function plus closed-loop stability.
pub fn verify_norms(
    comp: &CompensatorParams,
    filt: &FilterParams,
    plants: &PlantSet,
    weights: &WeightSet,
    grid: &FrequencyGrid,
    bounds: Option<NormBounds>,
) -> Result<NormReport> {
    let points = FreqPoint::on_grid(plants, weights, grid)?;
    let vals: Vec<[Complex64; 4]> = points
        .iter()
        .map(|f| [comp.x().eval(f.s), comp.y().eval(f.s), filt.n().eval(f.s), filt.m().eval(f.s)])
        .collect();
    let rows = Constraint::ALL
        .par_iter()
        .map(|&c| {
            let (mut peak, mut at) = (f64::NEG_INFINITY, grid.lo());
            for (f, v) in points.iter().zip(&vals) {
                let mag = c.magnitude(f, v[0], v[1], v[2], v[3]);
                if !(mag <= peak) {
                    peak = mag;
                    at = f.omega;
                }
            }
            let bound = match (c.group(), bounds) {
                (ConstraintGroup::Stage1, Some(b)) => Some(b.stage1),
                (ConstraintGroup::Stage2, Some(b)) => Some(b.stage2),
                _ => None,
            };
            NormRow {
                name: c.name().to_string(),
                group: c.group(),
                peak,
                omega_at_peak: at,
                bound,
                pass: bound.map(|b| peak <= b),
            }
        })
        .collect();
    Ok(NormReport {
        grid_points: grid.len(),
        omega_lo: grid.lo(),
        omega_hi: grid.hi(),
        rows,
        stability: stability_verdicts(comp, filt, &plants.g),
    })
}
