//! Converter parameters, analytic small-signal models and the published fixtures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Polynomial, TransferFunction};

/// Circuit parameters of the two-phase interleaved boost converter, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    #[serde(rename = "Co")]
    pub co: f64,
    pub r_l: f64,
    pub r_s: f64,
    pub r_c: f64,
    #[serde(rename = "R_o")]
    pub r_o: f64,
    pub v_in: f64,
    pub v_o: f64,
    pub f_sw: f64,
}

impl ConverterParams {
    /// Measured ("new") values of the 200 W prototype.
    pub fn table1() -> Self {
        Self {
            l1: 5.069e-3,
            l2: 5.085e-3,
            co: 0.996e-3,
            r_l: 0.585,
            r_s: 0.036,
            r_c: 0.01,
            r_o: 50.0,
            v_in: 46.0,
            v_o: 100.0,
            f_sw: 10e3,
        }
    }

    /// Nominal ("previous") values of the prototype.
    pub fn table1_nominal() -> Self {
        Self {
            l1: 5e-3,
            l2: 5e-3,
            co: 1e-3,
            r_l: 0.5,
            r_s: 0.036,
            r_c: 0.05,
            ..Self::table1()
        }
    }

    /// Per-phase inductance used by the symmetric small-signal models.
    pub fn l(&self) -> f64 {
        0.5 * (self.l1 + self.l2)
    }

    /// Reactive elements, loads and voltages must be positive; parasitic
    /// resistances may be zero (lossless limit).
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("L1", self.l1),
            ("L2", self.l2),
            ("Co", self.co),
            ("R_o", self.r_o),
            ("v_in", self.v_in),
            ("v_o", self.v_o),
            ("f_sw", self.f_sw),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("r_l", self.r_l), ("r_s", self.r_s), ("r_c", self.r_c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// DC operating point of the averaged converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(rename = "U")]
    pub u: f64,
    /// Per-phase inductor current.
    #[serde(rename = "I_L")]
    pub i_l: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
}

/// Equilibrium for the parameters' own `v_in`, `v_o` and `R_o` with no external load current.
pub fn dc_operating_point(p: &ConverterParams) -> Result<OperatingPoint> {
    equilibrium(p, p.v_in, p.r_o, p.v_o, 0.0)
}

/// Duty, per-phase current and capacitor voltage that hold `v_o` with load
/// `r_o` and extra load current `i_ext`.
///
/// With `D = 1 - U` and load current `i = v_o/r_o + i_ext`, the inductor
/// balance `v_in - I (r_l + U r_s) - D v_o = 0` with `I = i / (2 D)` becomes
/// `-v_o D^2 + (v_in + i r_s / 2) D - i (r_l + r_s) / 2 = 0`. Newton starts at
/// the ideal ratio and converges to the low-duty (efficient) root.
pub fn equilibrium(p: &ConverterParams, v_in: f64, r_o: f64, v_o: f64, i_ext: f64) -> Result<OperatingPoint> {
    p.validate()?;
    if v_o <= v_in {
        return Err(Error::NoEquilibrium(format!("v_o = {v_o} V does not exceed v_in = {v_in} V")));
    }
    let i_load = v_o / r_o + i_ext;
    let a = -v_o;
    let b = v_in + 0.5 * i_load * p.r_s;
    let c = -0.5 * i_load * (p.r_l + p.r_s);
    let f = |d: f64| (a * d + b) * d + c;
    let df = |d: f64| 2.0 * a * d + b;

    let mut d = v_in / v_o;
    let mut converged = false;
    for _ in 0..100 {
        let step = f(d) / df(d);
        d -= step;
        if !d.is_finite() {
            break;
        }
        if f(d).abs() <= 1e-10 * v_o.max(1.0) && step.abs() <= 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged && !(d.is_finite() && f(d).abs() <= 1e-10 * v_o.max(1.0)) {
        return Err(Error::NoEquilibrium(format!(
            "Newton iteration did not converge (v_in = {v_in}, v_o = {v_o}, R_o = {r_o})"
        )));
    }
    // the efficient branch is the larger root in D, where the concave quadratic falls
    if df(d) > 0.0 {
        return Err(Error::NoEquilibrium("Newton converged to the high-duty branch".into()));
    }
    let u = 1.0 - d;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::NoEquilibrium(format!("duty {u} outside (0, 1)")));
    }
    Ok(OperatingPoint {
        u,
        i_l: i_load / (2.0 * d),
        v_c: v_o,
    })
}

/// Which reading of the ESR term in the disturbance-model denominators to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsrTerm {
    /// `R_o^2 + 2 r_c + r_c^2`, as printed for the voltage and current models.
    #[default]
    AsPrinted,
    /// `R_o^2 + 2 R_o r_c + r_c^2`, matching the control-to-output model.
    Harmonized,
}

/// Analytic small-signal models at an operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MathModels {
    /// duty to output voltage
    pub g_m: TransferFunction,
    /// input voltage to output voltage
    pub g_vm: TransferFunction,
    /// load current to output voltage
    pub g_im: TransferFunction,
    pub r_tot: f64,
    pub r_oc: f64,
}

/// Literal evaluation of the low-frequency converter transfer functions.
pub fn math_models(p: &ConverterParams, op: &OperatingPoint, esr: EsrTerm) -> Result<MathModels> {
    p.validate()?;
    let (co, rc, rs, rl, ro, l) = (p.co, p.r_c, p.r_s, p.r_l, p.r_o, p.l());
    let u = op.u;
    let vo = p.v_o;
    let r_tot = ro + rc;
    let r_oc = ro / r_tot;

    let t_c = Polynomial::new(vec![
        0.0,
        co * ro * (ro * (rc + rl) + 2.0 * rc * rl + rc * rc) + co * rc * rc * (u * rs + rl) + r_tot * l,
    ]);
    let t_s = ro * ro * u * (2.0 * u - 4.0) + u * ro * (rs - rc) + u * rs * rc + ro * (2.0 * ro + rc) + r_tot * rc;
    let t = &t_c + &Polynomial::constant(t_s);
    let esr_poly = Polynomial::new(vec![1.0, co * rc]);

    let g_m_num = (&esr_poly
        * &Polynomial::new(vec![
            ro * ro * (4.0 * u - 2.0 * u * u - 2.0) + ro * (rc + rs) + rc * (rl + rs),
            l * r_tot,
        ]))
        .scale(-vo);
    let g_m_den = &Polynomial::new(vec![
        0.0,
        co * u * ro * (ro * (rs - rc) - rc * rc + 2.0 * rs * rc),
        co * l * (ro * ro + 2.0 * ro * rc + rc * rc),
    ])
    .scale(u - 1.0)
        + &t;

    let esr_mid = match esr {
        EsrTerm::AsPrinted => 2.0 * rc,
        EsrTerm::Harmonized => 2.0 * ro * rc,
    };
    let dist_den = &Polynomial::new(vec![
        0.0,
        co * u * ro * (ro * (rs - rc) + rc * (2.0 * rs - rc)),
        co * l * (ro * ro + esr_mid + rc * rc),
    ]) + &t;

    let g_vm_num = esr_poly.scale(-2.0 * ro * r_tot * (u - 1.0));
    let g_im_num = Polynomial::new(vec![1.0, co * ro + co * rc]).scale(r_tot);

    Ok(MathModels {
        g_m: TransferFunction::new(g_m_num, g_m_den)?,
        g_vm: TransferFunction::new(g_vm_num, dist_den.clone())?,
        g_im: TransferFunction::new(g_im_num, dist_den)?,
        r_tot,
        r_oc,
    })
}

fn tf(num: &[f64], den: &[f64]) -> TransferFunction {
    TransferFunction::new(num.to_vec(), den.to_vec()).expect("fixture denominators are nonzero")
}

/// Plant, disturbance and sensor-noise models used for synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSet {
    #[serde(rename = "G")]
    pub g: TransferFunction,
    #[serde(rename = "G_i")]
    pub g_i: TransferFunction,
    #[serde(rename = "G_v")]
    pub g_v: TransferFunction,
    #[serde(rename = "W_n")]
    pub w_n: TransferFunction,
}

/// Identified models of the prototype, coefficients verbatim.
pub fn identified_plant_set() -> PlantSet {
    PlantSet {
        g: tf(&[1.811e7, -74.79], &[9.129e4, 284.0, 1.0]),
        g_i: tf(&[-200.0, -1.0], &[104.6, 0.22, 0.001]),
        g_v: tf(&[1.724e5, 8.58], &[9.126e4, 277.8, 1.0]),
        w_n: tf(&[1.177e5, -5730.0, 1.0], &[9.379e7, 9600.0, 1.0]),
    }
}

/// Weighting functions of the synthesis problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    #[serde(rename = "W1")]
    pub w1: TransferFunction,
    #[serde(rename = "W2")]
    pub w2: TransferFunction,
    #[serde(rename = "W3")]
    pub w3: TransferFunction,
    #[serde(rename = "Wv")]
    pub wv: TransferFunction,
    #[serde(rename = "Wi")]
    pub wi: TransferFunction,
    #[serde(rename = "WQ")]
    pub wq: TransferFunction,
    #[serde(rename = "W1C")]
    pub w1c: TransferFunction,
    #[serde(rename = "W3C")]
    pub w3c: TransferFunction,
}

impl WeightSet {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &TransferFunction)> {
        [
            ("W1", &self.w1),
            ("W2", &self.w2),
            ("W3", &self.w3),
            ("Wv", &self.wv),
            ("Wi", &self.wi),
            ("WQ", &self.wq),
            ("W1C", &self.w1c),
            ("W3C", &self.w3c),
        ]
        .into_iter()
    }
}

/// Published weights, coefficients verbatim.
pub fn paper_weights() -> WeightSet {
    WeightSet {
        w1: tf(&[395.0, 1.0], &[3.95e-7, 1.4]),
        w2: tf(&[1850.0, 1.0], &[18500.0, 0.04]),
        w3: tf(&[400.0, 1.0], &[2000.0, 15.0]),
        wv: tf(&[3200.0, 8e-8], &[2094.0, 1.0]),
        wi: tf(&[400.0, 1e-8], &[2094.0, 1.0]),
        wq: tf(&[140.0, 1.0], &[1.4, 1.4]),
        w1c: tf(&[3700.0, 1.0], &[2.71e-5, 1.3]),
        w3c: tf(&[3700.0, 1.0], &[18500.0, 0.04]),
    }
}

/// Published compensators and Q-filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperControllers {
    /// synthesized compensator of the 1-DOF loop
    #[serde(rename = "K_x")]
    pub k_x: TransferFunction,
    /// K-factor baseline
    #[serde(rename = "K_k")]
    pub k_k: TransferFunction,
    /// compensator synthesized jointly with the filter
    #[serde(rename = "K_2x")]
    pub k_2x: TransferFunction,
    #[serde(rename = "Q")]
    pub q: TransferFunction,
}

pub fn paper_controllers() -> PaperControllers {
    PaperControllers {
        k_x: tf(&[3.439e7, 3.558e5, 918.9], &[0.0, 4.687e7, 1.37e4, 1.0]),
        k_k: tf(&[1.275e13, 5.282e10, 5.472e7], &[0.0, 7.564e13, 3.822e8, 482.7]),
        k_2x: tf(&[1.47e8, 4.1e5, 1692.0], &[0.0, 1e8, 1.4e4, 1.0]),
        q: tf(&[98.77], &[99.6, 1.0]),
    }
}
