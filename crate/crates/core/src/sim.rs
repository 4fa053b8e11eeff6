//! Time-domain simulation of the 1-DOF and disturbance-observer loops.
//!
//! The plant is either the identified LTI model set (deviation variables
//! around the initial operating point) or the state-space averaged two-phase
//! boost converter. Integration is fixed-step RK4; events land exactly on
//! step boundaries.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loops::{CompensatorParams, FilterParams};
use crate::lti::{roots, Polynomial, TransferFunction};
use crate::plant::{equilibrium, ConverterParams, PlantSet};

pub const U_MIN: f64 = 0.01;
pub const U_MAX: f64 = 0.99;
/// Largest `dt * |pole|` accepted for the integration step.
pub const MAX_STEP_POLE_PRODUCT: f64 = 0.1;
/// Settling band as a fraction of the peak deviation in the window.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Lti,
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Setpoint,
    LoadResistance,
    InputVoltage,
    ExternalLoadCurrent,
    InductanceScale,
}

impl EventKind {
    fn changes_parameters(self) -> bool {
        matches!(self, EventKind::LoadResistance | EventKind::InductanceScale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub value: f64,
}

/// Conditions the loop starts in, at equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions {
    pub v_ref: f64,
    pub v_in: f64,
    #[serde(rename = "R_o")]
    pub r_o: f64,
    #[serde(default)]
    pub i_ext: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub duration: f64,
    pub mode: SimMode,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub noise_enabled: bool,
    /// Defaults to the converter parameters' own `v_o`, `v_in` and `R_o`.
    #[serde(default)]
    pub initial: Option<InitialConditions>,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        let mut last = 0.0;
        for e in &self.events {
            if !(e.t.is_finite() && e.t >= 0.0 && e.t <= self.duration) {
                return Err(Error::Config(format!("event time {} outside [0, {}]", e.t, self.duration)));
            }
            if e.t < last {
                return Err(Error::Config("events must be sorted by time".into()));
            }
            last = e.t;
            if !e.value.is_finite() {
                return Err(Error::Config(format!("event value {} is not finite", e.value)));
            }
            let positive = !matches!(e.kind, EventKind::ExternalLoadCurrent);
            if positive && e.value <= 0.0 {
                return Err(Error::Config(format!("{:?} event needs a positive value, got {}", e.kind, e.value)));
            }
            if self.mode == SimMode::Lti && e.kind.changes_parameters() {
                return Err(Error::Config(format!("{:?} events need averaged mode", e.kind)));
            }
        }
        Ok(())
    }

    fn initial_or(&self, p: &ConverterParams) -> InitialConditions {
        self.initial.unwrap_or(InitialConditions {
            v_ref: p.v_o,
            v_in: p.v_in,
            r_o: p.r_o,
            i_ext: 0.0,
        })
    }
}

/// High-power starting point of the published scenarios: 50 V in, 20 Ω (5 A at 100 V).
fn high_power() -> Option<InitialConditions> {
    Some(InitialConditions {
        v_ref: 100.0,
        v_in: 50.0,
        r_o: 20.0,
        i_ext: 0.0,
    })
}

/// Set-point 100 → 90 V at 0.3 s and back at 0.7 s.
pub fn scenario_a(mode: SimMode) -> SimScenario {
    SimScenario {
        duration: 1.0,
        mode,
        events: vec![
            Event { t: 0.3, kind: EventKind::Setpoint, value: 90.0 },
            Event { t: 0.7, kind: EventKind::Setpoint, value: 100.0 },
        ],
        noise_enabled: false,
        initial: high_power(),
    }
}

/// Load resistance 20 → 80 Ω at 2 s.
pub fn scenario_b() -> SimScenario {
    SimScenario {
        duration: 2.3,
        mode: SimMode::Averaged,
        events: vec![Event { t: 2.0, kind: EventKind::LoadResistance, value: 80.0 }],
        noise_enabled: false,
        initial: high_power(),
    }
}

/// Input voltage 50 → 40 V at 0.1 s and back at 0.4 s.
pub fn scenario_input_voltage() -> SimScenario {
    SimScenario {
        duration: 0.7,
        mode: SimMode::Averaged,
        events: vec![
            Event { t: 0.1, kind: EventKind::InputVoltage, value: 40.0 },
            Event { t: 0.4, kind: EventKind::InputVoltage, value: 50.0 },
        ],
        noise_enabled: false,
        initial: high_power(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Base step; event times, `output_dt` and `duration` must be multiples of it.
    pub dt: f64,
    pub output_dt: f64,
    /// RK4 steps per `dt`. `None` picks the fewest that satisfy the pole-step rule.
    pub substeps: Option<usize>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-6,
            output_dt: 1e-4,
            substeps: None,
            seed: 0,
        }
    }
}

/// Inputs of the averaged converter model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterInputs {
    pub u: f64,
    pub v_in: f64,
    pub r_o: f64,
    pub i_ext: f64,
}

/// Output voltage including the capacitor ESR drop, solved from the capacitor equation.
pub fn averaged_output_voltage(x: &[f64; 3], inp: &ConverterInputs, p: &ConverterParams) -> f64 {
    let i_sum = x[0] + x[1];
    (x[2] + p.r_c * ((1.0 - inp.u) * i_sum - inp.i_ext)) / (1.0 + p.r_c / inp.r_o)
}

/// Derivative of `(i_L1, i_L2, v_c)` for the averaged two-phase boost.
pub fn averaged_converter_derivative(x: &[f64; 3], inp: &ConverterInputs, p: &ConverterParams) -> [f64; 3] {
    let v_o = averaged_output_voltage(x, inp, p);
    let d = 1.0 - inp.u;
    let phase = |i: f64, l: f64| (inp.v_in - i * (p.r_l + inp.u * p.r_s) - d * v_o) / l;
    [
        phase(x[0], p.l1),
        phase(x[1], p.l2),
        (d * (x[0] + x[1]) - v_o / inp.r_o - inp.i_ext) / p.co,
    ]
}

/// Small-signal models of the averaged converter around the equilibrium that
/// holds `init`, by central differences: duty, input voltage and external load
/// current to output voltage. `W_n` is taken from `noise_model`.
pub fn averaged_small_signal_plants(
    p: &ConverterParams,
    init: &InitialConditions,
    noise_model: &TransferFunction,
) -> Result<PlantSet> {
    let op = equilibrium(p, init.v_in, init.r_o, init.v_ref, init.i_ext)?;
    let x0 = [op.i_l, op.i_l, op.v_c];
    let base = ConverterInputs {
        u: op.u,
        v_in: init.v_in,
        r_o: init.r_o,
        i_ext: init.i_ext,
    };
    let h = 1e-6;
    let a = DMatrix::from_fn(3, 3, |i, j| {
        let (mut xp, mut xm) = (x0, x0);
        xp[j] += h;
        xm[j] -= h;
        (averaged_converter_derivative(&xp, &base, p)[i] - averaged_converter_derivative(&xm, &base, p)[i]) / (2.0 * h)
    });
    let c = DMatrix::from_fn(1, 3, |_, j| {
        let (mut xp, mut xm) = (x0, x0);
        xp[j] += h;
        xm[j] -= h;
        (averaged_output_voltage(&xp, &base, p) - averaged_output_voltage(&xm, &base, p)) / (2.0 * h)
    });
    let char_a = char_poly(&a);
    let channel = |perturb: &dyn Fn(f64) -> ConverterInputs| -> Result<TransferFunction> {
        let (ip, im) = (perturb(h), perturb(-h));
        let b = DMatrix::from_fn(3, 1, |i, _| {
            (averaged_converter_derivative(&x0, &ip, p)[i] - averaged_converter_derivative(&x0, &im, p)[i]) / (2.0 * h)
        });
        let d = (averaged_output_voltage(&x0, &ip, p) - averaged_output_voltage(&x0, &im, p)) / (2.0 * h);
        // det(sI - A + B C) = det(sI - A) (1 + C (sI - A)^-1 B)
        let closed = char_poly(&(&a - &b * &c));
        let num = &(&closed - &char_a) + &char_a.scale(d);
        TransferFunction::new(num, char_a.clone())
    };
    Ok(PlantSet {
        g: channel(&|e| ConverterInputs { u: base.u + e, ..base })?,
        g_v: channel(&|e| ConverterInputs { v_in: base.v_in + e, ..base })?,
        g_i: channel(&|e| ConverterInputs { i_ext: base.i_ext + e, ..base })?,
        w_n: noise_model.clone(),
    })
}

/// Characteristic polynomial `det(sI - A)` by Faddeev-LeVerrier, ascending coefficients.
fn char_poly(a: &DMatrix<f64>) -> Polynomial {
    let n = a.nrows();
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + DMatrix::identity(n, n) * c[n - k + 1];
        c[n - k] = -(a * &m).trace() / k as f64;
    }
    Polynomial::new(c)
}

/// Realized SISO block with flat storage for the integration loop.
#[derive(Debug, Clone)]
struct Block {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    fastest: f64,
}

impl Block {
    fn new(tf: &TransferFunction) -> Result<Self> {
        let ss = tf.realize()?.balanced();
        let n = ss.order();
        let fastest = if n == 0 {
            0.0
        } else {
            roots(tf.den())?.iter().map(|r| r.norm()).fold(0.0, f64::max)
        };
        Ok(Self {
            n,
            a: (0..n * n).map(|k| ss.a[(k / n, k % n)]).collect(),
            b: ss.b.iter().copied().collect(),
            c: ss.c.iter().copied().collect(),
            d: ss.d,
            fastest,
        })
    }

    fn out(&self, x: &[f64], u: f64) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.d * u
    }

    /// State part of the output.
    fn free(&self, x: &[f64]) -> f64 {
        self.out(x, 0.0)
    }

    fn deriv(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            dx[i] = row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b[i] * u;
        }
    }
}

#[derive(Debug, Clone)]
enum Plant {
    Lti { g: Block, g_v: Block, g_i: Block },
    Averaged,
}

/// Closed loop ready to integrate: plant, `K' = X/Y` followed by the
/// integrator, optional observer branches and the sensor-noise shaping filter.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    mode: SimMode,
    params: ConverterParams,
    plant: Plant,
    k_prime: Block,
    /// `Q G_n_mp^-1` acting on the measurement and `Q` acting on the duty.
    dob: Option<(Block, Block)>,
    noise: Block,
}

/// Assembles the loop. Without `filt` the observer branch is absent and the
/// loop is the plain feedback loop.
pub fn build_closed_loop(
    mode: SimMode,
    comp: &CompensatorParams,
    filt: Option<&FilterParams>,
    plants: &PlantSet,
    params: &ConverterParams,
) -> Result<ClosedLoop> {
    params.validate()?;
    let k_prime = comp.k_prime();
    if !k_prime.is_proper() {
        return Err(Error::ImproperComposite(format!(
            "X/Y has numerator degree {} above denominator degree {}",
            k_prime.num().degree(),
            k_prime.den().degree()
        )));
    }
    let dob = match filt {
        None => None,
        Some(f) => {
            let q = f.q();
            let g_mp = plants.g.minimum_phase_reflect()?;
            let on_y = q.series(&g_mp.inverse()?);
            if !on_y.is_proper() || !q.is_proper() {
                return Err(Error::ImproperComposite(format!(
                    "Q G_n^-1 has relative degree {}",
                    on_y.relative_degree()
                )));
            }
            Some((Block::new(&on_y)?, Block::new(&q)?))
        }
    };
    let plant = match mode {
        SimMode::Lti => Plant::Lti {
            g: Block::new(&plants.g)?,
            g_v: Block::new(&plants.g_v)?,
            g_i: Block::new(&plants.g_i)?,
        },
        SimMode::Averaged => Plant::Averaged,
    };
    Ok(ClosedLoop {
        mode,
        params: *params,
        plant,
        k_prime: Block::new(&k_prime)?,
        dob,
        noise: Block::new(&plants.w_n)?,
    })
}

/// Time series recorded at the output rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub v_o: Vec<f64>,
    pub u: Vec<f64>,
    /// Phase currents; only the averaged model has them.
    pub i_l1: Option<Vec<f64>>,
    pub i_l2: Option<Vec<f64>>,
    pub d_hat: Vec<f64>,
    /// Compensator integrator state, for anti-windup checks.
    pub integrator: Vec<f64>,
}

impl SimResult {
    /// CSV with columns `t,v_o,u,i_L1,i_L2,d_hat`; currents are empty in LTI mode.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Config(format!("writing CSV: {e}"));
        wr.write_record(["t", "v_o", "u", "i_L1", "i_L2", "d_hat"]).map_err(io)?;
        let cur = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
        for k in 0..self.t.len() {
            wr.write_record([
                self.t[k].to_string(),
                self.v_o[k].to_string(),
                self.u[k].to_string(),
                cur(&self.i_l1, k),
                cur(&self.i_l2, k),
                self.d_hat[k].to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| Error::Config(format!("writing CSV: {e}")))
    }
}

/// Exogenous signals and parameters held constant over one step.
#[derive(Debug, Clone, Copy)]
struct Env {
    r: f64,
    v_in: f64,
    r_o: f64,
    i_ext: f64,
    l_scale: f64,
    w: f64,
}

/// Algebraic signals at one instant.
#[derive(Debug, Clone, Copy)]
struct Signals {
    u: f64,
    v_o: f64,
    y_m: f64,
    d_hat: f64,
    e: f64,
    k_out: f64,
    u_cmd: f64,
}

struct Layout {
    plant: usize,
    k: usize,
    int: usize,
    dob_y: usize,
    dob_u: usize,
    noise: usize,
    len: usize,
}

struct Runner<'a> {
    cl: &'a ClosedLoop,
    lay: Layout,
    params: ConverterParams,
    y0: f64,
    u0: f64,
    v_in0: f64,
    noise: bool,
}

impl Runner<'_> {
    fn x_plant<'x>(&self, x: &'x [f64]) -> &'x [f64] {
        &x[self.lay.plant..self.lay.k]
    }

    /// `v_o = alpha + beta u`, which holds for both plant models.
    fn plant_affine(&self, x: &[f64], env: &Env) -> (f64, f64) {
        let xp = self.x_plant(x);
        match &self.cl.plant {
            Plant::Lti { g, g_v, g_i } => {
                let (n1, n2) = (g.n, g.n + g_v.n);
                let alpha = self.y0 + g.free(&xp[..n1]) - g.d * self.u0
                    + g_v.out(&xp[n1..n2], env.v_in - self.v_in0)
                    + g_i.out(&xp[n2..], env.i_ext);
                (alpha, g.d)
            }
            Plant::Averaged => {
                let p = &self.params;
                let k = 1.0 / (1.0 + p.r_c / env.r_o);
                let i_sum = xp[0] + xp[1];
                (k * (xp[2] + p.r_c * (i_sum - env.i_ext)), -k * p.r_c * i_sum)
            }
        }
    }

    fn signals(&self, x: &[f64], env: &Env) -> Signals {
        let lay = &self.lay;
        let (alpha, beta) = self.plant_affine(x, env);
        let n = if self.noise {
            self.cl.noise.out(&x[lay.noise..lay.len], env.w)
        } else {
            0.0
        };
        let y_m = |u: f64| alpha + beta * u + n;
        let d_hat = |u: f64| match &self.cl.dob {
            Some((by, bu)) => {
                by.out(&x[lay.dob_y..lay.dob_u], y_m(u) - self.y0) - bu.out(&x[lay.dob_u..lay.noise], u - self.u0)
            }
            None => 0.0,
        };
        // the command is affine in the applied duty: v(u) = p + q u
        let cmd = |u: f64| x[lay.int] - d_hat(u);
        let p = cmd(0.0);
        let q = cmd(1.0) - p;
        let u = (p / (1.0 - q)).clamp(U_MIN, U_MAX);
        let y = y_m(u);
        let e = env.r - y;
        Signals {
            u,
            v_o: y - n,
            y_m: y,
            d_hat: d_hat(u),
            e,
            k_out: self.cl.k_prime.out(&x[lay.k..lay.int], e),
            u_cmd: p + q * u,
        }
    }

    fn deriv(&self, x: &[f64], env: &Env, dx: &mut [f64]) {
        let lay = &self.lay;
        let s = self.signals(x, env);
        match &self.cl.plant {
            Plant::Lti { g, g_v, g_i } => {
                let (a, b) = (lay.plant + g.n, lay.plant + g.n + g_v.n);
                g.deriv(&x[lay.plant..a], s.u - self.u0, &mut dx[lay.plant..a]);
                g_v.deriv(&x[a..b], env.v_in - self.v_in0, &mut dx[a..b]);
                g_i.deriv(&x[b..lay.k], env.i_ext, &mut dx[b..lay.k]);
            }
            Plant::Averaged => {
                let mut p = self.params;
                p.l1 *= env.l_scale;
                p.l2 *= env.l_scale;
                let xp = [x[lay.plant], x[lay.plant + 1], x[lay.plant + 2]];
                let inp = ConverterInputs {
                    u: s.u,
                    v_in: env.v_in,
                    r_o: env.r_o,
                    i_ext: env.i_ext,
                };
                dx[lay.plant..lay.k].copy_from_slice(&averaged_converter_derivative(&xp, &inp, &p));
            }
        }
        self.cl.k_prime.deriv(&x[lay.k..lay.int], s.e, &mut dx[lay.k..lay.int]);
        // conditional integration: hold the integrator while it would push further into saturation
        let winding = (s.u_cmd > U_MAX && s.k_out > 0.0) || (s.u_cmd < U_MIN && s.k_out < 0.0);
        dx[lay.int] = if winding { 0.0 } else { s.k_out };
        if let Some((by, bu)) = &self.cl.dob {
            by.deriv(&x[lay.dob_y..lay.dob_u], s.y_m - self.y0, &mut dx[lay.dob_y..lay.dob_u]);
            bu.deriv(&x[lay.dob_u..lay.noise], s.u - self.u0, &mut dx[lay.dob_u..lay.noise]);
        }
        if self.noise {
            self.cl.noise.deriv(&x[lay.noise..lay.len], env.w, &mut dx[lay.noise..lay.len]);
        } else {
            dx[lay.noise..lay.len].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Largest pole modulus among the realized blocks and the plant linearization.
    fn fastest(&self, x: &[f64], env: &Env) -> f64 {
        let cl = self.cl;
        let mut f = cl.k_prime.fastest;
        if let Some((by, bu)) = &cl.dob {
            f = f.max(by.fastest).max(bu.fastest);
        }
        if self.noise {
            f = f.max(cl.noise.fastest);
        }
        match &cl.plant {
            Plant::Lti { g, g_v, g_i } => f.max(g.fastest).max(g_v.fastest).max(g_i.fastest),
            Plant::Averaged => {
                let xp = [x[0], x[1], x[2]];
                let u = self.signals(x, env).u;
                let inp = ConverterInputs {
                    u,
                    v_in: env.v_in,
                    r_o: env.r_o,
                    i_ext: env.i_ext,
                };
                let f0 = averaged_converter_derivative(&xp, &inp, &self.params);
                let jac = DMatrix::from_fn(3, 3, |i, j| {
                    let mut xh = xp;
                    let h = 1e-6 * xp[j].abs().max(1.0);
                    xh[j] += h;
                    (averaged_converter_derivative(&xh, &inp, &self.params)[i] - f0[i]) / h
                });
                let plant = jac.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
                f.max(plant)
            }
        }
    }
}

fn steps_of(t: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (t / dt).round();
    if (t - k * dt).abs() > 1e-9 * dt.max(t) {
        return Err(Error::Config(format!("{what} = {t} s is not a multiple of dt = {dt} s")));
    }
    Ok(k as usize)
}

/// Integrates the closed loop through the scenario, starting from equilibrium.
pub fn run(cl: &ClosedLoop, scenario: &SimScenario, config: &SimConfig) -> Result<SimResult> {
    scenario.validate()?;
    if scenario.mode != cl.mode {
        return Err(Error::Config(format!(
            "scenario mode {:?} does not match the loop's {:?}",
            scenario.mode, cl.mode
        )));
    }
    if !(config.dt.is_finite() && config.dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {}", config.dt)));
    }
    let dt = config.dt;
    let total = steps_of(scenario.duration, dt, "duration")?;
    let decim = steps_of(config.output_dt, dt, "output_dt")?.max(1);
    let event_steps = scenario
        .events
        .iter()
        .map(|e| steps_of(e.t, dt, "event time"))
        .collect::<Result<Vec<_>>>()?;

    let init = scenario.initial_or(&cl.params);
    let op = equilibrium(&cl.params, init.v_in, init.r_o, init.v_ref, init.i_ext)?;
    let plant_n = match &cl.plant {
        Plant::Lti { g, g_v, g_i } => g.n + g_v.n + g_i.n,
        Plant::Averaged => 3,
    };
    let mut lay = Layout {
        plant: 0,
        k: plant_n,
        int: plant_n + cl.k_prime.n,
        dob_y: 0,
        dob_u: 0,
        noise: 0,
        len: 0,
    };
    lay.dob_y = lay.int + 1;
    lay.dob_u = lay.dob_y + cl.dob.as_ref().map_or(0, |d| d.0.n);
    lay.noise = lay.dob_u + cl.dob.as_ref().map_or(0, |d| d.1.n);
    lay.len = lay.noise + cl.noise.n;

    let runner = Runner {
        cl,
        lay,
        params: cl.params,
        y0: init.v_ref,
        u0: op.u,
        v_in0: init.v_in,
        noise: scenario.noise_enabled,
    };
    let lay = &runner.lay;
    let mut x = vec![0.0; lay.len];
    if cl.mode == SimMode::Averaged {
        x[0] = op.i_l;
        x[1] = op.i_l;
        x[2] = op.v_c;
    }
    // u_f = U at rest with zero error; the observer branches start from zero
    x[lay.int] = op.u;
    let mut env = Env {
        r: init.v_ref,
        v_in: init.v_in,
        r_o: init.r_o,
        i_ext: init.i_ext,
        l_scale: 1.0,
        w: 0.0,
    };

    let fastest = runner.fastest(&x, &env);
    let sub = match config.substeps {
        Some(n) if n >= 1 => n,
        Some(_) => return Err(Error::Config("substeps must be at least 1".into())),
        None => ((dt * fastest / MAX_STEP_POLE_PRODUCT).ceil() as usize).max(1),
    };
    let h = dt / sub as f64;
    if h * fastest > MAX_STEP_POLE_PRODUCT * (1.0 + 1e-9) {
        return Err(Error::Config(format!(
            "step {h} s does not resolve the fastest pole ({fastest:.4e} rad/s)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_out = total / decim + 1;
    let averaged = cl.mode == SimMode::Averaged;
    let mut res = SimResult {
        t: Vec::with_capacity(n_out),
        v_o: Vec::with_capacity(n_out),
        u: Vec::with_capacity(n_out),
        i_l1: averaged.then(|| Vec::with_capacity(n_out)),
        i_l2: averaged.then(|| Vec::with_capacity(n_out)),
        d_hat: Vec::with_capacity(n_out),
        integrator: Vec::with_capacity(n_out),
    };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; lay.len],
        vec![0.0; lay.len],
        vec![0.0; lay.len],
        vec![0.0; lay.len],
        vec![0.0; lay.len],
    );
    let mut next_event = 0;
    for step in 0..=total {
        while next_event < event_steps.len() && event_steps[next_event] == step {
            let e = &scenario.events[next_event];
            match e.kind {
                EventKind::Setpoint => env.r = e.value,
                EventKind::LoadResistance => env.r_o = e.value,
                EventKind::InputVoltage => env.v_in = e.value,
                EventKind::ExternalLoadCurrent => env.i_ext = e.value,
                EventKind::InductanceScale => env.l_scale = e.value,
            }
            next_event += 1;
        }
        if step % decim == 0 {
            let s = runner.signals(&x, &env);
            res.t.push(step as f64 * dt);
            res.v_o.push(s.v_o);
            res.u.push(s.u);
            res.d_hat.push(s.d_hat);
            res.integrator.push(x[lay.int]);
            if let (Some(a), Some(b)) = (res.i_l1.as_mut(), res.i_l2.as_mut()) {
                a.push(x[0]);
                b.push(x[1]);
            }
        }
        if step == total {
            break;
        }
        for _ in 0..sub {
            if runner.noise {
                env.w = StandardNormal.sample(&mut rng);
            }
            runner.deriv(&x, &env, &mut k1);
            axpy(&x, 0.5 * h, &k1, &mut tmp);
            runner.deriv(&tmp, &env, &mut k2);
            axpy(&x, 0.5 * h, &k2, &mut tmp);
            runner.deriv(&tmp, &env, &mut k3);
            axpy(&x, h, &k3, &mut tmp);
            runner.deriv(&tmp, &env, &mut k4);
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState {
                t: (step + 1) as f64 * dt,
            });
        }
    }
    Ok(res)
}

fn axpy(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * k[i];
    }
}

/// Builds the loop and runs the scenario in one call.
pub fn simulate(
    scenario: &SimScenario,
    comp: &CompensatorParams,
    filt: Option<&FilterParams>,
    plants: &PlantSet,
    params: &ConverterParams,
    config: &SimConfig,
) -> Result<SimResult> {
    let cl = build_closed_loop(scenario.mode, comp, filt, plants, params)?;
    run(&cl, scenario, config)
}

/// Time span following one event, up to the next event or the end of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub kind: EventKind,
    pub t_start: f64,
    pub t_end: f64,
}

/// One window per event time; simultaneous events share a window named after the first.
pub fn event_windows(scenario: &SimScenario) -> Vec<EventWindow> {
    let mut out: Vec<EventWindow> = Vec::new();
    for e in &scenario.events {
        if out.last().is_some_and(|w| w.t_start == e.t) {
            continue;
        }
        if let Some(w) = out.last_mut() {
            w.t_end = e.t;
        }
        out.push(EventWindow {
            kind: e.kind,
            t_start: e.t,
            t_end: scenario.duration,
        });
    }
    out.retain(|w| w.t_end > w.t_start);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub kind: EventKind,
    pub t: f64,
    /// Percent of the nominal set-point.
    pub overshoot_pct: f64,
    pub settling_time: f64,
    pub unsettled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMetrics {
    pub nominal: f64,
    pub settling_band: f64,
    pub events: Vec<EventMetrics>,
}

/// Overshoot and settling time per window.
///
/// The final value is the mean of the last 5% of the window. Set-point
/// windows report classical overshoot past the final value; disturbance
/// windows report the peak deviation from it. The settling time is the first
/// instant after which `|v_o - v_final|` stays within 2% of the window's peak
/// deviation; a window whose response is still outside that band in its last
/// 5% is flagged unsettled.
pub fn metrics(result: &SimResult, windows: &[EventWindow], nominal: f64) -> Result<PerfMetrics> {
    if !(nominal.is_finite() && nominal > 0.0) {
        return Err(Error::Config(format!("nominal must be positive, got {nominal}")));
    }
    for pair in windows.windows(2) {
        if pair[1].t_start < pair[0].t_end {
            return Err(Error::Config("metric windows overlap".into()));
        }
    }
    let mut events = Vec::with_capacity(windows.len());
    for w in windows {
        let idx: Vec<usize> = (0..result.t.len())
            .filter(|&k| result.t[k] >= w.t_start - 1e-12 && result.t[k] <= w.t_end + 1e-12)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Config(format!("window at {} s holds fewer than two samples", w.t_start)));
        }
        let tail = (idx.len() / 20).max(1);
        let tail_start = idx.len() - tail;
        let v_final = idx[tail_start..].iter().map(|&k| result.v_o[k]).sum::<f64>() / tail as f64;
        let dev = |k: usize| result.v_o[k] - v_final;
        let peak = idx.iter().map(|&k| dev(k).abs()).fold(0.0, f64::max);
        let overshoot = if w.kind == EventKind::Setpoint {
            let dir = -dev(idx[0]).signum();
            idx.iter().map(|&k| dir * dev(k)).fold(0.0, f64::max)
        } else {
            peak
        };
        let band = SETTLING_BAND * peak;
        let last_out = idx.iter().rposition(|&k| dev(k).abs() > band);
        let (settling_time, unsettled) = match last_out {
            None => (0.0, false),
            Some(j) if j + 1 >= tail_start => (w.t_end - w.t_start, true),
            Some(j) => (result.t[idx[j + 1]] - w.t_start, false),
        };
        events.push(EventMetrics {
            kind: w.kind,
            t: w.t_start,
            overshoot_pct: 100.0 * overshoot / nominal,
            settling_time,
            unsettled,
        });
    }
    Ok(PerfMetrics {
        nominal,
        settling_band: SETTLING_BAND,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{identified_plant_set, math_models, paper_controllers, EsrTerm};
    use proptest::prelude::*;

    fn lossless() -> ConverterParams {
        ConverterParams {
            r_l: 0.0,
            r_s: 0.0,
            r_c: 0.0,
            ..ConverterParams::table1()
        }
    }

    fn kx() -> CompensatorParams {
        CompensatorParams::from_transfer_function(&paper_controllers().k_x).unwrap()
    }

    fn q() -> FilterParams {
        FilterParams::from_transfer_function(&paper_controllers().q).unwrap()
    }

    fn step_scenario(mode: SimMode, duration: f64, events: Vec<Event>) -> SimScenario {
        SimScenario {
            duration,
            mode,
            events,
            noise_enabled: false,
            initial: None,
        }
    }

    fn inputs(u: f64, p: &ConverterParams) -> ConverterInputs {
        ConverterInputs {
            u,
            v_in: p.v_in,
            r_o: p.r_o,
            i_ext: 0.0,
        }
    }

    #[test]
    fn lossless_equilibrium_is_stationary() {
        let p = lossless();
        let u = 0.54;
        let v_o = p.v_in / (1.0 - u);
        let i = v_o / p.r_o / (2.0 * (1.0 - u));
        let dx = averaged_converter_derivative(&[i, i, v_o], &inputs(u, &p), &p);
        for v in dx {
            assert!(v.abs() < 1e-9, "{dx:?}");
        }
        // input power equals load power
        let p_in = p.v_in * 2.0 * i;
        let p_out = v_o * v_o / p.r_o;
        assert!((p_in - p_out).abs() <= 1e-6 * p_out);
    }

    #[test]
    fn switch_on_limit() {
        let p = ConverterParams::table1();
        let x = [2.0, 1.5, 90.0];
        let dx = averaged_converter_derivative(&x, &inputs(1.0, &p), &p);
        assert!((dx[0] - (p.v_in - 2.0 * (p.r_l + p.r_s)) / p.l1).abs() < 1e-9);
        assert!((dx[1] - (p.v_in - 1.5 * (p.r_l + p.r_s)) / p.l2).abs() < 1e-9);
        let v_o = 90.0 / (1.0 + p.r_c / p.r_o);
        assert!((dx[2] + v_o / p.r_o / p.co).abs() < 1e-9);
        assert!(dx[2] < 0.0);
    }

    #[test]
    fn linearization_matches_analytic_model() {
        let p = ConverterParams::table1();
        let op = equilibrium(&p, p.v_in, p.r_o, p.v_o, 0.0).unwrap();
        let x0 = [op.i_l, op.i_l, op.v_c];
        let inp = inputs(op.u, &p);
        let f = |x: &[f64; 3], u: f64| averaged_converter_derivative(x, &ConverterInputs { u, ..inp }, &p);
        let y = |x: &[f64; 3], u: f64| averaged_output_voltage(x, &ConverterInputs { u, ..inp }, &p);
        let h = 1e-6;
        let a = DMatrix::from_fn(3, 3, |i, j| {
            let (mut xp, mut xm) = (x0, x0);
            xp[j] += h;
            xm[j] -= h;
            (f(&xp, op.u)[i] - f(&xm, op.u)[i]) / (2.0 * h)
        });
        let b = DMatrix::from_fn(3, 1, |i, _| (f(&x0, op.u + h)[i] - f(&x0, op.u - h)[i]) / (2.0 * h));
        let c = DMatrix::from_fn(1, 3, |_, j| {
            let (mut xp, mut xm) = (x0, x0);
            xp[j] += h;
            xm[j] -= h;
            (y(&xp, op.u) - y(&xm, op.u)) / (2.0 * h)
        });
        let d = (y(&x0, op.u + h) - y(&x0, op.u - h)) / (2.0 * h);

        let dc = d - (&c * a.clone().try_inverse().unwrap() * &b)[(0, 0)];
        let g_m = math_models(&p, &op, EsrTerm::default()).unwrap().g_m;
        assert!(dc > 0.0 && g_m.dc_gain().unwrap() > 0.0, "dc {dc}");

        // with D != 0 the zeros are the eigenvalues of A - B C / D
        let zeros = (&a - &b * &c / d).complex_eigenvalues();
        let rhp: Vec<f64> = zeros.iter().filter(|z| z.re > 0.0).map(|z| z.re).collect();
        let rhp_m: Vec<f64> = g_m.zeros().unwrap().iter().filter(|z| z.re > 0.0).map(|z| z.re).collect();
        assert_eq!(rhp.len(), 1, "{zeros:?}");
        assert_eq!(rhp_m.len(), 1);
        assert!((rhp[0] / rhp_m[0] - 1.0).abs() < 0.25, "{} vs {}", rhp[0], rhp_m[0]);
    }

    #[test]
    fn rejects_improper_composites_and_bad_scenarios() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let improper = CompensatorParams::new(vec![1.0, 1.0, 1.0].into(), vec![1.0].into()).unwrap();
        assert!(matches!(
            build_closed_loop(SimMode::Lti, &improper, None, &plants, &p),
            Err(Error::ImproperComposite(_))
        ));
        let cl = build_closed_loop(SimMode::Lti, &kx(), None, &plants, &p).unwrap();
        let cfg = SimConfig::default();
        let load = Event { t: 0.01, kind: EventKind::LoadResistance, value: 80.0 };
        assert!(matches!(run(&cl, &step_scenario(SimMode::Lti, 0.02, vec![load]), &cfg), Err(Error::Config(_))));
        let mut unsorted = vec![load, Event { t: 0.005, ..load }];
        unsorted.iter_mut().for_each(|e| e.kind = EventKind::Setpoint);
        assert!(run(&cl, &step_scenario(SimMode::Lti, 0.02, unsorted), &cfg).is_err());
        let off_grid = Event { t: 0.0100005, kind: EventKind::Setpoint, value: 90.0 };
        assert!(run(&cl, &step_scenario(SimMode::Lti, 0.02, vec![off_grid]), &cfg).is_err());
        assert!(run(&cl, &step_scenario(SimMode::Averaged, 0.02, vec![]), &cfg).is_err());
    }

    #[test]
    fn constant_setpoint_holds_regulation() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        let r = simulate(&step_scenario(SimMode::Lti, 0.2, vec![]), &kx(), None, &plants, &p, &cfg).unwrap();
        assert!(r.v_o.iter().all(|v| (v - 100.0).abs() <= 0.5));
        assert!(r.d_hat.iter().all(|&d| d == 0.0));
        assert!(r.i_l1.is_none());
        let k = r.t.len();
        assert_eq!(k, 2001);
        assert!((r.t[1] - r.t[0] - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn observer_estimate_leaves_small_residual() {
        // a load-current step is an input-equivalent disturbance G_i(0) i / G(0)
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        let i = 1.0;
        let sc = step_scenario(
            SimMode::Lti,
            0.6,
            vec![Event { t: 0.01, kind: EventKind::ExternalLoadCurrent, value: i }],
        );
        let r = simulate(&sc, &kx(), Some(&q()), &plants, &p, &cfg).unwrap();
        let d_in = plants.g_i.dc_gain().unwrap() * i / plants.g.dc_gain().unwrap();
        let q0 = q().q().dc_gain().unwrap();
        let d_hat = *r.d_hat.last().unwrap();
        assert!((d_hat - q0 * d_in).abs() <= 1e-6 * d_in.abs(), "{d_hat} vs {}", q0 * d_in);
        assert!((d_in - d_hat).abs() <= 0.0084 * d_in.abs());
        assert!((r.v_o.last().unwrap() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn observer_is_silent_when_the_model_matches() {
        // with a minimum-phase plant the reflected inverse is exact
        let mut plants = identified_plant_set();
        plants.g = plants.g.minimum_phase_reflect().unwrap();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        let sc = step_scenario(
            SimMode::Lti,
            0.2,
            vec![Event { t: 0.01, kind: EventKind::Setpoint, value: 101.0 }],
        );
        let r = simulate(&sc, &kx(), Some(&q()), &plants, &p, &cfg).unwrap();
        let u0 = r.u[0];
        let scale = r.u.iter().map(|u| (u - u0).abs()).fold(0.0, f64::max);
        assert!(scale > 1e-3);
        let worst = r.d_hat.iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6 * scale, "{worst} vs {scale}");
    }

    fn equivalence_gap(plants: &PlantSet) -> (f64, f64) {
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        let ev = vec![Event { t: 0.01, kind: EventKind::Setpoint, value: 100.1 }];
        let lin = simulate(&step_scenario(SimMode::Lti, 0.2, ev.clone()), &kx(), None, plants, &p, &cfg).unwrap();
        let avg = simulate(&step_scenario(SimMode::Averaged, 0.2, ev), &kx(), None, plants, &p, &cfg).unwrap();
        let peak = lin.v_o.iter().map(|v| (v - lin.v_o[0]).abs()).fold(0.0, f64::max);
        let diff = lin
            .v_o
            .iter()
            .zip(&avg.v_o)
            .map(|(a, b)| ((a - lin.v_o[0]) - (b - avg.v_o[0])).abs())
            .fold(0.0, f64::max);
        (diff, peak)
    }

    #[test]
    fn averaged_small_signal_matches_its_linearization() {
        let p = ConverterParams::table1();
        let init = InitialConditions {
            v_ref: p.v_o,
            v_in: p.v_in,
            r_o: p.r_o,
            i_ext: 0.0,
        };
        let plants = averaged_small_signal_plants(&p, &init, &identified_plant_set().w_n).unwrap();
        let (diff, peak) = equivalence_gap(&plants);
        assert!(diff <= 0.05 * peak, "{diff} vs {peak}");
    }

    #[test]
    fn linearized_plant_matches_direct_evaluation() {
        let p = ConverterParams::table1();
        let init = InitialConditions {
            v_ref: 100.0,
            v_in: 50.0,
            r_o: 20.0,
            i_ext: 0.0,
        };
        let plants = averaged_small_signal_plants(&p, &init, &identified_plant_set().w_n).unwrap();
        let op = equilibrium(&p, 50.0, 20.0, 100.0, 0.0).unwrap();
        // at fixed duty the model is linear in (state, v_in), so the DC gain of G_v is exact
        let dv = 1e-3;
        let u_hold = op.u;
        let shifted = |v_in: f64| {
            let inp = ConverterInputs { u: u_hold, v_in, r_o: 20.0, i_ext: 0.0 };
            let a = DMatrix::from_fn(3, 3, |i, j| {
                let mut e = [0.0; 3];
                e[j] = 1.0;
                averaged_converter_derivative(&e, &ConverterInputs { v_in: 0.0, ..inp }, &p)[i]
            });
            let b = DMatrix::from_fn(3, 1, |i, _| averaged_converter_derivative(&[0.0; 3], &inp, &p)[i]);
            let x = a.lu().solve(&(-b)).unwrap();
            averaged_output_voltage(&[x[0], x[1], x[2]], &inp, &p)
        };
        let dc = (shifted(50.0 + dv) - shifted(50.0 - dv)) / (2.0 * dv);
        assert!((plants.g_v.dc_gain().unwrap() / dc - 1.0).abs() < 1e-5, "{dc}");
        assert!(plants.g.dc_gain().unwrap() > 0.0);
        assert!(plants.g.zeros().unwrap().iter().any(|z| z.re > 0.0));
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let sc = step_scenario(
            SimMode::Averaged,
            0.02,
            vec![Event { t: 0.0, kind: EventKind::Setpoint, value: 100.1 }],
        );
        let run_dt = |dt: f64| {
            let cfg = SimConfig {
                dt,
                output_dt: 1e-3,
                substeps: Some(1),
                seed: 0,
            };
            simulate(&sc, &kx(), None, &plants, &p, &cfg).unwrap().v_o
        };
        let (a, b, c) = (run_dt(1e-5), run_dt(5e-6), run_dt(2.5e-6));
        let err = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let (e1, e2) = (err(&a, &b), err(&b, &c));
        assert!(e1 > 0.0 && e2 > 0.0);
        let ratio = e1 / e2;
        assert!(ratio > 10.0 && ratio < 24.0, "ratio {ratio} ({e1} {e2})");
    }

    #[test]
    fn step_that_violates_the_pole_rule_is_rejected() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-4,
            substeps: Some(1),
            ..SimConfig::default()
        };
        let r = simulate(&step_scenario(SimMode::Lti, 0.01, vec![]), &kx(), None, &plants, &p, &cfg);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn saturation_and_anti_windup() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        let sc = step_scenario(
            SimMode::Lti,
            0.5,
            vec![
                Event { t: 0.01, kind: EventKind::Setpoint, value: 200.0 },
                Event { t: 0.25, kind: EventKind::Setpoint, value: 100.0 },
            ],
        );
        let r = simulate(&sc, &kx(), None, &plants, &p, &cfg).unwrap();
        assert!(r.u.iter().all(|u| (U_MIN..=U_MAX).contains(u)));
        assert!(r.u.iter().any(|&u| u == U_MAX));
        let peak = r.integrator.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(peak <= 10.0 * U_MAX, "{peak}");
        // back in the linear range once the demand is feasible again
        assert!((r.v_o.last().unwrap() - 100.0).abs() < 0.5);
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let unstable = CompensatorParams::new(vec![1.0].into(), vec![1.0, -1000.0, 1.0].into()).unwrap();
        let sc = step_scenario(
            SimMode::Lti,
            2.0,
            vec![Event { t: 0.0, kind: EventKind::Setpoint, value: 101.0 }],
        );
        let cfg = SimConfig {
            dt: 1e-5,
            ..SimConfig::default()
        };
        match simulate(&sc, &unstable, None, &plants, &p, &cfg) {
            Err(Error::NonFiniteState { t }) => assert!(t > 0.0 && t < 2.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn noise_is_seeded() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let mut sc = step_scenario(SimMode::Lti, 0.02, vec![]);
        sc.noise_enabled = true;
        let cfg = |seed| SimConfig {
            dt: 1e-5,
            seed,
            ..SimConfig::default()
        };
        let a = simulate(&sc, &kx(), None, &plants, &p, &cfg(7)).unwrap();
        let b = simulate(&sc, &kx(), None, &plants, &p, &cfg(7)).unwrap();
        let c = simulate(&sc, &kx(), None, &plants, &p, &cfg(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.v_o, c.v_o);
    }

    #[test]
    fn csv_layout() {
        let plants = identified_plant_set();
        let p = ConverterParams::table1();
        let cfg = SimConfig {
            dt: 1e-5,
            output_dt: 1e-3,
            ..SimConfig::default()
        };
        let r = simulate(&step_scenario(SimMode::Averaged, 0.003, vec![]), &kx(), None, &plants, &p, &cfg).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,v_o,u,i_L1,i_L2,d_hat");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 6);
    }

    fn trace(f: impl Fn(f64) -> f64) -> SimResult {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        let v: Vec<f64> = t.iter().map(|&t| f(t)).collect();
        SimResult {
            u: vec![0.5; t.len()],
            d_hat: vec![0.0; t.len()],
            integrator: vec![0.0; t.len()],
            i_l1: None,
            i_l2: None,
            v_o: v,
            t,
        }
    }

    fn window(kind: EventKind) -> Vec<EventWindow> {
        vec![EventWindow { kind, t_start: 0.0, t_end: 1.0 }]
    }

    #[test]
    fn monotone_response_has_no_overshoot() {
        let r = trace(|t| 90.0 + 10.0 * (1.0 - (-t / 0.02).exp()));
        let m = metrics(&r, &window(EventKind::Setpoint), 100.0).unwrap();
        let e = m.events[0];
        assert_eq!(e.overshoot_pct, 0.0);
        // band 2% of the 10 V step: t = 0.02 ln 50
        assert!((e.settling_time - 0.02 * 50f64.ln()).abs() < 2e-3, "{}", e.settling_time);
        assert!(!e.unsettled);
    }

    #[test]
    fn constructed_five_percent_overshoot() {
        // 0 -> 100 V step that peaks at 105 V and rings down
        let r = trace(|t| {
            let (wn, zeta) = (100.0, 0.690_1);
            let wd = wn * (1.0f64 - zeta * zeta).sqrt();
            let phi = (zeta / (1.0f64 - zeta * zeta).sqrt()).atan();
            100.0 * (1.0 - (-zeta * wn * t).exp() * (wd * t - phi).cos() / phi.cos())
        });
        let m = metrics(&r, &window(EventKind::Setpoint), 100.0).unwrap();
        assert!((m.events[0].overshoot_pct - 5.0).abs() < 0.1, "{}", m.events[0].overshoot_pct);
    }

    #[test]
    fn disturbance_peak_and_unsettled_flag() {
        let r = trace(|t| 100.0 + 4.0 * (-t / 0.01).exp());
        let m = metrics(&r, &window(EventKind::LoadResistance), 100.0).unwrap();
        assert!((m.events[0].overshoot_pct - 4.0).abs() < 1e-9);
        let ramp = trace(|t| 100.0 + t);
        let m = metrics(&ramp, &window(EventKind::InputVoltage), 100.0).unwrap();
        assert!(m.events[0].unsettled);
        let overlap = [
            EventWindow { kind: EventKind::Setpoint, t_start: 0.0, t_end: 0.6 },
            EventWindow { kind: EventKind::Setpoint, t_start: 0.5, t_end: 1.0 },
        ];
        assert!(metrics(&r, &overlap, 100.0).is_err());
    }

    #[test]
    fn published_compensator_tracks_setpoint_without_overshoot() {
        let sc = scenario_a(SimMode::Lti);
        let r = simulate(
            &sc,
            &kx(),
            None,
            &identified_plant_set(),
            &ConverterParams::table1(),
            &SimConfig::default(),
        )
        .unwrap();
        let m = metrics(&r, &event_windows(&sc), 100.0).unwrap();
        for e in &m.events {
            assert!(e.overshoot_pct < 0.1, "{e:?}");
            assert!(!e.unsettled);
        }
    }

    #[test]
    fn windows_follow_events() {
        let w = event_windows(&scenario_a(SimMode::Lti));
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].t_start, w[0].t_end), (0.3, 0.7));
        assert_eq!((w[1].t_start, w[1].t_end), (0.7, 1.0));
    }

    #[test]
    fn scenario_json_round_trip() {
        let text = r#"{"duration": 0.5, "mode": "averaged",
            "events": [{"t": 0.1, "kind": "inductance_scale", "value": 0.5}]}"#;
        let sc: SimScenario = serde_json::from_str(text).unwrap();
        assert_eq!(sc.events[0].kind, EventKind::InductanceScale);
        assert!(!sc.noise_enabled && sc.initial.is_none());
        sc.validate().unwrap();
        let back: SimScenario = serde_json::from_str(&serde_json::to_string(&sc).unwrap()).unwrap();
        assert_eq!(back, sc);
    }

    proptest! {
        #[test]
        fn equilibrium_is_a_fixed_point(v_in in 30.0f64..60.0, r_o in 15.0f64..250.0, v_o in 80.0f64..120.0) {
            let p = ConverterParams::table1();
            let op = equilibrium(&p, v_in, r_o, v_o, 0.0).unwrap();
            let inp = ConverterInputs { u: op.u, v_in, r_o, i_ext: 0.0 };
            let x = [op.i_l, op.i_l, op.v_c];
            let dx = averaged_converter_derivative(&x, &inp, &p);
            prop_assert!(dx[0].abs() * p.l1 < 1e-7 && dx[1].abs() * p.l2 < 1e-7);
            prop_assert!(dx[2].abs() * p.co < 1e-9);
            prop_assert!((averaged_output_voltage(&x, &inp, &p) - v_o).abs() < 1e-9);
        }

        #[test]
        fn lossless_power_balance(u in 0.1f64..0.8, r_o in 10.0f64..300.0) {
            let p = lossless();
            let v_o = p.v_in / (1.0 - u);
            let i = v_o / r_o / (2.0 * (1.0 - u));
            let inp = ConverterInputs { u, v_in: p.v_in, r_o, i_ext: 0.0 };
            let dx = averaged_converter_derivative(&[i, i, v_o], &inp, &p);
            prop_assert!(dx.iter().all(|v| v.abs() < 1e-6));
            let (p_in, p_out) = (p.v_in * 2.0 * i, v_o * v_o / r_o);
            prop_assert!((p_in - p_out).abs() <= 1e-6 * p_out);
        }
    }
}
