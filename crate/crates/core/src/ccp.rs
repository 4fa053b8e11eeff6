//! Two-stage convex-concave synthesis of the compensator and the Q-filter.
//!
//! Each H-infinity bound `|b / J|^2 <= gamma` is written as the 2x2 LMI
//! `[[|J|^2, b*], [b, gamma]] >= 0`. The concave part `|J|^2` is replaced by its
//! tangent `2 Re(conj(J) J_i) - |J_i|^2 <= |J|^2` at the current iterate, so every
//! subproblem is a convex restriction, and the Schur complement turns each block
//! into a rotated second-order cone.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conic::{self, Affine, ComplexAffine, ConicProgram, RotatedCone, SolverOptions, Status};
use crate::error::{Error, Result, Stage};
use crate::lti::{decays_faster_than, FrequencyGrid, Polynomial, TransferFunction};
use crate::loops::{characteristic_polynomials, verify_norms, CompensatorParams, Constraint, FilterParams, FreqPoint, NormBounds, NormReport};
use crate::plant::{identified_plant_set, paper_weights, PlantSet, WeightSet};

/// Grid points where a model denominator is smaller than this are dropped.
pub const DEGENERATE_DEN: f64 = 1e-12;
const POSITIVITY_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepUpdate {
    /// Stage 2 sees the compensator just produced by stage 1.
    #[default]
    AfterEachStage,
    /// Both stages linearize around the iterate at the start of the sweep.
    AfterSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSelection {
    #[default]
    Both,
    /// Keep the initial filter and only synthesize the compensator.
    CompensatorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub plants: PlantSet,
    pub weights: WeightSet,
    pub grid: FrequencyGrid,
    /// `(deg X, deg Y)`
    pub comp_orders: (usize, usize),
    /// `(deg N, deg M)`
    pub filt_orders: (usize, usize),
    pub init_comp: CompensatorParams,
    pub init_filt: FilterParams,
    pub epsilon: f64,
    pub max_iters: usize,
    pub solver_tol: f64,
    pub sweep_update: SweepUpdate,
    pub stages: StageSelection,
    /// Densification factor of the post-synthesis verification grid.
    pub verify_factor: usize,
    /// Extra frequencies where only the tangent positivity of `J`, `H` and `M`
    /// is imposed, so the Nyquist encirclement count cannot change between
    /// iterates outside the performance grid. `None` disables it.
    pub stability_grid: Option<FrequencyGrid>,
    /// Shorten a step whose iterate has a characteristic root with real part
    /// above `-min_decay_rate` by halving it toward the previous iterate.
    pub backtrack_unstable: bool,
    /// Smallest decay rate (rad/s) accepted while backtracking. A plain
    /// Hurwitz test lets lightly damped low-frequency modes, which no grid
    /// constraint sees, drift onto the imaginary axis.
    pub min_decay_rate: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SynthesisConfig {
    /// Identified plants, published weights, 200 points on 1e2..1e5 rad/s,
    /// the integrator `K = 1e-4 / s` and `Q = 120 / (s + 120)`.
    ///
    /// The integrator is written as `X = 1e-4 (1 + s + s^2)`, `Y = 1 + s + s^2`;
    /// reading every free coefficient as 1e-4 instead gives an unstable start,
    /// and the tangent constraints preserve the number of unstable poles.
    pub fn paper() -> Self {
        Self {
            plants: identified_plant_set(),
            weights: paper_weights(),
            grid: FrequencyGrid::logspace(1e2, 1e5, 200).expect("static grid"),
            comp_orders: (2, 2),
            filt_orders: (0, 1),
            init_comp: CompensatorParams::new(
                Polynomial::new(vec![1e-4, 1e-4, 1e-4]),
                Polynomial::new(vec![1.0, 1.0, 1.0]),
            )
            .expect("monic"),
            init_filt: FilterParams::new(Polynomial::constant(120.0), Polynomial::new(vec![120.0, 1.0]))
                .expect("monic"),
            epsilon: 1e-4,
            max_iters: 50,
            solver_tol: 1e-8,
            sweep_update: SweepUpdate::default(),
            stages: StageSelection::default(),
            verify_factor: 10,
            stability_grid: Some(FrequencyGrid::logspace(1e-3, 1e7, 201).expect("static grid")),
            backtrack_unstable: true,
            min_decay_rate: 1e-2,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, o) = self.comp_orders;
        let (n, m) = self.filt_orders;
        if o == 0 || m == 0 {
            return Err(Error::Config("deg Y and deg M must be at least 1".into()));
        }
        if m <= n {
            return Err(Error::Config(format!("filter must be strictly proper (n = {n}, m = {m})")));
        }
        if self.init_comp.y().degree() != o || self.init_comp.x().degree() > h {
            return Err(Error::Config("initial compensator does not match comp_orders".into()));
        }
        if self.init_filt.m().degree() != m || (!self.init_filt.n().is_zero() && self.init_filt.n().degree() > n) {
            return Err(Error::Config("initial filter does not match filt_orders".into()));
        }
        let finite = |p: &Polynomial| p.coeffs().iter().all(|c| c.is_finite());
        if ![self.init_comp.x(), self.init_comp.y(), self.init_filt.n(), self.init_filt.m()]
            .into_iter()
            .all(finite)
        {
            return Err(Error::Config("initial coefficients must be finite".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.min_decay_rate >= 0.0 && self.min_decay_rate.is_finite()) {
            return Err(Error::Config(format!("min_decay_rate must be nonnegative, got {}", self.min_decay_rate)));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1e-2) {
            return Err(Error::Config(format!("solver_tol {} out of range", self.solver_tol)));
        }
        if self.max_iters == 0 || self.verify_factor == 0 {
            return Err(Error::Config("max_iters and verify_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn stage1_variables(&self) -> usize {
        self.comp_orders.0 + 1 + self.comp_orders.1 + 1
    }

    pub fn stage2_variables(&self) -> usize {
        self.filt_orders.0 + 1 + self.filt_orders.1 + 1
    }
}

/// Number of sampled frequencies for risk `eps_r` at confidence `1 - beta_c`
/// with `d_p` decision variables: `ceil((2/eps_r)(d_p - 1 + ln(1/beta_c)))`.
pub fn grid_size_bound(eps_r: f64, beta_c: f64, d_p: usize) -> Result<u64> {
    if !(eps_r > 0.0 && eps_r < 1.0) {
        return Err(Error::OutOfRange(format!("risk {eps_r} not in (0, 1)")));
    }
    if !(beta_c > 0.0 && beta_c <= 1.0) {
        return Err(Error::OutOfRange(format!("confidence parameter {beta_c} not in (0, 1]")));
    }
    if d_p == 0 {
        return Err(Error::OutOfRange("no decision variables".into()));
    }
    let v = (2.0 / eps_r) * (d_p as f64 - 1.0 + (1.0 / beta_c).ln());
    // round-off can push an exact integer just above itself
    let r = v.round();
    let n = if (v - r).abs() <= 1e-9 * r.max(1.0) { r } else { v.ceil() };
    Ok(n.max(0.0) as u64)
}

/// Current iterate around which the concave terms are linearized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationState {
    pub comp: CompensatorParams,
    pub filt: FilterParams,
}

impl LinearizationState {
    /// `Y_i + G_aug X_i`
    pub fn j(&self, f: &FreqPoint) -> Complex64 {
        self.comp.y().eval(f.s) + f.g_aug * self.comp.x().eval(f.s)
    }

    /// `N_i + M_i`
    pub fn h(&self, f: &FreqPoint) -> Complex64 {
        self.filt.n().eval(f.s) + self.filt.m().eval(f.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRef {
    Gamma1,
    Gamma2,
}

/// `[[a, b*], [b, gamma I]] >= 0` at one frequency, normalized so that
/// `a = 1` at the linearization point. Blocks without a constraint and with
/// empty `b` only keep the tangent nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub constraint: Option<Constraint>,
    pub omega: f64,
    pub a: Affine,
    pub b: Vec<ComplexAffine>,
    pub gamma_ref: GammaRef,
}

impl ConstraintBlock {
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<Complex64>) {
        let b = self
            .b
            .iter()
            .map(|b| Complex64::new(b.re.eval(x), b.im.eval(x)))
            .collect();
        (self.a.eval(x), b)
    }
}

/// Smallest eigenvalue of `[[a, b^H], [b, gamma I]]`, computed on its real
/// symmetric embedding.
pub fn hermitian_min_eigenvalue(a: f64, b: &[Complex64], gamma: f64) -> f64 {
    let k = b.len() + 1;
    let mut h = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    h[0][0] = Complex64::new(a, 0.0);
    for (i, bi) in b.iter().enumerate() {
        h[i + 1][0] = *bi;
        h[0][i + 1] = bi.conj();
        h[i + 1][i + 1] = Complex64::new(gamma, 0.0);
    }
    let m = DMatrix::from_fn(2 * k, 2 * k, |r, c| {
        let (ri, ci) = (r % k, c % k);
        let z = h[ri][ci];
        match (r < k, c < k) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Complex affine function of the decision vector.
#[derive(Debug, Clone)]
struct Lin {
    c0: Complex64,
    c: Vec<Complex64>,
}

impl Lin {
    fn zero(n: usize) -> Self {
        Self {
            c0: Complex64::new(0.0, 0.0),
            c: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Polynomial with `free` variable coefficients starting at `offset`,
    /// plus a fixed unit leading coefficient of degree `free` when `monic`.
    fn poly(n: usize, offset: usize, free: usize, monic: bool, s: Complex64) -> Self {
        let mut out = Self::zero(n);
        let mut pk = Complex64::new(1.0, 0.0);
        for k in 0..free {
            out.c[offset + k] = pk;
            pk *= s;
        }
        if monic {
            out.c0 = pk;
        }
        out
    }

    fn mul(&self, k: Complex64) -> Self {
        Self {
            c0: self.c0 * k,
            c: self.c.iter().map(|c| c * k).collect(),
        }
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            c0: self.c0 + o.c0,
            c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect(),
        }
    }

    fn sub(&self, o: &Self) -> Self {
        self.add(&o.mul(Complex64::new(-1.0, 0.0)))
    }

    fn complex_affine(&self) -> ComplexAffine {
        ComplexAffine {
            re: Affine {
                constant: self.c0.re,
                coeffs: self.c.iter().map(|c| c.re).collect(),
            },
            im: Affine {
                constant: self.c0.im,
                coeffs: self.c.iter().map(|c| c.im).collect(),
            },
        }
    }

    /// `2 Re(conj(v_i) v) - |v_i|^2`, the tangent minorant of `|v|^2` at `v_i`.
    fn tangent(&self, vi: Complex64) -> Affine {
        let re = |z: Complex64| 2.0 * (vi.conj() * z).re;
        Affine {
            constant: re(self.c0) - vi.norm_sqr(),
            coeffs: self.c.iter().map(|&c| re(c)).collect(),
        }
    }
}

/// Blocks and variable count of one subproblem.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub stage: Stage,
    pub nvars: usize,
    pub blocks: Vec<ConstraintBlock>,
}

impl Subproblem {
    /// Index of the gamma variable (always last).
    pub fn gamma_index(&self) -> usize {
        self.nvars - 1
    }

    pub fn program(&self) -> ConicProgram {
        let mut obj = vec![0.0; self.nvars];
        obj[self.gamma_index()] = 1.0;
        let mut p = ConicProgram::new(obj);
        for b in &self.blocks {
            p.push(RotatedCone {
                a: b.a.clone(),
                g: Affine::var(self.nvars, self.gamma_index()),
                b: b.b.clone(),
            });
        }
        p
    }

    /// Smallest gamma for which every block holds at `x`, or `None` if some `a(x) < 0`.
    /// Pure positivity blocks may undershoot zero by `POSITIVITY_SLACK`, the
    /// interior-point solver's own feasibility tolerance on a unit-normalized `a`.
    pub fn required_gamma(&self, x: &[f64]) -> Option<f64> {
        let mut g = 0.0_f64;
        for blk in &self.blocks {
            let (a, b) = blk.eval(x);
            let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
            if b.is_empty() {
                if a < -POSITIVITY_SLACK {
                    return None;
                }
                continue;
            }
            if a < 0.0 || (a == 0.0 && bb > 0.0) {
                return None;
            }
            if bb > 0.0 {
                g = g.max(bb / a);
            }
        }
        Some(g)
    }
}

/// Frequencies used by the subproblems, with degenerate points removed.
#[derive(Debug, Clone)]
pub struct GridPoints {
    /// points carrying the H-infinity blocks
    pub performance: Vec<FreqPoint>,
    /// points carrying only tangent positivity
    pub stability: Vec<FreqPoint>,
}

fn models(cfg: &SynthesisConfig) -> Vec<&TransferFunction> {
    [&cfg.plants.g, &cfg.plants.g_i, &cfg.plants.g_v, &cfg.plants.w_n]
        .into_iter()
        .chain(cfg.weights.iter().map(|(_, tf)| tf))
        .collect()
}

fn points_on(cfg: &SynthesisConfig, grid: &FrequencyGrid) -> Result<Vec<FreqPoint>> {
    let models = models(cfg);
    let mut keep = Vec::with_capacity(grid.len());
    for &w in grid.omegas() {
        let s = Complex64::new(0.0, w);
        if models.iter().any(|tf| tf.den().eval(s).norm() < DEGENERATE_DEN) {
            log::warn!("dropping omega = {w} rad/s: a model denominator vanishes");
            continue;
        }
        keep.push(FreqPoint::at(&cfg.plants, &cfg.weights, w)?);
    }
    Ok(keep)
}

pub fn grid_points(cfg: &SynthesisConfig) -> Result<GridPoints> {
    let performance = points_on(cfg, &cfg.grid)?;
    if performance.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let stability = match &cfg.stability_grid {
        Some(g) => points_on(cfg, g)?,
        None => Vec::new(),
    };
    Ok(GridPoints { performance, stability })
}

fn nonzero(v: f64, what: &str, omega: f64) -> bool {
    let ok = v.is_finite() && v > 1e-300;
    if !ok {
        log::warn!("dropping omega = {omega} rad/s: {what} vanishes at the linearization point");
    }
    ok
}

fn positivity(a: Affine, omega: f64, gamma_ref: GammaRef) -> ConstraintBlock {
    ConstraintBlock {
        constraint: None,
        omega,
        a,
        b: Vec::new(),
        gamma_ref,
    }
}

/// Compensator subproblem: variables `x_0..x_h`, `y_0..y_{o-1}`, `gamma_1`.
pub fn stage1_blocks(cfg: &SynthesisConfig, points: &GridPoints, lin: &LinearizationState) -> Result<Subproblem> {
    if points.performance.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (h, o) = cfg.comp_orders;
    let nv = cfg.stage1_variables();
    let j_of = |f: &FreqPoint| {
        let x = Lin::poly(nv, 0, h + 1, false, f.s);
        let y = Lin::poly(nv, h + 1, o, true, f.s);
        let j = y.add(&x.mul(f.g_aug));
        (x, y, j)
    };
    let mut blocks = Vec::with_capacity(6 * points.performance.len() + points.stability.len());
    for f in &points.performance {
        let (x, y, j) = j_of(f);
        let ji = lin.j(f);
        let (n, m) = (lin.filt.n().eval(f.s), lin.filt.m().eval(f.s));
        let nj = ji.norm_sqr();
        if !nonzero(nj, "J", f.omega) || !nonzero(m.norm_sqr(), "M", f.omega) {
            continue;
        }
        let a = j.tangent(ji).scale(1.0 / nj);
        let bj = Complex64::new(1.0 / nj.sqrt(), 0.0);
        // the |M|^2 factor of the combined-loop blocks cancels from a after normalization
        let bjm = bj / m.norm();
        let entries: [(Constraint, Lin); 6] = [
            (Constraint::W1S, y.mul(f.w1 * bj)),
            (Constraint::W3T, x.mul(f.w3 * f.g_aug * bj)),
            (Constraint::W2Si, x.mul(f.w2 * bj)),
            (Constraint::So, y.mul(f.p * bj)),
            (Constraint::W1cSc, y.mul(f.w1c * f.p * (m - n) * bjm)),
            (
                Constraint::W3cTc,
                x.mul(m * f.g_aug).add(&y.mul(n)).mul(f.w3c * f.w_n * bjm),
            ),
        ];
        for (c, b) in entries {
            blocks.push(ConstraintBlock {
                constraint: Some(c),
                omega: f.omega,
                a: a.clone(),
                b: vec![b.complex_affine()],
                gamma_ref: GammaRef::Gamma1,
            });
        }
    }
    for f in &points.stability {
        let (_, _, j) = j_of(f);
        let ji = lin.j(f);
        let nj = ji.norm_sqr();
        if nonzero(nj, "J", f.omega) {
            blocks.push(positivity(j.tangent(ji).scale(1.0 / nj), f.omega, GammaRef::Gamma1));
        }
    }
    if !points.stability.is_empty() {
        // J has a pole at s = 0, so the direction of J(j0+) is that of s J at
        // s = 0, i.e. G(0) X(0); a sign change there moves a root through the origin
        let zero = Complex64::new(0.0, 0.0);
        let g0 = cfg.plants.g.eval_s(zero)?;
        let sj = Lin::poly(nv, 0, h + 1, false, zero).mul(g0);
        let sji = g0 * lin.comp.x().eval(zero);
        if nonzero(sji.norm_sqr(), "G(0) X(0)", 0.0) {
            blocks.push(positivity(sj.tangent(sji).scale(1.0 / sji.norm_sqr()), 0.0, GammaRef::Gamma1));
        }
    }
    Ok(Subproblem {
        stage: Stage::Compensator,
        nvars: nv,
        blocks,
    })
}

/// Filter subproblem: variables `n_0..n_n`, `m_0..m_{m-1}`, `gamma_2`.
/// The compensator is taken from `comp`, the filter linearization from `lin`.
pub fn stage2_blocks(
    cfg: &SynthesisConfig,
    points: &GridPoints,
    lin: &LinearizationState,
    comp: &CompensatorParams,
) -> Result<Subproblem> {
    if points.performance.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let (nd, md) = cfg.filt_orders;
    let nv = cfg.stage2_variables();
    let nm_of = |f: &FreqPoint| {
        let n = Lin::poly(nv, 0, nd + 1, false, f.s);
        let m = Lin::poly(nv, nd + 1, md, true, f.s);
        (n, m)
    };
    let mut blocks = Vec::with_capacity(5 * points.performance.len() + 2 * points.stability.len());
    for f in &points.performance {
        let (n, m) = nm_of(f);
        let h = m.add(&n);
        let hi = lin.h(f);
        let mi = lin.filt.m().eval(f.s);
        let (xv, yv) = (comp.x().eval(f.s), comp.y().eval(f.s));
        let j = yv + f.g_aug * xv;
        let (nh, nm, nj) = (hi.norm_sqr(), mi.norm_sqr(), j.norm_sqr());
        if !nonzero(nh, "H", f.omega) || !nonzero(nm, "M", f.omega) || !nonzero(nj, "J", f.omega) {
            continue;
        }
        let ah = h.tangent(hi).scale(1.0 / nh);
        let am = m.tangent(mi).scale(1.0 / nm);
        let bh = Complex64::new(1.0 / nh.sqrt(), 0.0);
        let bm = Complex64::new(1.0 / nm.sqrt(), 0.0);
        let bjm = bm / j.norm();
        let sd = m.mul(f.p * bh);
        let td = n.mul(f.g * f.w_n * bh);
        let one_minus_q = m.sub(&n);
        let entries: [(Constraint, &Affine, Vec<Lin>); 5] = [
            (Constraint::Sd, &ah, vec![sd.clone()]),
            (Constraint::SdTdJoint, &ah, vec![sd, td]),
            (Constraint::WqOneMinusQ, &am, vec![one_minus_q.mul(f.wq * bm)]),
            (Constraint::W1cSc, &am, vec![one_minus_q.mul(f.w1c * f.p * yv * bjm)]),
            (
                Constraint::W3cTc,
                &am,
                vec![m.mul(f.g_aug * xv).add(&n.mul(yv)).mul(f.w3c * f.w_n * bjm)],
            ),
        ];
        for (c, a, b) in entries {
            blocks.push(ConstraintBlock {
                constraint: Some(c),
                omega: f.omega,
                a: a.clone(),
                b: b.iter().map(Lin::complex_affine).collect(),
                gamma_ref: GammaRef::Gamma2,
            });
        }
    }
    let dc = points.stability.first().map(|f| FreqPoint { omega: 0.0, s: Complex64::new(0.0, 0.0), ..*f });
    for f in points.stability.iter().chain(&dc) {
        let (n, m) = nm_of(f);
        let (hi, mi) = (lin.h(f), lin.filt.m().eval(f.s));
        if nonzero(hi.norm_sqr(), "H", f.omega) {
            blocks.push(positivity(m.add(&n).tangent(hi).scale(1.0 / hi.norm_sqr()), f.omega, GammaRef::Gamma2));
        }
        if nonzero(mi.norm_sqr(), "M", f.omega) {
            blocks.push(positivity(m.tangent(mi).scale(1.0 / mi.norm_sqr()), f.omega, GammaRef::Gamma2));
        }
    }
    Ok(Subproblem {
        stage: Stage::Filter,
        nvars: nv,
        blocks,
    })
}

/// Stage-1 conic program at `lin` (filter fixed at `lin.filt`).
pub fn stage1_program(cfg: &SynthesisConfig, lin: &LinearizationState) -> Result<ConicProgram> {
    Ok(stage1_blocks(cfg, &grid_points(cfg)?, lin)?.program())
}

/// Stage-2 conic program at `lin` (compensator fixed at `lin.comp`).
pub fn stage2_program(cfg: &SynthesisConfig, lin: &LinearizationState) -> Result<ConicProgram> {
    Ok(stage2_blocks(cfg, &grid_points(cfg)?, lin, &lin.comp)?.program())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub stage: Stage,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    /// Wall-clock solve time. Strip it with [`SynthesisReport::without_timings`]
    /// when outputs must be reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_ms: Option<f64>,
    /// Fraction of the solver's step that was taken (1 unless backtracked).
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    MaxIterations,
}

/// A bounded constraint whose dense-grid peak exceeds its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub name: String,
    pub omega: f64,
    pub peak: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub status: ConvergenceStatus,
    pub iterations: usize,
    /// squared bound of the compensator stage
    pub gamma1: f64,
    /// squared bound of the filter stage, absent when only the compensator is synthesized
    pub gamma2: Option<f64>,
    pub hinf_bound1: f64,
    pub hinf_bound2: Option<f64>,
    pub compensator: CompensatorParams,
    pub filter: FilterParams,
    pub compensator_tf: TransferFunction,
    pub filter_tf: TransferFunction,
    pub trace: Vec<TraceRow>,
    pub stage1_variables: usize,
    pub stage2_variables: usize,
    pub grid_points_used: usize,
    pub verification: NormReport,
    pub violations: Vec<Violation>,
}

impl SynthesisReport {
    /// CSV `iter,stage,gamma1,gamma2,solve_ms`; `solve_ms` is empty once timings are stripped.
    pub fn trace_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("iter,stage,gamma1,gamma2,solve_ms\n");
        for r in &self.trace {
            let stage = match r.stage {
                Stage::Compensator => 1,
                Stage::Filter => 2,
            };
            let ms = r.solve_ms.map(|v| format!("{v:.3}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{ms}\n", r.iter, stage, opt(r.gamma1), opt(r.gamma2)));
        }
        out
    }

    /// The same report with every solve time removed, plus the removed times in trace order.
    pub fn without_timings(&self) -> (Self, Vec<f64>) {
        let mut out = self.clone();
        let times = out.trace.iter_mut().filter_map(|r| r.solve_ms.take()).collect();
        (out, times)
    }
}

/// Relative slack on the verification bounds so a boundary-tight solution passes.
const VERIFY_SLACK: f64 = 1e-6;

/// Solves one subproblem and returns the decision vector and its certified gamma.
fn run_stage(sub: &Subproblem, cfg: &SynthesisConfig, iteration: usize) -> Result<(Vec<f64>, f64, f64)> {
    let program = sub.program();
    let opts = SolverOptions {
        tol: cfg.solver_tol,
        ..SolverOptions::default()
    };
    let t0 = Instant::now();
    let sol = conic::solve(&program, &opts)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            return Err(Error::InfeasibleSubproblem {
                stage: sub.stage,
                iteration,
            })
        }
        other => {
            return Err(Error::SolverFailure {
                stage: sub.stage,
                iteration,
                reason: format!(
                    "{other:?} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
                    sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
                ),
            })
        }
    }
    let gi = sub.gamma_index();
    // lift gamma to the smallest value every block certifies at the returned point
    let needed = sub.required_gamma(&sol.x).ok_or_else(|| Error::SolverFailure {
        stage: sub.stage,
        iteration,
        reason: "returned point violates a >= 0".into(),
    })?;
    let gamma = sol.x[gi].max(needed);
    Ok((sol.x, gamma, ms))
}

fn comp_from(x: &[f64], cfg: &SynthesisConfig) -> Result<CompensatorParams> {
    let (h, o) = cfg.comp_orders;
    let mut y = x[h + 1..h + 1 + o].to_vec();
    y.push(1.0);
    CompensatorParams::new(Polynomial::new(x[..=h].to_vec()), Polynomial::new(y))
}

fn filt_from(x: &[f64], cfg: &SynthesisConfig) -> Result<FilterParams> {
    let (n, m) = cfg.filt_orders;
    let mut mc = x[n + 1..n + 1 + m].to_vec();
    mc.push(1.0);
    FilterParams::new(Polynomial::new(x[..=n].to_vec()), Polynomial::new(mc))
}

const MAX_HALVINGS: usize = 40;

/// Largest `t = 2^-k` such that `prev + t (new - prev)` passes `stable`, with
/// its gamma recomputed, or `t = 0` when every halving fails. Both ends satisfy
/// the convex subproblem constraints, so every point between them does too, at
/// no more than the reference gamma.
fn backtrack<F>(
    sub: &Subproblem,
    iteration: usize,
    prev: &[f64],
    new: Vec<f64>,
    gamma: f64,
    stable: F,
) -> Result<(Vec<f64>, f64, f64)>
where
    F: Fn(&[f64]) -> Result<bool>,
{
    if stable(&new)? {
        return Ok((new, gamma, 1.0));
    }
    let gi = sub.gamma_index();
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        t *= 0.5;
        let mut x: Vec<f64> = prev.iter().zip(&new).map(|(p, n)| p + t * (n - p)).collect();
        x[gi] = 0.0;
        if stable(&x)? {
            let g = sub.required_gamma(&x).ok_or_else(|| Error::SolverFailure {
                stage: sub.stage,
                iteration,
                reason: "backtracked point violates a >= 0".into(),
            })?;
            x[gi] = g;
            log::info!("iteration {iteration} {}: unstable iterate, took {t} of the step", sub.stage);
            return Ok((x, g, t));
        }
    }
    let mut x = prev.to_vec();
    x[gi] = 0.0;
    if !stable(&x)? {
        return Err(Error::UnstableIterate {
            stage: sub.stage,
            iteration,
        });
    }
    let g = sub.required_gamma(&x).ok_or_else(|| Error::SolverFailure {
        stage: sub.stage,
        iteration,
        reason: "previous iterate violates a >= 0".into(),
    })?;
    x[gi] = g;
    log::warn!("iteration {iteration} {}: no stable fraction of the step, keeping the previous iterate", sub.stage);
    Ok((x, g, 0.0))
}

/// Stage-1 decision vector at the linearization point (gamma slot zero).
fn stage1_vector(lin: &LinearizationState, cfg: &SynthesisConfig) -> Vec<f64> {
    let (h, o) = cfg.comp_orders;
    let mut x: Vec<f64> = (0..=h).map(|k| lin.comp.x().coeff(k)).collect();
    x.extend((0..o).map(|k| lin.comp.y().coeff(k)));
    x.push(0.0);
    x
}

fn stage2_vector(lin: &LinearizationState, cfg: &SynthesisConfig) -> Vec<f64> {
    let (n, m) = cfg.filt_orders;
    let mut x: Vec<f64> = (0..=n).map(|k| lin.filt.n().coeff(k)).collect();
    x.extend((0..m).map(|k| lin.filt.m().coeff(k)));
    x.push(0.0);
    x
}

/// The linearization point is feasible for its own subproblem with
/// `reference = required_gamma(point)`, so no solve may end above it.
/// `reference` equals the previous gamma of the stage unless the other stage
/// moved the coupled blocks in between.
fn check_descent(stage: Stage, iteration: usize, reference: Option<f64>, current: f64, tol: f64) -> Result<()> {
    if let Some(prev) = reference {
        if current > prev + 10.0 * tol * prev.abs().max(1.0) {
            return Err(Error::NonDescent {
                stage,
                iteration,
                previous: prev,
                current,
            });
        }
    }
    Ok(())
}

pub fn synthesize(cfg: &SynthesisConfig) -> Result<SynthesisReport> {
    synthesize_with(cfg, |_, _, _| Ok(()))
}

/// As [`synthesize`], calling `inspect(stage, iteration, program)` before every solve.
pub fn synthesize_with<F>(cfg: &SynthesisConfig, mut inspect: F) -> Result<SynthesisReport>
where
    F: FnMut(Stage, usize, &ConicProgram) -> Result<()>,
{
    cfg.validate()?;
    let points = grid_points(cfg)?;
    let mut lin = LinearizationState {
        comp: cfg.init_comp.clone(),
        filt: cfg.init_filt.clone(),
    };
    let both = cfg.stages == StageSelection::Both;
    let mut g1: Option<f64> = None;
    let mut g2: Option<f64> = None;
    let mut trace = Vec::new();
    let mut status = ConvergenceStatus::MaxIterations;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let start = lin.clone();

        let sub1 = stage1_blocks(cfg, &points, &start)?;
        inspect(Stage::Compensator, it, &sub1.program())?;
        let ref1 = g1.and(sub1.required_gamma(&stage1_vector(&start, cfg)));
        let (x1, gamma1, ms1) = run_stage(&sub1, cfg, it)?;
        let (x1, gamma1, step1) = if cfg.backtrack_unstable {
            backtrack(&sub1, it, &stage1_vector(&start, cfg), x1, gamma1, |x| {
                let (outer, _, _) = characteristic_polynomials(&comp_from(x, cfg)?, &start.filt, &cfg.plants.g);
                Ok(decays_faster_than(&outer, cfg.min_decay_rate).unwrap_or(false))
            })?
        } else {
            (x1, gamma1, 1.0)
        };
        check_descent(Stage::Compensator, it, ref1, gamma1, cfg.solver_tol)?;
        if let (Some(r), Some(p)) = (ref1, g1) {
            if r > p {
                log::info!("iteration {it}: the filter update raised the stage-1 reference from {p:.6} to {r:.6}");
            }
        }
        let comp = comp_from(&x1, cfg)?;
        log::info!("iteration {it} stage 1: gamma1 = {gamma1:.6} ({ms1:.1} ms)");
        trace.push(TraceRow {
            iter: it,
            stage: Stage::Compensator,
            gamma1: Some(gamma1),
            gamma2: g2,
            solve_ms: Some(ms1),
            step: step1,
        });
        let d1 = g1.map_or(f64::INFINITY, |g| (gamma1 - g).abs());
        g1 = Some(gamma1);

        let mut d2 = 0.0;
        let mut filt = start.filt.clone();
        if both {
            let fixed = match cfg.sweep_update {
                SweepUpdate::AfterEachStage => &comp,
                SweepUpdate::AfterSweep => &start.comp,
            };
            let sub2 = stage2_blocks(cfg, &points, &start, fixed)?;
            inspect(Stage::Filter, it, &sub2.program())?;
            let ref2 = g2.and(sub2.required_gamma(&stage2_vector(&start, cfg)));
            let (x2, gamma2, ms2) = run_stage(&sub2, cfg, it)?;
            let (x2, gamma2, step2) = if cfg.backtrack_unstable {
                backtrack(&sub2, it, &stage2_vector(&start, cfg), x2, gamma2, |x| {
                    let f = filt_from(x, cfg)?;
                    let (_, inner, combined) = characteristic_polynomials(fixed, &f, &cfg.plants.g);
                    let fast = |p| decays_faster_than(p, cfg.min_decay_rate).unwrap_or(false);
                    Ok(fast(&inner) && fast(&combined))
                })?
            } else {
                (x2, gamma2, 1.0)
            };
            check_descent(Stage::Filter, it, ref2, gamma2, cfg.solver_tol)?;
            filt = filt_from(&x2, cfg)?;
            log::info!("iteration {it} stage 2: gamma2 = {gamma2:.6} ({ms2:.1} ms)");
            trace.push(TraceRow {
                iter: it,
                stage: Stage::Filter,
                gamma1: g1,
                gamma2: Some(gamma2),
                solve_ms: Some(ms2),
                step: step2,
            });
            d2 = g2.map_or(f64::INFINITY, |g| (gamma2 - g).abs());
            g2 = Some(gamma2);
        }
        lin = LinearizationState { comp, filt };
        if d1 + d2 <= cfg.epsilon {
            status = ConvergenceStatus::Converged;
            break;
        }
    }

    let gamma1 = g1.expect("at least one iteration");
    let dense = cfg.grid.densify(cfg.verify_factor);
    let bounds = NormBounds::from_gammas(gamma1, g2.unwrap_or(f64::INFINITY), VERIFY_SLACK);
    let mut verification = verify_norms(&lin.comp, &lin.filt, &cfg.plants, &cfg.weights, &dense, Some(bounds))?;
    if !both {
        // the stage-2 constraints were never imposed
        for row in verification.rows.iter_mut() {
            if row.group == crate::loops::ConstraintGroup::Stage2 {
                row.bound = None;
                row.pass = None;
            }
        }
    }
    let violations = verification
        .rows
        .iter()
        .filter(|r| r.pass == Some(false))
        .map(|r| Violation {
            name: r.name.clone(),
            omega: r.omega_at_peak,
            peak: r.peak,
            bound: r.bound.unwrap_or(f64::NAN),
        })
        .collect::<Vec<_>>();
    for v in &violations {
        log::warn!("{} peaks at {:.4} > {:.4} near {:.1} rad/s", v.name, v.peak, v.bound, v.omega);
    }
    Ok(SynthesisReport {
        status,
        iterations,
        gamma1,
        gamma2: g2,
        hinf_bound1: gamma1.sqrt(),
        hinf_bound2: g2.map(f64::sqrt),
        compensator_tf: lin.comp.transfer_function(),
        filter_tf: lin.filt.q(),
        compensator: lin.comp,
        filter: lin.filt,
        trace,
        stage1_variables: cfg.stage1_variables(),
        stage2_variables: cfg.stage2_variables(),
        grid_points_used: points.performance.len(),
        verification,
        violations,
    })
}
