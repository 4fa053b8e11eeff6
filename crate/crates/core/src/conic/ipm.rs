//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps.
//!
//! Standard form after reduction: minimize `c.x` subject to `G x + s = h`,
//! `s` in `K`, where `K` is an orthant (variable bounds) times second-order
//! cones (one per rotated cone). The embedding variables are `(x, s, z, tau, kappa)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cones::{norm, Cone, Scaling};
use super::{residuals, ConicProgram, Solution, Status};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Ruiz equilibration passes; 0 disables scaling.
    pub ruiz_passes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            ruiz_passes: 15,
        }
    }
}

const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 3;

struct Standard {
    g: DMatrix<f64>,
    h: DVector<f64>,
    c: DVector<f64>,
    cone: Cone,
    /// original index of each reduced column
    cols: Vec<usize>,
    /// column scaling: original = col_scale * reduced
    col_scale: Vec<f64>,
    /// values for eliminated variables
    x_fixed: Vec<f64>,
}

fn reduce(p: &ConicProgram) -> std::result::Result<Standard, Status> {
    let n = p.nvars;
    let mut x_fixed = vec![0.0; n];
    let mut cols = Vec::new();
    for j in 0..n {
        if p.lower[j] == p.upper[j] {
            x_fixed[j] = p.lower[j];
        } else {
            cols.push(j);
        }
    }
    let nr = cols.len();
    let mut rows_g: Vec<Vec<f64>> = Vec::new();
    let mut rows_h: Vec<f64> = Vec::new();
    for (k, &j) in cols.iter().enumerate() {
        if p.lower[j].is_finite() {
            // s = x_j - l
            let mut r = vec![0.0; nr];
            r[k] = -1.0;
            rows_g.push(r);
            rows_h.push(-p.lower[j]);
        }
        if p.upper[j].is_finite() {
            let mut r = vec![0.0; nr];
            r[k] = 1.0;
            rows_g.push(r);
            rows_h.push(p.upper[j]);
        }
    }
    let orthant = rows_g.len();
    // each affine value v0 + v.x becomes the row h = v0 + fixed part, G = -v
    let push = |aff: &super::Affine, scale: f64, rows_g: &mut Vec<Vec<f64>>, rows_h: &mut Vec<f64>| {
        let fixed: f64 = aff.coeffs.iter().zip(&x_fixed).map(|(a, b)| a * b).sum();
        rows_h.push(scale * (aff.constant + fixed));
        rows_g.push(cols.iter().map(|&j| -scale * aff.coeffs[j]).collect());
    };
    let mut socs = Vec::with_capacity(p.cones.len());
    for cone in &p.cones {
        let sum = super::Affine {
            constant: cone.a.constant + cone.g.constant,
            coeffs: cone.a.coeffs.iter().zip(&cone.g.coeffs).map(|(a, b)| a + b).collect(),
        };
        let diff = super::Affine {
            constant: cone.a.constant - cone.g.constant,
            coeffs: cone.a.coeffs.iter().zip(&cone.g.coeffs).map(|(a, b)| a - b).collect(),
        };
        push(&sum, 1.0, &mut rows_g, &mut rows_h);
        push(&diff, 1.0, &mut rows_g, &mut rows_h);
        for b in &cone.b {
            push(&b.re, 2.0, &mut rows_g, &mut rows_h);
            push(&b.im, 2.0, &mut rows_g, &mut rows_h);
        }
        socs.push(2 + 2 * cone.b.len());
    }
    let m = rows_g.len();
    let g = DMatrix::from_fn(m, nr, |i, k| rows_g[i][k]);
    let h = DVector::from_vec(rows_h);
    let c = DVector::from_iterator(nr, cols.iter().map(|&j| p.objective[j]));
    for k in 0..nr {
        if g.column(k).iter().all(|v| *v == 0.0) {
            if c[k] != 0.0 {
                return Err(Status::Unbounded);
            }
        }
    }
    Ok(Standard {
        g,
        h,
        c,
        cone: Cone::new(orthant, &socs),
        cols,
        col_scale: vec![1.0; nr],
        x_fixed,
    })
}

/// Ruiz scaling that is uniform inside each second-order block so the cone is preserved.
fn equilibrate(st: &mut Standard, passes: usize) -> Vec<f64> {
    let (m, n) = st.g.shape();
    let mut row_scale = vec![1.0; m];
    for _ in 0..passes {
        let mut d = vec![1.0; m];
        for b in &st.cone.blocks {
            let per_row = matches!(b.kind, super::cones::Kind::Orthant);
            if per_row {
                for i in b.start..b.start + b.dim {
                    let r = st.g.row(i).amax();
                    if r > 0.0 {
                        d[i] = 1.0 / r.sqrt();
                    }
                }
            } else {
                let r = (b.start..b.start + b.dim).map(|i| st.g.row(i).amax()).fold(0.0, f64::max);
                if r > 0.0 {
                    d[b.start..b.start + b.dim].iter_mut().for_each(|v| *v = 1.0 / r.sqrt());
                }
            }
        }
        let mut e = vec![1.0; n];
        for (k, ek) in e.iter_mut().enumerate() {
            let r = st.g.column(k).amax();
            if r > 0.0 {
                *ek = 1.0 / r.sqrt();
            }
        }
        for k in 0..n {
            for i in 0..m {
                st.g[(i, k)] *= d[i] * e[k];
            }
        }
        for i in 0..m {
            row_scale[i] *= d[i];
        }
        for k in 0..n {
            st.col_scale[k] *= e[k];
        }
    }
    for i in 0..m {
        st.h[i] *= row_scale[i];
    }
    for k in 0..n {
        st.c[k] *= st.col_scale[k];
    }
    row_scale
}

/// Thin QR of `W^-1 G` for the current scaling.
struct Kkt<'a> {
    st: &'a Standard,
    sc: Vec<Scaling>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl<'a> Kkt<'a> {
    fn new(st: &'a Standard, sc: Vec<Scaling>) -> Option<Self> {
        let (m, n) = st.g.shape();
        let mut gw = DMatrix::zeros(m, n);
        let mut buf = vec![0.0; m];
        for k in 0..n {
            st.cone.apply_w(&sc, st.g.column(k).as_slice(), &mut buf, true);
            gw.column_mut(k).copy_from_slice(&buf);
        }
        let qr = gw.qr();
        let (q, r) = (qr.q(), qr.r());
        let dmax = r.diagonal().amax();
        if !(dmax.is_finite() && dmax > 0.0) || r.diagonal().iter().any(|d| d.abs() <= 1e-15 * dmax) {
            return None;
        }
        Some(Self { st, sc, q, r })
    }

    fn w(&self, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.st.cone.apply_w(&self.sc, v, &mut out, inverse);
        out
    }

    /// Solves `[0 G^T; G -W^2] [x; z] = [r1; r2]` through the QR factors of
    /// `A = W^-1 G`: with `b = W^-1 r2` and `u = R^-T r1`, `x = R^-1 (u + Q^T b)`
    /// and `W z = Q (u + Q^T b) - b`. This never forms `A^T A`.
    fn solve_xz(&self, r1: &DVector<f64>, r2: &[f64]) -> (DVector<f64>, Vec<f64>) {
        let b = DVector::from_vec(self.w(r2, true));
        let u = self.r.tr_solve_upper_triangular(r1).unwrap_or_else(|| r1.clone());
        let v = u + self.q.tr_mul(&b);
        let x = self.r.solve_upper_triangular(&v).unwrap_or_else(|| v.clone());
        let wz = &self.q * v - b;
        let z = self.w(wz.as_slice(), true);
        (x, z)
    }
}

struct Iterate {
    x: DVector<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: DVector<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
    kappa: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn initial_point(st: &Standard) -> Option<Iterate> {
    let qr = st.g.clone().qr();
    let r = qr.r();
    let q = qr.q();
    // x = argmin |G x - h|, s = h - G x
    let x = r.solve_upper_triangular(&q.tr_mul(&st.h))?;
    let mut s: Vec<f64> = (&st.h - &st.g * &x).iter().copied().collect();
    // z = -G (G^T G)^-1 c, the least-norm solution of G^T z = -c
    let y = r.tr_solve_upper_triangular(&(-&st.c))?;
    let mut z: Vec<f64> = (&q * y).iter().copied().collect();
    for v in [&mut s, &mut z] {
        let a = st.cone.min_eig(v);
        if a >= -1e-8 * (1.0 + norm(v)) {
            st.cone.add_identity(v, 1.0 + a.abs());
        } else {
            st.cone.add_identity(v, 1.0 - a);
        }
    }
    debug_assert_eq!(s.len(), st.cone.dim);
    Some(Iterate {
        x,
        s,
        z,
        tau: 1.0,
        kappa: 1.0,
    })
}

struct Residuals {
    rx: DVector<f64>,
    rz: Vec<f64>,
    rtau: f64,
}

fn embedding_residuals(st: &Standard, it: &Iterate) -> Residuals {
    let zv = DVector::from_column_slice(&it.z);
    let rx = st.g.tr_mul(&zv) + &st.c * it.tau;
    let gx = &st.g * &it.x;
    let rz: Vec<f64> = (0..it.s.len()).map(|i| gx[i] + it.s[i] - st.h[i] * it.tau).collect();
    let rtau = st.c.dot(&it.x) + st.h.dot(&zv) + it.kappa;
    Residuals { rx, rz, rtau }
}

/// Right-hand side `d` of the Newton system `L(delta) = -d`.
struct Rhs {
    x: DVector<f64>,
    z: Vec<f64>,
    tau: f64,
    s: Vec<f64>,
    kappa: f64,
}

fn direction_once(kkt: &Kkt, it: &Iterate, lambda: &[f64], x2: &DVector<f64>, z2: &[f64], d: &Rhs) -> Direction {
    let st = kkt.st;
    let mut ldiv = vec![0.0; d.s.len()];
    st.cone.circ_div(lambda, &d.s, &mut ldiv);
    let w_ldiv = kkt.w(&ldiv, false);
    let r2: Vec<f64> = d.z.iter().zip(&w_ldiv).map(|(a, b)| -a + b).collect();
    let (x1, z1) = kkt.solve_xz(&(-&d.x), &r2);
    let zv1 = DVector::from_column_slice(&z1);
    let zv2 = DVector::from_column_slice(z2);
    let r3 = -d.tau + d.kappa / it.tau;
    let denom = st.c.dot(x2) + st.h.dot(&zv2) - it.kappa / it.tau;
    let d_tau = (r3 - st.c.dot(&x1) - st.h.dot(&zv1)) / denom;
    let d_x = x1 + x2 * d_tau;
    let d_z: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a + d_tau * b).collect();
    let w_dz = kkt.w(&d_z, false);
    let inner: Vec<f64> = ldiv.iter().zip(&w_dz).map(|(a, b)| a + b).collect();
    let d_s: Vec<f64> = kkt.w(&inner, false).iter().map(|v| -v).collect();
    let d_kappa = -(d.kappa + it.kappa * d_tau) / it.tau;
    Direction {
        x: d_x,
        s: d_s,
        z: d_z,
        tau: d_tau,
        kappa: d_kappa,
    }
}

/// `-d - L(delta)`, the defect of a computed direction, returned negated so it
/// can be fed back as a right-hand side.
fn defect(kkt: &Kkt, it: &Iterate, lambda: &[f64], d: &Rhs, v: &Direction) -> (Rhs, f64) {
    let st = kkt.st;
    let dz = DVector::from_column_slice(&v.z);
    let l1 = st.g.tr_mul(&dz) + &st.c * v.tau;
    let gx = &st.g * &v.x;
    let l2: Vec<f64> = (0..v.s.len()).map(|i| gx[i] + v.s[i] - st.h[i] * v.tau).collect();
    let l3 = st.c.dot(&v.x) + st.h.dot(&dz) + v.kappa;
    let wz = kkt.w(&v.z, false);
    let ws = kkt.w(&v.s, true);
    let sum: Vec<f64> = wz.iter().zip(&ws).map(|(a, b)| a + b).collect();
    let mut l4 = vec![0.0; sum.len()];
    st.cone.circ(lambda, &sum, &mut l4);
    let l5 = it.tau * v.kappa + it.kappa * v.tau;
    // the correction solves L(c) = -d - L(v), i.e. right-hand side d + L(v)
    let r = Rhs {
        x: &d.x + l1,
        z: d.z.iter().zip(&l2).map(|(a, b)| a + b).collect(),
        tau: d.tau + l3,
        s: d.s.iter().zip(&l4).map(|(a, b)| a + b).collect(),
        kappa: d.kappa + l5,
    };
    let size = r.x.amax()
        .max(r.z.iter().fold(0.0, |m, v| m.max(v.abs())))
        .max(r.s.iter().fold(0.0, |m, v| m.max(v.abs())))
        .max(r.tau.abs())
        .max(r.kappa.abs());
    (r, size)
}

fn rhs_size(d: &Rhs) -> f64 {
    d.x.amax()
        .max(d.z.iter().fold(0.0, |m, v| m.max(v.abs())))
        .max(d.s.iter().fold(0.0, |m, v| m.max(v.abs())))
        .max(d.tau.abs())
        .max(d.kappa.abs())
}

/// Newton direction with a few rounds of iterative refinement on the full system.
fn direction(kkt: &Kkt, it: &Iterate, lambda: &[f64], x2: &DVector<f64>, z2: &[f64], d: &Rhs) -> Direction {
    let mut v = direction_once(kkt, it, lambda, x2, z2, d);
    let scale = rhs_size(d).max(f64::MIN_POSITIVE);
    let (mut r, mut err) = defect(kkt, it, lambda, d, &v);
    for _ in 0..REFINE_STEPS {
        if !(err > 1e-14 * scale) {
            break;
        }
        let c = direction_once(kkt, it, lambda, x2, z2, &r);
        let trial = Direction {
            x: &v.x + &c.x,
            s: v.s.iter().zip(&c.s).map(|(a, b)| a + b).collect(),
            z: v.z.iter().zip(&c.z).map(|(a, b)| a + b).collect(),
            tau: v.tau + c.tau,
            kappa: v.kappa + c.kappa,
        };
        let (r2, e2) = defect(kkt, it, lambda, d, &trial);
        if !(e2 < err) {
            break;
        }
        v = trial;
        r = r2;
        err = e2;
    }
    v
}

fn step_length(cone: &Cone, it: &Iterate, d: &Direction) -> f64 {
    let mut a = cone.max_step(&it.s, &d.s).min(cone.max_step(&it.z, &d.z));
    if d.tau < 0.0 {
        a = a.min(-it.tau / d.tau);
    }
    if d.kappa < 0.0 {
        a = a.min(-it.kappa / d.kappa);
    }
    a
}

#[derive(Clone, Copy)]
struct Progress {
    pres: f64,
    dres: f64,
    gap: f64,
    relgap: f64,
}

impl Progress {
    fn converged(&self, tol: f64) -> bool {
        self.pres <= tol && self.dres <= tol && (self.gap <= tol || self.relgap <= tol)
    }
}

/// Solves `p`; the returned status says whether the point is usable.
/// Original-space point for the scaled iterate `x / tau`.
fn unscale(st: &Standard, x: &DVector<f64>, tau: f64) -> Vec<f64> {
    let mut out = st.x_fixed.clone();
    for (k, &j) in st.cols.iter().enumerate() {
        out[j] = x[k] / tau * st.col_scale[k];
    }
    out
}

pub fn solve(p: &ConicProgram, opts: &SolverOptions) -> Result<Solution> {
    p.validate()?;
    let fail = |status: Status| Solution {
        x: vec![f64::NAN; p.nvars],
        objective_value: f64::NAN,
        status,
        max_cone_residual: f64::NAN,
        iterations: 0,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        gap: f64::NAN,
        reduced_accuracy: false,
    };
    let mut st = match reduce(p) {
        Ok(s) => s,
        Err(status) => return Ok(fail(status)),
    };
    if st.cols.is_empty() {
        // everything fixed: feasibility is a residual check
        let x = st.x_fixed.clone();
        let r = residuals(p, &x);
        let status = if r <= opts.tol { Status::Optimal } else { Status::Infeasible };
        return Ok(Solution {
            objective_value: dot(&p.objective, &x),
            x,
            status,
            max_cone_residual: r,
            iterations: 0,
            primal_residual: r,
            dual_residual: 0.0,
            gap: 0.0,
            reduced_accuracy: false,
        });
    }
    if st.g.nrows() == 0 {
        let status = if st.c.iter().all(|v| *v == 0.0) { Status::Optimal } else { Status::Unbounded };
        let mut out = fail(status);
        if status == Status::Optimal {
            out.x = st.x_fixed.clone();
            out.objective_value = dot(&p.objective, &out.x);
            out.max_cone_residual = residuals(p, &out.x);
        }
        return Ok(out);
    }
    equilibrate(&mut st, opts.ruiz_passes);
    let st = st;
    let cone = &st.cone;
    let nu = cone.degree() as f64;
    let hnorm = st.h.norm().max(1.0);
    let cnorm = st.c.norm().max(1.0);

    let Some(mut it) = initial_point(&st) else {
        return Ok(fail(Status::NumericalFailure));
    };

    let mut best: Option<(Progress, Vec<f64>)> = None;
    let mut status = Status::NumericalFailure;
    let mut iterations = 0;
    let mut last: Option<Progress> = None;
    for iter in 0..=opts.max_iter {
        iterations = iter;
        let res = embedding_residuals(&st, &it);
        let zv = DVector::from_column_slice(&it.z);
        let pcost = st.c.dot(&it.x) / it.tau;
        let dcost = -st.h.dot(&zv) / it.tau;
        let gap = dot(&it.s, &it.z) / (it.tau * it.tau);
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };
        let prog = Progress {
            pres: norm(&res.rz) / it.tau / hnorm,
            dres: res.rx.norm() / it.tau / cnorm,
            gap,
            relgap,
        };
        if prog.converged(opts.tol) && residuals(p, &unscale(&st, &it.x, it.tau)) <= opts.tol {
            status = Status::Optimal;
            last = Some(prog);
            break;
        }
        let hz = st.h.dot(&zv);
        if it.kappa > it.tau && hz < 0.0 && st.g.tr_mul(&zv).norm() <= opts.tol * -hz {
            status = Status::Infeasible;
            last = Some(prog);
            break;
        }
        let cx = st.c.dot(&it.x);
        if it.kappa > it.tau && cx < 0.0 {
            let gxs: Vec<f64> = (&st.g * &it.x).iter().zip(&it.s).map(|(a, b)| a + b).collect();
            if norm(&gxs) <= opts.tol * -cx {
                status = Status::Unbounded;
                last = Some(prog);
                break;
            }
        }
        let xs: Vec<f64> = it.x.iter().map(|v| v / it.tau).collect();
        let better = best.as_ref().map_or(true, |(b, _)| {
            prog.pres.max(prog.dres).max(prog.gap.min(prog.relgap))
                < b.pres.max(b.dres).max(b.gap.min(b.relgap))
        });
        if better {
            best = Some((
                Progress {
                    pres: prog.pres,
                    dres: prog.dres,
                    gap: prog.gap,
                    relgap: prog.relgap,
                },
                xs,
            ));
        }
        last = Some(prog);
        if iter == opts.max_iter {
            break;
        }

        let Some(sc) = cone.scaling(&it.s, &it.z) else { break };
        let Some(kkt) = Kkt::new(&st, sc) else { break };
        let lambda = kkt.w(&it.z, false);
        let (x2, z2) = kkt.solve_xz(&(-&st.c), st.h.as_slice());

        let mut ll = vec![0.0; lambda.len()];
        cone.circ(&lambda, &lambda, &mut ll);
        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (nu + 1.0);

        let aff = direction(
            &kkt,
            &it,
            &lambda,
            &x2,
            &z2,
            &Rhs {
                x: res.rx.clone(),
                z: res.rz.clone(),
                tau: res.rtau,
                s: ll.clone(),
                kappa: it.kappa * it.tau,
            },
        );
        let alpha_aff = step_length(cone, &it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        let ws = kkt.w(&aff.s, true);
        let wz = kkt.w(&aff.z, false);
        let mut corr = vec![0.0; ll.len()];
        cone.circ(&ws, &wz, &mut corr);
        let mut ds: Vec<f64> = ll.iter().zip(&corr).map(|(a, b)| a + b).collect();
        cone.add_identity(&mut ds, -sigma * mu);
        let f = 1.0 - sigma;
        let dx = &res.rx * f;
        let dz: Vec<f64> = res.rz.iter().map(|v| v * f).collect();
        let dkappa = it.kappa * it.tau + aff.kappa * aff.tau - sigma * mu;
        let d = direction(
            &kkt,
            &it,
            &lambda,
            &x2,
            &z2,
            &Rhs {
                x: dx,
                z: dz,
                tau: res.rtau * f,
                s: ds,
                kappa: dkappa,
            },
        );
        let alpha = (STEP_FRACTION * step_length(cone, &it, &d)).min(1.0);
        if !(alpha.is_finite() && alpha > 1e-12) || !d.x.iter().all(|v| v.is_finite()) {
            break;
        }
        it.x += &d.x * alpha;
        for (v, dv) in it.s.iter_mut().zip(&d.s) {
            *v += alpha * dv;
        }
        for (v, dv) in it.z.iter_mut().zip(&d.z) {
            *v += alpha * dv;
        }
        it.tau += alpha * d.tau;
        it.kappa += alpha * d.kappa;
    }

    let (prog, xs, reduced) = match (status, best) {
        (Status::Optimal, _) => (last.unwrap(), it.x.iter().map(|v| v / it.tau).collect(), false),
        (Status::NumericalFailure, Some((b, xs))) if b.converged(opts.tol * 1e3) => {
            status = Status::Optimal;
            (b, xs, true)
        }
        (_, _) => {
            let mut out = fail(status);
            out.iterations = iterations;
            if let Some(l) = last {
                out.primal_residual = l.pres;
                out.dual_residual = l.dres;
                out.gap = l.gap;
            }
            return Ok(out);
        }
    };
    let x = unscale(&st, &DVector::from_vec(xs), 1.0);
    Ok(Solution {
        objective_value: dot(&p.objective, &x),
        max_cone_residual: residuals(p, &x),
        x,
        status,
        iterations,
        primal_residual: prog.pres,
        dual_residual: prog.dres,
        gap: prog.gap,
        reduced_accuracy: reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Affine, ComplexAffine, RotatedCone};
    use super::*;

    fn cplx(re: Affine) -> ComplexAffine {
        let n = re.coeffs.len();
        ComplexAffine { re, im: Affine::zero(n) }
    }

    #[test]
    fn smallest_gamma_bounding_a_constant() {
        // min g  s.t. |3|^2 <= 1 * g
        let mut p = ConicProgram::new(vec![1.0]);
        p.push(RotatedCone {
            a: Affine::constant(1, 1.0),
            g: Affine::var(1, 0),
            b: vec![cplx(Affine::constant(1, 3.0))],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.x[0] - 9.0).abs() < 1e-6, "{s:?}");
        assert!(s.max_cone_residual <= 1e-7);
    }

    #[test]
    fn least_squares_through_cone() {
        // min g  s.t. |x - 2|^2 + |x + 1 i|^2 ... with x free: optimum x = 1, g = 2 + 1
        let mut p = ConicProgram::new(vec![0.0, 1.0]);
        let mut re1 = Affine::var(2, 0);
        re1.constant = -2.0;
        let b2 = ComplexAffine {
            re: Affine::var(2, 0),
            im: Affine::constant(2, 1.0),
        };
        p.push(RotatedCone {
            a: Affine::constant(2, 1.0),
            g: Affine::var(2, 1),
            b: vec![cplx(re1), b2],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        // (x-2)^2 + x^2 + 1 minimized at x = 1, value 3
        assert!((s.x[0] - 1.0).abs() < 1e-5, "{s:?}");
        assert!((s.objective_value - 3.0).abs() < 1e-7);
    }

    #[test]
    fn bounds_are_respected() {
        // min -x  s.t. x^2 <= 1 * 4, x <= 1.5
        let mut p = ConicProgram::new(vec![-1.0]);
        p.upper[0] = 1.5;
        p.push(RotatedCone {
            a: Affine::constant(1, 1.0),
            g: Affine::constant(1, 4.0),
            b: vec![cplx(Affine::var(1, 0))],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.x[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn fixed_variables_are_substituted() {
        // |x - 2|^2 <= gamma with x = 0
        let mut p = ConicProgram::new(vec![0.0, 1.0]);
        p.fix(0, 0.0);
        p.push(RotatedCone {
            a: Affine::constant(2, 1.0),
            g: Affine::var(2, 1),
            b: vec![cplx(Affine {
                constant: -2.0,
                coeffs: vec![1.0, 0.0],
            })],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasibility() {
        // a = -1 - x^2-free: a(x) = -1 is never nonnegative
        let mut p = ConicProgram::new(vec![1.0]);
        p.push(RotatedCone {
            a: Affine::constant(1, -1.0),
            g: Affine::var(1, 0),
            b: vec![],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible, "{s:?}");
    }

    #[test]
    fn detects_unboundedness() {
        // min -g  s.t. 1 <= 1 * g
        let mut p = ConicProgram::new(vec![-1.0]);
        p.push(RotatedCone {
            a: Affine::constant(1, 1.0),
            g: Affine::var(1, 0),
            b: vec![cplx(Affine::constant(1, 1.0))],
        });
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Unbounded, "{s:?}");
    }
}
