//! Cone arithmetic for the product of a nonnegative orthant and second-order cones.
//!
//! A second-order cone vector is `(t, u)` with `t >= |u|`. Scaling follows
//! Nesterov-Todd: `W z = W^-1 s = lambda`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Orthant,
    Soc,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub kind: Kind,
    pub start: usize,
    pub dim: usize,
}

/// Per-block NT scaling data.
#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    /// `w_i = sqrt(s_i / z_i)`
    Orthant(Vec<f64>),
    /// `W = eta [[w0, w1^T], [w1, I + w1 w1^T / (1 + w0)]]`
    Soc { eta: f64, w: Vec<f64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Cone {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl Cone {
    pub fn new(orthant: usize, socs: &[usize]) -> Self {
        let mut blocks = Vec::with_capacity(socs.len() + 1);
        let mut start = 0;
        if orthant > 0 {
            blocks.push(Block {
                kind: Kind::Orthant,
                start,
                dim: orthant,
            });
            start += orthant;
        }
        for &d in socs {
            blocks.push(Block {
                kind: Kind::Soc,
                start,
                dim: d,
            });
            start += d;
        }
        Self { blocks, dim: start }
    }

    /// Barrier degree: one per orthant coordinate, one per second-order cone.
    pub fn degree(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                Kind::Orthant => b.dim,
                Kind::Soc => 1,
            })
            .sum()
    }

    /// Smallest "eigenvalue" of `x`; positive iff `x` is interior.
    pub fn min_eig(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for b in &self.blocks {
            let v = &x[b.start..b.start + b.dim];
            let e = match b.kind {
                Kind::Orthant => v.iter().copied().fold(f64::INFINITY, f64::min),
                Kind::Soc => v[0] - norm(&v[1..]),
            };
            m = m.min(e);
        }
        m
    }

    /// Adds `t e` where `e` is the cone identity.
    pub fn add_identity(&self, x: &mut [f64], t: f64) {
        for b in &self.blocks {
            match b.kind {
                Kind::Orthant => x[b.start..b.start + b.dim].iter_mut().for_each(|v| *v += t),
                Kind::Soc => x[b.start] += t,
            }
        }
    }

    pub fn scaling(&self, s: &[f64], z: &[f64]) -> Option<Vec<Scaling>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (sb, zb) = (&s[b.start..b.start + b.dim], &z[b.start..b.start + b.dim]);
            match b.kind {
                Kind::Orthant => {
                    let w: Vec<f64> = sb.iter().zip(zb).map(|(a, c)| (a / c).sqrt()).collect();
                    if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                        return None;
                    }
                    out.push(Scaling::Orthant(w));
                }
                Kind::Soc => {
                    let sr = soc_res(sb);
                    let zr = soc_res(zb);
                    if !(sr > 0.0 && zr > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (sr.sqrt(), zr.sqrt());
                    let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
                    let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
                    let dot: f64 = sbar.iter().zip(&zbar).map(|(a, c)| a * c).sum();
                    let gamma = ((1.0 + dot) / 2.0).sqrt();
                    let mut w = Vec::with_capacity(b.dim);
                    w.push((sbar[0] + zbar[0]) / (2.0 * gamma));
                    for i in 1..b.dim {
                        w.push((sbar[i] - zbar[i]) / (2.0 * gamma));
                    }
                    // w is a unit hyperbolic vector; restore w0 from w1 to limit drift
                    let w1n = norm(&w[1..]);
                    w[0] = (1.0 + w1n * w1n).sqrt();
                    let eta = (sn / zn).sqrt();
                    if !eta.is_finite() || !w.iter().all(|v| v.is_finite()) {
                        return None;
                    }
                    out.push(Scaling::Soc { eta, w });
                }
            }
        }
        Some(out)
    }

    /// `W v` (or `W^-1 v` when `inverse`).
    pub fn apply_w(&self, sc: &[Scaling], v: &[f64], out: &mut [f64], inverse: bool) {
        for (b, s) in self.blocks.iter().zip(sc) {
            let (vb, ob) = (&v[b.start..b.start + b.dim], &mut out[b.start..b.start + b.dim]);
            match s {
                Scaling::Orthant(w) => {
                    for i in 0..b.dim {
                        ob[i] = if inverse { vb[i] / w[i] } else { vb[i] * w[i] };
                    }
                }
                Scaling::Soc { eta, w } => {
                    let sgn = if inverse { -1.0 } else { 1.0 };
                    let f = if inverse { 1.0 / eta } else { *eta };
                    let w1v1: f64 = w[1..].iter().zip(&vb[1..]).map(|(a, c)| a * c).sum();
                    ob[0] = f * (w[0] * vb[0] + sgn * w1v1);
                    let k = sgn * vb[0] + w1v1 / (1.0 + w[0]);
                    for i in 1..b.dim {
                        ob[i] = f * (vb[i] + k * w[i]);
                    }
                }
            }
        }
    }

    /// Jordan product `x o y`.
    pub fn circ(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            let r = b.start..b.start + b.dim;
            let (xb, yb, ob) = (&x[r.clone()], &y[r.clone()], &mut out[r]);
            match b.kind {
                Kind::Orthant => {
                    for i in 0..b.dim {
                        ob[i] = xb[i] * yb[i];
                    }
                }
                Kind::Soc => {
                    ob[0] = xb.iter().zip(yb).map(|(a, c)| a * c).sum();
                    for i in 1..b.dim {
                        ob[i] = xb[0] * yb[i] + yb[0] * xb[i];
                    }
                }
            }
        }
    }

    /// Solves `lambda o x = d` for `x`.
    pub fn circ_div(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            let r = b.start..b.start + b.dim;
            let (lb, db, ob) = (&lambda[r.clone()], &d[r.clone()], &mut out[r]);
            match b.kind {
                Kind::Orthant => {
                    for i in 0..b.dim {
                        ob[i] = db[i] / lb[i];
                    }
                }
                Kind::Soc => {
                    let rho = soc_res(lb);
                    let l1d1: f64 = lb[1..].iter().zip(&db[1..]).map(|(a, c)| a * c).sum();
                    let x0 = (lb[0] * db[0] - l1d1) / rho;
                    ob[0] = x0;
                    for i in 1..b.dim {
                        ob[i] = (db[i] - x0 * lb[i]) / lb[0];
                    }
                }
            }
        }
    }

    /// Largest `alpha` with `x + alpha d` in the cone (`inf` if unbounded).
    pub fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for b in &self.blocks {
            let r = b.start..b.start + b.dim;
            let (xb, db) = (&x[r.clone()], &d[r]);
            match b.kind {
                Kind::Orthant => {
                    for i in 0..b.dim {
                        if db[i] < 0.0 {
                            alpha = alpha.min(-xb[i] / db[i]);
                        }
                    }
                }
                Kind::Soc => alpha = alpha.min(soc_step(xb, db)),
            }
        }
        alpha
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn soc_res(v: &[f64]) -> f64 {
    // (t - |u|)(t + |u|) is more accurate than t^2 - |u|^2 near the boundary
    let u = norm(&v[1..]);
    (v[0] - u) * (v[0] + u)
}

/// First `alpha > 0` where `x + alpha d` leaves the second-order cone.
fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    let qa = d[0] * d[0] - d[1..].iter().map(|v| v * v).sum::<f64>();
    let qb = 2.0 * (x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(a, c)| a * c).sum::<f64>());
    let qc = soc_res(x).max(0.0);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -x[0] / d[0];
    }
    if qa.abs() <= f64::EPSILON * (qb.abs() + qc) {
        if qb < 0.0 {
            alpha = alpha.min(-qc / qb);
        }
        return alpha;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return alpha;
    }
    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
    for r in [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }] {
        if r > 0.0 {
            alpha = alpha.min(r);
        }
    }
    alpha
}
