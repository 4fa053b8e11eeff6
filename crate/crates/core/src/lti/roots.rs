//! Polynomial roots (balanced companion matrix) and the Routh–Hurwitz test.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::Polynomial;
use crate::error::{Error, Result};

/// Real parts at or above this are treated as not strictly stable.
pub const STABILITY_MARGIN: f64 = -1e-9;

/// All `deg(p)` roots of `p`.
///
/// Exact zero roots are deflated first; the rest come from the eigenvalues of
/// the balanced companion matrix followed by one Newton polish per root.
pub fn roots(p: &Polynomial) -> Result<Vec<Complex64>> {
    if p.is_zero() {
        return Err(Error::DegenerateInput("roots of the zero polynomial"));
    }
    if p.degree() == 0 {
        return Err(Error::DegenerateInput("roots of a constant polynomial"));
    }
    let c = p.coeffs();
    let zeros = c.iter().take_while(|&&x| x == 0.0).count();
    let mut out = vec![Complex64::new(0.0, 0.0); zeros];
    let reduced = Polynomial::new(c[zeros..].to_vec());
    let n = reduced.degree();
    if n == 0 {
        return Ok(out);
    }
    if n == 1 {
        out.push(Complex64::new(-reduced.coeff(0) / reduced.coeff(1), 0.0));
        return Ok(out);
    }

    let lead = reduced.leading();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -reduced.coeff(n - 1 - j) / lead;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    balance(&mut m);
    let eig = m.complex_eigenvalues();

    let dp = reduced.derivative();
    for &z in eig.iter() {
        out.push(newton_polish(&reduced, &dp, z));
    }
    Ok(out)
}

fn newton_polish(p: &Polynomial, dp: &Polynomial, z: Complex64) -> Complex64 {
    let fz = p.eval(z);
    let dz = dp.eval(z);
    if dz.norm() == 0.0 || !dz.is_finite() {
        return z;
    }
    let mut cand = z - fz / dz;
    // keep conjugate symmetry exact for (numerically) real roots
    if z.im == 0.0 {
        cand.im = 0.0;
    }
    if cand.is_finite() && p.eval(cand).norm() < fz.norm() {
        cand
    } else {
        z
    }
}

/// Parlett–Reinsch balancing with radix-2 scaling, in place.
fn balance(m: &mut DMatrix<f64>) {
    balance_scaling(m);
}

/// Balances `m` in place as `D^-1 m D` and returns the diagonal of `D`.
pub(crate) fn balance_scaling(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut scale = vec![1.0; n];
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / RADIX;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                scale[i] *= f;
                let g = 1.0 / f;
                for j in 0..n {
                    m[(i, j)] *= g;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
    scale
}

/// Outcome of a Routh array evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouthCount {
    /// Sign changes in the first column: number of open right-half-plane roots.
    pub rhp: usize,
    /// A zero appeared in the first column or a whole row vanished, so the
    /// polynomial has roots on the imaginary axis or mirrored about the origin.
    pub marginal: bool,
}

/// Routh array of `p`; zero leading elements are replaced by a small positive
/// epsilon and vanishing rows by the derivative of the auxiliary polynomial.
pub fn routh_count(p: &Polynomial) -> Result<RouthCount> {
    if p.is_zero() {
        return Err(Error::DegenerateInput("Routh test of the zero polynomial"));
    }
    if p.degree() == 0 {
        return Err(Error::DegenerateInput("Routh test of a constant polynomial"));
    }
    let n = p.degree();
    // descending coefficients with positive leading term
    let sign = p.leading().signum();
    let desc: Vec<f64> = (0..=n).rev().map(|k| sign * p.coeff(k)).collect();

    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|j| desc.get(2 * j).copied().unwrap_or(0.0)).collect();
    let mut cur: Vec<f64> = (0..width).map(|j| desc.get(2 * j + 1).copied().unwrap_or(0.0)).collect();
    normalize_row(&mut prev);
    normalize_row(&mut cur);

    let mut first_col = vec![prev[0]];
    let mut marginal = false;
    const EPS: f64 = 1e-9;
    const ZERO_TOL: f64 = 1e-13;

    for row in 1..=n {
        let order = n - row;
        if cur.iter().all(|x| x.abs() <= ZERO_TOL) {
            // auxiliary polynomial from `prev` (powers order+1, order-1, ...)
            marginal = true;
            let aux_order = order + 1;
            for j in 0..width {
                let pow = aux_order as isize - 2 * j as isize;
                cur[j] = if pow > 0 { prev[j] * pow as f64 } else { 0.0 };
            }
            normalize_row(&mut cur);
        }
        if cur[0].abs() <= ZERO_TOL {
            marginal = true;
            cur[0] = EPS;
        }
        first_col.push(cur[0]);
        if row == n {
            break;
        }
        let mut next = vec![0.0; width];
        for j in 0..width - 1 {
            next[j] = (cur[0] * prev[j + 1] - prev[0] * cur[j + 1]) / cur[0];
        }
        normalize_row(&mut next);
        prev = cur;
        cur = next;
    }

    let rhp = first_col
        .windows(2)
        .filter(|w| (w[0] > 0.0) != (w[1] > 0.0))
        .count();
    Ok(RouthCount { rhp, marginal })
}

fn normalize_row(row: &mut [f64]) {
    let m = row.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if m > 0.0 && m.is_finite() {
        row.iter_mut().for_each(|x| *x /= m);
    }
}

/// True iff every root of `p` has strictly negative real part (Routh–Hurwitz).
pub fn is_hurwitz(p: &Polynomial) -> Result<bool> {
    let count = routh_count(p)?;
    Ok(count.rhp == 0 && !count.marginal)
}

/// True iff every root of `p` has real part below `-sigma`.
pub fn decays_faster_than(p: &Polynomial, sigma: f64) -> Result<bool> {
    is_hurwitz(&p.shift(-sigma))
}

/// Largest real part among the roots of `p`.
pub fn spectral_abscissa(p: &Polynomial) -> Result<f64> {
    Ok(roots(p)?.iter().fold(f64::NEG_INFINITY, |m, r| m.max(r.re)))
}
