use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrequencyGrid, TransferFunction};
use crate::error::Result;

pub const DEFAULT_REFINE_LEVELS: usize = 3;

const GOLDEN_ITERS: usize = 40;
const MAX_REFINED_PEAKS: usize = 8;
const PAR_THRESHOLD: usize = 512;

/// Grid estimate of the H-infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPeak {
    pub peak: f64,
    pub omega_at_peak: f64,
    /// The function has closed right-half-plane poles, so `peak` is only a grid supremum.
    pub unstable: bool,
}

fn magnitude(tf: &TransferFunction, w: f64) -> f64 {
    tf.eval(w).map(|v| v.norm()).unwrap_or(f64::INFINITY)
}

/// Largest `|tf(jw)|` over the grid, refined by golden-section search around
/// the grid's local maxima.
///
/// Each refinement level runs a golden-section search in `ln w` over the
/// bracket formed by the neighbours of the current best point, then halves
/// the bracket around the improved point for the next level.
pub fn hinf_norm(tf: &TransferFunction, grid: &FrequencyGrid, refine_levels: usize) -> Result<NormPeak> {
    let w = grid.omegas();
    let mags: Vec<f64> = if w.len() >= PAR_THRESHOLD {
        w.par_iter().map(|&x| magnitude(tf, x)).collect()
    } else {
        w.iter().map(|&x| magnitude(tf, x)).collect()
    };
    let unstable = !tf.is_stable().unwrap_or(false);

    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &m) in mags.iter().enumerate() {
        if m > best {
            best = m;
            best_i = i;
        }
    }
    let mut result = NormPeak {
        peak: best,
        omega_at_peak: w[best_i],
        unstable,
    };
    if refine_levels == 0 || w.len() < 2 || !best.is_finite() {
        return Ok(result);
    }

    // local maxima of the sampled magnitude, largest first
    let mut peaks: Vec<usize> = (0..w.len())
        .filter(|&i| {
            let left = i == 0 || mags[i] >= mags[i - 1];
            let right = i + 1 == w.len() || mags[i] >= mags[i + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
    peaks.truncate(MAX_REFINED_PEAKS);

    for i in peaks {
        let mut lo = w[i.saturating_sub(1)].ln();
        let mut hi = w[(i + 1).min(w.len() - 1)].ln();
        for _ in 0..refine_levels {
            let (x, m) = golden_max(|x| magnitude(tf, x.exp()), lo, hi);
            if m > result.peak {
                result.peak = m;
                result.omega_at_peak = x.exp();
            }
            let half = 0.25 * (hi - lo);
            lo = (x - half).max(w[0].ln());
            hi = (x + half).min(w[w.len() - 1].ln());
        }
    }
    Ok(result)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut bx, mut bf) = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v > bf {
                bf = v;
                bx = x;
            }
        }
    }
    (bx, bf)
}

/// Frequency response as CSV with header `omega_rad_s,re,im,mag,phase_deg`.
pub fn bode_csv(tf: &TransferFunction, grid: &FrequencyGrid) -> Result<String> {
    let mut out = String::from("omega_rad_s,re,im,mag,phase_deg\n");
    for &w in grid.omegas() {
        let v = tf.eval(w)?;
        writeln!(out, "{w:e},{:e},{:e},{:e},{:e}", v.re, v.im, v.norm(), v.arg().to_degrees()).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tf(num: &[f64], den: &[f64]) -> TransferFunction {
        TransferFunction::new(num.to_vec(), den.to_vec()).unwrap()
    }

    #[test]
    fn first_order_lowpass() {
        let g = FrequencyGrid::logspace(1e-3, 1e3, 200).unwrap();
        let r = hinf_norm(&tf(&[1.0], &[1.0, 1.0]), &g, DEFAULT_REFINE_LEVELS).unwrap();
        assert!((r.peak - 1.0).abs() < 1e-3);
        assert!(!r.unstable);
    }

    #[test]
    fn resonant_peak_matches_brute_force() {
        let f = tf(&[5.0], &[1.0, 0.2, 1.0]);
        let coarse = FrequencyGrid::logspace(1e-2, 1e2, 100).unwrap();
        let r = hinf_norm(&f, &coarse, DEFAULT_REFINE_LEVELS).unwrap();
        // brute force: 10^6 points around the resonance
        let mut best = 0.0_f64;
        let n = 1_000_000;
        for k in 0..n {
            let w = 0.9 + 0.2 * k as f64 / n as f64;
            best = best.max(f.eval(w).unwrap().norm());
        }
        assert!((r.peak - best).abs() / best < 1e-6, "{} vs {best}", r.peak);
        assert!((r.omega_at_peak - 0.99).abs() < 0.01);
        // analytic: 5 / (2 zeta sqrt(1 - zeta^2)) with zeta = 0.1
        assert!((r.peak - 5.0 / (0.2 * (0.99f64).sqrt())).abs() < 1e-3);
    }

    #[test]
    fn published_filter_peak() {
        let q = tf(&[98.77], &[99.6, 1.0]);
        let g = FrequencyGrid::logspace(1e-2, 1e5, 500).unwrap();
        let r = hinf_norm(&q, &g, DEFAULT_REFINE_LEVELS).unwrap();
        assert!((r.peak - 98.77 / 99.6).abs() < 1e-6);
    }

    #[test]
    fn unstable_input_is_flagged() {
        let g = FrequencyGrid::logspace(1e-1, 1e1, 20).unwrap();
        assert!(hinf_norm(&tf(&[1.0], &[-1.0, 1.0]), &g, 0).unwrap().unstable);
    }

    #[test]
    fn bode_header() {
        let g = FrequencyGrid::logspace(1.0, 10.0, 3).unwrap();
        let csv = bode_csv(&tf(&[1.0], &[1.0, 1.0]), &g).unwrap();
        assert!(csv.starts_with("omega_rad_s,re,im,mag,phase_deg\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn subgrid_never_exceeds_grid(
            zeta in 0.02f64..1.0,
            wn in 0.1f64..10.0,
            stride in 2usize..7,
        ) {
            let f = tf(&[wn * wn], &[wn * wn, 2.0 * zeta * wn, 1.0]);
            let full = FrequencyGrid::logspace(1e-2, 1e2, 301).unwrap();
            let sub = FrequencyGrid::new(full.omegas().iter().copied().step_by(stride).collect()).unwrap();
            let a = hinf_norm(&f, &sub, 0).unwrap().peak;
            let b = hinf_norm(&f, &full, 0).unwrap().peak;
            prop_assert!(a <= b);
            let a = hinf_norm(&f, &sub, DEFAULT_REFINE_LEVELS).unwrap().peak;
            let b = hinf_norm(&f, &full, DEFAULT_REFINE_LEVELS).unwrap().peak;
            prop_assert!(a <= b * (1.0 + 1e-9));
        }

        #[test]
        fn conjugate_symmetry(
            num in proptest::collection::vec(-10.0f64..10.0, 1..5),
            den in proptest::collection::vec(0.1f64..10.0, 2..6),
            w in 1e-3f64..1e3,
        ) {
            let f = tf(&num, &den);
            let p = f.eval(w).unwrap();
            let m = f.eval(-w).unwrap();
            prop_assert!((p.conj() - m).norm() <= 1e-12 * p.norm().max(1e-300));
        }
    }
}
