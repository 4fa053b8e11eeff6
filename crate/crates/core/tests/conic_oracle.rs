//! The cone solver against an independent brute-force minimizer.

use loopshaper::conic::{residuals, solve, Affine, ComplexAffine, ConicProgram, RotatedCone, SolverOptions, Status};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FREE: usize = 4;

/// min g over x in [-1,1]^4 s.t. sum_j |b_kj(x)|^2 <= a_k g.
struct MinMax {
    a: Vec<f64>,
    // b[k][j] = (re constant, re coeffs, im constant, im coeffs)
    b: Vec<Vec<(f64, [f64; FREE], f64, [f64; FREE])>>,
}

impl MinMax {
    fn random(rng: &mut ChaCha8Rng, cones: usize) -> Self {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..cones {
            a.push(rng.random_range(0.5..2.0));
            let terms = (0..2)
                .map(|_| {
                    let mut cr = [0.0; FREE];
                    let mut ci = [0.0; FREE];
                    cr.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                    ci.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                    (rng.random_range(-1.0..1.0), cr, rng.random_range(-1.0..1.0), ci)
                })
                .collect();
            b.push(terms);
        }
        Self { a, b }
    }

    fn value(&self, x: &[f64; FREE]) -> f64 {
        let mut worst = 0.0_f64;
        for (ak, bk) in self.a.iter().zip(&self.b) {
            let mut q = 0.0;
            for (c0, cr, d0, ci) in bk {
                let re = c0 + cr.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                let im = d0 + ci.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                q += re * re + im * im;
            }
            worst = worst.max(q / ak);
        }
        worst
    }

    fn program(&self) -> ConicProgram {
        let n = FREE + 1;
        let mut obj = vec![0.0; n];
        obj[FREE] = 1.0;
        let mut p = ConicProgram::new(obj);
        for j in 0..FREE {
            p.lower[j] = -1.0;
            p.upper[j] = 1.0;
        }
        let aff = |c0: f64, c: &[f64; FREE]| {
            let mut coeffs = c.to_vec();
            coeffs.push(0.0);
            Affine { constant: c0, coeffs }
        };
        for (ak, bk) in self.a.iter().zip(&self.b) {
            p.push(RotatedCone {
                a: Affine::constant(n, *ak),
                g: Affine::var(n, FREE),
                b: bk
                    .iter()
                    .map(|(c0, cr, d0, ci)| ComplexAffine {
                        re: aff(*c0, cr),
                        im: aff(*d0, ci),
                    })
                    .collect(),
            });
        }
        p
    }

    /// Zooming grid search; the objective is convex so shrinking around the
    /// incumbent converges to the box minimum.
    fn brute_force(&self) -> f64 {
        const K: i32 = 12;
        let mut center = [0.0; FREE];
        let mut h = 2.0 / K as f64;
        let mut best = f64::INFINITY;
        for _ in 0..40 {
            let mut next = center;
            let mut idx = [0i32; FREE];
            loop {
                let mut x = [0.0; FREE];
                for j in 0..FREE {
                    x[j] = (center[j] + h * (idx[j] - K / 2) as f64).clamp(-1.0, 1.0);
                }
                let v = self.value(&x);
                if v < best {
                    best = v;
                    next = x;
                }
                let mut j = 0;
                while j < FREE {
                    idx[j] += 1;
                    if idx[j] <= K {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == FREE {
                    break;
                }
            }
            center = next;
            h *= 0.6;
        }
        best
    }
}

#[test]
fn random_programs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..3 {
        let mm = MinMax::random(&mut rng, 50);
        let p = mm.program();
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal, "case {case}: {s:?}");
        let oracle = mm.brute_force();
        let rel = (s.objective_value - oracle).abs() / oracle.max(1.0);
        assert!(rel < 1e-3, "case {case}: ipm {} oracle {}", s.objective_value, oracle);
        let x: [f64; FREE] = s.x[..FREE].try_into().unwrap();
        // the solver's point really attains its objective
        assert!(mm.value(&x) <= s.objective_value * (1.0 + 1e-6) + 1e-9);
        assert!(s.max_cone_residual <= 1e-7);
    }
}

#[test]
fn block_scaling_leaves_the_optimum_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mm = MinMax::random(&mut rng, 30);
    let p = mm.program();
    let base = solve(&p, &SolverOptions::default()).unwrap();
    for (i, t) in [(0usize, 1e3), (5, 1e-3), (29, 37.0)] {
        let mut q = p.clone();
        q.cones[i] = q.cones[i].scaled(t);
        let s = solve(&q, &SolverOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let rel = (s.objective_value - base.objective_value).abs() / base.objective_value.abs().max(1.0);
        assert!(rel < 1e-8, "scale {t}: {} vs {}", s.objective_value, base.objective_value);
    }
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = MinMax::random(&mut rng, 40).program();
    let a = solve(&p, &SolverOptions::default()).unwrap();
    let b = solve(&p, &SolverOptions::default()).unwrap();
    assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn json_dump_solves_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = MinMax::random(&mut rng, 10).program();
    let q = ConicProgram::from_json(&p.to_json().unwrap()).unwrap();
    let a = solve(&p, &SolverOptions::default()).unwrap();
    let b = solve(&q, &SolverOptions::default()).unwrap();
    assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimal_points_satisfy_every_cone(seed in any::<u64>(), cones in 1usize..25, log_scale in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MinMax::random(&mut rng, cones).program();
        let k = rng.random_range(0..cones);
        p.cones[k] = p.cones[k].scaled(10f64.powf(log_scale));
        let opts = SolverOptions::default();
        let s = solve(&p, &opts).unwrap();
        prop_assert_eq!(s.status, Status::Optimal);
        prop_assert!(residuals(&p, &s.x) <= 10.0 * opts.tol, "{}", residuals(&p, &s.x));
    }
}
