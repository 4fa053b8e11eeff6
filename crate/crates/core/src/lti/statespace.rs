use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use super::{balance_scaling, TransferFunction};
use crate::error::{Error, Result};

/// Single-input single-output realization `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    /// Controllable canonical form of a proper transfer function.
    pub fn from_transfer_function(tf: &TransferFunction) -> Result<Self> {
        if !tf.is_proper() {
            return Err(Error::ImproperTransferFunction {
                num: tf.num().degree(),
                den: tf.den().degree(),
            });
        }
        let n = tf.den().degree();
        let lead = tf.den().leading();
        let den: Vec<f64> = (0..=n).map(|k| tf.den().coeff(k) / lead).collect();
        let num: Vec<f64> = (0..=n).map(|k| tf.num().coeff(k) / lead).collect();
        let d = num[n];
        // strictly proper remainder num - d * den
        let rem: Vec<f64> = (0..n).map(|k| num[k] - d * den[k]).collect();

        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        if n > 0 {
            for j in 0..n {
                a[(n - 1, j)] = -den[j];
            }
        }
        let mut b = DVector::zeros(n);
        if n > 0 {
            b[n - 1] = 1.0;
        }
        let c = RowDVector::from_vec(rem);
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (sI - A)^-1 B + D`
    pub fn eval_s(&self, s: Complex64) -> Result<Complex64> {
        let n = self.order();
        if n == 0 {
            return Ok(Complex64::new(self.d, 0.0));
        }
        let m = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - Complex64::new(self.a[(i, j)], 0.0)
        });
        let rhs = DVector::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m.lu().solve(&rhs).ok_or(Error::PoleOnGrid { omega: s.im })?;
        let y: Complex64 = (0..n).map(|i| x[i] * self.c[i]).sum();
        Ok(y + self.d)
    }

    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        self.eval_s(Complex64::new(0.0, omega))
    }

    /// Diagonal similarity transform that balances `A`; the transfer function is unchanged.
    pub fn balanced(&self) -> Self {
        let mut a = self.a.clone();
        let scale = balance_scaling(&mut a);
        let b = DVector::from_fn(self.order(), |i, _| self.b[i] / scale[i]);
        let c = RowDVector::from_fn(self.order(), |_, j| self.c[j] * scale[j]);
        Self { a, b, c, d: self.d }
    }

    /// State at which the output is `y` and the state derivative vanishes for constant input `u`.
    ///
    /// Returns `None` when `A` is singular and no consistent solution exists.
    pub fn steady_state(&self, u: f64) -> Option<DVector<f64>> {
        if self.order() == 0 {
            return Some(DVector::zeros(0));
        }
        let rhs = -&self.b * u;
        self.a.clone().lu().solve(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::FrequencyGrid;
    use proptest::prelude::*;

    fn tf(num: &[f64], den: &[f64]) -> TransferFunction {
        TransferFunction::new(num.to_vec(), den.to_vec()).unwrap()
    }

    #[test]
    fn first_order() {
        let ss = tf(&[1.0], &[1.0, 1.0]).realize().unwrap();
        assert_eq!(ss.a[(0, 0)], -1.0);
        assert_eq!(ss.b[0], 1.0);
        assert_eq!(ss.c[0], 1.0);
        assert_eq!(ss.d, 0.0);
    }

    #[test]
    fn biproper_split() {
        let ss = tf(&[2.0, 1.0], &[1.0, 1.0]).realize().unwrap();
        assert_eq!(ss.d, 1.0);
        assert_eq!(ss.c[0], 1.0);
        assert_eq!(ss.a[(0, 0)], -1.0);
    }

    #[test]
    fn improper_rejected() {
        assert!(matches!(
            tf(&[0.0, 0.0, 1.0], &[1.0, 1.0]).realize(),
            Err(Error::ImproperTransferFunction { num: 2, den: 1 })
        ));
    }

    #[test]
    fn published_controllers_match_on_grid() {
        let grid = FrequencyGrid::logspace(1e1, 1e6, 50).unwrap();
        for f in [
            tf(&[1.275e13, 5.282e10, 5.472e7], &[0.0, 7.564e13, 3.822e8, 482.7]),
            tf(&[3.439e7, 3.558e5, 918.9], &[0.0, 4.687e7, 1.37e4, 1.0]),
        ] {
            for ss in [f.realize().unwrap(), f.realize().unwrap().balanced()] {
                for &w in grid.omegas() {
                    let direct = f.eval(w).unwrap();
                    let via = ss.eval(w).unwrap();
                    assert!((direct - via).norm() <= 1e-9 * (1.0 + direct.norm()), "{w}: {direct} vs {via}");
                }
            }
        }
    }

    #[test]
    fn steady_state_reproduces_dc_gain() {
        let f = tf(&[3.0, 1.0], &[2.0, 3.0, 1.0]);
        let ss = f.realize().unwrap();
        let x = ss.steady_state(1.0).unwrap();
        let y = (&ss.c * &x)[0] + ss.d;
        assert!((y - 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn realization_matches_evaluation(
            den in proptest::collection::vec(0.1f64..10.0, 1..7),
            num in proptest::collection::vec(-10.0f64..10.0, 1..7),
        ) {
            let mut den = den;
            den.push(1.0);
            let n = den.len() - 1;
            let num: Vec<f64> = num.into_iter().take(n + 1).collect();
            let f = tf(&num, &den);
            let ss = f.realize().unwrap();
            let grid = FrequencyGrid::logspace(1e-2, 1e2, 50).unwrap();
            for &w in grid.omegas() {
                let Ok(direct) = f.eval(w) else { continue };
                let via = ss.eval(w).unwrap();
                prop_assert!((direct - via).norm() <= 1e-9 * (1.0 + direct.norm()));
            }
        }
    }
}
