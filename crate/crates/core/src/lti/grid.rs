use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing set of positive angular frequencies in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (i, &w) in omegas.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidGrid(format!("entry {i} = {w} is not a positive finite frequency")));
            }
            if i > 0 && w <= omegas[i - 1] {
                return Err(Error::InvalidGrid(format!("entries {} and {i} are not strictly increasing", i - 1)));
            }
        }
        Ok(Self { omegas })
    }

    /// `n` logarithmically spaced points from `lo` to `hi` inclusive.
    pub fn logspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(lo > 0.0 && hi.is_finite() && lo.is_finite()) || (n > 1 && hi <= lo) {
            return Err(Error::InvalidGrid(format!("bad bounds [{lo}, {hi}]")));
        }
        if n == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.log10(), hi.log10());
        let step = (b - a) / (n - 1) as f64;
        let mut omegas: Vec<f64> = (0..n).map(|k| 10f64.powf(a + step * k as f64)).collect();
        omegas[0] = lo;
        omegas[n - 1] = hi;
        Self::new(omegas)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.omegas[0]
    }

    pub fn hi(&self) -> f64 {
        self.omegas[self.omegas.len() - 1]
    }

    /// Superset grid with `factor - 1` log-spaced points inserted in every gap.
    pub fn densify(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut out = Vec::with_capacity(self.omegas.len() * factor);
        for w in self.omegas.windows(2) {
            let (a, b) = (w[0].ln(), w[1].ln());
            out.push(w[0]);
            for k in 1..factor {
                let x = (a + (b - a) * k as f64 / factor as f64).exp();
                if x > *out.last().unwrap() && x < w[1] {
                    out.push(x);
                }
            }
        }
        out.push(self.hi());
        Self { omegas: out }
    }

    /// Points for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(f64) -> bool) -> Result<Self> {
        Self::new(self.omegas.iter().copied().filter(|&w| keep(w)).collect())
    }
}

impl TryFrom<Vec<f64>> for FrequencyGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FrequencyGrid> for Vec<f64> {
    fn from(g: FrequencyGrid) -> Self {
        g.omegas
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logspace_endpoints_and_ratio() {
        let g = FrequencyGrid::logspace(1e2, 1e5, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert_eq!(g.lo(), 1e2);
        assert_eq!(g.hi(), 1e5);
        let r0 = g.omegas()[1] / g.omegas()[0];
        let r1 = g.omegas()[150] / g.omegas()[149];
        assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(FrequencyGrid::new(vec![]), Err(Error::EmptyGrid)));
        assert!(FrequencyGrid::new(vec![0.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(vec![2.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(vec![1.0, 1.0]).is_err());
        assert!(FrequencyGrid::logspace(10.0, 1.0, 5).is_err());
    }

    #[test]
    fn densify_is_superset() {
        let g = FrequencyGrid::logspace(1e2, 1e5, 200).unwrap();
        let d = g.densify(10);
        assert_eq!(d.len(), 199 * 10 + 1);
        let mut j = 0;
        for &w in g.omegas() {
            while d.omegas()[j] < w {
                j += 1;
            }
            assert_eq!(d.omegas()[j], w);
        }
    }
}
