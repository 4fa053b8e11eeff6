//! K-factor placement of a Type-III compensator.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Polynomial, TransferFunction};

/// Phase boosts above this are rejected: the gain diverges at 180 degrees.
pub const MAX_PHASE_BOOST_DEG: f64 = 179.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KFactorSpec {
    /// crossover frequency in Hz
    pub f_c: f64,
    /// phase boost in degrees
    pub a_p: f64,
    /// compensator magnitude at the crossover (absolute)
    pub m_g: f64,
}

impl KFactorSpec {
    pub fn from_db(f_c: f64, a_p: f64, gain_db: f64) -> Self {
        Self {
            f_c,
            a_p,
            m_g: 10f64.powf(gain_db / 20.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_c.is_finite() && self.f_c > 0.0) {
            return Err(Error::OutOfRange(format!("crossover frequency {} Hz", self.f_c)));
        }
        if !(self.m_g.is_finite() && self.m_g > 0.0) {
            return Err(Error::OutOfRange(format!("crossover gain {}", self.m_g)));
        }
        k_gain(self.a_p).map(|_| ())
    }
}

/// `k = tan^2(A_p / 4 + 45 deg)`
pub fn k_gain(a_p_deg: f64) -> Result<f64> {
    if !(0.0..=MAX_PHASE_BOOST_DEG).contains(&a_p_deg) {
        return Err(Error::OutOfRange(format!(
            "phase boost {a_p_deg} deg outside [0, {MAX_PHASE_BOOST_DEG}]"
        )));
    }
    Ok((a_p_deg / 4.0 + 45.0).to_radians().tan().powi(2))
}

/// Coincident zero pair `f_c / sqrt(k)` and pole pair `f_c sqrt(k)`, in Hz.
pub fn place_zeros_poles(f_c: f64, a_p_deg: f64) -> Result<(f64, f64)> {
    if !(f_c.is_finite() && f_c > 0.0) {
        return Err(Error::OutOfRange(format!("crossover frequency {f_c} Hz")));
    }
    let sk = k_gain(a_p_deg)?.sqrt();
    Ok((f_c / sk, f_c * sk))
}

/// `2 (atan(f_c/f_z) - atan(f_c/f_p)) - 90 deg`
///
/// The `-90 deg` term is the integrator, so for a pair placed by
/// [`place_zeros_poles`] with boost `A` this returns `A - 90`, the phase of
/// the whole compensator at the crossover. [`pair_boost`] omits the integrator.
pub fn phase_boost(f_c: f64, f_z: f64, f_p: f64) -> f64 {
    (2.0 * ((f_c / f_z).atan() - (f_c / f_p).atan())).to_degrees() - 90.0
}

/// Phase lead of the zero and pole pairs alone, `2 (atan(f_c/f_z) - atan(f_c/f_p))`.
pub fn pair_boost(f_c: f64, f_z: f64, f_p: f64) -> f64 {
    (2.0 * ((f_c / f_z).atan() - (f_c / f_p).atan())).to_degrees()
}

/// `g (s + w_z)^2 / (s (s + w_p)^2)` with `|K(j 2 pi f_c)| = M_g`.
pub fn design(spec: &KFactorSpec) -> Result<TransferFunction> {
    spec.validate()?;
    let (f_z, f_p) = place_zeros_poles(spec.f_c, spec.a_p)?;
    let (wz, wp) = (2.0 * PI * f_z, 2.0 * PI * f_p);
    let zeros = Polynomial::new(vec![wz * wz, 2.0 * wz, 1.0]);
    let poles = &Polynomial::new(vec![wp * wp, 2.0 * wp, 1.0]) * &Polynomial::s();
    let sc = Complex64::new(0.0, 2.0 * PI * spec.f_c);
    let unit = (zeros.eval(sc) / poles.eval(sc)).norm();
    TransferFunction::new(zeros.scale(spec.m_g / unit), poles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gain_values() {
        assert!((k_gain(0.0).unwrap() - 1.0).abs() < 1e-15);
        let k = k_gain(172.0).unwrap();
        let expect = 88f64.to_radians().tan().powi(2);
        assert!((k - expect).abs() < 1e-9);
        assert!((k - 820.0).abs() < 1.0, "{k}");
        assert!(k_gain(179.95).is_err());
        assert!(k_gain(-1.0).is_err());
    }

    #[test]
    fn placement() {
        let (fz, fp) = place_zeros_poles(1000.0, 0.0).unwrap();
        assert!((fz - 1000.0).abs() < 1e-9 && (fp - 1000.0).abs() < 1e-9);
        let (fz, fp) = place_zeros_poles(2300.0, 172.0).unwrap();
        assert!((fz - 80.32).abs() < 0.01, "{fz}");
        assert!((fp - 65_863.0).abs() < 2.0, "{fp}");
        assert!(((fz * fp).sqrt() - 2300.0).abs() < 1e-9);
    }

    #[test]
    fn boost_limits() {
        assert!((phase_boost(100.0, 50.0, 50.0) + 90.0).abs() < 1e-12);
        assert!((phase_boost(100.0, 1e-12, 1e18) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn design_crossover_and_structure() {
        let spec = KFactorSpec::from_db(2300.0, 172.0, -40.0);
        let k = design(&spec).unwrap();
        let mag = k.eval(2.0 * PI * 2300.0).unwrap().norm();
        assert!((mag - 0.01).abs() / 0.01 < 1e-6);
        assert_eq!(k.den().coeff(0), 0.0);
        let zeros = k.zeros().unwrap();
        let poles: Vec<_> = k.poles().unwrap().into_iter().filter(|p| p.norm() > 0.0).collect();
        for z in &zeros {
            assert!(z.re < 0.0 && (z.re + 482.6).abs() / 482.6 < 0.1, "{z}");
        }
        for p in &poles {
            assert!(p.re < 0.0 && (p.re + 395_930.0).abs() / 395_930.0 < 0.1, "{p}");
        }
    }

    #[test]
    fn published_baseline_at_crossover() {
        let kk = crate::plant::paper_controllers().k_k;
        let v = kk.eval(2.0 * PI * 2300.0).unwrap();
        assert!((v.norm() - 0.010_452).abs() < 1e-6, "{}", v.norm());
        assert!((v.norm() - 0.01).abs() / 0.01 < 0.12);
        // compensator phase at the crossover is the boost minus the integrator's 90 degrees
        assert!((v.arg().to_degrees() - 82.0).abs() < 0.05);
    }

    #[test]
    fn designed_phase_at_crossover() {
        let k = design(&KFactorSpec::from_db(2300.0, 172.0, -40.0)).unwrap();
        let ph = k.eval(2.0 * PI * 2300.0).unwrap().arg().to_degrees();
        let (fz, fp) = place_zeros_poles(2300.0, 172.0).unwrap();
        assert!((ph - phase_boost(2300.0, fz, fp)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn round_trip(a in 0.01f64..179.0, fc in 1.0f64..1e5) {
            let (fz, fp) = place_zeros_poles(fc, a).unwrap();
            prop_assert!((pair_boost(fc, fz, fp) - a).abs() < 1e-9);
            prop_assert!((phase_boost(fc, fz, fp) - (a - 90.0)).abs() < 1e-9);
        }

        #[test]
        fn ratio_is_increasing(a in 0.0f64..178.0, d in 0.01f64..1.0) {
            let (z1, p1) = place_zeros_poles(100.0, a).unwrap();
            let (z2, p2) = place_zeros_poles(100.0, a + d).unwrap();
            prop_assert!(p2 / z2 > p1 / z1);
        }

        #[test]
        fn design_contract(a in 1.0f64..179.0, fc in 10.0f64..1e4, db in -60.0f64..20.0) {
            let spec = KFactorSpec::from_db(fc, a, db);
            let k = design(&spec).unwrap();
            let mag = k.eval(2.0 * PI * fc).unwrap().norm();
            prop_assert!((mag - spec.m_g).abs() <= 1e-6 * spec.m_g);
            prop_assert_eq!(k.den().coeff(0), 0.0);
            prop_assert_eq!(k.den().degree(), 3);
            prop_assert_eq!(k.num().degree(), 2);
        }
    }
}
