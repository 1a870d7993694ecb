//! Robust error functions: smoothed ℓ1 for alignment and Geman-McClure for
//! reconstruction.

use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.35;
pub const DEFAULT_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    /// Knee of the smoothed ℓ1 loss.
    pub beta: f64,
    /// Geman-McClure scale.
    pub s: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            s: DEFAULT_S,
        }
    }
}

impl RobustConfig {
    pub fn new(beta: f64, s: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        check_positive("s", s)?;
        Ok(Self { beta, s })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("{name} must be positive, got {v}")))
    }
}

/// Smoothed ℓ1: quadratic below `beta`, linear above, C¹ at the knee.
pub fn rho_ja(eps: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    Ok(rho_ja_unchecked(eps, beta))
}

pub fn d_rho_ja(eps: f64, beta: f64) -> Result<f64> {
    check_positive("beta", beta)?;
    Ok(d_rho_ja_unchecked(eps, beta))
}

/// Geman-McClure: `ε² / (ε² + s²)`, bounded by 1.
pub fn rho_recon(eps: f64, s: f64) -> Result<f64> {
    check_positive("s", s)?;
    let e2 = eps * eps;
    Ok(e2 / (e2 + s * s))
}

pub fn d_rho_recon(eps: f64, s: f64) -> Result<f64> {
    check_positive("s", s)?;
    let denom = eps * eps + s * s;
    Ok(2.0 * eps * s * s / (denom * denom))
}

#[inline]
pub(crate) fn rho_ja_unchecked(eps: f64, beta: f64) -> f64 {
    let a = eps.abs();
    if a <= beta {
        0.5 * eps * eps / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
pub(crate) fn d_rho_ja_unchecked(eps: f64, beta: f64) -> f64 {
    if eps.abs() <= beta {
        eps / beta
    } else {
        eps.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rho_ja_examples() {
        assert_eq!(rho_ja(0.0, 0.35).unwrap(), 0.0);
        assert!((rho_ja(0.35, 0.35).unwrap() - 0.175).abs() < 1e-15);
        assert!((rho_ja(1.0, 0.35).unwrap() - 0.825).abs() < 1e-15);
        // both branches agree at the knee
        let beta: f64 = 0.35;
        assert!((0.5 * beta * beta / beta - (beta - 0.5 * beta)).abs() < 1e-15);
        assert!(rho_ja(1.0, 0.0).is_err());
        assert!(rho_ja(1.0, -1.0).is_err());
    }

    #[test]
    fn rho_recon_examples() {
        assert_eq!(rho_recon(0.0, 0.05).unwrap(), 0.0);
        assert!((rho_recon(0.05, 0.05).unwrap() - 0.5).abs() < 1e-15);
        let r = rho_recon(10.0, 0.05).unwrap();
        assert!((r - 0.999975).abs() < 1e-6);
        assert!(r < 1.0);
        assert!(rho_recon(1.0, 0.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(d_rho_ja(0.0, 0.35).unwrap(), 0.0);
        assert_eq!(d_rho_ja(1.0, 0.35).unwrap(), 1.0);
        assert_eq!(d_rho_ja(-1.0, 0.35).unwrap(), -1.0);
        assert_eq!(d_rho_ja(0.35, 0.35).unwrap(), 1.0);
        assert!(d_rho_recon(0.1, -0.05).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-7;
        let mut n = 0;
        while n < 100 {
            let eps: f64 = rng.gen_range(-2.0..2.0);
            let beta = 0.35;
            if (eps.abs() - beta).abs() < 1e-4 {
                continue;
            }
            let fd = (rho_ja(eps + h, beta).unwrap() - rho_ja(eps - h, beta).unwrap()) / (2.0 * h);
            assert!((fd - d_rho_ja(eps, beta).unwrap()).abs() < 1e-6);
            let s = 0.05;
            let fd = (rho_recon(eps + h, s).unwrap() - rho_recon(eps - h, s).unwrap()) / (2.0 * h);
            assert!((fd - d_rho_recon(eps, s).unwrap()).abs() < 1e-6);
            n += 1;
        }
    }

    proptest! {
        #[test]
        fn both_losses_are_even(eps in -5.0f64..5.0, beta in 0.01f64..2.0, s in 0.01f64..1.0) {
            prop_assert_eq!(rho_ja(eps, beta).unwrap(), rho_ja(-eps, beta).unwrap());
            prop_assert_eq!(rho_recon(eps, s).unwrap(), rho_recon(-eps, s).unwrap());
        }

        #[test]
        fn influence_is_bounded(eps in -50.0f64..50.0, beta in 0.01f64..2.0, s in 0.01f64..1.0) {
            prop_assert!(d_rho_ja(eps, beta).unwrap().abs() <= 1.0);
            prop_assert!(rho_recon(eps, s).unwrap() < 1.0);
        }

        #[test]
        fn rho_ja_is_convex(a in -3.0f64..3.0, b in -3.0f64..3.0, t in 0.0f64..1.0) {
            let beta = 0.35;
            let mid = rho_ja(t * a + (1.0 - t) * b, beta).unwrap();
            let chord = t * rho_ja(a, beta).unwrap() + (1.0 - t) * rho_ja(b, beta).unwrap();
            prop_assert!(mid <= chord + 1e-12);
        }

        #[test]
        fn rho_recon_is_monotone(a in 0.0f64..5.0, d in 0.0f64..5.0) {
            prop_assert!(rho_recon(a, 0.05).unwrap() <= rho_recon(a + d, 0.05).unwrap());
        }
    }
}
