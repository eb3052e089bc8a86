use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

/// Exponential-family response distribution with its canonical link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Binomial,
    Gaussian,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Binomial => "binomial",
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
        }
    }

    pub fn link_name(self) -> &'static str {
        match self {
            Family::Binomial => "logit",
            Family::Gaussian => "identity",
            Family::Poisson => "log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binomial" => Ok(Family::Binomial),
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            _ => Err(PglmmError::UnknownName { kind: "family", name: s.to_string() }),
        }
    }

    /// Whether the family carries a free dispersion parameter.
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Gaussian)
    }

    /// Default cap on EM iterations.
    pub fn default_maxit_em(self) -> usize {
        match self {
            Family::Gaussian => 100,
            Family::Binomial | Family::Poisson => 50,
        }
    }

    /// Cumulant function b(eta).
    pub fn cumulant<F: Real>(self, eta: F) -> F {
        match self {
            Family::Binomial => eta.log1p_exp(),
            Family::Gaussian => eta * eta * F::lit(0.5),
            Family::Poisson => eta.exp(),
        }
    }

    /// Mean as a function of the linear predictor.
    pub fn inverse_link<F: Real>(self, eta: F) -> F {
        match self {
            Family::Binomial => eta.logistic(),
            Family::Gaussian => eta,
            Family::Poisson => eta.exp(),
        }
    }

    /// Variance function V(mu).
    pub fn variance<F: Real>(self, mu: F) -> F {
        match self {
            Family::Binomial => mu * (F::one() - mu),
            Family::Gaussian => F::one(),
            Family::Poisson => mu,
        }
    }

    pub fn validate_response<F: Real>(self, y: F, row: usize) -> Result<()> {
        let ok = match self {
            Family::Binomial => y == F::zero() || y == F::one(),
            Family::Gaussian => y.is_finite(),
            Family::Poisson => y >= F::zero() && y.is_finite() && y.fract() == F::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(PglmmError::InvalidResponse { family: self.name(), row, value: y.to_f64_lossy() })
        }
    }

    /// Full log-density log f(y | eta) including normalizing constants.
    pub fn log_density<F: Real>(self, y: F, eta: F, tau: F) -> F {
        match self {
            Family::Binomial => y * eta - eta.log1p_exp(),
            Family::Gaussian => {
                let r = y - eta;
                -F::lit(0.5) * (F::TAU() * tau).ln() - r * r / (F::lit(2.0) * tau)
            }
            Family::Poisson => {
                let lf = statrs::function::gamma::ln_gamma(y.to_f64_lossy() + 1.0);
                y * eta - eta.exp() - F::lit(lf)
            }
        }
    }

    /// Log-density up to terms that do not depend on eta.
    #[inline]
    pub fn log_kernel<F: Real>(self, y: F, eta: F, tau: F) -> F {
        match self {
            Family::Binomial => y * eta - eta.log1p_exp(),
            Family::Gaussian => {
                let r = y - eta;
                -r * r / (F::lit(2.0) * tau)
            }
            Family::Poisson => y * eta - eta.exp(),
        }
    }

    /// Unit deviance d(y, mu); sums to the model deviance.
    pub fn unit_deviance<F: Real>(self, y: F, mu: F) -> F {
        let two = F::lit(2.0);
        match self {
            Family::Gaussian => (y - mu) * (y - mu),
            Family::Binomial => {
                let a = if y > F::zero() { y * (y / mu).ln() } else { F::zero() };
                let b = if y < F::one() { (F::one() - y) * ((F::one() - y) / (F::one() - mu)).ln() } else { F::zero() };
                two * (a + b)
            }
            Family::Poisson => {
                let a = if y > F::zero() { y * (y / mu).ln() } else { F::zero() };
                two * (a - (y - mu))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_reference_points() {
        assert!((Family::Binomial.log_density(1.0, 0.0, 1.0) - 0.5f64.ln()).abs() < 1e-15);
        let g = Family::Gaussian.log_density(2.0, 2.0, 1.0);
        assert!((g + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((g + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((Family::Poisson.log_density(0.0f64, 0.0, 1.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn poisson_normalizer_uses_factorial() {
        // y = 3, mu = 1: 3*0 - 1 - ln 6
        let v = Family::Poisson.log_density(3.0f64, 0.0, 1.0);
        assert!((v - (-1.0 - 6f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn inverse_link_maps_into_mean_space() {
        for &eta in &[-50.0f64, -1.0, 0.0, 2.0, 50.0] {
            let p = Family::Binomial.inverse_link(eta);
            assert!((0.0..=1.0).contains(&p));
            assert!(Family::Poisson.inverse_link(eta) >= 0.0);
            assert_eq!(Family::Gaussian.inverse_link(eta), eta);
        }
    }

    #[test]
    fn response_validation() {
        assert!(Family::Binomial.validate_response(0.5f64, 3).is_err());
        assert!(Family::Binomial.validate_response(1.0f64, 3).is_ok());
        assert!(Family::Poisson.validate_response(-1.0f64, 0).is_err());
        assert!(Family::Poisson.validate_response(2.5f64, 0).is_err());
        assert!(Family::Gaussian.validate_response(f64::NAN, 0).is_err());
    }

    #[test]
    fn kernel_differs_from_density_by_constant() {
        for fam in [Family::Binomial, Family::Gaussian, Family::Poisson] {
            let y = 1.0f64;
            let d1 = fam.log_density(y, 0.3, 1.7) - fam.log_kernel(y, 0.3, 1.7);
            let d2 = fam.log_density(y, -1.1, 1.7) - fam.log_kernel(y, -1.1, 1.7);
            assert!((d1 - d2).abs() < 1e-12, "{fam:?}");
        }
    }

    #[test]
    fn unit_deviance_zero_at_fit() {
        assert_eq!(Family::Gaussian.unit_deviance(1.3f64, 1.3), 0.0);
        assert!(Family::Poisson.unit_deviance(2.0f64, 2.0).abs() < 1e-15);
        assert!(Family::Binomial.unit_deviance(1.0f64, 0.5) > 0.0);
    }
}
