//! Penalties and their one-dimensional and grouped thresholding rules.

use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Penalty {
    Mcp,
    Scad,
    Lasso,
}

impl Penalty {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcp" => Ok(Penalty::Mcp),
            "scad" => Ok(Penalty::Scad),
            "lasso" => Ok(Penalty::Lasso),
            _ => Err(PglmmError::UnknownName { kind: "penalty", name: s.to_string() }),
        }
    }

    pub fn default_gamma_scale(self) -> f64 {
        match self {
            Penalty::Mcp => 3.0,
            Penalty::Scad => 4.0,
            Penalty::Lasso => f64::INFINITY,
        }
    }

    /// Penalty value `p(|x|; lambda, gamma_scale)` with an elastic-net ridge
    /// term `(1 - alpha) lambda x^2 / 2`.
    pub fn value(self, x: f64, lambda: f64, gamma_scale: f64, alpha: f64) -> f64 {
        let a = x.abs();
        let l = alpha * lambda;
        let core = match self {
            Penalty::Lasso => l * a,
            Penalty::Mcp => {
                if a <= gamma_scale * l {
                    l * a - a * a / (2.0 * gamma_scale)
                } else {
                    0.5 * gamma_scale * l * l
                }
            }
            Penalty::Scad => {
                if a <= l {
                    l * a
                } else if a <= gamma_scale * l {
                    (2.0 * gamma_scale * l * a - a * a - l * l) / (2.0 * (gamma_scale - 1.0))
                } else {
                    0.5 * l * l * (gamma_scale + 1.0)
                }
            }
        };
        core + 0.5 * (1.0 - alpha) * lambda * a * a
    }
}

/// Penalty settings of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub penalty: Penalty,
    /// Fixed-effect penalty.
    pub lambda0: f64,
    /// Random-effect (grouped) penalty.
    pub lambda1: f64,
    pub gamma_scale: f64,
    /// Elastic-net mix; 1 means no ridge component.
    pub alpha_mix: f64,
    /// Indices into `beta` (intercept is 0) that are never penalized.
    pub no_penalty: Vec<usize>,
}

impl PenaltyConfig {
    pub fn new(penalty: Penalty, lambda0: f64, lambda1: f64) -> Self {
        PenaltyConfig {
            penalty,
            lambda0,
            lambda1,
            gamma_scale: penalty.default_gamma_scale(),
            alpha_mix: 1.0,
            no_penalty: Vec::new(),
        }
    }

    /// No penalty at all.
    pub fn unpenalized() -> Self {
        Self::new(Penalty::Mcp, 0.0, 0.0)
    }

    pub fn with_lambdas(&self, lambda0: f64, lambda1: f64) -> Self {
        PenaltyConfig { lambda0, lambda1, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0 && self.lambda1 >= 0.0) || !self.lambda0.is_finite() || !self.lambda1.is_finite() {
            return Err(PglmmError::Config(format!(
                "penalty parameters must be finite and nonnegative, got ({}, {})",
                self.lambda0, self.lambda1
            )));
        }
        if !(self.alpha_mix > 0.0 && self.alpha_mix <= 1.0) {
            return Err(PglmmError::Config(format!("alpha_mix must lie in (0, 1], got {}", self.alpha_mix)));
        }
        let min_scale = match self.penalty {
            Penalty::Mcp => 1.0,
            Penalty::Scad => 2.0,
            Penalty::Lasso => return Ok(()),
        };
        if !(self.gamma_scale > min_scale) {
            return Err(PglmmError::Config(format!(
                "gamma_scale must exceed {min_scale} for {:?}, got {}",
                self.penalty, self.gamma_scale
            )));
        }
        Ok(())
    }

    pub fn is_penalized_beta(&self, j: usize) -> bool {
        j != 0 && !self.no_penalty.contains(&j)
    }

    /// Penalty contribution of `beta` and of the row norms of `Gamma`; the
    /// intercept, `no_penalty` entries and the first row are free.
    pub fn total(&self, beta: &[f64], gamma_row_norms: &[f64]) -> f64 {
        let fixed: f64 = beta
            .iter()
            .enumerate()
            .filter(|(j, _)| self.is_penalized_beta(*j))
            .map(|(_, &b)| self.penalty.value(b, self.lambda0, self.gamma_scale, self.alpha_mix))
            .sum();
        let random: f64 = gamma_row_norms
            .iter()
            .skip(1)
            .map(|&n| self.penalty.value(n, self.lambda1, self.gamma_scale, self.alpha_mix))
            .sum();
        fixed + random
    }
}

fn soft<F: Real>(z: F, lambda: F) -> F {
    let a = z.abs() - lambda;
    if a > F::zero() {
        a.copysign(z)
    } else {
        F::zero()
    }
}

/// Minimizer of `v/2 b^2 - z b + p(|b|)` for one coordinate.
///
/// `alpha` is the elastic-net mix: the ridge part `(1 - alpha) lambda` is
/// added to `v` and `alpha * lambda` acts as the threshold.
pub fn scalar_threshold<F: Real>(penalty: Penalty, z: F, lambda: F, gamma_scale: F, v: F, alpha: F) -> Result<F> {
    let v = v + (F::one() - alpha) * lambda;
    let l = alpha * lambda;
    let a = z.abs();
    match penalty {
        Penalty::Lasso => Ok(soft(z, l) / v),
        Penalty::Mcp => {
            if v * gamma_scale <= F::one() {
                return Err(PglmmError::NonConvexMajorizer {
                    curvature: v.to_f64_lossy(),
                    gamma_scale: gamma_scale.to_f64_lossy(),
                });
            }
            if a <= v * gamma_scale * l {
                Ok(soft(z, l) / (v - F::one() / gamma_scale))
            } else {
                Ok(z / v)
            }
        }
        Penalty::Scad => {
            let gm1 = gamma_scale - F::one();
            if v * gm1 <= F::one() {
                return Err(PglmmError::NonConvexScad {
                    curvature: v.to_f64_lossy(),
                    gamma_scale: gamma_scale.to_f64_lossy(),
                });
            }
            if a <= l * (v + F::one()) {
                Ok(soft(z, l) / v)
            } else if a <= v * gamma_scale * l {
                Ok(soft(z, gamma_scale * l / gm1) / (v - F::one() / gm1))
            } else {
                Ok(z / v)
            }
        }
    }
}

/// Grouped rule: thresholds `||z||` with [`scalar_threshold`] and keeps the
/// direction of `z`, so the result is either all zero or all nonzero.
pub fn group_threshold<F: Real>(
    penalty: Penalty,
    z: &[F],
    lambda: F,
    gamma_scale: F,
    v: F,
    alpha: F,
) -> Result<Vec<F>> {
    let norm = z.iter().map(|&x| x * x).sum::<F>().sqrt();
    let shrunk = scalar_threshold(penalty, norm, lambda, gamma_scale, v, alpha)?;
    if norm == F::zero() || shrunk == F::zero() {
        return Ok(vec![F::zero(); z.len()]);
    }
    let factor = shrunk / norm;
    Ok(z.iter().map(|&x| x * factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(p: Penalty, z: f64, l: f64, g: f64, v: f64) -> f64 {
        scalar_threshold(p, z, l, g, v, 1.0).unwrap()
    }

    #[test]
    fn reference_values() {
        assert_eq!(st(Penalty::Lasso, 0.5, 1.0, 3.0, 1.0), 0.0);
        assert!((st(Penalty::Mcp, 2.0, 1.0, 3.0, 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(st(Penalty::Mcp, 4.0, 1.0, 3.0, 1.0), 4.0);
        let g = group_threshold(Penalty::Lasso, &[3.0f64, 4.0], 1.0, 3.0, 1.0, 1.0).unwrap();
        assert!((g[0] - 2.4).abs() < 1e-15 && (g[1] - 3.2).abs() < 1e-15);
        assert_eq!(group_threshold(Penalty::Lasso, &[0.3, 0.4], 1.0, 3.0, 1.0, 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(group_threshold(Penalty::Mcp, &[0.3, -0.4], 0.0, 3.0, 1.0, 1.0).unwrap(), vec![0.3, -0.4]);
    }

    #[test]
    fn scad_regimes() {
        // gamma 4, lambda 1, v 1: soft up to 2, firm up to 4, identity beyond
        assert!((st(Penalty::Scad, 1.5, 1.0, 4.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((st(Penalty::Scad, 3.0, 1.0, 4.0, 1.0) - (3.0 - 4.0 / 3.0) / (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(st(Penalty::Scad, 5.0, 1.0, 4.0, 1.0), 5.0);
    }

    #[test]
    fn nonconvex_mcp_is_rejected() {
        assert!(matches!(
            scalar_threshold(Penalty::Mcp, 1.0, 0.1, 3.0, 0.25, 1.0),
            Err(PglmmError::NonConvexMajorizer { .. })
        ));
    }

    #[test]
    fn ridge_part_shrinks_curvature_side() {
        let enet = scalar_threshold(Penalty::Lasso, 2.0f64, 1.0, 3.0, 1.0, 0.5).unwrap();
        assert!((enet - 1.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn thresholds_minimize_their_objective() {
        for p in [Penalty::Lasso, Penalty::Mcp, Penalty::Scad] {
            for &z in &[-5.0, -2.2, -0.7, 0.0, 0.4, 1.3, 2.9, 3.6, 6.0] {
                let (l, g, v) = (1.0, p.default_gamma_scale().min(4.0), 1.0);
                let b = st(p, z, l, g, v);
                let f = |x: f64| 0.5 * v * x * x - z * x + p.value(x, l, g, 1.0);
                for k in -4000..=4000 {
                    let x = k as f64 * 0.002;
                    assert!(f(b) <= f(x) + 1e-9, "{p:?} z={z} b={b} x={x}");
                }
            }
        }
    }
}
