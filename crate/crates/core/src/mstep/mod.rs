//! M-step: majorize-minimize coordinate descent on the Monte Carlo averaged
//! penalized loss, one coordinate at a time for `beta` and one row of `Gamma`
//! at a time for `gamma`.
//!
//! The loss is `-(1/(N M)) sum_i sum_m log f(y_i | eta_im)` with the Gaussian
//! dispersion left out. Each update minimizes a quadratic upper bound of the
//! loss whose curvature is `v` times the second moment of the coordinate's
//! design column; the penalty is applied on that rescaled coordinate.

mod penalty;

pub use penalty::{group_threshold, scalar_threshold, Penalty, PenaltyConfig};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::linalg::max_eigenvalue;
use crate::model::{CovKind, CovStructure, Dataset, Family, Theta};
use crate::real::Real;
use crate::sampler::PosteriorDraws;

/// Coefficients larger than this in magnitude are treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MStepConfig {
    /// Convergence tolerance on the largest coefficient change between sweeps.
    pub delta: f64,
    /// Cap on coordinate-descent sweeps.
    pub maxit_cd: usize,
}

impl Default for MStepConfig {
    fn default() -> Self {
        MStepConfig { delta: 0.0005, maxit_cd: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MStepOutcome {
    pub iterations: usize,
    pub hit_cap: bool,
    /// Columns of `Gamma` whose sign was flipped to keep the diagonal nonnegative.
    pub flipped: Vec<usize>,
}

/// Majorization curvature for a family given the current predictors.
pub fn curvature_bound<F: Real>(family: Family, eta: &[F]) -> F {
    match family {
        Family::Gaussian => F::one(),
        Family::Binomial => F::lit(0.25),
        Family::Poisson => {
            let max = eta.iter().fold(F::neg_infinity(), |a, &e| a.max(e));
            max.exp().max(F::epsilon())
        }
    }
}

/// Row `m` is `(alpha_k^(m) kron z_ki)' J_q`, the design of `gamma` for
/// observation `(k, i)` under draw `m`.
pub fn build_augmented_row<F: Real>(z_ki: &[F], draws_k: ArrayView2<'_, F>, structure: &CovStructure) -> Array2<F> {
    let m = draws_k.nrows();
    let mut out = Array2::zeros((m, structure.gamma_len()));
    for idx in 0..structure.gamma_len() {
        let (t, h) = structure.position(idx);
        for r in 0..m {
            out[[r, idx]] = draws_k[[r, h]] * z_ki[t];
        }
    }
    out
}

/// Working state of one M-step: draws rearranged per group and coordinate,
/// the fixed and random parts of every predictor, and the draw-averaged
/// working residual of every row.
pub struct MStepWorkspace<'a, F> {
    ds: &'a Dataset<F>,
    family: Family,
    structure: CovStructure,
    m: usize,
    /// `(k*q + h, m)` holds coordinate `h` of draw `m` for group `k`.
    alpha: Array2<F>,
    fixed: Vec<F>,
    /// Random part of the predictor, `random[i*M + m]`.
    random: Vec<F>,
    rbar: Vec<F>,
    v: F,
    col_scale: Vec<F>,
    /// Largest eigenvalue of each row's Gram matrix.
    row_lipschitz: Vec<F>,
}

impl<'a, F: Real> MStepWorkspace<'a, F> {
    pub fn new(
        ds: &'a Dataset<F>,
        draws: &PosteriorDraws<F>,
        family: Family,
        structure: &CovStructure,
        theta: &Theta<F>,
    ) -> Result<Self> {
        let q = structure.q;
        if draws.k() != ds.n_groups() || draws.q() != q || ds.q() != q {
            return Err(PglmmError::Dimension(format!(
                "draws have K = {}, q = {}; data K = {}, q = {}",
                draws.k(),
                draws.q(),
                ds.n_groups(),
                ds.q()
            )));
        }
        if draws.m() == 0 {
            return Err(PglmmError::Dimension("M-step needs at least one posterior draw".into()));
        }
        structure.check_gamma(&theta.gamma)?;
        let m = draws.m();
        let alpha = draws.data().t().as_standard_layout().to_owned();
        let n = ds.n();
        let nf = F::from_count(n);
        let col_scale = std::iter::once(F::one())
            .chain(ds.x().columns().into_iter().map(|c| {
                let s = c.iter().map(|&v| v * v).sum::<F>() / nf;
                if s > F::zero() {
                    s
                } else {
                    F::one()
                }
            }))
            .collect();

        let nm = F::from_count(n * m);
        let k_groups = ds.n_groups();
        let mut second_moments = vec![Array2::<F>::zeros((q, q)); k_groups];
        for (k, s) in second_moments.iter_mut().enumerate() {
            for a in 0..q {
                for b in 0..=a {
                    let ra = alpha.row(k * q + a);
                    let rb = alpha.row(k * q + b);
                    let v: F = ra.iter().zip(rb.iter()).map(|(&x, &y)| x * y).sum();
                    s[[a, b]] = v;
                    s[[b, a]] = v;
                }
            }
        }
        let mut zz = Array2::<F>::zeros((k_groups, q));
        for i in 0..n {
            let k = ds.group_of(i);
            for t in 0..q {
                let z = ds.z()[[i, t]];
                zz[[k, t]] = zz[[k, t]] + z * z;
            }
        }
        let row_lipschitz = (0..q)
            .map(|t| {
                let cols: Vec<usize> = match structure.kind {
                    CovKind::Unstructured => (0..=t).collect(),
                    CovKind::Diagonal => vec![t],
                };
                let d = cols.len();
                let mut g = Array2::<F>::zeros((d, d));
                for (a, &ha) in cols.iter().enumerate() {
                    for (b, &hb) in cols.iter().enumerate() {
                        let mut s = F::zero();
                        for k in 0..k_groups {
                            s = s + zz[[k, t]] * second_moments[k][[ha, hb]];
                        }
                        g[[a, b]] = s / nm;
                    }
                }
                max_eigenvalue(&g)
            })
            .collect();

        let mut ws = MStepWorkspace {
            ds,
            family,
            structure: *structure,
            m,
            alpha,
            fixed: vec![F::zero(); n],
            random: vec![F::zero(); n * m],
            rbar: vec![F::zero(); n],
            v: F::one(),
            col_scale,
            row_lipschitz,
        };
        for i in 0..n {
            ws.fixed[i] = ds.fixed_predictor(&theta.beta, i);
        }
        ws.refresh_random(&theta.gamma);
        Ok(ws)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Recomputes the random part `z_i' Gamma alpha^(m)` of every predictor.
    pub fn refresh_random(&mut self, gamma: &[F]) {
        let q = self.structure.q;
        let gm = self.structure.gamma_matrix(gamma);
        let m = self.m;
        let mut c = vec![F::zero(); q];
        for i in 0..self.ds.n() {
            let z = self.ds.z().row(i);
            for h in 0..q {
                let mut s = F::zero();
                for t in h..q {
                    s = s + z[t] * gm[[t, h]];
                }
                c[h] = s;
            }
            let k = self.ds.group_of(i);
            let out = &mut self.random[i * m..(i + 1) * m];
            out.iter_mut().for_each(|v| *v = F::zero());
            for (h, &ch) in c.iter().enumerate() {
                if ch == F::zero() {
                    continue;
                }
                let a = self.alpha.row(k * q + h);
                for (o, &av) in out.iter_mut().zip(a.iter()) {
                    *o = *o + ch * av;
                }
            }
        }
    }

    /// Draw-averaged working residual `mean_m (y_i - mu_im) / v` of row `i`.
    fn row_residual(&self, i: usize) -> F {
        let y = self.ds.y()[i];
        let f = self.fixed[i];
        let r = &self.random[i * self.m..(i + 1) * self.m];
        let mf = F::from_count(self.m);
        let s: F = match self.family {
            Family::Gaussian => r.iter().map(|&u| y - f - u).sum(),
            Family::Binomial => r.iter().map(|&u| y - (f + u).logistic()).sum(),
            Family::Poisson => r.iter().map(|&u| y - (f + u).exp()).sum(),
        };
        s / (mf * self.v)
    }

    fn refresh_curvature(&mut self) {
        if self.family == Family::Poisson {
            let mut max = F::neg_infinity();
            for i in 0..self.ds.n() {
                for &u in &self.random[i * self.m..(i + 1) * self.m] {
                    max = max.max(self.fixed[i] + u);
                }
            }
            self.v = curvature_bound(self.family, &[max]);
        } else {
            self.v = curvature_bound::<F>(self.family, &[]);
        }
    }

    fn refresh_residuals(&mut self) -> Result<()> {
        for i in 0..self.ds.n() {
            let r = self.row_residual(i);
            if !r.is_finite() {
                return Err(PglmmError::NonFiniteResiduals);
            }
            self.rbar[i] = r;
        }
        Ok(())
    }

    /// One coordinate-descent sweep over `beta` (intercept first) on the
    /// quadratic majorizer taken at the start of the sweep.
    pub fn beta_update_pass(&mut self, theta: &mut Theta<F>, penalty: &PenaltyConfig) -> Result<()> {
        self.refresh_curvature();
        self.refresh_residuals()?;
        let n = self.ds.n();
        let nf = F::from_count(n);
        let gscale = F::lit(penalty.gamma_scale.min(f64::MAX));
        let alpha_mix = F::lit(penalty.alpha_mix);
        for j in 0..theta.beta.len() {
            let a = self.col_scale[j];
            let g: F = if j == 0 {
                self.rbar.iter().copied().sum::<F>() / nf
            } else {
                let col = self.ds.x().column(j - 1);
                col.iter().zip(self.rbar.iter()).map(|(&x, &r)| x * r).sum::<F>() / nf
            };
            let w = theta.beta[j] + g / a;
            let lambda = if penalty.is_penalized_beta(j) { F::lit(penalty.lambda0) / (self.v * a) } else { F::zero() };
            let new = scalar_threshold(penalty.penalty, w, lambda, gscale, F::one(), alpha_mix)?;
            let delta = new - theta.beta[j];
            if delta == F::zero() {
                continue;
            }
            theta.beta[j] = new;
            if j == 0 {
                for (f, r) in self.fixed.iter_mut().zip(self.rbar.iter_mut()) {
                    *f = *f + delta;
                    *r = *r - delta;
                }
            } else {
                let col = self.ds.x().column(j - 1);
                for ((f, r), &x) in self.fixed.iter_mut().zip(self.rbar.iter_mut()).zip(col.iter()) {
                    *f = *f + x * delta;
                    *r = *r - x * delta;
                }
            }
        }
        Ok(())
    }

    /// One sweep over the rows of `Gamma`. Every row is updated from the same
    /// residuals, computed once before the sweep; the random part of the
    /// predictor is rebuilt afterwards. Rows with `allowed[t] == false` are set
    /// to zero; the first row is never penalized.
    pub fn gamma_update_pass(&mut self, theta: &mut Theta<F>, penalty: &PenaltyConfig, allowed: &[bool]) -> Result<()> {
        let q = self.structure.q;
        let n = self.ds.n();
        let m = self.m;
        self.refresh_curvature();
        let nm = F::from_count(n * m);
        let gradient = self.gamma_gradient(allowed)?;
        let gscale = F::lit(penalty.gamma_scale.min(f64::MAX));
        let alpha_mix = F::lit(penalty.alpha_mix);
        for t in 0..q {
            let range = self.structure.group_range(t);
            if !allowed.get(t).copied().unwrap_or(true) {
                theta.gamma[range].iter_mut().for_each(|g| *g = F::zero());
                continue;
            }
            let lip = self.row_lipschitz[t];
            if !(lip > F::zero()) {
                continue;
            }
            let w: Vec<F> = range.clone().map(|idx| theta.gamma[idx] + gradient[idx] / (nm * lip)).collect();
            let lambda = if t == 0 { F::zero() } else { F::lit(penalty.lambda1) / (self.v * lip) };
            let new = group_threshold(penalty.penalty, &w, lambda, gscale, F::one(), alpha_mix)?;
            for (idx, val) in range.zip(new) {
                theta.gamma[idx] = val;
            }
        }
        self.refresh_random(&theta.gamma);
        Ok(())
    }

    /// `sum_i sum_m (y_i - mu_im) / v * d eta_im / d gamma`, not yet divided by
    /// `N M`. Entries in rows that are not allowed are left at zero.
    fn gamma_gradient(&self, allowed: &[bool]) -> Result<Vec<F>> {
        let q = self.structure.q;
        let m = self.m;
        let row_on = |t: usize| allowed.get(t).copied().unwrap_or(true);
        let entries: Vec<(usize, usize, usize)> = (0..self.structure.gamma_len())
            .filter_map(|idx| {
                let (t, h) = self.structure.position(idx);
                row_on(t).then_some((idx, t, h))
            })
            .collect();
        let mut need = vec![false; q];
        for &(_, _, h) in &entries {
            need[h] = true;
        }
        let mut grad = vec![F::zero(); self.structure.gamma_len()];
        let mut s = vec![F::zero(); q];
        let mut r = vec![F::zero(); m];
        for i in 0..self.ds.n() {
            let y = self.ds.y()[i];
            let f = self.fixed[i];
            let u = &self.random[i * m..(i + 1) * m];
            for (ri, &ui) in r.iter_mut().zip(u) {
                let mu = self.family.inverse_link(f + ui);
                *ri = (y - mu) / self.v;
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(PglmmError::NonFiniteResiduals);
            }
            let k = self.ds.group_of(i);
            for (h, sh) in s.iter_mut().enumerate() {
                if need[h] {
                    let a = self.alpha.row(k * q + h);
                    *sh = a.iter().zip(r.iter()).map(|(&x, &y)| x * y).sum();
                }
            }
            let z = self.ds.z().row(i);
            for &(idx, t, h) in &entries {
                grad[idx] = grad[idx] + z[t] * s[h];
            }
        }
        Ok(grad)
    }

    /// Gaussian: mean squared residual over rows and draws. Other families: 1.
    pub fn dispersion(&self) -> F {
        if self.family != Family::Gaussian {
            return F::one();
        }
        let mut s = F::zero();
        for i in 0..self.ds.n() {
            let y = self.ds.y()[i];
            let f = self.fixed[i];
            for &u in &self.random[i * self.m..(i + 1) * self.m] {
                let e = y - f - u;
                s = s + e * e;
            }
        }
        s / F::from_count(self.ds.n() * self.m)
    }

    /// Monte Carlo averaged loss at the current state.
    pub fn loss(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.ds.n() {
            let y = self.ds.y()[i];
            for &u in &self.random[i * self.m..(i + 1) * self.m] {
                s -= self.family.log_kernel(y, self.fixed[i] + u, F::one()).to_f64_lossy();
            }
        }
        s / (self.ds.n() * self.m) as f64
    }
}

/// `sigma^2 = (1/(M N)) sum (y - eta)^2` over draws for the Gaussian family; 1 otherwise.
pub fn dispersion_update<F: Real>(
    ds: &Dataset<F>,
    theta: &Theta<F>,
    draws: &PosteriorDraws<F>,
    family: Family,
    structure: &CovStructure,
) -> Result<F> {
    if family != Family::Gaussian {
        return Ok(F::one());
    }
    Ok(MStepWorkspace::new(ds, draws, family, structure, theta)?.dispersion())
}

/// Penalized Monte Carlo objective of `theta` for fixed draws.
pub fn penalized_objective<F: Real>(
    ds: &Dataset<F>,
    theta: &Theta<F>,
    draws: &PosteriorDraws<F>,
    family: Family,
    penalty: &PenaltyConfig,
    structure: &CovStructure,
) -> Result<f64> {
    let ws = MStepWorkspace::new(ds, draws, family, structure, theta)?;
    let beta: Vec<f64> = theta.beta.iter().map(|b| b.to_f64_lossy()).collect();
    let norms: Vec<f64> =
        (0..structure.q).map(|t| structure.row_variance(&theta.gamma, t).to_f64_lossy().sqrt()).collect();
    Ok(ws.loss() + penalty.total(&beta, &norms))
}

/// Alternates `beta` and `gamma` sweeps until the largest change of both is
/// below `delta` or `maxit_cd` sweeps ran, then updates the dispersion and
/// normalizes the signs of `Gamma`'s columns.
#[allow(clippy::too_many_arguments)]
pub fn m_step<F: Real>(
    theta_in: &Theta<F>,
    ds: &Dataset<F>,
    draws: &PosteriorDraws<F>,
    family: Family,
    penalty: &PenaltyConfig,
    cfg: &MStepConfig,
    structure: &CovStructure,
    allowed: &[bool],
) -> Result<(Theta<F>, MStepOutcome)> {
    penalty.validate()?;
    if theta_in.beta.len() != ds.p() + 1 {
        return Err(PglmmError::Dimension(format!("beta has length {}, expected {}", theta_in.beta.len(), ds.p() + 1)));
    }
    let mut theta = theta_in.clone();
    let mut ws = MStepWorkspace::new(ds, draws, family, structure, &theta)?;
    let delta = F::lit(cfg.delta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.maxit_cd {
        let before = theta.clone();
        ws.beta_update_pass(&mut theta, penalty)?;
        ws.gamma_update_pass(&mut theta, penalty, allowed)?;
        iterations += 1;
        let largest = theta.beta.iter().chain(theta.gamma.iter()).fold(F::zero(), |a, v| a.max(v.abs()));
        if !largest.is_finite() || largest.to_f64_lossy() > DIVERGENCE_BOUND {
            return Err(PglmmError::Divergence { magnitude: largest.to_f64_lossy() });
        }
        let db = max_abs_diff(&theta.beta, &before.beta);
        let dg = max_abs_diff(&theta.gamma, &before.gamma);
        if db < delta && dg < delta {
            converged = true;
            break;
        }
    }
    if !converged && cfg.maxit_cd > 0 {
        log::debug!("M-step stopped at the {}-sweep cap", cfg.maxit_cd);
    }
    if family == Family::Gaussian {
        theta.tau = ws.dispersion().max(F::epsilon());
    } else {
        theta.tau = F::one();
    }
    let flipped = theta.normalize_signs(structure);
    Ok((theta, MStepOutcome { iterations, hit_cap: !converged, flipped }))
}

fn max_abs_diff<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}
