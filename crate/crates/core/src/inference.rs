//! Post-fit quantities: predictions, residuals, random-effect summaries and
//! MCMC diagnostic series.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::mcecm::FitResult;
use crate::model::{CovStructure, Dataset, Family, Standardization, Theta};
use crate::real::Real;
use crate::sampler::PosteriorDraws;

pub const DEFAULT_BINS: usize = 30;
pub const DEFAULT_MAX_LAG: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictType {
    Link,
    Response,
}

impl PredictType {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "link" => Ok(PredictType::Link),
            "response" => Ok(PredictType::Response),
            _ => Err(PglmmError::UnknownName { kind: "prediction type", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualType {
    Deviance,
    Pearson,
    Response,
    Working,
}

impl ResidualType {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deviance" => Ok(ResidualType::Deviance),
            "pearson" => Ok(ResidualType::Pearson),
            "response" => Ok(ResidualType::Response),
            "working" => Ok(ResidualType::Working),
            _ => Err(PglmmError::UnknownName { kind: "residual type", name: s.to_string() }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidualType::Deviance => "deviance",
            ResidualType::Pearson => "pearson",
            ResidualType::Response => "response",
            ResidualType::Working => "working",
        }
    }

    /// Pearson for the Gaussian family, deviance otherwise.
    pub fn default_for(family: Family) -> Self {
        if family == Family::Gaussian {
            ResidualType::Pearson
        } else {
            ResidualType::Deviance
        }
    }
}

/// Per-group central estimates of `Gamma alpha_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RanefSummary {
    pub groups: Vec<String>,
    pub variables: Vec<String>,
    /// `K x q`, row per group.
    pub values: Vec<Vec<f64>>,
    pub method: String,
}

impl RanefSummary {
    pub fn value(&self, k: usize, t: usize) -> f64 {
        self.values[k][t]
    }
}

/// Posterior-mean estimate of `Gamma alpha_k`, used in place of the posterior
/// mode.
pub fn ranef_estimate<F: Real>(
    theta: &Theta<F>,
    structure: &CovStructure,
    draws: &PosteriorDraws<F>,
) -> Result<RanefSummary> {
    let q = structure.q;
    if draws.q() != q {
        return Err(PglmmError::Dimension(format!("draws have q = {}, model q = {q}", draws.q())));
    }
    let gm = structure.gamma_matrix(&theta.gamma);
    let m = draws.m();
    let mut values = Vec::with_capacity(draws.k());
    for k in 0..draws.k() {
        let block = draws.group_block(k);
        let mean: Vec<f64> = (0..q)
            .map(
                |h| if m == 0 { 0.0 } else { block.column(h).iter().map(|v| v.to_f64_lossy()).sum::<f64>() / m as f64 },
            )
            .collect();
        let row: Vec<f64> = (0..q).map(|t| (0..=t).map(|h| gm[[t, h]].to_f64_lossy() * mean[h]).sum()).collect();
        values.push(row);
    }
    Ok(RanefSummary {
        groups: draws.group_names().to_vec(),
        variables: draws.var_names().to_vec(),
        values,
        method: "posterior_mean".into(),
    })
}

/// Draws of `Gamma alpha_k`, in the same layout as the standardized draws.
pub fn transformed_draws<F: Real>(
    theta: &Theta<F>,
    structure: &CovStructure,
    draws: &PosteriorDraws<F>,
) -> Result<PosteriorDraws<F>> {
    let q = structure.q;
    if draws.q() != q {
        return Err(PglmmError::Dimension(format!("draws have q = {}, model q = {q}", draws.q())));
    }
    let gm = structure.gamma_matrix(&theta.gamma);
    let src = draws.data();
    let mut out = Array2::<F>::zeros(src.raw_dim());
    for r in 0..draws.m() {
        for k in 0..draws.k() {
            for t in 0..q {
                let mut s = F::zero();
                for h in 0..=t {
                    s = s + gm[[t, h]] * src[[r, k * q + h]];
                }
                out[[r, k * q + t]] = s;
            }
        }
    }
    PosteriorDraws::new(out, draws.group_names().to_vec(), draws.var_names().to_vec())
}

/// Group-specific coefficients: fixed effects plus the random-effect
/// estimate for every coefficient that has one. `K x (p + 1)`.
pub fn group_coefficients<F: Real>(beta: &[F], ds: &Dataset<F>, ranef: &RanefSummary) -> Vec<Vec<f64>> {
    (0..ranef.values.len())
        .map(|k| {
            let mut row: Vec<f64> = beta.iter().map(|v| v.to_f64_lossy()).collect();
            row[0] += ranef.values[k][0];
            for (t, &c) in ds.z_cols().iter().enumerate() {
                row[c + 1] += ranef.values[k][t + 1];
            }
            row
        })
        .collect()
}

/// Linear predictor or mean on the training data; random-effect estimates
/// are added unless `fixed_only`.
pub fn predict_training<F: Real>(
    theta: &Theta<F>,
    family: Family,
    ds: &Dataset<F>,
    ranef: Option<&RanefSummary>,
    kind: PredictType,
    fixed_only: bool,
) -> Result<Vec<f64>> {
    if !fixed_only && ranef.is_none() {
        return Err(PglmmError::Config("random-effect estimates are required unless fixed_only".into()));
    }
    if theta.beta.len() != ds.p() + 1 {
        return Err(PglmmError::Dimension(format!("{} coefficients for {} covariates", theta.beta.len(), ds.p())));
    }
    let mut eta: Vec<f64> = (0..ds.n()).map(|i| ds.fixed_predictor(&theta.beta, i).to_f64_lossy()).collect();
    if let (false, Some(re)) = (fixed_only, ranef) {
        if re.values.len() != ds.n_groups() || re.values.iter().any(|r| r.len() != ds.q()) {
            return Err(PglmmError::Dimension("random-effect summary does not match the data".into()));
        }
        for (i, e) in eta.iter_mut().enumerate() {
            let k = ds.group_of(i);
            let z = ds.z().row(i);
            *e += z.iter().zip(&re.values[k]).map(|(a, b)| a.to_f64_lossy() * b).sum::<f64>();
        }
    }
    Ok(finish_prediction(eta, family, kind))
}

/// Fixed-effect predictions for new raw covariates, standardized with the
/// training transform.
pub fn predict_new<F: Real>(
    beta: &[F],
    family: Family,
    standardization: &Standardization<F>,
    x_new_raw: &Array2<F>,
    kind: PredictType,
    fixed_only: bool,
) -> Result<Vec<f64>> {
    if !fixed_only {
        return Err(PglmmError::Config("predictions on new data use the fixed effects only".into()));
    }
    if beta.len() != standardization.centers.len() + 1 {
        return Err(PglmmError::Dimension(format!(
            "{} coefficients for {} covariates",
            beta.len(),
            standardization.centers.len()
        )));
    }
    let x = standardization.apply(x_new_raw)?;
    let eta: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|row| (beta[0] + row.iter().zip(&beta[1..]).fold(F::zero(), |s, (a, b)| s + *a * *b)).to_f64_lossy())
        .collect();
    Ok(finish_prediction(eta, family, kind))
}

fn finish_prediction(eta: Vec<f64>, family: Family, kind: PredictType) -> Vec<f64> {
    match kind {
        PredictType::Link => eta,
        PredictType::Response => eta.into_iter().map(|e| family.inverse_link(e)).collect(),
    }
}

/// Residuals of `y` against fitted means `mu`; `tau` is the dispersion.
pub fn residuals(y: &[f64], mu: &[f64], family: Family, tau: f64, kind: ResidualType) -> Result<Vec<f64>> {
    if y.len() != mu.len() {
        return Err(PglmmError::Dimension(format!("{} responses, {} fitted values", y.len(), mu.len())));
    }
    Ok(y.iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let r = y - m;
            match kind {
                ResidualType::Response => r,
                ResidualType::Pearson => r / (tau * family.variance(m)).sqrt(),
                ResidualType::Working => r / family.variance(m),
                ResidualType::Deviance => {
                    let d = family.unit_deviance(y, m).max(0.0).sqrt();
                    if r < 0.0 {
                        -d
                    } else if r > 0.0 {
                        d
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect())
}

pub fn deviance(y: &[f64], mu: &[f64], family: Family) -> f64 {
    y.iter().zip(mu).map(|(&y, &m)| family.unit_deviance(y, m)).sum()
}

/// Fitted means and residuals of a fit on its training data.
pub fn fit_residuals<F: Real>(
    fit: &FitResult<F>,
    ds: &Dataset<F>,
    kind: ResidualType,
    fixed_only: bool,
) -> Result<Vec<f64>> {
    let ranef = if fixed_only { None } else { Some(ranef_estimate(&fit.theta, &fit.structure, &fit.draws)?) };
    let mu = predict_training(&fit.theta, fit.family, ds, ranef.as_ref(), PredictType::Response, fixed_only)?;
    let y: Vec<f64> = ds.y().iter().map(|v| v.to_f64_lossy()).collect();
    residuals(&y, &mu, fit.family, fit.theta.tau.to_f64_lossy(), kind)
}

/// Minimum, quartiles and maximum (linear interpolation between order
/// statistics).
pub fn five_number_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}

/// Diagnostic series of one (group, variable) chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSeries {
    pub group: String,
    pub variable: String,
    pub path: Vec<f64>,
    pub autocorrelation: Vec<f64>,
    /// Cumulative sum of the centered series divided by its standard deviation.
    pub cumsum: Vec<f64>,
    /// `bins + 1` equally spaced edges.
    pub breaks: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Sample autocorrelation up to `max_lag`, lag-`k` covariance normalized by
/// `n - k`. A constant series has correlation 1 at lag 0 and 0 elsewhere.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let lags = max_lag.min(n - 1);
    (0..=lags)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            if c0 == 0.0 {
                return 0.0;
            }
            let ck = (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / (n - k) as f64;
            ck / c0
        })
        .collect()
}

pub fn standardized_cumsum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let mut acc = 0.0;
    x.iter()
        .map(|v| {
            acc += (v - mean) / scale;
            acc
        })
        .collect()
}

/// Equal-width histogram over `[min, max]`; a constant series puts every value
/// in the first bin of a unit-width range.
pub fn histogram(x: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let mut counts = vec![0; bins];
    if x.is_empty() {
        return (Vec::new(), counts);
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
    let breaks: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
    for &v in x {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (breaks, counts)
}

/// Diagnostic series for the selected groups and variables (`None` selects
/// all), in group-major order.
pub fn mcmc_diagnostics<F: Real>(
    draws: &PosteriorDraws<F>,
    groups: Option<&[String]>,
    variables: Option<&[String]>,
    max_lag: usize,
    bins: usize,
) -> Result<Vec<DiagnosticSeries>> {
    if draws.m() == 0 {
        return Err(PglmmError::Config("no posterior draws to diagnose".into()));
    }
    let pick = |names: &[String], wanted: Option<&[String]>, kind: &'static str| -> Result<Vec<usize>> {
        match wanted {
            None => Ok((0..names.len()).collect()),
            Some(w) => {
                let mut idx = Vec::new();
                for name in w {
                    let i = names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| PglmmError::UnknownName { kind, name: name.clone() })?;
                    if !idx.contains(&i) {
                        idx.push(i);
                    }
                }
                idx.sort_unstable();
                Ok(idx)
            }
        }
    };
    let gi = pick(draws.group_names(), groups, "group")?;
    let vi = pick(draws.var_names(), variables, "variable")?;
    let q = draws.q();
    let mut out = Vec::with_capacity(gi.len() * vi.len());
    for &k in &gi {
        for &t in &vi {
            let path: Vec<f64> = draws.data().column(k * q + t).iter().map(|v| v.to_f64_lossy()).collect();
            let (breaks, counts) = histogram(&path, bins);
            out.push(DiagnosticSeries {
                group: draws.group_names()[k].clone(),
                variable: draws.var_names()[t].clone(),
                autocorrelation: autocorrelation(&path, max_lag),
                cumsum: standardized_cumsum(&path),
                breaks,
                counts,
                path,
            });
        }
    }
    Ok(out)
}

pub const SERIES_CSV_HEADER: [&str; 5] = ["series", "group", "variable", "index", "value"];

/// Writes diagnostic series as `series,group,variable,index,value` rows.
pub fn write_diagnostics_csv<W: Write>(series: &[DiagnosticSeries], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_CSV_HEADER)?;
    for s in series {
        let mut emit = |name: &str, values: &mut dyn Iterator<Item = String>| -> std::result::Result<(), csv::Error> {
            for (i, v) in values.enumerate() {
                w.write_record([name, &s.group, &s.variable, &i.to_string(), &v])?;
            }
            Ok(())
        };
        emit("sample_path", &mut s.path.iter().map(|v| v.to_string()))?;
        emit("autocorr", &mut s.autocorrelation.iter().map(|v| v.to_string()))?;
        emit("cumsum", &mut s.cumsum.iter().map(|v| v.to_string()))?;
        emit("histogram", &mut s.counts.iter().map(|v| v.to_string()))?;
        emit("histogram_breaks", &mut s.breaks.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes residuals in the same long format, one row per observation.
pub fn write_residuals_csv<W: Write>(
    kind: ResidualType,
    group_labels: &[&str],
    values: &[f64],
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_CSV_HEADER)?;
    for (i, (g, v)) in group_labels.iter().zip(values).enumerate() {
        w.write_record([kind.name(), g, "residual", &i.to_string(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovKind;

    #[test]
    fn binomial_deviance_residual_at_half() {
        let r = residuals(&[1.0], &[0.5], Family::Binomial, 1.0, ResidualType::Deviance).unwrap();
        assert!((r[0] - (2.0 * 2f64.ln()).sqrt()).abs() < 1e-12);
        let r = residuals(&[0.0], &[0.5], Family::Binomial, 1.0, ResidualType::Deviance).unwrap();
        assert!(r[0] < 0.0);
    }

    #[test]
    fn exact_fit_has_zero_residuals() {
        for kind in [ResidualType::Deviance, ResidualType::Pearson, ResidualType::Response, ResidualType::Working] {
            let r = residuals(&[2.0, 3.0], &[2.0, 3.0], Family::Poisson, 1.0, kind).unwrap();
            assert_eq!(r, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn gaussian_pearson_is_scaled_response() {
        let y = [1.0, -2.0, 0.5];
        let mu = [0.2, 0.1, 0.4];
        let resp = residuals(&y, &mu, Family::Gaussian, 4.0, ResidualType::Response).unwrap();
        let pear = residuals(&y, &mu, Family::Gaussian, 4.0, ResidualType::Pearson).unwrap();
        for (a, b) in resp.iter().zip(&pear) {
            assert!((a / 2.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn alternating_series_autocorrelation() {
        let x: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let acf = autocorrelation(&x, 3);
        assert_eq!(acf[0], 1.0);
        assert!((acf[1] + 1.0).abs() < 1e-12);
        assert!((acf[2] - 1.0).abs() < 1e-12);
        let c = standardized_cumsum(&x);
        assert!(c[49].abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_everything() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (b, c) = histogram(&x, 30);
        assert_eq!(b.len(), 31);
        assert_eq!(c.iter().sum::<usize>(), 100);
        assert_eq!(histogram(&[2.0; 5], 30).1[0], 5);
    }

    #[test]
    fn zero_gamma_ranef_is_zero() {
        let s = CovStructure::new(CovKind::Unstructured, 2);
        let th: Theta<f64> = Theta { beta: vec![0.0, 1.0], gamma: vec![0.0; 3], tau: 1.0 };
        let d = PosteriorDraws::new(
            Array2::from_elem((4, 4), 0.7),
            vec!["a".into(), "b".into()],
            vec!["(Intercept)".into(), "X1".into()],
        )
        .unwrap();
        let r = ranef_estimate(&th, &s, &d).unwrap();
        assert!(r.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn five_numbers() {
        assert_eq!(five_number_summary(&[3.0, 1.0, 2.0, 4.0, 5.0]), Some([1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(five_number_summary(&[]), None);
    }
}
