//! CSV input and output of datasets.
//!
//! A dataset file has a header row, one response column, one group column
//! (any labels) and numeric covariate columns.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::model::Dataset;
use crate::real::Real;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffects {
    /// Every covariate gets a random effect.
    #[default]
    All,
    /// Random intercept only.
    None,
    Named(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnRoles {
    pub response: String,
    pub group: String,
    /// Covariate columns; all remaining columns when absent.
    pub covariates: Option<Vec<String>>,
    pub random_effects: RandomEffects,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            response: "y".into(),
            group: "group".into(),
            covariates: None,
            random_effects: RandomEffects::All,
        }
    }
}

/// Raw string table.
#[derive(Clone, Debug)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| PglmmError::io(path, e))?;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> =
            r.headers().map_err(|e| PglmmError::format(path, e.to_string()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| PglmmError::format(path, e.to_string()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PglmmError::format(path, format!("missing column '{name}'")))
    }

    fn numeric(&self, col: usize, path: &Path) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[col].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    PglmmError::format(
                        path,
                        format!("row {}: column '{}' is not a finite number: '{}'", i + 2, self.headers[col], r[col]),
                    )
                })
            })
            .collect()
    }

    /// Numeric matrix of the named columns.
    pub fn matrix<F: Real>(&self, names: &[String], path: &Path) -> Result<Array2<F>> {
        let mut x = Array2::<F>::zeros((self.rows.len(), names.len()));
        for (j, name) in names.iter().enumerate() {
            let col = self.numeric(self.column(name, path)?, path)?;
            for (i, v) in col.into_iter().enumerate() {
                x[[i, j]] = F::lit(v);
            }
        }
        Ok(x)
    }
}

/// Reads a dataset, standardizing the covariates.
pub fn read_dataset<F: Real>(path: &Path, roles: &ColumnRoles) -> Result<Dataset<F>> {
    let table = Table::read(path)?;
    let yc = table.column(&roles.response, path)?;
    let gc = table.column(&roles.group, path)?;
    if table.rows.is_empty() {
        return Err(PglmmError::format(path, "no data rows"));
    }
    let covariates: Vec<String> = match &roles.covariates {
        Some(c) => c.clone(),
        None => table.headers.iter().filter(|h| **h != roles.response && **h != roles.group).cloned().collect(),
    };
    for c in &covariates {
        if *c == roles.response || *c == roles.group {
            return Err(PglmmError::format(
                path,
                format!("column '{c}' cannot be both a covariate and the response or group"),
            ));
        }
    }
    let z_cols: Vec<usize> = match &roles.random_effects {
        RandomEffects::All => (0..covariates.len()).collect(),
        RandomEffects::None => Vec::new(),
        RandomEffects::Named(names) => names
            .iter()
            .map(|n| {
                covariates
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| PglmmError::format(path, format!("random effect '{n}' is not a covariate")))
            })
            .collect::<Result<_>>()?,
    };
    let y: Vec<F> = table.numeric(yc, path)?.into_iter().map(F::lit).collect();
    let groups: Vec<&str> = table.rows.iter().map(|r| r[gc].as_str()).collect();
    let x = table.matrix::<F>(&covariates, path)?;
    Dataset::from_raw(y, &x, z_cols, &groups)?.with_covariate_names(covariates)
}

/// Writes `group, response, covariates...` with shortest round-trip floats.
pub fn write_dataset<W: Write>(
    out: W,
    group_labels: &[String],
    y: &[f64],
    x: &Array2<f64>,
    covariate_names: &[String],
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group".to_string(), "y".to_string()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..y.len() {
        let mut rec = vec![group_labels[i].clone(), y[i].to_string()];
        rec.extend(x.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
