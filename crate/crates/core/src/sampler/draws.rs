//! Posterior draw matrix and its on-disk format.
//!
//! Binary layout: the 9 magic bytes `PGLMPOST1`, then the row count `M` and
//! column count `K*q` as little-endian `u64`, then `M*K*q` little-endian IEEE-754
//! doubles in row-major order. A JSON sidecar `<name>.meta.json` records the
//! column labels, `M`, `K`, `q` and the seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

pub const POSTERIOR_MAGIC: &[u8; 9] = b"PGLMPOST1";

/// `M x (K*q)` matrix of random-effect draws; column `k*q + v` holds variable
/// `v` of group `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws<F> {
    data: Array2<F>,
    group_names: Vec<String>,
    var_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeta {
    pub labels: Vec<(String, String)>,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub q: usize,
    pub seed: u64,
}

impl<F: Real> PosteriorDraws<F> {
    pub fn new(data: Array2<F>, group_names: Vec<String>, var_names: Vec<String>) -> Result<Self> {
        let cols = group_names.len() * var_names.len();
        if data.ncols() != cols {
            return Err(PglmmError::Dimension(format!(
                "draw matrix has {} columns, expected K*q = {}",
                data.ncols(),
                cols
            )));
        }
        Ok(PosteriorDraws { data, group_names, var_names })
    }

    pub fn zeros(m: usize, group_names: Vec<String>, var_names: Vec<String>) -> Self {
        let cols = group_names.len() * var_names.len();
        PosteriorDraws { data: Array2::zeros((m, cols)), group_names, var_names }
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }
    pub fn k(&self) -> usize {
        self.group_names.len()
    }
    pub fn q(&self) -> usize {
        self.var_names.len()
    }
    pub fn data(&self) -> &Array2<F> {
        &self.data
    }
    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }
    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    /// Draws of group `k` as an `M x q` view.
    pub fn group_block(&self, k: usize) -> ArrayView2<'_, F> {
        let q = self.q();
        self.data.slice(s![.., k * q..(k + 1) * q])
    }

    /// `(group, variable)` label of every column.
    pub fn labels(&self) -> Vec<(String, String)> {
        self.group_names.iter().flat_map(|g| self.var_names.iter().map(move |v| (g.clone(), v.clone()))).collect()
    }

    pub fn meta(&self, seed: u64) -> PosteriorMeta {
        PosteriorMeta { labels: self.labels(), m: self.m(), k: self.k(), q: self.q(), seed }
    }

    /// Writes the binary file at `path` and the sidecar next to it.
    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let file = File::create(path).map_err(|e| PglmmError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| PglmmError::io(path, e));
        write(POSTERIOR_MAGIC)?;
        write(&(self.m() as u64).to_le_bytes())?;
        write(&(self.data.ncols() as u64).to_le_bytes())?;
        for v in self.data.iter() {
            write(&v.to_f64_lossy().to_le_bytes())?;
        }
        w.flush().map_err(|e| PglmmError::io(path, e))?;

        let meta_path = sidecar_path(path);
        let json =
            serde_json::to_vec_pretty(&self.meta(seed)).map_err(|e| PglmmError::format(&meta_path, e.to_string()))?;
        std::fs::write(&meta_path, json).map_err(|e| PglmmError::io(&meta_path, e))
    }

    /// Reads a file written by [`PosteriorDraws::save`]; returns the draws and
    /// the recorded seed.
    pub fn load(path: &Path) -> Result<(Self, PosteriorMeta)> {
        let meta_path = sidecar_path(path);
        let meta_bytes = std::fs::read(&meta_path).map_err(|e| PglmmError::io(&meta_path, e))?;
        let meta: PosteriorMeta =
            serde_json::from_slice(&meta_bytes).map_err(|e| PglmmError::format(&meta_path, e.to_string()))?;

        let file = File::open(path).map_err(|e| PglmmError::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic).map_err(|e| PglmmError::io(path, e))?;
        if &magic != POSTERIOR_MAGIC {
            return Err(PglmmError::format(path, "missing PGLMPOST1 magic"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word).map_err(|e| PglmmError::io(path, e))?;
        let m = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(|e| PglmmError::io(path, e))?;
        let cols = u64::from_le_bytes(word) as usize;
        if m != meta.m || cols != meta.k * meta.q || meta.labels.len() != cols {
            return Err(PglmmError::format(path, "header disagrees with sidecar metadata"));
        }
        let mut values = Vec::with_capacity(m * cols);
        for _ in 0..m * cols {
            r.read_exact(&mut word).map_err(|e| PglmmError::io(path, e))?;
            values.push(F::lit(f64::from_le_bytes(word)));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| PglmmError::io(path, e))? != 0 {
            return Err(PglmmError::format(path, "trailing bytes after draw matrix"));
        }
        let data = Array2::from_shape_vec((m, cols), values).map_err(|e| PglmmError::format(path, e.to_string()))?;
        let q = meta.q;
        let group_names: Vec<String> = (0..meta.k).map(|k| meta.labels[k * q].0.clone()).collect();
        let var_names: Vec<String> = (0..q).map(|v| meta.labels[v].1.clone()).collect();
        let draws = PosteriorDraws::new(data, group_names, var_names)?;
        if draws.labels() != meta.labels {
            return Err(PglmmError::format(&meta_path, "labels are not group-major"));
        }
        Ok((draws, meta))
    }
}

/// `foo.bin` -> `foo.meta.json`; any other name gets `.meta.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    match s.strip_suffix(".bin") {
        Some(stem) => PathBuf::from(format!("{stem}.meta.json")),
        None => PathBuf::from(format!("{s}.meta.json")),
    }
}
