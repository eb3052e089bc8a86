use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

/// Column centers and scales used to standardize the covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization<F> {
    pub centers: Vec<F>,
    pub scales: Vec<F>,
}

impl<F: Real> Standardization<F> {
    pub fn identity(p: usize) -> Self {
        Standardization { centers: vec![F::zero(); p], scales: vec![F::one(); p] }
    }

    pub fn apply(&self, x_raw: &Array2<F>) -> Result<Array2<F>> {
        if x_raw.ncols() != self.centers.len() {
            return Err(PglmmError::Dimension(format!(
                "expected {} covariate columns, found {}",
                self.centers.len(),
                x_raw.ncols()
            )));
        }
        let mut x = x_raw.clone();
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.centers[j]) / self.scales[j]);
        }
        Ok(x)
    }

    /// Maps coefficients fitted on standardized columns (intercept first) to
    /// the raw covariate scale.
    pub fn destandardize(&self, beta: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(beta.len());
        let mut intercept = beta[0];
        for j in 0..self.centers.len() {
            let b = beta[j + 1] / self.scales[j];
            intercept = intercept - b * self.centers[j];
            out.push(b);
        }
        out.insert(0, intercept);
        out
    }
}

/// Standardizes each column to mean 0 and mean square 1.
pub fn standardize<F: Real>(x_raw: &Array2<F>) -> Result<(Array2<F>, Standardization<F>)> {
    let n = x_raw.nrows();
    let nf = F::from_count(n.max(1));
    let mut centers = Vec::with_capacity(x_raw.ncols());
    let mut scales = Vec::with_capacity(x_raw.ncols());
    for (j, col) in x_raw.columns().into_iter().enumerate() {
        let center = col.iter().copied().sum::<F>() / nf;
        let ms = col.iter().map(|&v| (v - center) * (v - center)).sum::<F>() / nf;
        let scale = ms.sqrt();
        let magnitude = col.iter().fold(F::zero(), |a, &v| a.max(v.abs()));
        if n == 0 || !(scale > F::epsilon() * F::lit(16.0) * (F::one() + magnitude)) {
            return Err(PglmmError::ConstantColumn { column: j });
        }
        centers.push(center);
        scales.push(scale);
    }
    let st = Standardization { centers, scales };
    let x = st.apply(x_raw)?;
    Ok((x, st))
}

/// Observed data: response, standardized covariates, random-effect subset and
/// grouping.
#[derive(Clone, Debug)]
pub struct Dataset<F> {
    y: Vec<F>,
    x: Array2<F>,
    /// Random-effect design, intercept column first (N x q).
    z: Array2<F>,
    z_cols: Vec<usize>,
    group: Vec<usize>,
    group_index: Vec<Vec<usize>>,
    levels: Vec<String>,
    covariate_names: Vec<String>,
    standardization: Standardization<F>,
}

impl<F: Real> Dataset<F> {
    /// Builds a dataset from covariates that are already on the working scale.
    ///
    /// Group levels are ordered by first appearance.
    pub fn new<S: AsRef<str>>(y: Vec<F>, x: Array2<F>, z_cols: Vec<usize>, groups: &[S]) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n || groups.len() != n {
            return Err(PglmmError::Dimension(format!(
                "y has {} rows, X has {}, group has {}",
                n,
                x.nrows(),
                groups.len()
            )));
        }
        for (pos, &c) in z_cols.iter().enumerate() {
            if c >= p {
                return Err(PglmmError::Dimension(format!("random-effect column {c} out of range (p = {p})")));
            }
            if z_cols[..pos].contains(&c) {
                return Err(PglmmError::Dimension(format!("random-effect column {c} listed twice")));
            }
        }
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        let mut levels = Vec::new();
        let mut group = Vec::with_capacity(n);
        let mut group_index: Vec<Vec<usize>> = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let g = g.as_ref();
            let k = *lookup.entry(g).or_insert_with(|| {
                levels.push(g.to_string());
                group_index.push(Vec::new());
                levels.len() - 1
            });
            group.push(k);
            group_index[k].push(i);
        }
        let q = z_cols.len() + 1;
        let mut z = Array2::zeros((n, q));
        for i in 0..n {
            z[[i, 0]] = F::one();
            for (t, &c) in z_cols.iter().enumerate() {
                z[[i, t + 1]] = x[[i, c]];
            }
        }
        Ok(Dataset {
            y,
            x,
            z,
            z_cols,
            group,
            group_index,
            levels,
            covariate_names: (0..p).map(|j| format!("X{}", j + 1)).collect(),
            standardization: Standardization::identity(p),
        })
    }

    /// Standardizes `x_raw` and remembers the transform for prediction on new data.
    pub fn from_raw<S: AsRef<str>>(y: Vec<F>, x_raw: &Array2<F>, z_cols: Vec<usize>, groups: &[S]) -> Result<Self> {
        let (x, st) = standardize(x_raw)?;
        let mut ds = Dataset::new(y, x, z_cols, groups)?;
        ds.standardization = st;
        Ok(ds)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(PglmmError::Dimension(format!("{} names for {} covariates", names.len(), self.p())));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn validate_for(&self, family: crate::Family) -> Result<()> {
        self.y.iter().enumerate().try_for_each(|(i, &v)| family.validate_response(v, i))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    /// Number of covariates (intercept excluded).
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    /// Random-effect dimension including the intercept.
    pub fn q(&self) -> usize {
        self.z.ncols()
    }
    pub fn n_groups(&self) -> usize {
        self.levels.len()
    }
    pub fn y(&self) -> &[F] {
        &self.y
    }
    pub fn x(&self) -> &Array2<F> {
        &self.x
    }
    pub fn z(&self) -> &Array2<F> {
        &self.z
    }
    pub fn z_cols(&self) -> &[usize] {
        &self.z_cols
    }
    pub fn group_of(&self, i: usize) -> usize {
        self.group[i]
    }
    pub fn groups(&self) -> &[usize] {
        &self.group
    }
    pub fn group_rows(&self, k: usize) -> &[usize] {
        &self.group_index[k]
    }
    pub fn levels(&self) -> &[String] {
        &self.levels
    }
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
    pub fn standardization(&self) -> &Standardization<F> {
        &self.standardization
    }

    /// Names of the random effects, intercept first.
    pub fn random_effect_names(&self) -> Vec<String> {
        std::iter::once("(Intercept)".to_string())
            .chain(self.z_cols.iter().map(|&c| self.covariate_names[c].clone()))
            .collect()
    }

    /// Stable per-group key (FNV-1a of the level label) used to seed RNG streams.
    pub fn group_key(&self, k: usize) -> u64 {
        fnv1a(self.levels[k].as_bytes())
    }

    /// Fixed-effect part x_i' beta with `beta[0]` the intercept.
    #[inline]
    pub fn fixed_predictor(&self, beta: &[F], i: usize) -> F {
        let row = self.x.row(i);
        let mut s = beta[0];
        for (j, &v) in row.iter().enumerate() {
            s = s + v * beta[j + 1];
        }
        s
    }

    /// Copy restricted to the random intercept only and no covariates.
    pub fn intercept_only(&self) -> Self {
        let labels: Vec<&str> = self.group.iter().map(|&k| self.levels[k].as_str()).collect();
        Dataset::new(self.y.clone(), Array2::zeros((self.n(), 0)), Vec::new(), &labels)
            .expect("subset of a valid dataset")
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardize_hand_example() {
        let x: Array2<f64> = array![[1.0], [2.0], [3.0], [4.0]];
        let (s, st) = standardize(&x).unwrap();
        let expect = [-1.341_640_786_5, -0.447_213_595_5, 0.447_213_595_5, 1.341_640_786_5];
        for (a, b) in s.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((st.centers[0] - 2.5).abs() < 1e-15);
        assert!((st.scales[0] - 1.118_033_988_7).abs() < 1e-9);
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let x = array![[-1.0], [1.0], [-1.0], [1.0]];
        let (s, st) = standardize(&x).unwrap();
        assert_eq!(s, x);
        assert_eq!(st.centers[0], 0.0);
        assert_eq!(st.scales[0], 1.0);
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]];
        match standardize(&x) {
            Err(PglmmError::ConstantColumn { column }) => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn groups_are_indexed_by_first_appearance() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let ds = Dataset::new(vec![0.0; 4], x, vec![0], &["b", "a", "b", "c"]).unwrap();
        assert_eq!(ds.levels(), &["b", "a", "c"]);
        assert_eq!(ds.group_rows(0), &[0, 2]);
        assert_eq!(ds.q(), 2);
        assert_eq!(ds.z()[[3, 1]], 3.0);
        assert_eq!(ds.z()[[3, 0]], 1.0);
    }

    #[test]
    fn bad_random_effect_column() {
        let x = array![[0.0], [1.0]];
        assert!(Dataset::new(vec![0.0, 1.0], x, vec![1], &["a", "b"]).is_err());
    }

    #[test]
    fn duplicated_columns_are_accepted() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [4.0, 4.0]];
        let (s, _) = standardize(&x).unwrap();
        assert_eq!(s.column(0), s.column(1));
    }
}
