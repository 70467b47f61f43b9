//! Principal component analysis by symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `d × r`, orthonormal columns.
    pub loadings: Array2<f64>,
    /// Descending covariance eigenvalues of the retained directions.
    pub eigenvalues: Vec<f64>,
    /// Trace of the covariance matrix.
    pub total_variance: f64,
    /// The data had (numerically) zero covariance and the loadings are an
    /// arbitrary orthonormal basis.
    pub degenerate: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.loadings.ncols()
    }

    /// Fraction of total variance carried by each retained direction.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues
            .iter()
            .map(|e| e / self.total_variance)
            .collect()
    }

    /// `x · loadings` without centering. Linear, so it maps the origin to the
    /// origin and commutes with sums of rows.
    pub fn project_linear(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::shape(self.mean.len(), x.ncols()));
        }
        Ok(x.dot(&self.loadings))
    }
}

/// Flip each column so that its largest-magnitude entry (first on ties) is
/// positive.
fn fix_signs(loadings: &mut Array2<f64>) {
    for mut col in loadings.columns_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue, ties by original index.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Fits the top `r` principal directions of `x`.
///
/// Uses the `d × d` covariance when `d ≤ n` and the `n × n` Gram matrix
/// otherwise.
pub fn pca_fit(x: ArrayView2<f64>, r: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    if r == 0 || r > (n - 1).min(d) {
        return Err(Error::InvalidInput(format!(
            "cannot fit {r} components to {n} rows in {d} dimensions"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("PCA input contains non-finite values".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("n ≥ 2");
    let centered = &x - &mean;
    let scale = 1.0 / (n - 1) as f64;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() * scale;

    let degenerate = total_variance <= f64::EPSILON * f64::EPSILON;
    let (eigenvalues, mut loadings) = if degenerate {
        let mut basis = Array2::zeros((d, r));
        for j in 0..r {
            basis[[j, j]] = 1.0;
        }
        (vec![0.0; r], basis)
    } else if d <= n {
        let cov = centered.t().dot(&centered) * scale;
        let (values, vectors) = sorted_eigen(DMatrix::from_fn(d, d, |a, b| cov[[a, b]]));
        let loadings = Array2::from_shape_fn((d, r), |(a, c)| vectors[(a, c)]);
        (values[..r].to_vec(), loadings)
    } else {
        let gram = centered.dot(&centered.t()) * scale;
        let (values, vectors) = sorted_eigen(DMatrix::from_fn(n, n, |a, b| gram[[a, b]]));
        // v = Xcᵀ u / √((n − 1) λ) for each retained eigenpair.
        let mut loadings = Array2::zeros((d, r));
        for c in 0..r {
            let u = Array1::from_shape_fn(n, |i| vectors[(i, c)]);
            let mut v = centered.t().dot(&u);
            let norm = v.dot(&v).sqrt();
            if norm > 0.0 {
                v /= norm;
            }
            loadings.column_mut(c).assign(&v);
        }
        (values[..r].to_vec(), loadings)
    };
    fix_signs(&mut loadings);
    Ok(PcaModel {
        mean,
        loadings,
        eigenvalues: eigenvalues.into_iter().map(|e| e.max(0.0)).collect(),
        total_variance,
        degenerate,
    })
}

/// `(x − mean) · loadings`.
pub fn pca_transform(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::shape(model.mean.len(), x.ncols()));
    }
    Ok((&x - &model.mean).dot(&model.loadings))
}
