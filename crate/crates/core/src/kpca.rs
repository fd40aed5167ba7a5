//! Kernel principal component analysis on a (possibly indefinite)
//! similarity matrix: symmetrize, double-center, eigendecompose, and keep
//! the components of the largest positive eigenvalues.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::eval::SimilarityMatrix;
use crate::measures::Orientation;

/// Low-dimensional coordinates of the matrix items. `coordinates[i]` holds
/// the i-th item's projection; `eigenvalues` are the kept (positive)
/// eigenvalues in descending order. `discarded_negative_mass` is
/// `sum |negative eigenvalues| / sum |all eigenvalues|` and quantifies how
/// indefinite the input was.
#[derive(Debug, Clone)]
pub struct Projection {
    pub ids: Vec<String>,
    pub classes: Vec<String>,
    pub coordinates: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub discarded_negative_mass: f64,
    /// Set when fewer than the requested number of positive eigenvalues
    /// existed.
    pub fewer_than_requested: bool,
}

/// Project matrix items onto the top `dims` positive-eigenvalue components.
///
/// The matrix is symmetrized by averaging with its transpose, then
/// double-centered (row, column, and grand mean). Each kept component is
/// the eigenvector scaled by the square root of its eigenvalue, with the
/// sign fixed so the largest-magnitude coordinate is positive.
pub fn kpca_project(m: &SimilarityMatrix, dims: usize) -> Result<Projection> {
    if m.orientation != Orientation::Similarity {
        return Err(Error::InvalidParameter(
            "kernel PCA requires a similarity matrix (not a dissimilarity)".into(),
        ));
    }
    if dims == 0 {
        return Err(Error::InvalidParameter("dims must be at least 1".into()));
    }
    let n = m.n();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let centered = double_center(&sym);

    let eig = centered.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let total_mass: f64 = eig.eigenvalues.iter().map(|v| v.abs()).sum();
    let negative_mass: f64 = eig
        .eigenvalues
        .iter()
        .filter(|v| **v < 0.0)
        .map(|v| v.abs())
        .sum();
    let discarded_negative_mass = if total_mass > 0.0 {
        negative_mass / total_mass
    } else {
        0.0
    };

    // Strictly positive up to a relative floor, so rank-deficiency noise
    // (eigenvalues ~ 1e-16 * scale) does not masquerade as signal.
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = max_abs * 1e-12;
    let positive: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&idx| eig.eigenvalues[idx] > floor)
        .collect();
    let kept = positive.len().min(dims);
    let fewer_than_requested = kept < dims;

    let mut coordinates = vec![vec![0.0; kept]; n];
    let mut eigenvalues = Vec::with_capacity(kept);
    for (c, &idx) in positive[..kept].iter().enumerate() {
        let value = eig.eigenvalues[idx];
        eigenvalues.push(value);
        let scale = value.sqrt();
        let mut column: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] * scale).collect();
        // Sign convention: largest-magnitude coordinate positive.
        let anchor = column
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .unwrap()
                    .then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        if column[anchor] < 0.0 {
            for v in &mut column {
                *v = -*v;
            }
        }
        for i in 0..n {
            coordinates[i][c] = column[i];
        }
    }

    Ok(Projection {
        ids: m.ids.clone(),
        classes: m.classes.clone(),
        coordinates,
        eigenvalues,
        discarded_negative_mass,
        fewer_than_requested,
    })
}

fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let grand = k.iter().sum::<f64>() / (n * n) as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / n as f64).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).iter().sum::<f64>() / n as f64).collect();
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}
