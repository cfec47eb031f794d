use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::LATENT_DIM;
use crate::error::{invalid, Error, Result};

/// Principal axes of the latent vectors. Rows of `components` are
/// orthonormal and sorted by decreasing explained variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: [f64; LATENT_DIM],
    pub components: Vec<[f64; LATENT_DIM]>,
    pub explained_variance: Vec<f64>,
}

/// Fits a `dims`-component PCA. Fails when the centred data has rank below `dims`.
pub fn fit_pca(vectors: &[[f64; LATENT_DIM]], dims: usize) -> Result<PcaModel> {
    if dims == 0 || dims > LATENT_DIM {
        return invalid(format!("cannot extract {dims} components from {LATENT_DIM}-D data"));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("non-finite latent vector");
    }
    let n = vectors.len();
    if n < 2 {
        return Err(Error::RankDeficient {
            rank: 0,
            required: dims,
        });
    }
    let mut mean = [0.0; LATENT_DIM];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(LATENT_DIM, LATENT_DIM);
    for v in vectors {
        for i in 0..LATENT_DIM {
            let di = v[i] - mean[i];
            for j in 0..LATENT_DIM {
                cov[(i, j)] += di * (v[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..LATENT_DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 * LATENT_DIM as f64;
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > tol && top > 0.0)
        .count();
    if rank < dims {
        return Err(Error::RankDeficient {
            rank,
            required: dims,
        });
    }

    let mut components = Vec::with_capacity(dims);
    let mut explained_variance = Vec::with_capacity(dims);
    for &i in order.iter().take(dims) {
        let col = eig.eigenvectors.column(i);
        let mut row = [0.0; LATENT_DIM];
        row.iter_mut().zip(col.iter()).for_each(|(r, c)| *r = *c);
        // Deterministic sign: largest-magnitude loading is positive.
        let pivot = row
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            row.iter_mut().for_each(|r| *r = -*r);
        }
        components.push(row);
        explained_variance.push(eig.eigenvalues[i]);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, v: &[f64; LATENT_DIM]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    /// Three-component projection, the shape the clustering works on.
    pub fn project3(&self, v: &[f64; LATENT_DIM]) -> Result<[f64; 3]> {
        let p = self.project(v);
        p.as_slice()
            .try_into()
            .map_err(|_| Error::InvalidInput(format!("PCA has {} components, need 3", p.len())))
    }

    pub fn reconstruct(&self, projected: &[f64]) -> [f64; LATENT_DIM] {
        let mut out = self.mean;
        for (c, &p) in self.components.iter().zip(projected) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += p * ci;
            }
        }
        out
    }
}
