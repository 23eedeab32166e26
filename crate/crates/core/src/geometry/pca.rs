use nalgebra::{DMatrix, SymmetricEigen};

use super::hausdorff::PointCloud;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Top-two principal-component projection of a cloud.
#[derive(Debug, Clone)]
pub struct Projection2d {
    /// `[n, 2]` coordinates of the centred points on the two components.
    pub coordinates: Tensor,
    pub components: [Vec<f64>; 2],
    /// Covariance eigenvalues (unbiased normalisation), descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Projects onto the two leading eigenvectors of the sample covariance.
/// Each component is signed so its largest-magnitude coordinate is positive.
pub fn pca_project_2d(cloud: &PointCloud) -> Result<Projection2d> {
    let (n, d) = (cloud.len(), cloud.dim());
    if d < 2 {
        return Err(Error::Config(format!(
            "PCA to 2-D needs dimension ≥ 2, got {d}"
        )));
    }
    if n < 2 {
        return Err(Error::Empty("PCA needs at least two points".into()));
    }
    let x = DMatrix::from_row_slice(n, d, cloud.points().data());
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for (j, m) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let component = |k: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            });
        if pivot.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [component(0), component(1)];
    let mut coords = Vec::with_capacity(2 * n);
    for r in 0..n {
        let row = centered.row(r);
        for c in &components {
            coords.push(row.iter().zip(c).map(|(a, b)| a * b).sum());
        }
    }
    Ok(Projection2d {
        coordinates: Tensor::matrix(n, 2, coords)?,
        components,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        mean,
    })
}
