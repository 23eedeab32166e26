use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::Tensor;

/// A finite set of points in `R^d`, optionally tagged with class and client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Tensor,
    pub label: Option<usize>,
    pub client_id: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.shape().len() != 2 || points.rows() == 0 {
            return Err(Error::Empty(format!(
                "point cloud needs at least one point, got shape {:?}",
                points.shape()
            )));
        }
        points.ensure_finite("point cloud")?;
        Ok(Self {
            points,
            label: None,
            client_id: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn with_tags(mut self, label: Option<usize>, client_id: Option<usize>) -> Self {
        self.label = label;
        self.client_id = client_id;
        self
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    /// Multiset union, `self` first.
    pub fn union(&self, other: &PointCloud) -> Result<PointCloud> {
        if self.dim() != other.dim() {
            return Err(shape_err("point cloud union", self.dim(), other.dim()));
        }
        let mut data = self.points.data().to_vec();
        data.extend_from_slice(other.points.data());
        let label = if self.label == other.label {
            self.label
        } else {
            None
        };
        Ok(PointCloud {
            points: Tensor::matrix(self.len() + other.len(), self.dim(), data)?,
            label,
            client_id: None,
        })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max_{a∈A} min_{b∈B} ‖a − b‖`.
pub fn directed_hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_err("hausdorff operands", a.dim(), b.dim()));
    }
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        let pa = a.point(i);
        let mut best = f64::INFINITY;
        for j in 0..b.len() {
            let d = squared_distance(pa, b.point(j));
            if d < best {
                best = d;
                // early exit: this point cannot raise the maximum
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    Ok(worst.sqrt())
}

/// Symmetric Hausdorff distance, computed exactly over all pairs.
pub fn hausdorff_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}
