//! Server-side class geometry: per-client class centres and global prototypes,
//! both maintained as exponential moving averages.

use crate::error::{shape_err, Error, Result};
use crate::protocol::FeatureRecord;

/// `z̄ ← (1−μ)·z̄ + μ·mean(batch)`. An empty batch leaves `z̄` unchanged.
pub fn update_client_center(center: &mut [f64], batch: &[&[f64]], mu_client: f64) -> Result<()> {
    if !(mu_client > 0.0 && mu_client <= 1.0) {
        return Err(Error::Config(format!(
            "mu_client {mu_client} outside (0, 1]"
        )));
    }
    if batch.is_empty() {
        return Ok(());
    }
    let scale = mu_client / batch.len() as f64;
    let mut sum = vec![0.0; center.len()];
    for row in batch {
        if row.len() != center.len() {
            return Err(shape_err("client centre update", center.len(), row.len()));
        }
        for (s, v) in sum.iter_mut().zip(*row) {
            *s += v;
        }
    }
    for (c, s) in center.iter_mut().zip(sum) {
        *c = (1.0 - mu_client) * *c + scale * s;
    }
    Ok(())
}

/// `p ← (1−μ)·p + μ·Σ_i (M_i/ΣM)·z̄_i`, summed in the order given.
pub fn update_global_prototype(
    prototype: &mut [f64],
    centers: &[&[f64]],
    sizes: &[usize],
    mu_server: f64,
) -> Result<()> {
    if !(mu_server > 0.0 && mu_server <= 1.0) {
        return Err(Error::Config(format!(
            "mu_server {mu_server} outside (0, 1]"
        )));
    }
    if centers.len() != sizes.len() {
        return Err(shape_err(
            "prototype update sizes",
            centers.len(),
            sizes.len(),
        ));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("prototype update needs Σ M_i > 0".into()));
    }
    let mut mean = vec![0.0; prototype.len()];
    for (z, &m) in centers.iter().zip(sizes) {
        if z.len() != prototype.len() {
            return Err(shape_err(
                "prototype update centre",
                prototype.len(),
                z.len(),
            ));
        }
        let w = m as f64 / total as f64;
        for (acc, v) in mean.iter_mut().zip(*z) {
            *acc += w * v;
        }
    }
    for (p, m) in prototype.iter_mut().zip(mean) {
        *p = (1.0 - mu_server) * *p + mu_server * m;
    }
    Ok(())
}

/// Class centres per client and global prototypes, all zero-initialised.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeState {
    num_classes: usize,
    width: usize,
    /// `centers[client][class]`
    centers: Vec<Vec<Vec<f64>>>,
    prototypes: Vec<Vec<f64>>,
}

impl PrototypeState {
    pub fn new(num_clients: usize, num_classes: usize, width: usize) -> Self {
        Self {
            num_classes,
            width,
            centers: vec![vec![vec![0.0; width]; num_classes]; num_clients],
            prototypes: vec![vec![0.0; width]; num_classes],
        }
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn center(&self, client: usize, class: usize) -> &[f64] {
        &self.centers[client][class]
    }

    fn check(&self, client: usize, batches: &[Vec<FeatureRecord>]) -> Result<()> {
        if client >= self.centers.len() {
            return Err(Error::Config(format!("unknown client {client}")));
        }
        for r in batches.iter().flatten() {
            if r.label >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    classes: self.num_classes,
                });
            }
            if r.embedding.len() != self.width {
                return Err(shape_err(
                    "uploaded embedding",
                    self.width,
                    r.embedding.len(),
                ));
            }
        }
        Ok(())
    }

    /// Folds one client's uploaded batches into its centres, batch by batch and class by class.
    pub fn absorb_batches(
        &mut self,
        client: usize,
        batches: &[Vec<FeatureRecord>],
        mu_client: f64,
    ) -> Result<()> {
        self.check(client, batches)?;
        for batch in batches {
            for class in 0..self.num_classes {
                let rows: Vec<&[f64]> = batch
                    .iter()
                    .filter(|r| r.label == class)
                    .map(|r| r.embedding.as_slice())
                    .collect();
                update_client_center(&mut self.centers[client][class], &rows, mu_client)?;
            }
        }
        Ok(())
    }

    /// Replaces each class centre of `client` by the mean of all its uploaded
    /// class features at once. Classes without records keep their centre.
    pub fn absorb_at_once(&mut self, client: usize, batches: &[Vec<FeatureRecord>]) -> Result<()> {
        self.check(client, batches)?;
        for class in 0..self.num_classes {
            let rows: Vec<&[f64]> = batches
                .iter()
                .flatten()
                .filter(|r| r.label == class)
                .map(|r| r.embedding.as_slice())
                .collect();
            update_client_center(&mut self.centers[client][class], &rows, 1.0)?;
        }
        Ok(())
    }

    /// Moves every prototype toward the size-weighted mean of the client centres.
    pub fn refresh_prototypes(&mut self, sizes: &[usize], mu_server: f64) -> Result<()> {
        if sizes.len() != self.centers.len() {
            return Err(shape_err("client sizes", self.centers.len(), sizes.len()));
        }
        for class in 0..self.num_classes {
            let centers: Vec<&[f64]> = self.centers.iter().map(|c| c[class].as_slice()).collect();
            update_global_prototype(&mut self.prototypes[class], &centers, sizes, mu_server)?;
        }
        if self.prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("class prototypes".into()));
        }
        Ok(())
    }
}
