//! Feature-inversion attack and leakage metrics.
//!
//! An attacker holding a client's frozen extractor trains a decoder that maps
//! embeddings back to inputs, then scores reconstructions of held-out samples
//! with SSIM, RMS distance and a Fréchet distance over the network's own
//! penultimate features.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{shape_err, Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{
    adam_step, backward_layers, forward_layers, mean_squared_error, stack_widths, AdamConfig,
    AdamState, Layer, NetworkSpec, Parameters, Tensor,
};
use crate::seeding::{stream_id, stream_rng, tags};

/// Reconstructions with RMS distance below this are flagged as leaking.
pub const RISK_THRESHOLD: f64 = 0.1;
const FRECHET_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub split_index: usize,
    /// Hidden widths of the decoder; `None` mirrors the extractor.
    pub decoder_hidden: Option<Vec<usize>>,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            split_index: 4,
            decoder_hidden: None,
            train_fraction: 0.5,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("attack batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Decoder layers from the split width back to the input width. Hidden widths
/// default to the extractor's affine output widths in reverse.
pub fn decoder_layers(
    spec: &NetworkSpec,
    split_index: usize,
    hidden: Option<&[usize]>,
) -> Result<Vec<Layer>> {
    let extractor = spec.with_split(split_index)?;
    let input = extractor.input_width();
    let embedding = extractor.embedding_width();
    let mirrored: Vec<usize> = match hidden {
        Some(h) => h.to_vec(),
        None => {
            let mut outs: Vec<usize> = extractor.layers()[..split_index]
                .iter()
                .filter_map(|l| match l {
                    Layer::Affine { output, .. } => Some(*output),
                    _ => None,
                })
                .collect();
            outs.pop();
            outs.reverse();
            outs
        }
    };
    let mut layers = Vec::new();
    let mut width = embedding;
    for h in mirrored {
        layers.push(Layer::Affine {
            input: width,
            output: h,
        });
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(Layer::Affine {
        input: width,
        output: input,
    });
    stack_widths(&layers)?;
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub layers: Vec<Layer>,
    pub params: Parameters,
}

impl Decoder {
    pub fn decode(&self, embeddings: &Tensor) -> Result<Tensor> {
        Ok(forward_layers(&self.layers, &self.params, 0..self.layers.len(), embeddings)?.0)
    }
}

fn embed(
    extractor: &Parameters,
    spec: &NetworkSpec,
    split_index: usize,
    x: &Tensor,
) -> Result<Tensor> {
    Ok(forward_layers(spec.layers(), extractor, 0..split_index, x)?.0)
}

/// Trains a decoder on `(F(x), x)` pairs with the extractor frozen.
pub fn train_decoder(
    extractor: &Parameters,
    spec: &NetworkSpec,
    train: &ClientShard,
    config: &AttackConfig,
) -> Result<Decoder> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::Empty(format!(
            "decoder training needs at least 2 samples, got {}",
            train.len()
        )));
    }
    let layers = decoder_layers(spec, config.split_index, config.decoder_hidden.as_deref())?;
    let u = embed(extractor, spec, config.split_index, &train.inputs)?;
    let mut rng = stream_rng(
        config.seed,
        stream_id(
            tags::DECODER,
            train.client_id as u64,
            config.split_index as u64,
            0,
        ),
    );
    let mut params = Parameters::init(&layers, &mut rng);
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let ub = u.select_rows(chunk);
            let xb = train.inputs.select_rows(chunk);
            let (pred, cache) = forward_layers(&layers, &params, 0..layers.len(), &ub)?;
            let (_, grad) = mean_squared_error(&pred, &xb)?;
            let (grads, _) = backward_layers(&layers, &params, &cache, &grad)?;
            adam_step(&mut params, &grads, &mut state)?;
        }
    }
    Ok(Decoder { layers, params })
}

/// Mean squared reconstruction error of `decoder` on `shard`.
pub fn reconstruction_mse(
    extractor: &Parameters,
    spec: &NetworkSpec,
    split_index: usize,
    decoder: &Decoder,
    shard: &ClientShard,
) -> Result<f64> {
    let recon = decoder.decode(&embed(extractor, spec, split_index, &shard.inputs)?)?;
    Ok(mean_squared_error(&recon, &shard.inputs)?.0)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Single-window SSIM with `C1 = (0.01L)²`, `C2 = (0.03L)²` and population moments.
pub fn ssim(x: &[f64], y: &[f64], dynamic_range: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err("ssim operands", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::Empty("ssim over zero values".into()));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64;
    Ok(((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

/// Root-mean-square difference.
pub fn l2_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err("l2 operands", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::Empty("l2 distance over zero values".into()));
    }
    Ok((x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt())
}

pub fn is_risk(l2: f64) -> bool {
    l2 < RISK_THRESHOLD
}

fn mean_and_covariance(cloud: &PointCloud) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, d) = (cloud.len(), cloud.dim());
    if n <= d {
        return Err(Error::Config(format!(
            "Fréchet distance needs more points than dimensions, got {n} points in {d} dimensions"
        )));
    }
    let pts = cloud.points();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(pts.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..n {
        let row = pts.row(r);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += FRECHET_RIDGE;
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = m.diagonal().iter().map(|v| v.abs()).fold(1.0, f64::max);
    let eig = SymmetricEigen::new(m);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(Error::Numerical(format!(
                "{what} is not positive semidefinite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2})` with unbiased covariances
/// and a `1e-6` ridge on both diagonals.
pub fn frechet_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_err("Fréchet operands", a.dim(), b.dim()));
    }
    let (ma, ca) = mean_and_covariance(a)?;
    let (mb, cb) = mean_and_covariance(b)?;
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    // Tr((Σ_A Σ_B)^{1/2}) = Tr((√Σ_A Σ_B √Σ_A)^{1/2}); the inner product is symmetric.
    let sa = psd_sqrt(ca.clone(), "covariance A")?;
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(inner, "covariance product")?.trace();
    let fd = mean_term + ca.trace() + cb.trace() - 2.0 * cross;
    // rounding can push identical inputs a hair below zero
    Ok(fd.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLeakage {
    pub client_id: usize,
    pub index: usize,
    pub ssim: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub split_index: usize,
    pub frechet_distance: f64,
    pub max_ssim: f64,
    pub min_l2: f64,
    pub risk: bool,
    pub samples: Vec<SampleLeakage>,
}

/// Min-max scaling onto `[0, 1]` fitted on reference data; values outside are clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScale {
    min: f64,
    max: f64,
}

impl UnitScale {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((v - self.min) / span).clamp(0.0, 1.0)
    }
}

/// Attack on one client: decoder trained on a seeded split, scored on the rest.
fn attack_client(
    params: &Parameters,
    spec: &NetworkSpec,
    shard: &ClientShard,
    config: &AttackConfig,
) -> Result<(f64, Vec<SampleLeakage>)> {
    let n = shard.len();
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::Config(format!(
            "client {} has {n} samples; cannot split with fraction {}",
            shard.client_id, config.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(
        config.seed,
        stream_id(tags::ATTACK_SPLIT, shard.client_id as u64, 0, 0),
    );
    idx.shuffle(&mut rng);
    let (train_idx, test_idx) = idx.split_at(n_train);
    let train = shard.subset(train_idx);
    let held = shard.subset(test_idx);

    let decoder = train_decoder(params, spec, &train, config)?;
    let recon = decoder.decode(&embed(params, spec, config.split_index, &held.inputs)?)?;

    let scale = UnitScale::fit(shard.inputs.data());
    let mut samples = Vec::with_capacity(held.len());
    for (r, &orig) in test_idx.iter().enumerate() {
        let x: Vec<f64> = held.inputs.row(r).iter().map(|&v| scale.apply(v)).collect();
        let y: Vec<f64> = recon.row(r).iter().map(|&v| scale.apply(v)).collect();
        samples.push(SampleLeakage {
            client_id: shard.client_id,
            index: orig,
            ssim: ssim(&y, &x, 1.0)?,
            l2: l2_distance(&y, &x)?,
        });
    }

    // Fréchet over the classifier's penultimate activations of real and reconstructed inputs.
    let penultimate = spec.layers().len() - 1;
    let real = forward_layers(spec.layers(), params, 0..penultimate, &held.inputs)?.0;
    let fake = forward_layers(spec.layers(), params, 0..penultimate, &recon)?.0;
    let fd = frechet_distance(&PointCloud::new(real)?, &PointCloud::new(fake)?)?;
    Ok((fd, samples))
}

/// One report per attack configuration; scalar metrics are averaged across clients.
pub fn attack_report(
    params: &Parameters,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    configs: &[AttackConfig],
) -> Result<Vec<LeakageReport>> {
    if shards.is_empty() {
        return Err(Error::Empty("attack needs at least one client".into()));
    }
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        let mut fd = 0.0;
        let mut max_ssim = 0.0;
        let mut min_l2 = 0.0;
        let mut samples = Vec::new();
        for shard in shards {
            let (f, s) = attack_client(params, spec, shard, config)?;
            fd += f;
            max_ssim += s.iter().map(|v| v.ssim).fold(f64::NEG_INFINITY, f64::max);
            min_l2 += s.iter().map(|v| v.l2).fold(f64::INFINITY, f64::min);
            samples.extend(s);
        }
        let k = shards.len() as f64;
        let min_l2 = min_l2 / k;
        reports.push(LeakageReport {
            split_index: config.split_index,
            frechet_distance: fd / k,
            max_ssim: max_ssim / k,
            min_l2,
            risk: is_risk(min_l2),
            samples,
        });
    }
    Ok(reports)
}

/// Writes `layer,fd_proxy,max_ssim,min_l2,risk` rows.
pub fn write_leakage_csv(reports: &[LeakageReport], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "layer,fd_proxy,max_ssim,min_l2,risk")?;
    for r in reports {
        writeln!(
            w,
            "{},{:?},{:?},{:?},{}",
            r.split_index, r.frechet_distance, r.max_ssim, r.min_l2, r.risk
        )?;
    }
    w.flush()?;
    Ok(())
}
