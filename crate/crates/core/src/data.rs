//! Feature-skewed, label-balanced client datasets.
//!
//! All clients share `K` latent Gaussian class centres. Client `i` observes
//! `x = A_i z + b_i + noise`, where `(A_i, b_i)` is an invertible affine map
//! whose distance from the identity grows with `skew_strength`. Labels depend
//! only on the latent `z`, so label marginals are identical across clients
//! while feature distributions differ. `A_i` is a product of Givens rotations
//! and a positive diagonal scaling, so it is invertible by construction.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::Tensor;
use crate::seeding::{stream_id, stream_rng, tags};

/// Client id carried by pooled sets that span several clients.
pub const POOLED_CLIENT: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    pub samples_per_client: usize,
    pub num_clients: usize,
    pub skew_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default = "default_test_samples")]
    pub test_samples_per_client: usize,
    /// Standard deviation of the latent class centres (within-class spread is 1).
    #[serde(default = "default_separation")]
    pub class_separation: f64,
}

fn default_test_samples() -> usize {
    200
}

fn default_separation() -> f64 {
    1.0
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.num_clients < 1 {
            return bad("num_clients must be at least 1");
        }
        if self.input_dim < 1 {
            return bad("input_dim must be positive");
        }
        if self.samples_per_client < self.num_classes {
            return bad("samples_per_client must be at least num_classes");
        }
        if self.test_samples_per_client < self.num_classes {
            return bad("test_samples_per_client must be at least num_classes");
        }
        if !(self.skew_strength >= 0.0 && self.noise_std >= 0.0 && self.class_separation >= 0.0) {
            return bad("skew_strength, noise_std and class_separation must be non-negative");
        }
        Ok(())
    }
}

/// The affine map applied to a client's latent samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewDescriptor {
    pub matrix: Tensor,
    pub offset: Vec<f64>,
}

impl SkewDescriptor {
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        let a = self.matrix.data();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &a[r * d..(r + 1) * d];
            *o = row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + self.offset[r];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub skew: Option<SkewDescriptor>,
}

impl ClientShard {
    pub fn new(client_id: usize, inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(shape_err(
                "shard",
                format!("{} rows", labels.len()),
                format!("{:?}", inputs.shape()),
            ));
        }
        Ok(Self {
            client_id,
            inputs,
            labels,
            skew: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Per-class sample counts for classes `0..num_classes`.
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &y in &self.labels {
            if y < num_classes {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> ClientShard {
        ClientShard {
            client_id: self.client_id,
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            skew: self.skew.clone(),
        }
    }

    /// Writes `features..., label` rows.
    pub fn write_csv(&self, path: &Path, header: bool) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        if header {
            let cols: Vec<String> = (0..self.input_dim())
                .map(|i| format!("x{i}"))
                .chain(std::iter::once("label".to_string()))
                .collect();
            writeln!(w, "{}", cols.join(","))?;
        }
        for (r, y) in self.labels.iter().enumerate() {
            let mut line = String::new();
            for v in self.inputs.row(r) {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&y.to_string());
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Concatenates shards in the given order into one pooled shard.
pub fn merge_shards(shards: &[ClientShard]) -> Result<ClientShard> {
    let width = shards
        .first()
        .ok_or_else(|| Error::Empty("merge of zero shards".into()))?
        .input_dim();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in shards {
        if s.input_dim() != width {
            return Err(shape_err(
                format!("shard {}", s.client_id),
                width,
                s.input_dim(),
            ));
        }
        data.extend_from_slice(s.inputs.data());
        labels.extend_from_slice(&s.labels);
    }
    let inputs = Tensor::matrix(labels.len(), width, data)?;
    ClientShard::new(POOLED_CLIENT, inputs, labels)
}

#[derive(Debug, Clone)]
pub struct Federation {
    pub shards: Vec<ClientShard>,
    /// Test samples from every client's transform, equally many per client.
    pub global_test: ClientShard,
    pub per_client_test: Vec<ClientShard>,
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn client_transform<R: Rng>(dim: usize, strength: f64, rng: &mut R) -> SkewDescriptor {
    // Draws are independent of `strength` so skewed and IID runs share randomness.
    let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let rotations: Vec<(usize, usize, f64)> = (0..2 * dim)
        .map(|_| {
            let p = rng.random_range(0..dim);
            let q = rng.random_range(0..dim);
            let angle = rng.random_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
            (p, q, angle)
        })
        .collect();
    let offset_dir: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();

    let mut a = vec![0.0; dim * dim];
    for (i, s) in scales.iter().enumerate() {
        a[i * dim + i] = (strength * s).exp();
    }
    for (p, q, angle) in rotations {
        if p == q {
            continue;
        }
        let (c, s) = ((strength * angle).cos(), (strength * angle).sin());
        // left-multiply by the Givens rotation in the (p, q) plane
        for col in 0..dim {
            let ap = a[p * dim + col];
            let aq = a[q * dim + col];
            a[p * dim + col] = c * ap - s * aq;
            a[q * dim + col] = s * ap + c * aq;
        }
    }
    let offset = offset_dir.iter().map(|v| strength * 0.5 * v).collect();
    SkewDescriptor {
        matrix: Tensor::matrix(dim, dim, a).expect("square"),
        offset,
    }
}

fn balanced_labels<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|j| j % k).collect();
    labels.shuffle(rng);
    labels
}

fn sample_client(
    spec: &DatasetSpec,
    centers: &[Vec<f64>],
    skew: &SkewDescriptor,
    client_id: usize,
    count: usize,
    tag: u8,
) -> ClientShard {
    let mut rng = stream_rng(spec.seed, stream_id(tag, client_id as u64, 0, 0));
    let d = spec.input_dim;
    let labels = balanced_labels(count, spec.num_classes, &mut rng);
    let mut data = vec![0.0; count * d];
    let mut z = vec![0.0; d];
    for (r, &y) in labels.iter().enumerate() {
        for (zj, cj) in z.iter_mut().zip(&centers[y]) {
            *zj = cj + gaussian(&mut rng);
        }
        let row = &mut data[r * d..(r + 1) * d];
        skew.apply(&z, row);
        for v in row.iter_mut() {
            *v += spec.noise_std * gaussian(&mut rng);
        }
    }
    ClientShard {
        client_id,
        inputs: Tensor::matrix(count, d, data).expect("sized"),
        labels,
        skew: Some(skew.clone()),
    }
}

/// Generates per-client training shards plus a pooled test set. Pure in `spec`.
pub fn generate_federation(spec: &DatasetSpec) -> Result<Federation> {
    spec.validate()?;
    let d = spec.input_dim;
    let mut center_rng = stream_rng(spec.seed, stream_id(tags::DATA_CENTERS, 0, 0, 0));
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..d)
                .map(|_| spec.class_separation * gaussian(&mut center_rng))
                .collect()
        })
        .collect();

    let mut shards = Vec::with_capacity(spec.num_clients);
    let mut per_client_test = Vec::with_capacity(spec.num_clients);
    for i in 0..spec.num_clients {
        let mut trng = stream_rng(spec.seed, stream_id(tags::DATA_TRANSFORM, i as u64, 0, 0));
        let skew = client_transform(d, spec.skew_strength, &mut trng);
        shards.push(sample_client(
            spec,
            &centers,
            &skew,
            i,
            spec.samples_per_client,
            tags::DATA_TRAIN,
        ));
        per_client_test.push(sample_client(
            spec,
            &centers,
            &skew,
            i,
            spec.test_samples_per_client,
            tags::DATA_TEST,
        ));
    }
    let global_test = merge_shards(&per_client_test)?;
    Ok(Federation {
        shards,
        global_test,
        per_client_test,
    })
}

/// Reads `features..., label` rows. Every row must have the same width.
pub fn load_csv(path: &Path, has_header: bool, client_id: usize) -> Result<ClientShard> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() < 2 {
            return Err(fail(
                "expected at least one feature column and a label".into(),
            ));
        }
        let features = record.len() - 1;
        match width {
            None => width = Some(features),
            Some(w) if w != features => {
                return Err(fail(format!(
                    "expected {w} feature columns, found {features}"
                )))
            }
            _ => {}
        }
        for field in record.iter().take(features) {
            let v: f64 = field
                .parse()
                .map_err(|_| fail(format!("invalid number {field:?}")))?;
            if !v.is_finite() {
                return Err(fail(format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        let label = &record[features];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| fail(format!("invalid label {label:?}")))?,
        );
    }
    let width =
        width.ok_or_else(|| Error::Empty(format!("{} has no data rows", path.display())))?;
    let inputs = Tensor::matrix(labels.len(), width, data)?;
    ClientShard::new(client_id, inputs, labels)
}

/// Splits a shard into `n` disjoint shards whose sizes, and per-class counts,
/// differ by at most one. Rows are dealt round-robin class by class after a
/// seeded shuffle.
pub fn partition_even(shard: &ClientShard, n: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if n == 0 {
        return Err(Error::Config("cannot partition into zero shards".into()));
    }
    let mut rng = stream_rng(seed, stream_id(tags::PARTITION, 0, 0, 0));
    let num_classes = shard.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in shard.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut next = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            buckets[next].push(i);
            next = (next + 1) % n;
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(id, mut idx)| {
            idx.shuffle(&mut rng);
            let mut s = shard.subset(&idx);
            s.client_id = id;
            s
        })
        .collect())
}
