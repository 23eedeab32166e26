//! Empirical check that classifiers trained on manifolds closer to the global
//! one generalise at least as well as those trained on farther manifolds.
//!
//! Three classifiers share an initialisation and a step budget and differ only
//! in their training clouds (global, near, far). The check is statistical, so
//! it passes when the near-trained classifier matches or beats the far-trained
//! one on at least two thirds of the seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hausdorff::{hausdorff_distance, PointCloud};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy_layers, adam_step, backward_layers, forward_layers, softmax_cross_entropy, AdamConfig,
    AdamState, NetworkSpec, Parameters, Tensor,
};
use crate::seeding::{stream_id, stream_rng, tags};

pub type ClassClouds = BTreeMap<usize, PointCloud>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-2,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximitySeedResult {
    pub seed: u64,
    pub global_accuracy: f64,
    pub near_accuracy: f64,
    pub far_accuracy: f64,
    pub near_param_distance: f64,
    pub far_param_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub near_distance: f64,
    pub far_distance: f64,
    pub seeds: Vec<ProximitySeedResult>,
    pub passed: bool,
}

/// Mean over classes of `d_H(a^(c), b^(c))`; both collections must share classes.
pub fn collection_distance(a: &ClassClouds, b: &ClassClouds) -> Result<f64> {
    if a.is_empty() || a.keys().ne(b.keys()) {
        return Err(Error::Config(
            "cloud collections must cover the same classes".into(),
        ));
    }
    let mut total = 0.0;
    for (class, cloud) in a {
        total += hausdorff_distance(cloud, &b[class])?;
    }
    Ok(total / a.len() as f64)
}

fn stack(clouds: &ClassClouds) -> Result<(Tensor, Vec<usize>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (&class, cloud) in clouds {
        for i in 0..cloud.len() {
            rows.push(cloud.point(i).to_vec());
            labels.push(class);
        }
    }
    Ok((Tensor::from_rows(&rows)?, labels))
}

fn train_classifier(
    spec: &NetworkSpec,
    init: &Parameters,
    data: &(Tensor, Vec<usize>),
    config: &ProximityConfig,
) -> Result<Parameters> {
    let layers = spec.layers();
    let range = spec.classifier_range();
    let mut params = init.clone();
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    for _ in 0..config.steps {
        let (logits, cache) = forward_layers(layers, &params, range.clone(), &data.0)?;
        let (_, grad) = softmax_cross_entropy(&logits, &data.1)?;
        let (grads, _) = backward_layers(layers, &params, &cache, &grad)?;
        adam_step(&mut params, &grads, &mut state)?;
    }
    Ok(params)
}

pub fn proximity_harness(
    global: &ClassClouds,
    near: &ClassClouds,
    far: &ClassClouds,
    spec: &NetworkSpec,
    config: &ProximityConfig,
) -> Result<ProximityReport> {
    let near_distance = collection_distance(near, global)?;
    let far_distance = collection_distance(far, global)?;
    if near_distance >= far_distance {
        return Err(Error::Config(format!(
            "near collection ({near_distance}) must be strictly closer to the global one than the far collection ({far_distance})"
        )));
    }
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let global_data = stack(global)?;
    let near_data = stack(near)?;
    let far_data = stack(far)?;
    let range = spec.classifier_range();

    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut rng = stream_rng(seed, stream_id(tags::PROXIMITY, 0, 0, 0));
        let init = Parameters::init(spec.layers(), &mut rng);
        let g = train_classifier(spec, &init, &global_data, config)?;
        let n = train_classifier(spec, &init, &near_data, config)?;
        let f = train_classifier(spec, &init, &far_data, config)?;
        let acc = |p: &Parameters| {
            accuracy_layers(
                spec.layers(),
                p,
                range.clone(),
                &global_data.0,
                &global_data.1,
            )
        };
        seeds.push(ProximitySeedResult {
            seed,
            global_accuracy: acc(&g)?,
            near_accuracy: acc(&n)?,
            far_accuracy: acc(&f)?,
            near_param_distance: n.distance(&g),
            far_param_distance: f.distance(&g),
        });
    }
    let wins = seeds
        .iter()
        .filter(|s| s.near_accuracy >= s.far_accuracy)
        .count();
    Ok(ProximityReport {
        near_distance,
        far_distance,
        passed: 3 * wins >= 2 * seeds.len(),
        seeds,
    })
}
