//! Helpers shared by the integration suites: the synthetic benchmark, an
//! independently written FedAvg loop, and closed-form ledger totals.

#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use fedmp_core::algo::FederationConfig;
use fedmp_core::data::{generate_federation, ClientShard, DatasetSpec, Federation};
use fedmp_core::nn::{
    accuracy, adam_step, backward_layers, forward_layers, softmax_cross_entropy, AdamState, Layer,
    NetworkSpec, Parameters,
};
use fedmp_core::protocol::{Direction, TransferKind};
use fedmp_core::seeding::{stream_id, stream_rng, tags};
use rand::seq::SliceRandom;

pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
pub const BENCH_ROUNDS: usize = 30;

/// N=3 clients, K=3 classes, D0=16, skew strength 2.
pub fn bench_dataset(seed: u64) -> DatasetSpec {
    DatasetSpec {
        input_dim: 16,
        num_classes: 3,
        samples_per_client: 100,
        num_clients: 3,
        skew_strength: 2.0,
        noise_std: 0.5,
        seed,
        test_samples_per_client: 200,
        class_separation: 1.0,
    }
}

pub fn bench_federation(seed: u64) -> Federation {
    generate_federation(&bench_dataset(seed)).expect("benchmark generation")
}

pub fn bench_spec() -> NetworkSpec {
    NetworkSpec::default_mlp(16, 3).unwrap()
}

pub fn bench_config(seed: u64) -> FederationConfig {
    FederationConfig {
        rounds: BENCH_ROUNDS,
        num_clients: 3,
        local_epochs: 5,
        num_classes: 3,
        seed,
        ..FederationConfig::default()
    }
}

pub fn with_modules(config: &FederationConfig, sfmc: bool, cpgma: bool) -> FederationConfig {
    FederationConfig {
        enable_sfmc: sfmc,
        enable_cpgma: cpgma,
        ..config.clone()
    }
}

/// Plain FedAvg written against the network primitives only. Returns the
/// global model and its test accuracy after every round.
pub fn reference_fedavg(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
) -> Vec<(Parameters, f64)> {
    let layers = spec.layers();
    let mut init_rng = stream_rng(config.seed, stream_id(tags::MODEL_INIT, 0, 0, 0));
    let mut global = Parameters::init(layers, &mut init_rng);
    let mut states: Vec<AdamState> = shards
        .iter()
        .map(|_| AdamState::new(&global, config.adam()))
        .collect();
    let mut rngs: Vec<_> = shards
        .iter()
        .map(|s| {
            stream_rng(
                config.seed,
                stream_id(tags::CLIENT_BATCHES, s.client_id as u64, 0, 0),
            )
        })
        .collect();
    let total: usize = shards.iter().map(ClientShard::len).sum();
    let mut out = Vec::new();
    for _ in 0..config.rounds {
        let mut locals = Vec::new();
        for (i, shard) in shards.iter().enumerate() {
            let mut theta = global.clone();
            let mut order: Vec<usize> = (0..shard.len()).collect();
            for _ in 0..config.local_epochs {
                order.shuffle(&mut rngs[i]);
                for chunk in order.chunks(config.batch_size) {
                    let x = shard.inputs.select_rows(chunk);
                    let y: Vec<usize> = chunk.iter().map(|&r| shard.labels[r]).collect();
                    let (logits, cache) =
                        forward_layers(layers, &theta, 0..layers.len(), &x).unwrap();
                    let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
                    let (grads, _) = backward_layers(layers, &theta, &cache, &g).unwrap();
                    adam_step(&mut theta, &grads, &mut states[i]).unwrap();
                }
            }
            locals.push(theta);
        }
        let w = |i: usize| shards[i].len() as f64 / total as f64;
        let mut next = locals[0].clone();
        for v in next.values_mut() {
            *v *= w(0);
        }
        for (i, local) in locals.iter().enumerate().skip(1) {
            for (a, b) in next.values_mut().zip(local.values()) {
                *a += w(i) * b;
            }
        }
        global = next;
        let acc = accuracy(&global, spec, &test.inputs, &test.labels).unwrap();
        out.push((global.clone(), acc));
    }
    out
}

/// Bytes of a serialised model, counted from the layer list.
pub fn model_bytes(layers: &[Layer]) -> usize {
    8 + layers
        .iter()
        .filter_map(|l| match l {
            Layer::Affine { input, output } => Some(8 + 4 * (input * output + output)),
            _ => None,
        })
        .sum::<usize>()
}

pub fn feature_bytes(batches: usize, records: usize, width: usize) -> usize {
    8 + 4 * batches + records * (8 + 4 * width)
}

pub fn prototype_bytes(classes: usize, width: usize) -> usize {
    8 + 4 * classes * width
}

pub type LedgerKey = (usize, Direction, TransferKind, usize);

/// Records uploaded per communication by one client, per class, given the
/// labels of the records that survive the upload cap.
struct UploadShape {
    records: usize,
    batches: usize,
    per_class: Vec<usize>,
}

fn upload_shape(shard: &ClientShard, config: &FederationConfig) -> UploadShape {
    let m = shard.len();
    let records = config.upload_cap.map_or(m, |c| c.min(m));
    let per_class = if records == m {
        shard.class_counts(config.num_classes)
    } else {
        // the kept records depend on the batch order, so capped runs only
        // use the class-free total below
        Vec::new()
    };
    UploadShape {
        records,
        batches: records.div_ceil(config.batch_size),
        per_class,
    }
}

/// Records of `shard` held by a bank after `uploads` uploads.
fn banked(shape: &UploadShape, uploads: usize, capacity: usize) -> usize {
    if shape.per_class.is_empty() {
        assert!(
            capacity >= uploads * shape.records,
            "capped closed form needs a bank that never evicts"
        );
        return uploads * shape.records;
    }
    shape
        .per_class
        .iter()
        .map(|&c| capacity.min(uploads * c))
        .sum()
}

/// Expected multi-round ledger, keyed by (round, direction, kind, client).
pub fn expected_multi_round(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
) -> BTreeMap<LedgerKey, usize> {
    let d = spec.embedding_width();
    let k = config.num_classes;
    let shapes: Vec<UploadShape> = shards.iter().map(|s| upload_shape(s, config)).collect();
    let modules = config.enable_sfmc || config.enable_cpgma;
    let mut out = BTreeMap::new();
    for t in 1..=config.rounds {
        for i in 0..shards.len() {
            out.insert(
                (t, Direction::Down, TransferKind::Model, i),
                model_bytes(spec.layers()),
            );
            if config.enable_sfmc {
                let n: usize = (0..shards.len())
                    .filter(|&j| j != i)
                    .map(|j| {
                        config.sample_per_client.min(banked(
                            &shapes[j],
                            t - 1,
                            config.bank_capacity,
                        ))
                    })
                    .sum();
                out.insert(
                    (t, Direction::Down, TransferKind::Features, i),
                    feature_bytes(1, n, d),
                );
            }
            if config.enable_cpgma {
                out.insert(
                    (t, Direction::Down, TransferKind::Prototypes, i),
                    prototype_bytes(k, d),
                );
            }
            out.insert(
                (t, Direction::Up, TransferKind::Model, i),
                model_bytes(spec.layers()),
            );
            if modules {
                let s = &shapes[i];
                out.insert(
                    (t, Direction::Up, TransferKind::Features, i),
                    feature_bytes(s.batches, s.records, d),
                );
            }
        }
    }
    out
}

/// Expected few-shot ledger for `stages` communications.
pub fn expected_few_shot(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    stages: usize,
) -> BTreeMap<LedgerKey, usize> {
    let d = spec.embedding_width();
    let shapes: Vec<UploadShape> = shards.iter().map(|s| upload_shape(s, config)).collect();
    let modules = config.enable_sfmc || config.enable_cpgma;
    let mut out = BTreeMap::new();
    for c in 1..=stages {
        let last = c == stages;
        for i in 0..shards.len() {
            out.insert(
                (c, Direction::Up, TransferKind::Model, i),
                model_bytes(spec.layers()),
            );
            if last {
                continue;
            }
            if modules {
                let s = &shapes[i];
                out.insert(
                    (c, Direction::Up, TransferKind::Features, i),
                    feature_bytes(s.batches, s.records, d),
                );
            }
            out.insert(
                (c, Direction::Down, TransferKind::Model, i),
                model_bytes(spec.layers()),
            );
            if config.enable_sfmc {
                let n: usize = (0..shards.len())
                    .filter(|&j| j != i)
                    .map(|j| {
                        let held = if modules {
                            banked(&shapes[j], c, config.bank_capacity)
                        } else {
                            0
                        };
                        config.sample_per_client.min(held)
                    })
                    .sum();
                out.insert(
                    (c, Direction::Down, TransferKind::Features, i),
                    feature_bytes(1, n, d),
                );
            }
            if config.enable_cpgma {
                out.insert(
                    (c, Direction::Down, TransferKind::Prototypes, i),
                    prototype_bytes(config.num_classes, d),
                );
            }
        }
    }
    out
}

pub fn observed(ledger: &fedmp_core::protocol::CommLedger) -> BTreeMap<LedgerKey, usize> {
    let mut out = BTreeMap::new();
    for e in ledger.entries() {
        *out.entry((e.round, e.direction, e.kind, e.client_id))
            .or_insert(0) += e.bytes;
    }
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
