//! The multi-round server loop and weighted model averaging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{client_update, ClientState, ClientUpdate, LocalContext};
use super::config::FederationConfig;
use super::losses::LossFlags;
use super::prototypes::PrototypeState;
use crate::data::ClientShard;
use crate::error::{shape_err, Error, Result};
use crate::geometry::{class_manifolds, manifold_report, ManifoldReport};
use crate::nn::{accuracy, NetworkSpec, Parameters};
use crate::protocol::{
    encode_features, encode_prototypes, serialize_model, CommLedger, Direction, FeatureBank,
    FeatureRecord, LedgerFilter, TransferKind,
};
use crate::seeding::{stream_id, stream_rng, tags};

/// One line of the per-round metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub global_test_accuracy: f64,
    pub mean_local_loss: f64,
    pub mean_sfmc_loss: f64,
    pub mean_cpgma_loss: f64,
    pub hausdorff_mean: Option<f64>,
    pub up_bytes: usize,
    pub down_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub params: Parameters,
    pub metrics: Vec<RoundMetrics>,
    pub ledger: CommLedger,
    pub prototypes: Vec<Vec<f64>>,
}

/// State visible to a round observer after aggregation.
#[derive(Debug, Clone, Copy)]
pub struct RoundView<'a> {
    pub round: usize,
    pub global: &'a Parameters,
    pub client_models: &'a [Parameters],
    pub metrics: &'a RoundMetrics,
    pub manifolds: Option<&'a ManifoldReport>,
}

/// Seeded initial global model, shared by every algorithm variant.
pub fn initial_parameters(spec: &NetworkSpec, seed: u64) -> Parameters {
    let mut rng = stream_rng(seed, stream_id(tags::MODEL_INIT, 0, 0, 0));
    Parameters::init(spec.layers(), &mut rng)
}

fn same_shape(a: &Parameters, b: &Parameters) -> bool {
    a.len() == b.len()
        && a.layers()
            .iter()
            .zip(b.layers())
            .all(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => {
                    x.weight.shape() == y.weight.shape() && x.bias.shape() == y.bias.shape()
                }
                (None, None) => true,
                _ => false,
            })
}

/// Dataset-size-weighted average, reduced in the order given.
pub fn aggregate_models(models: &[Parameters], sizes: &[usize]) -> Result<Parameters> {
    if models.is_empty() {
        return Err(Error::Empty("aggregation over zero clients".into()));
    }
    if models.len() != sizes.len() {
        return Err(shape_err("aggregation sizes", models.len(), sizes.len()));
    }
    if let Some(i) = models.iter().position(|m| !same_shape(m, &models[0])) {
        return Err(shape_err(
            format!("aggregated model {i}"),
            "shape of model 0",
            "different shape",
        ));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("aggregation with zero total samples".into()));
    }
    let weight = |m: usize| m as f64 / total as f64;
    let mut out = models[0].clone();
    out.scale(weight(sizes[0]));
    for (m, &s) in models.iter().zip(sizes).skip(1) {
        out.add_scaled(weight(s), m);
    }
    Ok(out)
}

pub(crate) fn check_shards(
    shards: &[ClientShard],
    spec: &NetworkSpec,
    config: &FederationConfig,
) -> Result<()> {
    if shards.len() != config.num_clients {
        return Err(Error::Config(format!(
            "{} shards for {} clients",
            shards.len(),
            config.num_clients
        )));
    }
    if spec.num_classes() != config.num_classes {
        return Err(Error::Config(format!(
            "network has {} classes, configuration {}",
            spec.num_classes(),
            config.num_classes
        )));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.client_id != i {
            return Err(Error::Config(format!(
                "shard {i} carries client id {}",
                s.client_id
            )));
        }
        if s.input_dim() != spec.input_width() {
            return Err(shape_err(
                format!("client {i} inputs"),
                spec.input_width(),
                s.input_dim(),
            ));
        }
        if let Some(&y) = s.labels.iter().find(|&&y| y >= config.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: config.num_classes,
            });
        }
    }
    Ok(())
}

/// Runs local updates for every client. Results come back in client-id order
/// whatever the scheduling.
pub(crate) fn run_clients(
    clients: &mut [ClientState],
    global: &Parameters,
    spec: &NetworkSpec,
    contexts: &[LocalContext<'_>],
    config: &FederationConfig,
) -> Result<Vec<ClientUpdate>> {
    if config.parallel {
        return clients
            .par_iter_mut()
            .zip(contexts.par_iter())
            .map(|(c, ctx)| client_update(c, global, spec, ctx, config))
            .collect();
    }
    let order: Vec<usize> = config
        .client_order
        .clone()
        .unwrap_or_else(|| (0..clients.len()).collect());
    let mut slots: Vec<Option<ClientUpdate>> = vec![None; clients.len()];
    for i in order {
        slots[i] = Some(client_update(
            &mut clients[i],
            global,
            spec,
            &contexts[i],
            config,
        )?);
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every client scheduled"))
        .collect())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn run_federation(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
) -> Result<FederationOutcome> {
    run_federation_observed(config, spec, shards, test, &mut |_| Ok(()))
}

/// Multi-round training with a callback after every round.
pub fn run_federation_observed(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
    observer: &mut dyn FnMut(&RoundView<'_>) -> Result<()>,
) -> Result<FederationOutcome> {
    config.validate()?;
    check_shards(shards, spec, config)?;
    let width = spec.embedding_width();
    let flags = LossFlags {
        sfmc: config.enable_sfmc,
        cpgma: config.enable_cpgma,
    };
    let mut global = initial_parameters(spec, config.seed);
    let mut clients = shards
        .iter()
        .map(|s| ClientState::new(s.clone(), &global, config))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = shards.iter().map(ClientShard::len).collect();
    let mut bank = FeatureBank::new(config.bank_capacity);
    let mut protos = PrototypeState::new(config.num_clients, config.num_classes, width);
    let mut ledger = CommLedger::new();
    let mut metrics = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let in_round = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let mut step = || -> Result<_> {
            // downlink
            let model_blob = serialize_model(&global)?;
            let proto_blob = encode_prototypes(protos.prototypes())?;
            let sample_seed = config.seed ^ ((round as u64) << 32);
            let mut foreign: Vec<Vec<FeatureRecord>> = Vec::with_capacity(config.num_clients);
            let mut down = Vec::new();
            for i in 0..config.num_clients {
                down.push((i, TransferKind::Model, model_blob.len()));
                let sample = if flags.sfmc {
                    let s = bank.sample(i, config.sample_per_client, sample_seed);
                    down.push((
                        i,
                        TransferKind::Features,
                        encode_features(std::slice::from_ref(&s), width)?.len(),
                    ));
                    s
                } else {
                    Vec::new()
                };
                if flags.cpgma {
                    down.push((i, TransferKind::Prototypes, proto_blob.len()));
                }
                foreign.push(sample);
            }
            let contexts: Vec<LocalContext<'_>> = foreign
                .iter()
                .map(|f| LocalContext {
                    round: round as u32,
                    epochs: config.local_epochs,
                    flags,
                    foreign: f,
                    prototypes: protos.prototypes(),
                })
                .collect();
            let updates = run_clients(&mut clients, &global, spec, &contexts, config)?;
            Ok((down, updates))
        };
        let (down, updates) = step().map_err(in_round)?;
        for (client, kind, bytes) in down {
            ledger.record_bytes(round, Direction::Down, kind, client, bytes);
        }

        let mut server = || -> Result<_> {
            for up in &updates {
                ledger.record_bytes(
                    round,
                    Direction::Up,
                    TransferKind::Model,
                    up.client_id,
                    serialize_model(&up.params)?.len(),
                );
                if config.modules_enabled() {
                    let batches = up.capped_features(config.upload_cap);
                    let blob = encode_features(&batches, width)?;
                    ledger.record_bytes(
                        round,
                        Direction::Up,
                        TransferKind::Features,
                        up.client_id,
                        blob.len(),
                    );
                    if flags.cpgma {
                        protos.absorb_batches(up.client_id, &batches, config.mu_client)?;
                    }
                    bank.insert(batches.into_iter().flatten());
                }
            }
            if flags.cpgma {
                protos.refresh_prototypes(&sizes, config.mu_server)?;
            }
            let models: Vec<Parameters> = updates.iter().map(|u| u.params.clone()).collect();
            let aggregated = aggregate_models(&models, &sizes)?;
            if !aggregated.is_finite() {
                return Err(Error::NonFinite("aggregated model".into()));
            }
            let report = if config.track_geometry && config.num_clients >= 2 {
                Some(manifold_report(
                    round,
                    &class_manifolds(&aggregated, spec, shards)?,
                )?)
            } else {
                None
            };
            Ok((models, aggregated, report))
        };
        let (models, aggregated, report) = server().map_err(in_round)?;
        global = aggregated;

        let m = RoundMetrics {
            round,
            global_test_accuracy: accuracy(&global, spec, &test.inputs, &test.labels)
                .map_err(in_round)?,
            mean_local_loss: mean(updates.iter().map(|u| u.losses.local)),
            mean_sfmc_loss: mean(updates.iter().map(|u| u.losses.sfmc)),
            mean_cpgma_loss: mean(updates.iter().map(|u| u.losses.cpgma)),
            hausdorff_mean: report.as_ref().map(ManifoldReport::hausdorff_mean),
            up_bytes: ledger.total(LedgerFilter::all().round(round).direction(Direction::Up)),
            down_bytes: ledger.total(LedgerFilter::all().round(round).direction(Direction::Down)),
        };
        observer(&RoundView {
            round,
            global: &global,
            client_models: &models,
            metrics: &m,
            manifolds: report.as_ref(),
        })
        .map_err(in_round)?;
        metrics.push(m);
    }
    Ok(FederationOutcome {
        params: global,
        metrics,
        ledger,
        prototypes: protos.prototypes().to_vec(),
    })
}
