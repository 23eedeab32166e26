//! Few-communication schedule: long local stages separated by single
//! exchanges, finished by a model ensemble.

use serde::{Deserialize, Serialize};

use super::client::{ClientState, LocalContext};
use super::config::FederationConfig;
use super::federation::{aggregate_models, check_shards, initial_parameters, run_clients};
use super::losses::LossFlags;
use super::prototypes::PrototypeState;
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{accuracy, argmax, forward_full, softmax, NetworkSpec, Parameters, Tensor};
use crate::protocol::{
    encode_features, encode_prototypes, serialize_model, CommLedger, Direction, FeatureBank,
    FeatureRecord, LedgerFilter, TransferKind,
};

pub const DEFAULT_STAGE_EPOCHS: [usize; 3] = [30, 60, 60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    /// Communication index closing this stage, starting at 1.
    pub communication: usize,
    pub epochs: usize,
    pub mean_local_loss: f64,
    pub mean_sfmc_loss: f64,
    pub mean_cpgma_loss: f64,
    /// Accuracy of the averaged model formed at this communication.
    pub averaged_accuracy: f64,
    pub up_bytes: usize,
    pub down_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct FewShotOutcome {
    pub client_models: Vec<Parameters>,
    pub averaged: Parameters,
    pub ensemble_accuracy: f64,
    pub averaged_accuracy: f64,
    pub stages: Vec<StageMetrics>,
    pub ledger: CommLedger,
}

/// Argmax of the mean softmax over `models`; ties go to the smallest class.
pub fn ensemble_predict(
    models: &[Parameters],
    spec: &NetworkSpec,
    x: &Tensor,
) -> Result<Vec<usize>> {
    if models.is_empty() {
        return Err(Error::Empty("ensemble of zero models".into()));
    }
    let mut mean = Tensor::zeros(vec![x.rows(), spec.num_classes()]);
    for m in models {
        let probs = softmax(&forward_full(m, spec, x)?);
        for (a, b) in mean.data_mut().iter_mut().zip(probs.data()) {
            *a += b;
        }
    }
    let n = models.len() as f64;
    for v in mean.data_mut() {
        *v /= n;
    }
    Ok((0..x.rows()).map(|r| argmax(mean.row(r))).collect())
}

pub fn ensemble_accuracy(
    models: &[Parameters],
    spec: &NetworkSpec,
    test: &ClientShard,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("ensemble accuracy over zero samples".into()));
    }
    let preds = ensemble_predict(models, spec, &test.inputs)?;
    let hits = preds
        .iter()
        .zip(&test.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len().max(1) as f64;
    values.sum::<f64>() / n
}

/// Trains `stage_epochs[k]` local epochs per stage with one communication after
/// each stage. The first stage is purely local; intermediate communications
/// exchange models, features, and prototypes computed at once; the final one
/// uploads models only. The ledger round of each transfer is its communication index.
pub fn run_few_shot(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
    stage_epochs: &[usize],
) -> Result<FewShotOutcome> {
    config.validate()?;
    check_shards(shards, spec, config)?;
    if stage_epochs.is_empty() || stage_epochs.contains(&0) {
        return Err(Error::Config(format!(
            "invalid stage schedule {stage_epochs:?}"
        )));
    }
    let width = spec.embedding_width();
    let mut global = initial_parameters(spec, config.seed);
    let mut clients = shards
        .iter()
        .map(|s| ClientState::new(s.clone(), &global, config))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = shards.iter().map(ClientShard::len).collect();
    let mut bank = FeatureBank::new(config.bank_capacity);
    let mut protos = PrototypeState::new(config.num_clients, config.num_classes, width);
    let mut ledger = CommLedger::new();
    let mut foreign: Vec<Vec<FeatureRecord>> = vec![Vec::new(); config.num_clients];
    let mut stages = Vec::new();
    let mut client_models = Vec::new();

    for (k, &epochs) in stage_epochs.iter().enumerate() {
        let comm = k + 1;
        let is_final = comm == stage_epochs.len();
        let in_comm = |e: Error| Error::Round {
            round: comm,
            source: Box::new(e),
        };
        let flags = if k == 0 {
            LossFlags::default()
        } else {
            LossFlags {
                sfmc: config.enable_sfmc,
                cpgma: config.enable_cpgma,
            }
        };
        let contexts: Vec<LocalContext<'_>> = foreign
            .iter()
            .map(|f| LocalContext {
                round: comm as u32,
                epochs,
                flags,
                foreign: f,
                prototypes: protos.prototypes(),
            })
            .collect();
        let updates =
            run_clients(&mut clients, &global, spec, &contexts, config).map_err(in_comm)?;

        let mut exchange = || -> Result<Vec<Vec<FeatureRecord>>> {
            for up in &updates {
                ledger.record_bytes(
                    comm,
                    Direction::Up,
                    TransferKind::Model,
                    up.client_id,
                    serialize_model(&up.params)?.len(),
                );
                if !is_final && config.modules_enabled() {
                    let batches = up.capped_features(config.upload_cap);
                    ledger.record_bytes(
                        comm,
                        Direction::Up,
                        TransferKind::Features,
                        up.client_id,
                        encode_features(&batches, width)?.len(),
                    );
                    protos.absorb_at_once(up.client_id, &batches)?;
                    bank.insert(batches.into_iter().flatten());
                }
            }
            let models: Vec<Parameters> = updates.iter().map(|u| u.params.clone()).collect();
            global = aggregate_models(&models, &sizes)?;
            if !global.is_finite() {
                return Err(Error::NonFinite("aggregated model".into()));
            }
            client_models = models;
            if is_final {
                return Ok(vec![Vec::new(); config.num_clients]);
            }
            if config.enable_cpgma {
                protos.refresh_prototypes(&sizes, 1.0)?;
            }
            let model_blob = serialize_model(&global)?;
            let proto_blob = encode_prototypes(protos.prototypes())?;
            let seed = config.seed ^ ((comm as u64) << 32);
            let mut next = Vec::with_capacity(config.num_clients);
            for i in 0..config.num_clients {
                ledger.record_bytes(
                    comm,
                    Direction::Down,
                    TransferKind::Model,
                    i,
                    model_blob.len(),
                );
                let sample = if config.enable_sfmc {
                    let s = bank.sample(i, config.sample_per_client, seed);
                    let len = encode_features(std::slice::from_ref(&s), width)?.len();
                    ledger.record_bytes(comm, Direction::Down, TransferKind::Features, i, len);
                    s
                } else {
                    Vec::new()
                };
                if config.enable_cpgma {
                    ledger.record_bytes(
                        comm,
                        Direction::Down,
                        TransferKind::Prototypes,
                        i,
                        proto_blob.len(),
                    );
                }
                next.push(sample);
            }
            Ok(next)
        };
        foreign = exchange().map_err(in_comm)?;

        stages.push(StageMetrics {
            communication: comm,
            epochs,
            mean_local_loss: mean(updates.iter().map(|u| u.losses.local)),
            mean_sfmc_loss: mean(updates.iter().map(|u| u.losses.sfmc)),
            mean_cpgma_loss: mean(updates.iter().map(|u| u.losses.cpgma)),
            averaged_accuracy: accuracy(&global, spec, &test.inputs, &test.labels)
                .map_err(in_comm)?,
            up_bytes: ledger.total(LedgerFilter::all().round(comm).direction(Direction::Up)),
            down_bytes: ledger.total(LedgerFilter::all().round(comm).direction(Direction::Down)),
        });
    }

    Ok(FewShotOutcome {
        ensemble_accuracy: ensemble_accuracy(&client_models, spec, test)?,
        averaged_accuracy: stages.last().map_or(0.0, |s| s.averaged_accuracy),
        averaged: global,
        client_models,
        stages,
        ledger,
    })
}

/// Local training followed by one averaging step, with no auxiliary modules.
pub fn run_single(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
    epochs: usize,
) -> Result<FewShotOutcome> {
    run_few_shot(&config.fedavg(), spec, shards, test, &[epochs])
}
