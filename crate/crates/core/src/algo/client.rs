//! Local training on one client.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FederationConfig;
use super::losses::{combine_losses, compute_sfmc_loss, cpgma_from_embeddings, LossFlags};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::{
    backward_layers, forward_layers, softmax_cross_entropy, NetworkSpec, Optimizer, Parameters,
};
use crate::protocol::FeatureRecord;
use crate::seeding::{stream_id, stream_rng, tags};

/// A participant's private data, model copy, and optimiser state.
///
/// The optimiser moments and the batch-order generator persist across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    pub params: Parameters,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(shard: ClientShard, init: &Parameters, config: &FederationConfig) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::Empty(format!(
                "client {} has no samples",
                shard.client_id
            )));
        }
        let client_id = shard.client_id;
        Ok(Self {
            client_id,
            optimizer: Optimizer::new(config.optimizer, init, config.adam()),
            rng: stream_rng(
                config.seed,
                stream_id(tags::CLIENT_BATCHES, client_id as u64, 0, 0),
            ),
            params: init.clone(),
            shard,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.shard.len()
    }
}

/// What the server hands a client before local training.
#[derive(Debug, Clone, Copy)]
pub struct LocalContext<'a> {
    pub round: u32,
    pub epochs: usize,
    pub flags: LossFlags,
    pub foreign: &'a [FeatureRecord],
    pub prototypes: &'a [Vec<f64>],
}

/// Mean losses over every batch of every local epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub local: f64,
    pub sfmc: f64,
    pub cpgma: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub sample_count: usize,
    pub params: Parameters,
    /// Final-epoch embeddings, one inner list per batch.
    pub features: Vec<Vec<FeatureRecord>>,
    pub losses: LossSummary,
}

impl ClientUpdate {
    pub fn record_count(&self) -> usize {
        self.features.iter().map(Vec::len).sum()
    }

    /// Leading batches holding at most `cap` records in total; the last kept batch may be cut.
    pub fn capped_features(&self, cap: Option<usize>) -> Vec<Vec<FeatureRecord>> {
        let Some(mut left) = cap else {
            return self.features.clone();
        };
        let mut out = Vec::new();
        for batch in &self.features {
            if left == 0 {
                break;
            }
            let take = batch.len().min(left);
            out.push(batch[..take].to_vec());
            left -= take;
        }
        out
    }
}

/// Resets the client to `global`, trains for `ctx.epochs` epochs on the
/// combined objective, and returns the new weights with the final-epoch embeddings.
pub fn client_update(
    client: &mut ClientState,
    global: &Parameters,
    spec: &NetworkSpec,
    ctx: &LocalContext<'_>,
    config: &FederationConfig,
) -> Result<ClientUpdate> {
    global.check_against(spec.layers())?;
    if ctx.epochs == 0 {
        return Err(Error::Config(
            "local training needs at least one epoch".into(),
        ));
    }
    client.params = global.clone();
    let layers = spec.layers();
    let n = client.shard.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut features = Vec::new();
    let mut sums = LossSummary::default();
    let mut steps = 0usize;

    for epoch in 0..ctx.epochs {
        let last = epoch + 1 == ctx.epochs;
        order.shuffle(&mut client.rng);
        for chunk in order.chunks(config.batch_size) {
            let x = client.shard.inputs.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| client.shard.labels[i]).collect();
            let params = &client.params;

            let (u, cache_f) = forward_layers(layers, params, spec.extractor_range(), &x)?;
            let (logits, cache_c) = forward_layers(layers, params, spec.classifier_range(), &u)?;
            let (local, g_logits) = softmax_cross_entropy(&logits, &labels)?;
            let (grads_c, mut g_u) = backward_layers(layers, params, &cache_c, &g_logits)?;

            let (cpgma, g_align) = if ctx.flags.cpgma {
                let (l, g) = cpgma_from_embeddings(&u, &labels, ctx.prototypes, config.eps_guard)?;
                (l, Some(g))
            } else {
                (0.0, None)
            };
            let (sfmc, grads_s) = if ctx.flags.sfmc {
                let (l, g) = compute_sfmc_loss(params, spec, ctx.foreign)?;
                (l, Some(g))
            } else {
                (0.0, None)
            };
            let breakdown = combine_losses(local, sfmc, cpgma, ctx.flags, config.eps_guard)?;

            if let Some(g) = g_align {
                for (a, b) in g_u.data_mut().iter_mut().zip(g.data()) {
                    *a += breakdown.cpgma_weight * b;
                }
            }
            let (mut grads, _) = backward_layers(layers, params, &cache_f, &g_u)?;
            grads.copy_range_from(&grads_c, spec.classifier_range());
            if let Some(g) = grads_s {
                grads.add_scaled(breakdown.sfmc_weight, &g);
            }

            if last {
                features.push(
                    labels
                        .iter()
                        .enumerate()
                        .map(|(r, &label)| FeatureRecord {
                            embedding: u.row(r).to_vec(),
                            label,
                            client_id: client.client_id,
                            round: ctx.round,
                        })
                        .collect(),
                );
            }
            client.optimizer.step(&mut client.params, &grads)?;
            sums.local += breakdown.local;
            sums.sfmc += breakdown.sfmc;
            sums.cpgma += breakdown.cpgma;
            sums.total += breakdown.total;
            steps += 1;
        }
    }
    let k = steps as f64;
    Ok(ClientUpdate {
        client_id: client.client_id,
        sample_count: n,
        params: client.params.clone(),
        features,
        losses: LossSummary {
            local: sums.local / k,
            sfmc: sums.sfmc / k,
            cpgma: sums.cpgma / k,
            total: sums.total / k,
        },
    })
}
