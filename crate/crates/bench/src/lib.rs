//! Fixtures shared by the benchmarks: the synthetic benchmark federation and
//! embeddings drawn from a trained-looking network.

use fedmp_core::algo::FederationConfig;
use fedmp_core::data::{generate_federation, DatasetSpec, Federation};
use fedmp_core::geometry::PointCloud;
use fedmp_core::nn::forward_extractor;
use fedmp_core::protocol::FeatureRecord;
use fedmp_core::{NetworkSpec, Parameters};

/// 3 clients, 3 classes, 16 features, 100 samples each.
pub fn federation() -> Federation {
    generate_federation(&DatasetSpec {
        input_dim: 16,
        num_classes: 3,
        samples_per_client: 100,
        num_clients: 3,
        skew_strength: 2.0,
        noise_std: 0.5,
        seed: 0,
        test_samples_per_client: 200,
        class_separation: 1.0,
    })
    .expect("benchmark dataset")
}

pub fn spec() -> NetworkSpec {
    NetworkSpec::default_mlp(16, 3).expect("benchmark network")
}

pub fn config() -> FederationConfig {
    FederationConfig {
        num_clients: 3,
        num_classes: 3,
        local_epochs: 1,
        ..FederationConfig::default()
    }
}

/// Embedding cloud of one client's samples.
pub fn embedding_cloud(params: &Parameters, fed: &Federation, client: usize) -> PointCloud {
    let spec = spec();
    let u =
        forward_extractor(params, &spec, &fed.shards[client].inputs).expect("extractor forward");
    PointCloud::new(u).expect("finite embeddings")
}

/// Foreign records as a client would receive them from the bank.
pub fn foreign_records(params: &Parameters, fed: &Federation, client: usize) -> Vec<FeatureRecord> {
    let spec = spec();
    let shard = &fed.shards[client];
    let u = forward_extractor(params, &spec, &shard.inputs).expect("extractor forward");
    (0..u.rows())
        .map(|r| FeatureRecord {
            embedding: u.row(r).to_vec(),
            label: shard.labels[r],
            client_id: client,
            round: 1,
        })
        .collect()
}
