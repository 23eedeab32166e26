//! Catalogue of worked examples, each checked against an independent
//! closed form, brute force, or reference loop. Scalars use a 1e-9 tolerance.

use std::collections::BTreeMap;

use fedmp_core::algo::{
    aggregate_models, client_update, combine_losses, compute_sfmc_loss, cpgma_from_embeddings,
    ensemble_predict, run_federation, run_few_shot, run_single, update_client_center,
    update_global_prototype, ClientState, FederationConfig, LocalContext, LossFlags,
};
use fedmp_core::data::{
    generate_federation, merge_shards, partition_even, ClientShard, DatasetSpec,
};
use fedmp_core::geometry::{
    class_manifolds, hausdorff_distance, manifold_report, pca_project_2d, proximity_harness,
    ClassManifolds, PointCloud, ProximityConfig,
};
use fedmp_core::nn::{
    adam_step, argmax, backward, forward_classifier, forward_extractor, forward_full,
    forward_layers, softmax_cross_entropy, AdamConfig, AdamState, Affine, Layer, NetworkSpec,
    Parameters, Tensor,
};
use fedmp_core::privacy::{frechet_distance, is_risk, l2_distance, ssim};
use fedmp_core::protocol::{
    deserialize_model_for, serialize_model, CommLedger, Direction, FeatureBank, FeatureRecord,
    LedgerFilter, TransferKind,
};
use fedmp_core::seeding::{stream_id, stream_rng, tags};
use rand::seq::SliceRandom;

use super::{bench_federation, bench_spec, expected_multi_round, observed, reference_fedavg};

const TOL: f64 = 1e-9;

pub type Check = (&'static str, fn() -> bool);

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn all_close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y))
}

fn affine(rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Affine {
    Affine::new(
        Tensor::matrix(rows, cols, w.to_vec()).unwrap(),
        Tensor::new(vec![rows], b.to_vec()).unwrap(),
    )
    .unwrap()
}

fn row(v: &[f64]) -> Tensor {
    Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
}

const ID2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

/// `affine | affine` on two dimensions, split after the first layer.
fn two_affine(first: Affine, second: Affine) -> (NetworkSpec, Parameters) {
    let spec = NetworkSpec::new(
        vec![
            Layer::Affine {
                input: 2,
                output: 2,
            },
            Layer::Affine {
                input: 2,
                output: 2,
            },
        ],
        1,
        2,
    )
    .unwrap();
    (
        spec,
        Parameters::from_layers(vec![Some(first), Some(second)]),
    )
}

/// `affine relu | affine` on two dimensions.
fn affine_relu(first: Affine) -> (NetworkSpec, Parameters) {
    let spec = NetworkSpec::new(
        vec![
            Layer::Affine {
                input: 2,
                output: 2,
            },
            Layer::Relu,
            Layer::Affine {
                input: 2,
                output: 2,
            },
        ],
        2,
        2,
    )
    .unwrap();
    (
        spec,
        Parameters::from_layers(vec![
            Some(first),
            None,
            Some(affine(2, 2, &ID2, &[0.0, 0.0])),
        ]),
    )
}

fn record(embedding: &[f64], label: usize, client_id: usize) -> FeatureRecord {
    FeatureRecord {
        embedding: embedding.to_vec(),
        label,
        client_id,
        round: 1,
    }
}

fn cloud(points: &[&[f64]]) -> PointCloud {
    PointCloud::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
}

// nn-core

fn extractor_identity() -> bool {
    let (spec, p) = two_affine(
        affine(2, 2, &ID2, &[0.0, 0.0]),
        affine(2, 2, &ID2, &[0.0, 0.0]),
    );
    forward_extractor(&p, &spec, &row(&[1.0, 2.0]))
        .unwrap()
        .data()
        == [1.0, 2.0]
}

fn extractor_zero_weights() -> bool {
    let (spec, p) = affine_relu(affine(2, 2, &[0.0; 4], &[0.0, 0.0]));
    forward_extractor(&p, &spec, &row(&[3.0, -7.0]))
        .unwrap()
        .data()
        == [0.0, 0.0]
}

fn extractor_hand_relu() -> bool {
    let (spec, p) = affine_relu(affine(2, 2, &[1.0, 0.0, 1.0, 1.0], &[0.5, -3.0]));
    forward_extractor(&p, &spec, &row(&[1.0, 1.0]))
        .unwrap()
        .data()
        == [1.5, 0.0]
}

fn classifier_identity() -> bool {
    let (spec, p) = two_affine(
        affine(2, 2, &ID2, &[0.0, 0.0]),
        affine(2, 2, &ID2, &[0.0, 0.0]),
    );
    forward_classifier(&p, &spec, &row(&[3.0, -1.0]))
        .unwrap()
        .data()
        == [3.0, -1.0]
}

fn classifier_composition() -> bool {
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(5, 0));
    let x = bench_federation(0).shards[0].inputs.clone();
    let u = forward_extractor(&p, &spec, &x).unwrap();
    forward_classifier(&p, &spec, &u).unwrap() == forward_full(&p, &spec, &x).unwrap()
}

fn classifier_hand() -> bool {
    let (spec, p) = two_affine(
        affine(2, 2, &ID2, &[0.0, 0.0]),
        affine(2, 2, &[2.0, 0.0, 0.0, 2.0], &[1.0, 1.0]),
    );
    forward_classifier(&p, &spec, &row(&[1.0, 2.0]))
        .unwrap()
        .data()
        == [3.0, 5.0]
}

fn ce_uniform() -> bool {
    close(
        softmax_cross_entropy(&row(&[0.0, 0.0]), &[0]).unwrap().0,
        2f64.ln(),
    )
}

fn ce_closed_form() -> bool {
    close(
        softmax_cross_entropy(&row(&[1.0, 0.0]), &[0]).unwrap().0,
        (1.0 + (-1f64).exp()).ln(),
    )
}

fn ce_gradient() -> bool {
    all_close(
        softmax_cross_entropy(&row(&[0.0, 0.0]), &[0])
            .unwrap()
            .1
            .data(),
        &[-0.5, 0.5],
    )
}

fn backward_zero_upstream() -> bool {
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(1, 0));
    let x = bench_federation(0).shards[0].inputs.clone();
    let (out, cache) = forward_layers(spec.layers(), &p, spec.full_range(), &x).unwrap();
    let (g, _) = backward(&p, &spec, &cache, &Tensor::zeros(out.shape().to_vec())).unwrap();
    let zero = g.values().all(|v| v == 0.0);
    zero
}

fn backward_scalar() -> bool {
    // y = w x + b as the first layer of a 1 -> 1 -> 2 network
    let spec = NetworkSpec::new(
        vec![
            Layer::Affine {
                input: 1,
                output: 1,
            },
            Layer::Affine {
                input: 1,
                output: 2,
            },
        ],
        1,
        2,
    )
    .unwrap();
    let p = Parameters::from_layers(vec![
        Some(affine(1, 1, &[0.7], &[0.1])),
        Some(affine(2, 1, &[1.0, 1.0], &[0.0, 0.0])),
    ]);
    let (_, cache) = forward_layers(spec.layers(), &p, 0..1, &row(&[2.0])).unwrap();
    let (g, _) = backward(&p, &spec, &cache, &row(&[1.0])).unwrap();
    let a = g.affine(0).unwrap();
    a.weight.data() == [2.0] && a.bias.data() == [1.0]
}

fn adam_zero_gradient() -> bool {
    let p0 = Parameters::from_layers(vec![Some(affine(1, 1, &[1.0], &[0.5]))]);
    let mut p = p0.clone();
    let mut s = AdamState::new(
        &p,
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    adam_step(&mut p, &p0.zeros_like(), &mut s).unwrap();
    p == p0
        && s.step_count() == 1
        && s.first_moment().values().all(|v| v == 0.0)
        && s.second_moment().values().all(|v| v == 0.0)
}

fn adam_zero_lr() -> bool {
    let p0 = Parameters::from_layers(vec![Some(affine(1, 1, &[1.0], &[0.5]))]);
    let mut p = p0.clone();
    let mut s = AdamState::new(
        &p,
        AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        },
    );
    let g = Parameters::from_layers(vec![Some(affine(1, 1, &[3.0], &[-2.0]))]);
    adam_step(&mut p, &g, &mut s).unwrap();
    p == p0
}

fn adam_hand_step() -> bool {
    let mut p = Parameters::from_layers(vec![Some(affine(1, 1, &[1.0], &[0.0]))]);
    let cfg = AdamConfig {
        learning_rate: 0.1,
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut s = AdamState::new(&p, cfg);
    let g = Parameters::from_layers(vec![Some(affine(1, 1, &[1.0], &[0.0]))]);
    adam_step(&mut p, &g, &mut s).unwrap();
    close(
        p.affine(0).unwrap().weight.data()[0],
        1.0 - 0.1 / (1.0 + cfg.epsilon),
    )
}

// data-synth

fn class_means(shard: &ClientShard, k: usize) -> Vec<Vec<f64>> {
    let d = shard.input_dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (r, &y) in shard.labels.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(shard.inputs.row(r)) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect()
}

fn cross_client_gap(spec: &DatasetSpec) -> f64 {
    let f = generate_federation(spec).unwrap();
    let means: Vec<_> = f
        .shards
        .iter()
        .map(|s| class_means(s, spec.num_classes))
        .collect();
    let mut total = 0.0;
    let mut n = 0.0;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            for (mi, mj) in means[i].iter().zip(&means[j]).take(spec.num_classes) {
                total += mi
                    .iter()
                    .zip(mj)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                n += 1.0;
            }
        }
    }
    total / n
}

fn synth(skew: f64, clients: usize, dim: usize, samples: usize, seed: u64) -> DatasetSpec {
    DatasetSpec {
        input_dim: dim,
        num_classes: 3,
        samples_per_client: samples,
        num_clients: clients,
        skew_strength: skew,
        noise_std: 0.5,
        seed,
        test_samples_per_client: 30,
        class_separation: 1.0,
    }
}

fn synth_iid_control() -> bool {
    // sampling error of a class mean over ~330 points in 8 dims is about
    // sqrt(8 * 1.6 / 330) per client, so pairwise gaps stay well under 0.5
    let spec = synth(0.0, 3, 8, 1000, 3);
    let f = generate_federation(&spec).unwrap();
    let balanced = f.shards.iter().all(|s| {
        s.class_counts(3)
            .iter()
            .all(|&c| (c as f64 - 1000.0 / 3.0).abs() <= 1.0)
    });
    balanced && cross_client_gap(&spec) < 0.5
}

fn synth_pooled_matches() -> bool {
    let one = generate_federation(&synth(0.0, 1, 8, 600, 4)).unwrap();
    let two = generate_federation(&synth(0.0, 2, 8, 300, 4)).unwrap();
    let pooled = merge_shards(&two.shards).unwrap();
    let a = class_means(&one.shards[0], 3);
    let b = class_means(&pooled, 3);
    (0..3).all(|c| {
        a[c].iter()
            .zip(&b[c])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
            < 0.6
    })
}

fn synth_skew_separates() -> bool {
    cross_client_gap(&synth(2.0, 3, 8, 100, 7)) > cross_client_gap(&synth(0.0, 3, 8, 100, 7))
}

fn ramp(n: usize) -> ClientShard {
    let x = Tensor::matrix(n, 1, (0..n).map(|v| v as f64).collect()).unwrap();
    ClientShard::new(0, x, (0..n).map(|v| v % 2).collect()).unwrap()
}

fn sizes(parts: &[ClientShard]) -> Vec<usize> {
    let mut s: Vec<usize> = parts.iter().map(ClientShard::len).collect();
    s.sort_unstable_by(|a, b| b.cmp(a));
    s
}

fn partition_two() -> bool {
    sizes(&partition_even(&ramp(10), 2, 0).unwrap()) == [5, 5]
}

fn partition_three() -> bool {
    sizes(&partition_even(&ramp(10), 3, 0).unwrap()) == [4, 3, 3]
}

fn partition_deterministic() -> bool {
    partition_even(&ramp(10), 3, 9).unwrap() == partition_even(&ramp(10), 3, 9).unwrap()
}

// fed-protocol

fn blob_empty() -> bool {
    let empty = Parameters::from_layers(vec![None]);
    let blob = serialize_model(&empty).unwrap();
    blob.len() == 8 && deserialize_model_for(&blob, &[Layer::Relu]).unwrap() == empty
}

fn blob_payload() -> bool {
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(2, 0));
    let affines = spec
        .layers()
        .iter()
        .filter(|l| matches!(l, Layer::Affine { .. }))
        .count();
    serialize_model(&p).unwrap().len() - 8 - 8 * affines == 4 * p.scalar_count()
}

fn blob_round_trip() -> bool {
    let spec = bench_spec();
    let mut p = Parameters::init(spec.layers(), &mut stream_rng(3, 0));
    for v in p.values_mut() {
        *v = *v as f32 as f64;
    }
    deserialize_model_for(&serialize_model(&p).unwrap(), spec.layers()).unwrap() == p
}

fn bank_with(clients: &[usize], per: usize) -> FeatureBank {
    let mut bank = FeatureBank::new(64);
    for &c in clients {
        bank.insert((0..per).map(|j| record(&[j as f64], j % 2, c)));
    }
    bank
}

fn bank_exclusion() -> bool {
    bank_with(&[1], 10).sample(1, 5, 0).is_empty()
}

fn bank_counts() -> bool {
    let s = bank_with(&[0, 1, 2], 10).sample(0, 3, 0);
    s.len() == 6 && (1..3).all(|c| s.iter().filter(|r| r.client_id == c).count() == 3)
}

fn bank_deterministic() -> bool {
    let b = bank_with(&[0, 1, 2], 10);
    b.sample(2, 4, 11) == b.sample(2, 4, 11)
}

fn ledger_empty() -> bool {
    CommLedger::new().total(LedgerFilter::all()) == 0
}

fn ledger_single() -> bool {
    let mut l = CommLedger::new();
    l.record_bytes(1, Direction::Up, TransferKind::Model, 0, 4000);
    l.total(LedgerFilter::all()) == 4000
}

fn ledger_closed_form() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let cfg = FederationConfig {
        rounds: 3,
        num_classes: 3,
        batch_size: 32,
        sample_per_client: 20,
        bank_capacity: 40,
        track_geometry: false,
        ..FederationConfig::default()
    };
    let out = run_federation(&cfg, &spec, &f.shards, &f.global_test).unwrap();
    observed(&out.ledger) == expected_multi_round(&cfg, &spec, &f.shards)
}

// fedmp-algo

fn identity_classifier() -> (NetworkSpec, Parameters) {
    two_affine(
        affine(2, 2, &ID2, &[0.0, 0.0]),
        affine(2, 2, &ID2, &[0.0, 0.0]),
    )
}

fn sfmc_empty() -> bool {
    let (spec, p) = identity_classifier();
    compute_sfmc_loss(&p, &spec, &[]).unwrap().0 == 0.0
}

fn sfmc_uniform() -> bool {
    let (spec, p) = identity_classifier();
    close(
        compute_sfmc_loss(&p, &spec, &[record(&[0.0, 0.0], 1, 1)])
            .unwrap()
            .0,
        2f64.ln(),
    )
}

fn sfmc_mean() -> bool {
    let (spec, p) = identity_classifier();
    let l = compute_sfmc_loss(
        &p,
        &spec,
        &[record(&[1.0, 0.0], 0, 1), record(&[0.0, 0.0], 0, 2)],
    )
    .unwrap()
    .0;
    close(l, ((1.0 + (-1f64).exp()).ln() + 2f64.ln()) / 2.0)
}

fn cpgma(points: &[&[f64]], labels: &[usize], protos: &[Vec<f64>]) -> f64 {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    cpgma_from_embeddings(&Tensor::from_rows(&rows).unwrap(), labels, protos, 1e-8)
        .unwrap()
        .0
}

fn cpgma_identical() -> bool {
    close(
        cpgma(
            &[&[2.0, 1.0], &[2.0, 1.0]],
            &[0, 0],
            &[vec![2.0, 1.0], vec![0.0, 0.0]],
        ),
        -1.0,
    )
}

fn cpgma_orthogonal() -> bool {
    close(cpgma(&[&[0.0, 3.0]], &[0], &[vec![1.0, 0.0]]), 0.0)
}

fn cpgma_hand() -> bool {
    close(
        cpgma(&[&[1.0, 0.0], &[0.0, 1.0]], &[0, 0], &[vec![1.0, 0.0]]),
        -0.5,
    )
}

fn combine_sfmc() -> bool {
    let b = combine_losses(
        2.0,
        4.0,
        0.0,
        LossFlags {
            sfmc: true,
            cpgma: false,
        },
        0.0,
    )
    .unwrap();
    close(b.total, 4.0) && close(b.sfmc_weight * 4.0, 2.0)
}

fn combine_disabled() -> bool {
    combine_losses(2.0, 4.0, -0.5, LossFlags::default(), 1e-8)
        .unwrap()
        .total
        == 2.0
}

fn combine_cpgma() -> bool {
    let b = combine_losses(
        2.0,
        0.0,
        -0.5,
        LossFlags {
            sfmc: false,
            cpgma: true,
        },
        0.0,
    )
    .unwrap();
    close(b.cpgma_weight, 4.0) && close(b.total, 0.0)
}

fn center_full() -> bool {
    let mut z = vec![9.0, -9.0];
    update_client_center(&mut z, &[&[1.0, 2.0], &[3.0, 4.0]], 1.0).unwrap();
    all_close(&z, &[2.0, 3.0])
}

fn center_half() -> bool {
    let mut z = vec![0.0, 0.0];
    update_client_center(&mut z, &[&[2.0, 2.0]], 0.5).unwrap();
    all_close(&z, &[1.0, 1.0])
}

fn center_empty() -> bool {
    let mut z = vec![0.3, 0.4];
    update_client_center(&mut z, &[], 0.5).unwrap();
    z == [0.3, 0.4]
}

fn proto_weighted() -> bool {
    let mut p = vec![0.0, 0.0];
    update_global_prototype(&mut p, &[&[1.0, 0.0], &[0.0, 1.0]], &[100, 300], 1.0).unwrap();
    all_close(&p, &[0.25, 0.75])
}

fn proto_fixed_point() -> bool {
    let v = [0.2, -0.7];
    let mut p = v.to_vec();
    update_global_prototype(&mut p, &[&v, &v, &v], &[5, 1, 9], 0.3).unwrap();
    all_close(&p, &v)
}

fn proto_hand() -> bool {
    let mut p = vec![1.0, 0.0];
    update_global_prototype(&mut p, &[&[0.0, 1.0]], &[10], 0.7).unwrap();
    all_close(&p, &[0.3, 0.7])
}

fn client_setup(lr: f64) -> (NetworkSpec, ClientShard, Parameters, FederationConfig) {
    let f = bench_federation(0);
    let spec = bench_spec();
    let init = Parameters::init(spec.layers(), &mut stream_rng(8, 0));
    let cfg = FederationConfig {
        num_classes: 3,
        learning_rate: lr,
        weight_decay: 0.0,
        batch_size: 128,
        ..FederationConfig::default()
    };
    (spec, f.shards[1].clone(), init, cfg)
}

fn client_zero_lr() -> bool {
    let (spec, shard, init, cfg) = client_setup(0.0);
    let m = shard.len();
    let mut c = ClientState::new(shard, &init, &cfg).unwrap();
    let protos = vec![vec![0.1; spec.embedding_width()]; 3];
    let foreign = vec![record(&vec![0.5; spec.embedding_width()], 2, 0)];
    let ctx = LocalContext {
        round: 1,
        epochs: 3,
        flags: LossFlags {
            sfmc: true,
            cpgma: true,
        },
        foreign: &foreign,
        prototypes: &protos,
    };
    let up = client_update(&mut c, &init, &spec, &ctx, &cfg).unwrap();
    up.params == init && up.record_count() == m
}

fn client_single_step() -> bool {
    let (spec, shard, init, cfg) = client_setup(1e-3);
    // one batch covering the shard; replay the client's shuffle before a plain step
    let mut c = ClientState::new(shard.clone(), &init, &cfg).unwrap();
    let ctx = LocalContext {
        round: 1,
        epochs: 1,
        flags: LossFlags::default(),
        foreign: &[],
        prototypes: &[],
    };
    let up = client_update(&mut c, &init, &spec, &ctx, &cfg).unwrap();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    order.shuffle(&mut stream_rng(
        cfg.seed,
        stream_id(tags::CLIENT_BATCHES, shard.client_id as u64, 0, 0),
    ));
    let x = shard.inputs.select_rows(&order);
    let y: Vec<usize> = order.iter().map(|&i| shard.labels[i]).collect();
    let (logits, cache) = forward_layers(spec.layers(), &init, spec.full_range(), &x).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
    let (grads, _) = backward(&init, &spec, &cache, &g).unwrap();
    let mut expected = init.clone();
    adam_step(
        &mut expected,
        &grads,
        &mut AdamState::new(&init, cfg.adam()),
    )
    .unwrap();
    up.features.len() == 1 && up.params == expected
}

fn client_record_count() -> bool {
    let (spec, shard, init, mut cfg) = client_setup(1e-3);
    cfg.batch_size = 7;
    let m = shard.len();
    let mut c = ClientState::new(shard, &init, &cfg).unwrap();
    let ctx = LocalContext {
        round: 2,
        epochs: 2,
        flags: LossFlags::default(),
        foreign: &[],
        prototypes: &[],
    };
    client_update(&mut c, &init, &spec, &ctx, &cfg)
        .unwrap()
        .record_count()
        == m
}

fn scalar_model(v: f64) -> Parameters {
    Parameters::from_layers(vec![Some(affine(1, 1, &[v], &[0.0]))])
}

fn aggregate_equal() -> bool {
    aggregate_models(&[scalar_model(2.0), scalar_model(4.0)], &[7, 7]).unwrap() == scalar_model(3.0)
}

fn aggregate_weighted() -> bool {
    aggregate_models(&[scalar_model(0.0), scalar_model(4.0)], &[1, 3]).unwrap() == scalar_model(3.0)
}

fn aggregate_single() -> bool {
    let m = scalar_model(0.123_456_789);
    aggregate_models(std::slice::from_ref(&m), &[5]).unwrap() == m
}

fn small_config(rounds: usize, clients: usize) -> FederationConfig {
    FederationConfig {
        rounds,
        num_clients: clients,
        local_epochs: 2,
        num_classes: 3,
        track_geometry: false,
        ..FederationConfig::default()
    }
    .fedavg()
}

fn federation_ablation() -> bool {
    let f = bench_federation(1);
    let spec = bench_spec();
    let cfg = small_config(3, 3);
    let out = run_federation(&cfg, &spec, &f.shards, &f.global_test).unwrap();
    let reference = reference_fedavg(&cfg, &spec, &f.shards, &f.global_test);
    out.params == reference.last().unwrap().0
        && out
            .metrics
            .iter()
            .zip(&reference)
            .all(|(m, r)| m.global_test_accuracy == r.1)
}

fn federation_single_client() -> bool {
    let f = bench_federation(2);
    let spec = bench_spec();
    let shard = vec![f.shards[0].clone()];
    let cfg = small_config(1, 1);
    let out = run_federation(&cfg, &spec, &shard, &f.global_test).unwrap();
    // one round with one client is E epochs of local training from the seeded init
    let init = fedmp_core::algo::initial_parameters(&spec, cfg.seed);
    let mut c = ClientState::new(shard[0].clone(), &init, &cfg).unwrap();
    let ctx = LocalContext {
        round: 1,
        epochs: cfg.local_epochs,
        flags: LossFlags::default(),
        foreign: &[],
        prototypes: &[],
    };
    out.params
        == client_update(&mut c, &init, &spec, &ctx, &cfg)
            .unwrap()
            .params
}

fn federation_deterministic() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let cfg = FederationConfig {
        rounds: 2,
        num_classes: 3,
        ..FederationConfig::default()
    };
    let a = run_federation(&cfg, &spec, &f.shards, &f.global_test).unwrap();
    let b = run_federation(&cfg, &spec, &f.shards, &f.global_test).unwrap();
    serde_json::to_string(&a.metrics).unwrap() == serde_json::to_string(&b.metrics).unwrap()
}

fn few_shot_three_events() -> bool {
    let f = bench_federation(0);
    let cfg = FederationConfig {
        num_classes: 3,
        ..FederationConfig::default()
    };
    let out = run_few_shot(&cfg, &bench_spec(), &f.shards, &f.global_test, &[2, 2, 2]).unwrap();
    out.ledger.communication_events() == 3
}

fn few_shot_cheaper() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let cfg = FederationConfig {
        rounds: 6,
        num_classes: 3,
        track_geometry: false,
        ..FederationConfig::default()
    };
    let few = run_few_shot(&cfg, &spec, &f.shards, &f.global_test, &[2, 2, 2]).unwrap();
    let multi = run_federation(&cfg, &spec, &f.shards, &f.global_test).unwrap();
    few.ledger.total(LedgerFilter::all()) < multi.ledger.total(LedgerFilter::all())
}

fn few_shot_degenerate() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let cfg = FederationConfig {
        num_classes: 3,
        ..FederationConfig::default()
    };
    let few = run_few_shot(&cfg.fedavg(), &spec, &f.shards, &f.global_test, &[3]).unwrap();
    let single = run_single(&cfg, &spec, &f.shards, &f.global_test, 3).unwrap();
    // reference: three epochs per client, then one weighted average
    let fed = small_config(1, 3);
    let fed = FederationConfig {
        local_epochs: 3,
        ..fed
    };
    let reference = reference_fedavg(&fed, &spec, &f.shards, &f.global_test);
    few.averaged == single.averaged
        && few.averaged == reference[0].0
        && few.client_models == single.client_models
}

fn ensemble_one() -> bool {
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(4, 0));
    let x = bench_federation(0).global_test.inputs;
    let logits = forward_full(&p, &spec, &x).unwrap();
    let direct: Vec<usize> = (0..x.rows()).map(|r| argmax(logits.row(r))).collect();
    ensemble_predict(&[p], &spec, &x).unwrap() == direct
}

fn const_head(probs: [f64; 2]) -> Parameters {
    let (_, p) = two_affine(
        affine(2, 2, &ID2, &[0.0, 0.0]),
        affine(2, 2, &[0.0; 4], &[probs[0].ln(), probs[1].ln()]),
    );
    p
}

fn ensemble_two() -> bool {
    let (spec, _) = identity_classifier();
    let x = row(&[0.4, -0.2]);
    ensemble_predict(&[const_head([0.9, 0.1]), const_head([0.2, 0.8])], &spec, &x).unwrap() == [0]
        && ensemble_predict(&[const_head([0.2, 0.8])], &spec, &x).unwrap() == [1]
}

fn ensemble_identical() -> bool {
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(6, 0));
    let x = bench_federation(1).global_test.inputs;
    ensemble_predict(&[p.clone(), p.clone(), p.clone()], &spec, &x).unwrap()
        == ensemble_predict(&[p], &spec, &x).unwrap()
}

// geometry

fn hausdorff_identity() -> bool {
    let a = cloud(&[&[0.3, 1.0], &[2.0, -1.0]]);
    hausdorff_distance(&a, &a).unwrap() == 0.0
}

fn hausdorff_line() -> bool {
    close(
        hausdorff_distance(&cloud(&[&[0.0]]), &cloud(&[&[0.0], &[1.0]])).unwrap(),
        1.0,
    )
}

fn hausdorff_plane() -> bool {
    let a = cloud(&[&[0.0, 0.0], &[1.0, 0.0]]);
    let b = cloud(&[&[0.0, 1.0]]);
    close(hausdorff_distance(&a, &b).unwrap(), 2f64.sqrt())
}

fn manifolds_single_client() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(1, 1));
    let m = class_manifolds(&p, &spec, &f.shards[..1]).unwrap();
    m.global
        .iter()
        .all(|(c, g)| g.points() == m.local[&(0, *c)].points())
}

fn manifolds_counts() -> bool {
    let f = bench_federation(0);
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(1, 1));
    let m = class_manifolds(&p, &spec, &f.shards[..2]).unwrap();
    m.global
        .iter()
        .all(|(c, g)| g.len() == m.local[&(0, *c)].len() + m.local[&(1, *c)].len())
}

fn manifolds_union_bound() -> bool {
    let f = bench_federation(1);
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(2, 2));
    let m = class_manifolds(&p, &spec, &f.shards).unwrap();
    m.local.iter().all(|(&(i, c), mi)| {
        // with three or more clients only the farthest client bounds the union distance
        let to_global = hausdorff_distance(mi, &m.global[&c]).unwrap();
        let farthest = (0..3)
            .filter(|&j| j != i)
            .map(|j| hausdorff_distance(mi, &m.local[&(j, c)]).unwrap())
            .fold(0.0, f64::max);
        to_global <= farthest
    })
}

fn manifolds_union_bound_pair() -> bool {
    let f = bench_federation(1);
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(2, 2));
    let m = class_manifolds(&p, &spec, &f.shards[..2]).unwrap();
    m.local.iter().all(|(&(i, c), mi)| {
        hausdorff_distance(mi, &m.global[&c]).unwrap()
            <= hausdorff_distance(mi, &m.local[&(1 - i, c)]).unwrap()
    })
}

fn report_identical() -> bool {
    let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 1.0]]).unwrap();
    let y = [0usize, 1, 0];
    let m = ClassManifolds::from_embeddings(&[0, 1, 2], &[x.clone(), x.clone(), x], &[&y, &y, &y])
        .unwrap();
    let r = manifold_report(1, &m).unwrap();
    r.local_to_global.iter().all(|d| d.distance == 0.0)
        && r.fragmentation.iter().all(|f| f.fragmentation == 0.0)
}

fn mean_fragmentation(skew: f64, seed: u64) -> f64 {
    let spec = bench_spec();
    let mut ds = super::bench_dataset(seed);
    ds.skew_strength = skew;
    let f = generate_federation(&ds).unwrap();
    let cfg = FederationConfig {
        rounds: 1,
        num_classes: 3,
        seed: 0,
        ..FederationConfig::default()
    };
    let mut frag = 0.0;
    fedmp_core::algo::run_federation_observed(&cfg, &spec, &f.shards, &f.global_test, &mut |v| {
        let r = v.manifolds.unwrap();
        frag = r.fragmentation.iter().map(|c| c.fragmentation).sum::<f64>()
            / r.fragmentation.len() as f64;
        Ok(())
    })
    .unwrap();
    frag
}

fn report_iid_control() -> bool {
    // two independent IID draws agree within sampling noise; the skewed draw does not
    let a = mean_fragmentation(0.0, 0);
    let b = mean_fragmentation(0.0, 1);
    let skewed = mean_fragmentation(2.0, 0);
    (a - b).abs() / a.max(b) < 0.2 && skewed > a.max(b)
}

fn report_completion() -> bool {
    let f = bench_federation(2);
    let spec = bench_spec();
    let p = Parameters::init(spec.layers(), &mut stream_rng(3, 3));
    let m = class_manifolds(&p, &spec, &f.shards).unwrap();
    m.local.iter().all(|(&(i, c), mi)| {
        let foreign: Vec<Vec<f64>> = m
            .local
            .iter()
            .filter(|(&(j, k), _)| j != i && k == c)
            .flat_map(|(_, cl)| {
                (0..cl.len())
                    .step_by(3)
                    .map(|r| cl.point(r).to_vec())
                    .collect::<Vec<_>>()
            })
            .collect();
        let completed = mi.union(&PointCloud::from_rows(&foreign).unwrap()).unwrap();
        let g = &m.global[&c];
        hausdorff_distance(&completed, g).unwrap() <= hausdorff_distance(mi, g).unwrap()
    })
}

type Clouds = BTreeMap<usize, PointCloud>;

fn proximity_clouds(seed: u64) -> (Clouds, Clouds, Clouds, NetworkSpec) {
    let f = bench_federation(seed);
    let spec = bench_spec();
    let p = fedmp_core::algo::initial_parameters(&spec, seed);
    let m = class_manifolds(&p, &spec, &f.shards).unwrap();
    let far: BTreeMap<usize, PointCloud> = m
        .global
        .keys()
        .map(|&c| (c, m.local[&(0, c)].clone()))
        .collect();
    let near = far
        .iter()
        .map(|(&c, own)| {
            let mut cl = own.clone();
            for j in 1..3 {
                let other = &m.local[&(j, c)];
                let half: Vec<Vec<f64>> = (0..other.len())
                    .step_by(2)
                    .map(|r| other.point(r).to_vec())
                    .collect();
                cl = cl.union(&PointCloud::from_rows(&half).unwrap()).unwrap();
            }
            (c, cl)
        })
        .collect();
    (m.global, near, far, spec)
}

fn proximity_near_equals_global() -> bool {
    let (global, _, far, spec) = proximity_clouds(0);
    let cfg = ProximityConfig {
        steps: 20,
        ..ProximityConfig::default()
    };
    let r = proximity_harness(&global, &global, &far, &spec, &cfg).unwrap();
    r.seeds.iter().all(|s| s.near_accuracy == s.global_accuracy)
}

fn proximity_fragment_experiment() -> bool {
    let (global, near, far, spec) = proximity_clouds(0);
    proximity_harness(&global, &near, &far, &spec, &ProximityConfig::default())
        .unwrap()
        .passed
}

fn proximity_zero_steps() -> bool {
    let (global, near, far, spec) = proximity_clouds(1);
    let cfg = ProximityConfig {
        steps: 0,
        ..ProximityConfig::default()
    };
    let r = proximity_harness(&global, &near, &far, &spec, &cfg).unwrap();
    r.seeds
        .iter()
        .all(|s| s.near_param_distance == 0.0 && s.far_param_distance == 0.0)
}

fn pca_plane() -> bool {
    // a plane spanned by two orthonormal directions in 4-D
    let e1 = [0.5, 0.5, 0.5, 0.5];
    let e2 = [0.5, -0.5, 0.5, -0.5];
    let coords = [(0.0, 0.0), (1.0, 2.0), (-3.0, 0.5), (2.0, -1.0), (0.7, 0.1)];
    let pts: Vec<Vec<f64>> = coords
        .iter()
        .map(|(a, b)| (0..4).map(|k| a * e1[k] + b * e2[k] + 1.0).collect())
        .collect();
    let proj = pca_project_2d(&PointCloud::from_rows(&pts).unwrap())
        .unwrap()
        .coordinates;
    let dist = |v: &[f64], w: &[f64]| {
        v.iter()
            .zip(w)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    (0..5).all(|i| {
        (0..5).all(|j| (dist(&pts[i], &pts[j]) - dist(proj.row(i), proj.row(j))).abs() < 1e-9)
    })
}

fn pca_collinear() -> bool {
    let pts: Vec<Vec<f64>> = (0..6)
        .map(|t| vec![t as f64, 2.0 * t as f64, -(t as f64)])
        .collect();
    let proj = pca_project_2d(&PointCloud::from_rows(&pts).unwrap())
        .unwrap()
        .coordinates;
    let second: Vec<f64> = (0..6).map(|r| proj.row(r)[1]).collect();
    let m = second.iter().sum::<f64>() / 6.0;
    second.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 5.0 < 1e-18
}

fn pca_trailing_eigen() -> bool {
    let pts: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let t = i as f64;
            vec![
                (t * 0.37).sin() * 3.0,
                (t * 1.3).cos() + 0.2 * t,
                (t * 0.71).sin() * 0.4,
            ]
        })
        .collect();
    let p = pca_project_2d(&PointCloud::from_rows(&pts).unwrap()).unwrap();
    let mut err = 0.0;
    for (r, x) in pts.iter().enumerate() {
        let c = p.coordinates.row(r);
        for (k, xk) in x.iter().enumerate() {
            let recon = p.mean[k] + c[0] * p.components[0][k] + c[1] * p.components[1][k];
            err += (xk - recon).powi(2);
        }
    }
    close(err / 39.0, p.eigenvalues[2])
}

// privacy-eval

fn ssim_identity() -> bool {
    let x = [0.1, 0.5, 0.9, 0.3];
    close(ssim(&x, &x, 1.0).unwrap(), 1.0)
}

fn ssim_constants() -> bool {
    let (a, b) = (0.8, 0.3);
    let c1 = (0.01f64).powi(2);
    close(
        ssim(&[a; 5], &[b; 5], 1.0).unwrap(),
        (2.0 * a * b + c1) / (a * a + b * b + c1),
    )
}

fn ssim_plugged() -> bool {
    close(
        ssim(&[1.0; 4], &[0.0; 4], 1.0).unwrap(),
        1e-4 / (1.0 + 1e-4),
    )
}

fn l2_identical() -> bool {
    let x = [0.2, 0.4];
    l2_distance(&x, &x).unwrap() == 0.0 && is_risk(0.0)
}

fn l2_ones_zeros() -> bool {
    let l = l2_distance(&[1.0; 6], &[0.0; 6]).unwrap();
    close(l, 1.0) && !is_risk(l)
}

fn l2_hand() -> bool {
    close(
        l2_distance(&[1.0, 0.0], &[0.0, 0.0]).unwrap(),
        0.5f64.sqrt(),
    )
}

fn gaussian_cloud(mu: f64, sigma: f64) -> PointCloud {
    // symmetric two-point design: sample mean mu, unbiased std sigma
    let h = sigma * 0.5f64.sqrt();
    cloud(&[&[mu - h], &[mu + h]])
}

fn frechet_identical() -> bool {
    let a = cloud(&[&[0.0, 1.0], &[2.0, 0.5], &[1.0, -1.0], &[0.3, 0.3]]);
    frechet_distance(&a, &a).unwrap().abs() < 1e-9
}

fn frechet_mean_shift() -> bool {
    close(
        frechet_distance(&gaussian_cloud(0.0, 1.0), &gaussian_cloud(1.0, 1.0)).unwrap(),
        1.0,
    )
}

fn frechet_scale() -> bool {
    // the 1e-6 covariance ridge moves the closed form by about 1e-7
    let fd = frechet_distance(&gaussian_cloud(0.0, 1.0), &gaussian_cloud(0.0, 2.0)).unwrap();
    (fd - 1.0).abs() < 1e-6
}

pub fn catalogue() -> Vec<Check> {
    vec![
        ("extractor identity layer", extractor_identity),
        ("extractor zero weights then relu", extractor_zero_weights),
        ("extractor hand affine relu", extractor_hand_relu),
        ("classifier identity", classifier_identity),
        ("classifier split composition", classifier_composition),
        ("classifier hand affine", classifier_hand),
        ("cross entropy uniform logits", ce_uniform),
        ("cross entropy closed form", ce_closed_form),
        ("cross entropy gradient", ce_gradient),
        ("backward zero upstream", backward_zero_upstream),
        ("backward scalar affine", backward_scalar),
        ("adam zero gradient", adam_zero_gradient),
        ("adam zero learning rate", adam_zero_lr),
        ("adam hand step", adam_hand_step),
        ("synth iid control", synth_iid_control),
        ("synth pooled vs split", synth_pooled_matches),
        ("synth skew separates clients", synth_skew_separates),
        ("partition 10 into 2", partition_two),
        ("partition 10 into 3", partition_three),
        ("partition deterministic", partition_deterministic),
        ("model blob empty", blob_empty),
        ("model blob payload 4P", blob_payload),
        ("model blob round trip", blob_round_trip),
        ("bank excludes requester", bank_exclusion),
        ("bank per-client counts", bank_counts),
        ("bank deterministic", bank_deterministic),
        ("ledger empty", ledger_empty),
        ("ledger single upload", ledger_single),
        ("ledger closed form", ledger_closed_form),
        ("sfmc empty sample", sfmc_empty),
        ("sfmc uniform logits", sfmc_uniform),
        ("sfmc mean of closed forms", sfmc_mean),
        ("cpgma identical direction", cpgma_identical),
        ("cpgma orthogonal", cpgma_orthogonal),
        ("cpgma hand average", cpgma_hand),
        ("combine sfmc weighting", combine_sfmc),
        ("combine modules off", combine_disabled),
        ("combine cpgma magnitude", combine_cpgma),
        ("client center full replacement", center_full),
        ("client center half step", center_half),
        ("client center empty batch", center_empty),
        ("prototype weighted mean", proto_weighted),
        ("prototype fixed point", proto_fixed_point),
        ("prototype hand step", proto_hand),
        ("client update zero learning rate", client_zero_lr),
        ("client update single plain step", client_single_step),
        ("client update record count", client_record_count),
        ("aggregate equal sizes", aggregate_equal),
        ("aggregate weighted", aggregate_weighted),
        ("aggregate single client", aggregate_single),
        ("federation ablation identity", federation_ablation),
        ("federation one round one client", federation_single_client),
        ("federation deterministic", federation_deterministic),
        ("few-shot three events", few_shot_three_events),
        ("few-shot cheaper than multi-round", few_shot_cheaper),
        ("few-shot degenerate schedule", few_shot_degenerate),
        ("ensemble one model", ensemble_one),
        ("ensemble two models", ensemble_two),
        ("ensemble identical models", ensemble_identical),
        ("hausdorff identity", hausdorff_identity),
        ("hausdorff line", hausdorff_line),
        ("hausdorff plane", hausdorff_plane),
        ("manifolds single client", manifolds_single_client),
        ("manifolds union counts", manifolds_counts),
        ("manifolds union bound", manifolds_union_bound),
        (
            "manifolds union bound two clients",
            manifolds_union_bound_pair,
        ),
        ("report identical clouds", report_identical),
        ("report iid control", report_iid_control),
        ("report completion", report_completion),
        ("proximity near equals global", proximity_near_equals_global),
        (
            "proximity fragment experiment",
            proximity_fragment_experiment,
        ),
        ("proximity zero steps", proximity_zero_steps),
        ("pca plane", pca_plane),
        ("pca collinear", pca_collinear),
        ("pca trailing eigenvalue", pca_trailing_eigen),
        ("ssim identity", ssim_identity),
        ("ssim constants", ssim_constants),
        ("ssim plugged constants", ssim_plugged),
        ("l2 identical", l2_identical),
        ("l2 ones vs zeros", l2_ones_zeros),
        ("l2 hand", l2_hand),
        ("frechet identical", frechet_identical),
        ("frechet mean shift", frechet_mean_shift),
        ("frechet scale", frechet_scale),
    ]
}
