//! The five subcommands. Each returns the invariant violations it found;
//! errors abort, violations only change the exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedmp_core::algo::{
    run_federation, run_federation_observed, run_few_shot, run_single, FederationConfig,
    FederationOutcome, FewShotOutcome,
};
use fedmp_core::data::{generate_federation, load_csv, merge_shards, ClientShard};
use fedmp_core::geometry::{pca_project_2d, PointCloud};
use fedmp_core::nn::forward_extractor;
use fedmp_core::privacy::{attack_report, write_leakage_csv};
use fedmp_core::protocol::{CommLedger, LedgerFilter, TransferKind};
use fedmp_core::{NetworkSpec, Parameters, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, Mode};
use crate::error::{io_err, CliError, Result};
use crate::output::{mean_std, read_manifest, verify_manifest, Manifest, OutputDir};

pub const DATA_DIR: &str = "data";
pub const RUNS_DIR: &str = "runs";
pub const ABLATION_DIR: &str = "ablation";
pub const ATTACK_DIR: &str = "attack";
pub const REPORT_DIR: &str = "report";
pub const SUMMARY: &str = "summary.json";

/// The four module combinations of the ablation table, in row order.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("off_off", false, false),
    ("sfmc_only", true, false),
    ("cpgma_only", false, true),
    ("both", true, true),
];

pub type Violations = Vec<String>;

/// Final per-seed numbers of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub final_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub total_bytes: Vec<usize>,
    pub communications: Vec<usize>,
}

impl Summary {
    fn new(mode: &str, seeds: &[SeedResult]) -> Self {
        let acc: Vec<f64> = seeds.iter().map(|s| s.final_accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        Self {
            mode: mode.to_string(),
            seeds: seeds.iter().map(|s| s.seed).collect(),
            final_accuracy: acc,
            mean_accuracy,
            std_accuracy,
            total_bytes: seeds.iter().map(|s| s.total_bytes).collect(),
            communications: seeds.iter().map(|s| s.communications).collect(),
        }
    }
}

struct SeedResult {
    seed: u64,
    final_accuracy: f64,
    total_bytes: usize,
    communications: usize,
}

/// Training data read back from the generated files.
pub struct Data {
    pub shards: Vec<ClientShard>,
    pub test: ClientShard,
}

fn run_echo(config: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(config)?;
    // the output location is not part of the experiment
    if let Some(obj) = v.as_object_mut() {
        obj.remove("out");
    }
    Ok(v)
}

pub fn generate(config: &ExperimentConfig) -> Result<Manifest> {
    let fed = generate_federation(&config.dataset)?;
    let mut out = OutputDir::create(config.out.join(DATA_DIR))?;
    for s in &fed.shards {
        s.write_csv(&out.declare(format!("client_{}.csv", s.client_id))?, true)?;
    }
    fed.global_test.write_csv(&out.declare("test.csv")?, true)?;
    for (i, s) in fed.per_client_test.iter().enumerate() {
        s.write_csv(&out.declare(format!("test_client_{i}.csv"))?, true)?;
    }
    let manifest = out.finish(
        "generate",
        json!({ "seed": config.dataset.seed, "dataset": config.dataset }),
    )?;
    println!(
        "generated {} shards in {} (manifest {})",
        fed.shards.len(),
        config.out.join(DATA_DIR).display(),
        manifest.hash
    );
    Ok(manifest)
}

/// Loads the generated dataset, refusing files made from a different spec.
pub fn load_data(config: &ExperimentConfig) -> Result<Data> {
    let dir = config.out.join(DATA_DIR);
    let manifest = read_manifest(&dir)?;
    if manifest.echo.get("dataset") != Some(&serde_json::to_value(&config.dataset)?) {
        return Err(CliError::Mismatch(format!(
            "{} was generated from a different dataset spec; rerun `fedmp generate`",
            dir.display()
        )));
    }
    verify_manifest(&dir, &manifest)?;
    let shards = (0..config.dataset.num_clients)
        .map(|i| load_csv(&dir.join(format!("client_{i}.csv")), true, i))
        .collect::<fedmp_core::Result<Vec<_>>>()?;
    let test = load_csv(&dir.join("test.csv"), true, 0)?;
    Ok(Data { shards, test })
}

/// Rounds at which the embedding projection is written: first, middle, last.
pub fn pca_rounds(rounds: usize) -> Vec<usize> {
    let mut r = vec![1, (rounds / 2).max(1), rounds];
    r.dedup();
    r
}

/// One metrics step, whichever schedule produced it.
struct Step {
    index: usize,
    accuracy: f64,
    losses: [f64; 3],
    bytes: usize,
}

struct ModeRun {
    /// Serialised metric lines in field order.
    metrics: Vec<String>,
    steps: Vec<Step>,
    ledger: CommLedger,
    model: Parameters,
    snapshots: Vec<(usize, Parameters)>,
    final_accuracy: f64,
    expected_events: usize,
    modules: bool,
}

fn from_federation(
    out: FederationOutcome,
    snapshots: Vec<(usize, Parameters)>,
    config: &FederationConfig,
) -> Result<ModeRun> {
    let steps = out
        .metrics
        .iter()
        .map(|m| Step {
            index: m.round,
            accuracy: m.global_test_accuracy,
            losses: [m.mean_local_loss, m.mean_sfmc_loss, m.mean_cpgma_loss],
            bytes: m.up_bytes + m.down_bytes,
        })
        .collect();
    Ok(ModeRun {
        metrics: out
            .metrics
            .iter()
            .map(serde_json::to_string)
            .collect::<serde_json::Result<_>>()?,
        steps,
        final_accuracy: out.metrics.last().map_or(0.0, |m| m.global_test_accuracy),
        ledger: out.ledger,
        model: out.params,
        snapshots,
        expected_events: config.rounds,
        modules: config.modules_enabled(),
    })
}

fn from_few_shot(out: FewShotOutcome, final_accuracy: f64, modules: bool) -> Result<ModeRun> {
    let steps = out
        .stages
        .iter()
        .map(|s| Step {
            index: s.communication,
            accuracy: s.averaged_accuracy,
            losses: [s.mean_local_loss, s.mean_sfmc_loss, s.mean_cpgma_loss],
            bytes: s.up_bytes + s.down_bytes,
        })
        .collect();
    let last = out.stages.len();
    Ok(ModeRun {
        metrics: out
            .stages
            .iter()
            .map(serde_json::to_string)
            .collect::<serde_json::Result<_>>()?,
        steps,
        ledger: out.ledger,
        snapshots: vec![(last, out.averaged.clone())],
        model: out.averaged,
        final_accuracy,
        expected_events: last,
        modules,
    })
}

/// Multi-round training that keeps the global model at the projection rounds.
fn federate(
    config: &FederationConfig,
    spec: &NetworkSpec,
    shards: &[ClientShard],
    test: &ClientShard,
) -> Result<ModeRun> {
    let wanted = pca_rounds(config.rounds);
    let mut snapshots = Vec::new();
    let out = run_federation_observed(config, spec, shards, test, &mut |v| {
        if wanted.contains(&v.round) {
            snapshots.push((v.round, v.global.clone()));
        }
        Ok(())
    })?;
    from_federation(out, snapshots, config)
}

fn run_mode(
    config: &ExperimentConfig,
    mode: Mode,
    seed: u64,
    spec: &NetworkSpec,
    data: &Data,
) -> Result<ModeRun> {
    let fc = config.federation_for(seed);
    match mode {
        Mode::Fedmp => federate(&fc, spec, &data.shards, &data.test),
        Mode::Fedavg => federate(&fc.fedavg(), spec, &data.shards, &data.test),
        Mode::Centralized => {
            let mut pooled = merge_shards(&data.shards)?;
            pooled.client_id = 0;
            let fc = FederationConfig {
                num_clients: 1,
                track_geometry: false,
                client_order: None,
                ..fc.fedavg()
            };
            federate(&fc, spec, &[pooled], &data.test)
        }
        Mode::Fewshot => {
            let out = run_few_shot(
                &fc,
                spec,
                &data.shards,
                &data.test,
                &config.schedule.stage_epochs,
            )?;
            let acc = out.ensemble_accuracy;
            from_few_shot(out, acc, fc.modules_enabled())
        }
        Mode::Single => {
            let out = run_single(&fc, spec, &data.shards, &data.test, config.single_epochs())?;
            let acc = out.averaged_accuracy;
            from_few_shot(out, acc, false)
        }
    }
}

fn check_run(label: &str, run: &ModeRun) -> Violations {
    let mut v = Vec::new();
    for s in &run.steps {
        if !(s.accuracy.is_finite() && (0.0..=1.0).contains(&s.accuracy)) {
            v.push(format!(
                "{label}: step {} accuracy {} outside [0, 1]",
                s.index, s.accuracy
            ));
        }
        if s.losses.iter().any(|l| !l.is_finite()) {
            v.push(format!(
                "{label}: step {} has a non-finite loss {:?}",
                s.index, s.losses
            ));
        }
    }
    let streamed: usize = run.steps.iter().map(|s| s.bytes).sum();
    let logged = run.ledger.total(LedgerFilter::all());
    if streamed != logged {
        v.push(format!(
            "{label}: metrics report {streamed} bytes, ledger {logged}"
        ));
    }
    let events = run.ledger.communication_events();
    if events != run.expected_events {
        v.push(format!(
            "{label}: {events} communication events, expected {}",
            run.expected_events
        ));
    }
    if !run.modules {
        if let Some(e) = run
            .ledger
            .entries()
            .iter()
            .find(|e| e.kind != TransferKind::Model)
        {
            v.push(format!(
                "{label}: {} transfer in a run without auxiliary modules",
                e.kind.as_str()
            ));
        }
    }
    v
}

/// Projects every training embedding under `params` onto two principal axes.
fn write_projection(
    path: &Path,
    round: usize,
    params: &Parameters,
    spec: &NetworkSpec,
    shards: &[ClientShard],
) -> Result<()> {
    let width = spec.embedding_width();
    let mut data = Vec::new();
    let mut tags = Vec::new();
    for s in shards {
        data.extend_from_slice(forward_extractor(params, spec, &s.inputs)?.data());
        tags.extend(s.labels.iter().map(|&y| (s.client_id, y)));
    }
    let cloud = PointCloud::new(Tensor::matrix(tags.len(), width, data)?)?;
    let proj = pca_project_2d(&cloud)?;
    let mut text = String::from("round,client_id,label,pc1,pc2\n");
    for (r, (client, label)) in tags.iter().enumerate() {
        let p = proj.coordinates.row(r);
        writeln!(text, "{round},{client},{label},{:?},{:?}", p[0], p[1]).expect("string write");
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_seed(
    out: &mut OutputDir,
    dir: &str,
    run: &ModeRun,
    spec: &NetworkSpec,
    shards: &[ClientShard],
) -> Result<()> {
    out.write_lines(format!("{dir}/metrics.jsonl"), &run.metrics)?;
    run.ledger
        .write_csv(&out.declare(format!("{dir}/ledger.csv"))?)?;
    let mut curve = String::from("step,accuracy\n");
    for s in &run.steps {
        writeln!(curve, "{},{:?}", s.index, s.accuracy).expect("string write");
    }
    out.write(format!("{dir}/accuracy.csv"), curve.as_bytes())?;
    for (round, params) in &run.snapshots {
        let path = out.declare(format!("{dir}/pca_round_{round}.csv"))?;
        write_projection(&path, *round, params, spec, shards)?;
    }
    out.write_json(format!("{dir}/model.json"), &run.model)?;
    Ok(())
}

fn write_summary(out: &mut OutputDir, summary: &Summary) -> Result<()> {
    out.write_json(SUMMARY, summary)?;
    let mut csv = String::from("seed,final_accuracy,total_bytes,communications\n");
    for (i, seed) in summary.seeds.iter().enumerate() {
        writeln!(
            csv,
            "{seed},{:?},{},{}",
            summary.final_accuracy[i], summary.total_bytes[i], summary.communications[i]
        )
        .expect("string write");
    }
    out.write("summary.csv", csv.as_bytes())?;
    Ok(())
}

pub fn run(config: &ExperimentConfig) -> Result<Violations> {
    let data = load_data(config)?;
    let spec = config.network_spec()?;
    let mode = config.mode.as_str();
    let mut out = OutputDir::create(config.out.join(RUNS_DIR).join(mode))?;
    let mut violations = Vec::new();
    let mut results = Vec::new();
    // seeds run in list order, so merged outputs are ordered by the seed list
    for &seed in &config.seeds {
        let r = run_mode(config, config.mode, seed, &spec, &data)?;
        violations.extend(check_run(&format!("{mode} seed {seed}"), &r));
        write_seed(&mut out, &format!("seed_{seed}"), &r, &spec, &data.shards)?;
        results.push(SeedResult {
            seed,
            final_accuracy: r.final_accuracy,
            total_bytes: r.ledger.total(LedgerFilter::all()),
            communications: r.ledger.communication_events(),
        });
    }
    let summary = Summary::new(mode, &results);
    write_summary(&mut out, &summary)?;
    out.finish("run", run_echo(config)?)?;
    println!(
        "{mode}: final accuracy {:.4} ± {:.4} over {} seeds",
        summary.mean_accuracy,
        summary.std_accuracy,
        summary.seeds.len()
    );
    Ok(violations)
}

pub fn ablate(config: &ExperimentConfig) -> Result<Violations> {
    let data = load_data(config)?;
    let spec = config.network_spec()?;
    let mut out = OutputDir::create(config.out.join(ABLATION_DIR))?;
    let mut violations = Vec::new();
    let mut summaries = Vec::new();
    for (name, sfmc, cpgma) in ABLATION_VARIANTS {
        let mut results = Vec::new();
        for &seed in &config.seeds {
            let fc = FederationConfig {
                enable_sfmc: sfmc,
                enable_cpgma: cpgma,
                ..config.federation_for(seed)
            };
            let r = from_federation(
                run_federation(&fc, &spec, &data.shards, &data.test)?,
                Vec::new(),
                &fc,
            )?;
            violations.extend(check_run(&format!("ablation {name} seed {seed}"), &r));
            out.write_lines(format!("{name}/seed_{seed}/metrics.jsonl"), &r.metrics)?;
            results.push(SeedResult {
                seed,
                final_accuracy: r.final_accuracy,
                total_bytes: r.ledger.total(LedgerFilter::all()),
                communications: r.ledger.communication_events(),
            });
        }
        summaries.push((sfmc, cpgma, Summary::new(name, &results)));
    }
    let mut table = String::from("variant,sfmc,cpgma,mean_accuracy,std_accuracy,seeds\n");
    for (sfmc, cpgma, s) in &summaries {
        writeln!(
            table,
            "{},{sfmc},{cpgma},{:?},{:?},{}",
            s.mode,
            s.mean_accuracy,
            s.std_accuracy,
            s.seeds.len()
        )
        .expect("string write");
    }
    out.write("ablation.csv", table.as_bytes())?;
    let mut per_seed = String::from("variant,seed,final_accuracy\n");
    for (_, _, s) in &summaries {
        for (seed, acc) in s.seeds.iter().zip(&s.final_accuracy) {
            writeln!(per_seed, "{},{seed},{acc:?}", s.mode).expect("string write");
        }
    }
    out.write("ablation_seeds.csv", per_seed.as_bytes())?;
    let all: Vec<&Summary> = summaries.iter().map(|(_, _, s)| s).collect();
    out.write_json(SUMMARY, &all)?;
    out.finish("ablate", run_echo(config)?)?;
    for s in &all {
        println!(
            "{:>10}: {:.4} ± {:.4}",
            s.mode, s.mean_accuracy, s.std_accuracy
        );
    }
    let both = &all[3].final_accuracy;
    let wins = (0..both.len())
        .filter(|&i| both[i] >= all[1].final_accuracy[i] && both[i] >= all[2].final_accuracy[i])
        .count();
    println!(
        "both modules at least as good as either alone in {wins} of {} seeds",
        both.len()
    );
    Ok(violations)
}

pub fn attack(config: &ExperimentConfig) -> Result<Violations> {
    let mode = config.mode.as_str();
    let source = config.out.join(RUNS_DIR).join(mode);
    let manifest = read_manifest(&source)?;
    verify_manifest(&source, &manifest)?;
    let data = load_data(config)?;
    let spec = config.network_spec()?;
    let mut out = OutputDir::create(config.out.join(ATTACK_DIR).join(mode))?;
    let mut violations = Vec::new();
    for &seed in &config.seeds {
        let model_path: PathBuf = source.join(format!("seed_{seed}/model.json"));
        let bytes = std::fs::read(&model_path)
            .map_err(|_| CliError::MissingArtifact(model_path.clone()))?;
        let params: Parameters = serde_json::from_slice(&bytes)?;
        let attacks: Vec<_> = config
            .attack
            .splits
            .iter()
            .map(|&s| config.attack_config(s, seed))
            .collect();
        let reports = attack_report(&params, &spec, &data.shards, &attacks)?;
        if reports.len() != attacks.len() {
            violations.push(format!(
                "attack seed {seed}: {} rows for {} splits",
                reports.len(),
                attacks.len()
            ));
        }
        write_leakage_csv(&reports, &out.declare(format!("seed_{seed}.csv"))?)?;
        let ssim: Vec<String> = reports
            .iter()
            .map(|r| format!("{}:{:.4}", r.split_index, r.max_ssim))
            .collect();
        println!("seed {seed}: max SSIM by split {}", ssim.join(" "));
    }
    out.finish("attack", run_echo(config)?)?;
    Ok(violations)
}

/// Collects every run summary and accuracy curve under the output root.
pub fn report(out_root: &Path) -> Result<Violations> {
    let runs = out_root.join(RUNS_DIR);
    let mut modes: Vec<PathBuf> = match std::fs::read_dir(&runs) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SUMMARY).is_file())
            .collect(),
        Err(_) => Vec::new(),
    };
    modes.sort();
    let ablation = out_root.join(ABLATION_DIR).join(SUMMARY);
    if modes.is_empty() && !ablation.is_file() {
        return Err(CliError::MissingArtifact(runs));
    }
    let mut table = String::from(
        "source,mode,seeds,mean_accuracy,std_accuracy,mean_total_bytes,communications\n",
    );
    let mut curves = String::from("mode,seed,step,accuracy\n");
    let row = |table: &mut String, source: &str, s: &Summary| {
        let bytes: Vec<f64> = s.total_bytes.iter().map(|&b| b as f64).collect();
        let comms = s.communications.first().copied().unwrap_or(0);
        writeln!(
            table,
            "{source},{},{},{:?},{:?},{:?},{comms}",
            s.mode,
            s.seeds.len(),
            s.mean_accuracy,
            s.std_accuracy,
            mean_std(&bytes).0
        )
        .expect("string write");
    };
    for dir in &modes {
        let s: Summary = serde_json::from_slice(
            &std::fs::read(dir.join(SUMMARY)).map_err(io_err(dir.join(SUMMARY)))?,
        )?;
        row(&mut table, "run", &s);
        for seed in &s.seeds {
            let path = dir.join(format!("seed_{seed}/accuracy.csv"));
            let text = std::fs::read_to_string(&path)
                .map_err(|_| CliError::MissingArtifact(path.clone()))?;
            for line in text.lines().skip(1) {
                writeln!(curves, "{},{seed},{line}", s.mode).expect("string write");
            }
        }
    }
    if ablation.is_file() {
        let all: Vec<Summary> =
            serde_json::from_slice(&std::fs::read(&ablation).map_err(io_err(&ablation))?)?;
        for s in &all {
            row(&mut table, "ablation", s);
        }
    }
    let mut out = OutputDir::create(out_root.join(REPORT_DIR))?;
    out.write("report.csv", table.as_bytes())?;
    out.write("curves.csv", curves.as_bytes())?;
    out.finish(
        "report",
        json!({ "runs": modes.len(), "ablation": ablation.is_file() }),
    )?;
    print!("{table}");
    Ok(Vec::new())
}
