//! Experiment orchestration: configuration, baselines, the full pipeline
//! (dataset -> pretrain -> agent training -> greedy evaluation), the K-sweep
//! trade-off study, and deterministic CSV/JSON/plot-script emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    self, Agent, EpochRecord, Evaluation, RewardConfig, RewardKind, TrainConfig,
};
use crate::checkpoint;
use crate::data::{build_split, DataConfig, DatasetSplit, Scene};
use crate::env::{
    evaluate_all_on, pretrain, ActionMask, ArchConfig, CloudModel, PretrainConfig,
    PretrainHistory, SensorModel,
};
use crate::error::{Error, Result};

pub const ENV_SEED: &str = "SENSORDROP_SEED";
pub const ENV_OUT_DIR: &str = "SENSORDROP_OUT_DIR";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetParams {
    pub train: usize,
    pub test: usize,
    #[serde(flatten)]
    pub data: DataConfig,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            train: 680,
            test: 171,
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BaselineParams {
    /// RandomDrop transmit probability.
    pub rho: f64,
    /// RNG draws when reporting RandomDrop's mean accuracy.
    pub draws: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            rho: 0.75,
            draws: 10,
        }
    }
}

/// Everything a run needs; a config file plus the code version determines
/// every output byte.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetParams,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
    pub rl: TrainConfig,
    pub baseline: BaselineParams,
}

impl ExperimentConfig {
    pub fn pinned_default() -> Self {
        ExperimentConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env_overrides()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_SEED) {
            self.seed = v
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}={v} is not a u64")))?;
        }
        if let Ok(v) = std::env::var(ENV_OUT_DIR) {
            self.out_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.data.validate()?;
        self.rl.reward.validate()?;
        if !(0.0..=1.0).contains(&self.baseline.rho) {
            return Err(Error::Config(format!(
                "rho must be in [0,1], got {}",
                self.baseline.rho
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// One evaluated operating point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentRecord {
    pub method: String,
    pub accuracy: f64,
    /// Fraction of sensor transmissions; the all-send baseline is 1.0 by
    /// construction.
    pub comm_overhead: f64,
    pub mean_reward_raw: f64,
    pub mean_reward_normalized: f64,
}

/// Per-sensor transmit frequency over the test set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContributionReport {
    pub transmit_fraction: Vec<f64>,
}

impl ContributionReport {
    pub fn from_masks(masks: &[ActionMask], n: usize) -> Self {
        let mut counts = vec![0usize; n];
        for m in masks {
            for (c, &b) in counts.iter_mut().zip(m.bits()) {
                if b {
                    *c += 1;
                }
            }
        }
        ContributionReport {
            transmit_fraction: counts
                .iter()
                .map(|&c| c as f64 / masks.len() as f64)
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.transmit_fraction.iter().sum::<f64>() / self.transmit_fraction.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

fn record_from_masks(
    sensors: &SensorModel,
    cloud: &CloudModel,
    scenes: &[Scene],
    masks: &[ActionMask],
    reward: &RewardConfig,
    method: &str,
) -> Result<ExperimentRecord> {
    let n = sensors.n_sensors();
    let prepared = agent::prepare_scenes(sensors, scenes)?;
    let mut correct = 0usize;
    let mut active = 0usize;
    let mut reward_sum = 0.0;
    for (scene, mask) in prepared.iter().zip(masks) {
        let ok = agent::act(cloud, scene, mask)?;
        if ok {
            correct += 1;
        }
        active += mask.d_active();
        reward_sum += reward.reward(ok, mask.d_active(), n);
    }
    let count = scenes.len() as f64;
    let mean_raw = reward_sum / count;
    Ok(ExperimentRecord {
        method: method.to_string(),
        accuracy: correct as f64 / count,
        comm_overhead: active as f64 / (count * n as f64),
        mean_reward_raw: mean_raw,
        mean_reward_normalized: reward.normalized(mean_raw, n),
    })
}

/// All sensors transmit; comm overhead is exactly 1.0.
pub fn run_baseline(
    sensors: &SensorModel,
    cloud: &CloudModel,
    scenes: &[Scene],
    reward: &RewardConfig,
) -> Result<ExperimentRecord> {
    let masks = vec![ActionMask::all_on(sensors.n_sensors()); scenes.len()];
    record_from_masks(sensors, cloud, scenes, &masks, reward, "baseline")
}

/// Each sensor transmits independently with probability rho; empty masks are
/// counted incorrect.
pub fn run_random_drop(
    sensors: &SensorModel,
    cloud: &CloudModel,
    scenes: &[Scene],
    rho: f64,
    reward: &RewardConfig,
    rng: &mut impl Rng,
) -> Result<ExperimentRecord> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must be in [0,1], got {rho}")));
    }
    let n = sensors.n_sensors();
    let masks: Vec<ActionMask> = scenes
        .iter()
        .map(|_| ActionMask::new((0..n).map(|_| rng.gen::<f64>() < rho).collect()))
        .collect();
    record_from_masks(sensors, cloud, scenes, &masks, reward, "random_drop")
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub config: ExperimentConfig,
    pub split: DatasetSplit,
    pub sensors: SensorModel,
    pub cloud: CloudModel,
    pub agent: Agent,
    pub pretrain_history: PretrainHistory,
    pub pretrain_test_accuracy: f64,
    pub train_history: Vec<EpochRecord>,
    pub baseline: ExperimentRecord,
    pub sensordrop: ExperimentRecord,
    pub evaluation: Evaluation,
    pub contribution: ContributionReport,
}

/// Deterministic sub-seeds for the pipeline stages.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(17) ^ stage
}

pub fn init_models(config: &ExperimentConfig) -> (SensorModel, CloudModel) {
    let n = config.dataset.data.n_sensors;
    let s = config.dataset.data.image_size;
    let mut rng = ChaCha12Rng::seed_from_u64(stage_seed(config.seed, 1));
    let sensors = SensorModel::new(n, &config.arch, &mut rng);
    let cloud = CloudModel::new(n, s, &config.arch, &mut rng);
    (sensors, cloud)
}

pub fn init_agent(config: &ExperimentConfig) -> Agent {
    let mut rng = ChaCha12Rng::seed_from_u64(stage_seed(config.seed, 2));
    Agent::new(
        config.dataset.data.n_sensors,
        config.dataset.data.image_size,
        &config.arch,
        &mut rng,
    )
}

/// Generate/load -> pretrain -> train -> evaluate. When `out_dir` is set,
/// artifacts are flushed as each stage completes, with a MANIFEST marking the
/// completion stage.
pub fn run_sensordrop(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<PipelineOutputs> {
    config.validate()?;
    let mut manifest = Manifest::open(out_dir)?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("config.toml"), &config.to_toml())?;
        manifest.mark("config")?;
    }

    let split = build_split(
        stage_seed(config.seed, 0),
        config.dataset.train,
        config.dataset.test,
        &config.dataset.data,
    )?;
    if let Some(dir) = out_dir {
        crate::data::save_split(&split, &dir.join("dataset.sdds"))?;
        manifest.mark("dataset")?;
    }

    let (mut sensors, mut cloud) = init_models(config);
    let pretrain_history = pretrain(
        &mut sensors,
        &mut cloud,
        &split,
        &config.pretrain,
        stage_seed(config.seed, 3),
    )?;
    let pretrain_test_accuracy = evaluate_all_on(&sensors, &cloud, &split.test)?;
    if let Some(dir) = out_dir {
        write_pretrain_csv(&dir.join("pretrain_history.csv"), &pretrain_history)?;
        for (name, net) in [("sensor", &sensors.nets()[0]), ("cloud", &cloud.net)] {
            checkpoint::save_network(net, &dir.join(format!("{name}.sdnc")))?;
        }
        manifest.mark("pretrain")?;
    }

    let mut agent = init_agent(config);
    let train_history = agent::train(
        &mut agent,
        &sensors,
        &cloud,
        &split.train,
        &config.rl,
        stage_seed(config.seed, 4),
    )?;
    if let Some(dir) = out_dir {
        write_train_csv(&dir.join("train_history.csv"), &train_history)?;
        checkpoint::save_network(&agent.actor, &dir.join("actor.sdnc"))?;
        checkpoint::save_network(&agent.critic, &dir.join("critic.sdnc"))?;
        manifest.mark("train")?;
    }

    let baseline = run_baseline(&sensors, &cloud, &split.test, &config.rl.reward)?;
    let evaluation = agent::evaluate_greedy(&agent, &sensors, &cloud, &split.test)?;
    let masks_record = record_from_masks(
        &sensors,
        &cloud,
        &split.test,
        &evaluation.masks,
        &config.rl.reward,
        "sensordrop",
    )?;
    let contribution = ContributionReport::from_masks(
        &evaluation.masks,
        config.dataset.data.n_sensors,
    );
    let outputs = PipelineOutputs {
        config: config.clone(),
        split,
        sensors,
        cloud,
        agent,
        pretrain_history,
        pretrain_test_accuracy,
        train_history,
        baseline,
        sensordrop: masks_record,
        evaluation,
        contribution,
    };
    if let Some(dir) = out_dir {
        emit_report(
            dir,
            &[outputs.baseline.clone(), outputs.sensordrop.clone()],
            Some(&outputs.contribution),
        )?;
        manifest.mark("eval")?;
        write_text(&dir.join("plot.py"), PLOT_SCRIPT)?;
        manifest.mark("report")?;
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// K-sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub k: f64,
    pub accuracy: f64,
    pub comm_overhead: f64,
}

/// One SensorDrop training run per K with the harmonic reward, against a
/// fixed pretrained environment. Per-run failures are isolated; the sweep
/// continues.
pub fn run_k_sweep(
    config: &ExperimentConfig,
    sensors: &SensorModel,
    cloud: &CloudModel,
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    ks: &[f64],
) -> Vec<std::result::Result<SweepPoint, (f64, Error)>> {
    ks.iter()
        .map(|&k| {
            let mut rl = config.rl.clone();
            rl.reward.kind = RewardKind::Harmonic;
            rl.reward.k = k;
            rl.reward.validate().map_err(|e| (k, e))?;
            let mut agent = init_agent(config);
            agent::train(
                &mut agent,
                sensors,
                cloud,
                train_scenes,
                &rl,
                stage_seed(config.seed, 4),
            )
            .map_err(|e| (k, e))?;
            let eval = agent::evaluate_greedy(&agent, sensors, cloud, test_scenes)
                .map_err(|e| (k, e))?;
            Ok(SweepPoint {
                k,
                accuracy: eval.accuracy,
                comm_overhead: eval.comm_overhead,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

struct Manifest {
    path: Option<PathBuf>,
}

impl Manifest {
    fn open(out_dir: Option<&Path>) -> Result<Self> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = dir.join("MANIFEST");
            write_text(&path, "")?;
            Ok(Manifest { path: Some(path) })
        } else {
            Ok(Manifest { path: None })
        }
    }

    fn mark(&mut self, stage: &str) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = fs::OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            writeln!(f, "{stage}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_pretrain_csv(path: &Path, history: &PretrainHistory) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
    for e in &history.epochs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.train_accuracy, e.test_accuracy
        ));
    }
    write_text(path, &out)
}

fn write_train_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out =
        String::from("epoch,mean_reward_raw,mean_reward_normalized,train_accuracy,comm_overhead_fraction\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.mean_reward_raw, e.mean_reward_normalized, e.accuracy, e.comm_overhead
        ));
    }
    write_text(path, &out)
}

/// CSV + JSON summary. Reference-scale figures these mirror are qualitative
/// ordering targets, not tolerances; the emitted note says so.
pub fn emit_report(
    dir: &Path,
    records: &[ExperimentRecord],
    contribution: Option<&ContributionReport>,
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Config("emit_report needs at least one record".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut csv =
        String::from("method,accuracy,comm_overhead,mean_reward_raw,mean_reward_normalized\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.accuracy, r.comm_overhead, r.mean_reward_raw, r.mean_reward_normalized
        ));
    }
    write_text(&dir.join("eval.csv"), &csv)?;

    if let Some(c) = contribution {
        let mut csv = String::from("sensor,transmit_fraction\n");
        for (i, f) in c.transmit_fraction.iter().enumerate() {
            csv.push_str(&format!("{i},{f}\n"));
        }
        write_text(&dir.join("contribution.csv"), &csv)?;
    }

    let summary = serde_json::json!({
        "schema_version": 1,
        "note": "overhead is the fraction of sensor transmissions; the all-send baseline is 1.0 by construction; reference-scale figures are ordering targets, not tolerances",
        "records": records,
        "contribution": contribution,
    });
    write_text(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut out = String::from("k,accuracy,comm_overhead\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.k, p.accuracy, p.comm_overhead));
    }
    write_text(path, &out)
}

/// Standalone plot script consuming the emitted CSVs; rendering stays out of
/// process so the pipeline itself needs no plotting dependency.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Render convergence curves, per-sensor contribution bars, and the
accuracy/overhead trajectory from the CSVs in this run directory."""
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

run = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))

def read(name):
    with open(os.path.join(run, name)) as f:
        rows = list(csv.DictReader(f))
    return rows

hist = read("train_history.csv")
epochs = [int(r["epoch"]) for r in hist]
acc = [float(r["train_accuracy"]) for r in hist]
over = [float(r["comm_overhead_fraction"]) for r in hist]
rew = [float(r["mean_reward_normalized"]) for r in hist]

fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
top.plot(epochs, acc, label="accuracy")
top.plot(epochs, rew, label="normalized reward")
top.legend(); top.set_ylabel("value"); top.set_title("Convergence")
bottom.plot(epochs, acc, label="accuracy")
bottom.plot(epochs, over, label="comm overhead")
bottom.legend(); bottom.set_xlabel("epoch"); bottom.set_ylabel("fraction")
fig.savefig(os.path.join(run, "convergence.png"), dpi=150)

contrib = read("contribution.csv")
plt.figure(figsize=(6, 4))
plt.bar([r["sensor"] for r in contrib], [float(r["transmit_fraction"]) for r in contrib])
plt.xlabel("sensor"); plt.ylabel("transmit fraction"); plt.title("Per-sensor contribution")
plt.savefig(os.path.join(run, "contribution.png"), dpi=150)

plt.figure(figsize=(6, 5))
sc = plt.scatter(over, acc, c=epochs, cmap="coolwarm")
plt.colorbar(sc, label="epoch")
plt.xlabel("comm overhead"); plt.ylabel("train accuracy")
plt.title("Accuracy / overhead trajectory")
plt.savefig(os.path.join(run, "trajectory.png"), dpi=150)

sweep_path = os.path.join(run, "sweep.csv")
if os.path.exists(sweep_path):
    sweep = read("sweep.csv")
    plt.figure(figsize=(6, 5))
    plt.plot([float(r["comm_overhead"]) for r in sweep],
             [float(r["accuracy"]) for r in sweep], "o-")
    for r in sweep:
        plt.annotate(f'K={r["k"]}', (float(r["comm_overhead"]), float(r["accuracy"])))
    plt.xlabel("comm overhead"); plt.ylabel("accuracy")
    plt.title("Accuracy / overhead trade-off")
    plt.savefig(os.path.join(run, "tradeoff.png"), dpi=150)
print("plots written to", run)
"#;
