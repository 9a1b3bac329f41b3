//! Command-line entry point for dataset generation, environment pretraining,
//! agent training, evaluation, the K-sweep, and report emission.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sensordrop::checkpoint;
use sensordrop::data::{self, class_name, DataConfig};
use sensordrop::env::{self, CloudModel, SensorModel};
use sensordrop::harness::{self, ExperimentConfig};
use sensordrop::{Error, Result};

#[derive(Parser)]
#[command(name = "sensordrop", version, about = "RL-driven sensor selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Experiment config file (TOML). Defaults apply when omitted.
    /// SENSORDROP_SEED and SENSORDROP_OUT_DIR override the file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let mut cfg = ExperimentConfig::pinned_default();
                cfg.apply_env_overrides()?;
                cfg
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset operations.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Environment (sensor + cloud network) operations.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
    /// Agent operations.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Evaluate an operating point on the test split.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        command: SweepCommand,
    },
    /// Re-emit CSV/JSON reports for a completed run directory.
    Report {
        /// Run directory produced by `eval sensordrop`.
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a dataset file.
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 680)]
        train: usize,
        #[arg(long, default_value_t = 171)]
        test: usize,
    },
    /// Print counts and the per-class histogram of a dataset file.
    Inspect { path: PathBuf },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Supervised pretraining of the sensor and cloud networks.
    Pretrain {
        /// Dataset file; generated from the config seed when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Subcommand)]
enum AgentCommand {
    /// Run the full pipeline including RL training (alias of `eval sensordrop`).
    Train {
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// All sensors transmit.
    Baseline {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Independent Bernoulli(rho) transmission per sensor.
    Random {
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Full SensorDrop pipeline with greedy-policy evaluation.
    Sensordrop {
        #[command(flatten)]
        config: ConfigArg,
    },
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Train once per K value of the harmonic reward and tabulate the
    /// accuracy/overhead trade-off.
    K {
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
        values: Vec<f64>,
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn pretrained_env(cfg: &ExperimentConfig, data: Option<&PathBuf>) -> Result<(data::DatasetSplit, SensorModel, CloudModel)> {
    let split = match data {
        Some(path) => data::load_split(path, Some(cfg.dataset.data.n_sensors))?,
        None => data::build_split(
            cfg.seed,
            cfg.dataset.train,
            cfg.dataset.test,
            &cfg.dataset.data,
        )?,
    };
    let (mut sensors, mut cloud) = harness::init_models(cfg);
    let history = env::pretrain(&mut sensors, &mut cloud, &split, &cfg.pretrain, cfg.seed)?;
    eprintln!(
        "pretrained: {} epochs, test accuracy {:.4}",
        history.epochs.len(),
        history.final_test_accuracy()
    );
    Ok((split, sensors, cloud))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset { command } => match command {
            DatasetCommand::Generate {
                seed,
                out,
                train,
                test,
            } => {
                let split = data::build_split(seed, train, test, &DataConfig::default())?;
                data::save_split(&split, &out)?;
                println!("wrote {} ({} train, {} test)", out.display(), train, test);
                Ok(())
            }
            DatasetCommand::Inspect { path } => {
                let split = data::load_split(&path, None)?;
                println!(
                    "sensors: {}  image: {}x{}  seed: {}",
                    split.config.n_sensors,
                    split.config.image_size,
                    split.config.image_size,
                    split.seed
                );
                for (name, scenes) in [("train", &split.train), ("test", &split.test)] {
                    let hist = data::class_histogram(scenes);
                    let detail: Vec<String> = hist
                        .iter()
                        .enumerate()
                        .map(|(c, n)| format!("{}={}", class_name(c as u8), n))
                        .collect();
                    println!("{name}: {} scenes ({})", scenes.len(), detail.join(", "));
                }
                Ok(())
            }
        },
        Command::Env { command } => match command {
            EnvCommand::Pretrain { data, config } => {
                let cfg = config.load()?;
                let (_, sensors, cloud) = pretrained_env(&cfg, data.as_ref())?;
                std::fs::create_dir_all(&cfg.out_dir)
                    .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
                checkpoint::save_network(&sensors.nets()[0], &cfg.out_dir.join("sensor.sdnc"))?;
                checkpoint::save_network(&cloud.net, &cfg.out_dir.join("cloud.sdnc"))?;
                println!("checkpoints written to {}", cfg.out_dir.display());
                Ok(())
            }
        },
        Command::Agent {
            command: AgentCommand::Train { config },
        }
        | Command::Eval {
            command: EvalCommand::Sensordrop { config },
        } => {
            let cfg = config.load()?;
            let out = harness::run_sensordrop(&cfg, Some(&cfg.out_dir.clone()))?;
            println!(
                "baseline:   accuracy {:.4}  overhead {:.4}",
                out.baseline.accuracy, out.baseline.comm_overhead
            );
            println!(
                "sensordrop: accuracy {:.4}  overhead {:.4}",
                out.sensordrop.accuracy, out.sensordrop.comm_overhead
            );
            println!("outputs in {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Eval { command } => {
            match command {
                EvalCommand::Baseline { config } => {
                    let cfg = config.load()?;
                    let (split, sensors, cloud) = pretrained_env(&cfg, None)?;
                    let rec = harness::run_baseline(&sensors, &cloud, &split.test, &cfg.rl.reward)?;
                    print_record(&rec);
                    harness::emit_report(&cfg.out_dir, &[rec], None)?;
                }
                EvalCommand::Random { rho, config } => {
                    let cfg = config.load()?;
                    let rho = rho.unwrap_or(cfg.baseline.rho);
                    if !(0.0..=1.0).contains(&rho) {
                        return Err(Error::Config(format!("rho must be in [0,1], got {rho}")));
                    }
                    let (split, sensors, cloud) = pretrained_env(&cfg, None)?;
                    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x726e64);
                    let rec = harness::run_random_drop(
                        &sensors, &cloud, &split.test, rho, &cfg.rl.reward, &mut rng,
                    )?;
                    print_record(&rec);
                    harness::emit_report(&cfg.out_dir, &[rec], None)?;
                }
                EvalCommand::Sensordrop { .. } => unreachable!("handled above"),
            }
            Ok(())
        }
        Command::Sweep {
            command: SweepCommand::K { values, config },
        } => {
            let cfg = config.load()?;
            let (split, sensors, cloud) = pretrained_env(&cfg, None)?;
            let results = harness::run_k_sweep(
                &cfg,
                &sensors,
                &cloud,
                &split.train,
                &split.test,
                &values,
            );
            let mut points = Vec::new();
            for result in results {
                match result {
                    Ok(p) => {
                        println!(
                            "K={}: accuracy {:.4}  overhead {:.4}",
                            p.k, p.accuracy, p.comm_overhead
                        );
                        points.push(p);
                    }
                    Err((k, e)) => eprintln!("K={k} failed: {e}"),
                }
            }
            std::fs::create_dir_all(&cfg.out_dir)
                .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
            harness::write_sweep_csv(&cfg.out_dir.join("sweep.csv"), &points)?;
            Ok(())
        }
        Command::Report { run } => {
            let eval = run.join("eval.csv");
            if !eval.exists() {
                return Err(Error::Config(format!(
                    "{} has no eval.csv; run `eval sensordrop` first",
                    run.display()
                )));
            }
            let text = std::fs::read_to_string(&eval)
                .map_err(|e| Error::io(eval.display().to_string(), e))?;
            let mut records = Vec::new();
            for line in text.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() == 5 {
                    records.push(harness::ExperimentRecord {
                        method: f[0].to_string(),
                        accuracy: f[1].parse().map_err(|_| Error::Format(line.into()))?,
                        comm_overhead: f[2].parse().map_err(|_| Error::Format(line.into()))?,
                        mean_reward_raw: f[3].parse().map_err(|_| Error::Format(line.into()))?,
                        mean_reward_normalized: f[4]
                            .parse()
                            .map_err(|_| Error::Format(line.into()))?,
                    });
                }
            }
            harness::emit_report(&run, &records, None)?;
            println!("report refreshed in {}", run.display());
            Ok(())
        }
    }
}

fn print_record(rec: &harness::ExperimentRecord) {
    println!(
        "{}: accuracy {:.4}  overhead {:.4}  reward {:.4} (normalized {:.4})",
        rec.method, rec.accuracy, rec.comm_overhead, rec.mean_reward_raw, rec.mean_reward_normalized
    );
}
