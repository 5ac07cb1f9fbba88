use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use dfgcn::ablate::{run_ablation, write_ablation_csv};
use dfgcn::checkpoint::Checkpoint;
use dfgcn::config::ConfigArgs;
use dfgcn::evaluate::{evaluate, write_confusion_csv, write_embeddings_csv, write_metrics_csv};
use dfgcn::oracle::{consistency_suite, pipeline_grad_check, rk4_equivalence, rk4_order};
use dfgcn::synthetic::{generate_synthetic, ModalityNoise, SyntheticSpec};
use dfgcn::train::train_with_observer;
use dfgcn::{dataset, HarnessError};
use dfgcn_core::model::Ablation;

#[derive(Parser)]
#[command(name = "dfgcn", version, about = "Dynamic-fusion graph ODE emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Separable,
    Hard,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "separable")]
        preset: Preset,
        /// TOML synthetic spec; replaces the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        conversations: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        stickiness: Option<f64>,
    },
    /// Train on a dataset; writes the best checkpoint, history and config.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint; writes metrics, confusion grid and embeddings.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
        #[arg(long, default_value = "eval")]
        split: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of the full pipeline gradient.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        probes: usize,
        #[arg(long, default_value_t = 4)]
        utterances: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// RK4 vs closed form, RK4 order and initial-condition consistency.
    OdeOracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        systems: usize,
        #[arg(long, default_value_t = 20)]
        order_systems: usize,
        #[arg(long, default_value_t = 50)]
        consistency_instances: usize,
        #[arg(long, default_value_t = 8)]
        max_dim: usize,
    },
    /// Train all eight stage combinations over a seed set.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Generate {
            seed,
            out,
            preset,
            spec,
            conversations,
            separation,
            noise,
            stickiness,
        } => {
            let mut s = match (spec, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                (None, Preset::Separable) => SyntheticSpec::separable(),
                (None, Preset::Hard) => SyntheticSpec::hard(),
            };
            if let Some(n) = conversations {
                s.num_conversations = n;
            }
            if let Some(v) = separation {
                s.cluster_separation = v;
            }
            if let Some(v) = noise {
                s.modality_noise = ModalityNoise::uniform(v);
            }
            if let Some(v) = stickiness {
                s.stickiness = v;
            }
            let data = generate_synthetic(&s, seed)?;
            dataset::save(&out, &data)?;
            let utterances: usize = data.iter().map(|c| c.len()).sum();
            println!("wrote {} conversations ({utterances} utterances) to {}", data.len(), out.display());
        }
        Command::Train {
            seed,
            data,
            out_dir,
            config,
        } => {
            let cfg = config.resolve(Some(seed))?;
            let data = dataset::load(&data)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let outcome = train_with_observer(&cfg, &data, |e| {
                println!(
                    "epoch {:3}  loss {:.5}  train acc {:.4}  val acc {:.4}  val wf1 {:.4}",
                    e.epoch, e.train_loss, e.train.acc, e.val.acc, e.val.wf1
                );
            })?;
            outcome.checkpoint.save(&out_dir.join("model.ckpt"))?;
            outcome.history.write_csv(create(&out_dir.join("history.csv"))?)?;
            std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;
            let best = outcome.history.best();
            println!(
                "best epoch {} (val acc {:.4}, val wf1 {:.4}){}; wrote {}",
                best.epoch,
                best.val.acc,
                best.val.wf1,
                if outcome.history.stopped_early { ", stopped early" } else { "" },
                out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            out_dir,
            run_id,
            split,
            config,
        } => {
            let cfg = config.resolve(None)?;
            let ck = Checkpoint::load(&checkpoint)?;
            ck.check_compatible(&cfg)?;
            let data = dataset::load(&data)?;
            let refs: Vec<_> = data.iter().collect();
            let ev = evaluate(&cfg, &ck.store, &refs)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            write_embeddings_csv(create(&out_dir.join("embeddings.csv"))?, &ev.records)?;
            match &ev.metrics {
                Some(m) => {
                    write_metrics_csv(create(&out_dir.join("metrics.csv"))?, &run_id, &[(&split, m)])?;
                    write_confusion_csv(create(&out_dir.join("confusion.csv"))?, m)?;
                    println!("acc {:.4}  wa {:.4}  wf1 {:.4}", m.acc, m.wa, m.wf1);
                }
                None => println!("dataset is unlabeled; wrote embeddings only"),
            }
        }
        Command::GradCheck {
            seed,
            probes,
            utterances,
            eps,
            config,
        } => {
            let mut cfg = config.resolve(Some(seed))?;
            if config.hidden_dim.is_none() {
                cfg.hidden_dim = 8;
            }
            let report = pipeline_grad_check(&cfg, utterances, probes, eps)?;
            println!("loss {:.6}  probes {}  max relative error {:.3e}", report.loss, report.probes.len(), report.max_relative_error);
        }
        Command::OdeOracle {
            seed,
            systems,
            order_systems,
            consistency_instances,
            max_dim,
        } => {
            let eq = rk4_equivalence(systems, max_dim, seed)?;
            println!("rk4 vs closed form: {} systems, max abs error {:.3e}, {:.3}s", eq.systems, eq.max_error, eq.elapsed.as_secs_f64());
            let order = rk4_order(order_systems, max_dim, seed.wrapping_add(1))?;
            println!("rk4 order: error ratio for halved step in [{:.3}, {:.3}]", order.min(), order.max());
            let cons = consistency_suite(consistency_instances, max_dim, seed.wrapping_add(2))?;
            println!(
                "initial-condition consistency: {} instances, max deviation {:.3e}, min denominator {:.3}",
                cons.instances, cons.max_deviation, cons.min_denominator
            );
        }
        Command::Ablate {
            data,
            seeds,
            out,
            config,
        } => {
            if seeds.is_empty() {
                bail!("at least one seed is required");
            }
            let cfg = config.resolve(None)?;
            let data = dataset::load(&data)?;
            let rows = run_ablation(&cfg, &data, &Ablation::grid(), &seeds, |r| {
                println!("{:22} mean val acc {:.4}  mean val wf1 {:.4}", r.ablation.label(), r.mean_acc(), r.mean_wf1());
            })?;
            if let Some(path) = out {
                write_ablation_csv(create(&path)?, &rows)?;
            }
        }
    }
    Ok(())
}
