use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use navworld_model::{ModelConfig, NavModel};
use navworld_numerics::checkpoint;
use navworld_runtime::bundle::{checkpoint_path, load_bundle};
use navworld_runtime::dump::write_dump;
use navworld_runtime::plot::plot_dump;
use navworld_runtime::{evaluate, random_baseline, rollout, speed_report, RolloutConfig, RuntimeError, SfsSchedule};
use navworld_sim::generate_episode;
use navworld_sim::store::{read_episodes, write_store};
use navworld_train::{episode_config, generate_episodes, Dataset, Stage, TrainConfig, Trainer, Variant};

#[derive(Parser)]
#[command(name = "navworld", about = "Train and evaluate the navigation world model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert episodes into an episode store.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model preset whose resolution and history the episodes use.
        #[arg(long, default_value = "small")]
        model: String,
        /// Skip the rendered frame blob (frames can always be re-rendered).
        #[arg(long)]
        no_frames: bool,
    },
    /// Run one training stage.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        variant: Variant,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to start from (required for stages 1b and 2 in the
        /// usual recipe).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Model preset when starting from scratch.
        #[arg(long, default_value = "small")]
        model: String,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Closed-loop evaluation over an episode store.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long = "sfs-k", default_value_t = 10)]
        sfs_k: usize,
        /// Never call the video generator.
        #[arg(long)]
        no_generator: bool,
        /// Evaluate uniformly random actions instead of the model.
        #[arg(long)]
        random: bool,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        lanes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out one generated episode and dump its trajectory and frames.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode seed.
        #[arg(long)]
        episode: u64,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long = "sfs-k", default_value_t = 10)]
        sfs_k: usize,
        /// Actions executed per planning call.
        #[arg(long, default_value_t = 1)]
        execute_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a rollout dump to PNG files.
    Plot {
        #[arg(long)]
        dump: PathBuf,
        /// Output directory; defaults to the dump directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall time and SR at several SFS intervals.
    Speed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ks: Vec<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Timings per rollout; the fastest is kept.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

type Result<T> = std::result::Result<T, RuntimeError>;

fn preset(name: &str) -> Result<ModelConfig> {
    match name {
        "desk" => Ok(ModelConfig::desk()),
        "small" => Ok(ModelConfig::small()),
        "micro" => Ok(ModelConfig::micro()),
        _ => Err(RuntimeError::InvalidArgument(format!(
            "unknown model preset `{name}` (expected desk, small or micro)"
        ))),
    }
}

fn variant_of(explicit: Option<Variant>, recorded: Option<Variant>) -> Result<Variant> {
    explicit
        .or(recorded)
        .ok_or_else(|| RuntimeError::InvalidArgument("the checkpoint records no variant; pass --variant".into()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            count,
            seed,
            model,
            no_frames,
        } => {
            let cfg = episode_config(&preset(&model)?);
            let episodes = generate_episodes(seed, count, &cfg)?;
            write_store(&out, &episodes, !no_frames)?;
            println!("wrote {} episodes to {}", episodes.len(), out.display());
        }
        Command::Train {
            stage,
            variant,
            config,
            data,
            out,
            init,
            model,
            steps,
        } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
                None => TrainConfig::default(),
            };
            cfg.stage = stage;
            cfg.variant = variant;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            let (model, mut store) = match &init {
                Some(p) => {
                    let b = load_bundle(p)?;
                    (b.model, b.store)
                }
                None => NavModel::build::<f32>(&preset(&model)?, cfg.seed)?,
            };
            let episodes = read_episodes(&data)?;
            if episodes.is_empty() {
                return Err(RuntimeError::InvalidArgument(format!("no episodes in {}", data.display())));
            }
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("train_config.json"), &cfg)?;
            let mut log = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
            let mut trainer = Trainer::new(cfg)?;
            let logs = trainer.run(&model, &mut store, &Dataset::new(episodes), Some(&mut log), Some(&out))?;
            log.flush()?;
            if let Some(l) = logs.last() {
                println!("stage {stage} {variant}: {} steps, final total {:.5}", logs.len(), l.total);
            }
            println!("checkpoint: {}", out.join("last.ckpt").display());
        }
        Command::Eval {
            checkpoint,
            data,
            variant,
            sfs_k,
            no_generator,
            random,
            episodes,
            seed,
            lanes,
            out,
        } => {
            let b = load_bundle(&checkpoint)?;
            let variant = variant_of(variant, b.variant)?;
            let mut eps = read_episodes(&data)?;
            if let Some(n) = episodes {
                eps.truncate(n);
            }
            let mut cfg = RolloutConfig::new(variant, SfsSchedule::new(sfs_k, b.model.cfg.horizon)?);
            cfg.generator = !no_generator;
            cfg.seed = seed;
            let ev = if random {
                random_baseline(&eps, &cfg)?
            } else {
                evaluate(&b.model, &b.store, &eps, &cfg, lanes)?
            };
            let m = ev.metrics;
            println!(
                "{} episodes: SR {:.3}  OS {:.3}  SPL {:.3}  NE {:.3}  generator calls {}",
                m.episodes,
                m.sr,
                m.os,
                m.spl,
                m.ne,
                ev.generator_calls()
            );
            write_json(&out, &ev)?;
        }
        Command::Rollout {
            checkpoint,
            episode,
            dump,
            variant,
            sfs_k,
            execute_steps,
            seed,
        } => {
            let b = load_bundle(&checkpoint)?;
            let variant = variant_of(variant, b.variant)?;
            let ep = generate_episode(episode, &episode_config(&b.model.cfg))?;
            let mut cfg = RolloutConfig::new(variant, SfsSchedule::new(sfs_k, b.model.cfg.horizon)?);
            cfg.execute_steps = execute_steps;
            cfg.seed = seed;
            cfg.record_frames = true;
            let r = rollout(&b.model, &b.store, &ep, &cfg)?;
            write_dump(&dump, &ep, &r)?;
            println!(
                "episode {episode}: {} steps, stop {:?}, {} generator calls; dump in {}",
                r.steps.len(),
                r.stop,
                r.generator_calls,
                dump.display()
            );
        }
        Command::Plot { dump, out } => {
            let out = out.unwrap_or_else(|| dump.clone());
            for p in plot_dump(&dump, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Speed {
            checkpoint,
            data,
            ks,
            episodes,
            repeats,
            out,
        } => {
            let header = checkpoint::read_header(&checkpoint_path(&checkpoint))?;
            let b = load_bundle(&checkpoint)?;
            let variant = variant_of(None, b.variant).unwrap_or(Variant::Diffusion);
            let mut eps = read_episodes(&data)?;
            if let Some(n) = episodes {
                eps.truncate(n);
            }
            let cfg = RolloutConfig::new(variant, SfsSchedule::new(1, b.model.cfg.horizon)?);
            let report = speed_report(&b.model, &b.store, &eps, &ks, &cfg, repeats)?;
            print!("{}", report.table());
            write_json(
                &out,
                &serde_json::json!({ "checkpoint_step": header.global_step, "variant": variant, "report": report }),
            )?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
