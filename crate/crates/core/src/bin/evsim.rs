//! Command-line front end: training, evaluation, the five-variant
//! comparison, trace export and observation dumps.
//!
//! All output lands inside a fresh run directory under the output base
//! (`--out` flag, `EVSIM_OUT` environment variable, or `output_dir` from the
//! configuration, in that order); existing run directories are never
//! overwritten.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use evsim_core::agent::DqnAgent;
use evsim_core::checkpoint;
use evsim_core::config::RunConfig;
use evsim_core::experiment::{
    self, evaluate, render_metrics_table, run_episode, train, write_metrics_csv_header,
    write_metrics_csv_row, write_trace, AggregateMetrics, Episode, EvController, TrainingCurves,
    Variant, ALL_VARIANTS,
};
use evsim_core::net::QNetwork;
use evsim_core::rng::derive_indexed_seed;

#[derive(Parser)]
#[command(
    name = "evsim",
    about = "Highway emergency-vehicle simulator: DQN training, rule-based avoidance, and the five-method comparison harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learner variant; writes checkpoints, the training trace and
    /// learning curves into the run directory
    Train {
        /// One of: sc-dqn, sc-dqn-as, sc-dqn-as-coop
        #[arg(long)]
        variant: String,
        /// TOML run configuration; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output base directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directory name (defaults to a timestamped name)
        #[arg(long)]
        name: Option<String>,
        /// Master seed override
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a variant greedily over seeded episodes
    Eval {
        #[arg(long)]
        variant: String,
        /// Checkpoint path; required for learner variants
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation episodes
        #[arg(long)]
        episodes: Option<u64>,
        /// Base seed; episode i uses seed + i
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured traffic inflow (vehicles/second)
        #[arg(long)]
        flow: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Run all five variants at inflows 0.5 and 1.0 and emit a summary table
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// Reuse pre-trained checkpoints named <variant>.ckpt from this
        /// directory instead of training in-run
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Export the full time-distance trace of one seeded episode
    Trace {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the EV's labeled observation for each step of a seeded episode
    DumpObs {
        #[arg(long, default_value = "sc-dqn-as")]
        variant: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum number of steps to print
        #[arg(long, default_value_t = 25)]
        steps: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_path(p).map_err(|e| anyhow!("{e}")),
        None => Ok(RunConfig::defaults()),
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| {
        anyhow!(
            "unknown variant '{s}'; expected one of baseline, sc-dqn, as, sc-dqn-as, sc-dqn-as-coop"
        )
    })
}

/// Create a fresh run directory under the resolved output base. Never
/// reuses an existing directory: a named run that already exists is an
/// error, and unnamed runs get a unique timestamped name.
fn make_run_dir(
    cfg: &RunConfig,
    out: &Option<PathBuf>,
    name: &Option<String>,
    kind: &str,
) -> Result<PathBuf> {
    let base = out
        .clone()
        .or_else(|| std::env::var_os("EVSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&base)
        .with_context(|| format!("cannot create output base {}", base.display()))?;
    match name {
        Some(n) => {
            let dir = base.join(n);
            std::fs::create_dir(&dir).with_context(|| {
                format!(
                    "run directory {} already exists or cannot be created",
                    dir.display()
                )
            })?;
            Ok(dir)
        }
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_millis();
            for attempt in 0..1000 {
                let dir = base.join(format!("{kind}-{stamp}-{attempt:03}"));
                match std::fs::create_dir(&dir) {
                    Ok(()) => return Ok(dir),
                    Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                    Err(e) => {
                        return Err(e).with_context(|| format!("cannot create {}", dir.display()))
                    }
                }
            }
            bail!(
                "could not find a free run directory name under {}",
                base.display()
            )
        }
    }
}

fn load_network(
    variant: Variant,
    checkpoint: &Option<PathBuf>,
    cfg: &RunConfig,
) -> Result<Option<QNetwork>> {
    if !variant.uses_learner() {
        return Ok(None);
    }
    let path = checkpoint.as_ref().ok_or_else(|| {
        anyhow!(
            "missing --checkpoint: variant '{}' evaluates a trained network",
            variant
        )
    })?;
    let agent = checkpoint::load(path, cfg.training).map_err(|e| anyhow!("{e}"))?;
    Ok(Some(agent.selection_net().clone()))
}

fn write_episode_rows(
    path: &Path,
    episodes: &[experiment::EpisodeMetrics],
    seed_base: u64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "seed,outcome,travel_time_s,ev_lane_changes,agent_steps,reward_sum"
    )?;
    for (i, e) in episodes.iter().enumerate() {
        let outcome = match e.outcome {
            experiment::EpisodeOutcome::Completed => "completed",
            experiment::EpisodeOutcome::Collided => "collided",
            experiment::EpisodeOutcome::TimedOut => "timed_out",
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            seed_base + i as u64,
            outcome,
            e.travel_time_s.map(|t| t.to_string()).unwrap_or_default(),
            e.ev_lane_changes,
            e.agent_steps,
            e.reward_sum
        )?;
    }
    Ok(())
}

fn write_learning_curves(dir: &Path, curves: &TrainingCurves) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("loss_curve.csv"))?);
    writeln!(w, "env_step,loss")?;
    for (step, loss) in &curves.losses {
        writeln!(w, "{step},{loss}")?;
    }
    let mut w = BufWriter::new(File::create(dir.join("episodes.csv"))?);
    writeln!(w, "episode,end_env_step,travel_time_s,rolling_mean_travel_s")?;
    let window = 50;
    let mut recent: Vec<f64> = Vec::new();
    for (episode, end_step, travel) in &curves.episode_travel {
        if let Some(t) = travel {
            recent.push(*t);
            if recent.len() > window {
                recent.remove(0);
            }
        }
        let rolling = if recent.is_empty() {
            String::new()
        } else {
            (recent.iter().sum::<f64>() / recent.len() as f64).to_string()
        };
        writeln!(
            w,
            "{},{},{},{}",
            episode,
            end_step,
            travel.map(|t| t.to_string()).unwrap_or_default(),
            rolling
        )?;
    }
    Ok(())
}

fn write_metrics(dir: &Path, rows: &[AggregateMetrics], stem: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?);
    write_metrics_csv_header(&mut w)?;
    for row in rows {
        write_metrics_csv_row(&mut w, row)?;
    }
    std::fs::write(dir.join(format!("{stem}.txt")), render_metrics_table(rows))?;
    Ok(())
}

fn cmd_train(
    variant: String,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
    seed: Option<u64>,
) -> Result<()> {
    let variant = parse_variant(&variant)?;
    if !variant.uses_learner() {
        bail!("variant '{variant}' has no learner to train");
    }
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = make_run_dir(&cfg, &out, &name, "train")?;
    println!(
        "training {variant} for {} steps into {}",
        cfg.training.max_training_steps,
        dir.display()
    );
    let mut trace = BufWriter::new(File::create(dir.join("train_trace.csv"))?);
    let period = (cfg.training.max_training_steps / 4).max(1);
    let ckpt_dir = dir.clone();
    let mut save_periodic = move |agent: &DqnAgent| {
        let path = ckpt_dir.join(format!("checkpoint_{:07}.ckpt", agent.env_steps));
        if let Err(e) = checkpoint::save(agent, &path) {
            eprintln!("warning: periodic checkpoint failed: {e}");
        }
    };
    let (agent, curves) = train(
        variant,
        &cfg,
        cfg.seed,
        Some(&mut trace),
        Some((period, &mut save_periodic)),
    );
    trace.flush()?;
    checkpoint::save(&agent, &dir.join("checkpoint.ckpt")).map_err(|e| anyhow!("{e}"))?;
    write_learning_curves(&dir, &curves)?;
    let completed: Vec<f64> = curves
        .episode_travel
        .iter()
        .filter_map(|(_, _, t)| *t)
        .collect();
    let tail = &completed[completed.len().saturating_sub(50)..];
    if !tail.is_empty() {
        println!(
            "final rolling mean travel time: {:.1} s over last {} completed episodes",
            tail.iter().sum::<f64>() / tail.len() as f64,
            tail.len()
        );
    }
    println!("checkpoint: {}", dir.join("checkpoint.ckpt").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    variant: String,
    checkpoint: Option<PathBuf>,
    episodes: Option<u64>,
    seed: Option<u64>,
    flow: Option<f64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
) -> Result<()> {
    let variant = parse_variant(&variant)?;
    let mut cfg = load_config(&config)?;
    if let Some(f) = flow {
        cfg.flow.arrival_rate = f;
        cfg.validate().map_err(|e| anyhow!("{e}"))?;
    }
    let net = load_network(variant, &checkpoint, &cfg)?;
    let episodes = episodes.unwrap_or(cfg.experiment.eval_episodes);
    let seed_base = seed.unwrap_or(cfg.seed);
    let dir = make_run_dir(&cfg, &out, &name, "eval")?;
    let (agg, eps) = evaluate(variant, &cfg, net.as_ref(), episodes, seed_base);
    write_metrics(&dir, std::slice::from_ref(&agg), "metrics")?;
    write_episode_rows(&dir.join("episodes.csv"), &eps, seed_base)?;
    print!("{}", render_metrics_table(std::slice::from_ref(&agg)));
    println!("written to {}", dir.display());
    Ok(())
}

fn cmd_compare(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
    checkpoint_dir: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(&config)?;
    let dir = make_run_dir(&cfg, &out, &name, "compare")?;
    let mut nets: Vec<(Variant, Option<QNetwork>)> = Vec::new();
    for variant in ALL_VARIANTS {
        if !variant.uses_learner() {
            nets.push((variant, None));
            continue;
        }
        let reuse = checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}.ckpt", variant)))
            .filter(|p| p.exists());
        let net = match reuse {
            Some(path) => {
                println!("loading {variant} checkpoint from {}", path.display());
                let agent = checkpoint::load(&path, cfg.training).map_err(|e| anyhow!("{e}"))?;
                agent.selection_net().clone()
            }
            None => {
                println!(
                    "training {variant} ({} steps)...",
                    cfg.training.max_training_steps
                );
                let (agent, _) = train(variant, &cfg, cfg.seed, None, None);
                checkpoint::save(&agent, &dir.join(format!("{variant}.ckpt")))
                    .map_err(|e| anyhow!("{e}"))?;
                agent.selection_net().clone()
            }
        };
        nets.push((variant, Some(net)));
    }

    let mut rows = Vec::new();
    for (cell, flow) in [0.5, 1.0].iter().enumerate() {
        for (i, (variant, net)) in nets.iter().enumerate() {
            let mut run_cfg = cfg.clone();
            run_cfg.flow.arrival_rate = *flow;
            let seed_base = derive_indexed_seed(
                cfg.seed,
                "compare-eval",
                (cell * ALL_VARIANTS.len() + i) as u64,
            );
            let (agg, _) = evaluate(
                *variant,
                &run_cfg,
                net.as_ref(),
                cfg.experiment.eval_episodes,
                seed_base,
            );
            rows.push(agg);
        }
    }
    write_metrics(&dir, &rows, "compare")?;
    print!("{}", render_metrics_table(&rows));
    println!("written to {}", dir.display());
    Ok(())
}

fn cmd_trace(
    variant: String,
    seed: Option<u64>,
    checkpoint: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    name: Option<String>,
) -> Result<()> {
    let variant = parse_variant(&variant)?;
    let cfg = load_config(&config)?;
    let net = load_network(variant, &checkpoint, &cfg)?;
    let seed = seed.unwrap_or(cfg.seed);
    let dir = make_run_dir(&cfg, &out, &name, "trace")?;
    let metrics = run_episode(variant, &cfg, seed, net.as_ref(), true);
    let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
    write_trace(&metrics.trace, &mut w)?;
    w.flush()?;
    let outcome = match metrics.outcome {
        experiment::EpisodeOutcome::Completed => {
            format!("completed in {:.1} s", metrics.travel_time_s.unwrap())
        }
        experiment::EpisodeOutcome::Collided => "collided".to_string(),
        experiment::EpisodeOutcome::TimedOut => "timed out".to_string(),
    };
    println!(
        "episode {outcome}; {} lane changes; trace: {}",
        metrics.ev_lane_changes,
        dir.join("trace.csv").display()
    );
    Ok(())
}

fn cmd_dump_obs(
    variant: String,
    seed: Option<u64>,
    steps: u64,
    config: Option<PathBuf>,
) -> Result<()> {
    let variant = parse_variant(&variant)?;
    let cfg = load_config(&config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut episode = Episode::new(variant, &cfg, seed, false);
    // A zero network keeps the EV on a hold-speed policy, which makes the
    // printed observations easy to follow.
    let net = QNetwork::zeros(&evsim_core::net::Q_LAYER_SIZES);
    let mut controller = if variant.uses_learner() {
        EvController::GreedyNet(&net)
    } else {
        EvController::CarFollowing
    };
    for step in 0..steps {
        if episode.done.is_some() {
            break;
        }
        let report = episode.step(&mut controller);
        match report.obs {
            Some(obs) => {
                println!("step {step} (executed {}):", report.executed.letter());
                println!("{}", evsim_core::perception::decode(&obs));
            }
            // Non-learner wiring has no agent observation; print the
            // encoding the agent would have seen (unless the EV just left).
            None if episode.done.is_none() => {
                let obs = evsim_core::perception::observe(
                    &episode.world,
                    episode.ev_id,
                    &cfg.perception,
                    0.0,
                );
                println!("step {step} (car-following):");
                println!("{}", evsim_core::perception::decode(&obs));
            }
            None => {}
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            variant,
            config,
            out,
            name,
            seed,
        } => cmd_train(variant, config, out, name, seed),
        Command::Eval {
            variant,
            checkpoint,
            episodes,
            seed,
            flow,
            config,
            out,
            name,
        } => cmd_eval(variant, checkpoint, episodes, seed, flow, config, out, name),
        Command::Compare {
            config,
            out,
            name,
            checkpoint_dir,
        } => cmd_compare(config, out, name, checkpoint_dir),
        Command::Trace {
            variant,
            seed,
            checkpoint,
            config,
            out,
            name,
        } => cmd_trace(variant, seed, checkpoint, config, out, name),
        Command::DumpObs {
            variant,
            seed,
            steps,
            config,
        } => cmd_dump_obs(variant, seed, steps, config),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
