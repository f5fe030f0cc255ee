use crate::util;
use anyhow::{bail, Context, Result};
use clap::Args;
use crossway_core::checkpoint::Checkpoint;
use crossway_core::curriculum::{train, TrainMode, TrainOptions};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

pub const TRAIN_CSV_HEADER: &str = "episode,stage,epsilon,n_sv,return,length,outcome,update_index,policy_loss,value_loss,clip_fraction,wall_time_s";

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set ppo.epochs=10. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Master seed; overrides run.seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to <output root>/train.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable the curriculum: one stage, dense traffic, constant clip range.
    #[arg(long, requires = "fixed_epsilon")]
    pub no_curriculum: bool,
    /// Constant clip range for --no-curriculum runs.
    #[arg(long)]
    pub fixed_epsilon: Option<f64>,
    /// Resume from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Pause at the first update boundary at or past this episode.
    #[arg(long)]
    pub stop_at_episode: Option<u64>,
    /// Record per-update wall time (makes the CSV non-reproducible).
    #[arg(long)]
    pub wall_time: bool,
    /// Worker-thread cap for parallel sections. Training rollouts are
    /// on-policy and run sequentially, so outputs are identical for any value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut cfg = util::load_config(args.config.as_deref(), &args.sets)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    if args.fixed_epsilon.is_some() && !args.no_curriculum {
        bail!("--fixed-epsilon only makes sense with --no-curriculum");
    }
    let mode = match args.fixed_epsilon {
        Some(eps) => {
            if !(0.0 < eps && eps < 1.0) {
                bail!("fixed clip range {eps} outside (0, 1)");
            }
            TrainMode::FixedEpsilon(eps)
        }
        None => TrainMode::Curriculum,
    };

    let out_dir = args
        .out
        .unwrap_or_else(|| util::output_root().join("train"));
    util::ensure_dir(&out_dir)?;

    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let resuming = resume.is_some();

    std::fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;
    let manifest = serde_json::json!({
        "config_digest": cfg.digest(),
        "seed": cfg.run.seed,
        "mode": match mode {
            TrainMode::Curriculum => "curriculum".to_string(),
            TrainMode::FixedEpsilon(eps) => format!("fixed_epsilon={eps}"),
        },
        "total_episodes": cfg.curriculum.total_episodes,
        "overrides": args.sets,
        "resumed": resuming,
    });
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    let csv_path = out_dir.join("training.csv");
    let mut csv = if resuming && csv_path.exists() {
        BufWriter::new(File::options().append(true).open(&csv_path)?)
    } else {
        let mut w = BufWriter::new(File::create(&csv_path)?);
        writeln!(w, "{TRAIN_CSV_HEADER}")?;
        w
    };

    let options = TrainOptions {
        mode,
        stop_at_episode: args.stop_at_episode,
        record_wall_time: args.wall_time,
    };
    let last = train(&cfg, &options, &out_dir, resume, |r| {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.stage,
            r.epsilon,
            r.n_sv,
            r.ret,
            r.length,
            r.outcome.as_str(),
            r.update_index,
            r.policy_loss,
            r.value_loss,
            r.clip_fraction,
            r.wall_time_s,
        )
        .map_err(crossway_core::Error::from)
    })?;
    csv.flush()?;

    println!(
        "trained through episode {} ({} updates); checkpoints in {}",
        last.episode,
        last.update_index,
        out_dir.display()
    );
    Ok(())
}
