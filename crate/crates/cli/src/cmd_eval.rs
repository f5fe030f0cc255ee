use crate::util;
use anyhow::{Context, Result};
use clap::Args;
use crossway_core::checkpoint::{policy_digest, Checkpoint};
use crossway_core::dynamics::Action;
use crossway_core::env::{Env, ScenarioSpec, SimParams};
use crossway_core::harness::{reports_to_csv, sweep, EvalOptions, format_table};
use crossway_core::nn::{softmax, Mlp};
use crossway_core::ppo::greedy_action;
use crossway_core::road_net::{build_intersection, RoadNetwork};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    pub checkpoint: PathBuf,
    /// Run configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Surrounding-vehicle counts to sweep.
    #[arg(long = "n-sv", num_args = 1.., default_values_t = [0u32, 1, 2, 3, 4, 5, 6])]
    pub n_sv: Vec<u32>,
    /// Episodes per sweep cell.
    #[arg(long, default_value_t = 200)]
    pub episodes: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads per cell; results are identical for any value.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Sample actions from the policy instead of taking the argmax.
    #[arg(long)]
    pub stochastic: bool,
    /// Report CSV path; defaults to <output root>/eval/report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record this many greedy episodes per sweep cell as replay logs.
    #[arg(long, default_value_t = 0)]
    pub record: u32,
}

#[allow(clippy::too_many_arguments)]
fn record_episodes(
    net: &Arc<RoadNetwork>,
    params: &SimParams,
    digest: &str,
    actor: &Mlp,
    n_sv: u32,
    base_seed: u64,
    count: u32,
    dir: &Path,
) -> Result<()> {
    for i in 0..count {
        let mut env = Env::new(net.clone(), params.clone(), digest.to_string());
        env.set_recording(true);
        let mut obs = env
            .reset_with_seed(ScenarioSpec::exact(n_sv), base_seed + i as u64)?
            .flatten();
        loop {
            let probs = softmax(&actor.forward(&obs).output);
            let action = Action::from_index(greedy_action(&probs)).expect("valid action index");
            let out = env.step(action)?;
            obs = out.obs.flatten();
            if out.outcome.is_terminal() {
                break;
            }
        }
        let log = env.take_replay().expect("recording was enabled");
        let path = dir.join(format!("replay_nsv{n_sv}_{i}.jsonl"));
        let mut buf = Vec::new();
        log.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
    }
    Ok(())
}

pub fn run(args: EvalArgs) -> Result<()> {
    let cfg = util::load_config(args.config.as_deref(), &args.sets)?;
    let ck = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let net = Arc::new(build_intersection(&cfg.road)?);
    let params = cfg.sim_params();

    let opts = EvalOptions {
        episodes: args.episodes,
        seed: args.seed,
        jobs: args.jobs,
        stochastic: args.stochastic,
    };
    let reports = sweep(&net, &params, &ck.actor, &args.n_sv, &opts)?;

    println!(
        "policy {} (episode {}, stage {})",
        &policy_digest(&ck.actor)[..12],
        ck.episode,
        ck.stage + 1
    );
    print!("{}", format_table(&reports));

    let out = args
        .out
        .unwrap_or_else(|| util::output_root().join("eval").join("report.csv"));
    if let Some(parent) = out.parent() {
        util::ensure_dir(parent)?;
    }
    std::fs::write(&out, reports_to_csv(&reports))?;
    println!("report written to {}", out.display());

    if args.record > 0 {
        let dir = out.parent().unwrap_or(Path::new(".")).join("replays");
        util::ensure_dir(&dir)?;
        for &n_sv in &args.n_sv {
            let base = args.seed + n_sv as u64 * crossway_core::harness::SWEEP_CELL_SEED_STRIDE;
            record_episodes(&net, &params, &cfg.digest(), &ck.actor, n_sv, base, args.record, &dir)?;
        }
        println!("replays written to {}", dir.display());
    }
    Ok(())
}
