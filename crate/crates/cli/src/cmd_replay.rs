use crate::svg::render_scene;
use crate::util;
use anyhow::{Context, Result};
use clap::Args;
use crossway_core::config::RunConfig;
use crossway_core::dynamics::Action;
use crossway_core::replay::ReplayLog;
use crossway_core::road_net::build_intersection;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

#[derive(Args)]
pub struct ReplayArgs {
    /// Replay log (JSON lines) written during training or evaluation.
    pub log: PathBuf,
    /// Render one SVG frame per sampled step into this directory.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    /// Step stride between rendered frames.
    #[arg(long, default_value_t = 15)]
    pub every: usize,
    /// Road geometry config used for rendering; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: ReplayArgs) -> Result<()> {
    let file = File::open(&args.log).with_context(|| format!("cannot open {}", args.log.display()))?;
    let log = match ReplayLog::read_from(BufReader::new(file))? {
        Some(log) => log,
        None => {
            println!("{}: empty replay log", args.log.display());
            return Ok(());
        }
    };

    println!(
        "episode seed {}, {}..={} surrounding vehicles, config {}",
        log.header.episode_seed,
        log.header.n_sv_min,
        log.header.n_sv_max,
        &log.header.config_digest[..log.header.config_digest.len().min(12)]
    );
    let mut total = 0.0;
    for step in &log.steps {
        total += step.reward.total;
        let ego = &step.vehicles[0];
        let action = Action::from_index(step.action)
            .map(|a| format!("{a:?}"))
            .unwrap_or_else(|| format!("action {}", step.action));
        println!(
            "t={:<4} {:<10} ego=({:7.2},{:7.2}) psi={:5.2} v={:4.1}  r={:7.3}  {}",
            step.t,
            action,
            ego.x,
            ego.y,
            ego.psi,
            ego.v,
            step.reward.total,
            step.outcome.as_str(),
        );
    }
    if let Some(last) = log.steps.last() {
        println!("outcome: {} after {} steps, return {total:.3}", last.outcome.as_str(), log.steps.len());
    }

    if let Some(dir) = &args.render_dir {
        util::ensure_dir(dir)?;
        let cfg = match &args.config {
            Some(p) => RunConfig::load(p, &[])?,
            None => RunConfig::default(),
        };
        let net = build_intersection(&cfg.road)?;
        let stride = args.every.max(1);
        let n = log.steps.len();
        let mut frames = 0;
        for (i, step) in log.steps.iter().enumerate() {
            if i % stride != 0 && i != n - 1 {
                continue;
            }
            let caption = format!("t={} {}", step.t, step.outcome.as_str());
            let svg = render_scene(&net, &step.vehicles, None, &caption);
            std::fs::write(dir.join(format!("frame_{:05}.svg", step.t)), svg)?;
            frames += 1;
        }
        println!("{frames} frames written to {}", dir.display());
    }
    Ok(())
}
