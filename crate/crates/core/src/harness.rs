//! Policy evaluation: success/collision/timeout/off-road rates over sweeps
//! of surrounding-vehicle counts, plus the training-curve smoothing filter.

use crate::dynamics::Action;
use crate::env::{Env, Outcome, ScenarioSpec, SimParams};
use crate::error::{Error, Result};
use crate::nn::{softmax, Mlp};
use crate::ppo::{greedy_action, sample_action};
use crate::road_net::RoadNetwork;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub n_sv: u32,
    pub episodes: u32,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub offroad_rate: f64,
    pub mean_return: f64,
    pub mean_time_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub episodes: u32,
    pub seed: u64,
    /// Worker threads; 1 runs fully sequentially. Results are identical
    /// either way (tallies are merged in episode order).
    pub jobs: usize,
    /// Sample from the policy instead of taking the argmax action.
    pub stochastic: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            episodes: 200,
            seed: 0,
            jobs: 1,
            stochastic: false,
        }
    }
}

/// Seed offset between sweep cells, decorrelating scenarios while keeping
/// the whole sweep reproducible.
pub const SWEEP_CELL_SEED_STRIDE: u64 = 1_000_000;

fn run_episode(
    net: &Arc<RoadNetwork>,
    params: &SimParams,
    actor: &Mlp,
    n_sv: u32,
    episode_seed: u64,
    stochastic: bool,
) -> Result<(Outcome, f64, f64)> {
    let mut env = Env::new(net.clone(), params.clone(), String::new());
    let mut obs = env
        .reset_with_seed(ScenarioSpec::exact(n_sv), episode_seed)?
        .flatten();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed_ac71_0a5e_1ec7);
    let mut ret = 0.0;
    loop {
        let probs = softmax(&actor.forward(&obs).output);
        let idx = if stochastic {
            sample_action(&probs, &mut rng)
        } else {
            greedy_action(&probs)
        };
        let out = env.step(Action::from_index(idx).expect("action index in range"))?;
        ret += out.reward.total;
        obs = out.obs.flatten();
        if out.outcome.is_terminal() {
            return Ok((out.outcome, ret, env.ctx().sim_time));
        }
    }
}

/// Evaluate a policy over fresh episodes with per-episode seeds
/// `seed, seed+1, ...`; deterministic for a fixed seed regardless of `jobs`.
pub fn evaluate(
    net: &Arc<RoadNetwork>,
    params: &SimParams,
    actor: &Mlp,
    n_sv: u32,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let run = |i: u32| run_episode(net, params, actor, n_sv, opts.seed + i as u64, opts.stochastic);
    let results: Vec<(Outcome, f64, f64)> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..opts.episodes).into_par_iter().map(run).collect::<Result<_>>())?
    } else {
        (0..opts.episodes).map(run).collect::<Result<_>>()?
    };

    let n = opts.episodes as f64;
    let count = |o: Outcome| results.iter().filter(|(r, _, _)| *r == o).count() as f64;
    Ok(EvalReport {
        n_sv,
        episodes: opts.episodes,
        success_rate: count(Outcome::Success) / n,
        collision_rate: count(Outcome::Collision) / n,
        timeout_rate: count(Outcome::Timeout) / n,
        offroad_rate: count(Outcome::OffRoad) / n,
        mean_return: results.iter().map(|(_, r, _)| r).sum::<f64>() / n,
        mean_time_s: results.iter().map(|(_, _, t)| t).sum::<f64>() / n,
        seed: opts.seed,
    })
}

/// Evaluate one cell per surrounding-vehicle count, offsetting the seed per
/// cell so scenarios are decorrelated.
pub fn sweep(
    net: &Arc<RoadNetwork>,
    params: &SimParams,
    actor: &Mlp,
    n_sv_list: &[u32],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    n_sv_list
        .iter()
        .map(|&n_sv| {
            let cell = EvalOptions {
                seed: opts.seed + n_sv as u64 * SWEEP_CELL_SEED_STRIDE,
                ..*opts
            };
            evaluate(net, params, actor, n_sv, &cell)
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str =
    "n_sv,episodes,succ,coll,timeout,offroad,mean_return,mean_time_s,seed";

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.n_sv,
            r.episodes,
            r.success_rate,
            r.collision_rate,
            r.timeout_rate,
            r.offroad_rate,
            r.mean_return,
            r.mean_time_s,
            r.seed
        ));
    }
    out
}

pub fn reports_from_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "bad report header: {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::InvalidArgument(format!("bad report row: {line}")));
            }
            let fl = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(e.to_string()));
            Ok(EvalReport {
                n_sv: f[0].parse().map_err(|_| Error::InvalidArgument(line.into()))?,
                episodes: f[1].parse().map_err(|_| Error::InvalidArgument(line.into()))?,
                success_rate: fl(f[2])?,
                collision_rate: fl(f[3])?,
                timeout_rate: fl(f[4])?,
                offroad_rate: fl(f[5])?,
                mean_return: fl(f[6])?,
                mean_time_s: fl(f[7])?,
                seed: f[8].parse().map_err(|_| Error::InvalidArgument(line.into()))?,
            })
        })
        .collect()
}

/// Plain-text rate table, percentages by surrounding-vehicle count.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("n_sv  episodes  success%  collision%  timeout%  offroad%  mean_return  mean_time_s\n");
    for r in reports {
        out.push_str(&format!(
            "{:<4}  {:<8}  {:>8.1}  {:>10.1}  {:>8.1}  {:>8.1}  {:>11.2}  {:>11.2}\n",
            r.n_sv,
            r.episodes,
            r.success_rate * 100.0,
            r.collision_rate * 100.0,
            r.timeout_rate * 100.0,
            r.offroad_rate * 100.0,
            r.mean_return,
            r.mean_time_s,
        ));
    }
    out
}

/// Solve a dense linear system by Gaussian elimination with partial
/// pivoting. Small systems only (filter design).
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidFilter { window: n, order: n });
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let factor = a[row][col] / pivot_row[col];
            for (entry, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *entry -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Local least-squares polynomial fit evaluated at each point. Edges use the
/// same fit over the window truncated to the series bounds.
pub fn savitzky_golay(series: &[f64], window: usize, poly_order: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || window <= poly_order || window == 0 {
        return Err(Error::InvalidFilter { window, order: poly_order });
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let half = window / 2;
    let n = series.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let m = hi - lo + 1;
        let order = poly_order.min(m - 1);
        // Normal equations for fitting y ~ poly(x) with x centered at i.
        let dim = order + 1;
        let mut ata = vec![vec![0.0; dim]; dim];
        let mut aty = vec![0.0; dim];
        for (j, &y) in series.iter().enumerate().take(hi + 1).skip(lo) {
            let x = j as f64 - i as f64;
            let mut powers = vec![1.0; dim];
            for p in 1..dim {
                powers[p] = powers[p - 1] * x;
            }
            for r in 0..dim {
                for c in 0..dim {
                    ata[r][c] += powers[r] * powers[c];
                }
                aty[r] += powers[r] * y;
            }
        }
        let coeffs = solve_linear(ata, aty)?;
        out.push(coeffs[0]);
    }
    Ok(out)
}
