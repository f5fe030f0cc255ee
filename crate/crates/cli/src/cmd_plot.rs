use crate::svg::Svg;
use crate::util;
use anyhow::{bail, Context, Result};
use clap::Args;
use crossway_core::harness::savitzky_golay;
use std::path::PathBuf;

#[derive(Args)]
pub struct PlotArgs {
    /// Training CSVs to overlay (one curve per file).
    #[arg(required = true)]
    pub csvs: Vec<PathBuf>,
    /// Output SVG path; defaults to <output root>/plots/training.svg.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Smoothing window (odd, > polynomial order).
    #[arg(long, default_value_t = 101)]
    pub window: usize,
    /// Smoothing polynomial order.
    #[arg(long, default_value_t = 2)]
    pub poly: usize,
    /// Also write the smoothed series as CSV (series,episode,return).
    #[arg(long)]
    pub smoothed_out: Option<PathBuf>,
}

struct Curve {
    name: String,
    episodes: Vec<f64>,
    returns: Vec<f64>,
    smoothed: Vec<f64>,
    /// Episodes at which the stage column changes value.
    stage_switches: Vec<f64>,
}

fn parse_training_csv(path: &PathBuf) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .with_context(|| format!("{} has no '{name}' column", path.display()))
    };
    let (ep_i, stage_i, ret_i) = (col("episode")?, col("stage")?, col("return")?);

    let (mut episodes, mut stages, mut returns) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64> {
            f.get(i)
                .context("short row")?
                .parse::<f64>()
                .with_context(|| format!("{} line {}: bad number", path.display(), n + 2))
        };
        episodes.push(get(ep_i)?);
        stages.push(get(stage_i)?);
        returns.push(get(ret_i)?);
    }
    Ok((episodes, stages, returns))
}

pub fn run(args: PlotArgs) -> Result<()> {
    let mut curves = Vec::new();
    for path in &args.csvs {
        let (episodes, stages, returns) = parse_training_csv(path)?;
        if returns.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        let smoothed = savitzky_golay(&returns, args.window | 1, args.poly)?;
        let stage_switches = stages
            .windows(2)
            .zip(&episodes[1..])
            .filter(|(w, _)| w[0] != w[1])
            .map(|(_, &e)| e)
            .collect();
        curves.push(Curve {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            episodes,
            returns,
            smoothed,
            stage_switches,
        });
    }

    let out = args
        .out
        .unwrap_or_else(|| util::output_root().join("plots").join("training.svg"));
    if let Some(parent) = out.parent() {
        util::ensure_dir(parent)?;
    }
    std::fs::write(&out, chart(&curves))?;
    println!("plot written to {}", out.display());

    if let Some(path) = &args.smoothed_out {
        if let Some(parent) = path.parent() {
            util::ensure_dir(parent)?;
        }
        let mut csv = String::from("series,episode,return\n");
        for c in &curves {
            for (e, s) in c.episodes.iter().zip(&c.smoothed) {
                csv.push_str(&format!("{},{e},{s}\n", c.name));
            }
        }
        std::fs::write(path, csv)?;
        println!("smoothed series written to {}", path.display());
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d95f02", "#2c9e4b", "#8e44ad", "#c0392b", "#5d6d7e"];

fn chart(curves: &[Curve]) -> String {
    let (w, h) = (860.0, 520.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 20.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let xmax = curves
        .iter()
        .flat_map(|c| c.episodes.last().copied())
        .fold(1.0_f64, f64::max);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for &r in c.returns.iter().chain(&c.smoothed) {
            ymin = ymin.min(r);
            ymax = ymax.max(r);
        }
    }
    if ymin == ymax {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let sx = |e: f64| ml + e / xmax * pw;
    let sy = |r: f64| mt + (ymax - r) / (ymax - ymin) * ph;

    let mut svg = Svg::new(w, h);
    svg.rect(0.0, 0.0, w, h, "fill:#ffffff");
    svg.rect(ml, mt, pw, ph, "fill:none;stroke:#999;stroke-width:1");

    // Axis ticks.
    for i in 0..=5 {
        let e = xmax * i as f64 / 5.0;
        svg.line(sx(e), mt + ph, sx(e), mt + ph + 5.0, "stroke:#999");
        svg.text(sx(e) - 12.0, mt + ph + 20.0, "font-size:11px;fill:#333", &format!("{e:.0}"));
        let r = ymin + (ymax - ymin) * i as f64 / 5.0;
        svg.line(ml - 5.0, sy(r), ml, sy(r), "stroke:#999");
        svg.text(8.0, sy(r) + 4.0, "font-size:11px;fill:#333", &format!("{r:.1}"));
    }
    svg.text(ml + pw / 2.0 - 25.0, h - 12.0, "font-size:12px;fill:#333", "episode");
    svg.text(8.0, mt - 6.0, "font-size:12px;fill:#333", "return");

    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for &e in &c.stage_switches {
            svg.line(
                sx(e),
                mt,
                sx(e),
                mt + ph,
                &format!("stroke:{color};stroke-width:1;stroke-dasharray:4 4;opacity:0.6"),
            );
        }
        let raw: Vec<(f64, f64)> = c.episodes.iter().zip(&c.returns).map(|(&e, &r)| (sx(e), sy(r))).collect();
        svg.polyline(&raw, &format!("stroke:{color};stroke-width:1;opacity:0.18"));
        let smooth: Vec<(f64, f64)> =
            c.episodes.iter().zip(&c.smoothed).map(|(&e, &r)| (sx(e), sy(r))).collect();
        svg.polyline(&smooth, &format!("stroke:{color};stroke-width:2"));

        let ly = mt + 16.0 + 18.0 * k as f64;
        svg.line(ml + 10.0, ly - 4.0, ml + 40.0, ly - 4.0, &format!("stroke:{color};stroke-width:2"));
        svg.text(ml + 46.0, ly, "font-size:12px;fill:#333", &c.name);
    }
    svg.finish()
}
