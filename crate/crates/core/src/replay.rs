//! Line-delimited replay logs: one self-describing JSON record per line.
//! The first line is a header carrying everything needed to re-simulate the
//! episode (episode seed, scenario, config digest); each following line is
//! one simulation step with all vehicle poses, the applied action, the
//! reward breakdown, and the outcome.

use crate::env::{Outcome, RewardBreakdown};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const REPLAY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReplayHeader {
    pub kind: String,
    pub version: u32,
    pub episode_seed: u64,
    pub n_sv_min: u32,
    pub n_sv_max: u32,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VehiclePose {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReplayStep {
    pub kind: String,
    pub t: u32,
    /// Ego first, surrounding vehicles after, in simulation order.
    pub vehicles: Vec<VehiclePose>,
    pub action: usize,
    pub reward: RewardBreakdown,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub header: ReplayHeader,
    pub steps: Vec<ReplayStep>,
}

impl ReplayLog {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)
            .map_err(|e| Error::ReplayLog { line: 1, msg: e.to_string() })?;
        writeln!(w)?;
        for (i, step) in self.steps.iter().enumerate() {
            serde_json::to_writer(&mut w, step)
                .map_err(|e| Error::ReplayLog { line: i + 2, msg: e.to_string() })?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Option<ReplayLog>> {
        let mut lines = r.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Ok(None), // empty log
                Some((n, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str::<ReplayHeader>(&line).map_err(|e| {
                        Error::ReplayLog { line: n + 1, msg: e.to_string() }
                    })?;
                }
            }
        };
        if header.version != REPLAY_FORMAT_VERSION {
            return Err(Error::ReplayLog {
                line: 1,
                msg: format!(
                    "unsupported replay version {} (expected {})",
                    header.version, REPLAY_FORMAT_VERSION
                ),
            });
        }
        let mut steps = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            steps.push(serde_json::from_str::<ReplayStep>(&line).map_err(|e| {
                Error::ReplayLog { line: n + 1, msg: e.to_string() }
            })?);
        }
        Ok(Some(ReplayLog { header, steps }))
    }
}
