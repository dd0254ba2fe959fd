use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregateRow};
use super::config::{preset, ConfigFile, ExperimentConfig};
use super::run::run_experiment;
use crate::error::{Error, Result};
use crate::mdp::GridworldSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// The five task-difficulty grids.
    Difficulty,
    /// UCRL2 confidence parameter `δ ∈ {0.1, …, 0.9}`.
    UcrlDelta,
    /// OTDD rollouts per policy `M ∈ {1, 3, 6, 9}`.
    RolloutCount,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difficulty" => Ok(SweepKind::Difficulty),
            "ucrl_delta" | "ucrl-delta" => Ok(SweepKind::UcrlDelta),
            "rollout_count" | "rollout-count" => Ok(SweepKind::RolloutCount),
            _ => Err(Error::Usage(format!(
                "unknown sweep `{s}`; expected difficulty, ucrl_delta or rollout_count"
            ))),
        }
    }
}

pub const DIFFICULTY_TASKS: [&str; 5] = [
    "5x5-dense",
    "5x5-sparse-hard",
    "5x5-sparse-easy",
    "15x15-dense",
    "15x15-sparse",
];
pub const UCRL_DELTAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const ROLLOUT_COUNTS: [usize; 4] = [1, 3, 6, 9];

/// Labeled configurations of a sweep, each with `overrides` applied.
pub fn sweep_settings(kind: SweepKind, overrides: &[String]) -> Result<Vec<(String, ConfigFile)>> {
    let with = |name: &str, extra: Vec<String>| -> Result<ConfigFile> {
        let mut all = extra;
        all.extend_from_slice(overrides);
        preset(name)?.with_overrides(&all)
    };
    match kind {
        SweepKind::Difficulty => DIFFICULTY_TASKS
            .iter()
            .map(|t| Ok((t.to_string(), with(&format!("difficulty-{t}"), Vec::new())?)))
            .collect(),
        SweepKind::UcrlDelta => UCRL_DELTAS
            .iter()
            .map(|d| Ok((format!("delta={d}"), with("ucrl-delta", vec![format!("delta={d}")])?)))
            .collect(),
        SweepKind::RolloutCount => ROLLOUT_COUNTS
            .iter()
            .map(|m| {
                Ok((
                    format!("rollouts={m}"),
                    with("rollout-count", vec![format!("rollouts={m}")])?,
                ))
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub row: AggregateRow,
}

/// Runs each setting; records go to `<out_dir>/<setting>.jsonl` when `out_dir` is set.
pub fn run_sweep(kind: SweepKind, overrides: &[String], out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (setting, file) in sweep_settings(kind, overrides)? {
        let cfg = file.resolve()?;
        let path = out_dir.map(|d| d.join(format!("{setting}.jsonl")));
        let records = run_experiment(&cfg, path.as_deref())?;
        rows.push(SweepRow {
            setting,
            row: aggregate(&records)?,
        });
    }
    Ok(rows)
}

/// Runs one agent configuration across several environments.
pub fn task_difficulty_sweep(template: &ExperimentConfig, tasks: &[(String, GridworldSpec)]) -> Result<Vec<SweepRow>> {
    if tasks.is_empty() {
        return Err(Error::Usage("task sweep needs at least one task".into()));
    }
    tasks
        .iter()
        .map(|(label, env)| {
            let cfg = ExperimentConfig {
                name: label.clone(),
                env: env.clone(),
                ..template.clone()
            };
            Ok(SweepRow {
                setting: label.clone(),
                row: aggregate(&run_experiment(&cfg, None)?)?,
            })
        })
        .collect()
}

/// Environments of the difficulty presets, labeled by task.
pub fn difficulty_tasks() -> Result<Vec<(String, GridworldSpec)>> {
    DIFFICULTY_TASKS
        .iter()
        .map(|t| Ok((t.to_string(), preset(&format!("difficulty-{t}"))?.resolve()?.env)))
        .collect()
}
