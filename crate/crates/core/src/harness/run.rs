use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BackendConfig, ExperimentConfig};
use crate::agents::{is_optimal_return, optimal_reference, train};
use crate::error::{Error, Result};
use crate::mdp::{build_gridworld, lipschitz_constant_with, TabularMdp};
use crate::metrics::{index_report, trajectory_geometry, Backend, IndexReport, TrajectoryGeometry};
use crate::policy::PolicyTrace;
use crate::transport::GroundMetric;

pub const SCHEMA_VERSION: u32 = 1;

/// Offset mixed into the trial seed for the OTDD rollout stream.
const OTDD_SEED_SALT: u64 = 0x5EED_0D0D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Which policy the distances-to-reference were measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// The run's own final snapshot, which is optimal.
    FinalSnapshot,
    /// The value-iteration optimum; used when the final snapshot is not optimal.
    ValueIteration,
}

/// One trial of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub experiment: String,
    pub algorithm_id: String,
    pub trial: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub converged: bool,
    pub updates_to_convergence: Option<usize>,
    /// The final snapshot achieves the optimal return.
    pub success: bool,
    pub update_indices: Vec<usize>,
    pub returns: Vec<f64>,
    pub optimal_return: Option<f64>,
    pub gamma: f64,
    /// Reward Lipschitz constant under the ground metric used for the geometry.
    pub reward_lipschitz: Option<f64>,
    pub grid_width: usize,
    pub state_visits: Vec<u64>,
    pub reference_source: Option<ReferenceSource>,
    pub geometry: Option<TrajectoryGeometry>,
    pub indices: Option<IndexReport>,
    pub wall_time_secs: Option<f64>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Number of policy updates `N`.
    pub fn n_updates(&self) -> usize {
        self.update_indices.len().saturating_sub(1)
    }

    fn failed(cfg: &ExperimentConfig, trial: usize, seed: u64, algorithm_id: String, message: String) -> Self {
        RunRecord {
            schema_version: SCHEMA_VERSION,
            run_id: run_id(&cfg.name, trial),
            experiment: cfg.name.clone(),
            algorithm_id,
            trial,
            seed,
            status: RunStatus::Failed,
            error: Some(message),
            converged: false,
            updates_to_convergence: None,
            success: false,
            update_indices: Vec::new(),
            returns: Vec::new(),
            optimal_return: None,
            gamma: cfg.env.gamma,
            reward_lipschitz: None,
            grid_width: cfg.env.width,
            state_visits: Vec::new(),
            reference_source: None,
            geometry: None,
            indices: None,
            wall_time_secs: None,
        }
    }
}

fn run_id(name: &str, trial: usize) -> String {
    format!("{name}/{trial:03}")
}

/// Trains one agent and measures its trajectory.
pub fn run_trial(cfg: &ExperimentConfig, mdp: &TabularMdp, trial: usize) -> RunRecord {
    let seed = cfg.base_seed.wrapping_add(trial as u64);
    let started = Instant::now();
    let algorithm_id = cfg.agent.variant.id();
    match measure_trial(cfg, mdp, trial, seed) {
        Ok(mut record) => {
            if cfg.record_wall_time {
                record.wall_time_secs = Some(started.elapsed().as_secs_f64());
            }
            record
        }
        Err(e) => RunRecord::failed(cfg, trial, seed, algorithm_id, e.to_string()),
    }
}

fn measure_trial(cfg: &ExperimentConfig, mdp: &TabularMdp, trial: usize, seed: u64) -> Result<RunRecord> {
    let trace: PolicyTrace = train(mdp, &cfg.agent, seed)?;
    let (optimal, optimal_return) = optimal_reference(mdp)?;
    let last = trace.final_snapshot();
    let success = is_optimal_return(last.episodic_return, optimal_return);
    // An optimal final policy is the run's own optimum; otherwise fall back to value iteration.
    let (reference, source) = if success {
        (last.clone(), ReferenceSource::FinalSnapshot)
    } else {
        (optimal, ReferenceSource::ValueIteration)
    };
    let backend = match cfg.backend {
        BackendConfig::ExactW1 => Backend::ExactW1,
        BackendConfig::Otdd { rollouts } => Backend::Otdd {
            rollouts,
            seed: seed ^ OTDD_SEED_SALT,
        },
    };
    let metric = GroundMetric::for_mdp(mdp);
    let geometry = trajectory_geometry(&trace, mdp, &reference, cfg.reference, backend, &metric)?;
    let indices = index_report(&geometry, mdp, &metric)?;
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        run_id: run_id(&cfg.name, trial),
        experiment: cfg.name.clone(),
        algorithm_id: trace.algorithm_id.clone(),
        trial,
        seed,
        status: RunStatus::Ok,
        error: None,
        converged: trace.converged,
        updates_to_convergence: trace.updates_to_convergence,
        success,
        update_indices: trace.snapshots.iter().map(|s| s.update_index).collect(),
        returns: trace.returns(),
        optimal_return: Some(optimal_return),
        gamma: mdp.gamma(),
        reward_lipschitz: Some(lipschitz_constant_with(mdp, &metric)).filter(|l| l.is_finite()),
        grid_width: cfg.env.width,
        state_visits: trace.state_visits.clone(),
        reference_source: Some(source),
        geometry: Some(geometry),
        indices: Some(indices),
        wall_time_secs: None,
    })
}

/// Runs every trial (seed `base_seed + i`) in parallel.
///
/// With `records_path` set, records are appended to a fresh line-delimited file in trial
/// order as each batch finishes.
pub fn run_experiment(cfg: &ExperimentConfig, records_path: Option<&Path>) -> Result<Vec<RunRecord>> {
    let mdp = build_gridworld(&cfg.env)?;
    let mut writer = match records_path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };
    let batch = rayon::current_num_threads().max(1);
    let mut records = Vec::with_capacity(cfg.trials);
    for start in (0..cfg.trials).step_by(batch) {
        let end = (start + batch).min(cfg.trials);
        let done: Vec<RunRecord> = (start..end).into_par_iter().map(|i| run_trial(cfg, &mdp, i)).collect();
        if let Some((path, w)) = writer.as_mut() {
            for r in &done {
                write_record(w, r).map_err(|e| Error::io(*path, e))?;
            }
            w.flush().map_err(|e| Error::io(*path, e))?;
        }
        records.extend(done);
    }
    Ok(records)
}

fn write_record<W: Write>(w: &mut W, record: &RunRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Writes one JSON record per line, replacing any existing file.
pub fn save_records(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        write_record(&mut w, r).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a record file written by [`save_records`] or [`run_experiment`].
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("unsupported schema version {}", record.schema_version),
            });
        }
        out.push(record);
    }
    Ok(out)
}
