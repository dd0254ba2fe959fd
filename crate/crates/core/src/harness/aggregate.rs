use std::io::Write;

use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use crate::error::{Error, Result};

/// Mean and sample standard deviation over the defined values of one column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_defined: usize,
    /// Values left out because they were undefined for their run.
    pub n_excluded: usize,
}

impl Summary {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut defined: Vec<f64> = values.iter().flatten().copied().collect();
        let n_excluded = values.len() - defined.len();
        if defined.is_empty() {
            return Summary {
                n_excluded,
                ..Summary::default()
            };
        }
        defined.sort_by(f64::total_cmp);
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let std = if defined.len() < 2 {
            0.0
        } else {
            let mut sq: Vec<f64> = defined.iter().map(|v| (v - mean) * (v - mean)).collect();
            sq.sort_by(f64::total_cmp);
            (sq.iter().sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary {
            mean: Some(mean),
            std: Some(std),
            n_defined: defined.len(),
            n_excluded,
        }
    }
}

/// One table row: indices over trials of a single agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm_id: String,
    pub n_trials: usize,
    pub n_failed: usize,
    pub esl: Summary,
    pub omr: Summary,
    /// ESL with the actually-final policy as endpoint, over every completed trial.
    pub eta_sub: Summary,
    /// Over converged trials only.
    pub uc: Summary,
    pub sr_percent: f64,
}

/// Summarizes `records`; failed trials count against the success rate only.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateRow> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("cannot aggregate an empty record set".into()))?;
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let column = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<Option<f64>> { ok.iter().map(|r| f(r)).collect() };
    let uc: Vec<Option<f64>> = ok
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.updates_to_convergence.map(|u| u as f64))
        .collect();
    let successes = records.iter().filter(|r| r.success).count();
    Ok(AggregateRow {
        algorithm_id: first.algorithm_id.clone(),
        n_trials: records.len(),
        n_failed: records.len() - ok.len(),
        esl: Summary::of(&column(&|r| r.indices.as_ref().and_then(|i| i.esl))),
        omr: Summary::of(&column(&|r| r.indices.as_ref().and_then(|i| i.omr))),
        eta_sub: Summary::of(&column(&|r| r.indices.as_ref().and_then(|i| i.eta_sub))),
        uc: Summary::of(&uc),
        sr_percent: 100.0 * successes as f64 / records.len() as f64,
    })
}

pub const AGGREGATE_CSV_HEADER: [&str; 8] = [
    "algo", "esl_mean", "esl_std", "omr_mean", "omr_std", "uc_mean", "uc_std", "sr",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The cells of one row in [`AGGREGATE_CSV_HEADER`] order; undefined values are empty.
pub fn aggregate_csv_record(r: &AggregateRow) -> [String; 8] {
    [
        r.algorithm_id.clone(),
        cell(r.esl.mean),
        cell(r.esl.std),
        cell(r.omr.mean),
        cell(r.omr.std),
        cell(r.uc.mean),
        cell(r.uc.std),
        r.sr_percent.to_string(),
    ]
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_CSV_HEADER)?;
    for r in rows {
        w.write_record(aggregate_csv_record(r))?;
    }
    w.flush()
}

/// Human-readable one-line summary.
pub fn format_row(r: &AggregateRow) -> String {
    let pm = |s: &Summary| match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{m:.3} ± {d:.3} (n={})", s.n_defined),
        _ => "undefined".to_string(),
    };
    format!(
        "{}: ESL {}, OMR {}, η_sub {}, UC {}, SR {:.1}% ({} trials, {} failed)",
        r.algorithm_id,
        pm(&r.esl),
        pm(&r.omr),
        pm(&r.eta_sub),
        pm(&r.uc),
        r.sr_percent,
        r.n_trials,
        r.n_failed
    )
}
