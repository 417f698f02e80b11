//! Per-point statistics over trials.

use nfstar_core::ao::BaselineKind;
use serde::{Deserialize, Serialize};

use crate::runner::TrialRecord;

#[derive(Debug, thiserror::Error)]
pub enum SummaryError {
    #[error("no records to summarize")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: BaselineKind,
    pub sweep_value: Option<f64>,
    pub rho: f64,
    pub lambda_db: f64,
    pub trials: usize,
    /// Mean and sample standard deviation of delivered harvested power (W).
    pub mean_harvested: f64,
    pub std_harvested: f64,
    pub feasible_rate: f64,
    pub convergence_rate: f64,
    pub mean_iterations: f64,
}

/// Delivered power against AO iteration; runs that stopped early hold
/// their last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCurve {
    pub scheme: BaselineKind,
    pub sweep_value: Option<f64>,
    pub rho: f64,
    pub lambda_db: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub curves: Vec<IterationCurve>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type Key = (BaselineKind, Option<u64>, u64, u64);

fn key(r: &TrialRecord) -> Key {
    (r.scheme, r.sweep_value.map(f64::to_bits), r.rho.to_bits(), r.lambda_db.to_bits())
}

/// Groups by (scheme, sweep value, rho, lambda) in first-seen order.
pub fn aggregate(records: &[TrialRecord]) -> Result<Summary, SummaryError> {
    if records.is_empty() {
        return Err(SummaryError::Empty);
    }
    let mut groups: Vec<(Key, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    let mut summary = Summary::default();
    for (_, rs) in groups {
        let first = rs[0];
        let n = rs.len() as f64;
        let delivered: Vec<f64> = rs.iter().map(|r| r.delivered).collect();
        let (mean, std) = mean_std(&delivered);
        summary.rows.push(SummaryRow {
            scheme: first.scheme,
            sweep_value: first.sweep_value,
            rho: first.rho,
            lambda_db: first.lambda_db,
            trials: rs.len(),
            mean_harvested: mean,
            std_harvested: std,
            feasible_rate: rs.iter().filter(|r| r.feasible).count() as f64 / n,
            convergence_rate: rs.iter().filter(|r| r.converged).count() as f64 / n,
            mean_iterations: rs.iter().map(|r| r.outer_iterations as f64).sum::<f64>() / n,
        });

        let len = rs.iter().map(|r| r.harvested_trace.len()).max().unwrap_or(0);
        if len > 0 {
            let at = |r: &TrialRecord, i: usize| -> f64 {
                if !r.feasible {
                    return 0.0;
                }
                r.harvested_trace.get(i).or(r.harvested_trace.last()).copied().unwrap_or(0.0)
            };
            let (mean, std) = (0..len).map(|i| mean_std(&rs.iter().map(|r| at(r, i)).collect::<Vec<_>>())).unzip();
            summary.curves.push(IterationCurve {
                scheme: first.scheme,
                sweep_value: first.sweep_value,
                rho: first.rho,
                lambda_db: first.lambda_db,
                mean,
                std,
            });
        }
    }
    Ok(summary)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scheme: &'a str,
    sweep_value: Option<f64>,
    rho: f64,
    lambda_db: f64,
    trials: usize,
    mean_harvested_w: f64,
    std_harvested_w: f64,
    feasible_rate: f64,
    convergence_rate: f64,
    mean_iterations: f64,
}

pub fn to_csv(summary: &Summary) -> Result<String, SummaryError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &summary.rows {
        w.serialize(CsvRow {
            scheme: r.scheme.label(),
            sweep_value: r.sweep_value,
            rho: r.rho,
            lambda_db: r.lambda_db,
            trials: r.trials,
            mean_harvested_w: r.mean_harvested,
            std_harvested_w: r.std_harvested,
            feasible_rate: r.feasible_rate,
            convergence_rate: r.convergence_rate,
            mean_iterations: r.mean_iterations,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| SummaryError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
