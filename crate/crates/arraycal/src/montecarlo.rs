//! Parallel Monte Carlo campaigns and their CSV/JSONL outputs.
//!
//! Trials are independent and keyed by index, and aggregation runs over the
//! collected records in index order, so the summaries are bit identical for
//! every thread count.

use std::io::Write;

use arraycal_core::simkit::{run_trial, summarize, InitScheme, MonteCarloConfig, MonteCarloSummary, Scenario, TrialRecord};
use arraycal_core::solver::Verdict;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ErrorRecord;

/// Runs `cfg.trials` trials on at most `threads` worker threads (all
/// available cores when `None`).
pub fn run_parallel(
    scenario: &Scenario,
    scheme: InitScheme,
    cfg: &MonteCarloConfig,
    threads: Option<usize>,
) -> Result<(MonteCarloSummary, Vec<TrialRecord>)> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
    let records: Vec<TrialRecord> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(scenario, scheme, t, cfg))
            .collect()
    });
    Ok((summarize(scheme, &records), records))
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub pos_m: f64,
    pub orient_deg: f64,
    pub offset_ms: f64,
    pub clock_us: f64,
    pub src_pos_m: f64,
    pub conv_ratio: f64,
    pub trials: usize,
}

impl From<&MonteCarloSummary> for SummaryRow {
    fn from(s: &MonteCarloSummary) -> Self {
        SummaryRow {
            scheme: s.scheme.clone(),
            pos_m: s.position_m,
            orient_deg: s.orientation_deg,
            offset_ms: s.offset_ms,
            clock_us: s.clock_us,
            src_pos_m: s.source_m,
            conv_ratio: s.convergence_ratio,
            trials: s.trials,
        }
    }
}

/// Header `scheme,pos_m,orient_deg,offset_ms,clock_us,src_pos_m,conv_ratio,trials`.
/// RMSE cells are `NaN` when no trial converged.
pub fn write_summary_csv<W: Write>(w: W, summaries: &[MonteCarloSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summaries {
        out.serialize(SummaryRow::from(s))?;
    }
    out.flush().map_err(|e| Error::Io {
        path: "summary".into(),
        source: e,
    })?;
    Ok(())
}

/// One line of the per-trial JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLine {
    pub trial: usize,
    pub scheme: String,
    pub converged: bool,
    pub verdict: Option<Verdict>,
    pub failure: Option<String>,
    pub iterations: usize,
    pub final_cost: Option<f64>,
    pub errors: Option<ErrorRecord>,
}

impl From<&TrialRecord> for TrialLine {
    fn from(r: &TrialRecord) -> Self {
        TrialLine {
            trial: r.trial,
            scheme: r.scheme.to_string(),
            converged: r.converged(),
            verdict: r.verdict,
            failure: r.error.as_ref().map(|e| e.to_string()),
            iterations: r.iterations,
            final_cost: r.final_cost.is_finite().then_some(r.final_cost),
            errors: r.metrics.as_ref().map(ErrorRecord::from),
        }
    }
}

pub fn write_trials_jsonl<W: Write>(mut w: W, records: &[TrialRecord]) -> Result<()> {
    let io = |e| Error::Io {
        path: "trial log".into(),
        source: e,
    };
    for r in records {
        let line = serde_json::to_string(&TrialLine::from(r)).expect("trial line serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
