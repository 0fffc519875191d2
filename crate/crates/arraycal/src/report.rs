//! Calibration reports and observability summaries.

use std::fs;
use std::io::Write;
use std::path::Path;

use arraycal_core::observability::{
    assemble_full_jacobian, check_theorem_conditions, jacobian_blocks, numerical_rank, reduced_f, Diagnosis,
    RankReport,
};
use arraycal_core::simkit::{error_metrics, ErrorMetrics, RmseAccumulator};
use arraycal_core::solver::{IterationRecord, Verdict};
use arraycal_core::state::{Scene, StateVector};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::StateRecord;
use crate::error::{Error, Result};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Finite values only; JSON has no encoding for NaN or infinity.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Per-parameter errors in report units (m, deg, ms, µs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub position_m: Vec<f64>,
    pub orientation_deg: Vec<f64>,
    pub offset_ms: Vec<f64>,
    pub clock_us: Vec<f64>,
    pub source_m: Vec<f64>,
    pub rmse: RmseRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseRecord {
    pub position_m: Option<f64>,
    pub orientation_deg: Option<f64>,
    pub offset_ms: Option<f64>,
    pub clock_us: Option<f64>,
    pub source_m: Option<f64>,
}

impl From<&ErrorMetrics> for ErrorRecord {
    fn from(m: &ErrorMetrics) -> Self {
        let mut acc = RmseAccumulator::default();
        acc.add(m);
        let [p, o, t, c, s] = acc.rmse();
        ErrorRecord {
            position_m: m.position.clone(),
            orientation_deg: m.orientation.iter().map(|v| v.to_degrees()).collect(),
            offset_ms: m.offset.iter().map(|v| v * 1e3).collect(),
            clock_us: m.clock.iter().map(|v| v * 1e6).collect(),
            source_m: m.source.clone(),
            rmse: RmseRecord {
                position_m: finite(p),
                orientation_deg: finite(o.to_degrees()),
                offset_ms: finite(t * 1e3),
                clock_us: finite(c * 1e6),
                source_m: finite(s),
            },
        }
    }
}

impl ErrorRecord {
    pub fn compare(estimate: &StateVector, truth: &StateVector) -> Result<Self> {
        Ok(ErrorRecord::from(&error_metrics(estimate, truth)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub step_norm: Option<f64>,
    pub cost: Option<f64>,
}

impl From<&IterationRecord> for TraceRow {
    fn from(r: &IterationRecord) -> Self {
        // wall-clock time is left out so reruns reproduce the report exactly
        TraceRow {
            iteration: r.iteration,
            step_norm: finite(r.step_norm),
            cost: finite(r.cost),
        }
    }
}

/// Header `iteration,step_norm,cost`; undefined values are empty cells.
pub fn write_trace_csv<W: Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::Io {
        path: "trace".into(),
        source: e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub matrix: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub full_column_rank: bool,
    pub smallest_retained_sv: Option<f64>,
    pub largest_discarded_sv: Option<f64>,
    /// `None` when nothing was discarded.
    pub gap_ratio: Option<f64>,
}

impl From<&RankReport> for RankRecord {
    fn from(r: &RankReport) -> Self {
        RankRecord {
            matrix: r.matrix_name.clone(),
            rows: r.rows,
            cols: r.cols,
            rank: r.numerical_rank,
            full_column_rank: r.full_column_rank,
            smallest_retained_sv: r.smallest_retained_sv.and_then(finite),
            largest_discarded_sv: r.largest_discarded_sv.and_then(finite),
            gap_ratio: finite(r.gap_ratio()),
        }
    }
}

/// Where the observability analysis was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatedAt {
    GroundTruth,
    InitialState,
    FinalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityRecord {
    pub evaluated_at: EvaluatedAt,
    pub diagnosis: Diagnosis,
    /// Human-readable form of each violated condition.
    pub messages: Vec<String>,
    pub jacobian: RankRecord,
    pub reduced: RankRecord,
}

impl ObservabilityRecord {
    pub fn evaluate(scene: &Scene, speed_of_sound: f64, at: EvaluatedAt, cfg: &Config) -> Result<Self> {
        let diagnosis = check_theorem_conditions(scene, cfg.angle_tolerance);
        let blocks = jacobian_blocks(scene, speed_of_sound)?;
        let j = numerical_rank("J", &assemble_full_jacobian(&blocks), cfg.rank_tolerance);
        let f = numerical_rank("F", &reduced_f(&blocks), cfg.rank_tolerance);
        Ok(ObservabilityRecord {
            evaluated_at: at,
            messages: diagnosis.violations.iter().map(|v| v.to_string()).collect(),
            diagnosis,
            jacobian: RankRecord::from(&j),
            reduced: RankRecord::from(&f),
        })
    }

    pub fn is_observable(&self) -> bool {
        self.jacobian.full_column_rank
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub software_version: String,
    pub command: String,
    pub seed: u64,
    pub config: Config,
    /// Dataset path as given on the command line.
    pub dataset: Option<String>,
    pub initial_state: Option<StateRecord>,
    pub final_state: Option<StateRecord>,
    pub verdict: Option<Verdict>,
    /// Error that stopped the pipeline, if any.
    pub failure: Option<String>,
    pub iterations: usize,
    pub final_cost: Option<f64>,
    pub trace: Vec<TraceRow>,
    /// Present when the dataset has ground truth.
    pub initial_errors: Option<ErrorRecord>,
    pub final_errors: Option<ErrorRecord>,
    pub observability: Option<ObservabilityRecord>,
}

impl CalibrationReport {
    pub fn new(command: &str, seed: u64, config: Config, dataset: Option<&Path>) -> Self {
        CalibrationReport {
            software_version: SOFTWARE_VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
            dataset: dataset.map(|p| p.display().to_string()),
            initial_state: None,
            final_state: None,
            verdict: None,
            failure: None,
            iterations: 0,
            final_cost: None,
            trace: Vec::new(),
            initial_errors: None,
            final_errors: None,
            observability: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("report", &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), &e))
    }
}
