//! CSV and JSON artefacts of a run.

use std::fs::{self, File};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AppliedAdvisory, Comparison, Mode, PlotRow, RunOutput, ScenarioError};
use crate::cloud::LatencyRecord;
use crate::metrics::{DensityMoe, TrajectoryRow};
use crate::traffic::DensityClass;

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ScenarioError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScenarioError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(file, value).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(file).map_err(|e| io_err(path, e))
}

/// Flat form of [`AppliedAdvisory`] for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AppliedCsv {
    t: f64,
    cv_id: u32,
    signal_id: u32,
    role: String,
    case: String,
    status: String,
    advised_speed: f64,
    based_on: f64,
    generated_at: f64,
    delivered_at: f64,
}

impl From<&AppliedAdvisory> for AppliedCsv {
    fn from(a: &AppliedAdvisory) -> Self {
        AppliedCsv {
            t: a.t,
            cv_id: a.cv_id.0,
            signal_id: a.signal_id.0,
            role: format!("{:?}", a.role).to_lowercase(),
            case: format!("{:?}", a.case),
            status: a.status.map(|s| format!("{s:?}")).unwrap_or_default(),
            advised_speed: a.advised_speed,
            based_on: a.based_on,
            generated_at: a.generated_at,
            delivered_at: a.delivered_at,
        }
    }
}

/// Flat form of [`DensityMoe`] for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeCsv {
    pub density: DensityClass,
    pub seed: u64,
    pub vehicles: usize,
    pub completed_baseline: usize,
    pub completed_advised: usize,
    pub stopped_delay_baseline_s: f64,
    pub stopped_delay_advised_s: f64,
    pub stopped_delay_reduction_pct: Option<f64>,
    pub travel_time_baseline_s: f64,
    pub travel_time_advised_s: f64,
    pub travel_time_reduction_pct: Option<f64>,
    pub tit_baseline: f64,
    pub tit_advised: f64,
    pub tit_reduction_pct: Option<f64>,
}

impl From<&DensityMoe> for MoeCsv {
    fn from(m: &DensityMoe) -> Self {
        MoeCsv {
            density: m.density,
            seed: m.seed,
            vehicles: m.baseline.vehicles,
            completed_baseline: m.baseline.completed,
            completed_advised: m.advised.completed,
            stopped_delay_baseline_s: m.baseline.mean_stopped_delay,
            stopped_delay_advised_s: m.advised.mean_stopped_delay,
            stopped_delay_reduction_pct: m.stopped_delay_reduction_pct,
            travel_time_baseline_s: m.baseline.mean_travel_time,
            travel_time_advised_s: m.advised.mean_travel_time,
            travel_time_reduction_pct: m.travel_time_reduction_pct,
            tit_baseline: m.baseline.tit,
            tit_advised: m.advised.tit,
            tit_reduction_pct: m.tit_reduction_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotCsv {
    pub density: DensityClass,
    pub seed: u64,
    pub mode: Mode,
    pub measure: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl From<&PlotRow> for PlotCsv {
    fn from(p: &PlotRow) -> Self {
        let s = p.stats;
        PlotCsv {
            density: p.density,
            seed: p.seed,
            mode: p.mode,
            measure: p.measure.clone(),
            count: s.count,
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            mean: s.mean,
        }
    }
}

/// Write `trajectory_<mode>.csv` and, for advised runs, the latency,
/// applied-advisory and fault logs.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_csv(&dir.join(format!("trajectory_{}.csv", run.mode)), &run.trajectory.rows)?;
    if run.mode == Mode::Advised {
        write_csv(&dir.join("latency.csv"), &run.latency)?;
        let applied: Vec<AppliedCsv> = run.applied.iter().map(AppliedCsv::from).collect();
        write_csv(&dir.join("advisories.csv"), &applied)?;
        write_json(&dir.join("faults.json"), &run.faults)?;
    }
    Ok(())
}

pub fn write_comparison(dir: &Path, cmp: &[Comparison]) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let moe: Vec<MoeCsv> = cmp.iter().map(|c| MoeCsv::from(&c.moe)).collect();
    write_csv(&dir.join("moe.csv"), &moe)?;
    let plots: Vec<PlotCsv> = cmp.iter().flat_map(|c| c.plots.iter().map(PlotCsv::from)).collect();
    write_csv(&dir.join("plot_data.csv"), &plots)?;
    write_json(&dir.join("summary.json"), &cmp)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, ScenarioError> {
    read_csv(path)
}

pub fn read_latency(path: &Path) -> Result<Vec<LatencyRecord>, ScenarioError> {
    read_csv(path)
}
