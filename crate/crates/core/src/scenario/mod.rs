//! Paired baseline/advised experiments over one corridor configuration.

mod config;
pub mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    CloudSection, CtgConfig, DemandConfig, FollowingConfig, LatencyConfig, MetricsConfig, OutageConfig, RoadwayConfig,
    RunConfig, ScenarioConfig, SignalConfig, SweepConfig, VehicleConfig,
};

use crate::cloud::{AdvisoryRecord, CloudEmulator, CloudError, ClusterSummary, FaultEvent, LatencyRecord};
use crate::corridor::SignalId;
use crate::leader::Role;
use crate::metrics::{box_stats, moe_report, per_vehicle, BoxStats, DensityMoe, MetricsError, TrajectoryLog, TrajectoryRow};
use crate::mpc::MpcStatus;
use crate::platoon::PlatoonCase;
use crate::traffic::{spawn_traffic, CvId, DensityClass, SimError, StepStats, World};

/// Real-time budget for one advisory delivery, ms.
pub const DELIVERY_BUDGET_MS: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("runs are not paired: arrival fingerprints {baseline} and {advised} differ")]
    Unpaired { baseline: String, advised: String },
    #[error("expected a {expected} run, got {got}")]
    WrongMode { expected: Mode, got: Mode },
    #[error("the advised run delivered no advisories")]
    NoDeliveries,
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Advised,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Advised => "advised",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "advised" => Ok(Mode::Advised),
            _ => Err(format!("unknown mode `{s}` (baseline, advised)")),
        }
    }
}

/// One advisory as it was used by a vehicle over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedAdvisory {
    /// Start of the step, s.
    pub t: f64,
    pub cv_id: CvId,
    pub signal_id: SignalId,
    pub role: Role,
    pub case: PlatoonCase,
    pub status: Option<MpcStatus>,
    pub advised_speed: f64,
    pub based_on: f64,
    pub generated_at: f64,
    pub delivered_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub mode: Mode,
    pub arrivals_fingerprint: String,
    pub trajectory: TrajectoryLog,
    pub latency: Vec<LatencyRecord>,
    pub applied: Vec<AppliedAdvisory>,
    pub generated: Vec<AdvisoryRecord>,
    pub clusters: Vec<ClusterSummary>,
    pub faults: Vec<FaultEvent>,
    pub handoffs: usize,
    pub stats: StepStats,
}

fn log_rows(world: &World, advised: &BTreeMap<CvId, f64>, rows: &mut Vec<TrajectoryRow>) {
    let t = world.time();
    for v in world.vehicles().chain(world.just_exited()) {
        rows.push(TrajectoryRow {
            t,
            cv_id: v.id,
            lane: v.lane,
            x: v.x,
            speed: v.speed,
            gap: v.gap,
            advised: advised.contains_key(&v.id),
        });
    }
}

/// Simulate one mode of a scenario.
///
/// In the advised mode every second runs the upload, trigger, cluster and
/// poll cycle; vehicles without a fresh advisory drive by the baseline law.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let schedule = spawn_traffic(&cfg.demand(), cfg.roadway.lanes_per_direction);
    let mut world = World::new(cfg.sim_params(), &schedule)?;
    let mut emulator = match mode {
        Mode::Baseline => None,
        Mode::Advised => Some(CloudEmulator::new(
            cfg.roadway_spec(),
            cfg.signals(),
            cfg.caps(),
            cfg.cloud_config(),
            cfg.latency_model(),
            &cfg.outages(),
        )?),
    };

    let dt = cfg.run.dt.si();
    let steps = (cfg.run.duration.si() / dt).round() as usize;
    let mut rows = Vec::new();
    let mut applied = Vec::new();
    log_rows(&world, &BTreeMap::new(), &mut rows);
    for _ in 0..steps {
        let t = world.time();
        let mut speeds = BTreeMap::new();
        if let Some(emu) = emulator.as_mut() {
            for (id, d) in emu.advisories_for_step(t, dt) {
                let a = d.record.advisory;
                speeds.insert(id, a.advised_speed);
                applied.push(AppliedAdvisory {
                    t,
                    cv_id: id,
                    signal_id: a.signal_id,
                    role: a.role,
                    case: d.record.case,
                    status: d.record.status,
                    advised_speed: a.advised_speed,
                    based_on: a.based_on,
                    generated_at: a.generated_at,
                    delivered_at: d.delivered_at,
                });
            }
            emu.tick(t, &world.bsm_snapshot())?;
        }
        world.step_advised(&speeds)?;
        log_rows(&world, &speeds, &mut rows);
    }

    let (latency, generated, clusters, faults, handoffs) = match emulator {
        Some(e) => (
            e.latency_log().to_vec(),
            e.generated().to_vec(),
            e.clusters().to_vec(),
            e.faults().to_vec(),
            e.handoffs(),
        ),
        None => Default::default(),
    };
    Ok(RunOutput {
        mode,
        arrivals_fingerprint: schedule.fingerprint(),
        trajectory: TrajectoryLog { rows },
        latency,
        applied,
        generated,
        clusters,
        faults,
        handoffs,
        stats: world.stats(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub deliveries: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p05_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub mean_upload_ms: f64,
    pub mean_processing_ms: f64,
    pub mean_download_ms: f64,
    pub fraction_over_budget: f64,
}

pub fn summarize_latency(records: &[LatencyRecord]) -> Result<LatencySummary, ScenarioError> {
    if records.is_empty() {
        return Err(ScenarioError::NoDeliveries);
    }
    let n = records.len() as f64;
    let mut e2e: Vec<f64> = records.iter().map(|r| r.end_to_end_ms).collect();
    e2e.sort_by(f64::total_cmp);
    let mean_of = |f: fn(&LatencyRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(LatencySummary {
        deliveries: records.len(),
        mean_ms: mean_of(|r| r.end_to_end_ms),
        median_ms: crate::metrics::quantile(&e2e, 0.5),
        p05_ms: crate::metrics::quantile(&e2e, 0.05),
        p95_ms: crate::metrics::quantile(&e2e, 0.95),
        max_ms: e2e[e2e.len() - 1],
        mean_upload_ms: mean_of(|r| r.upload_ms),
        mean_processing_ms: mean_of(|r| r.processing_ms),
        mean_download_ms: mean_of(|r| r.download_ms),
        fraction_over_budget: records.iter().filter(|r| r.end_to_end_ms > DELIVERY_BUDGET_MS).count() as f64 / n,
    })
}

/// Box-chart inputs for one density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub density: DensityClass,
    pub seed: u64,
    pub mode: Mode,
    pub measure: String,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub moe: DensityMoe,
    pub latency: LatencySummary,
    pub mean_cluster_processing_ms: f64,
    pub plots: Vec<PlotRow>,
}

/// MoEs and latency summary of a paired baseline/advised run.
pub fn compare(cfg: &ScenarioConfig, baseline: &RunOutput, advised: &RunOutput) -> Result<Comparison, ScenarioError> {
    for (run, expected) in [(baseline, Mode::Baseline), (advised, Mode::Advised)] {
        if run.mode != expected {
            return Err(ScenarioError::WrongMode { expected, got: run.mode });
        }
    }
    if baseline.arrivals_fingerprint != advised.arrivals_fingerprint {
        return Err(ScenarioError::Unpaired {
            baseline: baseline.arrivals_fingerprint.clone(),
            advised: advised.arrivals_fingerprint.clone(),
        });
    }
    let settings = cfg.metric_settings();
    let (density, seed) = (cfg.demand.density, cfg.demand.seed);
    let moe = moe_report(density, seed, &baseline.trajectory, &advised.trajectory, &settings)?;
    let latency = summarize_latency(&advised.latency)?;

    let busy: Vec<f64> = advised.clusters.iter().filter(|c| c.vehicles > 0).map(|c| c.processing_ms).collect();
    let mean_cluster_processing_ms = if busy.is_empty() { 0.0 } else { busy.iter().sum::<f64>() / busy.len() as f64 };

    let mut plots = Vec::new();
    for run in [baseline, advised] {
        let (delays, times) = per_vehicle(&run.trajectory, &settings);
        let mut series = vec![("stopped_delay_s", delays), ("travel_time_s", times)];
        if run.mode == Mode::Advised {
            series.push(("end_to_end_ms", run.latency.iter().map(|r| r.end_to_end_ms).collect()));
            series.push(("processing_ms", busy.clone()));
        }
        for (measure, values) in series {
            if let Some(stats) = box_stats(&values) {
                plots.push(PlotRow {
                    density,
                    seed,
                    mode: run.mode,
                    measure: measure.to_string(),
                    stats,
                });
            }
        }
    }
    Ok(Comparison {
        moe,
        latency,
        mean_cluster_processing_ms,
        plots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(density: DensityClass) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::with_demand(density, 3);
        cfg.run.duration = crate::units::Duration(400.0);
        cfg
    }

    #[test]
    fn baseline_has_no_pipeline() {
        let out = run_scenario(&short(DensityClass::Low), Mode::Baseline).unwrap();
        assert!(out.latency.is_empty());
        assert!(out.clusters.is_empty());
        assert!(out.trajectory.rows.iter().all(|r| !r.advised));
    }

    #[test]
    fn advised_runs_every_cluster_every_second() {
        let mut cfg = short(DensityClass::Medium);
        cfg.run.duration = crate::units::Duration(600.0);
        let out = run_scenario(&cfg, Mode::Advised).unwrap();
        assert_eq!(out.clusters.len(), 1800);
        assert!(!out.latency.is_empty());
        for a in &out.applied {
            assert!(a.delivered_at <= a.t);
            assert!(a.t - a.delivered_at < 1.0);
        }
    }

    #[test]
    fn paired_and_deterministic() {
        let cfg = short(DensityClass::High);
        let b = run_scenario(&cfg, Mode::Baseline).unwrap();
        let a = run_scenario(&cfg, Mode::Advised).unwrap();
        assert_eq!(a.arrivals_fingerprint, b.arrivals_fingerprint);
        assert_eq!(a, run_scenario(&cfg, Mode::Advised).unwrap());
        let c = compare(&cfg, &b, &a).unwrap();
        let mean = a.latency.iter().map(|r| r.end_to_end_ms).sum::<f64>() / a.latency.len() as f64;
        assert!((c.latency.mean_ms - mean).abs() < 1e-9);
        assert_eq!(c.latency.fraction_over_budget, 0.0);
        assert!(compare(&cfg, &a, &b).is_err());
    }

    #[test]
    fn compare_guards() {
        let cfg = short(DensityClass::Low);
        let b = run_scenario(&cfg, Mode::Baseline).unwrap();
        let mut a = run_scenario(&cfg, Mode::Advised).unwrap();
        let mut other = b.clone();
        other.arrivals_fingerprint = "x".into();
        assert!(matches!(compare(&cfg, &other, &a), Err(ScenarioError::Unpaired { .. })));
        a.latency.clear();
        assert!(matches!(compare(&cfg, &b, &a), Err(ScenarioError::NoDeliveries)));
    }
}
