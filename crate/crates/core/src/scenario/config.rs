use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{CloudConfig, ComputeCost, LatencyModel, LatencyProfile, Outage, StoreKind};
use crate::corridor::{RoadwaySpec, Signal, SignalId, SignalTimingPlan};
use crate::metrics::MetricSettings;
use crate::mpc::CtgPolicy;
use crate::traffic::{CarFollowing, DensityClass, SimParams, TrafficDemand, VehicleCapabilities};
use crate::units::{Duration, Length, Speed};

use super::ScenarioError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadwayConfig {
    pub length: Length,
    pub lanes_per_direction: usize,
    pub speed_limit: Speed,
    pub advisory_floor_offset: Speed,
}

impl Default for RoadwayConfig {
    fn default() -> Self {
        RoadwayConfig {
            length: Length(crate::units::miles(1.5)),
            lanes_per_direction: 2,
            speed_limit: Speed(crate::units::mph(35.0)),
            advisory_floor_offset: Speed(crate::units::mph(10.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub stop_line: Length,
    #[serde(default = "default_green")]
    pub green: Duration,
    #[serde(default = "default_yellow")]
    pub yellow: Duration,
    #[serde(default = "default_all_red")]
    pub all_red: Duration,
    #[serde(default = "default_cross")]
    pub cross_phase_total: Duration,
    #[serde(default)]
    pub offset: Duration,
}

fn default_green() -> Duration {
    Duration(30.0)
}
fn default_yellow() -> Duration {
    Duration(3.0)
}
fn default_all_red() -> Duration {
    Duration(2.0)
}
fn default_cross() -> Duration {
    Duration(25.0)
}

impl SignalConfig {
    pub fn at(stop_line: f64) -> Self {
        SignalConfig {
            stop_line: Length(stop_line),
            green: default_green(),
            yellow: default_yellow(),
            all_red: default_all_red(),
            cross_phase_total: default_cross(),
            offset: Duration(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandConfig {
    pub density: DensityClass,
    pub vehicle_count: usize,
    pub seed: u64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            density: DensityClass::Medium,
            vehicle_count: 50,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    /// m/s^2
    pub accel: f64,
    /// m/s^2, negative
    pub brake: f64,
    pub length: Length,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let caps = VehicleCapabilities::default();
        VehicleConfig {
            accel: caps.accel,
            brake: caps.brake,
            length: Length(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowingConfig {
    pub tau: Duration,
    /// m/s^2
    pub decel: f64,
    pub min_gap: Length,
}

impl Default for FollowingConfig {
    fn default() -> Self {
        let f = CarFollowing::default();
        FollowingConfig {
            tau: Duration(f.tau),
            decel: f.decel,
            min_gap: Length(f.min_gap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtgConfig {
    pub time_gap: Duration,
    pub standstill_gap: Length,
}

impl Default for CtgConfig {
    fn default() -> Self {
        CtgConfig {
            time_gap: Duration(2.0),
            standstill_gap: Length(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudSection {
    pub module_capacity: usize,
    pub trigger_offset: Duration,
    pub poll_offset: Duration,
    pub bsm_max_age: Duration,
}

impl Default for CloudSection {
    fn default() -> Self {
        let c = CloudConfig::default();
        CloudSection {
            module_capacity: c.module_capacity,
            trigger_offset: Duration(c.trigger_offset),
            poll_offset: Duration(c.poll_offset),
            bsm_max_age: Duration(c.bsm_max_age),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub profile: LatencyProfile,
    pub upload_mean: Duration,
    pub upload_sigma: f64,
    pub download_mean: Duration,
    pub download_sigma: f64,
    pub overhead: Duration,
    pub assigner_base: Duration,
    pub assigner_per_cv: Duration,
    pub optimizer_base: Duration,
    pub optimizer_per_iteration: Duration,
    /// Defaults to a value derived from the demand seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        let m = LatencyModel::default();
        LatencyConfig {
            profile: m.profile,
            upload_mean: Duration(m.upload_mean_ms * 1e-3),
            upload_sigma: m.upload_sigma,
            download_mean: Duration(m.download_mean_ms * 1e-3),
            download_sigma: m.download_sigma,
            overhead: Duration(m.overhead_ms * 1e-3),
            assigner_base: Duration(m.compute.assigner_base_ms * 1e-3),
            assigner_per_cv: Duration(m.compute.assigner_per_cv_ms * 1e-3),
            optimizer_base: Duration(m.compute.optimizer_base_ms * 1e-3),
            optimizer_per_iteration: Duration(m.compute.optimizer_per_iteration_ms * 1e-3),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub duration: Duration,
    pub warm_up: Duration,
    pub dt: Duration,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            duration: Duration(900.0),
            warm_up: Duration(0.0),
            dt: Duration(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub stopped_threshold: Speed,
    pub ttc_star: Duration,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            stopped_threshold: Speed(0.1),
            ttc_star: Duration(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageConfig {
    pub store: StoreKind,
    pub start: Duration,
    pub end: Duration,
}

/// Cells covered by a sweep; every (density, seed) pair runs in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub densities: Vec<DensityClass>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            densities: vec![DensityClass::Low, DensityClass::Medium, DensityClass::High],
            seeds: vec![1],
        }
    }
}

/// Everything one experiment needs. All sections are optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub roadway: RoadwayConfig,
    pub signals: Vec<SignalConfig>,
    pub demand: DemandConfig,
    pub vehicle: VehicleConfig,
    pub following: FollowingConfig,
    pub ctg: CtgConfig,
    pub cloud: CloudSection,
    pub latency: LatencyConfig,
    pub run: RunConfig,
    pub metrics: MetricsConfig,
    pub faults: Vec<OutageConfig>,
    pub sweep: SweepConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "corridor".into(),
            roadway: RoadwayConfig::default(),
            signals: [700.0, 1400.0, 2100.0].into_iter().map(SignalConfig::at).collect(),
            demand: DemandConfig::default(),
            vehicle: VehicleConfig::default(),
            following: FollowingConfig::default(),
            ctg: CtgConfig::default(),
            cloud: CloudSection::default(),
            latency: LatencyConfig::default(),
            run: RunConfig::default(),
            metrics: MetricsConfig::default(),
            faults: Vec::new(),
            sweep: SweepConfig::default(),
            output_dir: None,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The default corridor with a chosen density and seed.
    pub fn with_demand(density: DensityClass, seed: u64) -> Self {
        ScenarioConfig {
            name: format!("{density}-{seed}"),
            demand: DemandConfig {
                density,
                seed,
                ..DemandConfig::default()
            },
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.roadway_spec()
            .validate()
            .map_err(|e| invalid("roadway", e.to_string()))?;
        if self.signals.is_empty() {
            return Err(invalid("signals", "at least one signal is required"));
        }
        for (k, s) in self.signals.iter().enumerate() {
            self.plan(s)
                .validate()
                .map_err(|e| invalid(&format!("signals[{k}]"), e.to_string()))?;
        }
        if self.demand.vehicle_count == 0 {
            return Err(invalid("demand.vehicle_count", "must be positive"));
        }
        self.caps()
            .validate()
            .map_err(|e| invalid("vehicle", e.to_string()))?;
        if !(self.vehicle.length.si() > 0.0) {
            return Err(invalid("vehicle.length", "must be positive"));
        }
        let f = &self.following;
        if !(f.tau.si() > 0.0 && f.decel > 0.0 && f.min_gap.si() >= 0.0) {
            return Err(invalid("following", "need tau > 0, decel > 0 and min_gap >= 0"));
        }
        if !(self.ctg.time_gap.si() >= 0.0 && self.ctg.standstill_gap.si() > 0.0) {
            return Err(invalid("ctg", "need time_gap >= 0 and standstill_gap > 0"));
        }
        let r = &self.run;
        if !(r.duration.si() > 0.0) {
            return Err(invalid("run.duration", "must be positive"));
        }
        if !(r.dt.si() > 0.0) {
            return Err(invalid("run.dt", "must be positive"));
        }
        if !(r.warm_up.si() >= 0.0 && r.warm_up.si() < r.duration.si()) {
            return Err(invalid("run.warm_up", "must lie in [0, duration)"));
        }
        self.cloud_config().validate().map_err(|e| invalid("cloud", e))?;
        self.latency_model().validate().map_err(|e| invalid("latency", e))?;
        if !(self.metrics.ttc_star.si() > 0.0) {
            return Err(invalid("metrics.ttc_star", "must be positive"));
        }
        if !(self.metrics.stopped_threshold.si() >= 0.0) {
            return Err(invalid("metrics.stopped_threshold", "must be non-negative"));
        }
        for (k, o) in self.faults.iter().enumerate() {
            if !(o.end.si() > o.start.si()) {
                return Err(invalid(&format!("faults[{k}]"), "end must come after start"));
            }
        }
        if self.sweep.densities.is_empty() || self.sweep.seeds.is_empty() {
            return Err(invalid("sweep", "needs at least one density and one seed"));
        }
        Ok(())
    }

    pub fn roadway_spec(&self) -> RoadwaySpec {
        RoadwaySpec {
            length: self.roadway.length.si(),
            lanes_per_direction: self.roadway.lanes_per_direction,
            speed_limit: self.roadway.speed_limit.si(),
            stop_lines: self.signals.iter().map(|s| s.stop_line.si()).collect(),
            advisory_floor_offset: self.roadway.advisory_floor_offset.si(),
        }
    }

    fn plan(&self, s: &SignalConfig) -> SignalTimingPlan {
        SignalTimingPlan {
            green: s.green.si(),
            yellow: s.yellow.si(),
            all_red: s.all_red.si(),
            cross_phase_total: s.cross_phase_total.si(),
            cycle_offset: s.offset.si(),
        }
    }

    pub fn signals(&self) -> Vec<Signal> {
        self.signals
            .iter()
            .enumerate()
            .map(|(k, s)| Signal {
                id: SignalId(k as u32),
                stop_line: s.stop_line.si(),
                plan: self.plan(s),
            })
            .collect()
    }

    pub fn caps(&self) -> VehicleCapabilities {
        VehicleCapabilities {
            accel: self.vehicle.accel,
            brake: self.vehicle.brake,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            roadway: self.roadway_spec(),
            signals: self.signals(),
            caps: self.caps(),
            following: CarFollowing {
                tau: self.following.tau.si(),
                decel: self.following.decel,
                min_gap: self.following.min_gap.si(),
            },
            vehicle_length: self.vehicle.length.si(),
            dt: self.run.dt.si(),
        }
    }

    pub fn demand(&self) -> TrafficDemand {
        TrafficDemand::new(self.demand.density, self.demand.vehicle_count, self.demand.seed)
    }

    pub fn cloud_config(&self) -> CloudConfig {
        CloudConfig {
            module_capacity: self.cloud.module_capacity,
            trigger_offset: self.cloud.trigger_offset.si(),
            poll_offset: self.cloud.poll_offset.si(),
            bsm_max_age: self.cloud.bsm_max_age.si(),
            ctg: CtgPolicy {
                time_gap: self.ctg.time_gap.si(),
                standstill_gap: self.ctg.standstill_gap.si(),
            },
            dt: self.run.dt.si(),
        }
    }

    pub fn latency_model(&self) -> LatencyModel {
        let l = &self.latency;
        LatencyModel {
            profile: l.profile,
            upload_mean_ms: l.upload_mean.si() * 1e3,
            upload_sigma: l.upload_sigma,
            download_mean_ms: l.download_mean.si() * 1e3,
            download_sigma: l.download_sigma,
            overhead_ms: l.overhead.si() * 1e3,
            compute: ComputeCost {
                assigner_base_ms: l.assigner_base.si() * 1e3,
                assigner_per_cv_ms: l.assigner_per_cv.si() * 1e3,
                optimizer_base_ms: l.optimizer_base.si() * 1e3,
                optimizer_per_iteration_ms: l.optimizer_per_iteration.si() * 1e3,
            },
            seed: l.seed.unwrap_or(self.demand.seed ^ 0x5eed_1a7e_0c10_0d00),
        }
    }

    pub fn outages(&self) -> Vec<Outage> {
        self.faults
            .iter()
            .map(|o| Outage {
                store: o.store,
                start: o.start.si(),
                end: o.end.si(),
            })
            .collect()
    }

    pub fn metric_settings(&self) -> MetricSettings {
        MetricSettings {
            stopped_threshold: self.metrics.stopped_threshold.si(),
            ttc_star: self.metrics.ttc_star.si(),
            dt: self.run.dt.si(),
            corridor_length: self.roadway.length.si(),
            warm_up: self.run.warm_up.si(),
        }
    }
}
