//! Discrete-event model of the cloud advisory pipeline.
//!
//! Every second each vehicle uploads a BSM to the trajectory store and each
//! signal fires a trigger. The trigger runs that signal's cluster: it reads
//! the BSMs visible at that instant, splits the vehicles into modules and
//! platoons, advises leaders and solves the follower problems, and commits
//! the advisories once the modelled processing time has passed. Vehicles poll
//! the advisory store once a second; a delivered advisory is used from the
//! first simulation tick at or after its delivery.

mod latency;
mod store;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use latency::{end_to_end, ComputeCost, LatencyModel, LatencyProfile, LatencyRecord, LatencySampler};
pub use store::{KeyValueStore, Outage, StoreKind, StoreUnavailable};

use crate::corridor::{available_time, RoadwaySpec, Signal, SignalId, SignalPhaseState};
use crate::leader::{optimize_leader, LeaderError, SpeedAdvisory};
use crate::mpc::{build_qp, optimize_followers, CtgPolicy, MpcError, MpcStatus};
use crate::platoon::{identify_platoons, Platoon, PlatoonCase};
use crate::traffic::{Bsm, CvId, VehicleCapabilities};

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error(transparent)]
    Unavailable(#[from] StoreUnavailable),
    #[error("leader advisory at {signal}: {source}")]
    Leader { signal: SignalId, source: LeaderError },
    #[error("follower optimization at {signal} (leader {leader}): {source}")]
    Follower { signal: SignalId, leader: CvId, source: MpcError },
    #[error("invalid cloud configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    /// Most vehicles one module handles.
    pub module_capacity: usize,
    /// Delay from the whole second to the cluster trigger, s.
    pub trigger_offset: f64,
    /// Delay from the whole second to the vehicles' advisory poll, s.
    pub poll_offset: f64,
    /// Oldest BSM sample a cluster still uses, s.
    pub bsm_max_age: f64,
    pub ctg: CtgPolicy,
    /// Control step of the follower problem, s.
    pub dt: f64,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            module_capacity: 50,
            trigger_offset: 0.2,
            poll_offset: 0.7,
            bsm_max_age: 1.5,
            ctg: CtgPolicy::default(),
            dt: 1.0,
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.module_capacity == 0 {
            return Err("module_capacity must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.trigger_offset) || !(0.0..1.0).contains(&self.poll_offset) {
            return Err("trigger and poll offsets must lie in [0, 1) s".into());
        }
        if self.poll_offset <= self.trigger_offset {
            return Err("vehicles must poll after the trigger fires".into());
        }
        if !(self.bsm_max_age > 0.0) {
            return Err("bsm_max_age must be positive".into());
        }
        if !(self.ctg.time_gap >= 0.0 && self.ctg.standstill_gap > 0.0) {
            return Err("need time_gap >= 0 and standstill_gap > 0".into());
        }
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub bsm: Bsm,
    pub sampled_at: f64,
    pub upload_ms: f64,
}

/// What the advisory store holds per vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryRecord {
    pub advisory: SpeedAdvisory,
    /// Follower problem outcome; `None` for leaders.
    pub status: Option<MpcStatus>,
    pub case: PlatoonCase,
    /// Speed in the BSM the advisory was computed from.
    pub source_speed: f64,
    pub upload_ms: f64,
    pub processing_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub signal_id: SignalId,
    /// The whole second this trigger belongs to.
    pub t: f64,
    pub fires_at: f64,
    pub phase: SignalPhaseState,
}

/// The per-second SPaT trigger of one signal.
pub fn tick_stream(signal: &Signal, t: f64, offset: f64) -> Trigger {
    Trigger {
        signal_id: signal.id,
        t,
        fires_at: t + offset,
        phase: signal.phase_at(t),
    }
}

/// Upload every BSM sampled at `t`; returns the sampled delay per vehicle in ms.
pub fn upload_bsms(
    bsms: &[Bsm],
    store: &mut KeyValueStore<CvId, TrajectoryRecord>,
    sampler: &mut LatencySampler,
    t: f64,
) -> Result<Vec<(CvId, f64)>, StoreUnavailable> {
    if !store.is_available(t) {
        return Err(StoreUnavailable { store: store.kind(), t });
    }
    let mut out = Vec::with_capacity(bsms.len());
    for b in bsms {
        let upload_ms = sampler.upload();
        let rec = TrajectoryRecord { bsm: *b, sampled_at: t, upload_ms };
        store.put(b.id, rec, t, t + upload_ms * 1e-3)?;
        out.push((b.id, upload_ms));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisoryModule {
    pub module_id: usize,
    pub members: Vec<CvId>,
    pub platoons: Vec<Platoon>,
    pub processing_ms: f64,
}

/// Chunk vehicles, already in distance order, into modules of at most `capacity`.
pub fn partition_modules(ordered: &[CvId], capacity: usize) -> Vec<AdvisoryModule> {
    let capacity = capacity.max(1);
    ordered
        .chunks(capacity)
        .enumerate()
        .map(|(module_id, chunk)| AdvisoryModule {
            module_id,
            members: chunk.to_vec(),
            platoons: Vec::new(),
            processing_ms: 0.0,
        })
        .collect()
}

/// Static inputs of one signal's cluster.
#[derive(Debug, Clone, Copy)]
pub struct ClusterEnv<'a> {
    pub signal: &'a Signal,
    /// Vehicles at or before this position belong to an upstream signal.
    pub upstream_limit: f64,
    pub roadway: &'a RoadwaySpec,
    pub caps: &'a VehicleCapabilities,
    pub cfg: &'a CloudConfig,
    pub model: &'a LatencyModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRun {
    pub signal_id: SignalId,
    pub t: f64,
    pub read_set: Vec<CvId>,
    pub modules: Vec<AdvisoryModule>,
    pub advisories: Vec<AdvisoryRecord>,
    pub processing_ms: f64,
    /// Vehicles seen here before that have now crossed the stop line.
    pub handoffs: Vec<CvId>,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// One trigger's worth of work for one signal.
pub fn run_cluster(
    trigger: &Trigger,
    trajectory: &KeyValueStore<CvId, TrajectoryRecord>,
    history: &mut KeyValueStore<CvId, f64>,
    advisory_store: &mut KeyValueStore<CvId, AdvisoryRecord>,
    env: &ClusterEnv,
) -> Result<ClusterRun, CloudError> {
    let now = trigger.fires_at;
    for (kind, up) in [
        (history.kind(), history.is_available(now)),
        (advisory_store.kind(), advisory_store.is_available(now)),
    ] {
        if !up {
            return Err(StoreUnavailable { store: kind, t: now }.into());
        }
    }
    let visible = trajectory.scan(now)?;
    let stop_line = env.signal.stop_line;
    let fresh: Vec<&TrajectoryRecord> = visible
        .iter()
        .map(|(_, rec, _)| *rec)
        .filter(|rec| rec.sampled_at >= now - env.cfg.bsm_max_age)
        .collect();

    let mut handoffs = Vec::new();
    let mut approaching: Vec<&TrajectoryRecord> = Vec::new();
    for rec in fresh {
        let x = rec.bsm.x;
        if x > stop_line {
            if history.get(&rec.bsm.id, now)?.is_some_and(|(d, _)| *d >= 0.0) {
                handoffs.push(rec.bsm.id);
                history.put(rec.bsm.id, -1.0, now, now)?;
            }
        } else if x > env.upstream_limit {
            history.put(rec.bsm.id, stop_line - x, now, now)?;
            approaching.push(rec);
        }
    }
    approaching.sort_by(|a, b| b.bsm.x.total_cmp(&a.bsm.x).then(a.bsm.id.cmp(&b.bsm.id)));
    let read_set: Vec<CvId> = approaching.iter().map(|r| r.bsm.id).collect();
    let by_id: BTreeMap<CvId, &TrajectoryRecord> = approaching.iter().map(|r| (r.bsm.id, *r)).collect();

    let s_max = env.roadway.speed_limit;
    let caps = env.caps;
    let cost = env.model.compute;
    let profile = env.model.profile;
    let mut modules = partition_modules(&read_set, env.cfg.module_capacity);
    let mut drafts: Vec<(SpeedAdvisory, Option<MpcStatus>, PlatoonCase, usize)> = Vec::new();

    for (m, module) in modules.iter_mut().enumerate() {
        let assigner_start = Instant::now();
        let bsms: Vec<Bsm> = module.members.iter().map(|id| by_id[id].bsm).collect();
        module.platoons = identify_platoons(&bsms, stop_line, &trigger.phase, &env.signal.plan, s_max, caps.accel);
        let mut leaders = Vec::new();
        for p in module.platoons.iter().filter(|p| p.case != PlatoonCase::Unassigned) {
            let case = p.case.pass_case().expect("assigned platoon");
            let t_avail = available_time(&trigger.phase, &env.signal.plan, case).expect("case matches phase");
            let adv = optimize_leader(p, t_avail, env.roadway, caps, now).map_err(|source| CloudError::Leader {
                signal: trigger.signal_id,
                source,
            })?;
            leaders.push((p, adv));
        }
        let assigner_ms = match profile {
            LatencyProfile::Calibrated => cost.assigner_base_ms + cost.assigner_per_cv_ms * module.members.len() as f64,
            LatencyProfile::Wallclock => elapsed_ms(assigner_start),
            LatencyProfile::Zero => 0.0,
        };

        let mut slowest_optimizer: f64 = 0.0;
        for (p, adv) in leaders {
            drafts.push((adv, None, p.case, m));
            if p.followers().is_empty() {
                continue;
            }
            let optimizer_start = Instant::now();
            let fail = |source| CloudError::Follower {
                signal: trigger.signal_id,
                leader: p.leader().id,
                source,
            };
            let system = build_qp(p, &adv, env.cfg.dt, caps, s_max, &env.cfg.ctg).map_err(fail)?;
            let plan = optimize_followers(&system).map_err(fail)?;
            let optimizer_ms = match profile {
                LatencyProfile::Calibrated => cost.optimizer_base_ms + cost.optimizer_per_iteration_ms * plan.iterations as f64,
                LatencyProfile::Wallclock => elapsed_ms(optimizer_start),
                LatencyProfile::Zero => 0.0,
            };
            slowest_optimizer = slowest_optimizer.max(optimizer_ms);
            for a in plan.advisories {
                drafts.push((a, Some(plan.status), p.case, m));
            }
        }
        module.processing_ms = assigner_ms + slowest_optimizer;
    }

    let processing_ms = env.model.overhead() + modules.iter().map(|m| m.processing_ms).fold(0.0, f64::max);
    let commit_at = now + processing_ms * 1e-3;
    let mut advisories = Vec::with_capacity(drafts.len());
    for (mut adv, status, case, _) in drafts {
        let src = by_id[&adv.cv_id];
        adv.generated_at = commit_at;
        adv.based_on = src.sampled_at;
        let rec = AdvisoryRecord {
            advisory: adv,
            status,
            case,
            source_speed: src.bsm.speed,
            upload_ms: src.upload_ms,
            processing_ms,
        };
        advisory_store.put(adv.cv_id, rec, now, commit_at)?;
        advisories.push(rec);
    }
    Ok(ClusterRun {
        signal_id: trigger.signal_id,
        t: trigger.t,
        read_set,
        modules,
        advisories,
        processing_ms,
        handoffs,
    })
}

/// An advisory that reached its vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub record: AdvisoryRecord,
    pub delivered_at: f64,
    pub latency: LatencyRecord,
}

/// Poll the advisory store for `cv_id` at `t`.
///
/// Returns nothing if no advisory is visible or the visible one was already
/// delivered (its generation time is not after `last_generated`).
pub fn download_advisory(
    cv_id: CvId,
    store: &KeyValueStore<CvId, AdvisoryRecord>,
    sampler: &mut LatencySampler,
    t: f64,
    last_generated: Option<f64>,
) -> Result<Option<Delivery>, StoreUnavailable> {
    let Some((rec, _)) = store.get(&cv_id, t)? else {
        return Ok(None);
    };
    if last_generated.is_some_and(|g| rec.advisory.generated_at <= g) {
        return Ok(None);
    }
    let download_ms = sampler.download();
    let delivered_at = t + download_ms * 1e-3;
    let latency = LatencyRecord::new(
        rec.advisory.based_on,
        cv_id,
        rec.upload_ms,
        rec.processing_ms,
        download_ms,
        (delivered_at - rec.advisory.generated_at) * 1e3,
    );
    Ok(Some(Delivery {
        record: *rec,
        delivered_at,
        latency,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub t: f64,
    pub store: StoreKind,
    pub what: String,
}

/// Per-signal summary of one cluster run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub t: f64,
    pub signal_id: SignalId,
    pub vehicles: usize,
    pub modules: usize,
    pub advisories: usize,
    pub processing_ms: f64,
}

/// The whole pipeline: stores, clusters, polling and the delivery queue.
#[derive(Debug, Clone)]
pub struct CloudEmulator {
    roadway: RoadwaySpec,
    signals: Vec<Signal>,
    caps: VehicleCapabilities,
    cfg: CloudConfig,
    model: LatencyModel,
    sampler: LatencySampler,
    trajectory: KeyValueStore<CvId, TrajectoryRecord>,
    advisory: KeyValueStore<CvId, AdvisoryRecord>,
    history: Vec<KeyValueStore<CvId, f64>>,
    last_generated: BTreeMap<CvId, f64>,
    in_flight: Vec<Delivery>,
    latency_log: Vec<LatencyRecord>,
    generated: Vec<AdvisoryRecord>,
    clusters: Vec<ClusterSummary>,
    handoffs: usize,
    faults: Vec<FaultEvent>,
}

impl CloudEmulator {
    pub fn new(
        roadway: RoadwaySpec,
        signals: Vec<Signal>,
        caps: VehicleCapabilities,
        cfg: CloudConfig,
        model: LatencyModel,
        outages: &[Outage],
    ) -> Result<Self, CloudError> {
        cfg.validate().map_err(CloudError::Config)?;
        model.validate().map_err(CloudError::Config)?;
        let history = signals
            .iter()
            .map(|_| KeyValueStore::new(StoreKind::DistanceHistory).with_outages(outages))
            .collect();
        Ok(CloudEmulator {
            sampler: model.sampler(),
            roadway,
            signals,
            caps,
            cfg,
            model,
            trajectory: KeyValueStore::new(StoreKind::Trajectory).with_outages(outages),
            advisory: KeyValueStore::new(StoreKind::Advisory).with_outages(outages),
            history,
            last_generated: BTreeMap::new(),
            in_flight: Vec::new(),
            latency_log: Vec::new(),
            generated: Vec::new(),
            clusters: Vec::new(),
            handoffs: 0,
            faults: Vec::new(),
        })
    }

    /// Run second `t`: uploads, one trigger per signal, then the vehicles' polls.
    pub fn tick(&mut self, t: f64, bsms: &[Bsm]) -> Result<(), CloudError> {
        if let Err(e) = upload_bsms(bsms, &mut self.trajectory, &mut self.sampler, t) {
            self.fault(t, e.store, "BSM upload lost");
        }

        let mut upstream_limit = f64::NEG_INFINITY;
        for k in 0..self.signals.len() {
            let signal = &self.signals[k];
            let trigger = tick_stream(signal, t, self.cfg.trigger_offset);
            let env = ClusterEnv {
                signal,
                upstream_limit,
                roadway: &self.roadway,
                caps: &self.caps,
                cfg: &self.cfg,
                model: &self.model,
            };
            upstream_limit = signal.stop_line;
            match run_cluster(&trigger, &self.trajectory, &mut self.history[k], &mut self.advisory, &env) {
                Ok(run) => {
                    self.handoffs += run.handoffs.len();
                    self.clusters.push(ClusterSummary {
                        t,
                        signal_id: run.signal_id,
                        vehicles: run.read_set.len(),
                        modules: run.modules.len(),
                        advisories: run.advisories.len(),
                        processing_ms: run.processing_ms,
                    });
                    self.generated.extend(run.advisories);
                }
                Err(CloudError::Unavailable(e)) => {
                    let what = format!("cluster {} skipped", trigger.signal_id);
                    self.fault(e.t, e.store, &what);
                }
                Err(e) => return Err(e),
            }
        }

        let poll = t + self.cfg.poll_offset;
        let mut ids: Vec<CvId> = bsms.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        for id in ids {
            let last = self.last_generated.get(&id).copied();
            match download_advisory(id, &self.advisory, &mut self.sampler, poll, last) {
                Ok(Some(d)) => {
                    self.last_generated.insert(id, d.record.advisory.generated_at);
                    self.latency_log.push(d.latency);
                    self.in_flight.push(d);
                }
                Ok(None) => {}
                Err(e) => {
                    self.fault(poll, e.store, &format!("poll by {id} failed"));
                }
            }
        }

        let horizon = t - 5.0;
        self.trajectory.compact(horizon);
        self.advisory.compact(horizon);
        for h in &mut self.history {
            h.compact(horizon);
        }
        Ok(())
    }

    fn fault(&mut self, t: f64, store: StoreKind, what: &str) {
        self.faults.push(FaultEvent { t, store, what: what.to_string() });
    }

    /// Advisories to apply over the step starting at `t`: per vehicle the
    /// freshest one delivered in `(t - dt, t]`. Older deliveries are dropped.
    pub fn advisories_for_step(&mut self, t: f64, dt: f64) -> BTreeMap<CvId, Delivery> {
        let mut out: BTreeMap<CvId, Delivery> = BTreeMap::new();
        for d in &self.in_flight {
            if d.delivered_at > t - dt && d.delivered_at <= t {
                let id = d.record.advisory.cv_id;
                let fresher = out
                    .get(&id)
                    .is_none_or(|o| d.record.advisory.generated_at > o.record.advisory.generated_at);
                if fresher {
                    out.insert(id, *d);
                }
            }
        }
        self.in_flight.retain(|d| d.delivered_at > t);
        out
    }

    pub fn latency_log(&self) -> &[LatencyRecord] {
        &self.latency_log
    }

    /// Every advisory any cluster produced, in generation order.
    pub fn generated(&self) -> &[AdvisoryRecord] {
        &self.generated
    }

    pub fn clusters(&self) -> &[ClusterSummary] {
        &self.clusters
    }

    pub fn handoffs(&self) -> usize {
        self.handoffs
    }

    pub fn faults(&self) -> &[FaultEvent] {
        &self.faults
    }
}
