//! Measures of effectiveness computed from trajectory logs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::{CvId, DensityClass};

/// State of one vehicle at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub cv_id: CvId,
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
    pub gap: f64,
    /// The step that ended at this row followed a delivered advisory.
    pub advised: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    /// Rows grouped per vehicle, each in time order.
    pub fn by_vehicle(&self) -> BTreeMap<CvId, Vec<TrajectoryRow>> {
        let mut out: BTreeMap<CvId, Vec<TrajectoryRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.cv_id).or_default().push(*r);
        }
        for rows in out.values_mut() {
            rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        out
    }

    pub fn vehicles(&self) -> BTreeSet<CvId> {
        self.rows.iter().map(|r| r.cv_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    /// Speeds at or below this count as stopped, m/s.
    pub stopped_threshold: f64,
    /// s
    pub ttc_star: f64,
    /// s
    pub dt: f64,
    /// Corridor exit position, m.
    pub corridor_length: f64,
    /// Vehicles entering before this time are left out, s.
    pub warm_up: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            stopped_threshold: 0.1,
            ttc_star: 2.0,
            dt: 1.0,
            corridor_length: 2414.016,
            warm_up: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("runs cover different vehicles: {only_baseline} only in the baseline, {only_advised} only in the advised run")]
    PopulationMismatch { only_baseline: usize, only_advised: usize },
}

/// Time spent at or below `threshold` while still inside the corridor.
pub fn stopped_delay(rows: &[TrajectoryRow], corridor_length: f64, threshold: f64, dt: f64) -> f64 {
    let ticks = rows.iter().filter(|r| r.speed <= threshold && r.x < corridor_length).count();
    ticks as f64 * dt
}

/// Exit tick minus entry tick, if the vehicle left the corridor.
pub fn travel_time(rows: &[TrajectoryRow], corridor_length: f64) -> Option<f64> {
    let entry = rows.first()?.t;
    rows.iter().find(|r| r.x >= corridor_length).map(|r| r.t - entry)
}

/// Time to collision, infinite unless the follower is closing in.
pub fn ttc(gap: f64, s_follow: f64, s_lead: f64) -> f64 {
    if s_follow > s_lead {
        gap / (s_follow - s_lead)
    } else {
        f64::INFINITY
    }
}

/// Sum of `(ttc_star - TTC) * dt` over all follower ticks with TTC at most `ttc_star`.
///
/// `rows` must hold every vehicle of a tick so the vehicle ahead can be found.
pub fn tit(rows: &[TrajectoryRow], corridor_length: f64, ttc_star: f64, dt: f64) -> f64 {
    let mut ticks: BTreeMap<(u64, usize), Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.x < corridor_length) {
        ticks.entry((r.t.to_bits(), r.lane)).or_default().push(r);
    }
    let mut total = 0.0;
    for lane in ticks.values_mut() {
        lane.sort_by(|a, b| b.x.total_cmp(&a.x));
        for pair in lane.windows(2) {
            let (lead, follow) = (pair[0], pair[1]);
            if !follow.gap.is_finite() {
                continue;
            }
            total += tit_term(ttc(follow.gap, follow.speed, lead.speed), ttc_star) * dt;
        }
    }
    total
}

fn tit_term(ttc: f64, ttc_star: f64) -> f64 {
    if (0.0..=ttc_star).contains(&ttc) {
        ttc_star - ttc
    } else {
        0.0
    }
}

/// Aggregates of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMoe {
    /// Vehicles counted (entered after the warm-up).
    pub vehicles: usize,
    /// s per vehicle
    pub mean_stopped_delay: f64,
    /// s per vehicle, over vehicles that left the corridor
    pub mean_travel_time: f64,
    /// Vehicles that left the corridor within the run.
    pub completed: usize,
    /// Aggregated over all vehicles, s.
    pub tit: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn counted(log: &TrajectoryLog, warm_up: f64) -> BTreeMap<CvId, Vec<TrajectoryRow>> {
    let mut per = log.by_vehicle();
    per.retain(|_, rows| rows[0].t >= warm_up);
    per
}

pub fn summarize(log: &TrajectoryLog, s: &MetricSettings) -> RunMoe {
    let per = counted(log, s.warm_up);
    let delays: Vec<f64> = per
        .values()
        .map(|r| stopped_delay(r, s.corridor_length, s.stopped_threshold, s.dt))
        .collect();
    let times: Vec<f64> = per.values().filter_map(|r| travel_time(r, s.corridor_length)).collect();
    let kept: Vec<TrajectoryRow> = log.rows.iter().filter(|r| r.t >= s.warm_up).copied().collect();
    RunMoe {
        vehicles: per.len(),
        mean_stopped_delay: mean(&delays),
        mean_travel_time: mean(&times),
        completed: times.len(),
        tit: tit(&kept, s.corridor_length, s.ttc_star, s.dt),
    }
}

/// `(baseline - advised) / baseline` in percent; undefined for a zero baseline.
pub fn reduction(baseline: f64, advised: f64) -> Option<f64> {
    if baseline > 0.0 {
        Some((baseline - advised) / baseline * 100.0)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMoe {
    pub density: DensityClass,
    pub seed: u64,
    pub baseline: RunMoe,
    pub advised: RunMoe,
    pub stopped_delay_reduction_pct: Option<f64>,
    pub travel_time_reduction_pct: Option<f64>,
    pub tit_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoeReport {
    pub rows: Vec<DensityMoe>,
}

/// Compare a baseline and an advised run over the same demand.
pub fn moe_report(
    density: DensityClass,
    seed: u64,
    baseline: &TrajectoryLog,
    advised: &TrajectoryLog,
    s: &MetricSettings,
) -> Result<DensityMoe, MetricsError> {
    let (b, a) = (baseline.vehicles(), advised.vehicles());
    if b != a {
        return Err(MetricsError::PopulationMismatch {
            only_baseline: b.difference(&a).count(),
            only_advised: a.difference(&b).count(),
        });
    }
    let base = summarize(baseline, s);
    let adv = summarize(advised, s);
    Ok(DensityMoe {
        density,
        seed,
        baseline: base,
        advised: adv,
        stopped_delay_reduction_pct: reduction(base.mean_stopped_delay, adv.mean_stopped_delay),
        travel_time_reduction_pct: reduction(base.mean_travel_time, adv.mean_travel_time),
        tit_reduction_pct: reduction(base.tit, adv.tit),
    })
}

/// Five-number summary plus mean, for box charts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        count: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
        mean: mean(&v),
    })
}

/// Per-vehicle stopped delays and travel times of the counted vehicles.
pub fn per_vehicle(log: &TrajectoryLog, s: &MetricSettings) -> (Vec<f64>, Vec<f64>) {
    let per = counted(log, s.warm_up);
    let delays = per
        .values()
        .map(|r| stopped_delay(r, s.corridor_length, s.stopped_threshold, s.dt))
        .collect();
    let times = per.values().filter_map(|r| travel_time(r, s.corridor_length)).collect();
    (delays, times)
}
