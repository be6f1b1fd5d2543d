//! Advised speed for platoon leaders.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::{RoadwaySpec, SignalId};
use crate::platoon::{Platoon, PlatoonCase};
use crate::traffic::{CvId, VehicleCapabilities};

/// Resolution of the leader speed search, m/s.
pub const GRID_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedAdvisory {
    pub cv_id: CvId,
    /// m/s
    pub advised_speed: f64,
    /// Simulation time the advisory was produced, s.
    pub generated_at: f64,
    /// Sample time of the BSM it was computed from, s.
    pub based_on: f64,
    pub signal_id: SignalId,
    pub role: Role,
}

#[derive(Debug, Error, PartialEq)]
pub enum LeaderError {
    #[error("advised speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("distance to the stop line must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("{0:?} platoons get no advisory")]
    Unassigned(PlatoonCase),
}

/// Time to reach the stop line `d` metres away when changing from `speed` to
/// `target` at the capability limit and then holding `target`.
///
/// If the line comes before `target` is reached, the time is that of the
/// speed change alone.
fn time_at_target(target: f64, speed: f64, d: f64, caps: &VehicleCapabilities) -> f64 {
    if target == speed {
        return d / target;
    }
    let a = if target > speed { caps.accel } else { caps.brake };
    let change_dist = (target * target - speed * speed) / (2.0 * a);
    if change_dist <= d {
        (target - speed) / a + (d - change_dist) / target
    } else {
        (-speed + (speed * speed + 2.0 * a * d).sqrt()) / a
    }
}

/// Extra time to the stop line when driving at `s_adv` instead of `s_max`.
pub fn leader_delay(
    s_adv: f64,
    speed: f64,
    d: f64,
    s_max: f64,
    caps: &VehicleCapabilities,
) -> Result<f64, LeaderError> {
    if !(s_adv > 0.0) {
        return Err(LeaderError::NonPositiveSpeed(s_adv));
    }
    if !(s_max > 0.0) {
        return Err(LeaderError::NonPositiveSpeed(s_max));
    }
    if !(d >= 0.0) {
        return Err(LeaderError::NegativeDistance(d));
    }
    if s_adv == s_max {
        return Ok(0.0);
    }
    Ok(time_at_target(s_adv, speed, d, caps) - time_at_target(s_max, speed, d, caps))
}

/// Feasible interval for a next-green leader advisory.
pub fn advisory_bounds(d: f64, t_avail: f64, s_max: f64, floor_offset: f64) -> (f64, f64) {
    let lb = s_max - floor_offset;
    let arrive_on_green = d / t_avail;
    let ub = if arrive_on_green >= lb { s_max.min(arrive_on_green) } else { lb };
    (lb, ub)
}

/// Delay-minimizing speed on `[lb, ub]`, searched on a `GRID_STEP` grid that
/// always includes `ub`. Ties go to the higher speed.
pub fn grid_argmin(
    lb: f64,
    ub: f64,
    speed: f64,
    d: f64,
    s_max: f64,
    caps: &VehicleCapabilities,
    step: f64,
) -> Result<f64, LeaderError> {
    let n = ((ub - lb) / step + 1e-9).floor() as usize;
    let mut best = (f64::INFINITY, lb);
    for k in 0..=n {
        let s = (lb + k as f64 * step).min(ub);
        let delay = leader_delay(s, speed, d, s_max, caps)?;
        if delay <= best.0 {
            best = (delay, s);
        }
    }
    let delay = leader_delay(ub, speed, d, s_max, caps)?;
    if delay <= best.0 {
        best = (delay, ub);
    }
    Ok(best.1)
}

/// Advisory for the platoon leader at simulation time `now`.
pub fn optimize_leader(
    platoon: &Platoon,
    t_avail: f64,
    roadway: &RoadwaySpec,
    caps: &VehicleCapabilities,
    now: f64,
) -> Result<SpeedAdvisory, LeaderError> {
    let leader = platoon.leader();
    let s_max = roadway.speed_limit;
    let advised_speed = match platoon.case {
        PlatoonCase::CaseI => s_max,
        PlatoonCase::CaseII => {
            let d = platoon.leader_distance();
            let (lb, ub) = advisory_bounds(d, t_avail, s_max, roadway.advisory_floor_offset);
            grid_argmin(lb, ub, leader.speed, d, s_max, caps, GRID_STEP)?
        }
        PlatoonCase::Unassigned => return Err(LeaderError::Unassigned(platoon.case)),
    };
    Ok(SpeedAdvisory {
        cv_id: leader.id,
        advised_speed,
        generated_at: now,
        based_on: now,
        signal_id: platoon.signal_id,
        role: Role::Leader,
    })
}
