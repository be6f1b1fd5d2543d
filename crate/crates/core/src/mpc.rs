//! One-step constant-time-gap control of platoon followers.
//!
//! Each follower's control is the mean of its current and advised speed over
//! the step. The leader's control is fixed by its own advisory. With gaps
//! measured bumper to bumper, a follower's gap after the step is
//!
//! ```text
//!     g_i' = g_i + (u_ahead - u_i) * dt
//! ```
//!
//! and the cost is the squared distance of all `g'` from their targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::SignalId;
use crate::leader::{Role, SpeedAdvisory};
use crate::platoon::Platoon;
use crate::qp::{solve_qp, QpError, QpProblem, QpStatus, DEFAULT_TOL};
use crate::traffic::{CvId, VehicleCapabilities};

/// Weight of the squared slack when the gap targets cannot all be met.
pub const SLACK_WEIGHT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtgPolicy {
    /// s
    pub time_gap: f64,
    /// m
    pub standstill_gap: f64,
}

impl Default for CtgPolicy {
    fn default() -> Self {
        CtgPolicy { time_gap: 2.0, standstill_gap: 2.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error("platoon has no followers")]
    NoFollowers,
    #[error("malformed gap system: {0}")]
    Malformed(String),
    #[error("follower QP failed: {0}")]
    Solver(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcStatus {
    Optimal,
    /// Some gap target was out of reach; the closest admissible controls are returned.
    Softened,
    /// Every control was pinned by its bounds.
    Degenerate,
}

pub fn target_gaps(speeds: &[f64], time_gap: f64, standstill_gap: f64) -> Vec<f64> {
    speeds.iter().map(|s| s * time_gap + standstill_gap).collect()
}

/// The follower problem of one platoon. Index 0 is the leader everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSystem {
    pub signal_id: SignalId,
    pub ids: Vec<CvId>,
    pub speeds: Vec<f64>,
    /// The leader entry is carried along but never used.
    pub gaps: Vec<f64>,
    pub targets: Vec<f64>,
    pub u_low: Vec<f64>,
    pub u_high: Vec<f64>,
    pub leader_control: f64,
    pub dt: f64,
    pub s_max: f64,
    pub now: f64,
}

impl GapSystem {
    pub fn followers(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }

    fn validate(&self) -> Result<(), MpcError> {
        let n = self.ids.len();
        if n < 2 {
            return Err(MpcError::NoFollowers);
        }
        for (name, len) in [
            ("speeds", self.speeds.len()),
            ("gaps", self.gaps.len()),
            ("targets", self.targets.len()),
            ("u_low", self.u_low.len()),
            ("u_high", self.u_high.len()),
        ] {
            if len != n {
                return Err(MpcError::Malformed(format!("{name} has {len} entries for {n} members")));
            }
        }
        for i in 1..n {
            if !(self.targets[i] > 0.0) {
                return Err(MpcError::Malformed(format!("target gap {i} is {}", self.targets[i])));
            }
            if !(self.u_low[i] <= self.u_high[i]) {
                return Err(MpcError::Malformed(format!(
                    "control bounds {i} are [{}, {}]",
                    self.u_low[i], self.u_high[i]
                )));
            }
            if !self.gaps[i].is_finite() {
                return Err(MpcError::Malformed(format!("gap {i} is {}", self.gaps[i])));
            }
        }
        if !(self.dt > 0.0) {
            return Err(MpcError::Malformed(format!("dt is {}", self.dt)));
        }
        Ok(())
    }

    /// Coupling of follower controls into next gaps, `g' - target = e + M u`.
    fn affine(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.followers();
        let dt = self.dt;
        let m = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                -dt
            } else if c + 1 == r {
                dt
            } else {
                0.0
            }
        });
        let e = DVector::from_fn(n, |r, _| {
            let i = r + 1;
            let lead = if r == 0 { dt * self.leader_control } else { 0.0 };
            self.gaps[i] - self.targets[i] + lead
        });
        (m, e)
    }

    /// Gaps after one step under follower controls `u` (leader entry left as is).
    pub fn predicted_gaps(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.gaps.clone();
        for i in 1..self.ids.len() {
            let ahead = if i == 1 { self.leader_control } else { u[i - 2] };
            out[i] = self.gaps[i] + (ahead - u[i - 1]) * self.dt;
        }
        out
    }

    /// Sum of squared deviations of predicted follower gaps from their targets.
    pub fn cost(&self, u: &[f64]) -> f64 {
        let g = self.predicted_gaps(u);
        (1..self.ids.len()).map(|i| (g[i] - self.targets[i]).powi(2)).sum()
    }
}

/// Set up the follower problem given the leader's advisory.
pub fn build_qp(
    platoon: &Platoon,
    leader_advisory: &SpeedAdvisory,
    dt: f64,
    caps: &VehicleCapabilities,
    s_max: f64,
    ctg: &CtgPolicy,
) -> Result<GapSystem, MpcError> {
    if platoon.followers().is_empty() {
        return Err(MpcError::NoFollowers);
    }
    let leader = platoon.leader();
    let reachable = leader_advisory
        .advised_speed
        .clamp(leader.speed + caps.brake * dt, leader.speed + caps.accel * dt)
        .clamp(0.0, s_max);
    let speeds: Vec<f64> = platoon.members.iter().map(|b| b.speed.clamp(0.0, s_max)).collect();
    let (u_low, u_high) = speeds
        .iter()
        .map(|&s| {
            let lo = (0.5 * s).max(s + 0.5 * caps.brake * dt);
            let hi = (0.5 * (s + s_max)).min(s + 0.5 * caps.accel * dt);
            (lo, hi)
        })
        .unzip();
    let system = GapSystem {
        signal_id: platoon.signal_id,
        ids: platoon.members.iter().map(|b| b.id).collect(),
        targets: target_gaps(&speeds, ctg.time_gap, ctg.standstill_gap),
        speeds,
        gaps: platoon.members.iter().map(|b| b.gap).collect(),
        u_low,
        u_high,
        leader_control: 0.5 * (leader.speed + reachable),
        dt,
        s_max,
        now: leader_advisory.generated_at,
    };
    system.validate()?;
    Ok(system)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerPlan {
    pub advisories: Vec<SpeedAdvisory>,
    /// Optimal follower controls, m/s.
    pub controls: Vec<f64>,
    /// Gap cost at the returned controls (slack penalty excluded).
    pub objective: f64,
    pub status: MpcStatus,
    pub iterations: usize,
}

/// Solve the follower problem and turn the controls into advisories.
pub fn optimize_followers(system: &GapSystem) -> Result<FollowerPlan, MpcError> {
    system.validate()?;
    let n = system.followers();
    let lo = DVector::from_row_slice(&system.u_low[1..]);
    let hi = DVector::from_row_slice(&system.u_high[1..]);
    let (m, e) = system.affine();

    let (controls, status, iterations, objective) = if (0..n).all(|i| lo[i] == hi[i]) {
        let u: Vec<f64> = lo.iter().copied().collect();
        let cost = system.cost(&u);
        (u, MpcStatus::Degenerate, 0, cost)
    } else {
        let mt = m.transpose();
        let hard = QpProblem {
            p: &mt * &m * 2.0,
            q: &mt * &e * 2.0,
            lower: lo.clone(),
            upper: hi.clone(),
            a: m.clone(),
            c: -&e,
        };
        let sol = solve_qp(&hard, DEFAULT_TOL)?;
        if sol.status == QpStatus::Optimal {
            let u: Vec<f64> = sol.x.iter().copied().collect();
            (u, MpcStatus::Optimal, sol.iterations, sol.objective + e.dot(&e))
        } else {
            // u then slack s >= 0 with rows M u + s >= -e
            let mut p = DMatrix::zeros(2 * n, 2 * n);
            p.view_mut((0, 0), (n, n)).copy_from(&(&mt * &m * 2.0));
            for j in 0..n {
                p[(n + j, n + j)] = 2.0 * SLACK_WEIGHT;
            }
            let mut q = DVector::zeros(2 * n);
            q.rows_mut(0, n).copy_from(&(&mt * &e * 2.0));
            let mut a = DMatrix::zeros(n, 2 * n);
            a.view_mut((0, 0), (n, n)).copy_from(&m);
            a.view_mut((0, n), (n, n)).fill_with_identity();
            let mut lower = DVector::zeros(2 * n);
            lower.rows_mut(0, n).copy_from(&lo);
            let mut upper = DVector::from_element(2 * n, f64::INFINITY);
            upper.rows_mut(0, n).copy_from(&hi);
            let soft = QpProblem { p, q, lower, upper, a, c: -&e };
            let sol = solve_qp(&soft, DEFAULT_TOL)?;
            if sol.status != QpStatus::Optimal {
                return Err(MpcError::Malformed("slack problem reported infeasible".into()));
            }
            let u: Vec<f64> = sol.x.rows(0, n).iter().copied().collect();
            let cost = system.cost(&u);
            (u, MpcStatus::Softened, sol.iterations, cost)
        }
    };

    let advisories = controls
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let i = k + 1;
            SpeedAdvisory {
                cv_id: system.ids[i],
                advised_speed: (2.0 * u - system.speeds[i]).clamp(0.0, system.s_max),
                generated_at: system.now,
                based_on: system.now,
                signal_id: system.signal_id,
                role: Role::Follower,
            }
        })
        .collect();
    Ok(FollowerPlan {
        advisories,
        controls,
        objective,
        status,
        iterations,
    })
}
