//! Microscopic traffic model: arrivals, car following, advised-speed tracking.

mod arrivals;
mod world;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arrivals::{spawn_traffic, Arrival, ArrivalSchedule};
pub use world::{SimParams, StepStats, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CvId(pub u32);

impl fmt::Display for CvId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "cv{}", self.0)
    }
}

/// Kinematic state of one connected vehicle. `x` is the front bumper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvState {
    pub id: CvId,
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
    /// Bumper-to-bumper gap to the vehicle ahead in the same lane; infinite if none.
    pub gap: f64,
    pub length: f64,
}

/// The filtered BSM a vehicle uploads each second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bsm {
    pub id: CvId,
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
    pub gap: f64,
}

impl From<&CvState> for Bsm {
    fn from(s: &CvState) -> Self {
        Bsm {
            id: s.id,
            lane: s.lane,
            x: s.x,
            speed: s.speed,
            gap: s.gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleCapabilities {
    /// Maximum acceleration, m/s^2 (positive).
    pub accel: f64,
    /// Maximum braking, m/s^2 (negative).
    pub brake: f64,
}

impl Default for VehicleCapabilities {
    fn default() -> Self {
        VehicleCapabilities { accel: 2.5, brake: -4.5 }
    }
}

impl VehicleCapabilities {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.accel > 0.0 && self.brake < 0.0 {
            Ok(())
        } else {
            Err(SimError::InvalidParams(format!(
                "need accel > 0 and brake < 0, got {} and {}",
                self.accel, self.brake
            )))
        }
    }
}

/// Parameters of the Krauss-style baseline driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarFollowing {
    /// Reaction time, s.
    pub tau: f64,
    /// Comfortable deceleration used in the safe-speed bound, m/s^2 (positive).
    pub decel: f64,
    /// Gap kept to a stopped predecessor, m.
    pub min_gap: f64,
}

impl Default for CarFollowing {
    fn default() -> Self {
        CarFollowing { tau: 1.0, decel: 4.5, min_gap: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityClass {
    Low,
    Medium,
    High,
}

impl DensityClass {
    pub const ALL: [DensityClass; 3] = [DensityClass::Low, DensityClass::Medium, DensityClass::High];

    /// Demand in passenger cars per hour per lane.
    pub fn flow(self) -> f64 {
        match self {
            DensityClass::Low => 633.0,
            DensityClass::Medium => 1267.0,
            DensityClass::High => 1900.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityClass::Low => "low",
            DensityClass::Medium => "medium",
            DensityClass::High => "high",
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficDemand {
    pub density: DensityClass,
    /// pc/h/ln
    pub flow: f64,
    pub vehicle_count: usize,
    pub seed: u64,
}

impl TrafficDemand {
    pub fn new(density: DensityClass, vehicle_count: usize, seed: u64) -> Self {
        TrafficDemand {
            density,
            flow: density.flow(),
            vehicle_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.vehicle_count == 0 {
            return Err(SimError::InvalidParams("vehicle_count must be positive".into()));
        }
        if self.flow != self.density.flow() {
            return Err(SimError::InvalidParams(format!(
                "{} density means {} pc/h/ln, got {}",
                self.density,
                self.density.flow(),
                self.flow
            )));
        }
        Ok(())
    }

    /// Mean headway within one lane, s.
    pub fn mean_headway(&self) -> f64 {
        3600.0 / self.flow
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("collision at t={t}: {follower} is {overlap:.3} m into {leader}")]
    Collision {
        t: f64,
        follower: CvId,
        leader: CvId,
        overlap: f64,
    },
}

/// Highest speed from which a driver with reaction time `tau` and braking
/// `decel` can still stop behind a predecessor at `pred_speed` that is `gap`
/// metres ahead, if that predecessor brakes at the same rate.
pub fn safe_speed(pred_speed: f64, gap: f64, tau: f64, decel: f64) -> f64 {
    let bt = decel * tau;
    let v = -bt + (bt * bt + pred_speed * pred_speed + 2.0 * decel * gap).sqrt();
    if v.is_nan() {
        0.0
    } else {
        v.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Stopping-distance oracle: follower keeps speed for `tau` then brakes at
    /// `decel`; predecessor brakes at `decel` from the start. Integrated at 1 ms.
    fn final_spacing(v: f64, pred_speed: f64, gap: f64, tau: f64, decel: f64) -> f64 {
        let dt = 1e-3;
        let (mut xf, mut vf, mut xp, mut vp) = (0.0, v, gap, pred_speed);
        let mut t = 0.0;
        while vf > 0.0 || vp > 0.0 {
            let af = if t < tau { 0.0 } else { -decel };
            let nvf = (vf + af * dt).max(0.0);
            let nvp = (vp - decel * dt).max(0.0);
            xf += 0.5 * (vf + nvf) * dt;
            xp += 0.5 * (vp + nvp) * dt;
            vf = nvf;
            vp = nvp;
            t += dt;
        }
        xp - xf
    }

    #[test]
    fn safe_speed_examples() {
        assert_eq!(safe_speed(0.0, 0.0, 1.0, 4.5), 0.0);
        let v = safe_speed(10.0, 22.0, 1.0, 4.0);
        assert_abs_diff_eq!(v, -4.0 + 292f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 13.088, epsilon = 1e-3);
        // stopping from exactly the safe speed ends bumper to bumper
        assert_abs_diff_eq!(final_spacing(v, 10.0, 22.0, 1.0, 4.0), 0.0, epsilon = 0.02);
        assert!(final_spacing(v + 0.2, 10.0, 22.0, 1.0, 4.0) < 0.0);
        assert!(safe_speed(0.0, 1e9, 1.0, 4.5) > 1e4);
    }

    #[test]
    fn demand_headways() {
        assert_abs_diff_eq!(TrafficDemand::new(DensityClass::High, 50, 1).mean_headway(), 1.8947, epsilon = 1e-4);
        assert_abs_diff_eq!(TrafficDemand::new(DensityClass::Low, 50, 1).mean_headway(), 5.6872, epsilon = 1e-4);
        let mut d = TrafficDemand::new(DensityClass::Medium, 50, 1);
        assert!(d.validate().is_ok());
        d.flow = 1000.0;
        assert!(d.validate().is_err());
        assert!(TrafficDemand::new(DensityClass::Low, 0, 1).validate().is_err());
    }
}
