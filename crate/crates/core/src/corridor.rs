//! Corridor geometry and fixed-time signal control.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorridorError {
    #[error("invalid roadway: {0}")]
    InvalidRoadway(String),
    #[error("invalid signal timing: {0}")]
    InvalidTiming(String),
    #[error("signal {signal} is {interval:?}: a current-green platoon needs a green indication")]
    NotGreen { signal: SignalId, interval: Interval },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignalId(pub u32);

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

/// Static description of one direction of the corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadwaySpec {
    /// Corridor length along the travel axis, m.
    pub length: f64,
    pub lanes_per_direction: usize,
    /// Posted speed limit, m/s.
    pub speed_limit: f64,
    /// Stop-line position of each signal, m from the corridor entry.
    pub stop_lines: Vec<f64>,
    /// How far below the limit a leader may be advised, m/s.
    pub advisory_floor_offset: f64,
}

impl RoadwaySpec {
    pub fn validate(&self) -> Result<(), CorridorError> {
        let bad = |m: String| Err(CorridorError::InvalidRoadway(m));
        if !(self.length > 0.0) {
            return bad(format!("length must be positive, got {}", self.length));
        }
        if self.lanes_per_direction == 0 {
            return bad("lanes_per_direction must be at least 1".into());
        }
        if !(self.advisory_floor_offset > 0.0 && self.speed_limit > self.advisory_floor_offset) {
            return bad(format!(
                "need speed_limit > advisory_floor_offset > 0, got {} and {}",
                self.speed_limit, self.advisory_floor_offset
            ));
        }
        let mut prev = 0.0;
        for (k, &s) in self.stop_lines.iter().enumerate() {
            if !(s > prev && s < self.length) {
                return bad(format!(
                    "stop line {k} at {s} m must be strictly increasing, positive and inside the corridor"
                ));
            }
            prev = s;
        }
        Ok(())
    }

    /// Lowest speed a leader may be advised.
    pub fn advisory_floor(&self) -> f64 {
        self.speed_limit - self.advisory_floor_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interval {
    Green,
    Yellow,
    Red,
}

/// Fixed-time plan for the instrumented approach.
///
/// From the approach's point of view a cycle is green, yellow, then red; the
/// red indication lasts `all_red + cross_phase_total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalTimingPlan {
    pub green: f64,
    pub yellow: f64,
    pub all_red: f64,
    /// Minimum green + yellow + all-red of every conflicting approach.
    pub cross_phase_total: f64,
    pub cycle_offset: f64,
}

impl Default for SignalTimingPlan {
    fn default() -> Self {
        SignalTimingPlan {
            green: 30.0,
            yellow: 3.0,
            all_red: 2.0,
            cross_phase_total: 25.0,
            cycle_offset: 0.0,
        }
    }
}

impl SignalTimingPlan {
    pub fn validate(&self) -> Result<(), CorridorError> {
        for (name, v) in [
            ("green", self.green),
            ("yellow", self.yellow),
            ("all_red", self.all_red),
            ("cross_phase_total", self.cross_phase_total),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CorridorError::InvalidTiming(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.cycle_offset.is_finite() {
            return Err(CorridorError::InvalidTiming("cycle_offset must be finite".into()));
        }
        Ok(())
    }

    pub fn cycle(&self) -> f64 {
        self.green + self.yellow + self.all_red + self.cross_phase_total
    }

    pub fn red_duration(&self) -> f64 {
        self.all_red + self.cross_phase_total
    }

    pub fn duration_of(&self, interval: Interval) -> f64 {
        match interval {
            Interval::Green => self.green,
            Interval::Yellow => self.yellow,
            Interval::Red => self.red_duration(),
        }
    }

    /// The approach's intervals in cycle order with their durations.
    pub fn intervals(&self) -> [(Interval, f64); 3] {
        [
            (Interval::Green, self.green),
            (Interval::Yellow, self.yellow),
            (Interval::Red, self.red_duration()),
        ]
    }

    /// SPaT lookup: which interval is showing at `t` and how long it has left.
    pub fn phase_at(&self, signal_id: SignalId, t: f64) -> SignalPhaseState {
        let cycle = self.cycle();
        let mut local = (t - self.cycle_offset).rem_euclid(cycle);
        // rem_euclid may round up to exactly `cycle`
        if local >= cycle {
            local = 0.0;
        }
        for (interval, duration) in self.intervals() {
            if local < duration {
                return SignalPhaseState {
                    signal_id,
                    interval,
                    remaining: duration - local,
                };
            }
            local -= duration;
        }
        // only reachable through rounding at the very end of the red
        SignalPhaseState {
            signal_id,
            interval: Interval::Red,
            remaining: 0.0,
        }
    }

    /// Time still to elapse before the next green starts, seen from `state`.
    pub fn time_to_next_green(&self, state: &SignalPhaseState) -> f64 {
        match state.interval {
            Interval::Green => state.remaining + self.yellow + self.red_duration(),
            Interval::Yellow => state.remaining + self.red_duration(),
            Interval::Red => state.remaining,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPhaseState {
    pub signal_id: SignalId,
    pub interval: Interval,
    /// Time left in the current interval, s.
    pub remaining: f64,
}

/// Which green a platoon is aiming for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PassCase {
    /// Clears the stop line in the green that is showing now.
    CurrentGreen,
    /// Clears the stop line in the next green.
    NextGreen,
}

/// Available time to reach the stop line for a platoon of the given case.
///
/// The current-green case is only defined while the approach shows green.
/// The next-green case is the time until the next green begins, whatever
/// is showing now.
pub fn available_time(
    state: &SignalPhaseState,
    plan: &SignalTimingPlan,
    case: PassCase,
) -> Result<f64, CorridorError> {
    match case {
        PassCase::CurrentGreen if state.interval == Interval::Green => Ok(state.remaining),
        PassCase::CurrentGreen => Err(CorridorError::NotGreen {
            signal: state.signal_id,
            interval: state.interval,
        }),
        PassCase::NextGreen => Ok(plan.time_to_next_green(state)),
    }
}

/// A signal placed on the corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: SignalId,
    pub stop_line: f64,
    pub plan: SignalTimingPlan,
}

impl Signal {
    pub fn phase_at(&self, t: f64) -> SignalPhaseState {
        self.plan.phase_at(self.id, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S0: SignalId = SignalId(0);

    fn plan() -> SignalTimingPlan {
        SignalTimingPlan::default()
    }

    #[test]
    fn phase_lookup_examples() {
        let p = plan();
        assert_eq!(p.cycle(), 60.0);
        let at0 = p.phase_at(S0, 0.0);
        assert_eq!((at0.interval, at0.remaining), (Interval::Green, 30.0));
        let at31 = p.phase_at(S0, 31.0);
        assert_eq!((at31.interval, at31.remaining), (Interval::Yellow, 2.0));
        let at60 = p.phase_at(S0, 60.0);
        assert_eq!((at60.interval, at60.remaining), (Interval::Green, 30.0));
        let at40 = p.phase_at(S0, 40.0);
        assert_eq!((at40.interval, at40.remaining), (Interval::Red, 20.0));
    }

    #[test]
    fn offset_shifts_cycle() {
        let p = SignalTimingPlan { cycle_offset: 10.0, ..plan() };
        let s = p.phase_at(S0, 5.0);
        // local time 55 s into the cycle: red with 5 s left
        assert_eq!((s.interval, s.remaining), (Interval::Red, 5.0));
    }

    #[test]
    fn remaining_decreases_within_interval() {
        let p = plan();
        let a = p.phase_at(S0, 3.0);
        let b = p.phase_at(S0, 4.0);
        assert_eq!(a.interval, b.interval);
        assert_eq!(a.remaining - b.remaining, 1.0);
    }

    #[test]
    fn available_time_examples() {
        let p = plan();
        let green12 = SignalPhaseState { signal_id: S0, interval: Interval::Green, remaining: 12.0 };
        assert_eq!(available_time(&green12, &p, PassCase::CurrentGreen).unwrap(), 12.0);
        // yellow + all-red + cross phases = 30 s
        assert_eq!(available_time(&green12, &p, PassCase::NextGreen).unwrap(), 42.0);
        let red5 = SignalPhaseState { signal_id: S0, interval: Interval::Red, remaining: 5.0 };
        assert_eq!(available_time(&red5, &p, PassCase::NextGreen).unwrap(), 5.0);
        assert_eq!(
            available_time(&red5, &p, PassCase::CurrentGreen),
            Err(CorridorError::NotGreen { signal: S0, interval: Interval::Red })
        );
        let yellow2 = SignalPhaseState { signal_id: S0, interval: Interval::Yellow, remaining: 2.0 };
        assert_eq!(available_time(&yellow2, &p, PassCase::NextGreen).unwrap(), 29.0);
    }

    #[test]
    fn interval_durations_sum_to_cycle() {
        let p = SignalTimingPlan { green: 27.5, yellow: 4.0, all_red: 1.5, cross_phase_total: 33.0, cycle_offset: 3.0 };
        let total: f64 = p.intervals().iter().map(|(_, d)| d).sum();
        assert_eq!(total, p.cycle());
        // walking the cycle one second at a time visits each interval for its duration
        let mut counts = [0u32; 3];
        for k in 0..(p.cycle() * 2.0) as u32 {
            let s = p.phase_at(S0, f64::from(k) * 0.5 + 3.0);
            counts[s.interval as usize] += 1;
        }
        assert_eq!(counts, [55, 8, 69]);
    }

    #[test]
    fn roadway_validation() {
        let ok = RoadwaySpec {
            length: 2414.016,
            lanes_per_direction: 2,
            speed_limit: 15.6464,
            stop_lines: vec![700.0, 1400.0, 2100.0],
            advisory_floor_offset: 4.4704,
        };
        assert!(ok.validate().is_ok());
        let unordered = RoadwaySpec { stop_lines: vec![700.0, 600.0], ..ok.clone() };
        assert!(unordered.validate().is_err());
        let outside = RoadwaySpec { stop_lines: vec![3000.0], ..ok.clone() };
        assert!(outside.validate().is_err());
        let floor = RoadwaySpec { advisory_floor_offset: 20.0, ..ok };
        assert!(floor.validate().is_err());
        assert!(SignalTimingPlan { yellow: 0.0, ..plan() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn phase_is_periodic(t in 0.0f64..10_000.0, g in 5.0f64..60.0, cross in 5.0f64..60.0, off in -50.0f64..50.0) {
            let p = SignalTimingPlan { green: g, cross_phase_total: cross, cycle_offset: off, ..plan() };
            let a = p.phase_at(S0, t);
            let b = p.phase_at(S0, t + p.cycle());
            prop_assert_eq!(a.interval, b.interval);
            prop_assert!((a.remaining - b.remaining).abs() < 1e-6);
            prop_assert!(a.remaining >= 0.0 && a.remaining <= p.duration_of(a.interval) + 1e-9);
        }

        #[test]
        fn next_green_never_shorter_than_current(t in 0.0f64..1_000.0) {
            let p = plan();
            let s = p.phase_at(S0, t);
            if let Ok(cur) = available_time(&s, &p, PassCase::CurrentGreen) {
                prop_assert!(available_time(&s, &p, PassCase::NextGreen).unwrap() >= cur);
            }
        }
    }
}
