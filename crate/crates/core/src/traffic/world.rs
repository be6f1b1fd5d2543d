use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{safe_speed, Arrival, ArrivalSchedule, Bsm, CarFollowing, CvId, CvState, SimError, VehicleCapabilities};
use crate::corridor::{Interval, RoadwaySpec, Signal};

/// The already-updated vehicle ahead in the lane.
#[derive(Debug, Clone, Copy)]
struct Ahead {
    id: CvId,
    speed_before: f64,
    new_x: f64,
    length: f64,
}

/// Safe speed for a step integrated with the average of old and new speed.
///
/// Over the step the vehicle covers `(speed + v) / 2 * dt` before it can react
/// again, so the stopping condition is checked on the gap left after that
/// travel, with half a step (plus any reaction time beyond one step) at `v`.
fn stepped_safe_speed(pred_speed: f64, gap: f64, speed: f64, f: CarFollowing, dt: f64) -> f64 {
    let reaction = 0.5 * dt + (f.tau - dt).max(0.0);
    safe_speed(pred_speed, gap - 0.5 * speed * dt, reaction, f.decel)
}

/// Static inputs of a traffic simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub roadway: RoadwaySpec,
    pub signals: Vec<Signal>,
    pub caps: VehicleCapabilities,
    pub following: CarFollowing,
    pub vehicle_length: f64,
    pub dt: f64,
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        self.roadway
            .validate()
            .map_err(|e| SimError::InvalidParams(e.to_string()))?;
        self.caps.validate()?;
        if self.signals.len() != self.roadway.stop_lines.len() {
            return Err(SimError::InvalidParams(format!(
                "{} signals for {} stop lines",
                self.signals.len(),
                self.roadway.stop_lines.len()
            )));
        }
        for s in &self.signals {
            s.plan.validate().map_err(|e| SimError::InvalidParams(e.to_string()))?;
        }
        let f = &self.following;
        if !(f.tau > 0.0 && f.decel > 0.0 && f.min_gap >= 0.0) {
            return Err(SimError::InvalidParams("car following needs tau > 0, decel > 0, min_gap >= 0".into()));
        }
        if !(self.vehicle_length > 0.0 && self.dt > 0.0) {
            return Err(SimError::InvalidParams("vehicle_length and dt must be positive".into()));
        }
        Ok(())
    }

    /// The first signal whose stop line is at or ahead of `x`.
    pub fn next_signal(&self, x: f64) -> Option<&Signal> {
        self.signals.iter().find(|s| s.stop_line >= x)
    }
}

/// Counters for events that the safety layer had to handle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    /// Speed drops larger than the braking capability (collision guard engaged).
    pub hard_brakes: u64,
    /// Stop-line crossings during red by vehicles unable to stop.
    pub red_crossings: u64,
    /// Ticks an arrival had to wait because the entry was occupied.
    pub insertion_waits: u64,
}

/// All vehicles currently in the corridor.
#[derive(Debug, Clone)]
pub struct World {
    params: SimParams,
    t: f64,
    /// Per lane, front vehicle first.
    lanes: Vec<Vec<CvState>>,
    pending: Vec<VecDeque<Arrival>>,
    entered_at: BTreeMap<CvId, f64>,
    just_exited: Vec<CvState>,
    stats: StepStats,
}

impl World {
    pub fn new(params: SimParams, schedule: &ArrivalSchedule) -> Result<Self, SimError> {
        params.validate()?;
        let lanes = params.roadway.lanes_per_direction;
        let mut pending = vec![VecDeque::new(); lanes];
        for a in &schedule.arrivals {
            if a.lane >= lanes {
                return Err(SimError::InvalidParams(format!("{} scheduled on lane {} of {lanes}", a.id, a.lane)));
            }
            pending[a.lane].push_back(*a);
        }
        let mut w = World {
            params,
            t: 0.0,
            lanes: vec![Vec::new(); lanes],
            pending,
            entered_at: BTreeMap::new(),
            just_exited: Vec::new(),
            stats: StepStats::default(),
        };
        w.insert_arrivals();
        Ok(w)
    }

    /// Test and tooling constructor from explicit vehicle states (front first per lane).
    pub fn from_states(params: SimParams, t: f64, mut states: Vec<CvState>) -> Result<Self, SimError> {
        params.validate()?;
        let mut lanes = vec![Vec::new(); params.roadway.lanes_per_direction];
        states.sort_by(|a, b| b.x.total_cmp(&a.x));
        for s in states {
            let lane = lanes
                .get_mut(s.lane)
                .ok_or_else(|| SimError::InvalidParams(format!("{} on missing lane {}", s.id, s.lane)))?;
            lane.push(s);
        }
        let entered_at = lanes.iter().flatten().map(|s| (s.id, t)).collect();
        let pending = vec![VecDeque::new(); lanes.len()];
        let mut w = World {
            params,
            t,
            lanes,
            pending,
            entered_at,
            just_exited: Vec::new(),
            stats: StepStats::default(),
        };
        w.recompute_gaps()?;
        Ok(w)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &CvState> {
        self.lanes.iter().flatten()
    }

    pub fn vehicle(&self, id: CvId) -> Option<&CvState> {
        self.vehicles().find(|v| v.id == id)
    }

    /// Vehicles that left the corridor during the last step, at their exit position.
    pub fn just_exited(&self) -> &[CvState] {
        &self.just_exited
    }

    pub fn entered_at(&self, id: CvId) -> Option<f64> {
        self.entered_at.get(&id).copied()
    }

    /// Nothing left in the corridor or waiting to enter.
    pub fn is_drained(&self) -> bool {
        self.lanes.iter().all(Vec::is_empty) && self.pending.iter().all(VecDeque::is_empty)
    }

    /// One filtered BSM per vehicle in the corridor, lane by lane, front first.
    pub fn bsm_snapshot(&self) -> Vec<Bsm> {
        self.vehicles().map(Bsm::from).collect()
    }

    /// Advance without advisories.
    pub fn step_baseline(&mut self) -> Result<(), SimError> {
        self.step_advised(&BTreeMap::new())
    }

    /// Advance one step; vehicles present in `advisories` track their advised
    /// speed, subject to the same safety limits as unadvised vehicles.
    pub fn step_advised(&mut self, advisories: &BTreeMap<CvId, f64>) -> Result<(), SimError> {
        let dt = self.params.dt;
        let t = self.t;
        self.just_exited.clear();

        for lane in 0..self.lanes.len() {
            let mut ahead: Option<Ahead> = None;
            for idx in 0..self.lanes[lane].len() {
                let cv = self.lanes[lane][idx];
                let (speed, advance) = self.next_motion(&cv, ahead, advisories.get(&cv.id).copied(), t)?;
                let moved = &mut self.lanes[lane][idx];
                ahead = Some(Ahead {
                    id: moved.id,
                    speed_before: moved.speed,
                    new_x: moved.x + advance,
                    length: moved.length,
                });
                moved.speed = speed;
                moved.x += advance;
            }
        }

        self.t = t + dt;
        let length = self.params.roadway.length;
        for lane in &mut self.lanes {
            while lane.first().is_some_and(|v| v.x >= length) {
                let mut gone = lane.remove(0);
                gone.gap = f64::INFINITY;
                self.just_exited.push(gone);
            }
        }
        self.recompute_gaps()?;
        self.insert_arrivals();
        Ok(())
    }

    fn next_motion(
        &mut self,
        cv: &CvState,
        ahead: Option<Ahead>,
        advised: Option<f64>,
        t: f64,
    ) -> Result<(f64, f64), SimError> {
        let p = &self.params;
        let dt = p.dt;
        let caps = p.caps;
        let f = p.following;
        let s = cv.speed;
        let s_max = p.roadway.speed_limit;

        let mut v = match advised {
            Some(adv) => adv.clamp(s + caps.brake * dt, s + caps.accel * dt).min(s_max),
            None => (s + caps.accel * dt).min(s_max),
        };

        // room until the predecessor's new rear bumper
        let mut room = f64::INFINITY;
        if let Some(a) = ahead {
            v = v.min(stepped_safe_speed(a.speed_before, cv.gap - f.min_gap, s, f, dt));
            room = a.new_x - a.length - cv.x;
            if room < -1e-9 {
                return Err(SimError::Collision {
                    t,
                    follower: cv.id,
                    leader: a.id,
                    overlap: -room,
                });
            }
        }

        // stop line
        let mut red_run = false;
        if let Some(signal) = p.next_signal(cv.x) {
            let phase = signal.phase_at(t);
            if phase.interval != Interval::Green {
                let d = signal.stop_line - cv.x;
                let v_line = stepped_safe_speed(0.0, d, s, f, dt);
                let can_stop = v_line >= s - f.decel * dt - 1e-6;
                if can_stop {
                    v = v.min(v_line);
                    room = room.min(d);
                } else if phase.interval == Interval::Red {
                    red_run = true;
                }
            }
        }

        v = v.max(0.0);
        let mut advance = 0.5 * (s + v) * dt;
        if advance > room {
            v = (2.0 * room / dt - s).max(0.0);
            advance = (0.5 * (s + v) * dt).min(room.max(0.0));
        }
        if v < s + caps.brake * dt - 1e-9 {
            self.stats.hard_brakes += 1;
        }
        if red_run {
            if let Some(signal) = p.next_signal(cv.x) {
                if cv.x + advance >= signal.stop_line {
                    self.stats.red_crossings += 1;
                }
            }
        }
        Ok((v, advance))
    }

    fn recompute_gaps(&mut self) -> Result<(), SimError> {
        for lane in &mut self.lanes {
            for i in 0..lane.len() {
                if i == 0 {
                    lane[i].gap = f64::INFINITY;
                    continue;
                }
                let (lead, follow) = (lane[i - 1], lane[i]);
                let gap = lead.x - lead.length - follow.x;
                if gap < -1e-9 {
                    return Err(SimError::Collision {
                        t: self.t,
                        follower: follow.id,
                        leader: lead.id,
                        overlap: -gap,
                    });
                }
                lane[i].gap = gap.max(0.0);
            }
        }
        Ok(())
    }

    fn insert_arrivals(&mut self) {
        let t = self.t;
        let s_max = self.params.roadway.speed_limit;
        let f = self.params.following;
        let length = self.params.vehicle_length;
        for lane in 0..self.lanes.len() {
            let Some(next) = self.pending[lane].front().copied() else {
                continue;
            };
            if next.time > t + 1e-9 {
                continue;
            }
            let speed = match self.lanes[lane].last() {
                None => s_max,
                Some(last) => {
                    let gap = last.x - last.length;
                    if gap < f.min_gap {
                        self.stats.insertion_waits += 1;
                        continue;
                    }
                    safe_speed(last.speed, gap - f.min_gap, f.tau, f.decel).min(s_max)
                }
            };
            self.pending[lane].pop_front();
            let gap = self.lanes[lane].last().map_or(f64::INFINITY, |l| l.x - l.length);
            self.lanes[lane].push(CvState {
                id: next.id,
                lane,
                x: 0.0,
                speed,
                gap,
                length,
            });
            self.entered_at.insert(next.id, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{SignalId, SignalTimingPlan};
    use crate::traffic::{spawn_traffic, DensityClass, TrafficDemand};

    const S_MAX: f64 = 15.6464;

    fn params(signals: Vec<Signal>) -> SimParams {
        SimParams {
            roadway: RoadwaySpec {
                length: 2414.016,
                lanes_per_direction: 2,
                speed_limit: S_MAX,
                stop_lines: signals.iter().map(|s| s.stop_line).collect(),
                advisory_floor_offset: 4.4704,
            },
            signals,
            caps: VehicleCapabilities::default(),
            following: CarFollowing::default(),
            vehicle_length: 5.0,
            dt: 1.0,
        }
    }

    /// A signal at `stop_line` that stays red for the first `red` seconds.
    fn red_signal(stop_line: f64, red: f64) -> Signal {
        let mut plan = SignalTimingPlan { cross_phase_total: 200.0, ..SignalTimingPlan::default() };
        plan.cycle_offset = red - plan.cycle();
        Signal { id: SignalId(0), stop_line, plan }
    }

    fn cv(id: u32, x: f64, speed: f64) -> CvState {
        CvState { id: CvId(id), lane: 0, x, speed, gap: f64::INFINITY, length: 5.0 }
    }

    #[test]
    fn lone_vehicle_holds_speed_limit() {
        let mut w = World::from_states(params(vec![]), 0.0, vec![cv(0, 0.0, S_MAX)]).unwrap();
        for _ in 0..100 {
            w.step_baseline().unwrap();
            if let Some(v) = w.vehicle(CvId(0)) {
                assert_eq!(v.speed, S_MAX);
            }
        }
    }

    #[test]
    fn converges_to_speed_limit_without_signals() {
        let mut w = World::from_states(params(vec![]), 0.0, vec![cv(0, 0.0, 0.0)]).unwrap();
        for _ in 0..20 {
            w.step_baseline().unwrap();
        }
        assert_eq!(w.vehicle(CvId(0)).unwrap().speed, S_MAX);
    }

    #[test]
    fn stops_before_red_line() {
        let sig = red_signal(200.0, 50.0);
        assert_eq!(sig.phase_at(0.0).interval, Interval::Red);
        let mut w = World::from_states(params(vec![sig]), 0.0, vec![cv(0, 0.0, 15.0)]).unwrap();
        for _ in 0..45 {
            w.step_baseline().unwrap();
            let v = w.vehicle(CvId(0)).unwrap();
            assert!(v.x <= 200.0 + 1e-9);
        }
        let v = w.vehicle(CvId(0)).unwrap();
        assert_eq!(v.speed, 0.0);
        assert!(200.0 - v.x < 2.0, "stopped {} m short", 200.0 - v.x);
        assert_eq!(w.stats().red_crossings, 0);
    }

    #[test]
    fn follower_stops_behind_stopped_vehicle() {
        let states = vec![cv(0, 300.0, 0.0), cv(1, 150.0, 15.0)];
        let mut w = World::from_states(params(vec![]), 0.0, states).unwrap();
        // hold the front vehicle in place by advising zero
        let hold = BTreeMap::from([(CvId(0), 0.0)]);
        for _ in 0..40 {
            w.step_advised(&hold).unwrap();
            let f = w.vehicle(CvId(1)).unwrap();
            assert!(f.gap >= 0.0);
        }
        let f = w.vehicle(CvId(1)).unwrap();
        assert_eq!(f.speed, 0.0);
        assert!(f.gap >= 0.0 && f.gap < 3.0, "gap {}", f.gap);
        assert_eq!(w.stats().hard_brakes, 0);
    }

    #[test]
    fn advised_speed_is_rate_limited() {
        let mut p = params(vec![]);
        p.caps.brake = -4.0;
        let mut w = World::from_states(p.clone(), 0.0, vec![cv(0, 0.0, 15.0)]).unwrap();
        w.step_advised(&BTreeMap::from([(CvId(0), 11.18)])).unwrap();
        assert_eq!(w.vehicle(CvId(0)).unwrap().speed, 11.18);

        let mut w = World::from_states(p.clone(), 0.0, vec![cv(0, 0.0, 15.0)]).unwrap();
        w.step_advised(&BTreeMap::from([(CvId(0), 5.0)])).unwrap();
        assert_eq!(w.vehicle(CvId(0)).unwrap().speed, 11.0);

        let mut w = World::from_states(p, 0.0, vec![cv(0, 0.0, 12.0)]).unwrap();
        w.step_advised(&BTreeMap::from([(CvId(0), 12.0)])).unwrap();
        assert_eq!(w.vehicle(CvId(0)).unwrap().speed, 12.0);
    }

    #[test]
    fn safety_overrides_advisory() {
        let states = vec![cv(0, 100.0, 0.0), cv(1, 90.0, 5.0)];
        let mut w = World::from_states(params(vec![]), 0.0, states).unwrap();
        w.step_advised(&BTreeMap::from([(CvId(0), 0.0), (CvId(1), S_MAX)])).unwrap();
        let f = w.vehicle(CvId(1)).unwrap();
        assert!(f.speed < 5.0);
        assert!(f.gap >= 0.0);
    }

    #[test]
    fn snapshot_matches_state() {
        let empty = World::from_states(params(vec![]), 0.0, vec![]).unwrap();
        assert!(empty.bsm_snapshot().is_empty());
        let w = World::from_states(params(vec![]), 0.0, vec![cv(0, 100.0, 10.0), cv(1, 60.0, 10.0)]).unwrap();
        let bsms = w.bsm_snapshot();
        assert_eq!(bsms.len(), 2);
        assert_eq!(bsms[1].gap, 100.0 - 5.0 - 60.0);
        assert_eq!(bsms[0].gap, f64::INFINITY);
    }

    #[test]
    fn demand_run_is_collision_free_and_deterministic() {
        let signals = vec![
            Signal { id: SignalId(0), stop_line: 700.0, plan: SignalTimingPlan::default() },
            Signal { id: SignalId(1), stop_line: 1400.0, plan: SignalTimingPlan::default() },
        ];
        let p = params(signals);
        let sched = spawn_traffic(&TrafficDemand::new(DensityClass::High, 50, 5), 2);
        let run = || {
            let mut w = World::new(p.clone(), &sched).unwrap();
            let mut trace = Vec::new();
            for _ in 0..600 {
                w.step_baseline().unwrap();
                for v in w.vehicles() {
                    assert!(v.gap >= 0.0);
                    trace.push((v.id, v.x.to_bits(), v.speed.to_bits()));
                }
            }
            (trace, w.is_drained())
        };
        let (a, drained) = run();
        assert!(drained);
        assert_eq!(a, run().0);
    }
}
