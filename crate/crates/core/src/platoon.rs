//! Splitting the vehicles approaching a signal into platoons.

use serde::{Deserialize, Serialize};

use crate::corridor::{available_time, Interval, PassCase, SignalId, SignalPhaseState, SignalTimingPlan};
use crate::traffic::Bsm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlatoonCase {
    /// Can clear the stop line in the green that is showing.
    CaseI,
    /// Aims for the next green.
    CaseII,
    /// Not served this tick.
    Unassigned,
}

impl PlatoonCase {
    pub fn pass_case(self) -> Option<PassCase> {
        match self {
            PlatoonCase::CaseI => Some(PassCase::CurrentGreen),
            PlatoonCase::CaseII => Some(PassCase::NextGreen),
            PlatoonCase::Unassigned => None,
        }
    }
}

/// One group of same-lane vehicles, nearest to the stop line first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Platoon {
    pub signal_id: SignalId,
    pub lane: usize,
    pub case: PlatoonCase,
    pub members: Vec<Bsm>,
    /// Distance of each member to the stop line, m.
    pub distances: Vec<f64>,
}

impl Platoon {
    pub fn leader(&self) -> &Bsm {
        &self.members[0]
    }

    pub fn followers(&self) -> &[Bsm] {
        &self.members[1..]
    }

    pub fn leader_distance(&self) -> f64 {
        self.distances[0]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Shortest time to cover `d` starting at `speed`, accelerating at `accel`
/// up to `s_max` and cruising from there.
pub fn min_time_to_intersection(speed: f64, d: f64, s_max: f64, accel: f64) -> f64 {
    let accel_dist = (s_max * s_max - speed * speed) / (2.0 * accel);
    if d >= accel_dist {
        (s_max - speed) / accel + (d - accel_dist) / s_max
    } else {
        (-speed + (speed * speed + 2.0 * accel * d).sqrt()) / accel
    }
}

/// Greedy nearest-first grouping of the vehicles upstream of one stop line.
///
/// Per lane: while the approach shows green the current-green platoon grows
/// as long as the next vehicle can reach the line before the green ends.
/// One next-green platoon then takes the following vehicles that can reach
/// the line before the next green starts. Whoever is left is returned as an
/// `Unassigned` group. Empty groups are omitted.
pub fn identify_platoons(
    bsms: &[Bsm],
    stop_line: f64,
    phase: &SignalPhaseState,
    plan: &SignalTimingPlan,
    s_max: f64,
    accel: f64,
) -> Vec<Platoon> {
    let mut lanes: Vec<usize> = bsms.iter().filter(|b| b.x <= stop_line).map(|b| b.lane).collect();
    lanes.sort_unstable();
    lanes.dedup();

    let next_green = available_time(phase, plan, PassCase::NextGreen).expect("next green is always defined");
    let mut out = Vec::new();
    for lane in lanes {
        let mut queue: Vec<(f64, Bsm)> = bsms
            .iter()
            .filter(|b| b.lane == lane && b.x <= stop_line)
            .map(|b| (stop_line - b.x, *b))
            .collect();
        queue.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));

        let mut rest = queue.into_iter().peekable();
        let mut take = |limit: f64, case: PlatoonCase| {
            let mut p = Platoon {
                signal_id: phase.signal_id,
                lane,
                case,
                members: Vec::new(),
                distances: Vec::new(),
            };
            while let Some((d, b)) = rest.next_if(|(d, b)| {
                limit.is_infinite() || min_time_to_intersection(b.speed.min(s_max), *d, s_max, accel) <= limit
            }) {
                p.members.push(b);
                p.distances.push(d);
            }
            p
        };
        if phase.interval == Interval::Green {
            out.push(take(phase.remaining, PlatoonCase::CaseI));
        }
        out.push(take(next_green, PlatoonCase::CaseII));
        out.push(take(f64::INFINITY, PlatoonCase::Unassigned));
    }
    out.retain(|p| !p.is_empty());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::CvId;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Accelerate-then-cruise integrated at 1 ms.
    fn integrated_time(speed: f64, d: f64, s_max: f64, accel: f64) -> f64 {
        let dt = 1e-3;
        let (mut x, mut v, mut t) = (0.0, speed, 0.0);
        while x < d {
            let nv = (v + accel * dt).min(s_max);
            let step = 0.5 * (v + nv) * dt;
            if x + step >= d {
                return t + (d - x) / step * dt;
            }
            x += step;
            v = nv;
            t += dt;
        }
        t
    }

    fn bsm(id: u32, lane: usize, x: f64, speed: f64) -> Bsm {
        Bsm { id: CvId(id), lane, x, speed, gap: f64::INFINITY }
    }

    fn phase(interval: Interval, remaining: f64) -> SignalPhaseState {
        SignalPhaseState { signal_id: SignalId(1), interval, remaining }
    }

    #[test]
    fn min_time_examples() {
        assert_abs_diff_eq!(min_time_to_intersection(15.0, 150.0, 15.0, 2.5), 10.0, epsilon = 1e-12);
        let t = min_time_to_intersection(10.0, 200.0, 15.0, 2.5);
        assert_abs_diff_eq!(t, 2.0 + 175.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t, integrated_time(10.0, 200.0, 15.0, 2.5), epsilon = 1e-3);
        let t = min_time_to_intersection(10.0, 20.0, 15.0, 2.5);
        assert_abs_diff_eq!(t, (-10.0 + 200f64.sqrt()) / 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 1.657, epsilon = 1e-3);
        assert_abs_diff_eq!(t, integrated_time(10.0, 20.0, 15.0, 2.5), epsilon = 1e-3);
    }

    #[test]
    fn branches_agree_at_switch() {
        for (s, s_max, a) in [(0.0f64, 15.6464f64, 2.5f64), (10.0, 15.0, 2.5), (3.3, 20.0, 1.1)] {
            let d = (s_max * s_max - s * s) / (2.0 * a);
            let cruise = (s_max - s) / a;
            let short = (-s + (s * s + 2.0 * a * d).sqrt()) / a;
            assert!((cruise - short).abs() < 1e-9);
            assert!((min_time_to_intersection(s, d, s_max, a) - min_time_to_intersection(s, d * (1.0 - 1e-12), s_max, a)).abs() < 1e-9);
        }
    }

    #[test]
    fn all_fit_current_green() {
        let plan = SignalTimingPlan::default();
        let bsms = vec![bsm(0, 0, 900.0, 15.0), bsm(1, 0, 880.0, 15.0), bsm(2, 0, 860.0, 15.0)];
        let ps = identify_platoons(&bsms, 1000.0, &phase(Interval::Green, 20.0), &plan, 15.6464, 2.5);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].case, PlatoonCase::CaseI);
        assert_eq!(ps[0].len(), 3);
        assert_eq!(ps[0].leader().id, CvId(0));
    }

    #[test]
    fn red_has_no_current_green_platoon() {
        let plan = SignalTimingPlan::default();
        let bsms = vec![bsm(0, 0, 900.0, 15.0), bsm(1, 0, 880.0, 15.0), bsm(2, 0, 100.0, 15.0)];
        let ps = identify_platoons(&bsms, 1000.0, &phase(Interval::Red, 20.0), &plan, 15.6464, 2.5);
        assert!(ps.iter().all(|p| p.case != PlatoonCase::CaseI));
        assert_eq!(ps[0].case, PlatoonCase::CaseII);
        assert_eq!(ps[0].members.iter().map(|b| b.id).collect::<Vec<_>>(), vec![CvId(0), CvId(1)]);
        assert_eq!(ps[1].case, PlatoonCase::Unassigned);
        assert_eq!(ps[1].leader().id, CvId(2));
    }

    #[test]
    fn splits_by_available_time() {
        // A needs 4 s, B needs 8 s; green has 5 s left, the next green is 35 s away
        let plan = SignalTimingPlan::default();
        let s = 15.0;
        let bsms = vec![bsm(0, 1, 1000.0 - 4.0 * s, s), bsm(1, 1, 1000.0 - 8.0 * s, s)];
        let ph = phase(Interval::Green, 5.0);
        assert_abs_diff_eq!(available_time(&ph, &plan, PassCase::NextGreen).unwrap(), 35.0);
        let ps = identify_platoons(&bsms, 1000.0, &ph, &plan, s, 2.5);
        assert_eq!(ps.len(), 2);
        assert_eq!((ps[0].case, ps[0].leader().id, ps[0].len()), (PlatoonCase::CaseI, CvId(0), 1));
        assert_eq!((ps[1].case, ps[1].leader().id, ps[1].len()), (PlatoonCase::CaseII, CvId(1), 1));
    }

    #[test]
    fn downstream_vehicles_are_ignored() {
        let plan = SignalTimingPlan::default();
        let bsms = vec![bsm(0, 0, 1001.0, 15.0), bsm(1, 0, 1000.0, 0.0)];
        let ps = identify_platoons(&bsms, 1000.0, &phase(Interval::Red, 5.0), &plan, 15.6464, 2.5);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].members[0].id, CvId(1));
        assert_eq!(ps[0].distances[0], 0.0);
    }

    fn interval() -> impl Strategy<Value = Interval> {
        prop_oneof![Just(Interval::Green), Just(Interval::Yellow), Just(Interval::Red)]
    }

    proptest! {
        #[test]
        fn partition_and_feasibility(
            raw in prop::collection::vec((0usize..2, 0.0..1000.0f64, 0.0..15.6464f64), 0..30),
            iv in interval(),
            remaining in 0.1..30.0f64,
        ) {
            let plan = SignalTimingPlan::default();
            let (s_max, a) = (15.6464, 2.5);
            let bsms: Vec<Bsm> = raw.iter().enumerate().map(|(i, &(l, x, s))| bsm(i as u32, l, x, s)).collect();
            let ph = phase(iv, remaining);
            let ps = identify_platoons(&bsms, 1000.0, &ph, &plan, s_max, a);

            let mut seen: Vec<u32> = ps.iter().flat_map(|p| p.members.iter().map(|b| b.id.0)).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..bsms.len() as u32).collect::<Vec<_>>());

            for p in &ps {
                prop_assert!(p.distances.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(p.members.iter().all(|b| b.lane == p.lane));
                if p.case == PlatoonCase::CaseI {
                    prop_assert_eq!(iv, Interval::Green);
                }
                if let Some(case) = p.case.pass_case() {
                    let limit = available_time(&ph, &plan, case).unwrap();
                    let last = p.members.len() - 1;
                    let t = min_time_to_intersection(p.members[last].speed, p.distances[last], s_max, a);
                    prop_assert!(t <= limit);
                    // the first vehicle left behind could not make it
                    let next = ps.iter().find(|q| q.lane == p.lane && q.case > p.case);
                    if let Some(q) = next {
                        let t = min_time_to_intersection(q.members[0].speed, q.distances[0], s_max, a);
                        prop_assert!(t > limit);
                    }
                }
            }
        }
    }
}
