//! Surrounding vehicles: intelligent-driver-model car following along fixed
//! routes, with conflict-point yielding inside the junction.

use crate::dynamics::{VehicleState, MAX_ACCEL};
use crate::error::{Error, Result};
use crate::math::Vec2;
use crate::road_net::{LaneId, RoadNetwork, Zone, ZONES};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Desired free-road speed (m/s).
    pub v0: f64,
    /// Desired time headway (s).
    pub t_headway: f64,
    /// Maximum comfortable acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable braking deceleration (m/s^2).
    pub b_comf: f64,
    /// Minimum standstill gap (m).
    pub s0: f64,
    /// Free-road acceleration exponent.
    pub delta_exp: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 9.0,
            t_headway: 1.5,
            a_max: 3.0,
            b_comf: 3.0,
            s0: 2.0,
            delta_exp: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    /// Initial speed range for spawned vehicles (m/s).
    pub speed_init_range: [f64; 2],
    /// Leader search horizon along the route (m).
    pub lookahead_m: f64,
    /// Standstill distance kept before a conflict point (m).
    pub conflict_margin_m: f64,
    /// Minimum same-lane spacing between spawned vehicles (m).
    pub spawn_gap_m: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            speed_init_range: [3.0, 7.0],
            lookahead_m: 35.0,
            conflict_margin_m: 3.0,
            spawn_gap_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderInfo {
    /// Bumper-to-bumper distance (m); 0 when overlapping.
    pub gap: f64,
    pub v_lead: f64,
    pub present: bool,
}

impl LeaderInfo {
    pub fn none() -> Self {
        LeaderInfo {
            gap: 0.0,
            v_lead: 0.0,
            present: false,
        }
    }
}

/// Closed-form IDM acceleration, clamped to the actuator box. A vanished gap
/// with a leader present returns maximal braking instead of dividing by zero.
pub fn idm_acceleration(v: f64, leader: &LeaderInfo, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta_exp);
    let interaction = if leader.present {
        if leader.gap <= 0.0 {
            return -MAX_ACCEL;
        }
        let dv = v - leader.v_lead;
        // The dynamic part is floored at zero so a much faster leader never
        // shrinks the desired gap below the standstill distance.
        let dynamic = v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt());
        let s_star = p.s0 + dynamic.max(0.0);
        (s_star / leader.gap).powi(2)
    } else {
        0.0
    };
    (p.a_max * (free - interaction)).clamp(-MAX_ACCEL, MAX_ACCEL)
}

/// Distance from a vehicle's center to the start of each lane on its
/// remaining route, paired with the lane id. The current lane appears with a
/// negative offset (`-s`).
fn route_lane_offsets(v: &VehicleState, net: &RoadNetwork, horizon: f64) -> Vec<(LaneId, f64)> {
    let mut out = Vec::new();
    let s = v.lane_progress(net);
    let mut offset = -s;
    for &lane in &v.route[v.seg..] {
        if offset > horizon {
            break;
        }
        out.push((lane, offset));
        offset += net.lane(lane).length();
    }
    out
}

/// Find the effective leader of `subject`: the nearest same-path vehicle
/// ahead, or a virtual stopped obstacle at a conflict point that a crossing
/// vehicle reaches first. The ego vehicle participates like any other.
pub fn find_leader(
    subject: usize,
    vehicles: &[VehicleState],
    net: &RoadNetwork,
    cfg: &TrafficConfig,
) -> LeaderInfo {
    let me = &vehicles[subject];
    let my_lanes = route_lane_offsets(me, net, cfg.lookahead_m);
    let mut best: Option<LeaderInfo> = None;
    let mut consider = |gap: f64, v_lead: f64| {
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(LeaderInfo {
                gap: gap.max(0.0),
                v_lead,
                present: true,
            });
        }
    };

    for (oi, other) in vehicles.iter().enumerate() {
        if oi == subject {
            continue;
        }
        let other_lane = other.current_lane();
        let other_s = other.lane_progress(net);

        // Same-path leader: the other vehicle sits on a lane of my route.
        if let Some((_, offset)) = my_lanes.iter().find(|(l, _)| *l == other_lane) {
            let dist = offset + other_s;
            if dist > 0.0 && dist <= cfg.lookahead_m {
                consider(dist - 0.5 * (me.length + other.length), other.v);
            }
        }

        // Conflict-point yielding: compare arc lengths to shared conflicts.
        let other_lanes = route_lane_offsets(other, net, cfg.lookahead_m);
        for &(a, da) in &my_lanes {
            for &(b, db) in &other_lanes {
                if a == b {
                    continue;
                }
                for &(s_a, s_b) in net.conflicts_between(a, b) {
                    let d_me = da + s_a;
                    let d_other = db + s_b;
                    if d_me <= 0.0 || d_me > cfg.lookahead_m {
                        continue;
                    }
                    // The other vehicle must not yet have cleared the point.
                    if d_other < -(other.length + 1.0) {
                        continue;
                    }
                    let yields = if (d_me - d_other).abs() < 0.5 {
                        // Tie: yield to traffic approaching from the right.
                        Vec2::from_heading(me.psi).cross(other.pos - me.pos) < 0.0
                    } else {
                        d_other < d_me
                    };
                    if yields {
                        consider(d_me - 0.5 * me.length - cfg.conflict_margin_m, 0.0);
                    }
                }
            }
        }
    }

    best.unwrap_or_else(LeaderInfo::none)
}

/// Place `n_sv` IDM vehicles on the non-lower approach lanes with random
/// routes and initial speeds, without initial overlap.
pub fn spawn_surrounding<R: Rng + ?Sized>(
    rng: &mut R,
    n_sv: u32,
    net: &RoadNetwork,
    cfg: &TrafficConfig,
    vehicle_length: f64,
    vehicle_width: f64,
) -> Result<Vec<VehicleState>> {
    let mut lanes: Vec<LaneId> = Vec::new();
    for zone in [Zone::Right, Zone::Upper, Zone::Left] {
        lanes.extend(net.approach_lanes(zone));
    }
    // Each lane fits a bounded number of vehicles at the minimum spawn gap.
    let per_lane = (net.lane(lanes[0]).length() / cfg.spawn_gap_m).floor() as u32;
    let capacity = per_lane * lanes.len() as u32;
    if n_sv > capacity {
        return Err(Error::SpawnCapacity {
            requested: n_sv,
            capacity,
        });
    }

    let mut placed: Vec<VehicleState> = Vec::new();
    for _ in 0..n_sv {
        let mut ok = false;
        for _attempt in 0..200 {
            let lane_id = lanes[rng.gen_range(0..lanes.len())];
            let lane = net.lane(lane_id);
            let s = rng.gen_range(0.0..lane.length() - 2.0);
            let pos = lane.centerline.point_at(s);
            if placed.iter().any(|p| p.pos.dist(pos) < cfg.spawn_gap_m) {
                continue;
            }
            let entry = lane.entry_zone;
            let entry_idx = ZONES.iter().position(|z| *z == entry).unwrap();
            let goal_candidates: Vec<Zone> = ZONES
                .iter()
                .copied()
                .filter(|z| ZONES.iter().position(|q| q == z).unwrap() != entry_idx)
                .collect();
            let goal = goal_candidates[rng.gen_range(0..goal_candidates.len())];
            let route = net.path_from(lane_id, goal).expect("route exists per topology");
            let v = rng.gen_range(cfg.speed_init_range[0]..=cfg.speed_init_range[1]);
            placed.push(VehicleState {
                pos,
                v,
                psi: lane.centerline.heading_at(s),
                length: vehicle_length,
                width: vehicle_width,
                route,
                seg: 0,
                target_lane_index: net.lane_index_in_carriageway(lane_id),
                target_speed: v,
            });
            ok = true;
            break;
        }
        if !ok {
            return Err(Error::SpawnCapacity {
                requested: n_sv,
                capacity: placed.len() as u32,
            });
        }
    }
    Ok(placed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_net::{build_intersection, GeometryConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> RoadNetwork {
        build_intersection(&GeometryConfig::default()).unwrap()
    }

    #[test]
    fn free_road_equilibrium() {
        let p = IdmParams::default();
        let a = idm_acceleration(p.v0, &LeaderInfo::none(), &p);
        assert!(a.abs() < 1e-9, "free-road accel at v0 was {a}");
    }

    #[test]
    fn standing_start() {
        let p = IdmParams::default();
        let a = idm_acceleration(0.0, &LeaderInfo::none(), &p);
        assert_abs_diff_eq!(a, p.a_max, epsilon = 1e-12);
    }

    #[test]
    fn worked_leader_example() {
        // v = 8, v0 = 10, leader at gap 20 with the same speed.
        let p = IdmParams {
            v0: 10.0,
            t_headway: 1.5,
            a_max: 3.0,
            b_comf: 3.0,
            s0: 2.0,
            delta_exp: 4.0,
        };
        let leader = LeaderInfo {
            gap: 20.0,
            v_lead: 8.0,
            present: true,
        };
        let a = idm_acceleration(8.0, &leader, &p);
        let expected = 3.0 * (1.0 - 0.8f64.powi(4) - (14.0 / 20.0f64).powi(2));
        assert_abs_diff_eq!(a, expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_gap_brakes_maximally() {
        let p = IdmParams::default();
        let leader = LeaderInfo {
            gap: 0.0,
            v_lead: 5.0,
            present: true,
        };
        assert_eq!(idm_acceleration(5.0, &leader, &p), -MAX_ACCEL);
    }

    #[test]
    fn single_vehicle_has_no_leader() {
        let net = net();
        let cfg = TrafficConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vehicles = spawn_surrounding(&mut rng, 1, &net, &cfg, 5.0, 2.0).unwrap();
        let leader = find_leader(0, &vehicles, &net, &cfg);
        assert!(!leader.present);
    }

    #[test]
    fn same_lane_leader_gap() {
        let net = net();
        let cfg = TrafficConfig::default();
        let lane_id = net.approach_lanes(Zone::Upper)[0];
        let lane = net.lane(lane_id);
        let mk = |s: f64, v: f64| VehicleState {
            pos: lane.centerline.point_at(s),
            v,
            psi: lane.centerline.heading_at(s),
            length: 5.0,
            width: 2.0,
            route: net.path_from(lane_id, Zone::Lower).unwrap(),
            seg: 0,
            target_lane_index: 0,
            target_speed: v,
        };
        let vehicles = vec![mk(10.0, 5.0), mk(25.0, 4.0)];
        let leader = find_leader(0, &vehicles, &net, &cfg);
        assert!(leader.present);
        assert_abs_diff_eq!(leader.gap, 15.0 - 5.0, epsilon = 1e-9);
        assert_abs_diff_eq!(leader.v_lead, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn crossing_vehicle_becomes_virtual_leader() {
        let net = net();
        let cfg = TrafficConfig::default();
        // Subject goes straight from the lower zone; the other goes straight
        // from the right zone and reaches the crossing first.
        let s_lane = net.approach_lanes(Zone::Lower)[0];
        let o_lane = net.approach_lanes(Zone::Right)[0];
        let mk = |lane_id: LaneId, dist_to_end: f64, goal: Zone| {
            let lane = net.lane(lane_id);
            let s = lane.length() - dist_to_end;
            VehicleState {
                pos: lane.centerline.point_at(s),
                v: 5.0,
                psi: lane.centerline.heading_at(s),
                length: 5.0,
                width: 2.0,
                route: net.path_from(lane_id, goal).unwrap(),
                seg: 0,
                target_lane_index: net.lane_index_in_carriageway(lane_id),
                target_speed: 5.0,
            }
        };
        let vehicles = vec![mk(s_lane, 20.0, Zone::Upper), mk(o_lane, 5.0, Zone::Left)];
        // Arc length to the conflict is clearly shorter for the other vehicle.
        let leader = find_leader(0, &vehicles, &net, &cfg);
        assert!(leader.present, "expected a virtual leader at the conflict");
        assert_eq!(leader.v_lead, 0.0);
        // The other vehicle, being first, must not yield to the subject.
        let other_leader = find_leader(1, &vehicles, &net, &cfg);
        assert!(other_leader.gap > leader.gap || !other_leader.present);
    }

    #[test]
    fn spawn_counts_and_determinism() {
        let net = net();
        let cfg = TrafficConfig::default();
        assert!(spawn_surrounding(&mut ChaCha8Rng::seed_from_u64(0), 0, &net, &cfg, 5.0, 2.0)
            .unwrap()
            .is_empty());
        let a = spawn_surrounding(&mut ChaCha8Rng::seed_from_u64(7), 4, &net, &cfg, 5.0, 2.0).unwrap();
        let b = spawn_surrounding(&mut ChaCha8Rng::seed_from_u64(7), 4, &net, &cfg, 5.0, 2.0).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pos, y.pos);
        }
    }

    #[test]
    fn spawn_capacity_error() {
        let net = net();
        let cfg = TrafficConfig::default();
        let err = spawn_surrounding(&mut ChaCha8Rng::seed_from_u64(0), 10_000, &net, &cfg, 5.0, 2.0);
        assert!(matches!(err, Err(Error::SpawnCapacity { .. })));
    }

    #[test]
    fn repeated_spawns_never_collide() {
        let net = net();
        let cfg = TrafficConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let vehicles = spawn_surrounding(&mut rng, 6, &net, &cfg, 5.0, 2.0).unwrap();
            for i in 0..vehicles.len() {
                for j in i + 1..vehicles.len() {
                    assert!(
                        !crate::env::vehicles_overlap(&vehicles[i], &vehicles[j]),
                        "initial overlap between spawned vehicles {i} and {j}"
                    );
                }
            }
        }
    }

    /// 1-D chain behind a constant-speed leader: IDM settles to the leader's
    /// speed with near-zero acceleration.
    #[test]
    fn platoon_converges_behind_constant_leader() {
        let idm = IdmParams::default();
        let len = 5.0;
        let dt = 1.0 / 15.0;
        // (position, speed) pairs, front to back.
        let mut leader = (30.0, 4.0);
        let mut chain = [(12.0, 2.0), (0.0, 7.0)];
        let mut last_accels = Vec::new();
        for step in 0..(60.0 / dt) as usize {
            leader.0 += leader.1 * dt;
            let mut accels = [0.0; 2];
            for i in 0..2 {
                let front = if i == 0 { leader } else { chain[i - 1] };
                let info = LeaderInfo {
                    gap: front.0 - chain[i].0 - len,
                    v_lead: front.1,
                    present: true,
                };
                accels[i] = idm_acceleration(chain[i].1, &info, &idm);
            }
            for (car, a) in chain.iter_mut().zip(accels) {
                car.0 += car.1 * dt;
                car.1 = (car.1 + a * dt).max(0.0);
            }
            if step as f64 * dt > 55.0 {
                last_accels.extend(accels);
            }
        }
        for a in last_accels {
            assert!(a.abs() < 0.05, "platoon not settled, accel {a}");
        }
        assert!((chain[0].1 - 4.0).abs() < 0.2);
        assert!((chain[1].1 - 4.0).abs() < 0.2);
    }

    proptest! {
        #[test]
        fn idm_monotonic_in_speed_and_gap(
            v in 0.0..12.0f64,
            dv in 0.1..2.0f64,
            gap in 1.0..60.0f64,
            dgap in 0.1..10.0f64,
            v_lead_frac in 0.0..1.0f64,
        ) {
            // Own-speed monotonicity holds when the leader is no faster
            // (the interesting car-following regime).
            let v_lead = v * v_lead_frac;
            let p = IdmParams::default();
            let leader = |g: f64| LeaderInfo { gap: g, v_lead, present: true };
            // Non-increasing in own speed at fixed leader.
            let a1 = idm_acceleration(v, &leader(gap), &p);
            let a2 = idm_acceleration(v + dv, &leader(gap), &p);
            prop_assert!(a2 <= a1 + 1e-9);
            // Non-decreasing in gap at fixed speeds.
            let a3 = idm_acceleration(v, &leader(gap + dgap), &p);
            prop_assert!(a3 >= a1 - 1e-9);
            // Always inside the actuator box.
            prop_assert!(a1.abs() <= MAX_ACCEL + 1e-12);
        }
    }
}
