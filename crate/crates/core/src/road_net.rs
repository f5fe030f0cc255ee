//! Four-way unsignalized intersection geometry.
//!
//! The network is built from four identical arms (lower, right, upper, left)
//! rotated around the junction center. Each arm is a bi-lane carriageway:
//! two approach lanes toward the junction and two exit lanes away from it,
//! right-hand traffic. Inside the junction every approach lane is connected
//! to the three other zones by a single connector lane: a straight segment
//! for through traffic and a circular arc tangent to both joined lanes for
//! turns, so every route is C1-continuous.

use crate::error::{Error, Result};
use crate::math::{clamp, wrap_angle, wrap_angle_positive, Vec2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zone {
    Lower,
    Right,
    Upper,
    Left,
}

pub const ZONES: [Zone; 4] = [Zone::Lower, Zone::Right, Zone::Upper, Zone::Left];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneKind {
    Approach,
    Connector,
    Exit,
}

/// Parametric lane centerline: straight segment or circular arc.
/// Arcs with positive sweep run counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Centerline {
    Straight {
        start: Vec2,
        heading: f64,
        length: f64,
    },
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Centerline {
    pub fn length(&self) -> f64 {
        match self {
            Centerline::Straight { length, .. } => *length,
            Centerline::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = clamp(s, 0.0, self.length());
        match self {
            Centerline::Straight { start, heading, .. } => {
                *start + Vec2::from_heading(*heading) * s
            }
            Centerline::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let angle = start_angle + sweep.signum() * s / radius;
                *center + Vec2::from_heading(angle) * *radius
            }
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let s = clamp(s, 0.0, self.length());
        match self {
            Centerline::Straight { heading, .. } => *heading,
            Centerline::Arc {
                radius,
                start_angle,
                sweep,
                ..
            } => {
                let angle = start_angle + sweep.signum() * s / radius;
                // Tangent of CCW motion leads the radius by 90 degrees.
                wrap_angle(angle + sweep.signum() * FRAC_PI_2)
            }
        }
    }

    fn rotated(&self, angle: f64) -> Centerline {
        match self {
            Centerline::Straight {
                start,
                heading,
                length,
            } => Centerline::Straight {
                start: start.rotated(angle),
                heading: wrap_angle(heading + angle),
                length: *length,
            },
            Centerline::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => Centerline::Arc {
                center: center.rotated(angle),
                radius: *radius,
                start_angle: wrap_angle(start_angle + angle),
                sweep: *sweep,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Centerline,
    pub width: f64,
    pub entry_zone: Zone,
    pub exit_zone: Zone,
    pub kind: LaneKind,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn start_point(&self) -> Vec2 {
        self.centerline.point_at(0.0)
    }

    pub fn end_point(&self) -> Vec2 {
        self.centerline.point_at(self.length())
    }

    /// Project a world point onto the centerline. Returns `(s, d)` with `s`
    /// clamped to `[0, length]` and `d` the signed lateral offset, positive
    /// to the left of the direction of travel.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        match &self.centerline {
            Centerline::Straight {
                start,
                heading,
                length,
            } => {
                let dir = Vec2::from_heading(*heading);
                let rel = p - *start;
                let s = clamp(rel.dot(dir), 0.0, *length);
                let d = dir.cross(rel);
                (s, d)
            }
            Centerline::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let rel = p - *center;
                let phi = rel.y.atan2(rel.x);
                let sweep_abs = sweep.abs();
                let dtheta = if *sweep >= 0.0 {
                    wrap_angle_positive(phi - start_angle)
                } else {
                    wrap_angle_positive(start_angle - phi)
                };
                let s = if dtheta <= sweep_abs {
                    radius * dtheta
                } else {
                    // Clamp to the nearer endpoint in angle.
                    let past_end = dtheta - sweep_abs;
                    let before_start = 2.0 * PI - dtheta;
                    if past_end < before_start {
                        radius * sweep_abs
                    } else {
                        0.0
                    }
                };
                // On a CCW arc the center lies to the left of travel.
                let d = if *sweep >= 0.0 {
                    *radius - rel.norm()
                } else {
                    rel.norm() - *radius
                };
                (s, d)
            }
        }
    }

    /// Euclidean distance from `p` to the (clamped) nearest centerline point.
    pub fn distance_to(&self, p: Vec2) -> f64 {
        let (s, _) = self.project(p);
        self.centerline.point_at(s).dist(p)
    }

    /// Tangent direction at arc-length `s`; errors if `s` is out of range.
    pub fn heading_at(&self, s: f64) -> Result<f64> {
        if s < -1e-9 || s > self.length() + 1e-9 {
            return Err(Error::ArcLengthOutOfRange {
                lane: self.id.0,
                s,
                length: self.length(),
            });
        }
        Ok(self.centerline.heading_at(s))
    }
}

/// One lane-level path through the junction: approach lane, connector, exit lane.
#[derive(Debug, Clone)]
pub struct Route {
    pub lanes: Vec<LaneId>,
    pub start_zone: Zone,
    pub goal_zone: Zone,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub lane_width_m: f64,
    pub approach_length_m: f64,
    pub junction_half_size_m: f64,
    /// Distance-to-junction window for the ego start position (m).
    pub start_window_m: [f64; 2],
    /// Goal point position along the goal exit lane (m past the junction).
    pub goal_offset_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            lane_width_m: 4.0,
            approach_length_m: 60.0,
            junction_half_size_m: 8.0,
            start_window_m: [20.0, 50.0],
            goal_offset_m: 25.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeEndpoints {
    pub start_lane: LaneId,
    pub start_s: f64,
    pub start_pos: Vec2,
    pub start_heading: f64,
    pub goal_lane: LaneId,
    pub goal_zone: Zone,
    pub goal_point: Vec2,
}

#[derive(Debug)]
pub struct RoadNetwork {
    lanes: Vec<Lane>,
    routes: Vec<Route>,
    junction_half: f64,
    start_window: [f64; 2],
    goal_offset: f64,
    /// Same-direction neighbors: (left, right) within the carriageway.
    adjacency: Vec<(Option<LaneId>, Option<LaneId>)>,
    /// Crossing/merging points between connector lanes, keyed by ordered
    /// lane pair, values are (s on first, s on second).
    conflicts: HashMap<(LaneId, LaneId), Vec<(f64, f64)>>,
}

const CONNECTOR_TARGETS: [usize; 3] = [3, 2, 1]; // left turn, straight, right turn (zone index offsets)

pub fn build_intersection(config: &GeometryConfig) -> Result<RoadNetwork> {
    let w = config.lane_width_m;
    let l = config.approach_length_m;
    let j = config.junction_half_size_m;
    let finite_positive = |x: f64| x.is_finite() && x > 0.0;
    if !finite_positive(w) || !finite_positive(l) || !finite_positive(j) {
        return Err(Error::InvalidGeometry(format!(
            "all dimensions must be positive (lane_width {w}, approach {l}, junction_half {j})"
        )));
    }
    if j <= 1.5 * w {
        return Err(Error::InvalidGeometry(format!(
            "junction_half_size_m ({j}) must exceed 1.5 * lane_width_m ({w}) for right-turn radii"
        )));
    }
    if config.start_window_m[0] < 0.0
        || config.start_window_m[1] > l
        || config.start_window_m[0] > config.start_window_m[1]
    {
        return Err(Error::InvalidGeometry(format!(
            "start window {:?} must lie within [0, approach length]",
            config.start_window_m
        )));
    }

    let mut lanes: Vec<Lane> = Vec::new();
    let mut push = |centerline: Centerline, entry: Zone, exit: Zone, kind: LaneKind| -> LaneId {
        let id = LaneId(lanes.len() as u32);
        lanes.push(Lane {
            id,
            centerline,
            width: w,
            entry_zone: entry,
            exit_zone: exit,
            kind,
        });
        id
    };

    // Base (lower) arm, rotated into the other three arms. Approach lanes run
    // north at x = w/2 (inner, left lane) and 3w/2 (outer, right lane).
    let mut approach_ids: Vec<[LaneId; 2]> = Vec::new();
    let mut exit_ids: Vec<[LaneId; 2]> = Vec::new();
    let mut connector_ids: Vec<Vec<(LaneId, usize)>> = Vec::new(); // per arm: (id, target zone idx)

    for (k, &zone) in ZONES.iter().enumerate() {
        let rot = k as f64 * FRAC_PI_2;

        let mut arm_approach = [LaneId(0); 2];
        let mut arm_exit = [LaneId(0); 2];
        for (i, x0) in [0.5 * w, 1.5 * w].iter().enumerate() {
            let approach = Centerline::Straight {
                start: Vec2::new(*x0, -j - l),
                heading: FRAC_PI_2,
                length: l,
            }
            .rotated(rot);
            arm_approach[i] = push(approach, zone, zone, LaneKind::Approach);
            let exit = Centerline::Straight {
                start: Vec2::new(-*x0, -j),
                heading: -FRAC_PI_2,
                length: l,
            }
            .rotated(rot);
            arm_exit[i] = push(exit, zone, zone, LaneKind::Exit);
        }
        approach_ids.push(arm_approach);
        exit_ids.push(arm_exit);

        let mut arm_connectors = Vec::new();
        for x0 in [0.5 * w, 1.5 * w] {
            // Left turn: CCW arc tangent to the northbound entry and the
            // westbound exit, radius x0 + j.
            let r_left = x0 + j;
            let left = Centerline::Arc {
                center: Vec2::new(x0 - r_left, -j),
                radius: r_left,
                start_angle: 0.0,
                sweep: FRAC_PI_2,
            }
            .rotated(rot);
            let target = (CONNECTOR_TARGETS[0] + k) % 4;
            arm_connectors.push((
                push(left, zone, ZONES[target], LaneKind::Connector),
                target,
            ));

            // Straight through.
            let through = Centerline::Straight {
                start: Vec2::new(x0, -j),
                heading: FRAC_PI_2,
                length: 2.0 * j,
            }
            .rotated(rot);
            let target = (CONNECTOR_TARGETS[1] + k) % 4;
            arm_connectors.push((
                push(through, zone, ZONES[target], LaneKind::Connector),
                target,
            ));

            // Right turn: CW arc, radius j - x0.
            let r_right = j - x0;
            let right = Centerline::Arc {
                center: Vec2::new(x0 + r_right, -j),
                radius: r_right,
                start_angle: PI,
                sweep: -FRAC_PI_2,
            }
            .rotated(rot);
            let target = (CONNECTOR_TARGETS[2] + k) % 4;
            arm_connectors.push((
                push(right, zone, ZONES[target], LaneKind::Connector),
                target,
            ));
        }
        connector_ids.push(arm_connectors);
    }

    // Routes: approach lane -> connector -> the exit lane whose start point
    // coincides with the connector's end point.
    let mut routes = Vec::new();
    for k in 0..4 {
        for (i, approach) in approach_ids[k].iter().enumerate() {
            for (conn_id, target) in &connector_ids[k][i * 3..i * 3 + 3] {
                let conn_end = lanes[conn_id.0 as usize].end_point();
                let exit = exit_ids[*target]
                    .iter()
                    .find(|e| lanes[e.0 as usize].start_point().dist(conn_end) < 1e-3)
                    .copied()
                    .ok_or_else(|| {
                        Error::InvalidGeometry(format!(
                            "no exit lane joins connector {} in zone {:?}",
                            conn_id.0, ZONES[*target]
                        ))
                    })?;
                routes.push(Route {
                    lanes: vec![*approach, *conn_id, exit],
                    start_zone: ZONES[k],
                    goal_zone: ZONES[*target],
                });
            }
        }
    }

    // Same-direction adjacency: index 0 is the inner (left) lane.
    let mut adjacency = vec![(None, None); lanes.len()];
    for k in 0..4 {
        for pair in [approach_ids[k], exit_ids[k]] {
            let [inner, outer] = pair;
            adjacency[inner.0 as usize] = (None, Some(outer));
            adjacency[outer.0 as usize] = (Some(inner), None);
        }
    }

    let conflicts = compute_conflicts(&lanes);

    Ok(RoadNetwork {
        lanes,
        routes,
        junction_half: j,
        start_window: config.start_window_m,
        goal_offset: config.goal_offset_m,
        adjacency,
        conflicts,
    })
}

/// Locate crossing and merging points between connector centerlines by
/// coarse sampling plus local refinement.
fn compute_conflicts(lanes: &[Lane]) -> HashMap<(LaneId, LaneId), Vec<(f64, f64)>> {
    let connectors: Vec<&Lane> = lanes
        .iter()
        .filter(|l| l.kind == LaneKind::Connector)
        .collect();
    let mut map: HashMap<(LaneId, LaneId), Vec<(f64, f64)>> = HashMap::new();

    for (ai, a) in connectors.iter().enumerate() {
        for b in connectors.iter().skip(ai + 1) {
            // Connectors diverging from the same entry point never conflict.
            if a.start_point().dist(b.start_point()) < 1e-6 {
                continue;
            }
            let mut found: Vec<(f64, f64)> = Vec::new();
            let len_a = a.length();
            let n = (len_a / 0.25).ceil() as usize;
            for i in 0..=n {
                let s_coarse = len_a * i as f64 / n as f64;
                let p = a.centerline.point_at(s_coarse);
                if b.distance_to(p) > 0.5 {
                    continue;
                }
                // Refine around the coarse hit.
                let mut best = (f64::INFINITY, 0.0, 0.0);
                let lo = (s_coarse - 0.3).max(0.0);
                let hi = (s_coarse + 0.3).min(len_a);
                let steps = ((hi - lo) / 0.005).ceil() as usize;
                for t in 0..=steps {
                    let s_a = lo + (hi - lo) * t as f64 / steps.max(1) as f64;
                    let p = a.centerline.point_at(s_a);
                    let (s_b, _) = b.project(p);
                    let dist = b.centerline.point_at(s_b).dist(p);
                    if dist < best.0 {
                        best = (dist, s_a, s_b);
                    }
                }
                if best.0 < 0.02
                    && !found.iter().any(|(s_a, _)| (s_a - best.1).abs() < 1.5)
                    && !(best.1 < 0.5 && best.2 < 0.5)
                {
                    found.push((best.1, best.2));
                }
            }
            if !found.is_empty() {
                map.insert(
                    (a.id, b.id),
                    found.clone(),
                );
                map.insert(
                    (b.id, a.id),
                    found.iter().map(|&(sa, sb)| (sb, sa)).collect(),
                );
            }
        }
    }
    map
}

impl RoadNetwork {
    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0 as usize]
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn junction_half_size(&self) -> f64 {
        self.junction_half
    }

    pub fn in_junction_box(&self, p: Vec2) -> bool {
        p.x.abs() <= self.junction_half && p.y.abs() <= self.junction_half
    }

    /// Left and right same-direction neighbors of a lane, if any.
    pub fn neighbors(&self, id: LaneId) -> (Option<LaneId>, Option<LaneId>) {
        self.adjacency[id.0 as usize]
    }

    /// Index of a lane within its carriageway (0 = leftmost).
    pub fn lane_index_in_carriageway(&self, id: LaneId) -> usize {
        match self.adjacency[id.0 as usize] {
            (Some(_), _) => 1,
            _ => 0,
        }
    }

    pub fn approach_lanes(&self, zone: Zone) -> Vec<LaneId> {
        self.lanes
            .iter()
            .filter(|l| l.kind == LaneKind::Approach && l.entry_zone == zone)
            .map(|l| l.id)
            .collect()
    }

    pub fn exit_lanes(&self, zone: Zone) -> Vec<LaneId> {
        self.lanes
            .iter()
            .filter(|l| l.kind == LaneKind::Exit && l.exit_zone == zone)
            .map(|l| l.id)
            .collect()
    }

    /// Remaining lane path from `lane` to `goal_zone`. For an approach lane
    /// this is the full approach/connector/exit triple; for a connector the
    /// connector and its exit; an exit lane is already the last segment.
    pub fn path_from(&self, lane: LaneId, goal_zone: Zone) -> Option<Vec<LaneId>> {
        let l = self.lane(lane);
        match l.kind {
            LaneKind::Approach => self
                .routes
                .iter()
                .find(|r| r.lanes[0] == lane && r.goal_zone == goal_zone)
                .map(|r| r.lanes.clone()),
            LaneKind::Connector => self
                .routes
                .iter()
                .find(|r| r.lanes[1] == lane && r.goal_zone == goal_zone)
                .map(|r| r.lanes[1..].to_vec()),
            LaneKind::Exit => {
                if l.exit_zone == goal_zone {
                    Some(vec![lane])
                } else {
                    None
                }
            }
        }
    }

    pub fn conflicts_between(&self, a: LaneId, b: LaneId) -> &[(f64, f64)] {
        self.conflicts
            .get(&(a, b))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn conflict_count(&self) -> usize {
        self.conflicts.len() / 2
    }
}

pub fn sample_episode_endpoints<R: Rng + ?Sized>(
    rng: &mut R,
    net: &RoadNetwork,
) -> EpisodeEndpoints {
    let lower = net.approach_lanes(Zone::Lower);
    let start_lane = lower[rng.gen_range(0..lower.len())];
    let dist_before_junction = rng.gen_range(net.start_window[0]..=net.start_window[1]);
    let lane = net.lane(start_lane);
    let start_s = clamp(lane.length() - dist_before_junction, 0.0, lane.length());

    let zones = [Zone::Right, Zone::Upper, Zone::Left];
    let goal_zone = zones[rng.gen_range(0..zones.len())];
    // The goal lane is the exit lane the start lane's route actually reaches.
    // The observation carries no goal information, so the task is to cross,
    // not to pick among exit lanes; start-lane randomization still makes the
    // goal lane uniform over the zone's exits.
    let goal_lane = *net
        .path_from(start_lane, goal_zone)
        .expect("every approach lane routes to every non-entry zone")
        .last()
        .unwrap();
    let goal = net.lane(goal_lane);

    EpisodeEndpoints {
        start_lane,
        start_s,
        start_pos: lane.centerline.point_at(start_s),
        start_heading: lane.centerline.heading_at(start_s),
        goal_lane,
        goal_zone,
        goal_point: goal.centerline.point_at(clamp(net.goal_offset, 0.0, goal.length())),
    }
}
