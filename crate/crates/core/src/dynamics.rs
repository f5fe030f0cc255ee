//! Kinematic bicycle model and the two low-level controllers that turn the
//! five discrete meta-actions into continuous acceleration and steering.

use crate::math::{clamp, wrap_angle, Vec2};
use crate::road_net::{LaneId, LaneKind, RoadNetwork};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;

/// Actuator box shared by every vehicle.
pub const MAX_ACCEL: f64 = 8.0;
pub const MAX_STEER: f64 = FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    LaneLeft,
    Keep,
    LaneRight,
    Decelerate,
    Accelerate,
}

pub const ACTIONS: [Action; 5] = [
    Action::LaneLeft,
    Action::Keep,
    Action::LaneRight,
    Action::Decelerate,
    Action::Accelerate,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::LaneLeft => 0,
            Action::Keep => 1,
            Action::LaneRight => 2,
            Action::Decelerate => 3,
            Action::Accelerate => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTIONS.get(i).copied()
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, Action::LaneLeft | Action::LaneRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Target-speed quantum per accelerate/decelerate action (m/s).
    pub delta_v: f64,
    pub v_max: f64,
    /// Longitudinal speed-tracking gain (1/s).
    pub gain_v: f64,
    /// Heading-error gain.
    pub gain_psi: f64,
    /// Lateral-offset gain (outer, on the atan term).
    pub gain_d: f64,
    /// Lateral-offset gain inside the atan (1/m).
    pub gain_y: f64,
    /// Speed floor in the lateral law to keep it bounded at standstill (m/s).
    pub v_floor: f64,
    pub wheelbase_m: f64,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            delta_v: 2.0,
            v_max: 10.0,
            gain_v: 2.0,
            gain_psi: 2.0,
            gain_d: 1.0,
            gain_y: 1.0,
            v_floor: 1.0,
            wheelbase_m: 2.5,
            vehicle_length_m: 5.0,
            vehicle_width_m: 2.0,
        }
    }
}

/// Physical ground truth plus route-tracking state of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub pos: Vec2,
    /// Speed, always >= 0.
    pub v: f64,
    /// Heading, wrapped to (-pi, pi].
    pub psi: f64,
    pub length: f64,
    pub width: f64,
    /// Remaining lane sequence; `seg` indexes the lane currently tracked.
    pub route: Vec<LaneId>,
    pub seg: usize,
    /// Index of the tracked lane within its carriageway (0 = leftmost).
    pub target_lane_index: usize,
    pub target_speed: f64,
}

impl VehicleState {
    pub fn current_lane(&self) -> LaneId {
        self.route[self.seg]
    }

    pub fn goal_zone(&self, net: &RoadNetwork) -> crate::road_net::Zone {
        net.lane(*self.route.last().unwrap()).exit_zone
    }

    /// Arc-length progress along the remaining route, measured from the start
    /// of the current lane.
    pub fn lane_progress(&self, net: &RoadNetwork) -> f64 {
        let (s, _) = net.lane(self.current_lane()).project(self.pos);
        s
    }

    /// True once the last route lane has been fully traversed.
    pub fn route_finished(&self, net: &RoadNetwork) -> bool {
        let lane = net.lane(self.current_lane());
        self.seg + 1 == self.route.len() && self.lane_progress(net) >= lane.length() - 1e-6
    }
}

/// Apply one discrete action to the vehicle's targets. Lane changes without
/// an adjacent same-direction lane are no-ops (the caller still counts them
/// for the lane-change penalty). Returns true if the tracked lane changed.
pub fn decode_action(
    action: Action,
    state: &mut VehicleState,
    net: &RoadNetwork,
    cfg: &DynamicsConfig,
) -> bool {
    match action {
        Action::Keep => false,
        Action::Accelerate => {
            state.target_speed = clamp(state.target_speed + cfg.delta_v, 0.0, cfg.v_max);
            false
        }
        Action::Decelerate => {
            state.target_speed = clamp(state.target_speed - cfg.delta_v, 0.0, cfg.v_max);
            false
        }
        Action::LaneLeft | Action::LaneRight => {
            let current = state.current_lane();
            let (left, right) = net.neighbors(current);
            let neighbor = if action == Action::LaneLeft { left } else { right };
            match neighbor {
                Some(n) => {
                    let goal = state.goal_zone(net);
                    // The lane sequence ahead is rebuilt from the new lane so
                    // the connector always emanates from the tracked lane.
                    if let Some(path) = net.path_from(n, goal) {
                        state.route.truncate(state.seg);
                        state.route.extend(path);
                        state.target_lane_index = net.lane_index_in_carriageway(n);
                        true
                    } else {
                        false
                    }
                }
                None => false,
            }
        }
    }
}

/// Longitudinal P-control on target speed plus a Stanley-style lateral law
/// tracking the current route lane. Outputs are clamped to the actuator box.
pub fn low_level_control(
    state: &VehicleState,
    net: &RoadNetwork,
    cfg: &DynamicsConfig,
) -> ControlInput {
    let accel = clamp(
        cfg.gain_v * (state.target_speed - state.v),
        -MAX_ACCEL,
        MAX_ACCEL,
    );

    let lane = net.lane(state.current_lane());
    let (s, d) = lane.project(state.pos);
    let psi_err = wrap_angle(lane.centerline.heading_at(s) - state.psi);
    let steer = clamp(
        cfg.gain_psi * psi_err + cfg.gain_d * (-cfg.gain_y * d / (state.v + cfg.v_floor)).atan(),
        -MAX_STEER,
        MAX_STEER,
    );

    ControlInput { accel, steer }
}

/// Kinematic bicycle update with slip angle about the center of gravity.
/// Speed is floored at zero (no reverse). Panics on non-positive `dt`.
pub fn step_kinematics(state: &mut VehicleState, control: &ControlInput, dt: f64, wheelbase: f64) {
    assert!(dt > 0.0, "dt must be positive, got {dt}");
    let beta = (0.5 * control.steer.tan()).atan();
    state.pos.x += state.v * (state.psi + beta).cos() * dt;
    state.pos.y += state.v * (state.psi + beta).sin() * dt;
    state.psi = wrap_angle(state.psi + 2.0 * (state.v / wheelbase) * beta.sin() * dt);
    state.v = (state.v + control.accel * dt).max(0.0);
}

/// Advance to the next route lane once the current one is fully traversed.
pub fn advance_route(state: &mut VehicleState, net: &RoadNetwork) {
    loop {
        let lane = net.lane(state.current_lane());
        let (s, _) = lane.project(state.pos);
        if s >= lane.length() - 1e-6 && state.seg + 1 < state.route.len() {
            state.seg += 1;
            let next = state.route[state.seg];
            state.target_lane_index = if net.lane(next).kind == LaneKind::Connector {
                0
            } else {
                net.lane_index_in_carriageway(next)
            };
        } else {
            break;
        }
    }
}
