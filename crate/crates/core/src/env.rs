//! The intersection-crossing Markov decision process: observation matrix,
//! 15 Hz stepping, collision and off-road detection, termination, and the
//! multi-objective reward.

use crate::dynamics::{
    advance_route, decode_action, low_level_control, step_kinematics, Action, DynamicsConfig,
    VehicleState,
};
use crate::error::{Error, Result};
use crate::math::{clamp, Vec2};
use crate::replay::{ReplayHeader, ReplayLog, ReplayStep, VehiclePose, REPLAY_FORMAT_VERSION};
use crate::road_net::{sample_episode_endpoints, RoadNetwork};
use crate::traffic::{find_leader, idm_acceleration, spawn_surrounding, IdmParams, TrafficConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Success reward weight and its traffic/time multipliers.
    pub w_success: f64,
    pub alpha_n: f64,
    pub alpha_t: f64,
    /// Collision penalty weight and its traffic/speed multipliers.
    pub w_collision: f64,
    pub beta_n: f64,
    pub beta_v: f64,
    pub w_timeout: f64,
    pub w_offroad: f64,
    pub w_lane_change: f64,
    /// Per-step survival reward (non-terminal steps only).
    pub w_survival: f64,
    /// Acceleration shaping weight; sign flips above `n_sparse` occupancy.
    pub w_accel: f64,
    pub n_sparse: u32,
    pub t_max_s: f64,
    pub goal_radius_m: f64,
    /// Observation rows beyond the ego row.
    pub max_vehicles: usize,
    pub sim_hz: f64,
    pub offroad_margin_m: f64,
    pub norm_position_m: f64,
    pub norm_speed_mps: f64,
    pub ego_init_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            w_success: 10.0,
            alpha_n: 0.2,
            alpha_t: 0.5,
            w_collision: 10.0,
            beta_n: 0.25,
            beta_v: 1.0,
            w_timeout: 5.0,
            w_offroad: 5.0,
            w_lane_change: 0.1,
            w_survival: 0.05,
            w_accel: 0.05,
            n_sparse: 2,
            t_max_s: 24.0,
            goal_radius_m: 4.0,
            max_vehicles: 8,
            sim_hz: 15.0,
            offroad_margin_m: 1.0,
            norm_position_m: 100.0,
            norm_speed_mps: 10.0,
            ego_init_speed: 5.0,
        }
    }
}

/// Surrounding-vehicle count range for one episode (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_sv_min: u32,
    pub n_sv_max: u32,
}

impl ScenarioSpec {
    pub fn exact(n: u32) -> Self {
        ScenarioSpec { n_sv_min: n, n_sv_max: n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Success,
    Collision,
    OffRoad,
    Timeout,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::OffRoad => "off_road",
            Outcome::Timeout => "timeout",
        }
    }
}

/// Per-episode bookkeeping: step counter, elapsed time, the running maximum
/// of surrounding vehicles sharing the junction with the ego, lane changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeContext {
    pub t: u32,
    pub sim_time: f64,
    pub n_car: u32,
    pub lane_change_count: u32,
    pub outcome: Outcome,
}

impl EpisodeContext {
    fn new() -> Self {
        EpisodeContext {
            t: 0,
            sim_time: 0.0,
            n_car: 0,
            lane_change_count: 0,
            outcome: Outcome::Running,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_succ: f64,
    pub r_colli: f64,
    pub r_to: f64,
    pub r_ofr: f64,
    pub r_lc: f64,
    pub r_l: f64,
    pub r_acc: f64,
    pub total: f64,
}

/// Observation matrix: ego row first, surrounding vehicles ordered by
/// increasing distance to the ego, zero-padded to `max_vehicles + 1` rows of
/// `[x, y, v_x, v_y, sin psi, cos psi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub rows: Vec<[f64; 6]>,
}

impl StateMatrix {
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.rows.len() * 6
    }
}

fn obb_corners(center: Vec2, heading: f64, length: f64, width: f64) -> [Vec2; 4] {
    let fwd = Vec2::from_heading(heading) * (length / 2.0);
    let side = Vec2::from_heading(heading).perp() * (width / 2.0);
    [
        center + fwd + side,
        center + fwd - side,
        center - fwd - side,
        center - fwd + side,
    ]
}

/// Separating-axis margin for two oriented rectangles: positive values are
/// the minimal overlap depth across all four axes, negative values the
/// largest separation gap. Overlap iff the margin is positive.
pub fn obb_sat_margin(a: &VehicleState, b: &VehicleState) -> f64 {
    let ca = obb_corners(a.pos, a.psi, a.length, a.width);
    let cb = obb_corners(b.pos, b.psi, b.length, b.width);
    let axes = [
        Vec2::from_heading(a.psi),
        Vec2::from_heading(a.psi).perp(),
        Vec2::from_heading(b.psi),
        Vec2::from_heading(b.psi).perp(),
    ];
    let mut margin = f64::INFINITY;
    for axis in axes {
        let proj = |corners: &[Vec2; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in corners {
                let p = c.dot(axis);
                lo = lo.min(p);
                hi = hi.max(p);
            }
            (lo, hi)
        };
        let (alo, ahi) = proj(&ca);
        let (blo, bhi) = proj(&cb);
        let overlap = ahi.min(bhi) - alo.max(blo);
        margin = margin.min(overlap);
    }
    margin
}

/// True iff two vehicles' oriented rectangles intersect.
pub fn vehicles_overlap(a: &VehicleState, b: &VehicleState) -> bool {
    obb_sat_margin(a, b) > 0.0
}

/// True iff the ego's rectangle intersects any other vehicle's rectangle.
pub fn detect_collision(ego: &VehicleState, others: &[VehicleState]) -> bool {
    others.iter().any(|o| vehicles_overlap(ego, o))
}

/// True iff the point is farther than half a lane width plus the margin from
/// every lane centerline and outside the junction box.
pub fn check_off_road(pos: Vec2, net: &RoadNetwork, margin: f64) -> bool {
    if net.in_junction_box(pos) {
        return false;
    }
    !net.lanes().iter().any(|lane| {
        lane.distance_to(pos) <= lane.width / 2.0 + margin
    })
}

/// Terminal-plus-shaping reward of one transition. Exactly one of the four
/// terminal components is nonzero on a terminal step.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    action: Action,
    outcome: Outcome,
    n_car: u32,
    sim_time: f64,
    ego_speed: f64,
    occupancy: u32,
    cfg: &EnvConfig,
    v_max: f64,
) -> RewardBreakdown {
    let mut r = RewardBreakdown::default();
    match outcome {
        Outcome::Success => {
            let time_bonus = (cfg.t_max_s - sim_time).max(0.0) / cfg.t_max_s;
            r.r_succ = cfg.w_success
                * (1.0 + cfg.alpha_n * n_car as f64)
                * (1.0 + cfg.alpha_t * time_bonus);
        }
        Outcome::Collision => {
            r.r_colli = -cfg.w_collision
                * (1.0 + cfg.beta_n * n_car as f64)
                * (1.0 + cfg.beta_v * ego_speed / v_max);
        }
        Outcome::Timeout => r.r_to = -cfg.w_timeout,
        Outcome::OffRoad => r.r_ofr = -cfg.w_offroad,
        Outcome::Running => r.r_l = cfg.w_survival,
    }
    if action.is_lane_change() {
        r.r_lc = -cfg.w_lane_change;
    }
    if action == Action::Accelerate {
        r.r_acc = if occupancy <= cfg.n_sparse {
            cfg.w_accel
        } else {
            -cfg.w_accel
        };
    }
    r.total = r.r_succ + r.r_colli + r.r_to + r.r_ofr + r.r_lc + r.r_l + r.r_acc;
    r
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub obs: StateMatrix,
    pub reward: RewardBreakdown,
    pub outcome: Outcome,
    /// Surrounding vehicles currently inside the junction box.
    pub occupancy: u32,
}

/// Bundle of all simulation parameters an environment needs.
#[derive(Debug, Clone, Default)]
pub struct SimParams {
    pub env: EnvConfig,
    pub dynamics: DynamicsConfig,
    pub idm: IdmParams,
    pub traffic: TrafficConfig,
}

pub struct Env {
    net: Arc<RoadNetwork>,
    params: SimParams,
    ego: VehicleState,
    svs: Vec<VehicleState>,
    ctx: EpisodeContext,
    goal_point: Vec2,
    episode_seed: u64,
    scenario: ScenarioSpec,
    n_sv_initial: u32,
    record: Option<Vec<ReplayStep>>,
    config_digest: String,
}

impl Env {
    pub fn new(net: Arc<RoadNetwork>, params: SimParams, config_digest: String) -> Env {
        Env {
            net,
            params,
            ego: placeholder_vehicle(),
            svs: Vec::new(),
            ctx: EpisodeContext::new(),
            goal_point: Vec2::ZERO,
            episode_seed: 0,
            scenario: ScenarioSpec::exact(0),
            n_sv_initial: 0,
            record: None,
            config_digest,
        }
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn ctx(&self) -> &EpisodeContext {
        &self.ctx
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn surrounding(&self) -> &[VehicleState] {
        &self.svs
    }

    pub fn goal_point(&self) -> Vec2 {
        self.goal_point
    }

    pub fn episode_seed(&self) -> u64 {
        self.episode_seed
    }

    pub fn n_sv_initial(&self) -> u32 {
        self.n_sv_initial
    }

    pub fn obs_dim(&self) -> usize {
        (self.params.env.max_vehicles + 1) * 6
    }

    /// Enable per-step replay recording for subsequent episodes.
    pub fn set_recording(&mut self, on: bool) {
        self.record = if on { Some(Vec::new()) } else { None };
    }

    /// Drain the recorded episode into a replay log.
    pub fn take_replay(&mut self) -> Option<ReplayLog> {
        let steps = self.record.as_mut()?.split_off(0);
        Some(ReplayLog {
            header: ReplayHeader {
                kind: "header".into(),
                version: REPLAY_FORMAT_VERSION,
                episode_seed: self.episode_seed,
                n_sv_min: self.scenario.n_sv_min,
                n_sv_max: self.scenario.n_sv_max,
                config_digest: self.config_digest.clone(),
            },
            steps,
        })
    }

    /// Start a new episode, drawing the per-episode seed from `rng`.
    pub fn reset<R: Rng + ?Sized>(
        &mut self,
        scenario: ScenarioSpec,
        rng: &mut R,
    ) -> Result<StateMatrix> {
        let seed = rng.next_u64();
        self.reset_with_seed(scenario, seed)
    }

    /// Start a new episode fully determined by `episode_seed`.
    pub fn reset_with_seed(
        &mut self,
        scenario: ScenarioSpec,
        episode_seed: u64,
    ) -> Result<StateMatrix> {
        let mut ep_rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let endpoints = sample_episode_endpoints(&mut ep_rng, &self.net);
        let n_sv = if scenario.n_sv_max > scenario.n_sv_min {
            ep_rng.gen_range(scenario.n_sv_min..=scenario.n_sv_max)
        } else {
            scenario.n_sv_min
        };
        let d = &self.params.dynamics;
        self.svs = spawn_surrounding(
            &mut ep_rng,
            n_sv,
            &self.net,
            &self.params.traffic,
            d.vehicle_length_m,
            d.vehicle_width_m,
        )?;
        let route = self
            .net
            .path_from(endpoints.start_lane, endpoints.goal_zone)
            .expect("start lane always reaches the goal zone");
        self.ego = VehicleState {
            pos: endpoints.start_pos,
            v: self.params.env.ego_init_speed,
            psi: endpoints.start_heading,
            length: d.vehicle_length_m,
            width: d.vehicle_width_m,
            route,
            seg: 0,
            target_lane_index: self.net.lane_index_in_carriageway(endpoints.start_lane),
            target_speed: self.params.env.ego_init_speed,
        };
        self.goal_point = endpoints.goal_point;
        self.ctx = EpisodeContext::new();
        self.episode_seed = episode_seed;
        self.scenario = scenario;
        self.n_sv_initial = n_sv;
        if let Some(rec) = &mut self.record {
            rec.clear();
        }
        Ok(self.observe())
    }

    pub fn observe(&self) -> StateMatrix {
        let cfg = &self.params.env;
        let mut rows = Vec::with_capacity(cfg.max_vehicles + 1);
        let feature = |v: &VehicleState| -> [f64; 6] {
            [
                clamp(v.pos.x / cfg.norm_position_m, -1.0, 1.0),
                clamp(v.pos.y / cfg.norm_position_m, -1.0, 1.0),
                clamp(v.v * v.psi.cos() / cfg.norm_speed_mps, -1.0, 1.0),
                clamp(v.v * v.psi.sin() / cfg.norm_speed_mps, -1.0, 1.0),
                v.psi.sin(),
                v.psi.cos(),
            ]
        };
        rows.push(feature(&self.ego));
        let mut order: Vec<usize> = (0..self.svs.len()).collect();
        order.sort_by(|&a, &b| {
            let da = self.svs[a].pos.dist(self.ego.pos);
            let db = self.svs[b].pos.dist(self.ego.pos);
            da.partial_cmp(&db).unwrap()
        });
        for &i in order.iter().take(cfg.max_vehicles) {
            rows.push(feature(&self.svs[i]));
        }
        while rows.len() < cfg.max_vehicles + 1 {
            rows.push([0.0; 6]);
        }
        StateMatrix { rows }
    }

    /// Advance the world one tick. Errors if the episode already terminated.
    pub fn step(&mut self, action: Action) -> Result<StepOutput> {
        if self.ctx.outcome.is_terminal() {
            return Err(Error::EpisodeTerminated(
                self.ctx.outcome.as_str().to_string(),
            ));
        }
        let dt = 1.0 / self.params.env.sim_hz;
        let dcfg = self.params.dynamics;

        if action.is_lane_change() {
            self.ctx.lane_change_count += 1;
        }
        decode_action(action, &mut self.ego, &self.net, &dcfg);
        let ego_control = low_level_control(&self.ego, &self.net, &dcfg);

        // Surrounding vehicles read the previous-step snapshot, ego first.
        let mut snapshot = Vec::with_capacity(self.svs.len() + 1);
        snapshot.push(self.ego.clone());
        snapshot.extend(self.svs.iter().cloned());
        let controls: Vec<_> = (0..self.svs.len())
            .map(|i| {
                let leader = find_leader(i + 1, &snapshot, &self.net, &self.params.traffic);
                let accel = idm_acceleration(self.svs[i].v, &leader, &self.params.idm);
                let mut c = low_level_control(&self.svs[i], &self.net, &dcfg);
                c.accel = accel;
                c
            })
            .collect();

        step_kinematics(&mut self.ego, &ego_control, dt, dcfg.wheelbase_m);
        advance_route(&mut self.ego, &self.net);
        for (sv, c) in self.svs.iter_mut().zip(&controls) {
            step_kinematics(sv, c, dt, dcfg.wheelbase_m);
            advance_route(sv, &self.net);
        }
        let net = &self.net;
        self.svs.retain(|sv| !sv.route_finished(net));

        self.ctx.t += 1;
        self.ctx.sim_time = self.ctx.t as f64 * dt;
        let occupancy = self
            .svs
            .iter()
            .filter(|sv| self.net.in_junction_box(sv.pos))
            .count() as u32;
        if self.net.in_junction_box(self.ego.pos) {
            self.ctx.n_car = self.ctx.n_car.max(occupancy);
        }

        let t_max_steps = (self.params.env.t_max_s * self.params.env.sim_hz).round() as u32;
        let outcome = if detect_collision(&self.ego, &self.svs) {
            Outcome::Collision
        } else if check_off_road(self.ego.pos, &self.net, self.params.env.offroad_margin_m) {
            Outcome::OffRoad
        } else if self.ego.pos.dist(self.goal_point) <= self.params.env.goal_radius_m {
            Outcome::Success
        } else if self.ctx.t >= t_max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        self.ctx.outcome = outcome;

        let reward = compute_reward(
            action,
            outcome,
            self.ctx.n_car,
            self.ctx.sim_time,
            self.ego.v,
            occupancy,
            &self.params.env,
            dcfg.v_max,
        );

        if let Some(rec) = &mut self.record {
            let mut vehicles = Vec::with_capacity(self.svs.len() + 1);
            vehicles.push(VehiclePose {
                id: 0,
                x: self.ego.pos.x,
                y: self.ego.pos.y,
                psi: self.ego.psi,
                v: self.ego.v,
            });
            for (i, sv) in self.svs.iter().enumerate() {
                vehicles.push(VehiclePose {
                    id: i as u32 + 1,
                    x: sv.pos.x,
                    y: sv.pos.y,
                    psi: sv.psi,
                    v: sv.v,
                });
            }
            rec.push(ReplayStep {
                kind: "step".into(),
                t: self.ctx.t,
                vehicles,
                action: action.index(),
                reward,
                outcome,
            });
        }

        Ok(StepOutput {
            obs: self.observe(),
            reward,
            outcome,
            occupancy,
        })
    }
}

fn placeholder_vehicle() -> VehicleState {
    VehicleState {
        pos: Vec2::ZERO,
        v: 0.0,
        psi: 0.0,
        length: 5.0,
        width: 2.0,
        route: vec![crate::road_net::LaneId(0)],
        seg: 0,
        target_lane_index: 0,
        target_speed: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_net::{build_intersection, GeometryConfig, LaneId};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_env() -> Env {
        let net = Arc::new(build_intersection(&GeometryConfig::default()).unwrap());
        Env::new(net, SimParams::default(), "test".into())
    }

    fn boxed(pos: Vec2, psi: f64, length: f64, width: f64) -> VehicleState {
        VehicleState {
            pos,
            v: 0.0,
            psi,
            length,
            width,
            route: vec![LaneId(0)],
            seg: 0,
            target_lane_index: 0,
            target_speed: 0.0,
        }
    }

    #[test]
    fn coincident_rectangles_collide() {
        let a = boxed(Vec2::ZERO, 0.3, 5.0, 2.0);
        let b = boxed(Vec2::ZERO, 1.2, 5.0, 2.0);
        assert!(vehicles_overlap(&a, &b));
    }

    #[test]
    fn distant_rectangles_do_not_collide() {
        let a = boxed(Vec2::ZERO, 0.0, 5.0, 2.0);
        let b = boxed(Vec2::new(100.0, 0.0), 0.0, 5.0, 2.0);
        assert!(!vehicles_overlap(&a, &b));
    }

    /// Point-in-OBB test used by the sampling oracle.
    fn point_in_obb(p: Vec2, v: &VehicleState) -> bool {
        let rel = p - v.pos;
        let fwd = Vec2::from_heading(v.psi);
        let u = rel.dot(fwd);
        let w = rel.dot(fwd.perp());
        u.abs() <= v.length / 2.0 && w.abs() <= v.width / 2.0
    }

    /// Dense-sampling oracle: rectangles overlap iff a boundary point of one
    /// lies inside the other, or one contains the other's center.
    pub(crate) fn overlap_by_sampling(a: &VehicleState, b: &VehicleState, step: f64) -> bool {
        if point_in_obb(a.pos, b) || point_in_obb(b.pos, a) {
            return true;
        }
        let edge_points = |v: &VehicleState| {
            let c = obb_corners(v.pos, v.psi, v.length, v.width);
            let mut pts = Vec::new();
            for i in 0..4 {
                let from = c[i];
                let to = c[(i + 1) % 4];
                let n = (from.dist(to) / step).ceil() as usize;
                for k in 0..=n {
                    pts.push(from + (to - from) * (k as f64 / n as f64));
                }
            }
            pts
        };
        edge_points(a).into_iter().any(|p| point_in_obb(p, b))
            || edge_points(b).into_iter().any(|p| point_in_obb(p, a))
    }

    #[test]
    fn sat_agrees_with_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut disagreements = 0;
        for _ in 0..1000 {
            let a = boxed(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                rng.gen_range(-3.2..3.2),
                5.0,
                2.0,
            );
            let b = boxed(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                rng.gen_range(-3.2..3.2),
                5.0,
                2.0,
            );
            let sat = vehicles_overlap(&a, &b);
            let oracle = overlap_by_sampling(&a, &b, 0.0005);
            if sat != oracle {
                disagreements += 1;
                assert!(
                    obb_sat_margin(&a, &b).abs() < 0.01,
                    "disagreement away from tangency (margin {})",
                    obb_sat_margin(&a, &b)
                );
            }
        }
        assert!(disagreements <= 1, "{disagreements} disagreements in 1000");
    }

    #[test]
    fn off_road_cases() {
        let net = build_intersection(&GeometryConfig::default()).unwrap();
        // Junction center is drivable.
        assert!(!check_off_road(Vec2::ZERO, &net, 1.0));
        // Any centerline point is on-road.
        for lane in net.lanes() {
            assert!(!check_off_road(lane.centerline.point_at(lane.length() / 2.0), &net, 1.0));
        }
        // Far off to the side of everything.
        assert!(check_off_road(Vec2::new(30.0, -30.0), &net, 1.0));
    }

    #[test]
    fn reward_formula_examples() {
        let cfg = EnvConfig::default();
        // Success with no traffic at the deadline: exactly w_success.
        let r = compute_reward(Action::Keep, Outcome::Success, 0, cfg.t_max_s, 5.0, 0, &cfg, 10.0);
        assert_abs_diff_eq!(r.r_succ, cfg.w_success, epsilon = 1e-12);
        // Collision at standstill with two vehicles in the box.
        let r = compute_reward(Action::Keep, Outcome::Collision, 2, 5.0, 0.0, 2, &cfg, 10.0);
        assert_abs_diff_eq!(r.r_colli, -cfg.w_collision * 1.5, epsilon = 1e-12);
        // Plain survival step.
        let r = compute_reward(Action::Keep, Outcome::Running, 0, 5.0, 5.0, 0, &cfg, 10.0);
        assert_abs_diff_eq!(r.total, cfg.w_survival, epsilon = 1e-12);
        // Accelerating in sparse vs dense traffic.
        let r = compute_reward(Action::Accelerate, Outcome::Running, 0, 5.0, 5.0, 2, &cfg, 10.0);
        assert_abs_diff_eq!(r.r_acc, cfg.w_accel, epsilon = 1e-12);
        let r = compute_reward(Action::Accelerate, Outcome::Running, 0, 5.0, 5.0, 3, &cfg, 10.0);
        assert_abs_diff_eq!(r.r_acc, -cfg.w_accel, epsilon = 1e-12);
    }

    #[test]
    fn observation_normalization_and_padding() {
        let mut env = make_env();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = env.reset(ScenarioSpec::exact(2), &mut rng).unwrap();
        assert_eq!(obs.rows.len(), 9);
        for row in &obs.rows[3..] {
            assert_eq!(row, &[0.0; 6]);
        }
        for row in &obs.rows {
            for f in row {
                assert!((-1.0..=1.0).contains(f));
            }
            let s2c2 = row[4] * row[4] + row[5] * row[5];
            assert!(s2c2 < 1e-9 || (s2c2 - 1.0).abs() < 1e-9);
        }
        // Hand-built world: ego eastbound at the origin at 10 m/s.
        env.ego.pos = Vec2::ZERO;
        env.ego.psi = 0.0;
        env.ego.v = 10.0;
        let obs = env.observe();
        let row0 = obs.rows[0];
        for (got, want) in row0.iter().zip([0.0, 0.0, 1.0, 0.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn observation_rows_sorted_by_distance() {
        let mut env = make_env();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        env.reset(ScenarioSpec::exact(5), &mut rng).unwrap();
        let obs = env.observe();
        let ego = env.ego().pos;
        let mut dists: Vec<f64> = Vec::new();
        for row in &obs.rows[1..] {
            if row.iter().all(|f| *f == 0.0) {
                break;
            }
            let p = Vec2::new(row[0] * 100.0, row[1] * 100.0);
            dists.push(p.dist(ego));
        }
        assert_eq!(dists.len(), 5);
        for pair in dists.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-9, "rows not distance-sorted: {dists:?}");
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = make_env();
        let mut b = make_env();
        let oa = a.reset_with_seed(ScenarioSpec::exact(3), 123).unwrap();
        let ob = b.reset_with_seed(ScenarioSpec::exact(3), 123).unwrap();
        assert_eq!(oa, ob);
    }

    #[test]
    fn stage1_reset_has_no_traffic() {
        let mut env = make_env();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let obs = env.reset(ScenarioSpec::exact(0), &mut rng).unwrap();
        for row in &obs.rows[1..] {
            assert_eq!(row, &[0.0; 6]);
        }
    }

    #[test]
    fn empty_intersection_scripted_success() {
        let mut env = make_env();
        env.reset_with_seed(ScenarioSpec::exact(0), 7).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        let outcome = loop {
            let out = env.step(Action::Accelerate).unwrap();
            total += out.reward.total;
            steps += 1;
            if out.outcome.is_terminal() {
                break out.outcome;
            }
            assert!(steps < 400);
        };
        assert_eq!(outcome, Outcome::Success);
        assert!(total > 0.0);
        // Stepping a finished episode is an error.
        assert!(env.step(Action::Keep).is_err());
    }

    #[test]
    fn timeout_when_crawling() {
        let mut env = make_env();
        env.reset_with_seed(ScenarioSpec::exact(0), 3).unwrap();
        let mut last = Outcome::Running;
        for _ in 0..400 {
            let out = env.step(Action::Decelerate).unwrap();
            last = out.outcome;
            if last.is_terminal() {
                break;
            }
        }
        assert_eq!(last, Outcome::Timeout);
        assert_eq!(env.ctx().t, (24.0f64 * 15.0).round() as u32);
    }

    #[test]
    fn step_is_bit_deterministic() {
        let run = || {
            let mut env = make_env();
            env.reset_with_seed(ScenarioSpec::exact(4), 21).unwrap();
            let mut trace = Vec::new();
            for i in 0..120 {
                let a = Action::from_index(i % 5).unwrap();
                match env.step(a) {
                    Ok(out) => {
                        trace.push((out.reward.total, out.outcome));
                        if out.outcome.is_terminal() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
            (trace, env.ego().pos)
        };
        let (ta, pa) = run();
        let (tb, pb) = run();
        assert_eq!(ta, tb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn n_car_is_non_decreasing_and_terminal_exclusive() {
        let mut env = make_env();
        env.reset_with_seed(ScenarioSpec::exact(6), 99).unwrap();
        let mut prev_n_car = 0;
        for _ in 0..360 {
            let out = match env.step(Action::Accelerate) {
                Ok(o) => o,
                Err(_) => break,
            };
            assert!(env.ctx().n_car >= prev_n_car);
            prev_n_car = env.ctx().n_car;
            let terminals = [out.reward.r_succ, out.reward.r_colli, out.reward.r_to, out.reward.r_ofr];
            assert!(terminals.iter().filter(|r| **r != 0.0).count() <= 1);
            let sum: f64 = terminals.iter().sum::<f64>()
                + out.reward.r_lc
                + out.reward.r_l
                + out.reward.r_acc;
            assert!((sum - out.reward.total).abs() < 1e-12);
            if out.outcome.is_terminal() {
                break;
            }
        }
    }

    #[test]
    fn replay_recording_matches_resimulation() {
        let mut env = make_env();
        env.set_recording(true);
        env.reset_with_seed(ScenarioSpec::exact(3), 5150).unwrap();
        let mut actions = Vec::new();
        for i in 0..400 {
            let a = if i % 7 == 0 { Action::Decelerate } else { Action::Accelerate };
            actions.push(a);
            if env.step(a).unwrap().outcome.is_terminal() {
                break;
            }
        }
        let log = env.take_replay().unwrap();
        let logged_outcome = log.steps.last().unwrap().outcome;

        // Re-simulate from the logged seed and actions.
        let mut env2 = make_env();
        env2.reset_with_seed(
            ScenarioSpec { n_sv_min: log.header.n_sv_min, n_sv_max: log.header.n_sv_max },
            log.header.episode_seed,
        )
        .unwrap();
        let mut outcome = Outcome::Running;
        for a in &actions[..log.steps.len()] {
            outcome = env2.step(*a).unwrap().outcome;
        }
        assert_eq!(outcome, logged_outcome);
        assert_eq!(env2.ego().pos, Vec2::new(
            log.steps.last().unwrap().vehicles[0].x,
            log.steps.last().unwrap().vehicles[0].y,
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn reward_total_is_component_sum(
            action_idx in 0usize..5,
            outcome_idx in 0usize..5,
            n_car in 0u32..9,
            t in 0.0..24.0f64,
            v in 0.0..10.0f64,
            occ in 0u32..9,
        ) {
            let outcomes = [Outcome::Running, Outcome::Success, Outcome::Collision, Outcome::OffRoad, Outcome::Timeout];
            let cfg = EnvConfig::default();
            let r = compute_reward(
                Action::from_index(action_idx).unwrap(),
                outcomes[outcome_idx],
                n_car, t, v, occ, &cfg, 10.0,
            );
            let sum = r.r_succ + r.r_colli + r.r_to + r.r_ofr + r.r_lc + r.r_l + r.r_acc;
            prop_assert!((sum - r.total).abs() < 1e-12);
        }

        #[test]
        fn success_reward_monotone(n1 in 0u32..8, dn in 1u32..4, t in 0.0..24.0f64, dt in 0.1..5.0f64) {
            let cfg = EnvConfig::default();
            let r1 = compute_reward(Action::Keep, Outcome::Success, n1, t, 5.0, 0, &cfg, 10.0);
            let r2 = compute_reward(Action::Keep, Outcome::Success, n1 + dn, t, 5.0, 0, &cfg, 10.0);
            prop_assert!(r2.r_succ >= r1.r_succ);
            let t2 = (t + dt).min(24.0);
            let r3 = compute_reward(Action::Keep, Outcome::Success, n1, t2, 5.0, 0, &cfg, 10.0);
            prop_assert!(r3.r_succ <= r1.r_succ + 1e-12);
        }
    }
}
