//! Discrete-time world model of a finite multi-lane highway: vehicle
//! kinematics, safe-speed car following, lane-change safety checks,
//! stochastic inflow and collision detection.
//!
//! Lane indices count from the right: lane 0 is the rightmost lane.
//! `pos_m` is the front-bumper position measured from the road start, so a
//! vehicle's body occupies `[pos_m - length_m, pos_m]`.

use std::collections::HashMap;
use std::hash::Hasher;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type VehicleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VehicleKind {
    Ev,
    Cv,
}

impl VehicleKind {
    pub fn label(self) -> &'static str {
        match self {
            VehicleKind::Ev => "EV",
            VehicleKind::Cv => "CV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChange {
    Left,
    Right,
}

impl LaneChange {
    /// Lane-index delta; lanes count up leftwards.
    pub fn delta(self) -> i64 {
        match self {
            LaneChange::Left => 1,
            LaneChange::Right => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadConfig {
    pub length_m: f64,
    pub lane_count: usize,
    pub step_dt: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            length_m: 2000.0,
            lane_count: 3,
            step_dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub length_m: f64,
    pub width_m: f64,
    pub min_gap_m: f64,
    pub max_speed: f64,
    pub accel_limit: f64,
    pub decel_limit: f64,
    /// Driver imperfection in [0, 1]; the speed achieved each step is reduced
    /// by up to `sigma * accel_limit * dt`.
    pub sigma: f64,
    pub kind: VehicleKind,
}

impl VehicleParams {
    pub fn ev_default() -> Self {
        Self {
            length_m: 5.0,
            width_m: 2.0,
            min_gap_m: 1.0,
            max_speed: 40.0,
            accel_limit: 4.0,
            decel_limit: 4.0,
            sigma: 0.0,
            kind: VehicleKind::Ev,
        }
    }

    pub fn cv_default() -> Self {
        Self {
            length_m: 5.0,
            width_m: 1.8,
            min_gap_m: 2.0,
            max_speed: 20.0,
            accel_limit: 2.0,
            decel_limit: 2.0,
            sigma: 1.0,
            kind: VehicleKind::Cv,
        }
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::cv_default()
    }
}

#[derive(Debug, Clone)]
pub struct VehicleState {
    pub id: VehicleId,
    pub lane: usize,
    pub pos_m: f64,
    pub speed: f64,
    pub entered_step: u64,
    pub lane_changes: u32,
    pub params: VehicleParams,
}

impl VehicleState {
    /// Rear-bumper position.
    pub fn rear_m(&self) -> f64 {
        self.pos_m - self.params.length_m
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Expected vehicles per second entering the road.
    pub arrival_rate: f64,
    /// Speed at which spawned vehicles enter.
    pub entry_speed: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 0.5,
            entry_speed: 10.0,
        }
    }
}

/// A completed traversal.
#[derive(Debug, Clone, Copy)]
pub struct ExitRecord {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub entered_step: u64,
    pub exited_step: u64,
    pub final_speed: f64,
    pub final_lane: usize,
    pub lane_changes: u32,
}

impl ExitRecord {
    pub fn travel_time_s(&self, dt: f64) -> f64 {
        (self.exited_step - self.entered_step) as f64 * dt
    }
}

/// One vehicle's slot in a role-based neighbourhood.
///
/// `gap_m` is the net gap between bodies relative to the observer: for
/// vehicles ahead it is `their rear - observer front`, for vehicles at or
/// behind the observer's front bumper it is `observer rear - their front`.
/// Gaps are negative when bodies overlap longitudinally (e.g. an abreast
/// vehicle in an adjacent lane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborInfo {
    pub id: VehicleId,
    pub gap_m: f64,
}

/// First-tier neighbours by role plus the three second-tier leaders.
/// Roles are relative to the observed vehicle, not transitive: the left
/// leader is the nearest vehicle ahead in the left lane, which need not be
/// related to the leader's own neighbourhood.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet {
    pub leader: Option<NeighborInfo>,
    pub follower: Option<NeighborInfo>,
    pub left_leader: Option<NeighborInfo>,
    pub left_follower: Option<NeighborInfo>,
    pub right_leader: Option<NeighborInfo>,
    pub right_follower: Option<NeighborInfo>,
    pub leader_of_leader: Option<NeighborInfo>,
    pub leader_of_left_leader: Option<NeighborInfo>,
    pub leader_of_right_leader: Option<NeighborInfo>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub road: RoadConfig,
    pub time_step: u64,
    pub vehicles: Vec<VehicleState>,
    pub rng: ChaCha8Rng,
    /// (time_step, follower id, leader id) for every overlapping pair seen.
    pub collision_log: Vec<(u64, VehicleId, VehicleId)>,
    pub exits: Vec<ExitRecord>,
    pub spawned: u64,
    pub exited: u64,
    /// Arrivals waiting for an entry gap.
    pub spawn_queue: u64,
    /// Bernoulli inflow trials performed.
    pub spawn_attempts: u64,
    pub ev_id: Option<VehicleId>,
    next_id: VehicleId,
}

/// Krauss-style safe speed for a follower approaching a leader.
///
/// `gap_m` is the net gap (follower front to leader rear). The returned
/// speed guarantees that a follower driving at or below it cannot reach the
/// leader's rear under synchronized per-step updates, and is clamped to
/// `[0, follower.max_speed]`.
pub fn safe_speed(
    gap_m: f64,
    leader_speed: f64,
    follower_speed: f64,
    follower: &VehicleParams,
    dt: f64,
) -> f64 {
    let tau = dt;
    let v_avg = 0.5 * (leader_speed + follower_speed);
    let v_safe = leader_speed + (gap_m - leader_speed * tau) / (v_avg / follower.decel_limit + tau);
    v_safe.clamp(0.0, follower.max_speed)
}

impl World {
    pub fn new(road: RoadConfig, rng: ChaCha8Rng) -> Self {
        Self {
            road,
            time_step: 0,
            vehicles: Vec::new(),
            rng,
            collision_log: Vec::new(),
            exits: Vec::new(),
            spawned: 0,
            exited: 0,
            spawn_queue: 0,
            spawn_attempts: 0,
            ev_id: None,
            next_id: 0,
        }
    }

    pub fn vehicle(&self, id: VehicleId) -> &VehicleState {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .unwrap_or_else(|| panic!("unknown vehicle id {id}"))
    }

    fn vehicle_mut(&mut self, id: VehicleId) -> &mut VehicleState {
        self.vehicles
            .iter_mut()
            .find(|v| v.id == id)
            .unwrap_or_else(|| panic!("unknown vehicle id {id}"))
    }

    pub fn ev(&self) -> Option<&VehicleState> {
        self.ev_id.map(|id| self.vehicle(id))
    }

    /// Insert a vehicle unconditionally. Panics if the state violates the
    /// road bounds; gap discipline is the caller's concern.
    pub fn insert_vehicle(
        &mut self,
        lane: usize,
        pos_m: f64,
        speed: f64,
        params: VehicleParams,
    ) -> VehicleId {
        assert!(lane < self.road.lane_count, "lane {lane} out of range");
        assert!(
            (0.0..=self.road.length_m).contains(&pos_m),
            "position {pos_m} off road"
        );
        assert!(
            (0.0..=params.max_speed).contains(&speed),
            "speed {speed} outside [0, max]"
        );
        let id = self.next_id;
        self.next_id += 1;
        self.vehicles.push(VehicleState {
            id,
            lane,
            pos_m,
            speed,
            entered_step: self.time_step,
            lane_changes: 0,
            params,
        });
        self.spawned += 1;
        if params.kind == VehicleKind::Ev {
            assert!(self.ev_id.is_none(), "world already has an EV");
            self.ev_id = Some(id);
        }
        id
    }

    /// The vehicle an entrant at position 0 of `lane` would follow: the
    /// occupant with the smallest front-bumper position, with its rear gap
    /// measured from the road start.
    pub fn entry_leader(&self, lane: usize) -> Option<NeighborInfo> {
        self.vehicles
            .iter()
            .filter(|v| v.lane == lane)
            .min_by(|a, b| a.pos_m.total_cmp(&b.pos_m))
            .map(|v| NeighborInfo {
                id: v.id,
                gap_m: v.rear_m(),
            })
    }

    /// Whether a vehicle with `params` can enter at position 0 of `lane`:
    /// the rearmost occupant must leave more than `min_gap` of clear road.
    pub fn entry_clear(&self, lane: usize, params: &VehicleParams) -> bool {
        self.entry_leader(lane)
            .map(|n| n.gap_m > params.min_gap_m)
            .unwrap_or(true)
    }

    /// The speed at which a vehicle may enter `lane` at position 0 without
    /// starting out above its safe speed: `desired`, capped by the safe
    /// speed toward the rearmost occupant and the vehicle's own maximum.
    pub fn entry_speed(&self, lane: usize, desired: f64, params: &VehicleParams) -> f64 {
        let mut speed = desired.min(params.max_speed);
        if let Some(leader) = self.entry_leader(lane) {
            let ls = self.vehicle(leader.id).speed;
            speed = speed.min(safe_speed(leader.gap_m, ls, speed, params, self.road.step_dt));
        }
        speed.max(0.0)
    }

    /// Bernoulli inflow: with probability `arrival_rate * dt` (clamped to 1)
    /// one arrival joins the queue; the head of the queue enters in a
    /// uniformly random lane if the entry gap allows, otherwise it stays
    /// queued for a later step. The entry speed is capped by the safe speed
    /// toward the rearmost occupant so no vehicle starts out unsafe.
    pub fn spawn_traffic(&mut self, flow: &FlowConfig, cv: &VehicleParams) {
        self.spawn_attempts += 1;
        let p = (flow.arrival_rate * self.road.step_dt).clamp(0.0, 1.0);
        if p > 0.0 && self.rng.gen::<f64>() < p {
            self.spawn_queue += 1;
        }
        if self.spawn_queue > 0 {
            let lane = self.rng.gen_range(0..self.road.lane_count);
            if self.entry_clear(lane, cv) {
                let speed = self.entry_speed(lane, flow.entry_speed, cv);
                self.insert_vehicle(lane, 0.0, speed, *cv);
                self.spawn_queue -= 1;
            }
        }
    }

    /// Nearest vehicle ahead of `v` in `lane`, with the net gap from `v`'s
    /// front bumper to that vehicle's rear.
    pub fn leader_in_lane(&self, v: &VehicleState, lane: usize) -> Option<NeighborInfo> {
        self.vehicles
            .iter()
            .filter(|o| o.id != v.id && o.lane == lane && o.pos_m > v.pos_m)
            .min_by(|a, b| a.pos_m.total_cmp(&b.pos_m))
            .map(|o| NeighborInfo {
                id: o.id,
                gap_m: o.rear_m() - v.pos_m,
            })
    }

    /// Nearest vehicle at or behind `v` in `lane` (relative position <= 0,
    /// excluding `v`), with the net gap from its front to `v`'s rear.
    pub fn follower_in_lane(&self, v: &VehicleState, lane: usize) -> Option<NeighborInfo> {
        self.vehicles
            .iter()
            .filter(|o| o.id != v.id && o.lane == lane && o.pos_m <= v.pos_m)
            .max_by(|a, b| a.pos_m.total_cmp(&b.pos_m))
            .map(|o| NeighborInfo {
                id: o.id,
                gap_m: v.rear_m() - o.pos_m,
            })
    }

    /// Role-based neighbourhood of `v`: the six first-tier roles plus the
    /// leaders of the in-lane, left and right leaders. Second-tier gaps are
    /// measured from `v`'s front bumper as well.
    pub fn neighbors(&self, id: VehicleId) -> NeighborSet {
        let v = self.vehicle(id);
        let mut set = NeighborSet {
            leader: self.leader_in_lane(v, v.lane),
            follower: self.follower_in_lane(v, v.lane),
            ..NeighborSet::default()
        };
        if v.lane + 1 < self.road.lane_count {
            set.left_leader = self.leader_in_lane(v, v.lane + 1);
            set.left_follower = self.follower_in_lane(v, v.lane + 1);
        }
        if v.lane > 0 {
            set.right_leader = self.leader_in_lane(v, v.lane - 1);
            set.right_follower = self.follower_in_lane(v, v.lane - 1);
        }
        let second = |first: &Option<NeighborInfo>| {
            first.and_then(|n| {
                let parent = self.vehicle(n.id);
                self.leader_in_lane(parent, parent.lane)
                    .map(|g| NeighborInfo {
                        id: g.id,
                        gap_m: self.vehicle(g.id).rear_m() - v.pos_m,
                    })
            })
        };
        set.leader_of_leader = second(&set.leader);
        set.leader_of_left_leader = second(&set.left_leader);
        set.leader_of_right_leader = second(&set.right_leader);
        set
    }

    /// Whether `id` may move one lane in `direction` without violating the
    /// gap and safe-speed constraints in the target lane. Boundary values
    /// are permitted: gaps exactly at `min_gap`, speeds exactly at the safe
    /// speed. Pure predicate.
    pub fn check_lane_change_safety(&self, id: VehicleId, direction: LaneChange) -> bool {
        let v = self.vehicle(id);
        let target = v.lane as i64 + direction.delta();
        assert!(
            target >= 0 && (target as usize) < self.road.lane_count,
            "target lane {target} does not exist"
        );
        let target = target as usize;
        let dt = self.road.step_dt;
        if let Some(leader) = self.leader_in_lane(v, target) {
            let ls = self.vehicle(leader.id).speed;
            if leader.gap_m < v.params.min_gap_m
                || v.speed > safe_speed(leader.gap_m, ls, v.speed, &v.params, dt)
            {
                return false;
            }
        }
        if let Some(follower) = self.follower_in_lane(v, target) {
            let f = self.vehicle(follower.id);
            if follower.gap_m < f.params.min_gap_m
                || f.speed > safe_speed(follower.gap_m, v.speed, f.speed, &f.params, dt)
            {
                return false;
            }
        }
        true
    }

    /// Instantaneous lane-index swap; longitudinal state is untouched.
    /// Callers must have passed `check_lane_change_safety` first.
    pub fn apply_lane_change(&mut self, id: VehicleId, direction: LaneChange) {
        debug_assert!(
            self.check_lane_change_safety(id, direction),
            "lane change applied without a passing safety check"
        );
        let lanes = self.road.lane_count;
        let v = self.vehicle_mut(id);
        let target = v.lane as i64 + direction.delta();
        assert!(target >= 0 && (target as usize) < lanes);
        v.lane = target as usize;
        v.lane_changes += 1;
    }

    /// Advance all vehicles by one step. Per vehicle the achieved speed is
    /// `min(speed + accel * dt, safe speed w.r.t. its leader, max_speed)`
    /// floored at zero; CVs then lose up to `sigma * accel_limit * dt`
    /// uniformly at random. Vehicles whose front bumper reaches the road end
    /// are removed and recorded. Vehicles absent from `commands` drive
    /// free-flow (full acceleration toward their limits).
    ///
    /// The update is synchronized: every safe speed is computed against the
    /// pre-step state. Increments `time_step`.
    pub fn step_longitudinal(&mut self, commands: &HashMap<VehicleId, f64>) -> Vec<ExitRecord> {
        let dt = self.road.step_dt;
        let mut new_speeds = Vec::with_capacity(self.vehicles.len());
        for v in &self.vehicles {
            let accel = *commands.get(&v.id).unwrap_or(&v.params.accel_limit);
            assert!(
                -v.params.decel_limit - 1e-9 <= accel && accel <= v.params.accel_limit + 1e-9,
                "commanded acceleration {accel} outside vehicle limits"
            );
            let mut target = v.speed + accel * dt;
            if let Some(leader) = self.leader_in_lane(v, v.lane) {
                let ls = self.vehicle(leader.id).speed;
                target = target.min(safe_speed(leader.gap_m, ls, v.speed, &v.params, dt));
            }
            target = target.min(v.params.max_speed).max(0.0);
            new_speeds.push(target);
        }
        for (v, target) in self.vehicles.iter_mut().zip(new_speeds.iter_mut()) {
            if v.params.kind == VehicleKind::Cv {
                let dawdle = v.params.sigma * v.params.accel_limit * dt * self.rng.gen::<f64>();
                *target = (*target - dawdle).max(0.0);
            }
            v.speed = *target;
            v.pos_m += v.speed * dt;
        }
        self.time_step += 1;
        let mut exits = Vec::new();
        let (road_len, time_step) = (self.road.length_m, self.time_step);
        self.vehicles.retain(|v| {
            if v.pos_m >= road_len {
                exits.push(ExitRecord {
                    id: v.id,
                    kind: v.params.kind,
                    entered_step: v.entered_step,
                    exited_step: time_step,
                    final_speed: v.speed,
                    final_lane: v.lane,
                    lane_changes: v.lane_changes,
                });
                false
            } else {
                true
            }
        });
        self.exited += exits.len() as u64;
        if exits.iter().any(|e| e.kind == VehicleKind::Ev) {
            self.ev_id = None;
        }
        self.exits.extend(exits.iter().copied());
        exits
    }

    /// All same-lane pairs whose bodies overlap longitudinally, as
    /// (follower, leader). Touching bumpers do not count. New pairs are
    /// appended to the collision log.
    pub fn detect_collisions(&mut self) -> Vec<(VehicleId, VehicleId)> {
        let mut pairs = Vec::new();
        for lane in 0..self.road.lane_count {
            let mut in_lane: Vec<&VehicleState> =
                self.vehicles.iter().filter(|v| v.lane == lane).collect();
            in_lane.sort_by(|a, b| a.pos_m.total_cmp(&b.pos_m));
            for pair in in_lane.windows(2) {
                let (follower, leader) = (pair[0], pair[1]);
                if follower.pos_m > leader.rear_m() {
                    pairs.push((follower.id, leader.id));
                }
            }
        }
        for &(f, l) in &pairs {
            self.collision_log.push((self.time_step, f, l));
        }
        pairs
    }

    /// Whether any logged collision involves the EV.
    pub fn ev_collided(&self) -> bool {
        match self.ev_id {
            Some(ev) => self.collision_log.iter().any(|&(_, a, b)| a == ev || b == ev),
            // The EV may already have exited; check the log against exits.
            None => {
                let ev_ids: Vec<VehicleId> = self
                    .exits
                    .iter()
                    .filter(|e| e.kind == VehicleKind::Ev)
                    .map(|e| e.id)
                    .collect();
                self.collision_log
                    .iter()
                    .any(|&(_, a, b)| ev_ids.contains(&a) || ev_ids.contains(&b))
            }
        }
    }

    /// Order-insensitive digest of the kinematic state, for determinism
    /// checks.
    pub fn state_digest(&self) -> u64 {
        let mut sorted: Vec<&VehicleState> = self.vehicles.iter().collect();
        sorted.sort_by_key(|v| v.id);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_u64(self.time_step);
        for v in sorted {
            h.write_u64(v.id);
            h.write_usize(v.lane);
            h.write_u64(v.pos_m.to_bits());
            h.write_u64(v.speed.to_bits());
        }
        h.finish()
    }

    /// spawned - exited - present, zero whenever bookkeeping is intact.
    pub fn conservation_residual(&self) -> i64 {
        self.spawned as i64 - self.exited as i64 - self.vehicles.len() as i64
    }
}
