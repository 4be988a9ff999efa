//! The EV's learner: masked epsilon-greedy action selection over a small
//! Q-network, a safety gate mirroring the simulator-side lane-change checks,
//! ring-buffer experience replay and a periodically synchronized target
//! network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{
    adam_step, backward, AdamConfig, AdamState, BatchSample, QNetwork, Q_LAYER_SIZES,
};
use crate::perception::Observation;
use crate::rng::stream;
use crate::road::{LaneChange, VehicleId, World};

pub const ACTION_COUNT: usize = 5;

/// The discrete action set: hold, accelerate, decelerate, lane left, lane
/// right, with output indices 0..4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    NoOp,
    Accelerate,
    Decelerate,
    Left,
    Right,
}

pub const ALL_ACTIONS: [Action; ACTION_COUNT] = [
    Action::NoOp,
    Action::Accelerate,
    Action::Decelerate,
    Action::Left,
    Action::Right,
];

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::NoOp => 0,
            Action::Accelerate => 1,
            Action::Decelerate => 2,
            Action::Left => 3,
            Action::Right => 4,
        }
    }

    pub fn from_index(i: usize) -> Self {
        ALL_ACTIONS[i]
    }

    pub fn letter(self) -> char {
        match self {
            Action::NoOp => 'N',
            Action::Accelerate => 'A',
            Action::Decelerate => 'D',
            Action::Left => 'L',
            Action::Right => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'N' => Some(Action::NoOp),
            'A' => Some(Action::Accelerate),
            'D' => Some(Action::Decelerate),
            'L' => Some(Action::Left),
            'R' => Some(Action::Right),
            _ => None,
        }
    }
}

/// Which actions are permitted this step; NoOp is always legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask(pub [bool; ACTION_COUNT]);

impl ActionMask {
    pub fn all_permitted() -> Self {
        ActionMask([true; ACTION_COUNT])
    }

    pub fn permits(&self, a: Action) -> bool {
        self.0[a.index()]
    }

    pub fn permitted_actions(&self) -> impl Iterator<Item = Action> + '_ {
        ALL_ACTIONS.iter().copied().filter(|a| self.permits(*a))
    }
}

/// Road-topology and speed-limit mask: lane changes off the road edge and
/// longitudinal commands that would leave [0, max_speed] are removed before
/// selection.
pub fn rule_mask(world: &World, ev: VehicleId, action_accel: f64) -> ActionMask {
    let v = world.vehicle(ev);
    let dt = world.road.step_dt;
    let mut mask = [true; ACTION_COUNT];
    mask[Action::Accelerate.index()] = v.speed + action_accel * dt <= v.params.max_speed;
    mask[Action::Decelerate.index()] = v.speed - action_accel * dt >= 0.0;
    mask[Action::Left.index()] = v.lane + 1 < world.road.lane_count;
    mask[Action::Right.index()] = v.lane > 0;
    ActionMask(mask)
}

/// How the executed action was arrived at. Only agent-determined choices
/// (greedy picks that were already permitted, and exploratory draws) are
/// learned from; a fallback forced by the rule mask is prior knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Greedy,
    Explore,
    MaskFallback,
}

impl Provenance {
    pub fn agent_determined(self) -> bool {
        !matches!(self, Provenance::MaskFallback)
    }
}

/// The deterministic arm of the selection rule: the highest-Q permitted
/// action, ties broken toward the lowest index. When the unmasked argmax is
/// itself forbidden, the suboptimal permitted choice is flagged as a mask
/// fallback (prior knowledge, not the agent's own pick).
pub fn greedy_action(q_values: &[f64; ACTION_COUNT], mask: &ActionMask) -> (Action, Provenance) {
    debug_assert!(mask.0.iter().any(|&p| p), "mask permits no action");
    let argmax = |candidates: &mut dyn Iterator<Item = usize>| -> usize {
        candidates
            .max_by(|&a, &b| match q_values[a].total_cmp(&q_values[b]) {
                std::cmp::Ordering::Equal => b.cmp(&a),
                other => other,
            })
            .expect("at least one candidate")
    };
    let unrestricted = argmax(&mut (0..ACTION_COUNT));
    if mask.0[unrestricted] {
        (Action::from_index(unrestricted), Provenance::Greedy)
    } else {
        let best_permitted = argmax(&mut (0..ACTION_COUNT).filter(|&i| mask.0[i]));
        (Action::from_index(best_permitted), Provenance::MaskFallback)
    }
}

/// Masked epsilon-greedy selection. With probability epsilon, a uniformly
/// random permitted action; otherwise the greedy choice above.
pub fn select_action(
    q_values: &[f64; ACTION_COUNT],
    mask: &ActionMask,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> (Action, Provenance) {
    debug_assert!(mask.0.iter().any(|&p| p), "mask permits no action");
    if rng.gen::<f64>() < epsilon {
        let permitted: Vec<Action> = mask.permitted_actions().collect();
        let pick = permitted[rng.gen_range(0..permitted.len())];
        return (pick, Provenance::Explore);
    }
    greedy_action(q_values, mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOutcome {
    Accepted,
    Rejected,
}

/// Safety gate on the chosen action, mirroring simulator-side enforcement:
/// lane changes are refused when the lane-change safety check fails, and a
/// refused action is replaced by NoOp with the step excluded from learning.
/// Longitudinal commands are always executable because the car-following
/// clamp already caps the achieved speed at the safe speed; any violation
/// beyond that contract is unreachable, so A/D/N pass the gate and the agent
/// learns their (possibly clamped) consequences.
pub fn safety_gate(world: &World, ev: VehicleId, action: Action, _action_accel: f64) -> GateOutcome {
    let v = world.vehicle(ev);
    let rejected = match action {
        Action::NoOp | Action::Accelerate | Action::Decelerate => false,
        Action::Left | Action::Right => {
            let dir = if action == Action::Left {
                LaneChange::Left
            } else {
                LaneChange::Right
            };
            let target = v.lane as i64 + dir.delta();
            if target < 0 || target as usize >= world.road.lane_count {
                true
            } else {
                !world.check_lane_change_safety(ev, dir)
            }
        }
    };
    if rejected {
        GateOutcome::Rejected
    } else {
        GateOutcome::Accepted
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decrement: f64,
    pub epsilon_floor: f64,
    /// Learning iterations between target-network synchronizations.
    pub target_sync_period: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate_initial: f64,
    pub learning_rate_decay_factor: f64,
    pub learning_rate_decay_period: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_training_steps: u64,
    /// Longitudinal command magnitude of the accelerate/decelerate actions.
    pub action_accel: f64,
    /// Reproduce the inverted wording for comparison runs: the target
    /// network both selects actions and overwrites the evaluate network at
    /// sync time. Off by default (standard behaviour: the evaluate network
    /// selects and is copied into the target).
    pub paper_literal_sync: bool,
    /// Extension hook; uniform sampling is the only implemented strategy
    /// and configuration rejects `true`.
    pub prioritized_replay: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon_start: 0.9,
            epsilon_decrement: 4e-6,
            epsilon_floor: 0.1,
            target_sync_period: 5000,
            batch_size: 32,
            replay_capacity: 2000,
            learning_rate_initial: 1e-3,
            learning_rate_decay_factor: 0.99,
            learning_rate_decay_period: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_training_steps: 200_000,
            action_accel: 3.0,
            paper_literal_sync: false,
            prioritized_replay: false,
        }
    }
}

impl TrainingConfig {
    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate_initial: self.learning_rate_initial,
            learning_rate_decay_factor: self.learning_rate_decay_factor,
            learning_rate_decay_period: self.learning_rate_decay_period,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// The step index at which the annealed value reaches the floor. The
    /// crossing is resolved to an integer step count once so the floor is
    /// hit exactly despite rounding in the linear expression.
    fn epsilon_floor_step(&self) -> u64 {
        let steps = (self.epsilon_start - self.epsilon_floor) / self.epsilon_decrement;
        if steps.is_finite() {
            steps.round().max(0.0) as u64
        } else {
            u64::MAX
        }
    }
}

/// Exploration rate after `step` environment steps: linear annealing from
/// the start value, pinned to the floor from the crossing step onward.
pub fn epsilon_at(step: u64, cfg: &TrainingConfig) -> f64 {
    if step >= cfg.epsilon_floor_step() {
        cfg.epsilon_floor
    } else {
        cfg.epsilon_start - cfg.epsilon_decrement * step as f64
    }
}

/// One replay record.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest record is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    cursor: usize,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            data: Vec::with_capacity(capacity),
            cursor: 0,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }

    /// Uniform sample with replacement; `None` while the buffer holds fewer
    /// than `n` records (learning is skipped, not an error).
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        if self.data.len() < n {
            return None;
        }
        Some((0..n).map(|_| rng.gen_range(0..self.data.len())).collect())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }
}

/// The learner: evaluate and target networks, optimizer state, replay and
/// the exploration RNG, plus the step counters that drive the schedules.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: TrainingConfig,
    pub eval_net: QNetwork,
    pub target_net: QNetwork,
    pub adam: AdamState,
    pub replay: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub env_steps: u64,
    pub learn_steps: u64,
    pub episodes: u64,
}

impl DqnAgent {
    pub fn new(cfg: TrainingConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "agent");
        let eval_net = QNetwork::new(&Q_LAYER_SIZES, &mut rng);
        let target_net = eval_net.clone();
        let adam = AdamState::zeros_like(&eval_net);
        let replay = ReplayBuffer::new(cfg.replay_capacity);
        Self {
            cfg,
            eval_net,
            target_net,
            adam,
            replay,
            rng,
            env_steps: 0,
            learn_steps: 0,
            episodes: 0,
        }
    }

    /// The network that drives action selection.
    pub fn selection_net(&self) -> &QNetwork {
        if self.cfg.paper_literal_sync {
            &self.target_net
        } else {
            &self.eval_net
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.env_steps, &self.cfg)
    }

    pub fn q_values(&self, obs: &Observation) -> [f64; ACTION_COUNT] {
        let out = self.selection_net().forward(obs.as_slice());
        let mut q = [0.0; ACTION_COUNT];
        q.copy_from_slice(&out);
        q
    }

    /// Select an action for `obs` under the given mask; `greedy` forces
    /// epsilon to zero (evaluation mode).
    pub fn act(&mut self, obs: &Observation, mask: &ActionMask, greedy: bool) -> (Action, Provenance) {
        let eps = if greedy { 0.0 } else { self.epsilon() };
        let q = self.q_values(obs);
        select_action(&q, mask, eps, &mut self.rng)
    }

    /// Regression target for one transition, from the target network.
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.terminal {
            t.reward
        } else {
            let q_next = self.target_net.forward(t.next_obs.as_slice());
            let max_q = q_next.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            t.reward + self.cfg.gamma * max_q
        }
    }

    /// Store a gate-accepted, agent-determined transition.
    pub fn store(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// One learning iteration: sample a mini-batch, regress the evaluate
    /// network toward the targets, and synchronize the target network every
    /// `target_sync_period` iterations. Returns the batch loss, or `None`
    /// while the buffer is smaller than the batch size.
    pub fn learn(&mut self) -> Option<f64> {
        let idx = self
            .replay
            .sample_indices(self.cfg.batch_size, &mut self.rng)?;
        let targets: Vec<f64> = idx
            .iter()
            .map(|&i| self.td_target(self.replay.get(i)))
            .collect();
        let batch: Vec<BatchSample<'_>> = idx
            .iter()
            .zip(targets.iter())
            .map(|(&i, &target)| {
                let t = self.replay.get(i);
                BatchSample {
                    input: t.obs.as_slice(),
                    action_index: t.action.index(),
                    target,
                }
            })
            .collect();
        let (grads, loss) = backward(&self.eval_net, &batch);
        drop(batch);
        adam_step(
            &mut self.eval_net,
            &grads,
            &mut self.adam,
            &self.cfg.adam_config(),
            self.learn_steps,
        );
        self.learn_steps += 1;
        if self.learn_steps % self.cfg.target_sync_period == 0 {
            self.sync_target();
        }
        Some(loss)
    }

    /// Copy one network's parameters onto the other. The standard direction
    /// is evaluate -> target; under `paper_literal_sync` the copy runs
    /// target -> evaluate instead.
    pub fn sync_target(&mut self) {
        if self.cfg.paper_literal_sync {
            self.eval_net = self.target_net.clone();
        } else {
            self.target_net = self.eval_net.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::{RoadConfig, VehicleParams};

    fn obs_of(fill: f64) -> Observation {
        Observation([fill; 32])
    }

    #[test]
    fn epsilon_schedule_endpoints_and_floor() {
        let cfg = TrainingConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 0.9);
        assert_eq!(epsilon_at(200_000, &cfg), 0.1);
        assert_eq!(epsilon_at(1_000_000, &cfg), 0.1);
        // Monotone non-increasing across the crossing.
        let mut prev = f64::INFINITY;
        for step in (0..300_000).step_by(997) {
            let e = epsilon_at(step, &cfg);
            assert!(e <= prev);
            prev = e;
        }
        assert!((epsilon_at(100_000, &cfg) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rule_mask_edges() {
        let mut w = World::new(RoadConfig::default(), stream(1, "world"));
        // Rightmost lane, mid speed: only Right masked.
        let ev = w.insert_vehicle(0, 500.0, 20.0, VehicleParams::ev_default());
        let m = rule_mask(&w, ev, 3.0);
        assert_eq!(m.0, [true, true, true, true, false]);

        // Max speed on the leftmost lane: Accelerate and Left masked.
        let mut w2 = World::new(RoadConfig::default(), stream(2, "world"));
        let ev2 = w2.insert_vehicle(2, 500.0, 40.0, VehicleParams::ev_default());
        let m2 = rule_mask(&w2, ev2, 3.0);
        assert_eq!(m2.0, [true, false, true, false, true]);

        // Middle lane, mid speed: everything permitted.
        let mut w3 = World::new(RoadConfig::default(), stream(3, "world"));
        let ev3 = w3.insert_vehicle(1, 500.0, 20.0, VehicleParams::ev_default());
        assert_eq!(rule_mask(&w3, ev3, 3.0), ActionMask::all_permitted());

        // Accelerating exactly to max speed stays permitted; decelerating
        // exactly to zero stays permitted.
        let mut w4 = World::new(RoadConfig::default(), stream(4, "world"));
        let ev4 = w4.insert_vehicle(1, 500.0, 37.0, VehicleParams::ev_default());
        assert!(rule_mask(&w4, ev4, 3.0).permits(Action::Accelerate));
        let mut w5 = World::new(RoadConfig::default(), stream(5, "world"));
        let ev5 = w5.insert_vehicle(1, 500.0, 3.0, VehicleParams::ev_default());
        assert!(rule_mask(&w5, ev5, 3.0).permits(Action::Decelerate));
        let mut w6 = World::new(RoadConfig::default(), stream(6, "world"));
        let ev6 = w6.insert_vehicle(1, 500.0, 2.9, VehicleParams::ev_default());
        assert!(!rule_mask(&w6, ev6, 3.0).permits(Action::Decelerate));
    }

    #[test]
    fn greedy_selection_and_mask_fallback() {
        let mut rng = stream(7, "select");
        let q = [5.0, 4.0, 3.0, 2.0, 1.0];
        let (a, p) = select_action(&q, &ActionMask::all_permitted(), 0.0, &mut rng);
        assert_eq!(a, Action::NoOp);
        assert_eq!(p, Provenance::Greedy);

        let mut mask = ActionMask::all_permitted();
        mask.0[0] = false;
        let (a, p) = select_action(&q, &mask, 0.0, &mut rng);
        assert_eq!(a, Action::Accelerate);
        assert_eq!(p, Provenance::MaskFallback);
    }

    #[test]
    fn exploration_respects_mask() {
        let mut rng = stream(8, "select");
        let q = [0.0; 5];
        let mut mask = ActionMask([false; 5]);
        mask.0[0] = true;
        for _ in 0..100 {
            let (a, p) = select_action(&q, &mask, 1.0, &mut rng);
            assert_eq!(a, Action::NoOp);
            assert_eq!(p, Provenance::Explore);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut rng = stream(9, "select");
        let q = [1.0, 1.0, 1.0, 1.0, 1.0];
        let (a, _) = select_action(&q, &ActionMask::all_permitted(), 0.0, &mut rng);
        assert_eq!(a, Action::NoOp);
        let mut mask = ActionMask::all_permitted();
        mask.0[0] = false;
        let (a, _) = select_action(&q, &mask, 0.0, &mut rng);
        assert_eq!(a, Action::Accelerate);
    }

    #[test]
    fn gate_accepts_noop_and_clear_lane_change() {
        let mut w = World::new(RoadConfig::default(), stream(10, "world"));
        let ev = w.insert_vehicle(1, 500.0, 20.0, VehicleParams::ev_default());
        assert_eq!(safety_gate(&w, ev, Action::NoOp, 3.0), GateOutcome::Accepted);
        assert_eq!(safety_gate(&w, ev, Action::Left, 3.0), GateOutcome::Accepted);
        assert_eq!(
            safety_gate(&w, ev, Action::Accelerate, 3.0),
            GateOutcome::Accepted
        );
    }

    #[test]
    fn gate_rejects_unsafe_lane_change_but_not_longitudinal_commands() {
        let mut w = World::new(RoadConfig::default(), stream(11, "world"));
        let cv = VehicleParams::cv_default();
        let ev = w.insert_vehicle(1, 500.0, 20.0, VehicleParams::ev_default());
        // Abreast vehicle in the left lane blocks the change.
        w.insert_vehicle(2, 500.0, 15.0, cv);
        assert_eq!(safety_gate(&w, ev, Action::Left, 3.0), GateOutcome::Rejected);
        // A slow leader close ahead does not reject acceleration: the
        // car-following clamp bounds the achieved speed, and the step stays
        // learnable so the agent can observe that the command had no effect.
        w.insert_vehicle(1, 515.0, 5.0, cv);
        assert_eq!(
            safety_gate(&w, ev, Action::Accelerate, 3.0),
            GateOutcome::Accepted
        );
        assert_eq!(safety_gate(&w, ev, Action::NoOp, 3.0), GateOutcome::Accepted);
    }

    #[test]
    fn replay_is_fifo_ring() {
        let mut buf = ReplayBuffer::new(2000);
        let t = |r: f64| Transition {
            obs: obs_of(0.0),
            action: Action::NoOp,
            reward: r,
            next_obs: obs_of(0.0),
            terminal: false,
        };
        buf.push(t(0.0));
        assert_eq!(buf.len(), 1);
        for i in 1..2000 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 2000);
        buf.push(t(2000.0));
        assert_eq!(buf.len(), 2000);
        // Oldest record (reward 0) must be gone; order stays FIFO module
        // the ring: slot 0 now holds the newest record.
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards[0], 2000.0);
        assert_eq!(rewards[1], 1.0);
        assert_eq!(rewards[1999], 1999.0);
        assert!(!rewards.contains(&0.0));
    }

    #[test]
    fn sampling_below_batch_size_is_skipped_and_seeded() {
        let mut buf = ReplayBuffer::new(2000);
        let t = Transition {
            obs: obs_of(0.1),
            action: Action::NoOp,
            reward: 1.0,
            next_obs: obs_of(0.2),
            terminal: false,
        };
        for _ in 0..31 {
            buf.push(t);
        }
        let mut rng = stream(12, "sample");
        assert!(buf.sample_indices(32, &mut rng).is_none());
        buf.push(t);
        let mut rng_a = stream(13, "sample");
        let mut rng_b = stream(13, "sample");
        let a = buf.sample_indices(32, &mut rng_a).unwrap();
        let b = buf.sample_indices(32, &mut rng_b).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
    }

    #[test]
    fn td_target_terminal_and_bootstrap() {
        let mut agent = DqnAgent::new(TrainingConfig::default(), 99);
        let term = Transition {
            obs: obs_of(0.0),
            action: Action::NoOp,
            reward: 0.5,
            next_obs: obs_of(0.0),
            terminal: true,
        };
        assert_eq!(agent.td_target(&term), 0.5);

        agent.target_net = QNetwork::zeros(&Q_LAYER_SIZES);
        let boot = Transition {
            obs: obs_of(0.0),
            action: Action::NoOp,
            reward: 1.0,
            next_obs: obs_of(0.3),
            terminal: false,
        };
        assert_eq!(agent.td_target(&boot), 1.0);

        // Known target maximum: bias the first output unit of a zero net.
        agent.target_net.layers.last_mut().unwrap().biases[0] = 2.0;
        let t = Transition {
            obs: obs_of(0.0),
            action: Action::NoOp,
            reward: 0.0,
            next_obs: obs_of(0.0),
            terminal: false,
        };
        assert!((agent.td_target(&t) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn target_sync_period_and_idempotence() {
        let mut agent = DqnAgent::new(TrainingConfig::default(), 3);
        let t = Transition {
            obs: obs_of(0.2),
            action: Action::Accelerate,
            reward: 0.1,
            next_obs: obs_of(0.25),
            terminal: false,
        };
        for _ in 0..64 {
            agent.store(t);
        }
        let initial_target = agent.target_net.clone();
        for i in 1..5000u64 {
            agent.learn().unwrap();
            let _ = i;
        }
        assert_eq!(agent.learn_steps, 4999);
        assert_eq!(
            agent.target_net, initial_target,
            "no sync before the period elapses"
        );
        agent.learn().unwrap();
        assert_eq!(agent.target_net, agent.eval_net, "sync at exactly 5000");
        // Re-syncing without learning in between changes nothing.
        let snapshot = agent.target_net.clone();
        agent.sync_target();
        agent.sync_target();
        assert_eq!(agent.target_net, snapshot);
        // After a sync both nets agree everywhere.
        let probe = obs_of(0.77);
        assert_eq!(
            agent.eval_net.forward(probe.as_slice()),
            agent.target_net.forward(probe.as_slice())
        );
    }

    #[test]
    fn paper_literal_sync_selects_from_target_and_copies_backward() {
        let cfg = TrainingConfig {
            paper_literal_sync: true,
            ..TrainingConfig::default()
        };
        let mut agent = DqnAgent::new(cfg, 4);
        // Make the two nets differ, then check the selection source and the
        // reversed copy direction.
        agent.eval_net.layers[0].weights[0] += 1.0;
        assert_eq!(
            agent.selection_net().forward(&[0.5; 32]),
            agent.target_net.forward(&[0.5; 32])
        );
        let target_before = agent.target_net.clone();
        agent.sync_target();
        assert_eq!(agent.eval_net, target_before);
    }
}
