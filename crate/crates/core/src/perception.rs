//! Role-based observation encoding for the EV: six first-tier neighbours,
//! a speed-adaptive second tier of leaders-of-leaders, ego features and the
//! avoiding-strategy feedback bit, packed into a fixed 32-slot vector.

use serde::{Deserialize, Serialize};

use crate::road::{NeighborInfo, VehicleId, World};

pub const OBSERVATION_WIDTH: usize = 32;
pub const FIRST_TIER_SLOTS: usize = 18;
pub const SECOND_TIER_SLOTS: usize = 9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Neighbours farther than this are treated as absent; gaps are
    /// normalized by it.
    pub sensing_range_m: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            sensing_range_m: 200.0,
        }
    }
}

/// One neighbour slot: all three components are zero for an absent
/// neighbour, otherwise presence is 1 and the other two lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborFeature {
    pub presence: f64,
    pub velocity: f64,
    pub distance: f64,
}

/// The fixed-width state vector. Layout:
///   0..18   six first-tier neighbours x (presence, velocity, distance) in
///           order [leader, follower, left leader, left follower,
///           right leader, right follower]
///   18..27  second tier x 3 in order [leader of leader,
///           leader of left leader, leader of right leader]
///   27      ego speed / ego max speed
///   28      ego lane / (lane count - 1)
///   29      ego position / road length
///   30      second tier active flag
///   31      avoiding-strategy feedback
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBSERVATION_WIDTH]);

impl Observation {
    pub fn zeros() -> Self {
        Observation([0.0; OBSERVATION_WIDTH])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn encode_slot(world: &World, info: Option<NeighborInfo>, cfg: &PerceptionConfig) -> NeighborFeature {
    match info {
        Some(n) if n.gap_m <= cfg.sensing_range_m => {
            let v = world.vehicle(n.id);
            NeighborFeature {
                presence: 1.0,
                velocity: (v.speed / v.params.max_speed).clamp(0.0, 1.0),
                distance: (n.gap_m.max(0.0) / cfg.sensing_range_m).clamp(0.0, 1.0),
            }
        }
        _ => NeighborFeature::default(),
    }
}

/// First-tier features, slots 0..18. Absent roles encode as (0, 0, 0);
/// velocities are normalized by each neighbour's own maximum speed.
pub fn encode_compact(world: &World, ev: VehicleId, cfg: &PerceptionConfig) -> [f64; FIRST_TIER_SLOTS] {
    let n = world.neighbors(ev);
    let slots = [
        n.leader,
        n.follower,
        n.left_leader,
        n.left_follower,
        n.right_leader,
        n.right_follower,
    ];
    let mut out = [0.0; FIRST_TIER_SLOTS];
    for (i, info) in slots.iter().enumerate() {
        let f = encode_slot(world, *info, cfg);
        out[3 * i] = f.presence;
        out[3 * i + 1] = f.velocity;
        out[3 * i + 2] = f.distance;
    }
    out
}

/// Second-tier features and the active flag. The tier activates only when
/// the EV moves at strictly more than half its maximum speed; when inactive
/// all nine slots are zero.
pub fn speed_adaptive_extension(
    world: &World,
    ev: VehicleId,
    cfg: &PerceptionConfig,
) -> ([f64; SECOND_TIER_SLOTS], bool) {
    let v = world.vehicle(ev);
    let active = v.speed > v.params.max_speed / 2.0;
    let mut out = [0.0; SECOND_TIER_SLOTS];
    if active {
        let n = world.neighbors(ev);
        let slots = [
            n.leader_of_leader,
            n.leader_of_left_leader,
            n.leader_of_right_leader,
        ];
        for (i, info) in slots.iter().enumerate() {
            let f = encode_slot(world, *info, cfg);
            out[3 * i] = f.presence;
            out[3 * i + 1] = f.velocity;
            out[3 * i + 2] = f.distance;
        }
    }
    (out, active)
}

/// Pack the tiers, ego features and the feedback bit into the fixed layout.
pub fn assemble_observation(
    first: [f64; FIRST_TIER_SLOTS],
    second: [f64; SECOND_TIER_SLOTS],
    active: bool,
    ego_speed_ratio: f64,
    ego_lane_ratio: f64,
    ego_pos_ratio: f64,
    as_flag: f64,
) -> Observation {
    let mut o = [0.0; OBSERVATION_WIDTH];
    o[..FIRST_TIER_SLOTS].copy_from_slice(&first);
    o[FIRST_TIER_SLOTS..FIRST_TIER_SLOTS + SECOND_TIER_SLOTS].copy_from_slice(&second);
    o[27] = ego_speed_ratio;
    o[28] = ego_lane_ratio;
    o[29] = ego_pos_ratio;
    o[30] = if active { 1.0 } else { 0.0 };
    o[31] = as_flag;
    let obs = Observation(o);
    debug_assert!(
        obs.0.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)),
        "observation outside [0,1]: {obs:?}"
    );
    obs
}

/// Full encoding for the EV in its current world.
pub fn observe(world: &World, ev: VehicleId, cfg: &PerceptionConfig, as_flag: f64) -> Observation {
    let first = encode_compact(world, ev, cfg);
    let (second, active) = speed_adaptive_extension(world, ev, cfg);
    let v = world.vehicle(ev);
    assemble_observation(
        first,
        second,
        active,
        (v.speed / v.params.max_speed).clamp(0.0, 1.0),
        v.lane as f64 / (world.road.lane_count - 1) as f64,
        (v.pos_m / world.road.length_m).clamp(0.0, 1.0),
        as_flag,
    )
}

/// Structured view of an observation, mostly for debug printing; converting
/// back yields the original vector bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedObservation {
    pub first_tier: [NeighborFeature; 6],
    pub second_tier: [NeighborFeature; 3],
    pub ego_speed_ratio: f64,
    pub ego_lane_ratio: f64,
    pub ego_pos_ratio: f64,
    pub speed_adaptive_active: f64,
    pub as_feedback: f64,
}

pub const FIRST_TIER_LABELS: [&str; 6] = [
    "leader",
    "follower",
    "left_leader",
    "left_follower",
    "right_leader",
    "right_follower",
];
pub const SECOND_TIER_LABELS: [&str; 3] = [
    "leader_of_leader",
    "leader_of_left_leader",
    "leader_of_right_leader",
];

pub fn decode(obs: &Observation) -> DecodedObservation {
    let slot = |i: usize| NeighborFeature {
        presence: obs.0[3 * i],
        velocity: obs.0[3 * i + 1],
        distance: obs.0[3 * i + 2],
    };
    DecodedObservation {
        first_tier: [slot(0), slot(1), slot(2), slot(3), slot(4), slot(5)],
        second_tier: [slot(6), slot(7), slot(8)],
        ego_speed_ratio: obs.0[27],
        ego_lane_ratio: obs.0[28],
        ego_pos_ratio: obs.0[29],
        speed_adaptive_active: obs.0[30],
        as_feedback: obs.0[31],
    }
}

impl DecodedObservation {
    pub fn to_observation(&self) -> Observation {
        let mut o = [0.0; OBSERVATION_WIDTH];
        for (i, f) in self.first_tier.iter().enumerate() {
            o[3 * i] = f.presence;
            o[3 * i + 1] = f.velocity;
            o[3 * i + 2] = f.distance;
        }
        for (i, f) in self.second_tier.iter().enumerate() {
            o[FIRST_TIER_SLOTS + 3 * i] = f.presence;
            o[FIRST_TIER_SLOTS + 3 * i + 1] = f.velocity;
            o[FIRST_TIER_SLOTS + 3 * i + 2] = f.distance;
        }
        o[27] = self.ego_speed_ratio;
        o[28] = self.ego_lane_ratio;
        o[29] = self.ego_pos_ratio;
        o[30] = self.speed_adaptive_active;
        o[31] = self.as_feedback;
        Observation(o)
    }
}

impl std::fmt::Display for DecodedObservation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (label, feat) in FIRST_TIER_LABELS.iter().zip(self.first_tier.iter()) {
            writeln!(
                f,
                "  {label:<24} presence={:.3} velocity={:.3} distance={:.3}",
                feat.presence, feat.velocity, feat.distance
            )?;
        }
        for (label, feat) in SECOND_TIER_LABELS.iter().zip(self.second_tier.iter()) {
            writeln!(
                f,
                "  {label:<24} presence={:.3} velocity={:.3} distance={:.3}",
                feat.presence, feat.velocity, feat.distance
            )?;
        }
        writeln!(f, "  ego_speed_ratio          {:.3}", self.ego_speed_ratio)?;
        writeln!(f, "  ego_lane_ratio           {:.3}", self.ego_lane_ratio)?;
        writeln!(f, "  ego_pos_ratio            {:.3}", self.ego_pos_ratio)?;
        writeln!(f, "  speed_adaptive_active    {:.0}", self.speed_adaptive_active)?;
        write!(f, "  as_feedback              {:.0}", self.as_feedback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::road::{RoadConfig, VehicleParams};

    fn world() -> World {
        World::new(RoadConfig::default(), stream(1, "world"))
    }

    #[test]
    fn empty_road_first_tier_is_zero() {
        let mut w = world();
        let ev = w.insert_vehicle(1, 500.0, 0.0, VehicleParams::ev_default());
        let first = encode_compact(&w, ev, &PerceptionConfig::default());
        assert_eq!(first, [0.0; FIRST_TIER_SLOTS]);
    }

    #[test]
    fn leader_at_sensing_range_and_max_speed_saturates() {
        let mut w = world();
        let cfg = PerceptionConfig::default();
        let ev = w.insert_vehicle(1, 200.0, 0.0, VehicleParams::ev_default());
        let cv = VehicleParams::cv_default();
        // Net gap exactly at the sensing range: still present, distance 1.0.
        w.insert_vehicle(1, 200.0 + cfg.sensing_range_m + cv.length_m, cv.max_speed, cv);
        let first = encode_compact(&w, ev, &cfg);
        assert_eq!(&first[..3], &[1.0, 1.0, 1.0]);
        // One metre past the range: absent.
        let mut w2 = world();
        let ev2 = w2.insert_vehicle(1, 200.0, 0.0, VehicleParams::ev_default());
        w2.insert_vehicle(1, 201.0 + cfg.sensing_range_m + cv.length_m, cv.max_speed, cv);
        let first2 = encode_compact(&w2, ev2, &cfg);
        assert_eq!(&first2[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_built_scene_matches_manual_encoding() {
        let mut w = world();
        let cfg = PerceptionConfig::default();
        let cv = VehicleParams::cv_default();
        let ev = w.insert_vehicle(1, 500.0, 10.0, VehicleParams::ev_default());
        w.insert_vehicle(1, 545.0, 10.0, cv); // leader: gap 40
        w.insert_vehicle(1, 480.0, 5.0, cv); // follower: gap 500-5-480 = 15
        w.insert_vehicle(2, 525.0, 20.0, cv); // left leader: gap 20
        let first = encode_compact(&w, ev, &cfg);
        let expect = |gap: f64, speed: f64| [1.0, speed / 20.0, gap / 200.0];
        assert_eq!(&first[0..3], &expect(40.0, 10.0));
        assert_eq!(&first[3..6], &expect(15.0, 5.0));
        assert_eq!(&first[6..9], &expect(20.0, 20.0));
        assert_eq!(&first[9..18], &[0.0; 9]);
    }

    #[test]
    fn speed_adaptive_threshold_is_strict() {
        let mut w = world();
        let ev = w.insert_vehicle(1, 500.0, 20.0, VehicleParams::ev_default());
        let (_, active) = speed_adaptive_extension(&w, ev, &PerceptionConfig::default());
        assert!(!active, "exactly half of max speed must stay inactive");
        let mut w2 = world();
        let mut p = VehicleParams::ev_default();
        p.max_speed = 40.0;
        let ev2 = w2.insert_vehicle(1, 500.0, 20.01, p);
        let (second, active2) = speed_adaptive_extension(&w2, ev2, &PerceptionConfig::default());
        assert!(active2);
        assert_eq!(second, [0.0; SECOND_TIER_SLOTS]);
    }

    #[test]
    fn second_tier_matches_manual_encoding_when_active() {
        let mut w = world();
        let cv = VehicleParams::cv_default();
        let ev = w.insert_vehicle(1, 500.0, 30.0, VehicleParams::ev_default());
        w.insert_vehicle(1, 540.0, 10.0, cv);
        w.insert_vehicle(1, 585.0, 16.0, cv); // leader of leader: gap 80 from ego
        let (second, active) = speed_adaptive_extension(&w, ev, &PerceptionConfig::default());
        assert!(active);
        assert_eq!(&second[0..3], &[1.0, 16.0 / 20.0, 80.0 / 200.0]);
        assert_eq!(&second[3..9], &[0.0; 6]);
    }

    #[test]
    fn assemble_layout_and_endpoints() {
        let obs = assemble_observation(
            [0.0; FIRST_TIER_SLOTS],
            [0.0; SECOND_TIER_SLOTS],
            false,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let mut expected = [0.0; OBSERVATION_WIDTH];
        expected[31] = 1.0;
        assert_eq!(obs.0, expected);

        // Ego at max speed, end of road, leftmost lane.
        let mut w = world();
        let ev = w.insert_vehicle(2, 2000.0, 40.0, VehicleParams::ev_default());
        let obs = observe(&w, ev, &PerceptionConfig::default(), 0.0);
        assert_eq!(obs.0[27], 1.0);
        assert_eq!(obs.0[28], 1.0);
        assert_eq!(obs.0[29], 1.0);
        assert_eq!(obs.0[30], 1.0);
    }

    #[test]
    fn decode_roundtrips_losslessly() {
        let mut w = world();
        let cv = VehicleParams::cv_default();
        let ev = w.insert_vehicle(1, 500.0, 33.7, VehicleParams::ev_default());
        w.insert_vehicle(1, 541.3, 11.2, cv);
        w.insert_vehicle(1, 588.9, 17.3, cv);
        w.insert_vehicle(2, 523.4, 3.3, cv);
        w.insert_vehicle(0, 444.4, 19.9, cv);
        let obs = observe(&w, ev, &PerceptionConfig::default(), 1.0);
        assert_eq!(decode(&obs).to_observation(), obs);
    }

    #[test]
    fn storage_order_never_changes_observation() {
        let mut w = world();
        let cv = VehicleParams::cv_default();
        let ev = w.insert_vehicle(1, 500.0, 30.0, VehicleParams::ev_default());
        w.insert_vehicle(1, 545.0, 10.0, cv);
        w.insert_vehicle(2, 525.0, 20.0, cv);
        w.insert_vehicle(0, 480.0, 15.0, cv);
        let before = observe(&w, ev, &PerceptionConfig::default(), 0.0);
        w.vehicles.reverse();
        let after = observe(&w, ev, &PerceptionConfig::default(), 0.0);
        assert_eq!(before, after);
    }
}
