//! Rule-based avoiding strategy: CVs in the priority zone ahead of the EV
//! clear its lane when they safely can, and the outcome for the EV's
//! immediate leader is fed back to the agent as a binary observation.

use serde::{Deserialize, Serialize};

use crate::road::{safe_speed, LaneChange, VehicleId, VehicleKind, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanePreference {
    RightFirst,
    LeftFirst,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidanceConfig {
    /// How far ahead of the EV's front bumper the priority zone reaches, in
    /// the EV's lane only.
    pub priority_distance_m: f64,
    pub lane_preference: LanePreference,
}

impl Default for AvoidanceConfig {
    fn default() -> Self {
        Self {
            priority_distance_m: 100.0,
            lane_preference: LanePreference::RightFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvDecision {
    AccelerateAway,
    LaneChangedLeft,
    LaneChangedRight,
    /// Neither a safe lane change nor free acceleration is available; the CV
    /// keeps normal car following.
    Blocked,
}

#[derive(Debug, Clone, Default)]
pub struct AvoidanceOutcome {
    /// Per-CV decisions for every CV that was inside the zone, ordered
    /// front to back.
    pub decisions: Vec<(VehicleId, CvDecision)>,
    /// True iff the EV's in-lane leader either was absent from the zone or
    /// resolved to a non-Blocked decision this step.
    pub leader_executed_as: bool,
}

/// The binary observation feature derived from the outcome: 1.0 when the way
/// ahead is not blocked.
pub fn as_feedback(outcome: &AvoidanceOutcome) -> f64 {
    if outcome.leader_executed_as {
        1.0
    } else {
        0.0
    }
}

/// Run the avoiding strategy for every CV in the priority zone and apply the
/// resulting lane changes immediately. Decisions are tried in order: lane
/// change (preferred side first), then acceleration if the CV can speed up
/// without violating the safe speed toward its own leader, else Blocked.
/// Lane changes never bypass `check_lane_change_safety`; longitudinal
/// commands are unchanged because every vehicle already drives free-flow.
///
/// Returns an empty outcome (vacuously successful) when the world has no EV.
pub fn cv_avoidance_policy(world: &mut World, cfg: &AvoidanceConfig) -> AvoidanceOutcome {
    let Some(ev) = world.ev() else {
        return AvoidanceOutcome {
            decisions: Vec::new(),
            leader_executed_as: true,
        };
    };
    let (ev_lane, ev_pos) = (ev.lane, ev.pos_m);
    let dt = world.road.step_dt;

    // CVs ahead of the EV in its lane with a net gap inside the zone,
    // processed front to back so leading CVs clear space first.
    let mut zone: Vec<(VehicleId, f64)> = world
        .vehicles
        .iter()
        .filter(|v| {
            v.params.kind == VehicleKind::Cv
                && v.lane == ev_lane
                && v.pos_m > ev_pos
                && v.rear_m() - ev_pos < cfg.priority_distance_m
        })
        .map(|v| (v.id, v.pos_m))
        .collect();
    zone.sort_by(|a, b| b.1.total_cmp(&a.1));

    // The nearest zone CV ahead is the EV's leader (same lane, minimal gap).
    let leader_id = zone.last().map(|&(id, _)| id);

    let sides = match cfg.lane_preference {
        LanePreference::RightFirst => [LaneChange::Right, LaneChange::Left],
        LanePreference::LeftFirst => [LaneChange::Left, LaneChange::Right],
    };

    let mut decisions = Vec::with_capacity(zone.len());
    for (id, _) in zone {
        let mut decision = None;
        for side in sides {
            let lane = world.vehicle(id).lane as i64 + side.delta();
            if lane >= 0 && (lane as usize) < world.road.lane_count {
                if world.check_lane_change_safety(id, side) {
                    world.apply_lane_change(id, side);
                    decision = Some(match side {
                        LaneChange::Left => CvDecision::LaneChangedLeft,
                        LaneChange::Right => CvDecision::LaneChangedRight,
                    });
                    break;
                }
            }
        }
        let decision = decision.unwrap_or_else(|| {
            let v = world.vehicle(id);
            let reachable = (v.speed + v.params.accel_limit * dt).min(v.params.max_speed);
            let clear = match world.leader_in_lane(v, v.lane) {
                None => true,
                Some(leader) => {
                    let ls = world.vehicle(leader.id).speed;
                    reachable <= safe_speed(leader.gap_m, ls, v.speed, &v.params, dt)
                }
            };
            if clear {
                CvDecision::AccelerateAway
            } else {
                CvDecision::Blocked
            }
        });
        decisions.push((id, decision));
    }

    let leader_executed_as = match leader_id {
        None => true,
        Some(lid) => decisions
            .iter()
            .find(|(id, _)| *id == lid)
            .map(|(_, d)| *d != CvDecision::Blocked)
            .unwrap_or(true),
    };

    AvoidanceOutcome {
        decisions,
        leader_executed_as,
    }
}
