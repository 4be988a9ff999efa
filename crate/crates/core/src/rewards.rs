//! Per-step reward terms: survival-distance, velocity, lane-change penalty
//! and the cooperative term over priority-zone CVs, plus their sum.

use serde::{Deserialize, Serialize};

use crate::agent::Action;

/// Which denominator the velocity term uses. `Printed` divides by
/// (v_current - v_min) and is singular at v_min, hence the epsilon guard and
/// the output clamp; `Span` divides by (v_max - v_min).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityRewardForm {
    Printed,
    Span,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Total length of the section, the survival-distance scale.
    pub d_total: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub lane_change_penalty: f64,
    pub cooperative_enabled: bool,
    pub denominator_epsilon: f64,
    pub velocity_reward_form: VelocityRewardForm,
    /// Absolute tolerance for the "at maximum velocity" equality test.
    pub speed_equality_tolerance: f64,
}

impl RewardConfig {
    pub fn new(d_total: f64, v_max: f64) -> Self {
        Self {
            d_total,
            v_max,
            v_min: 0.0,
            lane_change_penalty: -1.0,
            cooperative_enabled: false,
            denominator_epsilon: 1e-9,
            velocity_reward_form: VelocityRewardForm::Printed,
            speed_equality_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardTerms {
    pub r_col: f64,
    pub r_v: f64,
    pub r_lc: f64,
    pub r_cor: f64,
    pub total: f64,
}

/// Survival-distance term: (d_survive - d_total/2) / d_total, in
/// [-0.5, 0.5]. `d_survive` outside [0, d_total] is a harness bug.
pub fn reward_collision(d_survive: f64, cfg: &RewardConfig) -> f64 {
    assert!(
        (0.0..=cfg.d_total).contains(&d_survive),
        "d_survive {d_survive} outside [0, {}]",
        cfg.d_total
    );
    (d_survive - cfg.d_total / 2.0) / cfg.d_total
}

/// Velocity term, clamped to [-1, 1] to bound the singularity of the
/// printed denominator near v_min.
pub fn reward_velocity(v_current: f64, cfg: &RewardConfig) -> f64 {
    let numerator = v_current - cfg.v_max / 2.0;
    let denominator = match cfg.velocity_reward_form {
        VelocityRewardForm::Printed => (v_current - cfg.v_min).max(cfg.denominator_epsilon),
        VelocityRewardForm::Span => (cfg.v_max - cfg.v_min).max(cfg.denominator_epsilon),
    };
    (numerator / denominator).clamp(-1.0, 1.0)
}

/// Lane-change smoothness penalty: applies only when a lane change is taken
/// at the maximum velocity (within the configured absolute tolerance).
pub fn reward_lane_change(action: Action, v_current: f64, cfg: &RewardConfig) -> f64 {
    let changing = matches!(action, Action::Left | Action::Right);
    if changing && (v_current - cfg.v_max).abs() <= cfg.speed_equality_tolerance {
        cfg.lane_change_penalty
    } else {
        0.0
    }
}

/// Cooperative term over the priority-zone CVs ordered nearest first:
/// the mean of speed ratios weighted e^-i with i starting at 1, so a single
/// full-speed CV yields e^-1 and an empty zone yields 0.
pub fn reward_cooperative(zone_cvs: &[(f64, f64)], cfg: &RewardConfig) -> f64 {
    if !cfg.cooperative_enabled || zone_cvs.is_empty() {
        return 0.0;
    }
    let n = zone_cvs.len() as f64;
    let sum: f64 = zone_cvs
        .iter()
        .enumerate()
        .map(|(idx, &(v, v_max))| (v / v_max) * (-((idx + 1) as f64)).exp())
        .sum();
    sum / n
}

/// Exact sum of the four terms.
pub fn reward_total(r_col: f64, r_v: f64, r_lc: f64, r_cor: f64) -> RewardTerms {
    RewardTerms {
        r_col,
        r_v,
        r_lc,
        r_cor,
        total: r_col + r_v + r_lc + r_cor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RewardConfig {
        RewardConfig::new(2000.0, 40.0)
    }

    #[test]
    fn collision_term_centered_and_extremes() {
        let c = cfg();
        assert_eq!(reward_collision(1000.0, &c), 0.0);
        assert_eq!(reward_collision(2000.0, &c), 0.5);
        assert_eq!(reward_collision(0.0, &c), -0.5);
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn collision_term_rejects_out_of_range() {
        reward_collision(2000.1, &cfg());
    }

    #[test]
    fn collision_term_monotone_and_antisymmetric() {
        let c = cfg();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=100 {
            let d = 20.0 * i as f64;
            let r = reward_collision(d, &c);
            assert!(r >= prev);
            prev = r;
            let mirrored = reward_collision(2000.0 - d, &c);
            assert!((r + mirrored).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_term_printed_form() {
        let c = cfg();
        assert_eq!(reward_velocity(20.0, &c), 0.0);
        assert_eq!(reward_velocity(40.0, &c), 0.5);
        // At v_min the guarded denominator drives the ratio to the clamp floor.
        assert_eq!(reward_velocity(0.0, &c), -1.0);
    }

    #[test]
    fn velocity_term_span_form() {
        let mut c = cfg();
        c.velocity_reward_form = VelocityRewardForm::Span;
        assert_eq!(reward_velocity(40.0, &c), 0.5);
        assert_eq!(reward_velocity(0.0, &c), -0.5);
        assert_eq!(reward_velocity(20.0, &c), 0.0);
    }

    #[test]
    fn lane_change_penalty_only_at_max_speed() {
        let c = cfg();
        assert_eq!(reward_lane_change(Action::Left, 40.0, &c), -1.0);
        assert_eq!(reward_lane_change(Action::Right, 40.0, &c), -1.0);
        assert_eq!(reward_lane_change(Action::Left, 39.0, &c), 0.0);
        assert_eq!(reward_lane_change(Action::Accelerate, 40.0, &c), 0.0);
        // Tolerance window is absolute 1e-9.
        assert_eq!(reward_lane_change(Action::Left, 40.0 - 5e-10, &c), -1.0);
        assert_eq!(reward_lane_change(Action::Left, 40.0 - 1e-8, &c), 0.0);
    }

    #[test]
    fn cooperative_term_direct_evaluations() {
        let mut c = cfg();
        c.cooperative_enabled = true;
        assert_eq!(reward_cooperative(&[], &c), 0.0);
        let single = reward_cooperative(&[(20.0, 20.0)], &c);
        assert!((single - (-1.0f64).exp()).abs() < 1e-12);
        let double = reward_cooperative(&[(20.0, 20.0), (20.0, 20.0)], &c);
        let expected = ((-1.0f64).exp() + (-2.0f64).exp()) / 2.0;
        assert!((double - expected).abs() < 1e-12);
    }

    #[test]
    fn cooperative_term_bounded_by_e_inverse() {
        let mut c = cfg();
        c.cooperative_enabled = true;
        for n in 1..20 {
            let zone: Vec<(f64, f64)> = (0..n).map(|_| (20.0, 20.0)).collect();
            let r = reward_cooperative(&zone, &c);
            assert!(r >= 0.0 && r <= (-1.0f64).exp() + 1e-15);
        }
    }

    #[test]
    fn cooperative_disabled_is_identically_zero_and_sum_matches() {
        let c = cfg();
        assert_eq!(reward_cooperative(&[(20.0, 20.0)], &c), 0.0);
        let t = reward_total(0.3, 0.2, -1.0, 0.0);
        assert_eq!(t.total, 0.3 + 0.2 - 1.0);
    }

    #[test]
    fn total_is_exact_sum() {
        assert_eq!(reward_total(0.0, 0.0, 0.0, 0.0).total, 0.0);
        assert_eq!(reward_total(0.5, 0.5, 0.0, 0.0).total, 1.0);
        let e1 = (-1.0f64).exp();
        let t = reward_total(0.5, 0.5, -1.0, e1);
        assert!((t.total - e1).abs() < 1e-15);
    }
}
