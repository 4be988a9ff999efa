//! Run configuration: a TOML file with one section per subsystem. Missing
//! keys take the documented defaults; unknown keys are rejected; every value
//! is validated against its module's invariants before a run starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avoidance::AvoidanceConfig;
use crate::agent::TrainingConfig;
use crate::perception::PerceptionConfig;
use crate::rewards::{RewardConfig, VelocityRewardForm};
use crate::road::{FlowConfig, RoadConfig, VehicleKind, VehicleParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read configuration {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

macro_rules! params_section {
    ($name:ident, $kind:expr, $defaults:expr) => {
        #[derive(Debug, Clone, Copy, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub length_m: f64,
            pub width_m: f64,
            pub min_gap_m: f64,
            pub max_speed: f64,
            pub accel_limit: f64,
            pub decel_limit: f64,
            pub sigma: f64,
        }

        impl Default for $name {
            fn default() -> Self {
                let p = $defaults;
                Self {
                    length_m: p.length_m,
                    width_m: p.width_m,
                    min_gap_m: p.min_gap_m,
                    max_speed: p.max_speed,
                    accel_limit: p.accel_limit,
                    decel_limit: p.decel_limit,
                    sigma: p.sigma,
                }
            }
        }

        impl $name {
            pub fn to_params(&self) -> VehicleParams {
                VehicleParams {
                    length_m: self.length_m,
                    width_m: self.width_m,
                    min_gap_m: self.min_gap_m,
                    max_speed: self.max_speed,
                    accel_limit: self.accel_limit,
                    decel_limit: self.decel_limit,
                    sigma: self.sigma,
                    kind: $kind,
                }
            }
        }
    };
}

params_section!(EvSection, VehicleKind::Ev, VehicleParams::ev_default());
params_section!(CvSection, VehicleKind::Cv, VehicleParams::cv_default());

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub v_min: f64,
    pub lane_change_penalty: f64,
    pub denominator_epsilon: f64,
    pub velocity_reward_form: VelocityRewardForm,
    pub speed_equality_tolerance: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            v_min: 0.0,
            lane_change_penalty: -1.0,
            denominator_epsilon: 1e-9,
            velocity_reward_form: VelocityRewardForm::Printed,
            speed_equality_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seconds of CV inflow simulated before the EV enters.
    pub warmup_s: f64,
    /// Episode step cap as a multiple of the EV's free-flow traversal time.
    pub step_cap_factor: f64,
    pub eval_episodes: u64,
    /// Every n-th CV is included in exported time-distance traces.
    pub trace_cv_stride: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            warmup_s: 60.0,
            step_cap_factor: 10.0,
            eval_episodes: 200,
            trace_cv_stride: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub road: RoadConfig,
    pub flow: FlowConfig,
    pub ev: EvSection,
    pub cv: CvSection,
    pub avoidance: AvoidanceConfig,
    pub perception: PerceptionConfig,
    pub reward: RewardSection,
    pub training: TrainingConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            seed: 42,
            output_dir: "runs".to_string(),
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        if cfg.output_dir.is_empty() {
            cfg.output_dir = "runs".to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Reward parameters wired from the road and EV sections;
    /// `cooperative_enabled` comes from the method variant.
    pub fn reward_config(&self, cooperative_enabled: bool) -> RewardConfig {
        RewardConfig {
            d_total: self.road.length_m,
            v_max: self.ev.max_speed,
            v_min: self.reward.v_min,
            lane_change_penalty: self.reward.lane_change_penalty,
            cooperative_enabled,
            denominator_epsilon: self.reward.denominator_epsilon,
            velocity_reward_form: self.reward.velocity_reward_form,
            speed_equality_tolerance: self.reward.speed_equality_tolerance,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        fn check(errors: &mut Vec<String>, ok: bool, msg: &str) {
            if !ok {
                errors.push(msg.to_string());
            }
        }

        check(&mut errors, self.road.length_m > 0.0, "road.length_m: must be positive");
        check(
            &mut errors,
            self.road.lane_count >= 2,
            "road.lane_count: must be at least 2 so lane changes are possible",
        );
        check(&mut errors, self.road.step_dt > 0.0, "road.step_dt: must be positive");

        check(
            &mut errors,
            self.flow.arrival_rate >= 0.0,
            "flow.arrival_rate: must be non-negative",
        );
        check(
            &mut errors,
            self.flow.entry_speed >= 0.0,
            "flow.entry_speed: must be non-negative",
        );

        for (name, p) in [("ev", self.ev.to_params()), ("cv", self.cv.to_params())] {
            let physical = [
                ("length_m", p.length_m),
                ("width_m", p.width_m),
                ("min_gap_m", p.min_gap_m),
                ("max_speed", p.max_speed),
                ("accel_limit", p.accel_limit),
                ("decel_limit", p.decel_limit),
            ];
            for (field, value) in physical {
                if value <= 0.0 {
                    errors.push(format!("{name}.{field}: must be positive"));
                }
            }
            if !(0.0..=1.0).contains(&p.sigma) {
                errors.push(format!("{name}.sigma: must lie in [0, 1]"));
            }
        }

        check(
            &mut errors,
            self.avoidance.priority_distance_m > 0.0,
            "avoidance.priority_distance_m: must be positive",
        );
        check(
            &mut errors,
            self.perception.sensing_range_m > 0.0,
            "perception.sensing_range_m: must be positive",
        );

        check(
            &mut errors,
            self.reward.denominator_epsilon > 0.0,
            "reward.denominator_epsilon: must be positive",
        );
        check(
            &mut errors,
            self.reward.v_min >= 0.0,
            "reward.v_min: must be non-negative",
        );
        check(
            &mut errors,
            self.ev.max_speed > self.reward.v_min,
            "reward.v_min: must be below ev.max_speed",
        );
        check(
            &mut errors,
            self.reward.speed_equality_tolerance >= 0.0,
            "reward.speed_equality_tolerance: must be non-negative",
        );

        let t = &self.training;
        check(
            &mut errors,
            t.gamma > 0.0 && t.gamma < 1.0,
            "training.gamma: must lie strictly between 0 and 1",
        );
        check(
            &mut errors,
            (0.0..=1.0).contains(&t.epsilon_start),
            "training.epsilon_start: must lie in [0, 1]",
        );
        check(
            &mut errors,
            t.epsilon_floor >= 0.0 && t.epsilon_floor <= t.epsilon_start,
            "training.epsilon_floor: must lie in [0, epsilon_start]",
        );
        check(
            &mut errors,
            t.epsilon_decrement >= 0.0,
            "training.epsilon_decrement: must be non-negative",
        );
        check(
            &mut errors,
            t.target_sync_period >= 1,
            "training.target_sync_period: must be at least 1",
        );
        check(&mut errors, t.batch_size >= 1, "training.batch_size: must be at least 1");
        check(
            &mut errors,
            t.replay_capacity >= t.batch_size,
            "training.replay_capacity: must be at least batch_size",
        );
        check(
            &mut errors,
            t.learning_rate_initial > 0.0,
            "training.learning_rate_initial: must be positive",
        );
        check(
            &mut errors,
            t.learning_rate_decay_factor > 0.0 && t.learning_rate_decay_factor <= 1.0,
            "training.learning_rate_decay_factor: must lie in (0, 1]",
        );
        check(
            &mut errors,
            t.learning_rate_decay_period >= 1,
            "training.learning_rate_decay_period: must be at least 1",
        );
        for (name, beta) in [("adam_beta1", t.adam_beta1), ("adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                errors.push(format!("training.{name}: must lie in [0, 1)"));
            }
        }
        check(
            &mut errors,
            t.adam_epsilon > 0.0,
            "training.adam_epsilon: must be positive",
        );
        check(
            &mut errors,
            t.action_accel > 0.0,
            "training.action_accel: must be positive",
        );
        check(
            &mut errors,
            t.action_accel <= self.ev.accel_limit && t.action_accel <= self.ev.decel_limit,
            "training.action_accel: must not exceed the EV's acceleration limits",
        );
        check(
            &mut errors,
            !t.prioritized_replay,
            "training.prioritized_replay: only uniform replay is implemented; this \
             extension hook must stay false",
        );

        let e = &self.experiment;
        check(&mut errors, e.warmup_s >= 0.0, "experiment.warmup_s: must be non-negative");
        check(
            &mut errors,
            e.step_cap_factor > 0.0,
            "experiment.step_cap_factor: must be positive",
        );
        check(
            &mut errors,
            e.eval_episodes >= 1,
            "experiment.eval_episodes: must be at least 1",
        );
        check(
            &mut errors,
            e.trace_cv_stride >= 1,
            "experiment.trace_cv_stride: must be at least 1",
        );

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}
