//! Microscopic highway simulation with a DQN-controlled emergency vehicle,
//! a rule-based avoiding strategy for surrounding traffic, and the
//! training/evaluation harness that compares the five method variants.

pub mod agent;
pub mod avoidance;
pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod net;
pub mod perception;
pub mod rewards;
pub mod rng;
pub mod road;
