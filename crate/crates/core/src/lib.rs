//! Longitudinal car-following simulation and controllers.
//!
//! The crate contains everything needed to train and compare three
//! autonomous-vehicle strategies in a mixed AV/HV platoon:
//!
//! - pure TD3 (a twin-delayed actor-critic agent, [`td3`]),
//! - HCFS, a fixed-coefficient blend of TD3 and CACC picked by a one-step
//!   reward comparison ([`fusion::hcfs_decide`]),
//! - AK-HCFS, which blends the two with an adaptive Kalman gain derived from
//!   multi-step rollouts, an iterated scalar covariance and a tree search over
//!   the measurement noise ([`fusion::akhcfs_decide`], [`mcts`]).
//!
//! Leader motion comes from trajectory data ([`traj_data`]) or from the
//! synthetic profile generator. Human-driven followers use IDM and every
//! vehicle goes through a first-order actuator lag ([`dynamics`]).

pub mod controllers;
pub mod dynamics;
pub mod env;
mod error;
pub mod experiment;
pub mod fusion;
pub mod mcts;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod svg;
pub mod td3;
pub mod traj_data;

pub use error::{Error, Result};
