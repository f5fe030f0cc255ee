//! Intersection-crossing reinforcement learning stack.
//!
//! A discrete-action driving policy is trained with curriculum PPO to cross
//! a four-way unsignalized intersection among IDM-controlled traffic. The
//! crate contains the full pipeline: road geometry, vehicle dynamics,
//! surrounding traffic, the MDP environment, from-scratch actor/critic
//! networks with Adam, the PPO update, the three-stage curriculum trainer,
//! and the evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod math;
pub mod nn;
pub mod ppo;
pub mod replay;
pub mod road_net;
pub mod traffic;

pub use error::{Error, Result};
