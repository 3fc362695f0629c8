//! Inductive graph-neural policies for relational MDPs.
//!
//! States are sets of typed ground facts ([`schema::StateDb`]). Each state is
//! turned into a bipartite factor graph ([`graph`]), embedded by message
//! passing ([`encoder`]), and read out by a factorized actor-critic head
//! ([`policy`]). [`training`] provides PPO and imitation learning, and
//! [`envs`] the built-in domains, experts and evaluation utilities.

pub mod encoder;
pub mod envs;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod model;
pub mod nn;
pub mod policy;
pub mod schema;
pub mod training;

pub use error::{Error, Result};
