//! Relational MDP environments, built-in domains, scripted experts and
//! evaluation utilities.

pub mod document;
pub mod eval;
pub mod gridnav;
pub mod split;
pub mod sysadmin;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use document::{Document, DomainDoc, Dynamics, InstanceDoc, LoadedDomain};
pub use eval::{
    evaluate, exhaustive_permutation_test, normalize_scores, permutation_test, score, Agent,
    EvalConfig, InstanceReturns, PermutationResult, ScoreNormalizer, TrajectoryRecord,
};
pub use split::SplitPlan;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::schema::{GroundAction, Language, StateDb};

/// One problem instance of a domain.
#[derive(Debug, Clone)]
pub struct EnvInstance {
    pub id: String,
    pub language: Arc<Language>,
    pub dynamics: Dynamics,
    pub initial: StateDb,
    /// Domain constants merged with instance overrides.
    pub params: BTreeMap<String, f64>,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: StateDb,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// SplitMix64 finalizer; derives independent seeds from structured keys.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl EnvInstance {
    /// Initial state. Both built-in domains start deterministically, so the
    /// seed only selects the transition noise of the episode.
    pub fn reset(&self, _seed: u64) -> StateDb {
        self.initial.clone()
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("instance `{}` lacks parameter `{name}`", self.id)))
    }

    /// One transition without horizon bookkeeping; `truncated` is false.
    pub fn step<R: Rng>(&self, state: &StateDb, action: &GroundAction, rng: &mut R) -> Result<Transition> {
        if !action.is_legal(&self.language, state) {
            return Err(Error::IllegalAction(action.to_string()));
        }
        match self.dynamics {
            Dynamics::Sysadmin => sysadmin::step(self, state, action, rng),
            Dynamics::Gridnav => gridnav::step(self, state, action, rng),
        }
    }

    /// Scripted expert action for `state`.
    pub fn expert_action(&self, state: &StateDb) -> GroundAction {
        match self.dynamics {
            Dynamics::Sysadmin => sysadmin::expert(self, state),
            Dynamics::Gridnav => gridnav::expert(self, state),
        }
    }

    /// Every action the expert considers equally good in `state`.
    pub fn expert_actions(&self, state: &StateDb) -> Vec<GroundAction> {
        match self.dynamics {
            Dynamics::Sysadmin => sysadmin::expert_ties(self, state),
            Dynamics::Gridnav => gridnav::expert_ties(self, state),
        }
    }
}

/// A running episode: current state, step counter and its own noise.
#[derive(Debug, Clone)]
pub struct Episode {
    pub instance: usize,
    pub state: StateDb,
    pub t: usize,
    pub done: bool,
    pub total_reward: f64,
    rng: ChaCha8Rng,
}

impl Episode {
    pub fn new(instance: &EnvInstance, index: usize, seed: u64) -> Self {
        Self {
            instance: index,
            state: instance.reset(seed),
            t: 0,
            done: false,
            total_reward: 0.0,
            rng: fixtures::rng(mix_seed(instance.seed, seed)),
        }
    }

    /// Advances one step; sets `truncated` when the horizon is reached
    /// without termination.
    pub fn step(&mut self, instance: &EnvInstance, action: &GroundAction) -> Result<Transition> {
        assert!(!self.done, "step on a finished episode");
        let mut tr = instance.step(&self.state, action, &mut self.rng)?;
        self.t += 1;
        tr.truncated = !tr.terminated && self.t >= instance.horizon;
        self.done = tr.terminated || tr.truncated;
        self.total_reward += tr.reward;
        self.state = tr.next.clone();
        Ok(tr)
    }
}

/// Serializable trajectory-free summary of a domain for manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub name: String,
    pub instances: Vec<String>,
    pub language: String,
}

impl LoadedDomain {
    pub fn summary(&self) -> DomainSummary {
        DomainSummary {
            name: self.name.clone(),
            instances: self.instance_ids(),
            language: format!("{:016x}", self.language.fingerprint()),
        }
    }
}

/// The ten built-in instances of a domain.
pub fn builtin(dynamics: Dynamics) -> Document {
    match dynamics {
        Dynamics::Sysadmin => sysadmin::builtin(),
        Dynamics::Gridnav => gridnav::builtin(),
    }
}
