//! Agents, batched evaluation, score normalization and permutation tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, EnvInstance, Episode};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::graph::{build_graph, FactorGraph};
use crate::model::Model;
use crate::policy::{greedy_pair, sample_pair};
use crate::schema::{enumerate_actions, GroundAction};

/// Something that picks actions.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    Noop,
    /// Uniform over the legal ground actions.
    Random,
    Expert,
    Model { model: &'a Model, greedy: bool },
}

impl Agent<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Agent::Noop => "noop",
            Agent::Random => "random",
            Agent::Expert => "expert",
            Agent::Model { greedy: true, .. } => "model-greedy",
            Agent::Model { greedy: false, .. } => "model-stochastic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Graphs per forward pass for model agents.
    pub batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            batch: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReturns {
    pub instance: String,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl InstanceReturns {
    fn new(instance: &str, returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            instance: instance.to_string(),
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub instance: String,
    pub episode: usize,
    pub step: usize,
    pub action: String,
    pub object: Option<String>,
    pub reward: f64,
    pub terminated: bool,
}

struct Lane {
    episode: Episode,
    index: usize,
    rng: ChaCha8Rng,
}

/// Transition noise of episode `e` depends only on `(config.seed, e)` and
/// the instance, so all agents face the same noise.
fn lane(instance: &EnvInstance, i: usize, e: usize, seed: u64) -> Lane {
    let episode_seed = mix_seed(seed, e as u64);
    Lane {
        episode: Episode::new(instance, i, episode_seed),
        index: e,
        rng: fixtures::rng(mix_seed(episode_seed, 0x0061_6765_6e74)),
    }
}

/// Runs `config.episodes` episodes per instance and reports the returns.
pub fn evaluate(
    agent: Agent<'_>,
    instances: &[&EnvInstance],
    config: &EvalConfig,
    mut log: Option<&mut dyn FnMut(TrajectoryRecord)>,
) -> Result<Vec<InstanceReturns>> {
    let mut lanes: Vec<Lane> = instances
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| (0..config.episodes).map(move |e| lane(inst, i, e, config.seed)))
        .collect();
    while lanes.iter().any(|l| !l.episode.done) {
        let active: Vec<usize> = (0..lanes.len()).filter(|&k| !lanes[k].episode.done).collect();
        let actions = choose(agent, instances, &mut lanes, &active, config.batch)?;
        for (&k, action) in active.iter().zip(actions) {
            let lane = &mut lanes[k];
            let inst = instances[lane.episode.instance];
            let step = lane.episode.t;
            let tr = lane.episode.step(inst, &action).map_err(|e| Error::Lane {
                lane: k,
                source: Box::new(e),
            })?;
            if let Some(log) = log.as_mut() {
                log(TrajectoryRecord {
                    instance: inst.id.clone(),
                    episode: lane.index,
                    step,
                    action: action.symbol.clone(),
                    object: action.object.clone(),
                    reward: tr.reward,
                    terminated: tr.terminated,
                });
            }
        }
    }
    let mut per_instance = vec![Vec::new(); instances.len()];
    for l in &lanes {
        per_instance[l.episode.instance].push(l.episode.total_reward);
    }
    Ok(instances
        .iter()
        .zip(per_instance)
        .map(|(inst, r)| InstanceReturns::new(&inst.id, r))
        .collect())
}

fn choose(
    agent: Agent<'_>,
    instances: &[&EnvInstance],
    lanes: &mut [Lane],
    active: &[usize],
    batch: usize,
) -> Result<Vec<GroundAction>> {
    match agent {
        Agent::Noop => Ok(active
            .iter()
            .map(|&k| GroundAction::nullary(&instances[lanes[k].episode.instance].language.decl().noop))
            .collect()),
        Agent::Random => Ok(active
            .iter()
            .map(|&k| {
                let lane = &mut lanes[k];
                let inst = instances[lane.episode.instance];
                let legal = enumerate_actions(&lane.episode.state, &inst.language);
                legal.choose(&mut lane.rng).expect("noop is always legal").clone()
            })
            .collect()),
        Agent::Expert => Ok(active
            .iter()
            .map(|&k| instances[lanes[k].episode.instance].expert_action(&lanes[k].episode.state))
            .collect()),
        Agent::Model { model, greedy } => {
            let mut out = Vec::with_capacity(active.len());
            for chunk in active.chunks(batch.max(1)) {
                let graphs: Vec<FactorGraph> = chunk
                    .iter()
                    .map(|&k| {
                        let inst = instances[lanes[k].episode.instance];
                        build_graph(&lanes[k].episode.state, &inst.language)
                    })
                    .collect();
                let refs: Vec<&FactorGraph> = graphs.iter().collect();
                let dists = model.distributions(&refs)?;
                for ((&k, g), d) in chunk.iter().zip(&graphs).zip(&dists) {
                    let (a, c) = if greedy {
                        greedy_pair(d)
                    } else {
                        let (a, c, _) = sample_pair(d, &mut lanes[k].rng);
                        (a, c)
                    };
                    out.push(g.decode(&instances[lanes[k].episode.instance].language, a, c));
                }
            }
            Ok(out)
        }
    }
}

/// `max(R - R_low, 0) / (R_max - R_low)`, zero when `R_max <= R_low`,
/// capped at one.
pub fn score(r: f64, r_low: f64, r_max: f64) -> f64 {
    if r_max <= r_low {
        return 0.0;
    }
    ((r - r_low).max(0.0) / (r_max - r_low)).min(1.0)
}

/// Per-instance bounds for score normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub instances: Vec<String>,
    /// Best of the random and noop mean returns.
    pub r_low: Vec<f64>,
    /// Best mean return among all evaluated agents (at least `r_low`).
    pub r_max: Vec<f64>,
    pub episodes: usize,
}

impl ScoreNormalizer {
    pub fn new(random: &[InstanceReturns], noop: &[InstanceReturns], agents: &[&[InstanceReturns]]) -> Self {
        let r_low: Vec<f64> = random.iter().zip(noop).map(|(r, n)| r.mean.max(n.mean)).collect();
        let r_max = r_low
            .iter()
            .enumerate()
            .map(|(i, &low)| agents.iter().map(|a| a[i].mean).fold(low, f64::max))
            .collect();
        Self {
            instances: random.iter().map(|r| r.instance.clone()).collect(),
            r_low,
            r_max,
            episodes: random.first().map_or(0, |r| r.returns.len()),
        }
    }
}

/// Normalized score of each instance's mean return.
pub fn normalize_scores(agent: &[InstanceReturns], normalizer: &ScoreNormalizer) -> Vec<f64> {
    agent
        .iter()
        .enumerate()
        .map(|(i, r)| score(r.mean, normalizer.r_low[i], normalizer.r_max[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    /// Two-sided: share of relabelings with `|diff| >= |observed|`.
    pub p_value: f64,
    pub permutations: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn at_least(diff: f64, observed: f64) -> bool {
    diff.abs() >= observed.abs() - 1e-12 * (1.0 + observed.abs())
}

/// Monte Carlo permutation test on pooled samples.
pub fn permutation_test<R: Rng>(a: &[f64], b: &[f64], n_perm: usize, rng: &mut R) -> PermutationResult {
    assert!(!a.is_empty() && !b.is_empty(), "permutation test needs two nonempty samples");
    let observed = mean(a) - mean(b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total: f64 = pooled.iter().sum();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        pooled.shuffle(rng);
        let sa: f64 = pooled[..a.len()].iter().sum();
        let diff = sa / a.len() as f64 - (total - sa) / b.len() as f64;
        if at_least(diff, observed) {
            hits += 1;
        }
    }
    PermutationResult {
        mean_diff: observed,
        p_value: hits as f64 / n_perm as f64,
        permutations: n_perm,
    }
}

/// Exact permutation test over every split of the pooled samples.
pub fn exhaustive_permutation_test(a: &[f64], b: &[f64]) -> PermutationResult {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    assert!(n <= 24, "exhaustive permutation test is exponential in the sample size");
    let observed = mean(a) - mean(b);
    let total: f64 = pooled.iter().sum();
    let (mut hits, mut count) = (0usize, 0usize);
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != a.len() {
            continue;
        }
        let sa: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| pooled[i]).sum();
        let diff = sa / a.len() as f64 - (total - sa) / b.len() as f64;
        count += 1;
        if at_least(diff, observed) {
            hits += 1;
        }
    }
    PermutationResult {
        mean_diff: observed,
        p_value: hits as f64 / count as f64,
        permutations: count,
    }
}
