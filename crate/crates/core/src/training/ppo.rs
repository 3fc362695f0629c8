//! Proximal policy optimization with symlog critic targets and range-scaled
//! advantages.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::returns::{compute_gae, scale_advantages, symexp, symlog, EmaRangeScaler, GaeStep};
use crate::envs::{mix_seed, EnvInstance, Episode};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::graph::{batch, build_graph, FactorGraph};
use crate::model::Model;
use crate::nn::{Tape, Tensor, Var};
use crate::policy::sample_pair;
use crate::schema::GroundAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    /// Entropy coefficient per stage.
    pub entropy_coef: [f64; 3],
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Learning rate per stage.
    pub learning_rate: [f64; 3],
    /// Environment samples per stage.
    pub stage_samples: u64,
    pub total_steps: u64,
    pub epochs: usize,
    /// Graphs per minibatch.
    pub minibatch: usize,
    pub num_envs: usize,
    /// Steps per lane and rollout.
    pub rollout_steps: usize,
    pub max_grad_norm: f64,
    pub ema_alpha: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_coef: 1.0,
            entropy_coef: [0.1, 0.001, 0.0001],
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: [1e-3, 1e-4, 1e-5],
            stage_samples: 500_000,
            total_steps: 1_500_000,
            epochs: 10,
            minibatch: 16,
            num_envs: 16,
            rollout_steps: 1024,
            max_grad_norm: 1.0,
            ema_alpha: 0.99,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip", self.clip),
            ("value_coef", self.value_coef),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("max_grad_norm", self.max_grad_norm),
            ("ema_alpha", self.ema_alpha),
        ];
        for (name, v) in positive
            .into_iter()
            .chain(self.entropy_coef.iter().map(|&v| ("entropy_coef", v)))
            .chain(self.learning_rate.iter().map(|&v| ("learning_rate", v)))
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda), ("ema_alpha", self.ema_alpha)] {
            if v > 1.0 {
                return Err(Error::InvalidConfig(format!("{name} must be at most 1, got {v}")));
            }
        }
        let counts = [
            ("stage_samples", self.stage_samples as usize),
            ("total_steps", self.total_steps as usize),
            ("epochs", self.epochs),
            ("minibatch", self.minibatch),
            ("num_envs", self.num_envs),
            ("rollout_steps", self.rollout_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Schedule stage for a number of consumed samples, in `0..3`.
    pub fn stage(&self, samples: u64) -> usize {
        ((samples / self.stage_samples) as usize).min(2)
    }

    pub fn learning_rate_at(&self, samples: u64) -> f64 {
        self.learning_rate[self.stage(samples)]
    }

    pub fn entropy_coef_at(&self, samples: u64) -> f64 {
        self.entropy_coef[self.stage(samples)]
    }
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub graph: FactorGraph,
    pub action: GroundAction,
    pub symbol: usize,
    pub column: usize,
    pub log_prob_old: f64,
    pub reward: f64,
    /// Critic output for `graph`, in symlog space.
    pub value_symlog: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Symlog-space value of the successor when this lane does not continue
    /// with it: after truncation and at the end of the rollout.
    pub bootstrap_symlog: Option<f64>,
    pub episode: u64,
    /// Index into the training instances.
    pub instance: usize,
}

/// Steps grouped by lane; each lane is in time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub lanes: Vec<Vec<StepRecord>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lane-major iteration; this order indexes advantages and returns.
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.lanes.iter().flatten()
    }

    /// Advantages and λ-returns in reward units, lane-major.
    pub fn targets(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let mut advantages = Vec::with_capacity(self.len());
        let mut returns = Vec::with_capacity(self.len());
        for lane in &self.lanes {
            let steps: Vec<GaeStep> = lane
                .iter()
                .map(|r| GaeStep {
                    reward: r.reward,
                    value: symexp(r.value_symlog),
                    terminated: r.terminated,
                    bootstrap: r.bootstrap_symlog.map(symexp),
                })
                .collect();
            let (a, ret) = compute_gae(&steps, gamma, lambda);
            advantages.extend(a);
            returns.extend(ret);
        }
        (advantages, returns)
    }
}

/// Total reward of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReturn {
    pub instance: usize,
    pub episode: u64,
    pub total: f64,
}

/// Index of the next instance, uniform over `n`.
pub fn sample_instance<R: Rng>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

struct Lane {
    episode: Episode,
    id: u64,
}

/// Stochastic data collection over parallel lanes. Lanes persist across
/// rollouts; each finished episode is replaced by one on a uniformly drawn
/// instance.
pub struct Collector<'a> {
    instances: Vec<&'a EnvInstance>,
    lanes: Vec<Lane>,
    rng: ChaCha8Rng,
    seed: u64,
    next_episode: u64,
    finished: Vec<EpisodeReturn>,
}

impl<'a> Collector<'a> {
    pub fn new(instances: &[&'a EnvInstance], num_envs: usize, seed: u64) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::InvalidConfig("no training instances".into()));
        }
        let mut c = Self {
            instances: instances.to_vec(),
            lanes: Vec::with_capacity(num_envs),
            rng: fixtures::rng(seed),
            seed,
            next_episode: 0,
            finished: Vec::new(),
        };
        for _ in 0..num_envs {
            let lane = c.fresh_lane();
            c.lanes.push(lane);
        }
        Ok(c)
    }

    fn fresh_lane(&mut self) -> Lane {
        let i = sample_instance(&mut self.rng, self.instances.len());
        let id = self.next_episode;
        self.next_episode += 1;
        Lane {
            episode: Episode::new(self.instances[i], i, mix_seed(self.seed, id)),
            id,
        }
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    /// Episodes finished since the last call.
    pub fn take_finished(&mut self) -> Vec<EpisodeReturn> {
        std::mem::take(&mut self.finished)
    }

    fn graph_of(&self, k: usize) -> FactorGraph {
        let lane = &self.lanes[k].episode;
        build_graph(&lane.state, &self.instances[lane.instance].language)
    }

    /// Runs `steps` steps on every lane.
    pub fn collect(&mut self, model: &Model, steps: usize) -> Result<RolloutBuffer> {
        let n = self.lanes.len();
        let mut buffer = RolloutBuffer {
            lanes: vec![Vec::with_capacity(steps); n],
        };
        for _ in 0..steps {
            let graphs: Vec<FactorGraph> = (0..n).map(|k| self.graph_of(k)).collect();
            let refs: Vec<&FactorGraph> = graphs.iter().collect();
            let dists = model.distributions(&refs)?;
            let mut truncated = Vec::new();
            for (k, (graph, dist)) in graphs.into_iter().zip(&dists).enumerate() {
                let (symbol, column, log_prob_old) = sample_pair(dist, &mut self.rng);
                let inst = self.instances[self.lanes[k].episode.instance];
                let action = graph.decode(&inst.language, symbol, column);
                let lane = &mut self.lanes[k];
                let tr = lane
                    .episode
                    .step(inst, &action)
                    .map_err(|e| Error::Lane { lane: k, source: Box::new(e) })?;
                buffer.lanes[k].push(StepRecord {
                    graph,
                    action,
                    symbol,
                    column,
                    log_prob_old,
                    reward: tr.reward,
                    value_symlog: dist.value,
                    terminated: tr.terminated,
                    truncated: tr.truncated,
                    bootstrap_symlog: None,
                    episode: lane.id,
                    instance: lane.episode.instance,
                });
                if tr.truncated {
                    truncated.push((k, build_graph(&tr.next, &inst.language)));
                }
                if lane.episode.done {
                    self.finished.push(EpisodeReturn {
                        instance: lane.episode.instance,
                        episode: lane.id,
                        total: lane.episode.total_reward,
                    });
                    self.lanes[k] = self.fresh_lane();
                }
            }
            if !truncated.is_empty() {
                let refs: Vec<&FactorGraph> = truncated.iter().map(|(_, g)| g).collect();
                for ((k, _), d) in truncated.iter().zip(model.distributions(&refs)?) {
                    buffer.lanes[*k].last_mut().expect("just pushed").bootstrap_symlog = Some(d.value);
                }
            }
        }
        let open: Vec<usize> = (0..n)
            .filter(|&k| {
                buffer.lanes[k]
                    .last()
                    .is_some_and(|r| !r.terminated && r.bootstrap_symlog.is_none())
            })
            .collect();
        if !open.is_empty() {
            let graphs: Vec<FactorGraph> = open.iter().map(|&k| self.graph_of(k)).collect();
            let refs: Vec<&FactorGraph> = graphs.iter().collect();
            for (&k, d) in open.iter().zip(model.distributions(&refs)?) {
                buffer.lanes[k].last_mut().expect("nonempty").bootstrap_symlog = Some(d.value);
            }
        }
        Ok(buffer)
    }
}

/// Scalar components of one minibatch objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean clipped surrogate, maximized.
    pub surrogate: f64,
    /// Mean squared symlog value error, minimized.
    pub value_loss: f64,
    /// Mean joint entropy, maximized.
    pub entropy: f64,
    /// Mean `log π_old - log π_new`.
    pub approx_kl: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_fraction: f64,
}

/// One training sample: a step plus its advantage and return target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'r> {
    pub record: &'r StepRecord,
    pub advantage: f64,
    /// λ-return in reward units.
    pub target: f64,
}

/// Records `c_c L_c - L_p - c_h H` for `samples` on `tape`.
pub fn minibatch_loss(
    tape: &mut Tape,
    model: &Model,
    samples: &[Sample<'_>],
    config: &PpoConfig,
    entropy_coef: f64,
) -> Result<(Var, LossParts)> {
    let graphs: Vec<&FactorGraph> = samples.iter().map(|s| &s.record.graph).collect();
    let b = batch(graphs)?;
    let (_, out) = model.forward(tape, &b)?;
    let picks: Vec<(usize, usize, usize)> = samples
        .iter()
        .enumerate()
        .map(|(g, s)| (g, s.record.symbol, s.record.column))
        .collect();
    let log_probs = out.log_probs(tape, &picks);
    let old = tape.constant(Tensor::column(
        &samples.iter().map(|s| s.record.log_prob_old).collect::<Vec<_>>(),
    ));
    let log_ratio = tape.sub(log_probs, old);
    let ratio = tape.exp(log_ratio);
    let adv = tape.constant(Tensor::column(
        &samples.iter().map(|s| s.advantage).collect::<Vec<_>>(),
    ));
    let unclipped = tape.mul(ratio, adv);
    let clipped_ratio = tape.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let clipped = tape.mul(clipped_ratio, adv);
    let surrogate = tape.minimum(unclipped, clipped);
    let surrogate = tape.mean_all(surrogate);

    let targets = tape.constant(Tensor::column(
        &samples.iter().map(|s| symlog(s.target)).collect::<Vec<_>>(),
    ));
    let err = tape.sub(out.value, targets);
    let sq = tape.square(err);
    let value_loss = tape.mean_all(sq);
    let entropy = tape.mean_all(out.entropy);

    let critic = tape.scale(value_loss, config.value_coef);
    let bonus = tape.scale(entropy, entropy_coef);
    let loss = tape.sub(critic, surrogate);
    let loss = tape.sub(loss, bonus);

    let ratios = &tape.value(ratio).data;
    let n = samples.len().max(1) as f64;
    let parts = LossParts {
        surrogate: tape.value(surrogate).item(),
        value_loss: tape.value(value_loss).item(),
        entropy: tape.value(entropy).item(),
        approx_kl: -tape.value(log_ratio).data.iter().sum::<f64>() / n,
        clip_fraction: ratios
            .iter()
            .filter(|&&r| (r - 1.0).abs() > config.clip)
            .count() as f64
            / n,
    };
    Ok((loss, parts))
}

/// Averages over all minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// `config.epochs` passes of shuffled minibatches over `buffer`, with one
/// clipped Amsgrad step per minibatch. `advantages` and `targets` are
/// lane-major, like [`RolloutBuffer::records`].
pub fn ppo_update<R: Rng>(
    model: &mut Model,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    targets: &[f64],
    config: &PpoConfig,
    samples_consumed: u64,
    rng: &mut R,
) -> Result<UpdateStats> {
    let records: Vec<&StepRecord> = buffer.records().collect();
    assert_eq!(records.len(), advantages.len());
    assert_eq!(records.len(), targets.len());
    let lr = config.learning_rate_at(samples_consumed);
    let c_h = config.entropy_coef_at(samples_consumed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let samples: Vec<Sample<'_>> = chunk
                .iter()
                .map(|&i| Sample {
                    record: records[i],
                    advantage: advantages[i],
                    target: targets[i],
                })
                .collect();
            let mut tape = Tape::new();
            let (loss, parts) = minibatch_loss(&mut tape, model, &samples, config, c_h)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(describe_minibatch(value, &samples, &parts)));
            }
            tape.backward(loss, &mut model.store)?;
            let norm = model.store.optimizer_step(lr, config.max_grad_norm)?;
            stats.surrogate += parts.surrogate;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            stats.grad_norm += norm;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.surrogate /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    stats.grad_norm /= m;
    Ok(stats)
}

fn describe_minibatch(loss: f64, samples: &[Sample<'_>], parts: &LossParts) -> String {
    let rows: Vec<String> = samples
        .iter()
        .map(|s| {
            format!(
                "{{episode {}, instance {}, action {}, logp_old {}, value {}, adv {}, target {}}}",
                s.record.episode,
                s.record.instance,
                s.record.action,
                s.record.log_prob_old,
                s.record.value_symlog,
                s.advantage,
                s.target
            )
        })
        .collect();
    format!("loss {loss} ({parts:?}) on minibatch [{}]", rows.join(", "))
}

/// One line of the metrics stream. Carries no timing information, so equal
/// seeds give equal streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Environment samples collected so far, including this rollout.
    pub samples: u64,
    pub stage: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    /// Advantage scale `S`.
    pub return_scale: f64,
    pub episodes: usize,
    /// Mean return of the episodes finished during this rollout, by
    /// instance id.
    pub mean_return: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub update: UpdateStats,
}

/// Progress notifications from [`train`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Metrics(MetricsRecord),
    /// The learner has consumed `samples` and moved into `stage`.
    StageBoundary { stage: usize, samples: u64 },
}

/// Runs collect/update iterations until `config.total_steps` samples were
/// collected. Rollouts are shortened at the end so that exactly
/// `total_steps` rounded up to a multiple of `num_envs` samples are used.
pub fn train(
    model: &mut Model,
    instances: &[&EnvInstance],
    config: &PpoConfig,
    seed: u64,
    mut observe: impl FnMut(&Model, TrainEvent) -> Result<()>,
) -> Result<u64> {
    config.validate()?;
    let mut collector = Collector::new(instances, config.num_envs, mix_seed(seed, 1))?;
    let mut update_rng = fixtures::rng(mix_seed(seed, 2));
    let mut scaler = EmaRangeScaler::new(config.ema_alpha);
    let per_step = config.num_envs as u64;
    let mut samples = 0u64;
    let mut iteration = 0;
    while samples < config.total_steps {
        let remaining = (config.total_steps - samples).div_ceil(per_step);
        let steps = (config.rollout_steps as u64).min(remaining) as usize;
        let buffer = collector.collect(model, steps)?;
        let (mut advantages, targets) = buffer.targets(config.gamma, config.gae_lambda);
        scale_advantages(&mut advantages, &targets, &mut scaler);
        let before = samples;
        let update = ppo_update(model, &buffer, &advantages, &targets, config, before, &mut update_rng)?;
        samples += buffer.len() as u64;

        let finished = collector.take_finished();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for e in &finished {
            let entry = sums.entry(instances[e.instance].id.clone()).or_default();
            entry.0 += e.total;
            entry.1 += 1;
        }
        observe(
            model,
            TrainEvent::Metrics(MetricsRecord {
                iteration,
                samples,
                stage: config.stage(before),
                learning_rate: config.learning_rate_at(before),
                entropy_coef: config.entropy_coef_at(before),
                return_scale: scaler.scale.unwrap_or(0.0),
                episodes: finished.len(),
                mean_return: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
                update,
            }),
        )?;
        if config.stage(samples) != config.stage(before) {
            observe(
                model,
                TrainEvent::StageBoundary {
                    stage: config.stage(samples),
                    samples,
                },
            )?;
        }
        iteration += 1;
    }
    Ok(samples)
}
