//! Behaviour cloning from expert state-action pairs.
//!
//! The loss is the mean negative log-likelihood of the expert actions over
//! the whole dataset, one Amsgrad step per epoch. Identical samples are
//! merged into weights and the batch is processed in chunks whose gradients
//! are accumulated, which gives the same step as one full batch.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envs::{mix_seed, EnvInstance, Episode};
use crate::error::{Error, Result};
use crate::graph::{batch, build_graph, Batch, FactorGraph};
use crate::model::Model;
use crate::nn::Tape;
use crate::policy::greedy_pair;
use crate::schema::{GroundAction, Language, StateDb, StateRecord};

/// One expert decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSample {
    pub instance: String,
    pub state: StateDb,
    pub action: GroundAction,
}

/// Serialized form of an [`ExpertSample`], one per line in dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertRecord {
    pub instance: String,
    pub state: StateRecord,
    pub action: GroundAction,
}

impl ExpertSample {
    pub fn to_record(&self) -> ExpertRecord {
        ExpertRecord {
            instance: self.instance.clone(),
            state: self.state.to_record(),
            action: self.action.clone(),
        }
    }

    pub fn from_record(lang: &Language, record: &ExpertRecord) -> Result<Self> {
        Ok(Self {
            instance: record.instance.clone(),
            state: StateDb::from_record(lang, &record.state)?,
            action: record.action.clone(),
        })
    }
}

/// Runs the scripted expert for `episodes` full episodes on each instance.
/// Episode `e` of every instance uses noise seed `mix_seed(seed, e)`.
pub fn collect_expert(instances: &[&EnvInstance], episodes: usize, seed: u64) -> Result<Vec<ExpertSample>> {
    let mut out = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        for e in 0..episodes {
            let mut ep = Episode::new(inst, i, mix_seed(seed, e as u64));
            while !ep.done {
                let action = inst.expert_action(&ep.state);
                out.push(ExpertSample {
                    instance: inst.id.clone(),
                    state: ep.state.clone(),
                    action: action.clone(),
                });
                ep.step(inst, &action)?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImitationConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    /// Graphs per forward pass; does not change the result.
    pub chunk: usize,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-3,
            max_grad_norm: 1.0,
            chunk: 128,
        }
    }
}

struct Chunk {
    batch: Batch,
    picks: Vec<(usize, usize, usize)>,
    /// Per-sample weight `count / total`.
    weights: Arc<[f64]>,
}

/// Dataset prepared for repeated full-batch passes.
pub struct PreparedDataset {
    chunks: Vec<Chunk>,
    unique: usize,
    total: usize,
}

impl PreparedDataset {
    /// Builds graphs, checks every label against its mask and merges
    /// duplicates.
    pub fn new(lang: &Language, samples: &[ExpertSample], chunk: usize) -> Result<Self> {
        let mut unique: Vec<(FactorGraph, usize, usize, usize)> = Vec::new();
        let mut seen: HashMap<(String, GroundAction), usize> = HashMap::new();
        for (index, s) in samples.iter().enumerate() {
            let key = (serde_json::to_string(&s.state.to_record())?, s.action.clone());
            if let Some(&u) = seen.get(&key) {
                unique[u].3 += 1;
                continue;
            }
            let graph = build_graph(&s.state, lang);
            let (a, c) = graph
                .locate(lang, &s.action)
                .filter(|&(a, c)| graph.action_mask.get(a, c))
                .ok_or_else(|| Error::LabelNotLegal {
                    index,
                    action: s.action.to_string(),
                })?;
            seen.insert(key, unique.len());
            unique.push((graph, a, c, 1));
        }
        let total = samples.len();
        let mut chunks = Vec::new();
        for part in unique.chunks(chunk.max(1)) {
            let b = batch(part.iter().map(|u| &u.0))?;
            chunks.push(Chunk {
                batch: b,
                picks: part.iter().enumerate().map(|(g, u)| (g, u.1, u.2)).collect(),
                weights: part.iter().map(|u| u.3 as f64 / total as f64).collect(),
            });
        }
        Ok(Self {
            chunks,
            unique: unique.len(),
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn unique(&self) -> usize {
        self.unique
    }

    /// Mean NLL; gradients are accumulated into the model's store.
    fn accumulate(&self, model: &mut Model) -> Result<f64> {
        let mut nll = 0.0;
        for chunk in &self.chunks {
            let mut tape = Tape::new();
            let (_, out) = model.forward(&mut tape, &chunk.batch)?;
            let lp = out.log_probs(&mut tape, &chunk.picks);
            let weighted = tape.scale_rows(lp, chunk.weights.clone());
            let sum = tape.sum_all(weighted);
            let loss = tape.scale(sum, -1.0);
            nll += tape.value(loss).item();
            tape.backward(loss, &mut model.store)?;
        }
        Ok(nll)
    }

    /// Mean NLL without touching gradients.
    pub fn nll(&self, model: &Model) -> Result<f64> {
        let mut nll = 0.0;
        for chunk in &self.chunks {
            let mut tape = Tape::new();
            let (_, out) = model.forward(&mut tape, &chunk.batch)?;
            let lp = out.log_probs(&mut tape, &chunk.picks);
            nll -= tape
                .value(lp)
                .data
                .iter()
                .zip(chunk.weights.iter())
                .map(|(l, w)| l * w)
                .sum::<f64>();
        }
        Ok(nll)
    }
}

/// Trains the policy for `config.epochs` full-batch steps and returns the
/// NLL before each step. Critic parameters are frozen for the duration.
pub fn imitation_update(
    model: &mut Model,
    data: &PreparedDataset,
    config: &ImitationConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty imitation dataset".into()));
    }
    let critics = model.critic_params().to_vec();
    for &c in &critics {
        model.store.set_trainable(c, false);
    }
    let result = (|| {
        let mut curve = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            model.store.zero_grad();
            let nll = data.accumulate(model)?;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss(format!("imitation epoch {epoch}: nll {nll}")));
            }
            model.store.optimizer_step(config.learning_rate, config.max_grad_norm)?;
            observe(epoch, nll);
            curve.push(nll);
        }
        Ok(curve)
    })();
    for &c in &critics {
        model.store.set_trainable(c, true);
    }
    result
}

/// Fraction of samples where the greedy action is accepted by `accept`,
/// typically "is one of the expert's tied choices".
pub fn agreement(
    model: &Model,
    lang: &Language,
    samples: &[ExpertSample],
    mut accept: impl FnMut(&ExpertSample, &GroundAction) -> bool,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for part in samples.chunks(256) {
        let graphs: Vec<FactorGraph> = part.iter().map(|s| build_graph(&s.state, lang)).collect();
        let refs: Vec<&FactorGraph> = graphs.iter().collect();
        for ((s, g), d) in part.iter().zip(&graphs).zip(model.distributions(&refs)?) {
            let (a, c) = greedy_pair(&d);
            if accept(s, &g.decode(lang, a, c)) {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{builtin, Dynamics};
    use crate::fixtures;
    use crate::model::ModelConfig;
    use crate::schema::{enumerate_actions, GroundFact, ObjectRef};

    fn sysadmin() -> crate::envs::LoadedDomain {
        builtin(Dynamics::Sysadmin).load().unwrap()
    }

    #[test]
    fn expert_dataset_size_and_legality() {
        let d = sysadmin();
        let train: Vec<&EnvInstance> = d.instances.iter().take(5).collect();
        let data = collect_expert(&train, 10, 0).unwrap();
        assert_eq!(data.len(), 2000);
        for s in &data {
            assert!(s.action.is_legal(&d.language, &s.state));
        }
        assert_eq!(data, collect_expert(&train, 10, 0).unwrap());
    }

    #[test]
    fn duplicates_are_merged() {
        let d = sysadmin();
        let inst = &d.instances[0];
        let s = ExpertSample {
            instance: inst.id.clone(),
            state: inst.initial.clone(),
            action: inst.expert_action(&inst.initial),
        };
        let data = PreparedDataset::new(&d.language, &[s.clone(), s.clone(), s], 4).unwrap();
        assert_eq!((data.len(), data.unique()), (3, 1));
    }

    #[test]
    fn illegal_label_is_reported() {
        let d = sysadmin();
        let inst = &d.instances[0];
        // Every machine runs initially, so rebooting is still legal; an
        // unknown object is not.
        let bad = ExpertSample {
            instance: inst.id.clone(),
            state: inst.initial.clone(),
            action: GroundAction::unary("reboot", "nowhere"),
        };
        let good = ExpertSample {
            action: GroundAction::nullary("noop"),
            ..bad.clone()
        };
        assert!(matches!(
            PreparedDataset::new(&d.language, &[good, bad], 8),
            Err(Error::LabelNotLegal { index: 1, .. })
        ));
    }

    #[test]
    fn chunking_does_not_change_the_gradient() {
        let lang = fixtures::toy_language();
        let mut rng = fixtures::rng(2);
        let samples: Vec<ExpertSample> = (0..9)
            .map(|_| {
                let state = fixtures::random_state(&lang, &mut rng, 4, 6);
                let legal = enumerate_actions(&state, &lang);
                ExpertSample {
                    instance: "toy".into(),
                    action: legal[legal.len() / 2].clone(),
                    state,
                }
            })
            .collect();
        let grads = |chunk: usize| {
            let mut model = Model::new(&lang, ModelConfig::default(), 8);
            let data = PreparedDataset::new(&lang, &samples, chunk).unwrap();
            let nll = data.accumulate(&mut model).unwrap();
            let g: Vec<f64> = model.store.params().iter().flat_map(|p| p.grad.data.clone()).collect();
            (nll, g)
        };
        let (n1, g1) = grads(1);
        let (n9, g9) = grads(9);
        assert!((n1 - n9).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g9) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_is_memorized_and_critic_untouched() {
        let lang = fixtures::toy_language();
        let state = fixtures::figure_state(&lang);
        let sample = ExpertSample {
            instance: "toy".into(),
            action: GroundAction::unary("A2", "x2"),
            state,
        };
        let mut model = Model::new(&lang, ModelConfig::default(), 1);
        let critics_before: Vec<_> = model
            .critic_params()
            .iter()
            .map(|&c| model.store.value(c).clone())
            .collect();
        let data = PreparedDataset::new(&lang, std::slice::from_ref(&sample), 8).unwrap();
        let config = ImitationConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..ImitationConfig::default()
        };
        let curve = imitation_update(&mut model, &data, &config, |_, _| {}).unwrap();
        assert!(curve[0] > 1.0);
        let final_nll = data.nll(&model).unwrap();
        assert!(final_nll < 0.01, "{final_nll}");
        for (&c, before) in model.critic_params().iter().zip(&critics_before) {
            assert_eq!(model.store.value(c), before);
            assert!(model.store.is_trainable(c));
        }
        let hit = agreement(&model, &lang, &[sample], |s, a| a == &s.action).unwrap();
        assert_eq!(hit, 1.0);
    }

    /// Six-ring with `c0` and `c3` down: the rotation by three swaps them, so
    /// an equivariant policy splits the label's mass and NLL stays at ln 2 or
    /// above however long it trains.
    #[test]
    fn symmetric_tie_bounds_the_nll() {
        let d = sysadmin();
        let lang = &d.language;
        let objects = (0..6).map(|i| ObjectRef::new(&format!("c{i}"), "computer")).collect();
        let mut state = StateDb::new(lang, objects).unwrap();
        for i in [1, 2, 4, 5] {
            state.insert(lang, GroundFact::atom("running", &[&format!("c{i}")])).unwrap();
        }
        for i in 0..6 {
            let (a, b) = (format!("c{i}"), format!("c{}", (i + 1) % 6));
            state.insert(lang, GroundFact::atom("connected", &[&a, &b])).unwrap();
            state.insert(lang, GroundFact::atom("connected", &[&b, &a])).unwrap();
        }
        let sample = ExpertSample {
            instance: "ring".into(),
            action: GroundAction::unary("reboot", "c0"),
            state: state.clone(),
        };
        let mut model = Model::new(lang, ModelConfig::default(), 4);
        let data = PreparedDataset::new(lang, &[sample], 8).unwrap();
        let config = ImitationConfig {
            epochs: 300,
            learning_rate: 1e-2,
            ..ImitationConfig::default()
        };
        imitation_update(&mut model, &data, &config, |_, _| {}).unwrap();
        let nll = data.nll(&model).unwrap();
        assert!(nll >= std::f64::consts::LN_2 - 1e-9, "{nll}");
        assert!(nll < std::f64::consts::LN_2 + 0.05, "{nll}");
        let g = build_graph(&state, lang);
        let dist = model.distributions(&[&g]).unwrap().remove(0);
        let (a, c0) = g.locate(lang, &GroundAction::unary("reboot", "c0")).unwrap();
        let (_, c3) = g.locate(lang, &GroundAction::unary("reboot", "c3")).unwrap();
        let (p0, p3) = (dist.p_obj_given_sym.get(a, c0), dist.p_obj_given_sym.get(a, c3));
        assert!((p0 - p3).abs() < 1e-12, "{p0} {p3}");
    }
}
