//! The complete network: encoder, policy head and their parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::graph::{batch, Batch, FactorGraph};
use crate::nn::{checkpoint, ParamId, ParamStore, Tape};
use crate::policy::{ActionDistribution, HeadOutput, PolicyHead};
use crate::schema::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub critic_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            layers: 4,
            critic_heads: 2,
        }
    }
}

/// Metadata stored alongside the parameters in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    /// Hex language fingerprint.
    pub language: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: PolicyHead,
    language: u64,
}

impl Model {
    pub fn new(lang: &Language, config: ModelConfig, seed: u64) -> Self {
        let mut rng = fixtures::rng(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, lang, config.embed_dim, config.layers, &mut rng);
        let head = PolicyHead::new(&mut store, lang, config.embed_dim, config.critic_heads.max(1), &mut rng);
        Self {
            config,
            store,
            encoder,
            head,
            language: lang.fingerprint(),
        }
    }

    pub fn language(&self) -> u64 {
        self.language
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<(EncoderOutput, HeadOutput)> {
        if batch.num_graphs() > 0 && batch.language != self.language {
            return Err(Error::MixedLanguage);
        }
        let enc = self.encoder.encode(tape, &self.store, batch)?;
        let head = self.head.forward(tape, &self.store, enc.h, batch)?;
        Ok((enc, head))
    }

    /// Distributions of several states, computed in one batch.
    pub fn distributions(&self, graphs: &[&FactorGraph]) -> Result<Vec<ActionDistribution>> {
        let b = batch(graphs.iter().copied())?;
        let mut tape = Tape::new();
        let (_, out) = self.forward(&mut tape, &b)?;
        Ok((0..b.num_graphs()).map(|g| out.distribution(&tape, &b, g)).collect())
    }

    /// Critic-only parameters; every other parameter shapes the policy.
    pub fn critic_params(&self) -> &[ParamId] {
        &self.head.critics
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            config: self.config,
            language: format!("{:016x}", self.language),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, serde_json::to_value(self.meta())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        checkpoint::write_checkpoint(&mut out, &self.store, serde_json::to_value(self.meta())?)?;
        Ok(out)
    }

    /// Rebuilds a model from a checkpoint written for `lang`.
    pub fn load(path: &Path, lang: &Language) -> Result<Self> {
        let (manifest, values) = checkpoint::load(path)?;
        Self::from_checkpoint(&manifest, &values, lang)
    }

    pub fn from_bytes(bytes: &[u8], lang: &Language) -> Result<Self> {
        let (manifest, values) = checkpoint::read_checkpoint(&mut &bytes[..])?;
        Self::from_checkpoint(&manifest, &values, lang)
    }

    fn from_checkpoint(manifest: &checkpoint::Manifest, values: &[f64], lang: &Language) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(manifest.meta.clone())
            .map_err(|e| Error::CheckpointMismatch(format!("bad model metadata: {e}")))?;
        let expected = format!("{:016x}", lang.fingerprint());
        if meta.language != expected {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint language {} does not match {}",
                meta.language, expected
            )));
        }
        let mut model = Model::new(lang, meta.config, 0);
        checkpoint::load_into(&mut model.store, manifest, values)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    #[test]
    fn default_sizes() {
        let lang = fixtures::toy_language();
        let m = Model::new(&lang, ModelConfig::default(), 0);
        let d = 16;
        // tables + nullary + 4 layers x (2D+3D+2D+2D inputs) + head
        let tables = (7 + 2 + 2) * d;
        let nullary = (d + 1) + (d * d + d);
        let layer = (2 * d * d + d) + (3 * d * d + d) + 2 * (2 * d * d + d);
        let head = 3 * d + d + 3 * d + 2 * 3 * d + d;
        assert_eq!(m.store.num_scalars(), tables + nullary + 4 * layer + head);
    }

    #[test]
    fn bytes_round_trip_and_language_check() {
        let lang = fixtures::toy_language();
        let m = Model::new(&lang, ModelConfig::default(), 4);
        let bytes = m.to_bytes().unwrap();
        let back = Model::from_bytes(&bytes, &lang).unwrap();
        assert_eq!(back.store.params(), m.store.params());
        let other = fixtures::rich_language();
        assert!(matches!(Model::from_bytes(&bytes, &other), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn rejects_foreign_graphs() {
        let lang = fixtures::toy_language();
        let m = Model::new(&lang, ModelConfig::default(), 1);
        let other = fixtures::rich_language();
        let g = build_graph(&fixtures::random_state(&other, &mut fixtures::rng(0), 3, 3), &other);
        assert!(matches!(m.distributions(&[&g]), Err(Error::MixedLanguage)));
    }
}
