//! Domain and instance documents.
//!
//! A document is a JSON object with a `domain` and a list of `instances`;
//! unknown keys are rejected everywhere. See `docs/format.md` at the
//! repository root for the grammar.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EnvInstance;
use crate::error::{Error, Result};
use crate::schema::{GroundFact, Language, LanguageDecl, ObjectRef, PredicateDecl, StateDb};

/// Built-in transition models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Sysadmin,
    Gridnav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDoc {
    pub name: String,
    pub dynamics: Dynamics,
    pub types: Vec<String>,
    pub predicates: Vec<PredicateDecl>,
    #[serde(default = "default_noop")]
    pub noop: String,
    /// Default numeric parameters, overridable per instance.
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

fn default_noop() -> String {
    "noop".to_string()
}

fn default_horizon() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub id: String,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    pub objects: Vec<ObjectRef>,
    #[serde(default)]
    pub facts: Vec<GroundFact>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub domain: DomainDoc,
    pub instances: Vec<InstanceDoc>,
}

impl DomainDoc {
    pub fn language_decl(&self) -> LanguageDecl {
        LanguageDecl {
            types: self.types.clone(),
            predicates: self.predicates.clone(),
            noop: self.noop.clone(),
        }
    }
}

/// A parsed document with its validated language and instances.
#[derive(Debug, Clone)]
pub struct LoadedDomain {
    pub name: String,
    pub dynamics: Dynamics,
    pub language: Arc<Language>,
    pub instances: Vec<EnvInstance>,
}

impl LoadedDomain {
    pub fn instance(&self, id: &str) -> Option<&EnvInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates the language and every instance.
    pub fn load(&self) -> Result<LoadedDomain> {
        let language = Arc::new(Language::new(self.domain.language_decl())?);
        let mut instances = Vec::with_capacity(self.instances.len());
        for doc in &self.instances {
            if instances.iter().any(|i: &EnvInstance| i.id == doc.id) {
                return Err(Error::Format(format!("duplicate instance id `{}`", doc.id)));
            }
            let initial = StateDb::new(&language, doc.objects.clone())?.assert_facts(&language, &doc.facts)?;
            let mut params = self.domain.constants.clone();
            params.extend(doc.params.iter().map(|(k, v)| (k.clone(), *v)));
            instances.push(EnvInstance {
                id: doc.id.clone(),
                language: language.clone(),
                dynamics: self.domain.dynamics,
                initial,
                params,
                horizon: doc.horizon,
                seed: doc.seed,
            });
        }
        Ok(LoadedDomain {
            name: self.domain.name.clone(),
            dynamics: self.domain.dynamics,
            language,
            instances,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "domain": {
            "name": "tiny",
            "dynamics": "sysadmin",
            "types": ["computer"],
            "predicates": [
                {"name": "running", "arity": 1, "signature": ["computer"]},
                {"name": "connected", "arity": 2, "signature": ["computer", "computer"]},
                {"name": "noop", "arity": 0, "signature": [], "action": true},
                {"name": "reboot", "arity": 1, "signature": ["computer"], "action": true}
            ],
            "constants": {"stay_base": 0.45}
        },
        "instances": [{
            "id": "one",
            "objects": [{"name": "c0", "type": "computer"}],
            "facts": [{"predicate": "running", "args": ["c0"]}],
            "params": {"stay_base": 0.5}
        }]
    }"#;

    #[test]
    fn parses_and_merges_params() {
        let d = Document::parse(MINIMAL).unwrap().load().unwrap();
        let inst = &d.instances[0];
        assert_eq!(inst.horizon, 40);
        assert_eq!(inst.params["stay_base"], 0.5);
        assert!(inst.initial.holds("running", &["c0"]));
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = MINIMAL.replace("\"horizon_typo\"", "").replace("\"id\": \"one\"", "\"id\": \"one\", \"colour\": 1");
        assert!(matches!(Document::parse(&bad), Err(Error::Json(_))));
    }

    #[test]
    fn rejects_ill_typed_facts() {
        let bad = MINIMAL.replace("\"args\": [\"c0\"]", "\"args\": [\"c9\"]");
        assert!(matches!(Document::parse(&bad).unwrap().load(), Err(Error::UnknownObject(_))));
    }

    #[test]
    fn round_trips() {
        let doc = Document::parse(MINIMAL).unwrap();
        assert_eq!(Document::parse(&doc.to_json().unwrap()).unwrap(), doc);
    }
}
