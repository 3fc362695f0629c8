//! Typed relational vocabulary, state databases of ground facts and ground
//! actions.
//!
//! A [`Language`] fixes object types, predicate symbols (boolean atoms and
//! real-valued functions) and the subset of predicates usable as action
//! symbols. A [`StateDb`] stores only the facts that hold (closed world).

use std::collections::HashMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declaration of a single predicate symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateDecl {
    pub name: String,
    pub arity: usize,
    pub signature: Vec<String>,
    #[serde(default)]
    pub function: bool,
    #[serde(default)]
    pub action: bool,
}

impl PredicateDecl {
    pub fn atom(name: &str, signature: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            arity: signature.len(),
            signature: signature.iter().map(|s| s.to_string()).collect(),
            function: false,
            action: false,
        }
    }

    pub fn function(name: &str, signature: &[&str]) -> Self {
        Self {
            function: true,
            ..Self::atom(name, signature)
        }
    }

    pub fn action(name: &str, signature: &[&str]) -> Self {
        Self {
            action: true,
            ..Self::atom(name, signature)
        }
    }
}

/// Unvalidated language declaration, as it appears in domain documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageDecl {
    pub types: Vec<String>,
    pub predicates: Vec<PredicateDecl>,
    #[serde(default = "default_noop")]
    pub noop: String,
}

fn default_noop() -> String {
    "noop".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationCode {
    BadSignature,
    BadActionArity,
    MissingNoop,
    UnknownType,
    DuplicateName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

/// Every invariant violation found in a [`LanguageDecl`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, message: String) {
        self.violations.push(Violation { code, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{:?}: {}", v.code, v.message))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every language invariant and reports all violations at once.
pub fn validate_language(decl: &LanguageDecl) -> std::result::Result<(), ValidationReport> {
    let mut report = ValidationReport::default();
    let mut seen_types = std::collections::HashSet::new();
    for t in &decl.types {
        if !seen_types.insert(t.as_str()) {
            report.push(ViolationCode::DuplicateName, format!("type `{t}` declared twice"));
        }
    }
    let mut seen_preds = std::collections::HashSet::new();
    for p in &decl.predicates {
        if !seen_preds.insert(p.name.as_str()) {
            report.push(
                ViolationCode::DuplicateName,
                format!("predicate `{}` declared twice", p.name),
            );
        }
        if p.signature.len() != p.arity {
            report.push(
                ViolationCode::BadSignature,
                format!(
                    "`{}` has arity {} but a signature of length {}",
                    p.name,
                    p.arity,
                    p.signature.len()
                ),
            );
        }
        for t in &p.signature {
            if !seen_types.contains(t.as_str()) {
                report.push(
                    ViolationCode::UnknownType,
                    format!("`{}` references undeclared type `{t}`", p.name),
                );
            }
        }
        if p.action && p.arity > 1 {
            report.push(
                ViolationCode::BadActionArity,
                format!("action `{}` has arity {}", p.name, p.arity),
            );
        }
        if p.action && p.function {
            report.push(
                ViolationCode::BadSignature,
                format!("action `{}` cannot be a function symbol", p.name),
            );
        }
    }
    match decl.predicates.iter().find(|p| p.name == decl.noop) {
        Some(p) if p.action && p.arity == 0 => {}
        Some(_) => report.push(
            ViolationCode::MissingNoop,
            format!("no-op `{}` must be a nullary action", decl.noop),
        ),
        None => report.push(
            ViolationCode::MissingNoop,
            format!("no-op action `{}` is not declared", decl.noop),
        ),
    }
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// A validated language with lookup tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Language {
    decl: LanguageDecl,
    type_index: HashMap<String, usize>,
    predicate_index: HashMap<String, usize>,
    signature_ids: Vec<Vec<usize>>,
    action_predicates: Vec<usize>,
    noop_action: usize,
    max_arity: usize,
    fingerprint: u64,
}

impl Language {
    pub fn new(decl: LanguageDecl) -> Result<Self> {
        validate_language(&decl).map_err(Error::InvalidLanguage)?;
        let type_index: HashMap<_, _> = decl
            .types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let predicate_index: HashMap<_, _> = decl
            .predicates
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let signature_ids = decl
            .predicates
            .iter()
            .map(|p| p.signature.iter().map(|t| type_index[t]).collect())
            .collect();
        let action_predicates: Vec<usize> = decl
            .predicates
            .iter()
            .enumerate()
            .filter(|(_, p)| p.action)
            .map(|(i, _)| i)
            .collect();
        let noop_pred = predicate_index[&decl.noop];
        let noop_action = action_predicates
            .iter()
            .position(|&p| p == noop_pred)
            .expect("validated");
        let max_arity = decl.predicates.iter().map(|p| p.arity).max().unwrap_or(0);
        let fingerprint = {
            use sha2::{Digest, Sha256};
            let bytes = serde_json::to_vec(&decl)?;
            let digest = Sha256::digest(&bytes);
            u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
        };
        Ok(Self {
            decl,
            type_index,
            predicate_index,
            signature_ids,
            action_predicates,
            noop_action,
            max_arity,
            fingerprint,
        })
    }

    /// Stable digest of the declaration; equal languages share it.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn decl(&self) -> &LanguageDecl {
        &self.decl
    }

    pub fn types(&self) -> &[String] {
        &self.decl.types
    }

    pub fn predicates(&self) -> &[PredicateDecl] {
        &self.decl.predicates
    }

    pub fn num_types(&self) -> usize {
        self.decl.types.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.decl.predicates.len()
    }

    /// Largest predicate arity; the number of distinct edge positions.
    pub fn max_arity(&self) -> usize {
        self.max_arity
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicate_index.get(name).copied()
    }

    pub fn predicate(&self, id: usize) -> &PredicateDecl {
        &self.decl.predicates[id]
    }

    pub fn signature_ids(&self, predicate: usize) -> &[usize] {
        &self.signature_ids[predicate]
    }

    pub fn num_actions(&self) -> usize {
        self.action_predicates.len()
    }

    /// Predicate ids of the action symbols, in declaration order.
    pub fn action_predicates(&self) -> &[usize] {
        &self.action_predicates
    }

    pub fn action_name(&self, action: usize) -> &str {
        &self.decl.predicates[self.action_predicates[action]].name
    }

    pub fn action_id(&self, name: &str) -> Option<usize> {
        let p = self.predicate_id(name)?;
        self.action_predicates.iter().position(|&a| a == p)
    }

    /// Type id required by a unary action, `None` for nullary ones.
    pub fn action_arg_type(&self, action: usize) -> Option<usize> {
        self.signature_ids[self.action_predicates[action]].first().copied()
    }

    pub fn noop_action(&self) -> usize {
        self.noop_action
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRef {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

impl ObjectRef {
    pub fn new(name: &str, type_name: &str) -> Self {
        Self {
            name: name.to_string(),
            type_name: type_name.to_string(),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundFact {
    pub predicate: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub value: f64,
}

impl GroundFact {
    pub fn atom(predicate: &str, args: &[&str]) -> Self {
        Self {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
            value: 1.0,
        }
    }

    pub fn function(predicate: &str, args: &[&str], value: f64) -> Self {
        Self {
            value,
            ..Self::atom(predicate, args)
        }
    }
}

impl fmt::Display for GroundFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.predicate)?;
        if !self.args.is_empty() {
            write!(f, "({})", self.args.join(", "))?;
        }
        if self.value != 1.0 {
            write!(f, "={}", self.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FactKey {
    predicate: String,
    args: Vec<String>,
}

/// Closed-world database of true ground facts over named objects.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateDb {
    objects: Vec<ObjectRef>,
    object_index: HashMap<String, usize>,
    facts: IndexMap<FactKey, f64>,
}

impl StateDb {
    pub fn new(lang: &Language, objects: Vec<ObjectRef>) -> Result<Self> {
        let mut db = StateDb::default();
        for o in objects {
            db.add_object(lang, o)?;
        }
        Ok(db)
    }

    pub fn add_object(&mut self, lang: &Language, object: ObjectRef) -> Result<()> {
        if lang.type_id(&object.type_name).is_none() {
            return Err(Error::UnknownType(object.type_name));
        }
        if self.object_index.contains_key(&object.name) {
            return Err(Error::DuplicateObject(object.name));
        }
        self.object_index
            .insert(object.name.clone(), self.objects.len());
        self.objects.push(object);
        Ok(())
    }

    pub fn objects(&self) -> &[ObjectRef] {
        &self.objects
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    /// Facts in insertion order.
    pub fn facts(&self) -> impl Iterator<Item = GroundFact> + '_ {
        self.facts.iter().map(|(k, &value)| GroundFact {
            predicate: k.predicate.clone(),
            args: k.args.clone(),
            value,
        })
    }

    pub(crate) fn fact_entries(&self) -> impl Iterator<Item = (&str, &[String], f64)> {
        self.facts
            .iter()
            .map(|(k, &v)| (k.predicate.as_str(), k.args.as_slice(), v))
    }

    fn check_fact(&self, lang: &Language, fact: &GroundFact) -> Result<()> {
        let pid = lang
            .predicate_id(&fact.predicate)
            .ok_or_else(|| Error::UnknownPredicate(fact.predicate.clone()))?;
        let decl = lang.predicate(pid);
        if fact.args.len() != decl.arity {
            return Err(Error::ArityMismatch {
                predicate: fact.predicate.clone(),
                expected: decl.arity,
                found: fact.args.len(),
            });
        }
        for (position, (arg, expected)) in fact.args.iter().zip(&decl.signature).enumerate() {
            let idx = self
                .object_id(arg)
                .ok_or_else(|| Error::UnknownObject(arg.clone()))?;
            let found = &self.objects[idx].type_name;
            if found != expected {
                return Err(Error::TypeMismatch {
                    fact: fact.to_string(),
                    position,
                    expected: expected.clone(),
                    found: found.clone(),
                });
            }
        }
        if !decl.function && fact.value != 1.0 {
            return Err(Error::BooleanValue(fact.to_string()));
        }
        Ok(())
    }

    /// Adds one fact in place. Boolean facts are idempotent, function facts
    /// overwrite the previous value.
    pub fn insert(&mut self, lang: &Language, fact: GroundFact) -> Result<()> {
        self.check_fact(lang, &fact)?;
        let key = FactKey {
            predicate: fact.predicate,
            args: fact.args,
        };
        self.facts.insert(key, fact.value);
        Ok(())
    }

    /// Returns a new database with `facts` added.
    pub fn assert_facts(&self, lang: &Language, facts: &[GroundFact]) -> Result<StateDb> {
        let mut next = self.clone();
        for f in facts {
            next.insert(lang, f.clone())?;
        }
        Ok(next)
    }

    /// Keeps only the facts for which `keep(predicate, args)` holds.
    pub fn retain_facts(&mut self, mut keep: impl FnMut(&str, &[String]) -> bool) {
        self.facts.retain(|k, _| keep(&k.predicate, &k.args));
    }

    /// Removes a fact, keeping the insertion order of the rest.
    pub fn retract(&mut self, predicate: &str, args: &[&str]) -> bool {
        let key = FactKey {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        };
        self.facts.shift_remove(&key).is_some()
    }

    pub fn value(&self, predicate: &str, args: &[&str]) -> Option<f64> {
        let key = FactKey {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        };
        self.facts.get(&key).copied()
    }

    pub fn holds(&self, predicate: &str, args: &[&str]) -> bool {
        self.value(predicate, args).is_some()
    }

    /// Serializable form (objects plus facts in order).
    pub fn to_record(&self) -> StateRecord {
        StateRecord {
            objects: self.objects.clone(),
            facts: self.facts().collect(),
        }
    }

    pub fn from_record(lang: &Language, record: &StateRecord) -> Result<Self> {
        let db = StateDb::new(lang, record.objects.clone())?;
        db.assert_facts(lang, &record.facts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub objects: Vec<ObjectRef>,
    pub facts: Vec<GroundFact>,
}

/// An action symbol applied to an object, or to the null object for
/// nullary symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundAction {
    pub symbol: String,
    #[serde(default)]
    pub object: Option<String>,
}

impl GroundAction {
    pub fn nullary(symbol: &str) -> Self {
        Self {
            symbol: symbol.to_string(),
            object: None,
        }
    }

    pub fn unary(symbol: &str, object: &str) -> Self {
        Self {
            symbol: symbol.to_string(),
            object: Some(object.to_string()),
        }
    }

    /// Checks the action against the language and the objects of `db`.
    pub fn is_legal(&self, lang: &Language, db: &StateDb) -> bool {
        let Some(a) = lang.action_id(&self.symbol) else {
            return false;
        };
        match (lang.action_arg_type(a), &self.object) {
            (None, None) => true,
            (Some(t), Some(o)) => db
                .object_id(o)
                .map(|i| lang.type_id(&db.objects()[i].type_name) == Some(t))
                .unwrap_or(false),
            _ => false,
        }
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.object {
            Some(o) => write!(f, "{}({o})", self.symbol),
            None => write!(f, "{}", self.symbol),
        }
    }
}

/// All ground actions, by symbol declaration order then object insertion
/// order. Enumeration is type driven only.
pub fn enumerate_actions(db: &StateDb, lang: &Language) -> Vec<GroundAction> {
    let mut out = Vec::new();
    for a in 0..lang.num_actions() {
        let name = lang.action_name(a);
        match lang.action_arg_type(a) {
            None => out.push(GroundAction::nullary(name)),
            Some(t) => {
                for o in db.objects() {
                    if lang.type_id(&o.type_name) == Some(t) {
                        out.push(GroundAction::unary(name, &o.name));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn decl(types: &[&str], preds: Vec<PredicateDecl>) -> LanguageDecl {
        LanguageDecl {
            types: types.iter().map(|s| s.to_string()).collect(),
            predicates: preds,
            noop: "noop".into(),
        }
    }

    #[test]
    fn binary_action_rejected() {
        let d = decl(
            &["X"],
            vec![
                PredicateDecl::action("noop", &[]),
                PredicateDecl::action("move", &["X", "X"]),
            ],
        );
        let report = validate_language(&d).unwrap_err();
        assert!(report.has(ViolationCode::BadActionArity));
    }

    #[test]
    fn minimal_language_ok() {
        let d = decl(&["X"], vec![PredicateDecl::action("noop", &[])]);
        assert!(validate_language(&d).is_ok());
    }

    #[test]
    fn undeclared_type_reported() {
        let d = decl(
            &["X"],
            vec![
                PredicateDecl::action("noop", &[]),
                PredicateDecl::atom("P", &["Y"]),
            ],
        );
        assert!(validate_language(&d).unwrap_err().has(ViolationCode::UnknownType));
    }

    #[test]
    fn report_lists_every_violation() {
        let mut bad = PredicateDecl::atom("P", &["X"]);
        bad.arity = 2;
        let d = decl(&["X"], vec![bad, PredicateDecl::action("A", &["X", "Z"])]);
        let report = validate_language(&d).unwrap_err();
        for code in [
            ViolationCode::BadSignature,
            ViolationCode::BadActionArity,
            ViolationCode::MissingNoop,
            ViolationCode::UnknownType,
        ] {
            assert!(report.has(code), "{code:?} missing from {report}");
        }
    }

    #[test]
    fn noop_must_be_nullary_action() {
        let d = decl(&["X"], vec![PredicateDecl::atom("noop", &[])]);
        assert!(validate_language(&d).unwrap_err().has(ViolationCode::MissingNoop));
    }

    #[test]
    fn boolean_assertion_is_idempotent() {
        let lang = fixtures::toy_language();
        let db = fixtures::toy_objects(&lang);
        let p = GroundFact::atom("P", &["x1"]);
        let db = db.assert_facts(&lang, &[p.clone(), p]).unwrap();
        assert_eq!(db.num_facts(), 1);
    }

    #[test]
    fn function_assertion_overwrites() {
        let lang = fixtures::toy_language();
        let db = fixtures::toy_objects(&lang);
        let db = db
            .assert_facts(
                &lang,
                &[
                    GroundFact::function("Z", &["y1"], 5.0),
                    GroundFact::function("Z", &["y1"], 2.0),
                ],
            )
            .unwrap();
        assert_eq!(db.num_facts(), 1);
        assert_eq!(db.value("Z", &["y1"]), Some(2.0));
    }

    #[test]
    fn typed_assertion() {
        let lang = fixtures::toy_language();
        let db = fixtures::toy_objects(&lang);
        assert!(db
            .assert_facts(&lang, &[GroundFact::atom("Q", &["x1", "y1"])])
            .is_ok());
        let err = db
            .assert_facts(&lang, &[GroundFact::atom("Q", &["y1", "x1"])])
            .unwrap_err();
        assert!(matches!(err, Error::TypeMismatch { position: 0, .. }));
        let err = db
            .assert_facts(&lang, &[GroundFact::atom("P", &["nobody"])])
            .unwrap_err();
        assert!(matches!(err, Error::UnknownObject(_)));
        let err = db
            .assert_facts(&lang, &[GroundFact::function("P", &["x1"], 2.0)])
            .unwrap_err();
        assert!(matches!(err, Error::BooleanValue(_)));
    }

    #[test]
    fn enumerate_by_type() {
        let lang = fixtures::toy_language();
        let db = fixtures::toy_objects(&lang);
        let got: Vec<String> = enumerate_actions(&db, &lang)
            .iter()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(got, ["noop", "A1(x1)", "A1(x2)", "A2(x1)", "A2(x2)"]);
    }

    #[test]
    fn enumerate_without_objects() {
        let lang = fixtures::toy_language();
        let db = StateDb::new(&lang, vec![]).unwrap();
        let got = enumerate_actions(&db, &lang);
        assert_eq!(got, vec![GroundAction::nullary("noop")]);
    }

    #[test]
    fn unary_symbol_without_matching_objects_is_absent() {
        let lang = fixtures::toy_language();
        let db = StateDb::new(&lang, vec![ObjectRef::new("y1", "Y")]).unwrap();
        let got = enumerate_actions(&db, &lang);
        assert!(got.iter().all(|a| a.symbol != "A1"));
        assert!(got.iter().all(|a| a.is_legal(&lang, &db)));
    }

    #[test]
    fn record_round_trip() {
        let lang = fixtures::toy_language();
        let db = fixtures::figure_state(&lang);
        let back = StateDb::from_record(&lang, &db.to_record()).unwrap();
        assert_eq!(back, db);
    }
}
