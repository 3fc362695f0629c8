//! Small languages and random state generators shared by tests, property
//! checks and the acceptance suite.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{GroundFact, Language, LanguageDecl, ObjectRef, PredicateDecl, StateDb};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Types `X`, `Y`; facts `P(X)`, `Q(X, Y)`, `Z(Y)` (function), `C`;
/// actions `noop`, `A1(X)`, `A2(X)`.
pub fn toy_language() -> Language {
    Language::new(LanguageDecl {
        types: vec!["X".into(), "Y".into()],
        predicates: vec![
            PredicateDecl::atom("P", &["X"]),
            PredicateDecl::atom("Q", &["X", "Y"]),
            PredicateDecl::function("Z", &["Y"]),
            PredicateDecl::atom("C", &[]),
            PredicateDecl::action("noop", &[]),
            PredicateDecl::action("A1", &["X"]),
            PredicateDecl::action("A2", &["X"]),
        ],
        noop: "noop".into(),
    })
    .expect("valid toy language")
}

/// Objects `x1: X`, `x2: X`, `y1: Y` and no facts.
pub fn toy_objects(lang: &Language) -> StateDb {
    StateDb::new(
        lang,
        vec![
            ObjectRef::new("x1", "X"),
            ObjectRef::new("x2", "X"),
            ObjectRef::new("y1", "Y"),
        ],
    )
    .expect("valid objects")
}

/// `{P(x1), Q(x1, y1), Z(y1)=5, Q(x2, y1), C}` over objects `x1, y1, x2`.
pub fn figure_state(lang: &Language) -> StateDb {
    StateDb::new(
        lang,
        vec![
            ObjectRef::new("x1", "X"),
            ObjectRef::new("y1", "Y"),
            ObjectRef::new("x2", "X"),
        ],
    )
    .and_then(|db| {
        db.assert_facts(
            lang,
            &[
                GroundFact::atom("P", &["x1"]),
                GroundFact::atom("Q", &["x1", "y1"]),
                GroundFact::function("Z", &["y1"], 5.0),
                GroundFact::atom("Q", &["x2", "y1"]),
                GroundFact::atom("C", &[]),
            ],
        )
    })
    .expect("valid figure state")
}

/// A language exercising every feature: two types, unary and binary atoms,
/// unary and nullary functions, unary actions on both types and an extra
/// nullary action.
pub fn rich_language() -> Language {
    Language::new(LanguageDecl {
        types: vec!["X".into(), "Y".into()],
        predicates: vec![
            PredicateDecl::atom("P", &["X"]),
            PredicateDecl::atom("Q", &["X", "Y"]),
            PredicateDecl::atom("R", &["Y", "Y"]),
            PredicateDecl::function("Z", &["Y"]),
            PredicateDecl::atom("C", &[]),
            PredicateDecl::function("W", &[]),
            PredicateDecl::action("noop", &[]),
            PredicateDecl::action("A1", &["X"]),
            PredicateDecl::action("A2", &["Y"]),
            PredicateDecl::action("B", &[]),
        ],
        noop: "noop".into(),
    })
    .expect("valid rich language")
}

/// Random state with up to `max_objects` objects and `max_facts` fact
/// draws over any language.
pub fn random_state<R: Rng>(
    lang: &Language,
    rng: &mut R,
    max_objects: usize,
    max_facts: usize,
) -> StateDb {
    let n = rng.random_range(0..=max_objects);
    let objects: Vec<ObjectRef> = (0..n)
        .map(|i| {
            let t = &lang.types()[rng.random_range(0..lang.num_types())];
            ObjectRef::new(&format!("o{i}"), t)
        })
        .collect();
    let mut db = StateDb::new(lang, objects).expect("fresh names");
    let fact_preds: Vec<usize> = (0..lang.num_predicates())
        .filter(|&p| !lang.predicate(p).action)
        .collect();
    for _ in 0..rng.random_range(0..=max_facts) {
        let p = *fact_preds.choose(rng).expect("language has facts");
        let decl = lang.predicate(p);
        let mut args = Vec::new();
        for t in &decl.signature {
            let candidates: Vec<&ObjectRef> =
                db.objects().iter().filter(|o| &o.type_name == t).collect();
            match candidates.choose(rng) {
                Some(o) => args.push(o.name.clone()),
                None => break,
            }
        }
        if args.len() != decl.arity {
            continue;
        }
        let value = if decl.function {
            rng.random_range(-2.0..2.0)
        } else {
            1.0
        };
        db.insert(
            lang,
            GroundFact {
                predicate: decl.name.clone(),
                args,
                value,
            },
        )
        .expect("well-typed draw");
    }
    db
}

/// Renames every object and shuffles object insertion order, keeping the
/// fact order. Returns the new database and `perm[old] = new` indices.
pub fn rename_shuffled<R: Rng>(lang: &Language, db: &StateDb, rng: &mut R) -> (StateDb, Vec<usize>) {
    let n = db.objects().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut perm = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    let new_name = |old: usize| format!("renamed_{}_{}", perm[old] * 7 + 3, old);
    let objects: Vec<ObjectRef> = order
        .iter()
        .map(|&old| ObjectRef::new(&new_name(old), &db.objects()[old].type_name))
        .collect();
    let mut out = StateDb::new(lang, objects).expect("fresh names");
    for f in db.facts() {
        let args = f
            .args
            .iter()
            .map(|a| new_name(db.object_id(a).expect("known object")))
            .collect();
        out.insert(
            lang,
            GroundFact {
                args,
                ..f
            },
        )
        .expect("renaming preserves types");
    }
    (out, perm)
}
