//! Structural properties of the full model on random states.

use proptest::prelude::*;

use relpolicy::envs::{builtin, Dynamics};
use relpolicy::fixtures::{self, rich_language, random_state, rename_shuffled};
use relpolicy::graph::{batch, build_graph, FactorGraph};
use relpolicy::model::{Model, ModelConfig};
use relpolicy::nn::Tape;
use relpolicy::policy::sample_pair;
use relpolicy::schema::{GroundFact, Language, ObjectRef, StateDb};
use relpolicy::training::{minibatch_loss, PpoConfig, Sample, StepRecord};

fn small() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        layers: 2,
        critic_heads: 2,
    }
}

fn loss_value(model: &Model, records: &[StepRecord], adv: &[f64], targets: &[f64]) -> f64 {
    let samples: Vec<Sample<'_>> = records
        .iter()
        .zip(adv.iter().zip(targets))
        .map(|(r, (&a, &t))| Sample { record: r, advantage: a, target: t })
        .collect();
    let mut tape = Tape::new();
    let (loss, _) = minibatch_loss(&mut tape, model, &samples, &PpoConfig::default(), 0.1).unwrap();
    tape.value(loss).item()
}

fn records_for(model: &Model, graphs: &[FactorGraph], seed: u64) -> Vec<StepRecord> {
    let mut rng = fixtures::rng(seed);
    let refs: Vec<&FactorGraph> = graphs.iter().collect();
    let lang_dists = model.distributions(&refs).unwrap();
    graphs
        .iter()
        .zip(&lang_dists)
        .map(|(g, d)| {
            let (symbol, column, lp) = sample_pair(d, &mut rng);
            StepRecord {
                graph: g.clone(),
                action: relpolicy::schema::GroundAction::nullary("noop"),
                symbol,
                column,
                // Keeps the ratio inside the clip interval and off its kinks.
                log_prob_old: lp - 0.05,
                reward: 0.0,
                value_symlog: d.value,
                terminated: true,
                truncated: false,
                bootstrap_symlog: None,
                episode: 0,
                instance: 0,
            }
        })
        .collect()
}

/// Largest violation of `|analytic - fd| <= 1e-6 + 1e-4 |fd|` over every
/// parameter scalar.
fn gradient_violation(seed: u64, lang: &Language, graphs: &[FactorGraph]) -> f64 {
    let mut model = Model::new(lang, small(), seed);
    let records = records_for(&model, graphs, seed);
    let adv: Vec<f64> = (0..records.len()).map(|i| 0.7 - 0.5 * i as f64).collect();
    let targets: Vec<f64> = (0..records.len()).map(|i| 2.0 + i as f64).collect();
    let samples: Vec<Sample<'_>> = records
        .iter()
        .zip(adv.iter().zip(&targets))
        .map(|(r, (&a, &t))| Sample { record: r, advantage: a, target: t })
        .collect();
    let mut tape = Tape::new();
    let (loss, _) = minibatch_loss(&mut tape, &model, &samples, &PpoConfig::default(), 0.1).unwrap();
    model.store.zero_grad();
    tape.backward(loss, &mut model.store).unwrap();
    let analytic: Vec<Vec<f64>> = model.store.params().iter().map(|p| p.grad.data.clone()).collect();
    let ids: Vec<_> = model.store.ids().collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (pi, id) in ids.into_iter().enumerate() {
        for j in 0..model.store.value(id).len() {
            let x = model.store.value(id).data[j];
            model.store.value_mut(id).data[j] = x + h;
            let up = loss_value(&model, &records, &adv, &targets);
            model.store.value_mut(id).data[j] = x - h;
            let down = loss_value(&model, &records, &adv, &targets);
            model.store.value_mut(id).data[j] = x;
            let fd = (up - down) / (2.0 * h);
            let excess = (analytic[pi][j] - fd).abs() - (1e-6 + 1e-4 * fd.abs());
            worst = worst.max(excess);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn full_loss_gradient_matches_finite_differences(seed in 0u64..10_000) {
        let lang = rich_language();
        let mut rng = fixtures::rng(seed);
        let graphs: Vec<FactorGraph> = (0..2)
            .map(|_| build_graph(&random_state(&lang, &mut rng, 4, 6), &lang))
            .collect();
        prop_assert!(gradient_violation(seed, &lang, &graphs) <= 0.0);
    }

    #[test]
    fn renaming_objects_permutes_the_policy(seed in 0u64..10_000) {
        let lang = rich_language();
        let model = Model::new(&lang, ModelConfig::default(), seed);
        let mut rng = fixtures::rng(seed);
        let db = random_state(&lang, &mut rng, 6, 12);
        let (renamed, perm) = rename_shuffled(&lang, &db, &mut rng);
        let (g1, g2) = (build_graph(&db, &lang), build_graph(&renamed, &lang));
        let d = model.distributions(&[&g1, &g2]).unwrap();
        prop_assert!((d[0].value - d[1].value).abs() < 1e-9);
        prop_assert!((d[0].entropy - d[1].entropy).abs() < 1e-9);
        for (a, b) in d[0].p_sym.iter().zip(&d[1].p_sym) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let null = g1.action_mask.null_column();
        for a in 0..d[0].p_sym.len() {
            for (old, &new) in perm.iter().enumerate() {
                prop_assert!((d[0].p_obj_given_sym.get(a, old) - d[1].p_obj_given_sym.get(a, new)).abs() < 1e-12);
            }
            prop_assert!((d[0].p_obj_given_sym.get(a, null) - d[1].p_obj_given_sym.get(a, null)).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_matches_single_graphs(seed in 0u64..10_000) {
        let lang = rich_language();
        let model = Model::new(&lang, ModelConfig::default(), seed);
        let mut rng = fixtures::rng(seed);
        let graphs: Vec<FactorGraph> = (0..5)
            .map(|_| build_graph(&random_state(&lang, &mut rng, 5, 10), &lang))
            .collect();
        let refs: Vec<&FactorGraph> = graphs.iter().collect();
        let together = model.distributions(&refs).unwrap();
        for (g, d) in graphs.iter().zip(&together) {
            let alone = model.distributions(&[g]).unwrap().remove(0);
            prop_assert!((alone.value - d.value).abs() < 1e-12);
            prop_assert!(alone.p_obj_given_sym.max_abs_diff(&d.p_obj_given_sym) < 1e-12);
            prop_assert!(alone.q.max_abs_diff(&d.q) < 1e-12);
        }
    }

    #[test]
    fn sampled_actions_are_legal(seed in 0u64..10_000) {
        let lang = rich_language();
        let model = Model::new(&lang, ModelConfig::default(), seed);
        let mut rng = fixtures::rng(seed);
        let g = build_graph(&random_state(&lang, &mut rng, 5, 10), &lang);
        let d = model.distributions(&[&g]).unwrap().remove(0);
        for ((a, c), p) in d.pairs() {
            if !g.action_mask.get(a, c) {
                prop_assert_eq!(p, 0.0);
            }
        }
        for _ in 0..200 {
            let (a, c, lp) = sample_pair(&d, &mut rng);
            prop_assert!(g.action_mask.get(a, c));
            prop_assert!(lp.is_finite());
        }
    }
}

/// Two running rings of three machines versus one ring of six: every node
/// sees the same neighbourhood at every depth, so message passing cannot
/// tell the states apart.
#[test]
fn colour_refinement_twins_are_indistinguishable() {
    let doc = builtin(Dynamics::Sysadmin);
    let lang = doc.load().unwrap().language;
    let ring = |cycles: &[&[usize]]| {
        let n: usize = cycles.iter().map(|c| c.len()).sum();
        let objects = (0..n).map(|i| ObjectRef::new(&format!("c{i}"), "computer")).collect();
        let mut db = StateDb::new(&lang, objects).unwrap();
        for i in 0..n {
            db.insert(&lang, GroundFact::atom("running", &[&format!("c{i}")])).unwrap();
        }
        for cycle in cycles {
            for k in 0..cycle.len() {
                let (a, b) = (cycle[k], cycle[(k + 1) % cycle.len()]);
                for (x, y) in [(a, b), (b, a)] {
                    db.insert(&lang, GroundFact::atom("connected", &[&format!("c{x}"), &format!("c{y}")]))
                        .unwrap();
                }
            }
        }
        build_graph(&db, &lang)
    };
    let two = ring(&[&[0, 1, 2], &[3, 4, 5]]);
    let one = ring(&[&[0, 1, 2, 3, 4, 5]]);
    let model = Model::new(&lang, ModelConfig::default(), 3);
    let d = model.distributions(&[&two, &one]).unwrap();
    assert!((d[0].value - d[1].value).abs() < 1e-12);
    assert!(d[0].p_obj_given_sym.max_abs_diff(&d[1].p_obj_given_sym) < 1e-12);
    let b = batch([&two, &one]).unwrap();
    let mut tape = Tape::new();
    let (enc, _) = model.forward(&mut tape, &b).unwrap();
    let h = tape.value(enc.h);
    for r in 1..h.rows {
        for c in 0..h.cols {
            assert!((h.get(r, c) - h.get(0, c)).abs() < 1e-12);
        }
    }
}

/// Line `c0 - ... - c5` with `c2` and `c5` down: `c2` has two running
/// neighbours and `c5` one, but the maximum over identical messages is the
/// same. The end of the line only shows up as a different neighbour set in
/// the fourth layer, and there the difference is tiny at initialization.
#[test]
fn max_aggregation_cannot_count_neighbours() {
    let doc = builtin(Dynamics::Sysadmin);
    let lang = doc.load().unwrap().language;
    let objects = (0..6).map(|i| ObjectRef::new(&format!("c{i}"), "computer")).collect();
    let mut db = StateDb::new(&lang, objects).unwrap();
    for i in [0, 1, 3, 4] {
        db.insert(&lang, GroundFact::atom("running", &[&format!("c{i}")])).unwrap();
    }
    for i in 0..5 {
        let (a, b) = (format!("c{i}"), format!("c{}", i + 1));
        db.insert(&lang, GroundFact::atom("connected", &[&a, &b])).unwrap();
        db.insert(&lang, GroundFact::atom("connected", &[&b, &a])).unwrap();
    }
    let g = build_graph(&db, &lang);
    let b = batch([&g]).unwrap();
    let (c2, c5) = (db.object_id("c2").unwrap(), db.object_id("c5").unwrap());
    let reboot = lang.action_id("reboot").unwrap();
    let gap = |layers: usize| {
        let config = ModelConfig { layers, ..ModelConfig::default() };
        let model = Model::new(&lang, config, 5);
        let mut tape = Tape::new();
        let (enc, _) = model.forward(&mut tape, &b).unwrap();
        let h = tape.value(enc.h);
        let rows = (0..h.cols).map(|c| (h.get(c2, c) - h.get(c5, c)).abs()).fold(0.0, f64::max);
        let d = model.distributions(&[&g]).unwrap().remove(0);
        rows.max((d.p_obj_given_sym.get(reboot, c2) - d.p_obj_given_sym.get(reboot, c5)).abs())
    };
    for layers in 1..=3 {
        assert!(gap(layers) < 1e-12, "{layers} layers");
    }
    assert!(gap(4) > 1e-12);
}
