//! Network administration domain.
//!
//! Computers are connected in a fixed topology. A running computer stays up
//! with probability `stay_base + neighbor_bonus · (1 + up neighbours) /
//! (1 + neighbours)`; a down computer stays down unless rebooted, and a
//! reboot brings it up with probability `reboot_success`. The reward of a
//! step is the number of running computers in the current state minus
//! `reboot_cost` when a reboot is issued.

use std::collections::BTreeMap;

use rand::Rng;

use super::document::{Document, DomainDoc, Dynamics, InstanceDoc};
use super::{EnvInstance, Transition};
use crate::error::Result;
use crate::schema::{GroundAction, GroundFact, ObjectRef, PredicateDecl, StateDb};

pub const COMPUTER: &str = "computer";
pub const RUNNING: &str = "running";
pub const CONNECTED: &str = "connected";
pub const REBOOT: &str = "reboot";
pub const NOOP: &str = "noop";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Ring,
    Star,
    Line,
}

pub fn domain_doc() -> DomainDoc {
    DomainDoc {
        name: "sysadmin".into(),
        dynamics: Dynamics::Sysadmin,
        types: vec![COMPUTER.into()],
        predicates: vec![
            PredicateDecl::atom(RUNNING, &[COMPUTER]),
            PredicateDecl::atom(CONNECTED, &[COMPUTER, COMPUTER]),
            PredicateDecl::action(NOOP, &[]),
            PredicateDecl::action(REBOOT, &[COMPUTER]),
        ],
        noop: NOOP.into(),
        constants: BTreeMap::from([
            ("neighbor_bonus".to_string(), 0.5),
            ("reboot_cost".to_string(), 0.75),
            ("reboot_success".to_string(), 1.0),
            ("stay_base".to_string(), 0.45),
        ]),
    }
}

/// Undirected edges of a topology over `n` computers.
pub fn topology_edges(n: usize, topology: Topology) -> Vec<(usize, usize)> {
    match topology {
        Topology::Line => (1..n).map(|i| (i - 1, i)).collect(),
        Topology::Ring if n > 2 => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Topology::Ring => topology_edges(n, Topology::Line),
        Topology::Star => (1..n).map(|i| (0, i)).collect(),
    }
}

/// `n` computers, all running, connected symmetrically by `topology`.
pub fn instance_doc(id: &str, n: usize, topology: Topology, seed: u64) -> InstanceDoc {
    let name = |i: usize| format!("c{i}");
    let mut facts: Vec<GroundFact> = (0..n).map(|i| GroundFact::atom(RUNNING, &[&name(i)])).collect();
    for (a, b) in topology_edges(n, topology) {
        facts.push(GroundFact::atom(CONNECTED, &[&name(a), &name(b)]));
        facts.push(GroundFact::atom(CONNECTED, &[&name(b), &name(a)]));
    }
    InstanceDoc {
        id: id.into(),
        horizon: 40,
        seed,
        objects: (0..n).map(|i| ObjectRef::new(&name(i), COMPUTER)).collect(),
        facts,
        params: BTreeMap::new(),
    }
}

/// Ten instances with 4 to 13 computers, cycling ring, star and line.
pub fn builtin() -> Document {
    let topologies = [Topology::Ring, Topology::Star, Topology::Line];
    Document {
        domain: domain_doc(),
        instances: (0..10)
            .map(|i| instance_doc(&format!("sysadmin-{i:02}"), 4 + i, topologies[i % 3], 1000 + i as u64))
            .collect(),
    }
}

/// Per-computer view: running flags and neighbour lists by object index.
struct Network {
    running: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    fn of(state: &StateDb) -> Self {
        let n = state.objects().len();
        let mut running = vec![false; n];
        let mut neighbors = vec![Vec::new(); n];
        let id = |name: &String| state.object_id(name).expect("validated state");
        for (pred, args, _) in state.fact_entries() {
            match pred {
                RUNNING => running[id(&args[0])] = true,
                CONNECTED => neighbors[id(&args[0])].push(id(&args[1])),
                _ => {}
            }
        }
        Self { running, neighbors }
    }

    fn running_neighbors(&self, c: usize) -> usize {
        self.neighbors[c].iter().filter(|&&d| self.running[d]).count()
    }
}

pub fn stay_probability(stay_base: f64, neighbor_bonus: f64, running_neighbors: usize, neighbors: usize) -> f64 {
    stay_base + neighbor_bonus * (1 + running_neighbors) as f64 / (1 + neighbors) as f64
}

pub fn step<R: Rng>(inst: &EnvInstance, state: &StateDb, action: &GroundAction, rng: &mut R) -> Result<Transition> {
    let base = inst.param("stay_base")?;
    let bonus = inst.param("neighbor_bonus")?;
    let cost = inst.param("reboot_cost")?;
    let success = inst.param("reboot_success")?;
    let net = Network::of(state);
    let rebooted = match (&action.symbol[..], &action.object) {
        (REBOOT, Some(o)) => state.object_id(o),
        _ => None,
    };
    let up_now = net.running.iter().filter(|&&r| r).count();
    let reward = up_now as f64 - if rebooted.is_some() { cost } else { 0.0 };
    let mut up_next = Vec::with_capacity(net.running.len());
    for c in 0..net.running.len() {
        let u: f64 = rng.random();
        let up = if Some(c) == rebooted {
            u < success
        } else if net.running[c] {
            u < stay_probability(base, bonus, net.running_neighbors(c), net.neighbors[c].len())
        } else {
            false
        };
        up_next.push(up);
    }
    let mut next = state.clone();
    next.retain_facts(|p, _| p != RUNNING);
    for (c, o) in state.objects().iter().enumerate() {
        if up_next[c] {
            next.insert(&inst.language, GroundFact::atom(RUNNING, &[&o.name]))?;
        }
    }
    Ok(Transition {
        next,
        reward,
        terminated: false,
        truncated: false,
    })
}

fn best_down(state: &StateDb) -> Vec<usize> {
    let net = Network::of(state);
    let down: Vec<usize> = (0..net.running.len()).filter(|&c| !net.running[c]).collect();
    let best = down.iter().map(|&c| net.running_neighbors(c)).max();
    down.into_iter()
        .filter(|&c| Some(net.running_neighbors(c)) == best)
        .collect()
}

/// Reboots the down computer with the most running neighbours, the first
/// in object order on ties; noop when everything runs.
pub fn expert(_inst: &EnvInstance, state: &StateDb) -> GroundAction {
    match best_down(state).first() {
        Some(&c) => GroundAction::unary(REBOOT, &state.objects()[c].name),
        None => GroundAction::nullary(NOOP),
    }
}

pub fn expert_ties(_inst: &EnvInstance, state: &StateDb) -> Vec<GroundAction> {
    let best = best_down(state);
    if best.is_empty() {
        return vec![GroundAction::nullary(NOOP)];
    }
    best.into_iter()
        .map(|c| GroundAction::unary(REBOOT, &state.objects()[c].name))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Episode;
    use crate::fixtures;
    use crate::graph::build_graph;

    fn single(n: usize, topology: Topology) -> EnvInstance {
        let mut doc = builtin();
        doc.instances = vec![instance_doc("t", n, topology, 7)];
        doc.load().unwrap().instances.remove(0)
    }

    fn all_down(inst: &EnvInstance) -> StateDb {
        let mut s = inst.initial.clone();
        s.retain_facts(|p, _| p != RUNNING);
        s
    }

    #[test]
    fn builtin_instances() {
        let d = builtin().load().unwrap();
        assert_eq!(d.instances.len(), 10);
        let sizes: Vec<usize> = d.instances.iter().map(|i| i.initial.objects().len()).collect();
        assert_eq!(sizes, (4..14).collect::<Vec<_>>());
        assert!(d.instances.iter().all(|i| i.horizon == 40));
    }

    #[test]
    fn reset_runs_everything() {
        let inst = single(5, Topology::Ring);
        let s = inst.reset(3);
        assert_eq!(s, inst.reset(3));
        assert_eq!(s.objects().len(), 5);
        for o in s.objects() {
            assert!(s.holds(RUNNING, &[&o.name]));
        }
    }

    #[test]
    fn all_down_noop_stays_down() {
        let inst = single(4, Topology::Line);
        let s = all_down(&inst);
        let tr = inst.step(&s, &GroundAction::nullary(NOOP), &mut fixtures::rng(0)).unwrap();
        assert_eq!(tr.reward, 0.0);
        assert_eq!(tr.next, s);
    }

    #[test]
    fn reboot_costs_and_restores() {
        let inst = single(4, Topology::Line);
        let s = all_down(&inst);
        let tr = inst
            .step(&s, &GroundAction::unary(REBOOT, "c2"), &mut fixtures::rng(0))
            .unwrap();
        assert_eq!(tr.reward, -0.75);
        assert!(tr.next.holds(RUNNING, &["c2"]));
    }

    #[test]
    fn isolated_machine_formula() {
        assert!((stay_probability(0.45, 0.5, 0, 0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn illegal_action_rejected() {
        let inst = single(4, Topology::Line);
        let bad = GroundAction::unary(REBOOT, "zz");
        assert!(inst.step(&inst.initial, &bad, &mut fixtures::rng(0)).is_err());
        assert!(inst.step(&inst.initial, &GroundAction::nullary(REBOOT), &mut fixtures::rng(0)).is_err());
    }

    #[test]
    fn stay_frequency_matches_formula() {
        // Line c0 - c1 - c2, all running: c1 has 2 up neighbours of 2.
        let inst = single(3, Topology::Line);
        let mut rng = fixtures::rng(11);
        let n = 100_000;
        let mut stays = [0usize; 3];
        for _ in 0..n {
            let tr = inst.step(&inst.initial, &GroundAction::nullary(NOOP), &mut rng).unwrap();
            for (c, s) in stays.iter_mut().enumerate() {
                if tr.next.holds(RUNNING, &[&format!("c{c}")]) {
                    *s += 1;
                }
            }
        }
        let expected = [
            stay_probability(0.45, 0.5, 1, 1),
            stay_probability(0.45, 0.5, 2, 2),
            stay_probability(0.45, 0.5, 1, 1),
        ];
        for c in 0..3 {
            let p = expected[c];
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((stays[c] as f64 - n as f64 * p).abs() <= 3.0 * sigma, "c{c}");
        }
    }

    #[test]
    fn expert_choices() {
        let inst = single(4, Topology::Line);
        assert_eq!(expert(&inst, &inst.initial), GroundAction::nullary(NOOP));
        let mut s = inst.initial.clone();
        s.retract(RUNNING, &["c3"]);
        assert_eq!(expert(&inst, &s), GroundAction::unary(REBOOT, "c3"));
        // c0 and c3 down: both have one running neighbour, object order wins.
        s.retract(RUNNING, &["c0"]);
        assert_eq!(expert(&inst, &s), GroundAction::unary(REBOOT, "c0"));
        assert_eq!(expert_ties(&inst, &s).len(), 2);
        // c1 down as well: c3 now has one running neighbour (c2), c1 one too.
        s.retract(RUNNING, &["c1"]);
        assert_eq!(
            expert_ties(&inst, &s),
            vec![GroundAction::unary(REBOOT, "c1"), GroundAction::unary(REBOOT, "c3")]
        );
    }

    #[test]
    fn expert_is_legal() {
        let inst = single(6, Topology::Star);
        let mut ep = Episode::new(&inst, 0, 5);
        while !ep.done {
            let a = inst.expert_action(&ep.state);
            assert!(build_graph(&ep.state, &inst.language).locate(&inst.language, &a).is_some());
            ep.step(&inst, &a).unwrap();
        }
        assert_eq!(ep.t, 40);
    }

    #[test]
    fn rewards_stay_in_range() {
        let inst = single(7, Topology::Ring);
        let mut ep = Episode::new(&inst, 0, 9);
        let mut rng = fixtures::rng(2);
        while !ep.done {
            let acts = crate::schema::enumerate_actions(&ep.state, &inst.language);
            let a = acts[rng.random_range(0..acts.len())].clone();
            let tr = ep.step(&inst, &a).unwrap();
            assert!((-0.75..=7.0).contains(&tr.reward));
            assert!(!tr.terminated);
            assert_eq!(tr.truncated, ep.t == 40);
        }
    }
}
