//! Grid navigation with vanishing cells.
//!
//! Cells are objects linked by `adjacent-<dir>(from, to)` facts. The agent
//! moves with the nullary actions `north`, `south`, `east` and `west`;
//! moving off the grid leaves it in place. After every move the agent
//! vanishes with the `disappear-prob` of the cell it occupies. Each step
//! not started on the goal costs 1; arriving at the goal terminates the
//! episode. A vanished agent can no longer move, so the episode runs on at
//! cost 1 per step until the horizon.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::document::{Document, DomainDoc, Dynamics, InstanceDoc};
use super::{EnvInstance, Transition};
use crate::error::Result;
use crate::fixtures;
use crate::schema::{GroundAction, GroundFact, ObjectRef, PredicateDecl, StateDb};

pub const CELL: &str = "cell";
pub const AGENT_AT: &str = "agent-at";
pub const GOAL: &str = "goal";
pub const DISAPPEAR: &str = "disappear-prob";
pub const NOOP: &str = "noop";
/// Moves with the adjacency predicate they follow.
pub const MOVES: [(&str, &str); 4] = [
    ("north", "adjacent-north"),
    ("south", "adjacent-south"),
    ("east", "adjacent-east"),
    ("west", "adjacent-west"),
];

pub fn domain_doc() -> DomainDoc {
    let mut predicates: Vec<PredicateDecl> = MOVES
        .iter()
        .map(|(_, adj)| PredicateDecl::atom(adj, &[CELL, CELL]))
        .collect();
    predicates.extend([
        PredicateDecl::atom(AGENT_AT, &[CELL]),
        PredicateDecl::atom(GOAL, &[CELL]),
        PredicateDecl::function(DISAPPEAR, &[CELL]),
        PredicateDecl::action(NOOP, &[]),
    ]);
    predicates.extend(MOVES.iter().map(|(m, _)| PredicateDecl::action(m, &[])));
    DomainDoc {
        name: "gridnav".into(),
        dynamics: Dynamics::Gridnav,
        types: vec![CELL.into()],
        predicates,
        noop: NOOP.into(),
        constants: BTreeMap::from([("blocked_threshold".to_string(), 0.5)]),
    }
}

pub fn cell_name(row: usize, col: usize) -> String {
    format!("c{row}_{col}")
}

/// `rows x cols` grid, row 0 at the south. `disappear[r][c]` gives the
/// vanishing probabilities; only positive ones become facts.
pub fn instance_doc(
    id: &str,
    disappear: &[Vec<f64>],
    start: (usize, usize),
    goal: (usize, usize),
    seed: u64,
) -> InstanceDoc {
    let rows = disappear.len();
    let cols = disappear.first().map_or(0, Vec::len);
    let mut objects = Vec::new();
    let mut facts = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            objects.push(ObjectRef::new(&cell_name(r, c), CELL));
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let here = cell_name(r, c);
            let neighbors = [
                (r + 1 < rows).then(|| (r + 1, c)),
                (r > 0).then(|| (r.wrapping_sub(1), c)),
                (c + 1 < cols).then(|| (r, c + 1)),
                (c > 0).then(|| (r, c.wrapping_sub(1))),
            ];
            for ((_, adj), n) in MOVES.iter().zip(neighbors) {
                if let Some((nr, nc)) = n {
                    facts.push(GroundFact::atom(adj, &[&here, &cell_name(nr, nc)]));
                }
            }
            if disappear[r][c] > 0.0 {
                facts.push(GroundFact::function(DISAPPEAR, &[&here], disappear[r][c]));
            }
        }
    }
    facts.push(GroundFact::atom(GOAL, &[&cell_name(goal.0, goal.1)]));
    facts.push(GroundFact::atom(AGENT_AT, &[&cell_name(start.0, start.1)]));
    InstanceDoc {
        id: id.into(),
        horizon: 40,
        seed,
        objects,
        facts,
        params: BTreeMap::new(),
    }
}

/// Whether a path avoiding cells above `threshold` joins start and goal.
fn has_safe_path(disappear: &[Vec<f64>], start: (usize, usize), goal: (usize, usize), threshold: f64) -> bool {
    let (rows, cols) = (disappear.len(), disappear[0].len());
    let mut seen = vec![vec![false; cols]; rows];
    let mut queue = VecDeque::from([start]);
    seen[start.0][start.1] = true;
    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == goal {
            return true;
        }
        let cand = [(r + 1, c), (r.wrapping_sub(1), c), (r, c + 1), (r, c.wrapping_sub(1))];
        for (nr, nc) in cand {
            if nr < rows && nc < cols && !seen[nr][nc] && disappear[nr][nc] <= threshold {
                seen[nr][nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    false
}

/// Ten grids from 3x3 to 5x6 with seeded hazards; start in the south-west
/// corner, goal in the north-east corner, always joined by a safe path.
pub fn builtin() -> Document {
    let sizes = [(3, 3), (3, 4), (4, 3), (4, 4), (3, 5), (4, 5), (5, 4), (5, 5), (4, 6), (5, 6)];
    let levels = [0.1, 0.3, 0.7, 0.9];
    let instances = sizes
        .iter()
        .enumerate()
        .map(|(i, &(rows, cols))| {
            let seed = 2000 + i as u64;
            let mut rng = fixtures::rng(seed);
            let (start, goal) = ((0, 0), (rows - 1, cols - 1));
            let grid = loop {
                let grid: Vec<Vec<f64>> = (0..rows)
                    .map(|r| {
                        (0..cols)
                            .map(|c| {
                                let hazard = rng.random::<f64>() < 0.4;
                                let level = levels[rng.random_range(0..levels.len())];
                                if hazard && (r, c) != start && (r, c) != goal {
                                    level
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect();
                if has_safe_path(&grid, start, goal, 0.5) {
                    break grid;
                }
            };
            instance_doc(&format!("gridnav-{i:02}"), &grid, start, goal, seed)
        })
        .collect();
    Document {
        domain: domain_doc(),
        instances,
    }
}

/// Agent cell, goal cells, hazard per cell and move targets by object index.
struct Grid {
    agent: Option<usize>,
    goal: Vec<bool>,
    disappear: Vec<f64>,
    moves: Vec<[Option<usize>; 4]>,
}

impl Grid {
    fn of(state: &StateDb) -> Self {
        let n = state.objects().len();
        let id = |name: &String| state.object_id(name).expect("validated state");
        let mut grid = Grid {
            agent: None,
            goal: vec![false; n],
            disappear: vec![0.0; n],
            moves: vec![[None; 4]; n],
        };
        for (pred, args, value) in state.fact_entries() {
            match pred {
                AGENT_AT => grid.agent = Some(id(&args[0])),
                GOAL => grid.goal[id(&args[0])] = true,
                DISAPPEAR => grid.disappear[id(&args[0])] = value,
                _ => {
                    if let Some(d) = MOVES.iter().position(|(_, adj)| *adj == pred) {
                        grid.moves[id(&args[0])][d] = Some(id(&args[1]));
                    }
                }
            }
        }
        grid
    }

    /// Shortest-path distance to a goal through cells at or below
    /// `threshold`.
    fn distances(&self, threshold: f64) -> Vec<Option<usize>> {
        let n = self.goal.len();
        let mut reverse = vec![Vec::new(); n];
        for (from, targets) in self.moves.iter().enumerate() {
            for to in targets.iter().flatten() {
                reverse[*to].push(from);
            }
        }
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for c in (0..n).filter(|&c| self.goal[c]) {
            dist[c] = Some(0);
            queue.push_back(c);
        }
        while let Some(c) = queue.pop_front() {
            let d = dist[c].expect("queued cells have distances");
            for &p in &reverse[c] {
                if dist[p].is_none() && self.disappear[p] <= threshold {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }
}

pub fn step<R: Rng>(inst: &EnvInstance, state: &StateDb, action: &GroundAction, rng: &mut R) -> Result<Transition> {
    let grid = Grid::of(state);
    let u: f64 = rng.random();
    let Some(agent) = grid.agent else {
        return Ok(Transition {
            next: state.clone(),
            reward: -1.0,
            terminated: false,
            truncated: false,
        });
    };
    if grid.goal[agent] {
        return Ok(Transition {
            next: state.clone(),
            reward: 0.0,
            terminated: true,
            truncated: false,
        });
    }
    let target = MOVES
        .iter()
        .position(|(m, _)| *m == action.symbol)
        .and_then(|d| grid.moves[agent][d])
        .unwrap_or(agent);
    let mut next = state.clone();
    let names = state.objects();
    next.retract(AGENT_AT, &[&names[agent].name]);
    let vanished = u < grid.disappear[target];
    if !vanished {
        next.insert(&inst.language, GroundFact::atom(AGENT_AT, &[&names[target].name]))?;
    }
    Ok(Transition {
        next,
        reward: -1.0,
        terminated: !vanished && grid.goal[target],
        truncated: false,
    })
}

pub fn expert_ties(inst: &EnvInstance, state: &StateDb) -> Vec<GroundAction> {
    let grid = Grid::of(state);
    let threshold = inst.params.get("blocked_threshold").copied().unwrap_or(0.5);
    let dist = grid.distances(threshold);
    let best: Vec<GroundAction> = match grid.agent.filter(|&a| !grid.goal[a]).and_then(|a| dist[a].map(|d| (a, d))) {
        Some((agent, d)) => MOVES
            .iter()
            .enumerate()
            .filter(|(k, _)| grid.moves[agent][*k].and_then(|t| dist[t]) == Some(d - 1))
            .map(|(_, (m, _))| GroundAction::nullary(m))
            .collect(),
        None => Vec::new(),
    };
    if best.is_empty() {
        vec![GroundAction::nullary(NOOP)]
    } else {
        best
    }
}

/// First move along a shortest path avoiding cells whose vanishing
/// probability exceeds `blocked_threshold`; noop if none exists.
pub fn expert(inst: &EnvInstance, state: &StateDb) -> GroundAction {
    expert_ties(inst, state).remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Episode;

    fn grid_instance(disappear: Vec<Vec<f64>>, start: (usize, usize), goal: (usize, usize)) -> EnvInstance {
        let doc = Document {
            domain: domain_doc(),
            instances: vec![instance_doc("g", &disappear, start, goal, 3)],
        };
        doc.load().unwrap().instances.remove(0)
    }

    fn go(dir: &str) -> GroundAction {
        GroundAction::nullary(dir)
    }

    #[test]
    fn builtin_grids_are_solvable() {
        let d = builtin().load().unwrap();
        assert_eq!(d.instances.len(), 10);
        for inst in &d.instances {
            assert!(inst.initial.holds(AGENT_AT, &["c0_0"]), "{}", inst.id);
            assert_ne!(expert(inst, &inst.initial), go(NOOP), "{}", inst.id);
        }
        assert_eq!(d.instances[0].initial.objects().len(), 9);
        assert_eq!(d.instances[9].initial.objects().len(), 30);
    }

    #[test]
    fn line_walk_costs_two() {
        let inst = grid_instance(vec![vec![0.0, 0.0, 0.0]], (0, 0), (0, 2));
        let mut ep = Episode::new(&inst, 0, 1);
        assert_eq!(expert(&inst, &ep.state), go("east"));
        let t1 = ep.step(&inst, &go("east")).unwrap();
        assert!(!t1.terminated);
        let t2 = ep.step(&inst, &go("east")).unwrap();
        assert!(t2.terminated);
        assert_eq!(ep.total_reward, -2.0);
    }

    #[test]
    fn goal_start_terminates_free() {
        let inst = grid_instance(vec![vec![0.0, 0.0]], (0, 1), (0, 1));
        let tr = inst.step(&inst.initial, &go(NOOP), &mut fixtures::rng(0)).unwrap();
        assert!(tr.terminated);
        assert_eq!(tr.reward, 0.0);
    }

    #[test]
    fn wall_bump_stays() {
        let inst = grid_instance(vec![vec![0.0; 3]; 3], (1, 0), (2, 2));
        let tr = inst.step(&inst.initial, &go("west"), &mut fixtures::rng(0)).unwrap();
        assert!(tr.next.holds(AGENT_AT, &["c1_0"]));
        assert_eq!(tr.reward, -1.0);
    }

    #[test]
    fn vanishing_agent_keeps_paying() {
        let inst = grid_instance(vec![vec![0.0, 0.99999, 0.0]], (0, 0), (0, 2));
        let mut ep = Episode::new(&inst, 0, 2);
        ep.step(&inst, &go("east")).unwrap();
        assert!(!ep.state.fact_entries().any(|(p, _, _)| p == AGENT_AT));
        while !ep.done {
            let tr = ep.step(&inst, &go("east")).unwrap();
            assert_eq!(tr.reward, -1.0);
            assert!(!tr.terminated);
        }
        assert_eq!(ep.total_reward, -40.0);
        assert_eq!(expert(&inst, &ep.state), go(NOOP));
    }

    #[test]
    fn bfs_expert_detours_around_hazards() {
        // 3x3, the centre column's lower cells are blocked: go north first.
        let grid = vec![vec![0.0, 0.9, 0.0], vec![0.0, 0.9, 0.0], vec![0.0, 0.0, 0.0]];
        let inst = grid_instance(grid, (0, 0), (0, 2));
        assert_eq!(expert(&inst, &inst.initial), go("north"));
        assert_eq!(expert_ties(&inst, &inst.initial), vec![go("north")]);
        let open = grid_instance(vec![vec![0.0; 3]; 3], (0, 0), (2, 2));
        assert_eq!(expert_ties(&open, &open.initial), vec![go("north"), go("east")]);
    }

    #[test]
    fn unreachable_goal_means_noop() {
        let inst = grid_instance(vec![vec![0.0, 0.8, 0.0]], (0, 0), (0, 2));
        assert_eq!(expert(&inst, &inst.initial), go(NOOP));
    }

    #[test]
    fn episodes_respect_horizon() {
        let inst = grid_instance(vec![vec![0.0; 3]; 3], (0, 0), (2, 2));
        let mut ep = Episode::new(&inst, 0, 4);
        while !ep.done {
            let tr = ep.step(&inst, &go(NOOP)).unwrap();
            assert!(tr.reward == -1.0 || tr.reward == 0.0);
        }
        assert_eq!(ep.t, 40);
        assert_eq!(ep.total_reward, -40.0);
    }
}
