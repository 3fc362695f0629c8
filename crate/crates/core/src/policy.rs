//! Factorized actor-critic head.
//!
//! Object embeddings are extended with one learned row for the null object
//! per graph. The head computes
//!
//! * `π_A(a|u)`: softmax over the symbols legal for `u`,
//! * `π_U(u)`: softmax over the objects that admit some legal symbol,
//! * `π_A(a) = Σ_u π_A(a|u) π_U(u)`,
//! * `π_U(u|a)`: softmax over the objects legal for `a`,
//!
//! and samples `a ~ π_A`, then `u ~ π_U(·|a)`. The value is the expected
//! `Q̃(u, a)` under the joint `π_A(a) π_U(u|a)`, where `Q̃` averages the
//! critic heads. Masked pairs get probability exactly zero.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ActionMask, Batch, FactorGraph};
use crate::nn::{Index, ParamId, ParamStore, Tape, Tensor, Var};
use crate::schema::{GroundAction, Language};

/// Policy and critic weights. Matrices are stored `[out x D]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyHead {
    /// `[|A| x D]`, logits of `π_A(a|u)`.
    pub symbol: ParamId,
    /// `[1 x D]`, logits of `π_U(u)`.
    pub object: ParamId,
    /// `[|A| x D]`, logits of `π_U(u|a)`.
    pub object_given_symbol: ParamId,
    /// One `[|A| x D]` matrix per critic head.
    pub critics: Vec<ParamId>,
    /// `[1 x D]` embedding of the null object.
    pub null_object: ParamId,
}

/// Row layout of the object embeddings extended by one null row per graph.
#[derive(Debug, Clone)]
pub struct ExtendedRows {
    /// Row of `[H; h_null]` feeding each extended row.
    pub source: Index,
    /// Graph of each extended row.
    pub graph: Index,
    /// Extended rows of each graph; the last one is the null object.
    pub ranges: Vec<Range<usize>>,
    /// `[rows x |A|]` legality of (row, symbol).
    pub mask: Vec<bool>,
    /// Rows with at least one legal symbol.
    pub object_mask: Vec<bool>,
}

impl ExtendedRows {
    pub fn of(batch: &Batch) -> Self {
        let null_row = batch.num_objects();
        let mut source = Vec::new();
        let mut graph = Vec::new();
        let mut ranges = Vec::new();
        let mut mask = Vec::new();
        let mut object_mask = Vec::new();
        for (g, (slice, m)) in batch.slices.iter().zip(&batch.masks).enumerate() {
            let start = source.len();
            for (col, row) in slice.objects.clone().chain([null_row]).enumerate() {
                source.push(row);
                graph.push(g);
                let legal: Vec<bool> = (0..m.num_symbols()).map(|a| m.get(a, col)).collect();
                object_mask.push(legal.iter().any(|&b| b));
                mask.extend(legal);
            }
            ranges.push(start..source.len());
        }
        Self {
            source: Arc::from(source),
            graph: Arc::from(graph),
            ranges,
            mask,
            object_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// Head outputs for a whole batch, all recorded on the tape.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[graphs x |A|]`, `π_A(a)`.
    pub symbol_probs: Var,
    /// `[rows x |A|]`, `π_U(u|a)` over extended rows.
    pub object_probs: Var,
    /// `[rows x |A|]`, `π_A(a) π_U(u|a)`.
    pub joint: Var,
    /// `[rows x |A|]`, critic-averaged `Q̃(u, a)`.
    pub q: Var,
    /// `[graphs x 1]`, expected `Q̃` under the joint.
    pub value: Var,
    /// `[graphs x 1]`, joint entropy.
    pub entropy: Var,
    pub rows: ExtendedRows,
}

impl HeadOutput {
    /// `ln π(a, u)` for `(graph, symbol, column)` triples, `[k x 1]`.
    pub fn log_probs(&self, tape: &mut Tape, actions: &[(usize, usize, usize)]) -> Var {
        let index: Vec<(usize, usize)> = actions
            .iter()
            .map(|&(g, a, col)| (self.rows.ranges[g].start + col, a))
            .collect();
        let p = tape.gather_elements(self.joint, Arc::from(index));
        tape.ln(p)
    }

    /// Plain-number distribution of graph `g`.
    pub fn distribution(&self, tape: &Tape, batch: &Batch, g: usize) -> ActionDistribution {
        let rows = self.rows.ranges[g].clone();
        let num_symbols = tape.shape(self.symbol_probs)[1];
        let columns = rows.len();
        let transpose = |v: Var| {
            let t = tape.value(v);
            let mut out = Tensor::zeros(num_symbols, columns);
            for (c, r) in rows.clone().enumerate() {
                for a in 0..num_symbols {
                    out.set(a, c, t.get(r, a));
                }
            }
            out
        };
        ActionDistribution {
            p_sym: tape.value(self.symbol_probs).row_slice(g).to_vec(),
            p_obj_given_sym: transpose(self.object_probs),
            q: transpose(self.q),
            mask: batch.masks[g].clone(),
            value: tape.value(self.value).get(g, 0),
            entropy: tape.value(self.entropy).get(g, 0),
        }
    }
}

impl PolicyHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        lang: &Language,
        dim: usize,
        critic_heads: usize,
        rng: &mut R,
    ) -> Self {
        let a = lang.num_actions();
        Self {
            symbol: store.add_uniform("policy.symbol", a, dim, rng),
            object: store.add_uniform("policy.object", 1, dim, rng),
            object_given_symbol: store.add_uniform("policy.object_given_symbol", a, dim, rng),
            critics: (0..critic_heads)
                .map(|i| store.add_uniform(&format!("policy.critic{i}"), a, dim, rng))
                .collect(),
            null_object: store.add_normal("policy.null_object", 1, dim, rng),
        }
    }

    /// Runs the head on final object embeddings `h` of `batch`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, batch: &Batch) -> Result<HeadOutput> {
        for m in &batch.masks {
            if m.count_legal() == 0 {
                return Err(Error::NoLegalAction);
            }
        }
        let rows = ExtendedRows::of(batch);
        let graphs = batch.num_graphs();
        let null = tape.param(store, self.null_object);
        let all = tape.concat_rows(h, null);
        let hx = tape.gather_rows(all, rows.source.clone());

        let w_sym = tape.param(store, self.symbol);
        let sym_logits = tape.linear(hx, w_sym, 0);
        let sym_given_obj = tape.softmax_rows(sym_logits, Some(&rows.mask));
        let w_obj = tape.param(store, self.object);
        let obj_logits = tape.linear(hx, w_obj, 0);
        let obj = tape.softmax_segments(obj_logits, rows.graph.clone(), graphs, Some(&rows.object_mask));
        let weighted = tape.mul_column(obj, sym_given_obj);
        let symbol_probs = tape.segment_sum(weighted, rows.graph.clone(), graphs);

        let w_ogs = tape.param(store, self.object_given_symbol);
        let ogs_logits = tape.linear(hx, w_ogs, 0);
        let object_probs = tape.softmax_segments(ogs_logits, rows.graph.clone(), graphs, Some(&rows.mask));
        let sym_per_row = tape.gather_rows(symbol_probs, rows.graph.clone());
        let joint = tape.mul(sym_per_row, object_probs);

        let mut q_sum = None;
        for &c in &self.critics {
            let w = tape.param(store, c);
            let qc = tape.linear(hx, w, 0);
            q_sum = Some(match q_sum {
                None => qc,
                Some(s) => tape.add(s, qc),
            });
        }
        let q_sum = q_sum.expect("at least one critic head");
        let q = tape.scale(q_sum, 1.0 / self.critics.len() as f64);

        let jq = tape.mul(joint, q);
        let per_graph = tape.segment_sum(jq, rows.graph.clone(), graphs);
        let value = tape.sum_cols(per_graph);
        let plogp = tape.xlogx(joint);
        let per_graph = tape.segment_sum(plogp, rows.graph.clone(), graphs);
        let neg_entropy = tape.sum_cols(per_graph);
        let entropy = tape.scale(neg_entropy, -1.0);
        Ok(HeadOutput {
            symbol_probs,
            object_probs,
            joint,
            q,
            value,
            entropy,
            rows,
        })
    }
}

/// Factorized action distribution of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    /// `π_A(a)`.
    pub p_sym: Vec<f64>,
    /// `[|A| x (objects + 1)]`, `π_U(u|a)`; the last column is the null
    /// object.
    pub p_obj_given_sym: Tensor,
    /// `[|A| x (objects + 1)]`, critic-averaged `Q̃(u, a)`.
    pub q: Tensor,
    pub mask: ActionMask,
    /// Value estimate in the critic's (symlog) space.
    pub value: f64,
    pub entropy: f64,
}

impl ActionDistribution {
    pub fn prob(&self, symbol: usize, column: usize) -> f64 {
        self.p_sym[symbol] * self.p_obj_given_sym.get(symbol, column)
    }

    pub fn log_prob(&self, symbol: usize, column: usize) -> f64 {
        self.p_sym[symbol].ln() + self.p_obj_given_sym.get(symbol, column).ln()
    }

    /// Legal pairs with their joint probabilities, in enumeration order.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.mask
            .legal_pairs()
            .map(|(a, c)| ((a, c), self.prob(a, c)))
    }

    /// `H(π_A)`.
    pub fn symbol_entropy(&self) -> f64 {
        -self.p_sym.iter().map(|&p| xlogx(p)).sum::<f64>()
    }

    /// `Σ_a π_A(a) H(π_U(·|a))`.
    pub fn conditional_object_entropy(&self) -> f64 {
        (0..self.p_sym.len())
            .map(|a| {
                let row = self.p_obj_given_sym.row_slice(a);
                -self.p_sym[a] * row.iter().map(|&p| xlogx(p)).sum::<f64>()
            })
            .sum()
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Index drawn from `(index, weight)` pairs with weights summing to one.
/// Zero-weight entries are never returned.
fn categorical<R: Rng>(weights: impl Iterator<Item = (usize, f64)>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = None;
    for (i, w) in weights {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        last = Some(i);
        if u < cumulative {
            return i;
        }
    }
    last.expect("distribution has a positive entry")
}

/// Samples `a ~ π_A`, then `u ~ π_U(·|a)`. Returns the mask coordinates and
/// `ln π_A(a) + ln π_U(u|a)`.
pub fn sample_pair<R: Rng>(dist: &ActionDistribution, rng: &mut R) -> (usize, usize, f64) {
    let a = categorical(dist.p_sym.iter().copied().enumerate(), rng);
    let row = dist.p_obj_given_sym.row_slice(a);
    let c = categorical(row.iter().copied().enumerate(), rng);
    (a, c, dist.log_prob(a, c))
}

pub fn sample_action<R: Rng>(
    dist: &ActionDistribution,
    graph: &FactorGraph,
    lang: &Language,
    rng: &mut R,
) -> (GroundAction, f64) {
    let (a, c, logp) = sample_pair(dist, rng);
    (graph.decode(lang, a, c), logp)
}

/// Most probable legal pair under the joint; the first in enumeration order
/// wins ties.
pub fn greedy_pair(dist: &ActionDistribution) -> (usize, usize) {
    let mut best = None;
    for (pair, p) in dist.pairs() {
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((pair, p));
        }
    }
    best.expect("noop is always legal").0
}

pub fn greedy_action(dist: &ActionDistribution, graph: &FactorGraph, lang: &Language) -> GroundAction {
    let (a, c) = greedy_pair(dist);
    graph.decode(lang, a, c)
}

/// `Σ_{(a,u)} π(a, u) Q̃(u, a)` over legal pairs.
pub fn value_estimate(dist: &ActionDistribution) -> f64 {
    dist.pairs().map(|((a, c), p)| p * dist.q.get(a, c)).sum()
}

/// Joint entropy `-Σ π(a, u) ln π(a, u)` over legal pairs.
pub fn entropy(dist: &ActionDistribution) -> f64 {
    -dist.pairs().map(|(_, p)| xlogx(p)).sum::<f64>()
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDiagnostic {
    pub action: String,
    pub probability: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymbolDiagnostic {
    pub symbol: String,
    pub probability: f64,
}

/// Per-pair probabilities for inspection.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionDiagnostic {
    pub value: f64,
    pub entropy: f64,
    pub symbols: Vec<SymbolDiagnostic>,
    pub actions: Vec<PairDiagnostic>,
}

impl ActionDistribution {
    pub fn diagnostic(&self, graph: &FactorGraph, lang: &Language) -> DistributionDiagnostic {
        DistributionDiagnostic {
            value: self.value,
            entropy: self.entropy,
            symbols: self
                .p_sym
                .iter()
                .enumerate()
                .map(|(a, &p)| SymbolDiagnostic {
                    symbol: lang.action_name(a).to_string(),
                    probability: p,
                })
                .collect(),
            actions: self
                .pairs()
                .map(|((a, c), p)| PairDiagnostic {
                    action: graph.decode(lang, a, c).to_string(),
                    probability: p,
                    q: self.q.get(a, c),
                })
                .collect(),
        }
    }
}
