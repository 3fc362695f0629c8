//! Bipartite factor-graph view of a state database and disjoint-union
//! batching.
//!
//! Fact nodes and object nodes are joined by edges labelled with the
//! object's argument position in the fact. Nullary facts carry no edges and
//! are kept aside for the global aggregation step. Object names are kept
//! only to decode actions; no numeric field depends on them.

use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::schema::{GroundAction, Language, StateDb};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorNode {
    pub predicate: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub factor: usize,
    pub object: usize,
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullaryFact {
    pub predicate: usize,
    pub value: f64,
}

/// Legal (action symbol, object) pairs. Column `num_objects` is the null
/// object used by nullary symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    num_symbols: usize,
    num_columns: usize,
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn new(num_symbols: usize, num_objects: usize) -> Self {
        Self {
            num_symbols,
            num_columns: num_objects + 1,
            bits: vec![false; num_symbols * (num_objects + 1)],
        }
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    /// Objects plus the null column.
    pub fn num_columns(&self) -> usize {
        self.num_columns
    }

    pub fn null_column(&self) -> usize {
        self.num_columns - 1
    }

    pub fn get(&self, symbol: usize, column: usize) -> bool {
        self.bits[symbol * self.num_columns + column]
    }

    pub fn set(&mut self, symbol: usize, column: usize, legal: bool) {
        self.bits[symbol * self.num_columns + column] = legal;
    }

    pub fn count_legal(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Legal pairs in enumeration order (symbol, then column).
    pub fn legal_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_symbols).flat_map(move |a| {
            (0..self.num_columns)
                .filter(move |&c| self.get(a, c))
                .map(move |c| (a, c))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub object_types: Vec<usize>,
    pub factors: Vec<FactorNode>,
    pub edges: Vec<Edge>,
    pub nullary: Vec<NullaryFact>,
    pub object_names: Vec<String>,
    pub action_mask: ActionMask,
    pub language: u64,
}

impl FactorGraph {
    pub fn num_objects(&self) -> usize {
        self.object_types.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Mask coordinates of a ground action, if it is legal here.
    pub fn locate(&self, lang: &Language, action: &GroundAction) -> Option<(usize, usize)> {
        let a = lang.action_id(&action.symbol)?;
        let col = match &action.object {
            None => self.action_mask.null_column(),
            Some(name) => self.object_names.iter().position(|n| n == name)?,
        };
        self.action_mask.get(a, col).then_some((a, col))
    }

    /// Inverse of [`FactorGraph::locate`].
    pub fn decode(&self, lang: &Language, symbol: usize, column: usize) -> GroundAction {
        let name = lang.action_name(symbol);
        if column == self.action_mask.null_column() {
            GroundAction::nullary(name)
        } else {
            GroundAction::unary(name, &self.object_names[column])
        }
    }

    /// Human-readable dump of nodes and edges.
    pub fn render(&self, lang: &Language) -> String {
        let mut s = String::new();
        for (i, t) in self.object_types.iter().enumerate() {
            let _ = writeln!(s, "object {i} {}: {}", self.object_names[i], lang.types()[*t]);
        }
        for (i, f) in self.factors.iter().enumerate() {
            let _ = writeln!(
                s,
                "factor {i} {} value={}",
                lang.predicate(f.predicate).name,
                f.value
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge factor={} object={} position={}", e.factor, e.object, e.position);
        }
        for n in &self.nullary {
            let _ = writeln!(s, "nullary {} value={}", lang.predicate(n.predicate).name, n.value);
        }
        s
    }
}

/// Builds the factor graph of `db`. Nullary facts go to `nullary`, every
/// other fact becomes a factor node with one edge per argument position.
pub fn build_graph(db: &StateDb, lang: &Language) -> FactorGraph {
    let objects = db.objects();
    let object_types: Vec<usize> = objects
        .iter()
        .map(|o| lang.type_id(&o.type_name).expect("db validated against language"))
        .collect();
    let mut factors = Vec::new();
    let mut edges = Vec::new();
    let mut nullary = Vec::new();
    for (pred, args, value) in db.fact_entries() {
        let predicate = lang.predicate_id(pred).expect("db validated against language");
        if args.is_empty() {
            nullary.push(NullaryFact { predicate, value });
            continue;
        }
        let factor = factors.len();
        factors.push(FactorNode { predicate, value });
        for (position, arg) in args.iter().enumerate() {
            let object = db.object_id(arg).expect("db validated against language");
            edges.push(Edge {
                factor,
                object,
                position,
            });
        }
    }
    let mut mask = ActionMask::new(lang.num_actions(), objects.len());
    for a in 0..lang.num_actions() {
        match lang.action_arg_type(a) {
            None => mask.set(a, objects.len(), true),
            Some(t) => {
                for (j, &ot) in object_types.iter().enumerate() {
                    if ot == t {
                        mask.set(a, j, true);
                    }
                }
            }
        }
    }
    FactorGraph {
        object_types,
        factors,
        edges,
        nullary,
        object_names: objects.iter().map(|o| o.name.clone()).collect(),
        action_mask: mask,
        language: lang.fingerprint(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphSlice {
    pub objects: Range<usize>,
    pub factors: Range<usize>,
    pub edges: Range<usize>,
    pub nullary: Range<usize>,
}

/// Disjoint union of several factor graphs with offset indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub object_types: Vec<usize>,
    pub object_graph: Vec<usize>,
    pub factors: Vec<FactorNode>,
    pub factor_graph: Vec<usize>,
    pub edges: Vec<Edge>,
    pub nullary: Vec<NullaryFact>,
    pub nullary_graph: Vec<usize>,
    pub slices: Vec<GraphSlice>,
    pub object_names: Vec<String>,
    pub masks: Vec<ActionMask>,
    pub language: u64,
}

impl Batch {
    pub fn num_graphs(&self) -> usize {
        self.slices.len()
    }

    pub fn num_objects(&self) -> usize {
        self.object_types.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn edge_objects(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.object).collect()
    }

    pub fn edge_factors(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.factor).collect()
    }

    pub fn edge_positions(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.position).collect()
    }

    /// Splits the batch back into its member graphs.
    pub fn unbatch(&self) -> Vec<FactorGraph> {
        self.slices
            .iter()
            .zip(&self.masks)
            .map(|(s, mask)| FactorGraph {
                object_types: self.object_types[s.objects.clone()].to_vec(),
                factors: self.factors[s.factors.clone()].to_vec(),
                edges: self.edges[s.edges.clone()]
                    .iter()
                    .map(|e| Edge {
                        factor: e.factor - s.factors.start,
                        object: e.object - s.objects.start,
                        position: e.position,
                    })
                    .collect(),
                nullary: self.nullary[s.nullary.clone()].to_vec(),
                object_names: self.object_names[s.objects.clone()].to_vec(),
                action_mask: mask.clone(),
                language: self.language,
            })
            .collect()
    }
}

/// Concatenates graphs into one disconnected graph.
pub fn batch<'a, I>(graphs: I) -> Result<Batch>
where
    I: IntoIterator<Item = &'a FactorGraph>,
{
    let mut out = Batch::default();
    for (g, graph) in graphs.into_iter().enumerate() {
        if g == 0 {
            out.language = graph.language;
        } else if graph.language != out.language {
            return Err(Error::MixedLanguage);
        }
        let object_offset = out.object_types.len();
        let factor_offset = out.factors.len();
        let slice = GraphSlice {
            objects: object_offset..object_offset + graph.num_objects(),
            factors: factor_offset..factor_offset + graph.num_factors(),
            edges: out.edges.len()..out.edges.len() + graph.edges.len(),
            nullary: out.nullary.len()..out.nullary.len() + graph.nullary.len(),
        };
        out.object_types.extend_from_slice(&graph.object_types);
        out.object_graph
            .extend(std::iter::repeat_n(g, graph.num_objects()));
        out.factors.extend_from_slice(&graph.factors);
        out.factor_graph
            .extend(std::iter::repeat_n(g, graph.num_factors()));
        out.edges.extend(graph.edges.iter().map(|e| Edge {
            factor: e.factor + factor_offset,
            object: e.object + object_offset,
            position: e.position,
        }));
        out.nullary.extend_from_slice(&graph.nullary);
        out.nullary_graph
            .extend(std::iter::repeat_n(g, graph.nullary.len()));
        out.object_names.extend(graph.object_names.iter().cloned());
        out.masks.push(graph.action_mask.clone());
        out.slices.push(slice);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::schema::{enumerate_actions, ObjectRef, StateDb};

    #[test]
    fn figure_graph() {
        let lang = fixtures::toy_language();
        let db = fixtures::figure_state(&lang);
        let g = build_graph(&db, &lang);
        assert_eq!(g.num_objects(), 3);
        assert_eq!(g.num_factors(), 4);
        let p = |n: &str| lang.predicate_id(n).unwrap();
        let preds: Vec<usize> = g.factors.iter().map(|f| f.predicate).collect();
        assert_eq!(preds, [p("P"), p("Q"), p("Z"), p("Q")]);
        assert_eq!(g.factors[2].value, 5.0);
        let (x1, y1, x2) = (0, 1, 2);
        assert_eq!(g.object_names, ["x1", "y1", "x2"]);
        let edges: Vec<(usize, usize, usize)> = g
            .edges
            .iter()
            .map(|e| (e.factor, e.object, e.position))
            .collect();
        assert_eq!(
            edges,
            [
                (0, x1, 0),
                (1, x1, 0),
                (1, y1, 1),
                (2, y1, 0),
                (3, x2, 0),
                (3, y1, 1)
            ]
        );
        assert_eq!(g.nullary, [NullaryFact { predicate: p("C"), value: 1.0 }]);
    }

    #[test]
    fn empty_fact_set() {
        let lang = fixtures::toy_language();
        let db = StateDb::new(&lang, vec![ObjectRef::new("a", "X"), ObjectRef::new("b", "Y")])
            .unwrap();
        let g = build_graph(&db, &lang);
        assert_eq!(g.num_objects(), 2);
        assert!(g.factors.is_empty() && g.edges.is_empty() && g.nullary.is_empty());
    }

    #[test]
    fn single_nullary_fact() {
        let lang = fixtures::toy_language();
        let db = StateDb::new(&lang, vec![])
            .unwrap()
            .assert_facts(&lang, &[crate::schema::GroundFact::atom("C", &[])])
            .unwrap();
        let g = build_graph(&db, &lang);
        assert_eq!(g.nullary.len(), 1);
        assert_eq!(g.num_objects() + g.num_factors() + g.edges.len(), 0);
    }

    #[test]
    fn mask_matches_enumeration() {
        let lang = fixtures::toy_language();
        let db = fixtures::figure_state(&lang);
        let g = build_graph(&db, &lang);
        let legal: Vec<GroundAction> = g
            .action_mask
            .legal_pairs()
            .map(|(a, c)| g.decode(&lang, a, c))
            .collect();
        assert_eq!(legal, enumerate_actions(&db, &lang));
        let noop = lang.noop_action();
        for c in 0..g.num_objects() {
            assert!(!g.action_mask.get(noop, c));
        }
        assert!(g.action_mask.get(noop, g.action_mask.null_column()));
    }

    #[test]
    fn batch_of_one_is_identity() {
        let lang = fixtures::toy_language();
        let g = build_graph(&fixtures::figure_state(&lang), &lang);
        let b = batch([&g]).unwrap();
        assert!(b.object_graph.iter().all(|&i| i == 0));
        assert_eq!(b.edges, g.edges);
        assert_eq!(b.unbatch(), vec![g]);
    }

    #[test]
    fn two_figure_graphs() {
        let lang = fixtures::toy_language();
        let g = build_graph(&fixtures::figure_state(&lang), &lang);
        let b = batch([&g, &g]).unwrap();
        assert_eq!(b.num_objects(), 6);
        assert_eq!(b.num_factors(), 8);
        assert_eq!(b.edges.len(), 12);
        for (e0, e1) in g.edges.iter().zip(&b.edges[6..]) {
            assert_eq!(e1.factor, e0.factor + 4);
            assert_eq!(e1.object, e0.object + 3);
        }
        assert_eq!(b.unbatch(), vec![g.clone(), g]);
    }

    #[test]
    fn empty_batch() {
        let b = batch(std::iter::empty()).unwrap();
        assert_eq!(b.num_graphs(), 0);
        assert!(b.unbatch().is_empty());
    }

    #[test]
    fn mixed_language_rejected() {
        let lang = fixtures::toy_language();
        let other = fixtures::rich_language();
        let g1 = build_graph(&fixtures::figure_state(&lang), &lang);
        let g2 = build_graph(&StateDb::new(&other, vec![]).unwrap(), &other);
        assert!(matches!(batch([&g1, &g2]), Err(Error::MixedLanguage)));
    }

    #[test]
    fn renaming_permutes_nodes_only() {
        let lang = fixtures::rich_language();
        let mut rng = fixtures::rng(7);
        for _ in 0..20 {
            let db = fixtures::random_state(&lang, &mut rng, 6, 10);
            let (renamed, perm) = fixtures::rename_shuffled(&lang, &db, &mut rng);
            let g = build_graph(&db, &lang);
            let h = build_graph(&renamed, &lang);
            assert_eq!(g.factors, h.factors);
            assert_eq!(g.nullary, h.nullary);
            for (u, &t) in g.object_types.iter().enumerate() {
                assert_eq!(h.object_types[perm[u]], t);
            }
            for (e, f) in g.edges.iter().zip(&h.edges) {
                assert_eq!(perm[e.object], f.object);
                assert_eq!((e.factor, e.position), (f.factor, f.position));
            }
        }
    }
}
