//! Embedding of factor graphs and bipartite message passing.
//!
//! Initial factor rows are `value · E_P[predicate]`, object rows are
//! `E_T[type] + g`, where `g` attention-pools the nullary facts of the same
//! graph. Each message-passing layer then runs, in order:
//!
//! 1. `m_vu = φ_vu(h_u ‖ k_v)` per edge,
//! 2. `h_u' = φ_u(h_u ‖ max_v m_vu)`,
//! 3. `m_uv = φ_uv(k_v ‖ h_u' ‖ e_uv)` per edge, with the updated `h'`,
//! 4. `k_v' = k_v + φ_v(k_v ‖ max_u m_uv)`.
//!
//! Maxima over empty neighbourhoods are zero.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::graph::Batch;
use crate::nn::{Activation, Index, MlpBlock, ParamId, ParamStore, Part, Tape, Var};
use crate::schema::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub predicates: ParamId,
    pub types: ParamId,
    pub positions: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessagePassingLayer {
    pub factor_to_object: MlpBlock,
    pub object_to_factor: MlpBlock,
    pub object_update: MlpBlock,
    pub factor_update: MlpBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NullaryAggregator {
    pub score: MlpBlock,
    pub value: MlpBlock,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub tables: EmbeddingTables,
    pub nullary: NullaryAggregator,
    pub layers: Vec<MessagePassingLayer>,
}

/// Final object (`h`) and factor (`k`) embeddings of a batch.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub h: Var,
    pub k: Var,
}

/// Edge endpoints of a batch as shared index lists.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub objects: Index,
    pub factors: Index,
    pub positions: Index,
    pub num_objects: usize,
    pub num_factors: usize,
}

impl EdgeIndex {
    pub fn of(batch: &Batch) -> Self {
        Self {
            objects: Arc::from(batch.edge_objects()),
            factors: Arc::from(batch.edge_factors()),
            positions: Arc::from(batch.edge_positions()),
            num_objects: batch.num_objects(),
            num_factors: batch.num_factors(),
        }
    }
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, lang: &Language, dim: usize, layers: usize, rng: &mut R) -> Self {
        let tables = EmbeddingTables {
            predicates: store.add_normal("embed.predicate", lang.num_predicates(), dim, rng),
            types: store.add_normal("embed.type", lang.num_types(), dim, rng),
            positions: store.add_normal("embed.position", lang.max_arity(), dim, rng),
            dim,
        };
        let nullary = NullaryAggregator {
            score: MlpBlock::new(store, "nullary.score", dim, 1, Activation::Tanh, rng),
            value: MlpBlock::new(store, "nullary.value", dim, dim, Activation::Tanh, rng),
        };
        let layers = (0..layers)
            .map(|i| MessagePassingLayer {
                factor_to_object: MlpBlock::new(store, &format!("mp{i}.factor_to_object"), 2 * dim, dim, Activation::Tanh, rng),
                object_to_factor: MlpBlock::new(store, &format!("mp{i}.object_to_factor"), 3 * dim, dim, Activation::Tanh, rng),
                object_update: MlpBlock::new(store, &format!("mp{i}.object_update"), 2 * dim, dim, Activation::Tanh, rng),
                factor_update: MlpBlock::new(store, &format!("mp{i}.factor_update"), 2 * dim, dim, Activation::Tanh, rng),
            })
            .collect();
        Self {
            tables,
            nullary,
            layers,
        }
    }

    /// `k_v = ν(v) · E_P[predicate(v)]` for every non-nullary factor.
    pub fn encode_factors(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Var {
        let table = tape.param(store, self.tables.predicates);
        let preds: Vec<usize> = batch.factors.iter().map(|f| f.predicate).collect();
        let values: Vec<f64> = batch.factors.iter().map(|f| f.value).collect();
        let rows = tape.gather_rows(table, Arc::from(preds));
        tape.scale_rows(rows, Arc::from(values))
    }

    /// Attention pooling of each graph's nullary facts, `[graphs x D]`.
    /// Graphs without nullary facts get the zero vector.
    pub fn aggregate_nullary(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let table = tape.param(store, self.tables.predicates);
        let preds: Vec<usize> = batch.nullary.iter().map(|f| f.predicate).collect();
        let values: Vec<f64> = batch.nullary.iter().map(|f| f.value).collect();
        let rows = tape.gather_rows(table, Arc::from(preds));
        let k = tape.scale_rows(rows, Arc::from(values));
        let scores = self.nullary.score.forward(tape, store, k)?;
        let segment: Index = Arc::from(batch.nullary_graph.clone());
        let weights = tape.softmax_segments(scores, segment.clone(), batch.num_graphs(), None);
        let values = self.nullary.value.forward(tape, store, k)?;
        let weighted = tape.mul_column(weights, values);
        Ok(tape.segment_sum(weighted, segment, batch.num_graphs()))
    }

    /// `h_u = E_T[type(u)] + g(graph(u))`.
    pub fn encode_objects(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch, pooled: Var) -> Var {
        let table = tape.param(store, self.tables.types);
        let types: Index = Arc::from(batch.object_types.clone());
        let graph: Index = Arc::from(batch.object_graph.clone());
        tape.gather_sum(
            vec![
                crate::nn::GatherPart { x: table, index: Some(types) },
                crate::nn::GatherPart { x: pooled, index: Some(graph) },
            ],
            None,
        )
    }

    /// `e_uv = E_N[position(u, v)]` for every edge.
    pub fn encode_positions(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Var {
        let table = tape.param(store, self.tables.positions);
        tape.gather_rows(table, Arc::from(batch.edge_positions()))
    }

    /// One round of message passing; returns the updated `(h, k)`.
    pub fn mp_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: &MessagePassingLayer,
        h: Var,
        k: Var,
        edges: &EdgeIndex,
    ) -> Result<(Var, Var)> {
        let to_object = layer.factor_to_object.forward_parts(
            tape,
            store,
            vec![
                Part::gathered(h, edges.objects.clone()),
                Part::gathered(k, edges.factors.clone()),
            ],
        )?;
        let object_in = tape.segment_max(to_object, &edges.objects, edges.num_objects);
        let h_next = layer
            .object_update
            .forward_parts(tape, store, vec![Part::rows(h), Part::rows(object_in)])?;

        let positions = tape.param(store, self.tables.positions);
        let to_factor = layer.object_to_factor.forward_parts(
            tape,
            store,
            vec![
                Part::gathered(k, edges.factors.clone()),
                Part::gathered(h_next, edges.objects.clone()),
                Part::gathered(positions, edges.positions.clone()),
            ],
        )?;
        let factor_in = tape.segment_max(to_factor, &edges.factors, edges.num_factors);
        let delta = layer
            .factor_update
            .forward_parts(tape, store, vec![Part::rows(k), Part::rows(factor_in)])?;
        let k_next = tape.add(k, delta);
        Ok((h_next, k_next))
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<EncoderOutput> {
        let mut k = self.encode_factors(tape, store, batch);
        let pooled = self.aggregate_nullary(tape, store, batch)?;
        let mut h = self.encode_objects(tape, store, batch, pooled);
        let edges = EdgeIndex::of(batch);
        for layer in &self.layers {
            (h, k) = self.mp_step(tape, store, layer, h, k, &edges)?;
        }
        Ok(EncoderOutput { h, k })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{batch, build_graph};
    use crate::nn::Tensor;
    use crate::schema::{GroundFact, ObjectRef, StateDb};

    fn setup(dim: usize, layers: usize, seed: u64) -> (Language, ParamStore, Encoder) {
        let lang = fixtures::toy_language();
        let mut store = ParamStore::new();
        let mut rng = fixtures::rng(seed);
        let enc = Encoder::new(&mut store, &lang, dim, layers, &mut rng);
        (lang, store, enc)
    }

    fn row(t: &Tensor, r: usize) -> Vec<f64> {
        t.row_slice(r).to_vec()
    }

    #[test]
    fn factor_rows_scale_predicate_embeddings() {
        let (lang, store, enc) = setup(4, 0, 1);
        let mut db = fixtures::figure_state(&lang);
        db.insert(&lang, GroundFact::function("Z", &["y1"], 0.0)).unwrap();
        let b = batch([&build_graph(&fixtures::figure_state(&lang), &lang), &build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let k = enc.encode_factors(&mut tape, &store, &b);
        let table = store.value(enc.tables.predicates);
        let p = |n: &str| lang.predicate_id(n).unwrap();
        let k = tape.value(k);
        assert_eq!(row(k, 0), row(table, p("P")));
        let five: Vec<f64> = row(table, p("Z")).iter().map(|v| 5.0 * v).collect();
        assert_eq!(row(k, 2), five);
        assert!(row(k, 6).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nullary_pooling() {
        let (lang, store, enc) = setup(4, 0, 2);
        let empty = StateDb::new(&lang, vec![]).unwrap();
        let one = empty.assert_facts(&lang, &[GroundFact::atom("C", &[])]).unwrap();
        let b = batch([&build_graph(&empty, &lang), &build_graph(&one, &lang)]).unwrap();
        let mut tape = Tape::new();
        let g = enc.aggregate_nullary(&mut tape, &store, &b).unwrap();
        let g = tape.value(g).clone();
        assert!(row(&g, 0).iter().all(|&v| v == 0.0));
        // A single nullary fact gets softmax weight 1.
        let mut t2 = Tape::new();
        let kc = t2.constant(store.value(enc.tables.predicates).slice_rows(3..4));
        let phi2 = enc.nullary.value.forward(&mut t2, &store, kc).unwrap();
        assert!(Tensor::row(&row(&g, 1)).max_abs_diff(t2.value(phi2)) < 1e-15);
    }

    #[test]
    fn duplicate_nullary_embeddings_average_to_one_value() {
        // Two nullary facts with equal embeddings: C and a second batch
        // member built from the same predicate are pooled to φ2(k).
        let lang = fixtures::rich_language();
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &lang, 4, 0, &mut fixtures::rng(5));
        let w = lang.predicate_id("W").unwrap();
        let c = lang.predicate_id("C").unwrap();
        // make W's embedding equal to C's so W=1 and C embed identically
        let c_row = store.value(enc.tables.predicates).row_slice(c).to_vec();
        let table = store.value_mut(enc.tables.predicates);
        table.data[w * 4..w * 4 + 4].copy_from_slice(&c_row);
        let db = StateDb::new(&lang, vec![])
            .unwrap()
            .assert_facts(&lang, &[GroundFact::atom("C", &[]), GroundFact::function("W", &[], 1.0)])
            .unwrap();
        let b = batch([&build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let g = enc.aggregate_nullary(&mut tape, &store, &b).unwrap();
        let kc = tape.constant(Tensor::row(&c_row));
        let phi2 = enc.nullary.value.forward(&mut tape, &store, kc).unwrap();
        assert!(tape.value(g).max_abs_diff(tape.value(phi2)) < 1e-12);
    }

    #[test]
    fn objects_start_from_type_embeddings() {
        let (lang, store, enc) = setup(4, 0, 3);
        let db = StateDb::new(&lang, vec![ObjectRef::new("a", "X"), ObjectRef::new("b", "X")]).unwrap();
        let b = batch([&build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let g = enc.aggregate_nullary(&mut tape, &store, &b).unwrap();
        let h = enc.encode_objects(&mut tape, &store, &b, g);
        let h = tape.value(h);
        assert_eq!(row(h, 0), row(store.value(enc.tables.types), 0));
        assert_eq!(row(h, 0), row(h, 1));

        let fig = batch([&build_graph(&fixtures::figure_state(&lang), &lang)]).unwrap();
        let mut tape = Tape::new();
        let g = enc.aggregate_nullary(&mut tape, &store, &fig).unwrap();
        let h = enc.encode_objects(&mut tape, &store, &fig, g);
        let expected: Vec<f64> = row(store.value(enc.tables.types), 0)
            .iter()
            .zip(tape.value(g).row_slice(0))
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(row(tape.value(h), 0), expected);
    }

    #[test]
    fn position_rows() {
        let (lang, store, enc) = setup(4, 0, 4);
        let b = batch([&build_graph(&fixtures::figure_state(&lang), &lang)]).unwrap();
        let mut tape = Tape::new();
        let e = enc.encode_positions(&mut tape, &store, &b);
        let e = tape.value(e);
        let table = store.value(enc.tables.positions);
        assert_eq!(row(e, 0), row(table, 0));
        // Q(x1, y1): the edge to y1 carries position 1.
        assert_eq!(row(e, 2), row(table, 1));
        assert_eq!(row(e, 1), row(e, 0));
    }

    #[test]
    fn zero_weights_keep_factors_and_zero_objects() {
        let (lang, mut store, enc) = setup(4, 1, 5);
        for name in ["factor_to_object", "object_to_factor", "object_update", "factor_update"] {
            for suffix in ["w", "b"] {
                let id = store.id(&format!("mp0.{name}.{suffix}")).unwrap();
                store.value_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let b = batch([&build_graph(&fixtures::figure_state(&lang), &lang)]).unwrap();
        let mut tape = Tape::new();
        let k0 = enc.encode_factors(&mut tape, &store, &b);
        let out = enc.encode(&mut tape, &store, &b).unwrap();
        assert_eq!(tape.value(out.k), tape.value(k0));
        assert!(tape.value(out.h).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_object_sees_zero_fill() {
        let (lang, store, enc) = setup(4, 1, 6);
        let db = StateDb::new(&lang, vec![ObjectRef::new("lonely", "Y")]).unwrap();
        let b = batch([&build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let out = enc.encode(&mut tape, &store, &b).unwrap();
        let mut t2 = Tape::new();
        let mut input = store.value(enc.tables.types).row_slice(1).to_vec();
        input.extend([0.0; 4]);
        let x = t2.constant(Tensor::row(&input));
        let y = enc.layers[0].object_update.forward(&mut t2, &store, x).unwrap();
        assert!(tape.value(out.h).max_abs_diff(t2.value(y)) < 1e-15);
    }

    /// Message passing on a 2-object, 1-factor graph with D = 2, computed
    /// step by step with plain arithmetic.
    #[test]
    fn hand_computed_toy_step() {
        let (lang, mut store, enc) = setup(2, 1, 7);
        let set = |store: &mut ParamStore, name: &str, data: Vec<f64>| {
            let id = store.id(name).unwrap();
            let t = store.value_mut(id);
            assert_eq!(t.len(), data.len(), "{name}");
            t.data = data;
        };
        // E_P (7 predicates), E_T (X, Y), E_N (2 positions)
        set(&mut store, "embed.predicate", vec![0.0, 0.0, 0.3, -0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        set(&mut store, "embed.type", vec![0.5, 0.1, -0.4, 0.2]);
        set(&mut store, "embed.position", vec![0.05, -0.05, 0.15, 0.25]);
        set(&mut store, "mp0.factor_to_object.w", vec![0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.2, -0.3]);
        set(&mut store, "mp0.factor_to_object.b", vec![0.01, -0.02]);
        set(&mut store, "mp0.object_update.w", vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, -0.5, 0.25]);
        set(&mut store, "mp0.object_update.b", vec![0.0, 0.1]);
        set(&mut store, "mp0.object_to_factor.w", vec![0.2, 0.1, 0.0, 0.3, 0.4, -0.2, -0.1, 0.5, 0.1, 0.0, 0.2, 0.3]);
        set(&mut store, "mp0.object_to_factor.b", vec![0.0, 0.05]);
        set(&mut store, "mp0.factor_update.w", vec![0.3, 0.0, 1.0, 0.0, 0.0, 0.3, 0.0, 1.0]);
        set(&mut store, "mp0.factor_update.b", vec![-0.1, 0.1]);
        let db = StateDb::new(&lang, vec![ObjectRef::new("x", "X"), ObjectRef::new("y", "Y")])
            .unwrap()
            .assert_facts(&lang, &[GroundFact::atom("Q", &["x", "y"])])
            .unwrap();
        let b = batch([&build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let out = enc.encode(&mut tape, &store, &b).unwrap();

        let t = f64::tanh;
        let k = [0.3, -0.2];
        let hx = [0.5, 0.1];
        let hy = [-0.4, 0.2];
        // m_v->u = tanh(W [h_u; k] + b) with W rows [0.1 0.2 0.3 0.4], [-0.1 0 0.2 -0.3]
        let msg = |h: [f64; 2]| {
            [
                t(0.1 * h[0] + 0.2 * h[1] + 0.3 * k[0] + 0.4 * k[1] + 0.01),
                t(-0.1 * h[0] + 0.0 * h[1] + 0.2 * k[0] - 0.3 * k[1] - 0.02),
            ]
        };
        let upd = |h: [f64; 2], m: [f64; 2]| {
            [
                t(1.0 * h[0] + 0.0 * h[1] + 0.5 * m[0] + 0.5 * m[1]),
                t(0.0 * h[0] + 1.0 * h[1] - 0.5 * m[0] + 0.25 * m[1] + 0.1),
            ]
        };
        let hx1 = upd(hx, msg(hx));
        let hy1 = upd(hy, msg(hy));
        let back = |h: [f64; 2], e: [f64; 2]| {
            [
                t(0.2 * k[0] + 0.1 * k[1] + 0.0 * h[0] + 0.3 * h[1] + 0.4 * e[0] - 0.2 * e[1]),
                t(-0.1 * k[0] + 0.5 * k[1] + 0.1 * h[0] + 0.0 * h[1] + 0.2 * e[0] + 0.3 * e[1] + 0.05),
            ]
        };
        let mx = back(hx1, [0.05, -0.05]);
        let my = back(hy1, [0.15, 0.25]);
        let agg = [mx[0].max(my[0]), mx[1].max(my[1])];
        let k1 = [
            k[0] + t(0.3 * k[0] + 1.0 * agg[0] - 0.1),
            k[1] + t(0.3 * k[1] + 1.0 * agg[1] + 0.1),
        ];
        let h_expected = Tensor::from_rows(&[hx1.to_vec(), hy1.to_vec()]);
        assert!(tape.value(out.h).max_abs_diff(&h_expected) < 1e-14);
        assert!(tape.value(out.k).max_abs_diff(&Tensor::row(&k1)) < 1e-14);
    }

    #[test]
    fn empty_graph_encodes() {
        let (lang, store, enc) = setup(4, 2, 8);
        let db = StateDb::new(&lang, vec![]).unwrap();
        let b = batch([&build_graph(&db, &lang)]).unwrap();
        let mut tape = Tape::new();
        let out = enc.encode(&mut tape, &store, &b).unwrap();
        assert_eq!(tape.shape(out.h), [0, 4]);
        assert_eq!(tape.shape(out.k), [0, 4]);
    }
}
