use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{GatherPart, Index, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Single affine layer `activation(W·x + b)` with `W: [out x in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpBlock {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

/// One input slice of [`MlpBlock::forward_parts`]. When `index` is set the
/// rows of the projected part are gathered by it.
pub struct Part {
    pub x: Var,
    pub index: Option<Index>,
}

impl Part {
    pub fn rows(x: Var) -> Self {
        Self { x, index: None }
    }

    pub fn gathered(x: Var, index: Index) -> Self {
        Self {
            x,
            index: Some(index),
        }
    }
}

impl MlpBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(&format!("{name}.w"), output, input, rng);
        let bias = store.add_zeros(&format!("{name}.b"), 1, output);
        Self {
            weight,
            bias,
            input,
            output,
            activation,
        }
    }

    /// Applies the block to each row of `x: [n x in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_parts(tape, store, vec![Part::rows(x)])
    }

    /// Applies the block to the row-wise concatenation of `parts`, where
    /// each part may first be gathered. The weight is split by columns, so
    /// each part is projected once before gathering.
    pub fn forward_parts(&self, tape: &mut Tape, store: &ParamStore, parts: Vec<Part>) -> Result<Var> {
        let width: usize = parts.iter().map(|p| tape.shape(p.x)[1]).sum();
        if width != self.input {
            return Err(Error::ShapeMismatch(format!(
                "block expects {} input columns, got {width}",
                self.input
            )));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let mut offset = 0;
        let mut projected = Vec::with_capacity(parts.len());
        for part in parts {
            let cols = tape.shape(part.x)[1];
            let y = tape.linear(part.x, w, offset);
            offset += cols;
            projected.push(GatherPart {
                x: y,
                index: part.index,
            });
        }
        let pre = tape.gather_sum(projected, Some(b));
        Ok(match self.activation {
            Activation::Tanh => tape.tanh(pre),
            Activation::Identity => pre,
        })
    }
}
