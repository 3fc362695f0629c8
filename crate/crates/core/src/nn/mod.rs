//! Minimal differentiable substrate: dense tensors, a reverse-mode tape,
//! affine blocks, a parameter store with Amsgrad, and checkpoints.

pub mod checkpoint;
mod layers;
mod params;
mod tape;
mod tensor;

pub use layers::{Activation, MlpBlock, Part};
pub use params::{Param, ParamId, ParamStore, BETA1, BETA2, EPSILON};
pub use tape::{GatherPart, Index, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Masked, max-shifted softmax of a single vector. Masked entries get
/// probability 0.
pub fn softmax(x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask of length {} for {} logits",
                m.len(),
                x.len()
            )));
        }
        if !m.iter().any(|&b| b) {
            return Err(Error::AllMasked);
        }
    }
    if x.is_empty() {
        return Err(Error::AllMasked);
    }
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::row(x));
    let y = tape.softmax_rows(v, mask);
    Ok(tape.value(y).data.clone())
}

/// Per-segment elementwise maximum of the rows of `values`; empty segments
/// are zero.
pub fn segment_max(values: &Tensor, segment_of: &[usize], num_segments: usize) -> Result<Tensor> {
    if segment_of.len() != values.rows {
        return Err(Error::ShapeMismatch(format!(
            "{} segment ids for {} rows",
            segment_of.len(),
            values.rows
        )));
    }
    if let Some(&index) = segment_of.iter().find(|&&s| s >= num_segments) {
        return Err(Error::BadSegmentIndex {
            index,
            num_segments,
        });
    }
    let mut tape = Tape::new();
    let v = tape.constant(values.clone());
    let y = tape.segment_max(v, segment_of, num_segments);
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], None).unwrap(), [0.5, 0.5]);
        let p = softmax(&[0.0, 0.0, 0.0], Some(&[true, true, false])).unwrap();
        assert_eq!(&p[..2], &[0.5, 0.5]);
        assert!(p[2] < 1e-9);
        assert_eq!(softmax(&[1000.0, 1000.0], None).unwrap(), [0.5, 0.5]);
        assert!(matches!(softmax(&[1.0], Some(&[false])), Err(Error::AllMasked)));
    }

    #[test]
    fn segment_max_examples() {
        let v = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]);
        assert_eq!(segment_max(&v, &[0, 0], 1).unwrap().data, [3.0, 5.0]);
        assert_eq!(segment_max(&v, &[0, 0], 2).unwrap().data, [3.0, 5.0, 0.0, 0.0]);
        assert!(matches!(
            segment_max(&v, &[0, 2], 2),
            Err(Error::BadSegmentIndex { index: 2, num_segments: 2 })
        ));
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(
            x in proptest::collection::vec(-50.0f64..50.0, 1..12),
            seed in any::<u64>(),
        ) {
            let mask: Vec<bool> = (0..x.len()).map(|i| i == 0 || (seed >> (i % 64)) & 1 == 1).collect();
            let p = softmax(&x, Some(&mask)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (pi, m) in p.iter().zip(&mask) {
                prop_assert!(*pi >= 0.0);
                if !m { prop_assert_eq!(*pi, 0.0); }
            }
        }

        #[test]
        fn segment_max_dominates_members(
            rows in proptest::collection::vec((0usize..4, -10.0f64..10.0, -10.0f64..10.0), 1..20),
        ) {
            let seg: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let v = Tensor::from_rows(&rows.iter().map(|r| vec![r.1, r.2]).collect::<Vec<_>>());
            let m = segment_max(&v, &seg, 4).unwrap();
            for (i, &s) in seg.iter().enumerate() {
                prop_assert!(m.get(s, 0) >= v.get(i, 0));
                prop_assert!(m.get(s, 1) >= v.get(i, 1));
            }
        }
    }
}
