//! Flat parameter vectors with a fixed canonical layer ordering.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::ConvSpec;

/// A flat view of a model's trainable weights. Two models built from the
/// same config share length and ordering, so L1 distances between them are
/// well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sum of absolute coordinate differences.
    pub fn l1_distance(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "parameter vectors must match in length");
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Total parameter count of a conv stack.
pub fn stack_param_len(layers: &[ConvSpec]) -> usize {
    layers.iter().map(ConvSpec::param_len).sum()
}

/// Byte offsets of each layer inside the flat vector, in layer order.
pub fn stack_offsets(layers: &[ConvSpec]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for l in layers {
        offsets.push(off);
        off += l.param_len();
    }
    offsets
}

/// He-style fan-in scaled uniform init: weights in
/// [-sqrt(6/fan_in), sqrt(6/fan_in)], biases zero.
pub fn init_stack(layers: &[ConvSpec], rng: &mut ChaCha8Rng) -> ParamVector {
    let mut values = Vec::with_capacity(stack_param_len(layers));
    for l in layers {
        let bound = l.init_bound();
        for _ in 0..l.weight_len() {
            values.push(rng.gen_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, l.cout));
    }
    ParamVector { values }
}
