//! Fully-convolutional patch discriminator over probability maps:
//! three stride-2 convs with leaky ReLU (slope 0.2) and a conv head
//! producing a pre-sigmoid score map.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::ops::{
    conv_backward, conv_forward, hwc_to_chw, leaky_relu, leaky_relu_backward, ConvSpec,
};
use super::params::{init_stack, stack_offsets, stack_param_len, ParamVector};
use super::NetError;
use crate::data::ProbMap;
use crate::seeding;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Number of classes in the probability maps it scores.
    pub in_channels: usize,
    pub base_width: usize,
}

impl DiscriminatorConfig {
    pub fn new(in_channels: usize, base_width: usize) -> Result<Self, NetError> {
        if base_width < 4 {
            return Err(NetError::BadConfig("base_width must be at least 4"));
        }
        if in_channels < 2 {
            return Err(NetError::BadConfig("need at least 2 input channels"));
        }
        Ok(Self { in_channels, base_width })
    }
}

#[derive(Debug)]
pub struct DiscCache {
    input: Array3<f64>,
    acts: Vec<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<ConvSpec>,
    offsets: Vec<usize>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Self {
        let w = cfg.base_width;
        let layers = vec![
            ConvSpec::new(cfg.in_channels, w, 3, 2, 1),
            ConvSpec::new(w, 2 * w, 3, 2, 1),
            ConvSpec::new(2 * w, 4 * w, 3, 2, 1),
            ConvSpec::new(4 * w, 1, 3, 1, 1),
        ];
        let offsets = stack_offsets(&layers);
        Self { cfg, layers, offsets }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn param_len(&self) -> usize {
        stack_param_len(&self.layers)
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        init_stack(&self.layers, &mut seeding::rng(seed, "disc-init", 0, 0))
    }

    /// Forward on a (C, H, W) probability map; returns the pre-sigmoid
    /// score map as (1, h, w) plus the cache.
    pub fn forward_cached(
        &self,
        params: &ParamVector,
        prob_chw: &Array3<f64>,
    ) -> (Array3<f64>, DiscCache) {
        assert_eq!(params.len(), self.param_len(), "parameter vector length mismatch");
        let p = params.as_slice();
        let mut acts = Vec::with_capacity(3);
        let mut x = prob_chw.clone();
        for i in 0..3 {
            x = leaky_relu(&conv_forward(&x, p, self.offsets[i], &self.layers[i]), LEAKY_SLOPE);
            acts.push(x.clone());
        }
        let score = conv_forward(&x, p, self.offsets[3], &self.layers[3]);
        (score, DiscCache { input: prob_chw.clone(), acts })
    }

    /// Backward from dL/dscore; returns (parameter gradient, dL/dinput).
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &DiscCache,
        dscore: &Array3<f64>,
    ) -> (Vec<f64>, Array3<f64>) {
        let p = params.as_slice();
        let mut grad = vec![0.0; self.param_len()];
        let mut dx = conv_backward(&cache.acts[2], p, &mut grad, self.offsets[3], &self.layers[3], dscore);
        for i in (0..3).rev() {
            let dpre = leaky_relu_backward(&cache.acts[i], &dx, LEAKY_SLOPE);
            let input = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
            dx = conv_backward(input, p, &mut grad, self.offsets[i], &self.layers[i], &dpre);
        }
        (grad, dx)
    }

    /// Public forward on a probability map, returning the (h, w) score map.
    pub fn forward(&self, params: &ParamVector, prob: &ProbMap) -> ndarray::Array2<f64> {
        let chw = hwc_to_chw(prob.data());
        let (score, _) = self.forward_cached(params, &chw);
        let (_, h, w) = score.dim();
        score.into_shape_with_order((h, w)).expect("single channel")
    }
}
