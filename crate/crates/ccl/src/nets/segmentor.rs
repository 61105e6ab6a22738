//! Small encoder-decoder segmentation network.
//!
//! conv + ReLU stem, `depth` strided-conv downsampling stages, a mirrored
//! decoder with nearest-neighbor upsampling and additive skip connections,
//! and a 1x1 classifier head. ReLU everywhere, no normalization layers, so
//! finite-difference gradient checks stay clean.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::ops::{
    chw_to_hwc, conv_backward, conv_forward, hwc_to_chw, relu, relu_backward, upsample2,
    upsample2_backward, ConvSpec,
};
use super::params::{init_stack, stack_offsets, stack_param_len, ParamVector};
use super::NetError;
use crate::data::ImageTensor;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentorConfig {
    pub num_classes: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl SegmentorConfig {
    pub fn new(num_classes: usize, base_width: usize, depth: usize) -> Result<Self, NetError> {
        if base_width < 4 {
            return Err(NetError::BadConfig("base_width must be at least 4"));
        }
        if depth < 1 {
            return Err(NetError::BadConfig("depth must be at least 1"));
        }
        if num_classes < 2 {
            return Err(NetError::BadConfig("need at least 2 classes"));
        }
        Ok(Self { num_classes, base_width, depth })
    }

    /// Spec defaults: width 16, depth 3.
    pub fn with_defaults(num_classes: usize) -> Self {
        Self { num_classes, base_width: 16, depth: 3 }
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug)]
pub struct SegCache {
    input: Array3<f64>,
    /// Post-ReLU encoder outputs e_0 (stem) .. e_depth (bottleneck).
    enc: Vec<Array3<f64>>,
    /// Upsampled decoder conv inputs, one per decoder level.
    dec_in: Vec<Array3<f64>>,
    /// Post-ReLU decoder outputs, one per decoder level.
    dec: Vec<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct Segmentor {
    cfg: SegmentorConfig,
    layers: Vec<ConvSpec>,
    offsets: Vec<usize>,
}

impl Segmentor {
    pub fn new(cfg: SegmentorConfig) -> Self {
        let w = cfg.base_width;
        let mut layers = vec![ConvSpec::new(3, w, 3, 1, 1)];
        for d in 0..cfg.depth {
            layers.push(ConvSpec::new(w << d, w << (d + 1), 3, 2, 1));
        }
        for l in (0..cfg.depth).rev() {
            layers.push(ConvSpec::new(w << (l + 1), w << l, 3, 1, 1));
        }
        layers.push(ConvSpec::new(w, cfg.num_classes, 1, 1, 0));
        let offsets = stack_offsets(&layers);
        Self { cfg, layers, offsets }
    }

    pub fn config(&self) -> &SegmentorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    pub fn param_len(&self) -> usize {
        stack_param_len(&self.layers)
    }

    /// Deterministic He-uniform init from a seed.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        init_stack(&self.layers, &mut seeding::rng(seed, "segmentor-init", 0, 0))
    }

    fn check_size(&self, h: usize, w: usize) -> Result<(), NetError> {
        let div = 1usize << self.cfg.depth;
        if !h.is_multiple_of(div) || !w.is_multiple_of(div) {
            return Err(NetError::IndivisibleSize { h, w, div });
        }
        Ok(())
    }

    /// Forward on a (3, H, W) input, returning logits (C, H, W) and the
    /// activation cache.
    pub fn forward_cached(
        &self,
        params: &ParamVector,
        input: &Array3<f64>,
    ) -> Result<(Array3<f64>, SegCache), NetError> {
        assert_eq!(params.len(), self.param_len(), "parameter vector length mismatch");
        let (_, h, w) = input.dim();
        self.check_size(h, w)?;
        let p = params.as_slice();
        let depth = self.cfg.depth;

        let mut enc = Vec::with_capacity(depth + 1);
        let stem = relu(&conv_forward(input, p, self.offsets[0], &self.layers[0]));
        enc.push(stem);
        for d in 0..depth {
            let li = 1 + d;
            let out = relu(&conv_forward(&enc[d], p, self.offsets[li], &self.layers[li]));
            enc.push(out);
        }

        let mut dec_in = Vec::with_capacity(depth);
        let mut dec = Vec::with_capacity(depth);
        let mut x = enc[depth].clone();
        for (i, l) in (0..depth).rev().enumerate() {
            let li = 1 + depth + i;
            let up = upsample2(&x);
            let mut v = conv_forward(&up, p, self.offsets[li], &self.layers[li]);
            v += &enc[l];
            x = relu(&v);
            dec_in.push(up);
            dec.push(x.clone());
        }

        let head = self.layers.len() - 1;
        let logits = conv_forward(&x, p, self.offsets[head], &self.layers[head]);
        Ok((logits, SegCache { input: input.clone(), enc, dec_in, dec }))
    }

    /// Backward from dL/dlogits, returning the flat parameter gradient.
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &SegCache,
        dlogits: &Array3<f64>,
    ) -> Vec<f64> {
        let p = params.as_slice();
        let mut grad = vec![0.0; self.param_len()];
        let depth = self.cfg.depth;
        let head = self.layers.len() - 1;

        let d_last = &cache.dec[depth - 1];
        let mut dx = conv_backward(d_last, p, &mut grad, self.offsets[head], &self.layers[head], dlogits);

        // Decoder levels in reverse forward order; skip gradients feed the
        // matching encoder activations.
        let mut denc: Vec<Option<Array3<f64>>> = vec![None; depth + 1];
        for i in (0..depth).rev() {
            let l = depth - 1 - i;
            let li = 1 + depth + i;
            let dpre = relu_backward(&cache.dec[i], &dx);
            match &mut denc[l] {
                Some(g) => *g += &dpre,
                None => denc[l] = Some(dpre.clone()),
            }
            let dup = conv_backward(
                &cache.dec_in[i],
                p,
                &mut grad,
                self.offsets[li],
                &self.layers[li],
                &dpre,
            );
            dx = upsample2_backward(&dup);
        }
        denc[depth] = Some(dx);

        for d in (0..depth).rev() {
            let li = 1 + d;
            let dout = denc[d + 1].take().expect("encoder grad");
            let dpre = relu_backward(&cache.enc[d + 1], &dout);
            let dprev = conv_backward(&cache.enc[d], p, &mut grad, self.offsets[li], &self.layers[li], &dpre);
            match &mut denc[d] {
                Some(g) => *g += &dprev,
                None => denc[d] = Some(dprev),
            }
        }

        let dstem = denc[0].take().expect("stem grad");
        let dpre = relu_backward(&cache.enc[0], &dstem);
        conv_backward(&cache.input, p, &mut grad, self.offsets[0], &self.layers[0], &dpre);
        grad
    }

    /// Public forward on an image, returning (H, W, C) logits.
    pub fn forward(&self, params: &ParamVector, image: &ImageTensor) -> Result<Array3<f64>, NetError> {
        let chw = hwc_to_chw(image.data());
        let (logits, _) = self.forward_cached(params, &chw)?;
        Ok(chw_to_hwc(&logits))
    }
}
