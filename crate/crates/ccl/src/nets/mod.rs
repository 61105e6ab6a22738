//! Segmentation network, patch discriminator, and their flat-parameter
//! plumbing. All experts and the student share one architecture; a
//! `ParamVector` is the canonical flat weight layout used by the
//! optimizers, the weight regularizer, and checkpoints.

pub mod discriminator;
pub mod ops;
pub mod params;
pub mod segmentor;

pub use discriminator::{DiscCache, Discriminator, DiscriminatorConfig, LEAKY_SLOPE};
pub use params::ParamVector;
pub use segmentor::{SegCache, Segmentor, SegmentorConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    BadConfig(&'static str),
    #[error("input size {h}x{w} is not divisible by 2^depth = {div}")]
    IndivisibleSize { h: usize, w: usize, div: usize },
}

/// Softmax a (C, H, W) logit tensor into a ProbMap plus the raw (C, H, W)
/// probabilities used on the training path.
pub fn prob_from_logits(
    logits_chw: &ndarray::Array3<f64>,
) -> (crate::data::ProbMap, ndarray::Array3<f64>) {
    let prob_chw = ops::softmax_chw(logits_chw);
    let hwc = ops::chw_to_hwc(&prob_chw);
    (crate::data::ProbMap::from_softmax(hwc), prob_chw)
}
