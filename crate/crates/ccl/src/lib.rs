//! Collaborative consistency learning (CCL) for multi-target domain
//! adaptation in semantic segmentation, at desk scale.
//!
//! A labeled source domain and M unlabeled target domains are bridged by
//! LAB color-statistics translation. One expert segmentor per target is
//! trained on translated data with an adversarial alignment loss, experts
//! exchange knowledge through a KL consistency loss on restyled views, and
//! a single domain-generic student is distilled online from all experts
//! while an L1 weight regularizer pulls experts and student together.
//!
//! The crate ships a procedural multi-domain benchmark generator so the
//! whole pipeline is runnable and testable on a laptop CPU.

// Index loops over small fixed-extent tensors are the house style in the
// numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod plot;
pub mod seeding;
pub mod style;
pub mod synth;
pub mod trainer;

pub use data::{DomainSample, ImageTensor, LabelMap, MultiDomainDataset, ProbMap, IGNORE_LABEL};
pub use style::StyleStats;
