//! Shared domain types: images, label maps, probability maps, and the
//! multi-domain dataset binding one labeled source split to M unlabeled
//! target streams plus labeled evaluation splits.

mod batch;
mod disk;

pub use batch::{batches_for_step, BatchIterator, SourceBatch, StepBatches, TargetBatch};
pub use disk::{
    load_dataset, read_image_png, save_dataset, write_image_png, DatasetManifest, DiskError,
    DomainEntry, SplitEntry,
};

use ndarray::{Array2, Array3};
use thiserror::Error;

/// Sentinel label excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Minimum image side accepted by the segmentor.
pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {height}x{width}")]
    ImageTooSmall { height: usize, width: usize },
    #[error("image value {value} at ({y},{x},{c}) outside [0,1]")]
    ValueOutOfRange { y: usize, x: usize, c: usize, value: f64 },
    #[error("label {label} at ({y},{x}) is not a class index < {num_classes} or IGNORE")]
    InvalidLabel { y: usize, x: usize, label: u8, num_classes: usize },
    #[error("probability map pixel ({y},{x}) sums to {sum}, expected 1 within {tol}")]
    ProbNotNormalized { y: usize, x: usize, sum: f64, tol: f64 },
    #[error("probability {value} at ({y},{x},{c}) outside [0,1]")]
    ProbOutOfRange { y: usize, x: usize, c: usize, value: f64 },
    #[error("shape mismatch: {context} ({a_h}x{a_w} vs {b_h}x{b_w})")]
    ShapeMismatch { context: &'static str, a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("dataset needs at least one target domain")]
    NoTargets,
    #[error("{split} split of domain {domain} is empty")]
    EmptySplit { domain: usize, split: &'static str },
    #[error("source sample {index} is missing its label")]
    MissingSourceLabel { index: usize },
    #[error("target train sample {index} of domain {domain} carries a label")]
    LabeledTargetTrain { domain: usize, index: usize },
    #[error("eval sample {index} of domain {domain} is missing its label")]
    MissingEvalLabel { domain: usize, index: usize },
    #[error("sample {index} of domain {domain} has size {h}x{w}, dataset uses {exp_h}x{exp_w}")]
    InconsistentSize { domain: usize, index: usize, h: usize, w: usize, exp_h: usize, exp_w: usize },
    #[error("domain id {got} does not match expected {expected}")]
    WrongDomainId { got: usize, expected: usize },
    #[error("batch_size {batch_size} exceeds size {len} of {split} split of domain {domain}")]
    BatchTooLarge { batch_size: usize, len: usize, split: &'static str, domain: usize },
    #[error("batch_size must be positive")]
    ZeroBatch,
}

/// An H x W x 3 color image with channel values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self, DataError> {
        let (h, w, c) = data.dim();
        assert_eq!(c, 3, "ImageTensor must have exactly 3 channels");
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(DataError::ImageTooSmall { height: h, width: w });
        }
        for ((y, x, ch), &v) in data.indexed_iter() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DataError::ValueOutOfRange { y, x, c: ch, value: v });
            }
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Channel values quantized to the 8-bit grid, matching PNG storage.
    pub fn quantize_u8(&self) -> Self {
        let data = self.data.mapv(|v| (v * 255.0).round() / 255.0);
        Self { data }
    }
}

/// An H x W map of class indices with `IGNORE_LABEL` as the ignore value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    data: Array2<u8>,
}

impl LabelMap {
    pub fn new(data: Array2<u8>, num_classes: usize) -> Result<Self, DataError> {
        assert!(num_classes > 0 && num_classes <= IGNORE_LABEL as usize);
        for ((y, x), &l) in data.indexed_iter() {
            if l != IGNORE_LABEL && (l as usize) >= num_classes {
                return Err(DataError::InvalidLabel { y, x, label: l, num_classes });
            }
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[(y, x)]
    }
}

/// An H x W x C per-pixel class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    data: Array3<f64>,
}

/// Per-pixel probability sums must land within this of 1.
pub const PROB_SUM_TOL: f64 = 1e-5;

impl ProbMap {
    pub fn new(data: Array3<f64>) -> Result<Self, DataError> {
        let (h, w, _c) = data.dim();
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0;
                for (c, &v) in data.slice(ndarray::s![y, x, ..]).iter().enumerate() {
                    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                        return Err(DataError::ProbOutOfRange { y, x, c, value: v });
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(DataError::ProbNotNormalized { y, x, sum, tol: PROB_SUM_TOL });
                }
            }
        }
        Ok(Self { data })
    }

    /// Wrap a softmax output without re-validating. The softmax in
    /// `nets::ops` normalizes exactly, so the check would be redundant on
    /// the training hot path.
    pub fn from_softmax(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Per-pixel argmax as a label map.
    pub fn argmax(&self) -> LabelMap {
        let (h, w, c) = self.data.dim();
        let mut out = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let mut best = 0usize;
                let mut best_v = self.data[(y, x, 0)];
                for k in 1..c {
                    let v = self.data[(y, x, k)];
                    if v > best_v {
                        best_v = v;
                        best = k;
                    }
                }
                out[(y, x)] = best as u8;
            }
        }
        LabelMap { data: out }
    }
}

/// One image with its domain id; labels only where the domain provides them.
#[derive(Debug, Clone)]
pub struct DomainSample {
    pub image: ImageTensor,
    pub label: Option<LabelMap>,
    pub domain_id: usize,
}

/// Labeled source split, M unlabeled target train splits, and M labeled
/// target evaluation splits, all sharing one class vocabulary.
#[derive(Debug, Clone)]
pub struct MultiDomainDataset {
    source: Vec<DomainSample>,
    targets: Vec<Vec<DomainSample>>,
    eval_splits: Vec<Vec<DomainSample>>,
    num_classes: usize,
    height: usize,
    width: usize,
}

impl MultiDomainDataset {
    pub fn new(
        source: Vec<DomainSample>,
        targets: Vec<Vec<DomainSample>>,
        eval_splits: Vec<Vec<DomainSample>>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if targets.is_empty() {
            return Err(DataError::NoTargets);
        }
        assert_eq!(targets.len(), eval_splits.len(), "one eval split per target domain");
        if source.is_empty() {
            return Err(DataError::EmptySplit { domain: 0, split: "train" });
        }
        let height = source[0].image.height();
        let width = source[0].image.width();

        let check_size = |s: &DomainSample, domain: usize, index: usize| {
            let (h, w) = (s.image.height(), s.image.width());
            if h != height || w != width {
                return Err(DataError::InconsistentSize {
                    domain,
                    index,
                    h,
                    w,
                    exp_h: height,
                    exp_w: width,
                });
            }
            if let Some(l) = &s.label {
                if l.height() != h || l.width() != w {
                    return Err(DataError::ShapeMismatch {
                        context: "label vs image",
                        a_h: l.height(),
                        a_w: l.width(),
                        b_h: h,
                        b_w: w,
                    });
                }
            }
            Ok(())
        };

        for (i, s) in source.iter().enumerate() {
            if s.domain_id != 0 {
                return Err(DataError::WrongDomainId { got: s.domain_id, expected: 0 });
            }
            if s.label.is_none() {
                return Err(DataError::MissingSourceLabel { index: i });
            }
            check_size(s, 0, i)?;
        }
        for (m, split) in targets.iter().enumerate() {
            let domain = m + 1;
            if split.is_empty() {
                return Err(DataError::EmptySplit { domain, split: "train" });
            }
            for (i, s) in split.iter().enumerate() {
                if s.domain_id != domain {
                    return Err(DataError::WrongDomainId { got: s.domain_id, expected: domain });
                }
                if s.label.is_some() {
                    return Err(DataError::LabeledTargetTrain { domain, index: i });
                }
                check_size(s, domain, i)?;
            }
        }
        for (m, split) in eval_splits.iter().enumerate() {
            let domain = m + 1;
            if split.is_empty() {
                return Err(DataError::EmptySplit { domain, split: "eval" });
            }
            for (i, s) in split.iter().enumerate() {
                if s.domain_id != domain {
                    return Err(DataError::WrongDomainId { got: s.domain_id, expected: domain });
                }
                if s.label.is_none() {
                    return Err(DataError::MissingEvalLabel { domain, index: i });
                }
                check_size(s, domain, i)?;
            }
        }

        Ok(Self { source, targets, eval_splits, num_classes, height, width })
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn source(&self) -> &[DomainSample] {
        &self.source
    }

    /// Unlabeled train split of target `m` (1-based domain index).
    pub fn target_train(&self, m: usize) -> &[DomainSample] {
        &self.targets[m - 1]
    }

    /// Labeled evaluation split of target `m` (1-based domain index).
    pub fn eval_split(&self, m: usize) -> &[DomainSample] {
        &self.eval_splits[m - 1]
    }

    /// Dataset view with a single target domain, renumbered to domain 1.
    /// Used by the per-target baseline trainers.
    pub fn single_target_view(&self, m: usize) -> MultiDomainDataset {
        let renum = |s: &DomainSample| DomainSample {
            image: s.image.clone(),
            label: s.label.clone(),
            domain_id: 1,
        };
        MultiDomainDataset {
            source: self.source.clone(),
            targets: vec![self.targets[m - 1].iter().map(renum).collect()],
            eval_splits: vec![self.eval_splits[m - 1].iter().map(renum).collect()],
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
        }
    }

    /// Dataset view where all target train splits are pooled into one
    /// domain (the "data combination" baseline). Eval splits stay separate
    /// so per-target metrics remain reportable; they are renumbered into
    /// the merged domain for validation purposes.
    pub fn combined_target_view(&self) -> MultiDomainDataset {
        let mut merged = Vec::new();
        for split in &self.targets {
            for s in split {
                merged.push(DomainSample {
                    image: s.image.clone(),
                    label: None,
                    domain_id: 1,
                });
            }
        }
        let eval: Vec<DomainSample> = self
            .eval_splits
            .iter()
            .flat_map(|split| split.iter())
            .map(|s| DomainSample { image: s.image.clone(), label: s.label.clone(), domain_id: 1 })
            .collect();
        MultiDomainDataset {
            source: self.source.clone(),
            targets: vec![merged],
            eval_splits: vec![eval],
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
        }
    }
}
