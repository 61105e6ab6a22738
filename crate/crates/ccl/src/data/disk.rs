//! On-disk dataset layout.
//!
//! One directory per domain, images as 8-bit RGB PNG, labels as
//! single-channel PNG of class indices, and a JSON manifest listing
//! splits, class count, and the number of target domains.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DomainSample, ImageTensor, LabelMap, MultiDomainDataset};

#[derive(Debug, Error)]
pub enum DiskError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("image error on {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Data(#[from] super::DataError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub count: usize,
    pub labeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainEntry {
    pub id: usize,
    pub dir: String,
    pub train: SplitEntry,
    #[serde(default)]
    pub eval: Option<SplitEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub num_targets: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Echo of the generation spec, when the dataset was generated.
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
    pub domains: Vec<DomainEntry>,
}

fn write_image(path: &Path, img: &ImageTensor) -> Result<(), DiskError> {
    let (h, w) = (img.height(), img.width());
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (img.data()[(y, x, 0)] * 255.0).round() as u8,
                (img.data()[(y, x, 1)] * 255.0).round() as u8,
                (img.data()[(y, x, 2)] * 255.0).round() as u8,
            ];
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out.save(path).map_err(|source| DiskError::Image { path: path.to_path_buf(), source })
}

fn read_image(path: &Path) -> Result<ImageTensor, DiskError> {
    let img = image::open(path)
        .map_err(|source| DiskError::Image { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut data = Array3::<f64>::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(y as usize, x as usize, c)] = f64::from(px[c]) / 255.0;
        }
    }
    Ok(ImageTensor::new(data)?)
}

fn write_labels(path: &Path, labels: &LabelMap) -> Result<(), DiskError> {
    let (h, w) = (labels.height(), labels.width());
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel(x as u32, y as u32, image::Luma([labels.get(y, x)]));
        }
    }
    out.save(path).map_err(|source| DiskError::Image { path: path.to_path_buf(), source })
}

fn read_labels(path: &Path, num_classes: usize) -> Result<LabelMap, DiskError> {
    let img = image::open(path)
        .map_err(|source| DiskError::Image { path: path.to_path_buf(), source })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let mut data = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        data[(y as usize, x as usize)] = px[0];
    }
    Ok(LabelMap::new(data, num_classes)?)
}

/// Read one RGB PNG as an ImageTensor.
pub fn read_image_png(path: &Path) -> Result<ImageTensor, DiskError> {
    read_image(path)
}

/// Write one ImageTensor as an 8-bit RGB PNG.
pub fn write_image_png(path: &Path, img: &ImageTensor) -> Result<(), DiskError> {
    write_image(path, img)
}

fn split_dir(root: &Path, domain_dir: &str, split: &str) -> PathBuf {
    root.join(domain_dir).join(split)
}

fn write_split(
    dir: &Path,
    samples: &[DomainSample],
    with_labels: bool,
) -> Result<(), DiskError> {
    fs::create_dir_all(dir).map_err(|source| DiskError::Io { path: dir.to_path_buf(), source })?;
    for (i, s) in samples.iter().enumerate() {
        write_image(&dir.join(format!("img_{i:05}.png")), &s.image)?;
        if with_labels {
            let label = s.label.as_ref().expect("labeled split");
            write_labels(&dir.join(format!("lab_{i:05}.png")), label)?;
        }
    }
    Ok(())
}

fn read_split(
    dir: &Path,
    entry: &SplitEntry,
    domain_id: usize,
    num_classes: usize,
    keep_labels: bool,
) -> Result<Vec<DomainSample>, DiskError> {
    let mut out = Vec::with_capacity(entry.count);
    for i in 0..entry.count {
        let image = read_image(&dir.join(format!("img_{i:05}.png")))?;
        let label = if entry.labeled && keep_labels {
            Some(read_labels(&dir.join(format!("lab_{i:05}.png")), num_classes)?)
        } else {
            None
        };
        out.push(DomainSample { image, label, domain_id });
    }
    Ok(out)
}

/// Write a dataset plus manifest under `root`.
pub fn save_dataset(
    root: &Path,
    dataset: &MultiDomainDataset,
    seed: Option<u64>,
    generator: Option<serde_json::Value>,
) -> Result<DatasetManifest, DiskError> {
    fs::create_dir_all(root).map_err(|source| DiskError::Io { path: root.to_path_buf(), source })?;
    let mut domains = Vec::new();

    let dir0 = "domain_0".to_string();
    write_split(&split_dir(root, &dir0, "train"), dataset.source(), true)?;
    domains.push(DomainEntry {
        id: 0,
        dir: dir0,
        train: SplitEntry { count: dataset.source().len(), labeled: true },
        eval: None,
    });

    for m in 1..=dataset.num_targets() {
        let dir = format!("domain_{m}");
        write_split(&split_dir(root, &dir, "train"), dataset.target_train(m), false)?;
        write_split(&split_dir(root, &dir, "eval"), dataset.eval_split(m), true)?;
        domains.push(DomainEntry {
            id: m,
            dir,
            train: SplitEntry { count: dataset.target_train(m).len(), labeled: false },
            eval: Some(SplitEntry { count: dataset.eval_split(m).len(), labeled: true }),
        });
    }

    let manifest = DatasetManifest {
        num_classes: dataset.num_classes(),
        num_targets: dataset.num_targets(),
        height: dataset.height(),
        width: dataset.width(),
        seed,
        generator,
        domains,
    };
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DiskError::Manifest(e.to_string()))?;
    fs::write(&path, json).map_err(|source| DiskError::Io { path, source })?;
    Ok(manifest)
}

/// Load a dataset written by [`save_dataset`].
pub fn load_dataset(root: &Path) -> Result<(MultiDomainDataset, DatasetManifest), DiskError> {
    let mpath = root.join("manifest.json");
    let text = fs::read_to_string(&mpath)
        .map_err(|source| DiskError::Io { path: mpath.clone(), source })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DiskError::Manifest(e.to_string()))?;

    let src_entry = manifest
        .domains
        .iter()
        .find(|d| d.id == 0)
        .ok_or_else(|| DiskError::Manifest("missing source domain entry".into()))?;
    let source = read_split(
        &split_dir(root, &src_entry.dir, "train"),
        &src_entry.train,
        0,
        manifest.num_classes,
        true,
    )?;

    let mut targets = Vec::new();
    let mut evals = Vec::new();
    for m in 1..=manifest.num_targets {
        let entry = manifest
            .domains
            .iter()
            .find(|d| d.id == m)
            .ok_or_else(|| DiskError::Manifest(format!("missing domain entry {m}")))?;
        targets.push(read_split(
            &split_dir(root, &entry.dir, "train"),
            &entry.train,
            m,
            manifest.num_classes,
            false,
        )?);
        let eval_entry = entry
            .eval
            .as_ref()
            .ok_or_else(|| DiskError::Manifest(format!("domain {m} has no eval split")))?;
        evals.push(read_split(
            &split_dir(root, &entry.dir, "eval"),
            eval_entry,
            m,
            manifest.num_classes,
            true,
        )?);
    }

    let ds = MultiDomainDataset::new(source, targets, evals, manifest.num_classes)?;
    Ok((ds, manifest))
}
