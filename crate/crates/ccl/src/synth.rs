//! Procedural multi-domain segmentation benchmark.
//!
//! Scenes are a handful of rectangles, ellipses and triangles over a
//! background, with class identity carried by color. Domains share the
//! scene distribution and differ only in a global LAB affine plus mild
//! pixel noise, so color-statistics translation is a faithful bridge and
//! every domain has ground-truth labels for its evaluation split.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DomainSample, ImageTensor, LabelMap, MultiDomainDataset};
use crate::seeding;
use crate::style;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least 2 styles (source plus one target), got {0}")]
    TooFewStyles(usize),
    #[error("style {style} provides {got} class colors, spec needs {need}")]
    WrongColorCount { style: usize, got: usize, need: usize },
    #[error("split sizes must be positive")]
    EmptySizes,
    #[error("scene spec invalid: {0}")]
    BadSpec(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Scene layout parameters shared by every domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { num_classes: 5, shapes_min: 3, shapes_max: 8, height: 64, width: 64 }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(SynthError::BadSpec("num_classes must be in 2..=254"));
        }
        if self.shapes_min < 1 || self.shapes_max < self.shapes_min {
            return Err(SynthError::BadSpec("shape count range is empty"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(SynthError::BadSpec("image size must be at least 8x8"));
        }
        Ok(())
    }
}

/// Per-domain appearance: class base colors, a global LAB affine, and
/// pixel noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainStyle {
    pub class_colors: Vec<[f64; 3]>,
    pub lab_shift: [f64; 3],
    pub lab_scale: [f64; 3],
    pub noise_sigma: f64,
}

/// Images per split, applied to every domain of its kind.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub source_train: usize,
    pub target_train: usize,
    pub target_eval: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { source_train: 200, target_train: 100, target_eval: 50 }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.42, 0.45, 0.40], // background: gray-green
    [0.75, 0.22, 0.18], // red
    [0.20, 0.42, 0.78], // blue
    [0.88, 0.78, 0.25], // yellow
    [0.55, 0.28, 0.62], // purple
    [0.20, 0.65, 0.45], // green
    [0.85, 0.50, 0.20], // orange
    [0.45, 0.70, 0.75], // cyan
];

const DOMAIN_AFFINES: [([f64; 3], [f64; 3]); 6] = [
    ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
    ([8.0, 26.0, -22.0], [1.12, 0.70, 1.30]),
    ([-12.0, 30.0, 28.0], [0.85, 0.60, 0.60]),
    ([14.0, -24.0, -16.0], [1.05, 1.25, 1.20]),
    ([-14.0, 18.0, 18.0], [0.92, 0.72, 1.15]),
    ([4.0, -14.0, 26.0], [1.18, 1.10, 0.78]),
];

/// Default styles for `num_styles` domains (index 0 = source): shared
/// class colors, one LAB affine per domain, noise sigma 0.02.
pub fn default_styles(num_styles: usize, num_classes: usize) -> Vec<DomainStyle> {
    let colors: Vec<[f64; 3]> =
        (0..num_classes).map(|c| PALETTE[c % PALETTE.len()]).collect();
    (0..num_styles)
        .map(|d| {
            let (lab_shift, lab_scale) = DOMAIN_AFFINES[d % DOMAIN_AFFINES.len()];
            DomainStyle { class_colors: colors.clone(), lab_shift, lab_scale, noise_sigma: 0.02 }
        })
        .collect()
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
    Triangle,
}

struct Shape {
    kind: ShapeKind,
    class: u8,
    // Rect/ellipse: center and half extents. Triangle: three vertices.
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    tri: [(f64, f64); 3],
}

fn sample_shape(rng: &mut ChaCha8Rng, spec: &SceneSpec, class: u8) -> Shape {
    let s = spec.height.min(spec.width) as f64;
    let kind = match rng.gen_range(0..3u8) {
        0 => ShapeKind::Rect,
        1 => ShapeKind::Ellipse,
        _ => ShapeKind::Triangle,
    };
    let cx = rng.gen_range(0.1..0.9) * spec.width as f64;
    let cy = rng.gen_range(0.1..0.9) * spec.height as f64;
    let rx = rng.gen_range(0.06..0.18) * s;
    let ry = rng.gen_range(0.06..0.18) * s;
    let mut tri = [(0.0, 0.0); 3];
    for v in &mut tri {
        *v = (cx + rng.gen_range(-0.2..0.2) * s, cy + rng.gen_range(-0.2..0.2) * s);
    }
    Shape { kind, class, cx, cy, rx, ry, tri }
}

fn tri_sign(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (p.0 - b.0) * (a.1 - b.1) - (a.0 - b.0) * (p.1 - b.1)
}

fn draw_shape(labels: &mut Array2<u8>, shape: &Shape) {
    let (h, w) = labels.dim();
    match shape.kind {
        ShapeKind::Rect => {
            let y0 = (shape.cy - shape.ry).max(0.0) as usize;
            let y1 = ((shape.cy + shape.ry) as usize).min(h - 1);
            let x0 = (shape.cx - shape.rx).max(0.0) as usize;
            let x1 = ((shape.cx + shape.rx) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    labels[(y, x)] = shape.class;
                }
            }
        }
        ShapeKind::Ellipse => {
            let y0 = (shape.cy - shape.ry).max(0.0) as usize;
            let y1 = ((shape.cy + shape.ry) as usize).min(h - 1);
            let x0 = (shape.cx - shape.rx).max(0.0) as usize;
            let x1 = ((shape.cx + shape.rx) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let dy = (y as f64 + 0.5 - shape.cy) / shape.ry;
                    let dx = (x as f64 + 0.5 - shape.cx) / shape.rx;
                    if dx * dx + dy * dy <= 1.0 {
                        labels[(y, x)] = shape.class;
                    }
                }
            }
        }
        ShapeKind::Triangle => {
            let [a, b, c] = shape.tri;
            let xs = [a.0, b.0, c.0];
            let ys = [a.1, b.1, c.1];
            let x0 = xs.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0) as usize;
            let x1 = (xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as usize).min(w - 1);
            let y0 = ys.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0) as usize;
            let y1 = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let d1 = tri_sign(p, a, b);
                    let d2 = tri_sign(p, b, c);
                    let d3 = tri_sign(p, c, a);
                    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                    if !(has_neg && has_pos) {
                        labels[(y, x)] = shape.class;
                    }
                }
            }
        }
    }
}

/// Standard normal via Box-Muller, driven by the scene RNG.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Render one scene. Class geometry comes from the spec, appearance from
/// the style. `force_class` paints one guaranteed-visible shape of that
/// class last.
#[allow(clippy::too_many_arguments)]
fn render_scene(
    spec: &SceneSpec,
    domain_style: &DomainStyle,
    seed: u64,
    domain: usize,
    split_code: u64,
    index: usize,
    nonce: u64,
    force_class: Option<u8>,
) -> (ImageTensor, LabelMap) {
    let key = (index as u64) * 1024 + nonce;
    let mut rng = seeding::rng(seed, "scene", (domain as u64) * 8 + split_code, key);
    let (h, w) = (spec.height, spec.width);
    let mut labels = Array2::<u8>::zeros((h, w));

    let n = rng.gen_range(spec.shapes_min..=spec.shapes_max);
    for j in 0..n {
        let class = match force_class {
            Some(c) if j == n - 1 => c,
            _ => rng.gen_range(1..spec.num_classes as u8),
        };
        let shape = sample_shape(&mut rng, spec, class);
        draw_shape(&mut labels, &shape);
    }

    let mut img = Array3::<f64>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let base = domain_style.class_colors[labels[(y, x)] as usize];
            for c in 0..3 {
                let v = base[c] + domain_style.noise_sigma * gauss(&mut rng);
                img[(y, x, c)] = v.clamp(0.0, 1.0);
            }
        }
    }

    // Global LAB affine, then back to RGB on the 8-bit grid so the
    // in-memory dataset matches its PNG round trip bit for bit.
    for y in 0..h {
        for x in 0..w {
            let lab = style::rgb_to_lab_pixel([img[(y, x, 0)], img[(y, x, 1)], img[(y, x, 2)]]);
            let moved = [
                lab[0] * domain_style.lab_scale[0] + domain_style.lab_shift[0],
                lab[1] * domain_style.lab_scale[1] + domain_style.lab_shift[1],
                lab[2] * domain_style.lab_scale[2] + domain_style.lab_shift[2],
            ];
            let rgb = style::lab_to_rgb_pixel(moved);
            for c in 0..3 {
                img[(y, x, c)] = (rgb[c] * 255.0).round() / 255.0;
            }
        }
    }

    let image = ImageTensor::new(img).expect("rendered pixels are clamped");
    let labels = LabelMap::new(labels, spec.num_classes).expect("classes are valid");
    (image, labels)
}

/// Render with deterministic retries until the background keeps at least
/// one pixel.
#[allow(clippy::too_many_arguments)]
fn render_valid(
    spec: &SceneSpec,
    style_: &DomainStyle,
    seed: u64,
    domain: usize,
    split_code: u64,
    index: usize,
    base_nonce: u64,
    force_class: Option<u8>,
) -> (ImageTensor, LabelMap) {
    for nonce in base_nonce..base_nonce + 64 {
        let (img, lab) = render_scene(spec, style_, seed, domain, split_code, index, nonce, force_class);
        let bg_ok = lab.data().iter().any(|&v| v == 0);
        let forced_ok = force_class.is_none_or(|c| lab.data().iter().any(|&v| v == c));
        if bg_ok && forced_ok {
            return (img, lab);
        }
    }
    unreachable!("scene retry budget exhausted; shape area bounds keep this unreachable")
}

fn generate_split(
    spec: &SceneSpec,
    style_: &DomainStyle,
    seed: u64,
    domain: usize,
    split_code: u64,
    count: usize,
) -> Vec<(ImageTensor, LabelMap)> {
    let mut out: Vec<(ImageTensor, LabelMap)> = (0..count)
        .map(|i| render_valid(spec, style_, seed, domain, split_code, i, 0, None))
        .collect();

    // Every class must appear somewhere in the split; re-render a chosen
    // image with a forced shape for any class that is missing.
    for class in 1..spec.num_classes as u8 {
        let present = out.iter().any(|(_, l)| l.data().iter().any(|&v| v == class));
        if !present {
            let idx = (class as usize - 1) % count;
            out[idx] =
                render_valid(spec, style_, seed, domain, split_code, idx, 1, Some(class));
        }
    }
    out
}

/// Per-split generation spec, serializable as the `generate` CLI input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSpec {
    #[serde(default)]
    pub scene: SceneSpec,
    /// One style per domain, source first. Empty means default styles for
    /// `num_targets` + 1 domains.
    #[serde(default)]
    pub styles: Vec<DomainStyle>,
    #[serde(default = "default_num_targets")]
    pub num_targets: usize,
    #[serde(default)]
    pub sizes: SplitSizes,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_num_targets() -> usize {
    2
}

fn default_seed() -> u64 {
    1
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            styles: Vec::new(),
            num_targets: 2,
            sizes: SplitSizes::default(),
            seed: 1,
        }
    }
}

impl GenerateSpec {
    /// Styles to use: explicit ones, or defaults sized to `num_targets`.
    pub fn resolved_styles(&self) -> Vec<DomainStyle> {
        if self.styles.is_empty() {
            default_styles(self.num_targets + 1, self.scene.num_classes)
        } else {
            self.styles.clone()
        }
    }
}

/// Generate the benchmark: domain 0 labeled, domains 1..M with unlabeled
/// train splits and labeled eval splits. Identical seeds reproduce the
/// dataset bit-exactly.
pub fn generate_benchmark(
    spec: &SceneSpec,
    styles: &[DomainStyle],
    sizes: &SplitSizes,
    seed: u64,
) -> Result<MultiDomainDataset, SynthError> {
    spec.validate()?;
    if styles.len() < 2 {
        return Err(SynthError::TooFewStyles(styles.len()));
    }
    if sizes.source_train == 0 || sizes.target_train == 0 || sizes.target_eval == 0 {
        return Err(SynthError::EmptySizes);
    }
    for (i, s) in styles.iter().enumerate() {
        if s.class_colors.len() < spec.num_classes {
            return Err(SynthError::WrongColorCount {
                style: i,
                got: s.class_colors.len(),
                need: spec.num_classes,
            });
        }
    }
    let m = styles.len() - 1;

    let source = generate_split(spec, &styles[0], seed, 0, 0, sizes.source_train)
        .into_iter()
        .map(|(image, label)| DomainSample { image, label: Some(label), domain_id: 0 })
        .collect();

    let mut targets = Vec::with_capacity(m);
    let mut evals = Vec::with_capacity(m);
    for d in 1..=m {
        let train = generate_split(spec, &styles[d], seed, d, 0, sizes.target_train)
            .into_iter()
            .map(|(image, _)| DomainSample { image, label: None, domain_id: d })
            .collect();
        let eval = generate_split(spec, &styles[d], seed, d, 1, sizes.target_eval)
            .into_iter()
            .map(|(image, label)| DomainSample { image, label: Some(label), domain_id: d })
            .collect();
        targets.push(train);
        evals.push(eval);
    }

    Ok(MultiDomainDataset::new(source, targets, evals, spec.num_classes)?)
}
