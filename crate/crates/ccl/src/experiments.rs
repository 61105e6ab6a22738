//! Ablation experiments: run the consistency / distillation / weight-reg
//! toggle grid over a shared dataset and seed list, and lay the results
//! out as a table.
//!
//! Every grid row reuses the same dataset and the same seeds, so row
//! differences are attributable to the loss toggles alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::MultiDomainDataset;
use crate::losses::LossWeights;
use crate::trainer::{train, TrainConfig, TrainError, TrainMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("ablation grid is empty")]
    EmptyGrid,
    #[error("ablation grid rows must be unique; row {0} repeats")]
    DuplicateRow(usize),
    #[error("need at least one seed")]
    NoSeeds,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One ablation row: which of the three optional losses are enabled.
/// Enabled terms use the lambda values of the base config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggle {
    pub cl: bool,
    pub okd: bool,
    pub wr: bool,
}

/// The full 2^3 toggle grid, baseline first, consistency-off block before
/// the consistency-on block.
pub fn full_grid() -> Vec<AblationToggle> {
    let mut rows = Vec::with_capacity(8);
    for cl in [false, true] {
        for (okd, wr) in [(false, false), (true, false), (false, true), (true, true)] {
            rows.push(AblationToggle { cl, okd, wr });
        }
    }
    rows
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

/// An ablation experiment: base train config, toggle grid, seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "full_grid")]
    pub grid: Vec<AblationToggle>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self { train: TrainConfig::default(), grid: full_grid(), seeds: default_seeds() }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.grid.is_empty() {
            return Err(ExperimentError::EmptyGrid);
        }
        for (i, row) in self.grid.iter().enumerate() {
            if self.grid[..i].contains(row) {
                return Err(ExperimentError::DuplicateRow(i));
            }
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::NoSeeds);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowResult {
    pub model: usize,
    pub toggle: AblationToggle,
    /// Student mIoU per seed, then per target domain.
    pub per_seed: Vec<Vec<f64>>,
    /// Mean over seeds, per target domain.
    pub mean: Vec<f64>,
    /// Population standard deviation over seeds, per target domain.
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub num_targets: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<RowResult>,
}

/// Final-step student mIoU per target for one training run.
fn student_mious(
    ds: &MultiDomainDataset,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let run = train(ds, cfg)?;
    let mut out = vec![f64::NAN; ds.num_targets()];
    for rec in run.history.iter().filter(|h| h.step == cfg.iterations && h.role == "student") {
        out[rec.domain_id - 1] = rec.miou;
    }
    Ok(out)
}

/// Run every grid row with every seed. `progress` is called once per
/// finished run with a short status line.
pub fn run_ablation(
    ds: &MultiDomainDataset,
    spec: &ExperimentSpec,
    mut progress: impl FnMut(&str),
) -> Result<AblationResult, ExperimentError> {
    spec.validate()?;
    let m = ds.num_targets();
    let base = &spec.train;
    let mut rows = Vec::with_capacity(spec.grid.len());
    for (ri, toggle) in spec.grid.iter().enumerate() {
        let weights = LossWeights {
            lambda_adv: base.weights.lambda_adv,
            lambda_cl: if toggle.cl { base.weights.lambda_cl } else { 0.0 },
            lambda_okd: if toggle.okd { base.weights.lambda_okd } else { 0.0 },
            lambda_wr: if toggle.wr { base.weights.lambda_wr } else { 0.0 },
        };
        let mut per_seed = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let cfg =
                TrainConfig { mode: TrainMode::Ccl, weights, seed, ..base.clone() };
            let mious = student_mious(ds, &cfg)?;
            progress(&format!(
                "row {}/{} seed {}: {}",
                ri + 1,
                spec.grid.len(),
                seed,
                mious.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
            ));
            per_seed.push(mious);
        }
        let mut mean = vec![0.0; m];
        let mut sd = vec![0.0; m];
        let n = per_seed.len() as f64;
        for t in 0..m {
            let mu: f64 = per_seed.iter().map(|s| s[t]).sum::<f64>() / n;
            let var: f64 = per_seed.iter().map(|s| (s[t] - mu).powi(2)).sum::<f64>() / n;
            mean[t] = mu;
            sd[t] = var.sqrt();
        }
        rows.push(RowResult { model: ri + 1, toggle: *toggle, per_seed, mean, sd });
    }
    Ok(AblationResult { num_targets: m, seeds: spec.seeds.clone(), rows })
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        " "
    }
}

/// Aligned text table: model number, toggle columns, then mean mIoU with
/// standard deviation per target.
pub fn format_table(res: &AblationResult) -> String {
    let mut out = String::new();
    out.push_str("model  cl  okd  wr ");
    for t in 1..=res.num_targets {
        out.push_str(&format!(" | target_{t} (mean+-sd)"));
    }
    out.push('\n');
    let width = out.trim_end().len();
    out.push_str(&"-".repeat(width));
    out.push('\n');
    for row in &res.rows {
        out.push_str(&format!(
            "{:>5}   {}    {}   {} ",
            row.model,
            mark(row.toggle.cl),
            mark(row.toggle.okd),
            mark(row.toggle.wr)
        ));
        for t in 0..res.num_targets {
            out.push_str(&format!(" |   {:.4} +- {:.4}  ", row.mean[t], row.sd[t]));
        }
        out.push('\n');
    }
    out
}
