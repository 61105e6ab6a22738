//! The training loop: M experts with per-expert discriminators, one
//! student with its own discriminator, optimized jointly online, plus the
//! three baseline modes (source-only, data combination, per-target
//! individual models).
//!
//! One `ccl` step: (a) translate every image to every target style,
//! (b) forward all experts on styled inputs and native targets,
//! (c) discriminator gradients on detached maps, (d) expert generator
//! gradients (seg + adversarial + consistency), (e) student forward on
//! raw images with its own discriminator plus distillation from the
//! experts, (f) weight-regularizer gradients, (g) SGD updates for
//! segmentors under the polynomial schedule and Adam updates for
//! discriminators, experts first, then the student.

pub mod checkpoint;
pub mod optim;
pub mod steps;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{adam_step, poly_lr, sgd_step, AdamState, SgdState, ADAM_EPS};
pub use steps::{
    compute_domain_stats, expert_step_math, forward_batch, image_batch_chw,
    prepare_expert_inputs, source_only_math, student_step_math, DomainStats, ExpertInputs,
    ExpertStepOut, ExpertTerms, Forwarded, StudentStepOut, StudentTerms,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batches_for_step, DataError, MultiDomainDataset};
use crate::losses::{self, LossError, LossWeights};
use crate::metrics::{ConfusionMatrix, EvalRecord, MetricsError};
use crate::nets::{
    Discriminator, DiscriminatorConfig, NetError, ParamVector, Segmentor, SegmentorConfig,
};
use crate::seeding;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss term '{term}' at step {step}")]
    NonFinite { term: String, step: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Ccl,
    SourceOnly,
    DataCombination,
    Individual,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Ccl => "ccl",
            TrainMode::SourceOnly => "source_only",
            TrainMode::DataCombination => "data_combination",
            TrainMode::Individual => "individual",
        };
        f.write_str(s)
    }
}

fn d_targets() -> usize {
    2
}
fn d_iterations() -> usize {
    2000
}
fn d_batch() -> usize {
    2
}
fn d_seg_lr() -> f64 {
    2.5e-4
}
fn d_seg_momentum() -> f64 {
    0.9
}
fn d_seg_wd() -> f64 {
    5e-4
}
fn d_disc_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.99
}
fn d_poly_power() -> f64 {
    0.9
}
fn d_seed() -> u64 {
    1
}
fn d_eval_every() -> usize {
    200
}
fn d_base_width() -> usize {
    16
}
fn d_depth() -> usize {
    3
}
fn d_disc_width() -> usize {
    16
}
fn d_mode() -> TrainMode {
    TrainMode::Ccl
}

/// Full training configuration; the JSON config file mirrors these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of target domains M.
    pub targets: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub seg_lr: f64,
    pub seg_momentum: f64,
    pub seg_weight_decay: f64,
    pub disc_lr: f64,
    pub disc_beta1: f64,
    pub disc_beta2: f64,
    pub poly_power: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// When set, the weight regularizer pulls only the experts toward the
    /// student and leaves the student fixed in that term.
    pub wr_stop_student: bool,
    pub mode: TrainMode,
    pub eval_every: usize,
    pub base_width: usize,
    pub depth: usize,
    pub disc_base_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            targets: d_targets(),
            iterations: d_iterations(),
            batch_size: d_batch(),
            seg_lr: d_seg_lr(),
            seg_momentum: d_seg_momentum(),
            seg_weight_decay: d_seg_wd(),
            disc_lr: d_disc_lr(),
            disc_beta1: d_beta1(),
            disc_beta2: d_beta2(),
            poly_power: d_poly_power(),
            weights: LossWeights::default(),
            seed: d_seed(),
            wr_stop_student: false,
            mode: d_mode(),
            eval_every: d_eval_every(),
            base_width: d_base_width(),
            depth: d_depth(),
            disc_base_width: d_disc_width(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations < 1 {
            return Err(TrainError::Config("iterations must be at least 1".into()));
        }
        if self.targets < 1 {
            return Err(TrainError::Config("need at least one target domain".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.seg_lr <= 0.0 || self.disc_lr <= 0.0 {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        self.weights.validate().map_err(|e| TrainError::Config(e.into()))?;
        Ok(())
    }
}

/// A segmentor with its SGD state.
#[derive(Debug, Clone)]
pub struct SegUnit {
    pub params: ParamVector,
    pub opt: SgdState,
}

/// A discriminator with its Adam state.
#[derive(Debug, Clone)]
pub struct DiscUnit {
    pub params: ParamVector,
    pub opt: AdamState,
}

/// One adversarial adaptation unit: segmentor plus discriminator.
#[derive(Debug, Clone)]
pub struct PairUnit {
    pub seg: SegUnit,
    pub disc: DiscUnit,
}

#[derive(Debug, Clone)]
pub enum ModelSet {
    Ccl { experts: Vec<PairUnit>, student: SegUnit, student_disc: DiscUnit },
    SourceOnly { model: SegUnit },
    DataCombination { pair: PairUnit },
    Individual { pairs: Vec<PairUnit> },
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub models: ModelSet,
    pub step: usize,
}

/// Network shapes shared by every model in a run.
pub struct Nets {
    pub seg: Segmentor,
    pub disc: Discriminator,
}

pub fn build_nets(cfg: &TrainConfig, num_classes: usize) -> Result<Nets, TrainError> {
    let seg = Segmentor::new(SegmentorConfig::new(num_classes, cfg.base_width, cfg.depth)?);
    let disc = Discriminator::new(DiscriminatorConfig::new(num_classes, cfg.disc_base_width)?);
    Ok(Nets { seg, disc })
}

fn seg_unit(nets: &Nets, seed: u64, tag: &str, idx: u64) -> SegUnit {
    let params = nets.seg.init_params(seeding::derive_seed(seed, tag, idx, 0));
    let opt = SgdState::new(params.len());
    SegUnit { params, opt }
}

fn disc_unit(nets: &Nets, seed: u64, tag: &str, idx: u64) -> DiscUnit {
    let params = nets.disc.init_params(seeding::derive_seed(seed, tag, idx, 0));
    let opt = AdamState::new(params.len());
    DiscUnit { params, opt }
}

/// Fresh state for the configured mode. Model inits are derived from the
/// run seed by role, so the same role gets the same init in every mode.
pub fn init_state(cfg: &TrainConfig, nets: &Nets) -> TrainState {
    let models = match cfg.mode {
        TrainMode::Ccl => ModelSet::Ccl {
            experts: (1..=cfg.targets)
                .map(|m| PairUnit {
                    seg: seg_unit(nets, cfg.seed, "expert", m as u64),
                    disc: disc_unit(nets, cfg.seed, "disc", m as u64),
                })
                .collect(),
            student: seg_unit(nets, cfg.seed, "student", 0),
            student_disc: disc_unit(nets, cfg.seed, "disc_student", 0),
        },
        TrainMode::SourceOnly => {
            ModelSet::SourceOnly { model: seg_unit(nets, cfg.seed, "student", 0) }
        }
        TrainMode::DataCombination => ModelSet::DataCombination {
            pair: PairUnit {
                seg: seg_unit(nets, cfg.seed, "student", 0),
                disc: disc_unit(nets, cfg.seed, "disc_student", 0),
            },
        },
        TrainMode::Individual => ModelSet::Individual {
            pairs: (1..=cfg.targets)
                .map(|m| PairUnit {
                    seg: seg_unit(nets, cfg.seed, "expert", m as u64),
                    disc: disc_unit(nets, cfg.seed, "disc", m as u64),
                })
                .collect(),
        },
    };
    TrainState { models, step: 0 }
}

/// Every scalar of one optimization step, in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub terms: Vec<(String, f64)>,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn check_finite(&self) -> Result<(), TrainError> {
        for (name, v) in &self.terms {
            if !v.is_finite() {
                return Err(TrainError::NonFinite { term: name.clone(), step: self.step });
            }
        }
        Ok(())
    }
}

fn scale_add(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += scale * b;
    }
}

/// One full collaborative step on `state` (must be `ModelSet::Ccl`).
pub fn ccl_step(
    state: &mut TrainState,
    nets: &Nets,
    ds: &MultiDomainDataset,
    stats: &DomainStats,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    let ModelSet::Ccl { experts, student, student_disc } = &mut state.models else {
        return Err(TrainError::Config("ccl_step needs ccl-mode state".into()));
    };
    let m_count = experts.len();
    let batches = batches_for_step(ds, cfg.batch_size, cfg.seed, state.step);
    let src_chw = image_batch_chw(&batches.source.images);
    let tgt_chw: Vec<Vec<ndarray::Array3<f64>>> =
        batches.targets.iter().map(|tb| image_batch_chw(&tb.images)).collect();

    // Native forwards of every expert on its own target batch; these are
    // the detached teachers for consistency and distillation.
    let native_fwd: Vec<Vec<Forwarded>> = experts
        .iter()
        .enumerate()
        .map(|(i, e)| forward_batch(&nets.seg, &e.seg.params, &tgt_chw[i]))
        .collect::<Result<_, _>>()?;

    let mut expert_outs: Vec<ExpertStepOut> = Vec::with_capacity(m_count);
    for m in 1..=m_count {
        let inputs = prepare_expert_inputs(m, &batches, stats);
        let teachers: Vec<(usize, Vec<crate::data::ProbMap>)> = inputs
            .restyled_others
            .iter()
            .map(|(n, _)| (*n, native_fwd[n - 1].iter().map(|f| f.prob.clone()).collect()))
            .collect();
        let e = &experts[m - 1];
        expert_outs.push(expert_step_math(
            &nets.seg,
            &nets.disc,
            &e.seg.params,
            &e.disc.params,
            &inputs,
            &native_fwd[m - 1],
            &teachers,
            &cfg.weights,
        )?);
    }

    let student_teachers: Vec<Vec<crate::data::ProbMap>> = native_fwd
        .iter()
        .map(|fw| fw.iter().map(|f| f.prob.clone()).collect())
        .collect();
    let mut student_out = student_step_math(
        &nets.seg,
        &nets.disc,
        &student.params,
        &student_disc.params,
        &src_chw,
        &batches.source.labels,
        &tgt_chw,
        Some(&student_teachers),
        &cfg.weights,
    )?;

    // Weight regularizer pulls experts and student together.
    let expert_params: Vec<&ParamVector> = experts.iter().map(|e| &e.seg.params).collect();
    let (wr, wr_eg, wr_sg) = losses::weight_reg_grad(&expert_params, &student.params)?;
    if cfg.weights.lambda_wr != 0.0 {
        for (out, eg) in expert_outs.iter_mut().zip(&wr_eg) {
            scale_add(&mut out.seg_grad, eg, cfg.weights.lambda_wr);
        }
        if !cfg.wr_stop_student {
            scale_add(&mut student_out.seg_grad, &wr_sg, cfg.weights.lambda_wr);
        }
    }

    let pooled = losses::pooled_expert_objective(
        &expert_outs.iter().map(|o| (o.terms.seg, o.terms.adv_g, o.terms.cl)).collect::<Vec<_>>(),
        &cfg.weights,
    );
    let total = losses::total_objective(pooled, student_out.terms.objective, wr, &cfg.weights);

    let mut terms = Vec::new();
    for (i, out) in expert_outs.iter().enumerate() {
        let m = i + 1;
        terms.push((format!("expert{m}/seg"), out.terms.seg));
        terms.push((format!("expert{m}/adv_g"), out.terms.adv_g));
        terms.push((format!("expert{m}/adv_d"), out.terms.adv_d));
        terms.push((format!("expert{m}/cl"), out.terms.cl));
        terms.push((format!("expert{m}/objective"), out.terms.objective));
    }
    terms.push(("student/seg".into(), student_out.terms.seg));
    terms.push(("student/adv_g".into(), student_out.terms.adv_g));
    terms.push(("student/adv_d".into(), student_out.terms.adv_d));
    terms.push(("student/okd".into(), student_out.terms.okd));
    terms.push(("student/objective".into(), student_out.terms.objective));
    terms.push(("wr".into(), wr));
    terms.push(("expert/pooled".into(), pooled));
    terms.push(("total".into(), total));
    let report = LossReport { step: state.step, terms };
    report.check_finite()?;

    // Synchronized update phase, deterministic order: experts 1..M, then
    // the student, then the discriminators.
    let lr = poly_lr(state.step, cfg.iterations, cfg.seg_lr, cfg.poly_power);
    for (e, out) in experts.iter_mut().zip(&expert_outs) {
        sgd_step(
            &mut e.seg.params,
            &out.seg_grad,
            lr,
            cfg.seg_momentum,
            cfg.seg_weight_decay,
            &mut e.seg.opt,
        );
    }
    sgd_step(
        &mut student.params,
        &student_out.seg_grad,
        lr,
        cfg.seg_momentum,
        cfg.seg_weight_decay,
        &mut student.opt,
    );
    for (e, out) in experts.iter_mut().zip(&expert_outs) {
        adam_step(
            &mut e.disc.params,
            &out.disc_grad,
            cfg.disc_lr,
            cfg.disc_beta1,
            cfg.disc_beta2,
            &mut e.disc.opt,
        );
    }
    adam_step(
        &mut student_disc.params,
        &student_out.disc_grad,
        cfg.disc_lr,
        cfg.disc_beta1,
        cfg.disc_beta2,
        &mut student_disc.opt,
    );

    state.step += 1;
    Ok(report)
}

/// One step of a single-target adversarial adaptation pair (used by the
/// individual and data-combination baselines). `translate_source` styles
/// the source batch to the target's statistics first.
#[allow(clippy::too_many_arguments)]
fn pair_step(
    pair: &mut PairUnit,
    nets: &Nets,
    view: &MultiDomainDataset,
    stats: &DomainStats,
    translate_source: bool,
    step: usize,
    cfg: &TrainConfig,
    prefix: &str,
) -> Result<Vec<(String, f64)>, TrainError> {
    let batches = batches_for_step(view, cfg.batch_size, cfg.seed, step);
    let styled_source = if translate_source {
        prepare_expert_inputs(1, &batches, stats).styled_source
    } else {
        image_batch_chw(&batches.source.images)
    };
    let inputs = ExpertInputs {
        styled_source,
        source_labels: batches.source.labels.clone(),
        restyled_others: Vec::new(),
    };
    let native = forward_batch(&nets.seg, &pair.seg.params, &image_batch_chw(&batches.targets[0].images))?;
    let out = expert_step_math(
        &nets.seg,
        &nets.disc,
        &pair.seg.params,
        &pair.disc.params,
        &inputs,
        &native,
        &[],
        &cfg.weights,
    )?;

    let terms = vec![
        (format!("{prefix}/seg"), out.terms.seg),
        (format!("{prefix}/adv_g"), out.terms.adv_g),
        (format!("{prefix}/adv_d"), out.terms.adv_d),
        (format!("{prefix}/objective"), out.terms.objective),
    ];

    let lr = poly_lr(step, cfg.iterations, cfg.seg_lr, cfg.poly_power);
    sgd_step(
        &mut pair.seg.params,
        &out.seg_grad,
        lr,
        cfg.seg_momentum,
        cfg.seg_weight_decay,
        &mut pair.seg.opt,
    );
    adam_step(
        &mut pair.disc.params,
        &out.disc_grad,
        cfg.disc_lr,
        cfg.disc_beta1,
        cfg.disc_beta2,
        &mut pair.disc.opt,
    );
    Ok(terms)
}

/// Per-mode auxiliary data a run needs besides the dataset itself.
pub struct RunContext {
    pub stats: DomainStats,
    /// Individual mode: one single-target view per target domain, with the
    /// style stats of that (source, target) pair.
    pub individual: Vec<(MultiDomainDataset, DomainStats)>,
    /// Data-combination mode: all targets pooled into one domain.
    pub combined: Option<MultiDomainDataset>,
}

pub fn build_context(ds: &MultiDomainDataset, cfg: &TrainConfig) -> RunContext {
    let stats = compute_domain_stats(ds);
    let individual = if cfg.mode == TrainMode::Individual {
        (1..=ds.num_targets())
            .map(|m| {
                let view = ds.single_target_view(m);
                let vstats = DomainStats {
                    stats: vec![stats.stats[0].clone(), stats.stats[m].clone()],
                };
                (view, vstats)
            })
            .collect()
    } else {
        Vec::new()
    };
    let combined = if cfg.mode == TrainMode::DataCombination {
        Some(ds.combined_target_view())
    } else {
        None
    };
    RunContext { stats, individual, combined }
}

/// Advance one optimization step in whatever mode the state is in.
pub fn train_step(
    state: &mut TrainState,
    nets: &Nets,
    ds: &MultiDomainDataset,
    ctx: &RunContext,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    match &mut state.models {
        ModelSet::Ccl { .. } => ccl_step(state, nets, ds, &ctx.stats, cfg),
        ModelSet::SourceOnly { model } => {
            let batches = batches_for_step(ds, cfg.batch_size, cfg.seed, state.step);
            let src = image_batch_chw(&batches.source.images);
            let (seg, grad) = source_only_math(&nets.seg, &model.params, &src, &batches.source.labels)?;
            let report = LossReport {
                step: state.step,
                terms: vec![("student/seg".into(), seg), ("student/objective".into(), seg)],
            };
            report.check_finite()?;
            let lr = poly_lr(state.step, cfg.iterations, cfg.seg_lr, cfg.poly_power);
            sgd_step(
                &mut model.params,
                &grad,
                lr,
                cfg.seg_momentum,
                cfg.seg_weight_decay,
                &mut model.opt,
            );
            state.step += 1;
            Ok(report)
        }
        ModelSet::DataCombination { pair } => {
            let view = ctx.combined.as_ref().expect("combined view built for dc mode");
            let terms =
                pair_step(pair, nets, view, &ctx.stats, false, state.step, cfg, "student")?;
            let report = LossReport { step: state.step, terms };
            report.check_finite()?;
            state.step += 1;
            Ok(report)
        }
        ModelSet::Individual { pairs } => {
            let mut terms = Vec::new();
            for (i, pair) in pairs.iter_mut().enumerate() {
                let (view, vstats) = &ctx.individual[i];
                let prefix = format!("expert{}", i + 1);
                terms.extend(pair_step(
                    pair, nets, view, vstats, true, state.step, cfg, &prefix,
                )?);
            }
            let report = LossReport { step: state.step, terms };
            report.check_finite()?;
            state.step += 1;
            Ok(report)
        }
    }
}

/// mIoU of one segmentor over one labeled split.
pub fn eval_segmentor(
    seg: &Segmentor,
    params: &ParamVector,
    split: &[crate::data::DomainSample],
    num_classes: usize,
) -> Result<crate::metrics::MiouResult, TrainError> {
    let mut cm = ConfusionMatrix::new(num_classes);
    for s in split {
        let logits = seg.forward(params, &s.image)?;
        let pred = steps::argmax_labels(&logits);
        cm.accumulate(&pred, s.label.as_ref().expect("eval split is labeled"))?;
    }
    Ok(cm.miou()?)
}

/// Evaluate the state's models on every target eval split. The student
/// (or the single baseline model in its role) is scored on every target;
/// per-target experts are scored on their own target.
pub fn evaluate(
    state: &TrainState,
    nets: &Nets,
    ds: &MultiDomainDataset,
) -> Result<Vec<EvalRecord>, TrainError> {
    let c = ds.num_classes();
    let mut records = Vec::new();
    let push = |role: &str, params: &ParamVector, m: usize, recs: &mut Vec<EvalRecord>| -> Result<(), TrainError> {
        let r = eval_segmentor(&nets.seg, params, ds.eval_split(m), c)?;
        recs.push(EvalRecord {
            step: state.step,
            domain_id: m,
            role: role.to_string(),
            per_class_iou: r.per_class,
            miou: r.mean,
        });
        Ok(())
    };
    match &state.models {
        ModelSet::Ccl { experts, student, .. } => {
            for m in 1..=ds.num_targets() {
                push("student", &student.params, m, &mut records)?;
            }
            for (i, e) in experts.iter().enumerate() {
                push(&format!("expert_{}", i + 1), &e.seg.params, i + 1, &mut records)?;
            }
        }
        ModelSet::SourceOnly { model } => {
            for m in 1..=ds.num_targets() {
                push("student", &model.params, m, &mut records)?;
            }
        }
        ModelSet::DataCombination { pair } => {
            for m in 1..=ds.num_targets() {
                push("student", &pair.seg.params, m, &mut records)?;
            }
        }
        ModelSet::Individual { pairs } => {
            for (i, p) in pairs.iter().enumerate() {
                push(&format!("expert_{}", i + 1), &p.seg.params, i + 1, &mut records)?;
            }
        }
    }
    Ok(records)
}

/// A finished (or resumed-then-finished) run.
pub struct TrainRun {
    pub state: TrainState,
    pub history: Vec<EvalRecord>,
    pub reports: Vec<LossReport>,
}

/// Run `cfg.iterations` steps from a fresh state, evaluating every
/// `eval_every` steps and at the end.
pub fn train(ds: &MultiDomainDataset, cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    let nets = build_nets(cfg, ds.num_classes())?;
    let state = init_state(cfg, &nets);
    train_from(state, ds, cfg, &nets)
}

/// Continue a run from an existing state until `cfg.iterations`.
pub fn train_from(
    mut state: TrainState,
    ds: &MultiDomainDataset,
    cfg: &TrainConfig,
    nets: &Nets,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if cfg.mode == TrainMode::Ccl && ds.num_targets() != cfg.targets {
        return Err(TrainError::Config(format!(
            "config expects {} targets, dataset has {}",
            cfg.targets,
            ds.num_targets()
        )));
    }
    if cfg.batch_size > ds.source().len() {
        return Err(TrainError::Config("batch_size exceeds source split size".into()));
    }
    for m in 1..=ds.num_targets() {
        if cfg.batch_size > ds.target_train(m).len() {
            return Err(TrainError::Config(format!(
                "batch_size exceeds target {m} train split size"
            )));
        }
    }

    let ctx = build_context(ds, cfg);
    let mut history = Vec::new();
    let mut reports = Vec::with_capacity(cfg.iterations.saturating_sub(state.step));
    while state.step < cfg.iterations {
        let report = train_step(&mut state, nets, ds, &ctx, cfg)?;
        reports.push(report);
        if state.step.is_multiple_of(cfg.eval_every) && state.step < cfg.iterations {
            history.extend(evaluate(&state, nets, ds)?);
        }
    }
    history.extend(evaluate(&state, nets, ds)?);
    Ok(TrainRun { state, history, reports })
}
