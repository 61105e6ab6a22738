//! Loss terms: supervised cross-entropy, KL divergence, the adversarial
//! generator/discriminator split, inter-expert consistency, online
//! distillation, the L1 weight regularizer, and the composite objectives.
//!
//! Each function is pure. Variants suffixed `_grad` also return the exact
//! derivative with respect to the learner-side argument; teacher-side
//! probability maps are treated as constants (no gradient flows into
//! them), matching the online-distillation convention.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelMap, ProbMap, IGNORE_LABEL};
use crate::nets::ParamVector;

/// Probabilities are clamped here before any log.
pub const PROB_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("probability map {a_h}x{a_w} does not match {b_h}x{b_w}")]
    ShapeMismatch { a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("class counts differ: {a} vs {b}")]
    ClassMismatch { a: usize, b: usize },
    #[error("all pixels are ignored; the mean segmentation loss is undefined")]
    AllIgnored,
    #[error("adversarial loss needs at least one score map per side")]
    NoTargetScores,
    #[error("expected {expected} prediction lists, got {got}")]
    ListLengthMismatch { expected: usize, got: usize },
    #[error("parameter vectors differ in length: {a} vs {b}")]
    ParamLengthMismatch { a: usize, b: usize },
    #[error("weight regularizer needs at least one expert")]
    NoExperts,
}

/// Weighting factors for the framework's loss terms. Setting a factor to
/// zero disables that term exactly (the ablation switch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cl: f64,
    pub lambda_okd: f64,
    pub lambda_wr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_adv: 1e-3, lambda_cl: 1e-3, lambda_okd: 1e-3, lambda_wr: 1e-3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [self.lambda_adv, self.lambda_cl, self.lambda_okd, self.lambda_wr];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

fn check_same_shape(p: &ProbMap, q: &ProbMap) -> Result<(), LossError> {
    if p.height() != q.height() || p.width() != q.width() {
        return Err(LossError::ShapeMismatch {
            a_h: p.height(),
            a_w: p.width(),
            b_h: q.height(),
            b_w: q.width(),
        });
    }
    if p.num_classes() != q.num_classes() {
        return Err(LossError::ClassMismatch { a: p.num_classes(), b: q.num_classes() });
    }
    Ok(())
}

/// Mean over non-ignored pixels of -log prob[pixel, label].
pub fn seg_loss(prob: &ProbMap, labels: &LabelMap) -> Result<f64, LossError> {
    Ok(seg_loss_grad(prob, labels)?.0)
}

/// Segmentation loss plus dL/dprob (H, W, C).
pub fn seg_loss_grad(prob: &ProbMap, labels: &LabelMap) -> Result<(f64, Array3<f64>), LossError> {
    if prob.height() != labels.height() || prob.width() != labels.width() {
        return Err(LossError::ShapeMismatch {
            a_h: prob.height(),
            a_w: prob.width(),
            b_h: labels.height(),
            b_w: labels.width(),
        });
    }
    let (h, w, c) = prob.data().dim();
    let mut valid = 0usize;
    for y in 0..h {
        for x in 0..w {
            if labels.get(y, x) != IGNORE_LABEL {
                valid += 1;
            }
        }
    }
    if valid == 0 {
        return Err(LossError::AllIgnored);
    }
    let mut total = 0.0;
    let mut grad = Array3::<f64>::zeros((h, w, c));
    let scale = 1.0 / valid as f64;
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x);
            if l == IGNORE_LABEL {
                continue;
            }
            let p = prob.data()[(y, x, l as usize)];
            // NaN-preserving clamp: a poisoned probability must surface
            // as a non-finite loss, not be silently floored.
            let pc = if p < PROB_EPS { PROB_EPS } else { p };
            total -= pc.ln();
            // Clamped region has zero derivative.
            if p >= PROB_EPS {
                grad[(y, x, l as usize)] = -scale / pc;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Mean over pixels of sum_c p_c (ln p_c - ln q_c), with p the teacher
/// (detached) and q the learner.
pub fn kl_div(p: &ProbMap, q: &ProbMap) -> Result<f64, LossError> {
    Ok(kl_div_grad(p, q)?.0)
}

/// KL divergence plus dL/dq (H, W, C). No gradient flows into `p`.
pub fn kl_div_grad(p: &ProbMap, q: &ProbMap) -> Result<(f64, Array3<f64>), LossError> {
    check_same_shape(p, q)?;
    let (h, w, c) = p.data().dim();
    let n = (h * w) as f64;
    let mut total = 0.0;
    let mut grad = Array3::<f64>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let praw = p.data()[(y, x, k)];
                let pv = if praw < PROB_EPS { PROB_EPS } else { praw };
                let qraw = q.data()[(y, x, k)];
                let qv = if qraw < PROB_EPS { PROB_EPS } else { qraw };
                total += pv * (pv.ln() - qv.ln());
                if qraw >= PROB_EPS {
                    grad[(y, x, k)] = -pv / qv / n;
                }
            }
        }
    }
    Ok((total / n, grad))
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with logits against label 1: softplus(-s).
fn bce_real(s: f64) -> f64 {
    softplus(-s)
}

/// Binary cross-entropy with logits against label 0: softplus(s).
fn bce_fake(s: f64) -> f64 {
    softplus(s)
}

/// Generator-side adversarial loss: mean over all target-side score
/// elements of BCE against the source label (non-saturating form).
pub fn adv_loss_expert_g(target_scores: &[Array2<f64>]) -> Result<f64, LossError> {
    Ok(adv_loss_expert_g_grad(target_scores)?.0)
}

/// Generator loss plus d/dscore for every target map.
pub fn adv_loss_expert_g_grad(
    target_scores: &[Array2<f64>],
) -> Result<(f64, Vec<Array2<f64>>), LossError> {
    if target_scores.is_empty() {
        return Err(LossError::NoTargetScores);
    }
    let n: usize = target_scores.iter().map(|s| s.len()).sum();
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(target_scores.len());
    for s in target_scores {
        let mut g = Array2::<f64>::zeros(s.dim());
        for (gv, &v) in g.iter_mut().zip(s.iter()) {
            total += bce_real(v);
            // d softplus(-s)/ds = sigmoid(s) - 1
            *gv = (sigmoid(v) - 1.0) * scale;
        }
        grads.push(g);
    }
    Ok((total * scale, grads))
}

/// Discriminator-side adversarial loss: source-prediction scores are
/// labeled 1 and all target-side scores (native plus restyled) 0, each
/// side contributing half:
/// 0.5 * mean BCE(source, 1) + 0.5 * mean BCE(targets, 0).
pub fn adv_loss_expert_d(
    source_scores: &[Array2<f64>],
    target_scores: &[Array2<f64>],
) -> Result<f64, LossError> {
    Ok(adv_loss_expert_d_grad(source_scores, target_scores)?.0)
}

/// Discriminator loss plus d/dscore for source and target maps.
#[allow(clippy::type_complexity)]
pub fn adv_loss_expert_d_grad(
    source_scores: &[Array2<f64>],
    target_scores: &[Array2<f64>],
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array2<f64>>), LossError> {
    if target_scores.is_empty() || source_scores.is_empty() {
        return Err(LossError::NoTargetScores);
    }
    let ns: usize = source_scores.iter().map(|s| s.len()).sum();
    let nt: usize = target_scores.iter().map(|s| s.len()).sum();
    let (ss, st) = (0.5 / ns as f64, 0.5 / nt as f64);
    let mut total = 0.0;
    let mut sg = Vec::with_capacity(source_scores.len());
    for s in source_scores {
        let mut g = Array2::<f64>::zeros(s.dim());
        for (gv, &v) in g.iter_mut().zip(s.iter()) {
            total += ss * bce_real(v);
            *gv = (sigmoid(v) - 1.0) * ss;
        }
        sg.push(g);
    }
    let mut tg = Vec::with_capacity(target_scores.len());
    for s in target_scores {
        let mut g = Array2::<f64>::zeros(s.dim());
        for (gv, &v) in g.iter_mut().zip(s.iter()) {
            total += st * bce_fake(v);
            *gv = sigmoid(v) * st;
        }
        tg.push(g);
    }
    Ok((total, sg, tg))
}

/// Inter-expert consistency for one expert: mean over the other experts'
/// domains of KL(native teacher || this expert's restyled prediction).
/// Returns 0 when there are no peers (M = 1).
pub fn consistency_loss(
    native_teachers: &[ProbMap],
    restyled_preds: &[ProbMap],
) -> Result<f64, LossError> {
    Ok(consistency_loss_grad(native_teachers, restyled_preds)?.0)
}

/// Consistency loss plus dL/d(restyled prediction) per peer domain.
pub fn consistency_loss_grad(
    native_teachers: &[ProbMap],
    restyled_preds: &[ProbMap],
) -> Result<(f64, Vec<Array3<f64>>), LossError> {
    if native_teachers.len() != restyled_preds.len() {
        return Err(LossError::ListLengthMismatch {
            expected: native_teachers.len(),
            got: restyled_preds.len(),
        });
    }
    if native_teachers.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / native_teachers.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(restyled_preds.len());
    for (p, q) in native_teachers.iter().zip(restyled_preds) {
        let (v, mut g) = kl_div_grad(p, q)?;
        total += v * scale;
        g.mapv_inplace(|x| x * scale);
        grads.push(g);
    }
    Ok((total, grads))
}

/// Online distillation: mean over target domains of
/// KL(expert teacher || student prediction).
pub fn okd_loss(expert_preds: &[ProbMap], student_preds: &[ProbMap]) -> Result<f64, LossError> {
    Ok(okd_loss_grad(expert_preds, student_preds)?.0)
}

/// Distillation loss plus dL/d(student prediction) per target domain.
pub fn okd_loss_grad(
    expert_preds: &[ProbMap],
    student_preds: &[ProbMap],
) -> Result<(f64, Vec<Array3<f64>>), LossError> {
    if expert_preds.len() != student_preds.len() {
        return Err(LossError::ListLengthMismatch {
            expected: expert_preds.len(),
            got: student_preds.len(),
        });
    }
    if expert_preds.is_empty() {
        return Err(LossError::NoTargetScores);
    }
    let scale = 1.0 / expert_preds.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(student_preds.len());
    for (p, q) in expert_preds.iter().zip(student_preds) {
        let (v, mut g) = kl_div_grad(p, q)?;
        total += v * scale;
        g.mapv_inplace(|x| x * scale);
        grads.push(g);
    }
    Ok((total, grads))
}

/// One expert's training objective: seg + lambda_adv * adv_G +
/// lambda_cl * consistency. The 1/M factor of the pooled expert objective
/// is a shared constant scale absorbed by per-expert optimization.
pub fn expert_objective(seg: f64, adv_g: f64, cl: f64, w: &LossWeights) -> f64 {
    seg + w.lambda_adv * adv_g + w.lambda_cl * cl
}

/// Pooled expert objective over all M experts:
/// (1/M) sum_m (seg_m + lambda_adv * adv_m + lambda_cl * cl_m).
pub fn pooled_expert_objective(per_expert: &[(f64, f64, f64)], w: &LossWeights) -> f64 {
    let m = per_expert.len() as f64;
    per_expert
        .iter()
        .map(|&(seg, adv_g, cl)| expert_objective(seg, adv_g, cl, w))
        .sum::<f64>()
        / m
}

/// Student objective: seg + lambda_adv * adv_G + lambda_okd * okd.
pub fn student_objective(seg: f64, adv_g: f64, okd: f64, w: &LossWeights) -> f64 {
    seg + w.lambda_adv * adv_g + w.lambda_okd * okd
}

/// Mean L1 distance between each expert's weights and the student's:
/// (1/M) sum_m ||theta_m - theta_student||_1, the norm being the sum of
/// absolute coordinate differences.
pub fn weight_reg(experts: &[&ParamVector], student: &ParamVector) -> Result<f64, LossError> {
    if experts.is_empty() {
        return Err(LossError::NoExperts);
    }
    let mut total = 0.0;
    for e in experts {
        if e.len() != student.len() {
            return Err(LossError::ParamLengthMismatch { a: e.len(), b: student.len() });
        }
        total += e.l1_distance(student);
    }
    Ok(total / experts.len() as f64)
}

/// Weight regularizer plus its sign-based subgradients (0 at ties):
/// per expert sign(theta_m - theta_s)/M, and for the student the negated
/// sum of those.
#[allow(clippy::type_complexity)]
pub fn weight_reg_grad(
    experts: &[&ParamVector],
    student: &ParamVector,
) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>), LossError> {
    let value = weight_reg(experts, student)?;
    let scale = 1.0 / experts.len() as f64;
    let mut expert_grads = Vec::with_capacity(experts.len());
    let mut student_grad = vec![0.0; student.len()];
    for e in experts {
        let mut g = vec![0.0; e.len()];
        for (i, (a, b)) in e.as_slice().iter().zip(student.as_slice()).enumerate() {
            let s = if a == b { 0.0 } else { (a - b).signum() };
            g[i] = s * scale;
            student_grad[i] -= s * scale;
        }
        expert_grads.push(g);
    }
    Ok((value, expert_grads, student_grad))
}

/// Whole-framework objective: student total + pooled expert total +
/// lambda_wr * weight regularizer.
pub fn total_objective(expert_total: f64, student_total: f64, wr: f64, w: &LossWeights) -> f64 {
    student_total + expert_total + w.lambda_wr * wr
}
