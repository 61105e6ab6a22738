//! Per-step mathematics: input styling, expert and student
//! forward/backward passes, and gradient assembly.
//!
//! These functions are pure in their inputs, so a coupled training step
//! factors into independently reproducible pieces; the mode-equivalence
//! tests rebuild single-expert runs from exactly these building blocks.

use ndarray::{Array2, Array3};

use crate::data::{LabelMap, MultiDomainDataset, ProbMap, StepBatches};
use crate::losses::{
    adv_loss_expert_d_grad, adv_loss_expert_g_grad, consistency_loss_grad, okd_loss_grad,
    seg_loss_grad, LossWeights,
};
use crate::nets::ops::{hwc_to_chw, softmax_backward_chw};
use crate::nets::{prob_from_logits, Discriminator, ParamVector, SegCache, Segmentor};
use crate::style::{self, StyleStats};

use super::TrainError;

/// Per-domain LAB style statistics, index 0 = source.
#[derive(Debug, Clone)]
pub struct DomainStats {
    pub stats: Vec<StyleStats>,
}

/// Style statistics of every train split, computed once and cached for
/// the whole run.
pub fn compute_domain_stats(ds: &MultiDomainDataset) -> DomainStats {
    let mut stats = Vec::with_capacity(ds.num_targets() + 1);
    stats.push(
        style::compute_style(ds.source().iter().map(|s| &s.image)).expect("source is non-empty"),
    );
    for m in 1..=ds.num_targets() {
        stats.push(
            style::compute_style(ds.target_train(m).iter().map(|s| &s.image))
                .expect("target split is non-empty"),
        );
    }
    DomainStats { stats }
}

/// One cached segmentor forward: activation cache plus softmax output in
/// both layouts.
pub struct Forwarded {
    pub cache: SegCache,
    pub prob: ProbMap,
    pub prob_chw: Array3<f64>,
}

/// Forward a batch of (3, H, W) inputs through a segmentor.
pub fn forward_batch(
    seg: &Segmentor,
    params: &ParamVector,
    inputs: &[Array3<f64>],
) -> Result<Vec<Forwarded>, TrainError> {
    inputs
        .iter()
        .map(|x| {
            let (logits, cache) = seg.forward_cached(params, x)?;
            let (prob, prob_chw) = prob_from_logits(&logits);
            Ok(Forwarded { cache, prob, prob_chw })
        })
        .collect()
}

pub fn image_batch_chw(images: &[&crate::data::ImageTensor]) -> Vec<Array3<f64>> {
    images.iter().map(|img| hwc_to_chw(img.data())).collect()
}

/// Everything expert `m` consumes in one step besides the native target
/// batch: source images moved to its style and the other targets' images
/// moved to its style.
pub struct ExpertInputs<'a> {
    pub styled_source: Vec<Array3<f64>>,
    pub source_labels: Vec<&'a LabelMap>,
    /// (peer domain id, batch translated to this expert's style),
    /// ascending by domain id.
    pub restyled_others: Vec<(usize, Vec<Array3<f64>>)>,
}

/// Build expert `m`'s styled inputs from the step batches: every image of
/// every other domain is translated to target `m`'s style on the fly.
pub fn prepare_expert_inputs<'a>(
    m: usize,
    batches: &StepBatches<'a>,
    stats: &DomainStats,
) -> ExpertInputs<'a> {
    let styled_source = batches
        .source
        .images
        .iter()
        .map(|img| hwc_to_chw(style::translate(img, &stats.stats[0], &stats.stats[m]).data()))
        .collect();
    let mut restyled_others = Vec::new();
    for (idx, tb) in batches.targets.iter().enumerate() {
        let n = idx + 1;
        if n == m {
            continue;
        }
        let imgs = tb
            .images
            .iter()
            .map(|img| hwc_to_chw(style::translate(img, &stats.stats[n], &stats.stats[m]).data()))
            .collect();
        restyled_others.push((n, imgs));
    }
    ExpertInputs { styled_source, source_labels: batches.source.labels.clone(), restyled_others }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertTerms {
    pub seg: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub cl: f64,
    /// seg + lambda_adv * adv_g + lambda_cl * cl, what this expert's
    /// optimizer minimizes.
    pub objective: f64,
}

pub struct ExpertStepOut {
    pub terms: ExpertTerms,
    pub seg_grad: Vec<f64>,
    pub disc_grad: Vec<f64>,
}

fn score2(score: &Array3<f64>) -> Array2<f64> {
    let (_, h, w) = score.dim();
    score.clone().into_shape_with_order((h, w)).expect("single channel score")
}

fn score3(score: &Array2<f64>) -> Array3<f64> {
    let (h, w) = score.dim();
    score.clone().into_shape_with_order((1, h, w)).expect("reshape")
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += *b;
    }
}

/// Losses and gradients for one domain expert and its discriminator.
///
/// The segmentation loss is taken on source images translated to this
/// expert's target style. The discriminator is trained to separate
/// source-derived probability maps (label 1) from all target-side maps,
/// native and restyled (label 0); the expert in generator role pushes the
/// target-side maps toward label 1. Consistency imitates the detached
/// `teachers` (peer experts' predictions on their own native batches),
/// aligned with `restyled_others` by domain id.
#[allow(clippy::too_many_arguments)]
pub fn expert_step_math(
    seg: &Segmentor,
    disc: &Discriminator,
    seg_params: &ParamVector,
    disc_params: &ParamVector,
    inputs: &ExpertInputs,
    native: &[Forwarded],
    teachers: &[(usize, Vec<ProbMap>)],
    w: &LossWeights,
) -> Result<ExpertStepOut, TrainError> {
    let b = inputs.styled_source.len();
    assert_eq!(b, inputs.source_labels.len());
    assert_eq!(b, native.len());
    // An empty teacher list means "no consistency term" (standalone
    // single-target training); otherwise one teacher batch per peer.
    assert!(
        teachers.is_empty() || teachers.len() == inputs.restyled_others.len(),
        "teacher lists must align with restyled peer batches"
    );
    let bf = b as f64;

    let src_fwd = forward_batch(seg, seg_params, &inputs.styled_source)?;
    let restyled_fwd: Vec<(usize, Vec<Forwarded>)> = inputs
        .restyled_others
        .iter()
        .map(|(n, imgs)| Ok((*n, forward_batch(seg, seg_params, imgs)?)))
        .collect::<Result<_, TrainError>>()?;

    // Supervised segmentation on translated source.
    let mut seg_value = 0.0;
    let mut src_dprob: Vec<Array3<f64>> = Vec::with_capacity(b);
    for (f, label) in src_fwd.iter().zip(&inputs.source_labels) {
        let (v, mut g) = seg_loss_grad(&f.prob, label)?;
        seg_value += v / bf;
        g.mapv_inplace(|x| x / bf);
        src_dprob.push(g);
    }

    // Consistency toward detached peers, per batch item.
    let mut cl_value = 0.0;
    let mut cl_dprob: Vec<Vec<Array3<f64>>> = vec![Vec::new(); restyled_fwd.len()];
    if !teachers.is_empty() {
        for i in 0..b {
            let t_list: Vec<ProbMap> =
                teachers.iter().map(|(_, probs)| probs[i].clone()).collect();
            let r_list: Vec<ProbMap> =
                restyled_fwd.iter().map(|(_, fw)| fw[i].prob.clone()).collect();
            for ((tn, _), (rn, _)) in teachers.iter().zip(&restyled_fwd) {
                debug_assert_eq!(tn, rn, "teacher/restyled domain alignment");
            }
            let (v, gs) = consistency_loss_grad(&t_list, &r_list)?;
            cl_value += v / bf;
            for (k, mut g) in gs.into_iter().enumerate() {
                g.mapv_inplace(|x| x / bf);
                cl_dprob[k].push(g);
            }
        }
    }

    // Discriminator forwards, one per probability map. Target-side order:
    // native batch first, then restyled peers ascending by domain.
    let src_scored: Vec<_> =
        src_fwd.iter().map(|f| disc.forward_cached(disc_params, &f.prob_chw)).collect();
    let native_scored: Vec<_> =
        native.iter().map(|f| disc.forward_cached(disc_params, &f.prob_chw)).collect();
    let restyled_scored: Vec<Vec<_>> = restyled_fwd
        .iter()
        .map(|(_, fw)| fw.iter().map(|f| disc.forward_cached(disc_params, &f.prob_chw)).collect())
        .collect();

    let src_scores: Vec<Array2<f64>> = src_scored.iter().map(|(s, _)| score2(s)).collect();
    let mut tgt_scores: Vec<Array2<f64>> =
        native_scored.iter().map(|(s, _)| score2(s)).collect();
    for group in &restyled_scored {
        tgt_scores.extend(group.iter().map(|(s, _)| score2(s)));
    }

    // Discriminator step: probability maps are detached, so input
    // gradients are dropped and only disc parameters accumulate.
    let (adv_d, src_ds, tgt_ds) = adv_loss_expert_d_grad(&src_scores, &tgt_scores)?;
    let mut disc_grad = vec![0.0; disc_params.len()];
    for ((_, cache), dscore) in src_scored.iter().zip(&src_ds) {
        let (pg, _) = disc.backward(disc_params, cache, &score3(dscore));
        add_into(&mut disc_grad, &pg);
    }
    {
        let mut it = tgt_ds.iter();
        for (_, cache) in &native_scored {
            let (pg, _) = disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
            add_into(&mut disc_grad, &pg);
        }
        for group in &restyled_scored {
            for (_, cache) in group {
                let (pg, _) =
                    disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
                add_into(&mut disc_grad, &pg);
            }
        }
    }

    // Generator step: disc parameters frozen, gradients flow into the
    // target-side probability maps.
    let (adv_g, g_dscores) = adv_loss_expert_g_grad(&tgt_scores)?;
    let mut native_dprob_chw: Vec<Option<Array3<f64>>> = (0..b).map(|_| None).collect();
    let mut restyled_dprob_chw: Vec<Vec<Option<Array3<f64>>>> =
        restyled_fwd.iter().map(|(_, fw)| (0..fw.len()).map(|_| None).collect()).collect();
    if w.lambda_adv != 0.0 {
        let mut it = g_dscores.iter();
        for (i, (_, cache)) in native_scored.iter().enumerate() {
            let (_, mut din) =
                disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
            din.mapv_inplace(|x| x * w.lambda_adv);
            native_dprob_chw[i] = Some(din);
        }
        for (k, group) in restyled_scored.iter().enumerate() {
            for (i, (_, cache)) in group.iter().enumerate() {
                let (_, mut din) =
                    disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
                din.mapv_inplace(|x| x * w.lambda_adv);
                restyled_dprob_chw[k][i] = Some(din);
            }
        }
    }

    // Assemble segmentor gradients map by map.
    let mut seg_grad = vec![0.0; seg_params.len()];
    let backprop = |fwd: &Forwarded, dprob_chw: Array3<f64>, grad: &mut Vec<f64>| {
        let dlogits = softmax_backward_chw(&fwd.prob_chw, &dprob_chw);
        let g = seg.backward(seg_params, &fwd.cache, &dlogits);
        add_into(grad, &g);
    };
    for (f, dp) in src_fwd.iter().zip(&src_dprob) {
        backprop(f, hwc_to_chw(dp), &mut seg_grad);
    }
    for (i, f) in native.iter().enumerate() {
        if let Some(dp) = native_dprob_chw[i].take() {
            backprop(f, dp, &mut seg_grad);
        }
    }
    for (k, (_, fw)) in restyled_fwd.iter().enumerate() {
        for (i, f) in fw.iter().enumerate() {
            let mut total: Option<Array3<f64>> = restyled_dprob_chw[k][i].take();
            if w.lambda_cl != 0.0 && !cl_dprob[k].is_empty() {
                let mut cl_chw = hwc_to_chw(&cl_dprob[k][i]);
                cl_chw.mapv_inplace(|x| x * w.lambda_cl);
                total = Some(match total {
                    Some(mut t) => {
                        t += &cl_chw;
                        t
                    }
                    None => cl_chw,
                });
            }
            if let Some(dp) = total {
                backprop(f, dp, &mut seg_grad);
            }
        }
    }

    let objective = crate::losses::expert_objective(seg_value, adv_g, cl_value, w);
    Ok(ExpertStepOut {
        terms: ExpertTerms { seg: seg_value, adv_g, adv_d, cl: cl_value, objective },
        seg_grad,
        disc_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTerms {
    pub seg: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub okd: f64,
    /// seg + lambda_adv * adv_g + lambda_okd * okd.
    pub objective: f64,
}

pub struct StudentStepOut {
    pub terms: StudentTerms,
    pub seg_grad: Vec<f64>,
    pub disc_grad: Vec<f64>,
}

/// Losses and gradients for the domain-generic student: supervised on raw
/// source, adversarial against its own discriminator over raw target
/// predictions, and distilled from the detached expert `teachers` (one
/// list per target domain, aligned with `raw_targets`).
#[allow(clippy::too_many_arguments)]
pub fn student_step_math(
    seg: &Segmentor,
    disc: &Discriminator,
    seg_params: &ParamVector,
    disc_params: &ParamVector,
    raw_source: &[Array3<f64>],
    source_labels: &[&LabelMap],
    raw_targets: &[Vec<Array3<f64>>],
    teachers: Option<&[Vec<ProbMap>]>,
    w: &LossWeights,
) -> Result<StudentStepOut, TrainError> {
    let b = raw_source.len();
    let bf = b as f64;

    let src_fwd = forward_batch(seg, seg_params, raw_source)?;
    let tgt_fwd: Vec<Vec<Forwarded>> = raw_targets
        .iter()
        .map(|imgs| forward_batch(seg, seg_params, imgs))
        .collect::<Result<_, _>>()?;

    let mut seg_value = 0.0;
    let mut src_dprob: Vec<Array3<f64>> = Vec::with_capacity(b);
    for (f, label) in src_fwd.iter().zip(source_labels) {
        let (v, mut g) = seg_loss_grad(&f.prob, label)?;
        seg_value += v / bf;
        g.mapv_inplace(|x| x / bf);
        src_dprob.push(g);
    }

    // Online distillation from the experts' native-target outputs.
    let mut okd_value = 0.0;
    let mut okd_dprob: Vec<Vec<Array3<f64>>> = vec![Vec::new(); tgt_fwd.len()];
    if let Some(teachers) = teachers {
        assert_eq!(teachers.len(), tgt_fwd.len());
        for i in 0..b {
            let t_list: Vec<ProbMap> = teachers.iter().map(|probs| probs[i].clone()).collect();
            let s_list: Vec<ProbMap> = tgt_fwd.iter().map(|fw| fw[i].prob.clone()).collect();
            let (v, gs) = okd_loss_grad(&t_list, &s_list)?;
            okd_value += v / bf;
            for (k, mut g) in gs.into_iter().enumerate() {
                g.mapv_inplace(|x| x / bf);
                okd_dprob[k].push(g);
            }
        }
    }

    let src_scored: Vec<_> =
        src_fwd.iter().map(|f| disc.forward_cached(disc_params, &f.prob_chw)).collect();
    let tgt_scored: Vec<Vec<_>> = tgt_fwd
        .iter()
        .map(|fw| fw.iter().map(|f| disc.forward_cached(disc_params, &f.prob_chw)).collect())
        .collect();
    let src_scores: Vec<Array2<f64>> = src_scored.iter().map(|(s, _)| score2(s)).collect();
    let tgt_scores: Vec<Array2<f64>> = tgt_scored
        .iter()
        .flat_map(|group: &Vec<(Array3<f64>, crate::nets::DiscCache)>| {
            group.iter().map(|(s, _)| score2(s))
        })
        .collect();

    let (adv_d, src_ds, tgt_ds) = adv_loss_expert_d_grad(&src_scores, &tgt_scores)?;
    let mut disc_grad = vec![0.0; disc_params.len()];
    for ((_, cache), dscore) in src_scored.iter().zip(&src_ds) {
        let (pg, _) = disc.backward(disc_params, cache, &score3(dscore));
        add_into(&mut disc_grad, &pg);
    }
    {
        let mut it = tgt_ds.iter();
        for group in &tgt_scored {
            for (_, cache) in group {
                let (pg, _) =
                    disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
                add_into(&mut disc_grad, &pg);
            }
        }
    }

    let (adv_g, g_dscores) = adv_loss_expert_g_grad(&tgt_scores)?;
    let mut tgt_dprob_chw: Vec<Vec<Option<Array3<f64>>>> =
        tgt_fwd.iter().map(|fw| (0..fw.len()).map(|_| None).collect()).collect();
    if w.lambda_adv != 0.0 {
        let mut it = g_dscores.iter();
        for (k, group) in tgt_scored.iter().enumerate() {
            for (i, (_, cache)) in group.iter().enumerate() {
                let (_, mut din) =
                    disc.backward(disc_params, cache, &score3(it.next().expect("aligned")));
                din.mapv_inplace(|x| x * w.lambda_adv);
                tgt_dprob_chw[k][i] = Some(din);
            }
        }
    }

    let mut seg_grad = vec![0.0; seg_params.len()];
    let backprop = |fwd: &Forwarded, dprob_chw: Array3<f64>, grad: &mut Vec<f64>| {
        let dlogits = softmax_backward_chw(&fwd.prob_chw, &dprob_chw);
        let g = seg.backward(seg_params, &fwd.cache, &dlogits);
        add_into(grad, &g);
    };
    for (f, dp) in src_fwd.iter().zip(&src_dprob) {
        backprop(f, hwc_to_chw(dp), &mut seg_grad);
    }
    for (k, fw) in tgt_fwd.iter().enumerate() {
        for (i, f) in fw.iter().enumerate() {
            let mut total: Option<Array3<f64>> = tgt_dprob_chw[k][i].take();
            if w.lambda_okd != 0.0 && !okd_dprob[k].is_empty() {
                let mut okd_chw = hwc_to_chw(&okd_dprob[k][i]);
                okd_chw.mapv_inplace(|x| x * w.lambda_okd);
                total = Some(match total {
                    Some(mut t) => {
                        t += &okd_chw;
                        t
                    }
                    None => okd_chw,
                });
            }
            if let Some(dp) = total {
                backprop(f, dp, &mut seg_grad);
            }
        }
    }

    let objective = crate::losses::student_objective(seg_value, adv_g, okd_value, w);
    Ok(StudentStepOut {
        terms: StudentTerms { seg: seg_value, adv_g, adv_d, okd: okd_value, objective },
        seg_grad,
        disc_grad,
    })
}

/// Supervised-only update input: forward the raw source batch and return
/// the mean segmentation loss plus its parameter gradient.
pub fn source_only_math(
    seg: &Segmentor,
    seg_params: &ParamVector,
    raw_source: &[Array3<f64>],
    source_labels: &[&LabelMap],
) -> Result<(f64, Vec<f64>), TrainError> {
    let b = raw_source.len() as f64;
    let src_fwd = forward_batch(seg, seg_params, raw_source)?;
    let mut value = 0.0;
    let mut seg_grad = vec![0.0; seg_params.len()];
    for (f, label) in src_fwd.iter().zip(source_labels) {
        let (v, mut g) = seg_loss_grad(&f.prob, label)?;
        value += v / b;
        g.mapv_inplace(|x| x / b);
        let dlogits = softmax_backward_chw(&f.prob_chw, &hwc_to_chw(&g));
        let gp = seg.backward(seg_params, &f.cache, &dlogits);
        add_into(&mut seg_grad, &gp);
    }
    Ok((value, seg_grad))
}

/// Per-pixel logit argmax as a label map, for evaluation.
pub fn argmax_labels(logits_hwc: &Array3<f64>) -> crate::data::LabelMap {
    let (h, w, c) = logits_hwc.dim();
    let mut out = ndarray::Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut bv = logits_hwc[(y, x, 0)];
            for k in 1..c {
                let v = logits_hwc[(y, x, k)];
                if v > bv {
                    bv = v;
                    best = k;
                }
            }
            out[(y, x)] = best as u8;
        }
    }
    crate::data::LabelMap::new(out, c).expect("argmax indices are valid classes")
}
