//! OKS-based evaluation of predicted poses against ground truth.
//!
//! Matching is greedy and threshold independent: predictions in descending
//! score order each claim the unclaimed ground truth with the highest OKS.
//! AP at a threshold `s` is then the fraction of predictions whose OKS is
//! strictly greater than `s`; AR is the fraction of ground truths claimed
//! with OKS strictly greater than `s`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{ImageId, Pose, SkeletonSpec};
use crate::nms::{keypoint_similarity, OksConvention};

/// The ten OKS thresholds 0.50, 0.55, …, 0.95.
pub fn oks_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// OKS of a prediction against ground truth, over labeled keypoints only.
pub fn oks_gt(
    pred: &Pose,
    gt: &Pose,
    spec: &SkeletonSpec,
    convention: OksConvention,
) -> Result<f64> {
    let k = spec.num_keypoints();
    if pred.keypoints.len() != k || gt.keypoints.len() != k {
        return Err(Error::dims(k, pred.keypoints.len().max(gt.keypoints.len())));
    }
    if !(gt.area > 0.0) {
        return Err(Error::ZeroArea);
    }
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for ((p, g), &sigma) in pred.keypoints.iter().zip(&gt.keypoints).zip(spec.oks_k()) {
        if g.visibility.is_labeled() {
            sum += keypoint_similarity(convention, p.x - g.x, p.y - g.y, gt.area, sigma);
            labeled += 1;
        }
    }
    if labeled == 0 {
        return Err(Error::NoLabeledKeypoints);
    }
    Ok(sum / labeled as f64)
}

/// Outcome of greedy matching for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    /// Index into the image's predictions.
    pub pred: usize,
    /// Index into the image's ground truths, if one was claimed.
    pub gt: Option<usize>,
    /// OKS with the claimed ground truth, 0 when nothing was claimed.
    pub oks: f64,
    pub score: f64,
}

fn by_score_desc(poses: &[Pose]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| {
        poses[b]
            .instance_score
            .partial_cmp(&poses[a].instance_score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy assignment within one image, records in claim order.
pub fn match_greedy(
    preds: &[Pose],
    gts: &[Pose],
    spec: &SkeletonSpec,
    convention: OksConvention,
) -> Result<Vec<MatchRecord>> {
    let mut claimed = alloc::vec![false; gts.len()];
    let mut records = Vec::with_capacity(preds.len());
    for p in by_score_desc(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let oks = oks_gt(&preds[p], gt, spec, convention)?;
            if best.is_none_or(|(_, b)| oks > b) {
                best = Some((g, oks));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
        }
        records.push(MatchRecord {
            pred: p,
            gt: best.map(|b| b.0),
            oks: best.map_or(0.0, |b| b.1),
            score: preds[p].instance_score,
        });
    }
    Ok(records)
}

/// Fraction of predictions with OKS strictly above `s`; 0 when empty.
pub fn ap_at(matches: &[MatchRecord], s: f64) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    matches.iter().filter(|m| m.oks > s).count() as f64 / matches.len() as f64
}

/// Fraction of `num_gts` ground truths claimed with OKS strictly above `s`.
pub fn recall_at(matches: &[MatchRecord], num_gts: usize, s: f64) -> f64 {
    if num_gts == 0 {
        return 0.0;
    }
    let hits = matches.iter().filter(|m| m.gt.is_some() && m.oks > s).count();
    hits as f64 / num_gts as f64
}

/// How per-threshold AP is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// Fraction of predictions above the threshold.
    #[default]
    Ratio,
    /// COCO-style 101-point interpolated precision over recall, for
    /// cross-checking against external tooling.
    Coco101,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub convention: OksConvention,
    pub ap_mode: ApMode,
    /// Inclusive ground-truth area range of the medium stratum.
    pub medium_area: (f64, f64),
    /// Ground truths with area strictly above this are large.
    pub large_area: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            convention: OksConvention::Coco,
            ap_mode: ApMode::Ratio,
            medium_area: (32.0 * 32.0, 96.0 * 96.0),
            large_area: 96.0 * 96.0,
        }
    }
}

/// Matching of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatches {
    pub image_id: ImageId,
    /// Indices into the global prediction slice, by local index.
    pub pred_indices: Vec<usize>,
    /// Indices into the global ground-truth slice, by local index.
    pub gt_indices: Vec<usize>,
    pub records: Vec<MatchRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub thresholds: [f64; 10],
    pub ap_per_threshold: [f64; 10],
    pub mean_ap: f64,
    pub ar_per_threshold: [f64; 10],
    pub mean_ar: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
    pub matched_pairs: Vec<ImageMatches>,
}

impl EvalReport {
    fn at(values: &[f64; 10], s: f64) -> f64 {
        let idx = oks_thresholds()
            .iter()
            .position(|t| (t - s).abs() < 1e-9)
            .expect("threshold on the 0.05 grid");
        values[idx]
    }

    pub fn ap(&self, s: f64) -> f64 {
        Self::at(&self.ap_per_threshold, s)
    }

    pub fn ar(&self, s: f64) -> f64 {
        Self::at(&self.ar_per_threshold, s)
    }
}

fn mean10(v: &[f64; 10]) -> f64 {
    v.iter().sum::<f64>() / 10.0
}

/// One prediction's view for scoring: OKS, score and the area used for
/// stratification.
#[derive(Debug, Clone, Copy)]
struct Scored {
    oks: f64,
    score: f64,
    matched: bool,
    stratum_area: f64,
}

/// Evaluates predictions over the images that appear in `gts`.
pub fn evaluate(
    preds: &[Pose],
    gts: &[Pose],
    spec: &SkeletonSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut images: Vec<ImageId> = gts.iter().map(|g| g.image_id).collect();
    images.sort_unstable();
    images.dedup();
    evaluate_images(&images, preds, gts, spec, cfg)
}

/// Evaluates predictions over an explicit image list; images may have no
/// ground truth. Ground truths without labeled keypoints are ignored.
pub fn evaluate_images(
    images: &[ImageId],
    preds: &[Pose],
    gts: &[Pose],
    spec: &SkeletonSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut per_image: BTreeMap<ImageId, (Vec<usize>, Vec<usize>)> =
        images.iter().map(|&id| (id, (Vec::new(), Vec::new()))).collect();
    for (i, p) in preds.iter().enumerate() {
        per_image
            .get_mut(&p.image_id)
            .ok_or(Error::UnknownImage(p.image_id.0))?
            .0
            .push(i);
    }
    for (i, g) in gts.iter().enumerate() {
        if g.num_labeled() == 0 {
            continue;
        }
        per_image
            .get_mut(&g.image_id)
            .ok_or(Error::UnknownImage(g.image_id.0))?
            .1
            .push(i);
    }

    let mut matched_pairs = Vec::with_capacity(per_image.len());
    let mut scored = Vec::with_capacity(preds.len());
    let mut gt_areas = Vec::new();
    for (image_id, (pred_idx, gt_idx)) in per_image {
        let local_preds: Vec<Pose> = pred_idx.iter().map(|&i| preds[i].clone()).collect();
        let local_gts: Vec<Pose> = gt_idx.iter().map(|&i| gts[i].clone()).collect();
        let records = match_greedy(&local_preds, &local_gts, spec, cfg.convention)?;
        for r in &records {
            let stratum_area = match r.gt {
                Some(g) => local_gts[g].area,
                None => local_preds[r.pred].area,
            };
            scored.push(Scored {
                oks: r.oks,
                score: r.score,
                matched: r.gt.is_some(),
                stratum_area,
            });
        }
        gt_areas.extend(local_gts.iter().map(|g| g.area));
        matched_pairs.push(ImageMatches {
            image_id,
            pred_indices: pred_idx,
            gt_indices: gt_idx,
            records,
        });
    }

    let thresholds = oks_thresholds();
    let all = |_: f64| true;
    let medium = |a: f64| a >= cfg.medium_area.0 && a <= cfg.medium_area.1;
    let large = |a: f64| a > cfg.large_area;

    let ap_per_threshold = thresholds.map(|s| stratum_ap(&scored, &gt_areas, s, cfg.ap_mode, &all));
    let ar_per_threshold = thresholds.map(|s| stratum_ar(&scored, &gt_areas, s, &all));
    let ap_m = thresholds.map(|s| stratum_ap(&scored, &gt_areas, s, cfg.ap_mode, &medium));
    let ap_l = thresholds.map(|s| stratum_ap(&scored, &gt_areas, s, cfg.ap_mode, &large));
    let ar_m = thresholds.map(|s| stratum_ar(&scored, &gt_areas, s, &medium));
    let ar_l = thresholds.map(|s| stratum_ar(&scored, &gt_areas, s, &large));

    Ok(EvalReport {
        thresholds,
        mean_ap: mean10(&ap_per_threshold),
        ap_per_threshold,
        mean_ar: mean10(&ar_per_threshold),
        ar_per_threshold,
        ap_medium: mean10(&ap_m),
        ap_large: mean10(&ap_l),
        ar_medium: mean10(&ar_m),
        ar_large: mean10(&ar_l),
        matched_pairs,
    })
}

fn stratum_ap(
    scored: &[Scored],
    gt_areas: &[f64],
    s: f64,
    mode: ApMode,
    keep: &dyn Fn(f64) -> bool,
) -> f64 {
    let members: Vec<&Scored> = scored.iter().filter(|p| keep(p.stratum_area)).collect();
    match mode {
        ApMode::Ratio => {
            if members.is_empty() {
                return 0.0;
            }
            members.iter().filter(|p| p.oks > s).count() as f64 / members.len() as f64
        }
        ApMode::Coco101 => {
            let num_gts = gt_areas.iter().filter(|a| keep(**a)).count();
            interpolated_ap(&members, num_gts, s)
        }
    }
}

fn stratum_ar(scored: &[Scored], gt_areas: &[f64], s: f64, keep: &dyn Fn(f64) -> bool) -> f64 {
    let num_gts = gt_areas.iter().filter(|a| keep(**a)).count();
    if num_gts == 0 {
        return 0.0;
    }
    let hits = scored
        .iter()
        .filter(|p| p.matched && p.oks > s && keep(p.stratum_area))
        .count();
    hits as f64 / num_gts as f64
}

/// Area under the 101-point interpolated precision/recall curve.
fn interpolated_ap(members: &[&Scored], num_gts: usize, s: f64) -> f64 {
    if num_gts == 0 || members.is_empty() {
        return 0.0;
    }
    let mut order: Vec<&Scored> = members.to_vec();
    // stable: equal scores keep image/claim order
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for p in &order {
        if p.matched && p.oks > s {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gts as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        let idx = recall.partition_point(|&v| v < target);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    total / 101.0
}
