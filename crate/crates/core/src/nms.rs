//! OKS-IOU between predicted poses, greedy OKS-NMS and coordinate-fusing
//! soft-NMS.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Pose, SkeletonSpec};

/// How the OKS exponent is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OksConvention {
    /// COCO evaluation: `d² / (2 · area · (2σ)²)`.
    #[default]
    Coco,
    /// The formula with `a_p²` taken literally: `d² / (2 · area² · σ²)`.
    Literal,
}

impl OksConvention {
    #[inline]
    pub fn exponent(self, d2: f64, area: f64, sigma: f64) -> f64 {
        match self {
            OksConvention::Coco => d2 / (2.0 * area * (2.0 * sigma) * (2.0 * sigma)),
            OksConvention::Literal => d2 / (2.0 * area * area * sigma * sigma),
        }
    }
}

/// Similarity of a keypoint pair under the convention, before averaging.
#[inline]
pub(crate) fn keypoint_similarity(
    convention: OksConvention,
    dx: f64,
    dy: f64,
    area: f64,
    sigma: f64,
) -> f64 {
    math::exp(-convention.exponent(dx * dx + dy * dy, area, sigma))
}

fn check_arity(p: &Pose, spec: &SkeletonSpec) -> Result<()> {
    if p.keypoints.len() != spec.num_keypoints() {
        return Err(Error::dims(spec.num_keypoints(), p.keypoints.len()));
    }
    Ok(())
}

/// OKS between two predictions with `reference` supplying the area.
///
/// Every keypoint participates; predictions carry no visibility flags.
pub fn oks_iou(
    reference: &Pose,
    other: &Pose,
    spec: &SkeletonSpec,
    convention: OksConvention,
) -> Result<f64> {
    check_arity(reference, spec)?;
    check_arity(other, spec)?;
    if !(reference.area > 0.0) {
        return Err(Error::ZeroArea);
    }
    let sum: f64 = reference
        .keypoints
        .iter()
        .zip(&other.keypoints)
        .zip(spec.oks_k())
        .map(|((a, b), &sigma)| {
            keypoint_similarity(convention, a.x - b.x, a.y - b.y, reference.area, sigma)
        })
        .sum();
    Ok(sum / spec.num_keypoints() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmsMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    /// Poses with OKS-IOU strictly above this are suppressed.
    pub oks_threshold: f64,
    pub mode: NmsMode,
    pub convention: OksConvention,
}

impl NmsConfig {
    pub fn new(oks_threshold: f64, mode: NmsMode) -> Result<Self> {
        if !(oks_threshold > 0.0 && oks_threshold < 1.0) {
            return Err(Error::OutOfRange {
                what: "OKS threshold",
                value: oks_threshold,
            });
        }
        Ok(Self {
            oks_threshold,
            mode,
            convention: OksConvention::default(),
        })
    }
}

/// A kept pose and the poses it suppressed with their OKS-IOU.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub keeper: usize,
    pub suppressed: Vec<(usize, f64)>,
}

/// Input indices sorted by descending score, ties by position.
fn ranking(poses: &[Pose]) -> Vec<usize> {
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

/// Greedy OKS-NMS grouping, in keep order.
pub fn cluster(poses: &[Pose], cfg: &NmsConfig, spec: &SkeletonSpec) -> Result<Vec<Cluster>> {
    let order = ranking(poses);
    let mut removed = alloc::vec![false; poses.len()];
    let mut clusters = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if removed[i] {
            continue;
        }
        removed[i] = true;
        let mut suppressed = Vec::new();
        for &j in &order[rank + 1..] {
            if removed[j] {
                continue;
            }
            let iou = oks_iou(&poses[i], &poses[j], spec, cfg.convention)?;
            if iou > cfg.oks_threshold {
                removed[j] = true;
                suppressed.push((j, iou));
            }
        }
        clusters.push(Cluster {
            keeper: i,
            suppressed,
        });
    }
    Ok(clusters)
}

/// Keeps the top-scored pose of every cluster.
pub fn hard_nms(poses: &[Pose], cfg: &NmsConfig, spec: &SkeletonSpec) -> Result<Vec<Pose>> {
    Ok(cluster(poses, cfg, spec)?
        .into_iter()
        .map(|c| poses[c.keeper].clone())
        .collect())
}

/// Replaces each kept pose's coordinates with the OKS-IOU weighted mean over
/// itself (weight 1) and the poses it suppressed. Scores are untouched.
pub fn soft_nms(poses: &[Pose], cfg: &NmsConfig, spec: &SkeletonSpec) -> Result<Vec<Pose>> {
    Ok(cluster(poses, cfg, spec)?
        .into_iter()
        .map(|c| fuse(poses, &c))
        .collect())
}

/// Dispatches on `cfg.mode`.
pub fn pose_nms(poses: &[Pose], cfg: &NmsConfig, spec: &SkeletonSpec) -> Result<Vec<Pose>> {
    match cfg.mode {
        NmsMode::Hard => hard_nms(poses, cfg, spec),
        NmsMode::Soft => soft_nms(poses, cfg, spec),
    }
}

fn fuse(poses: &[Pose], cluster: &Cluster) -> Pose {
    let mut fused = poses[cluster.keeper].clone();
    if cluster.suppressed.is_empty() {
        return fused;
    }
    let total: f64 = 1.0 + cluster.suppressed.iter().map(|(_, w)| w).sum::<f64>();
    for (k, kp) in fused.keypoints.iter_mut().enumerate() {
        let (mut sx, mut sy) = (kp.x, kp.y);
        for &(j, w) in &cluster.suppressed {
            sx += w * poses[j].keypoints[k].x;
            sy += w * poses[j].keypoints[k].y;
        }
        kp.x = sx / total;
        kp.y = sy / total;
    }
    fused
}
