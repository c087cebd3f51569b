//! Training-data preparation filters: hard-negative detection mining,
//! pseudo-label screening of unlabeled images, and keypoint alignment
//! between datasets with different skeletons.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{box_intersects, DetectionBox, ImageId, Keypoint, Pose, Visibility};

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::OutOfRange { what, value });
    }
    Ok(())
}

/// Confident detections that overlap no ground-truth box of their image.
///
/// The caller pairs the returned boxes with all-zero heatmap targets.
pub fn mine_hard_negatives(
    dets: &[DetectionBox],
    gt_boxes: &[DetectionBox],
    score_thr: f64,
) -> Result<Vec<DetectionBox>> {
    check_unit("score threshold", score_thr)?;
    let mut by_image: BTreeMap<ImageId, Vec<&DetectionBox>> = BTreeMap::new();
    for g in gt_boxes {
        by_image.entry(g.image_id).or_default().push(g);
    }
    Ok(dets
        .iter()
        .filter(|d| d.score >= score_thr)
        .filter(|d| {
            by_image
                .get(&d.image_id)
                .is_none_or(|gts| gts.iter().all(|g| !box_intersects(d, g)))
        })
        .copied()
        .collect())
}

/// Result of the instance-density screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceCut {
    /// Score of the last kept detection (0 when everything is kept).
    pub threshold: f64,
    /// Number of detections kept, `floor(target_avg * num_images)` capped
    /// at the number of detections.
    pub kept: usize,
}

/// Picks the score threshold that brings the average number of detections
/// per image down to `target_avg`.
///
/// Detections are ranked by descending score (ties by input order) and cut
/// after `floor(target_avg * num_images)`. If the target exceeds what is
/// available the threshold is 0; if nothing may be kept it sits just above
/// the best score.
pub fn screen_instance_threshold(
    dets: &[DetectionBox],
    num_images: usize,
    target_avg: f64,
) -> Result<InstanceCut> {
    if dets.is_empty() {
        return Err(Error::Empty("detections"));
    }
    if num_images == 0 {
        return Err(Error::Empty("images"));
    }
    if !(target_avg > 0.0 && target_avg.is_finite()) {
        return Err(Error::OutOfRange {
            what: "target average",
            value: target_avg,
        });
    }
    let budget = crate::math::floor(target_avg * num_images as f64);
    if budget >= dets.len() as f64 {
        return Ok(InstanceCut {
            threshold: 0.0,
            kept: dets.len(),
        });
    }
    let kept = budget as usize;
    let ranked = rank_by_score(dets);
    let threshold = match kept {
        0 => dets[ranked[0]].score.next_up(),
        n => dets[ranked[n - 1]].score,
    };
    Ok(InstanceCut { threshold, kept })
}

fn rank_by_score(dets: &[DetectionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// The detections kept by `cut`, in ranked order.
pub fn apply_instance_cut(dets: &[DetectionBox], cut: &InstanceCut) -> Vec<DetectionBox> {
    rank_by_score(dets)
        .into_iter()
        .take(cut.kept)
        .map(|i| dets[i])
        .collect()
}

/// Turns predicted poses into pseudo-labels.
///
/// Keypoints scoring above `kp_score_thr` become labeled-visible, the rest
/// unlabeled; poses with no surviving keypoint are dropped.
pub fn screen_keypoint_pseudolabels(poses: &[Pose], kp_score_thr: f64) -> Result<Vec<Pose>> {
    check_unit("keypoint score threshold", kp_score_thr)?;
    Ok(poses
        .iter()
        .filter_map(|p| {
            let mut out = p.clone();
            let mut survivors = 0;
            for kp in &mut out.keypoints {
                kp.visibility = if kp.score > kp_score_thr {
                    survivors += 1;
                    Visibility::LabeledVisible
                } else {
                    Visibility::Unlabeled
                };
            }
            (survivors > 0).then_some(out)
        })
        .collect())
}

/// Index correspondence between two skeletons.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTable {
    source: String,
    target: String,
    source_len: usize,
    target_len: usize,
    pairs: Vec<(usize, usize)>,
}

impl AlignmentTable {
    /// `pairs` maps source keypoint indices to target indices; both sides
    /// must be in range and used at most once.
    pub fn new(
        source: impl Into<String>,
        source_len: usize,
        target: impl Into<String>,
        target_len: usize,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut used_s = alloc::vec![false; source_len];
        let mut used_t = alloc::vec![false; target_len];
        for &(s, t) in &pairs {
            if s >= source_len || t >= target_len {
                return Err(Error::InvalidParams(format!(
                    "pair ({s}, {t}) outside {source_len} -> {target_len}"
                )));
            }
            if core::mem::replace(&mut used_s[s], true) || core::mem::replace(&mut used_t[t], true) {
                return Err(Error::InvalidParams(format!("pair ({s}, {t}) is not injective")));
            }
        }
        Ok(Self {
            source: source.into(),
            target: target.into(),
            source_len,
            target_len,
            pairs,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// The same correspondence in the opposite direction.
    pub fn reversed(&self) -> Self {
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            source_len: self.target_len,
            target_len: self.source_len,
            pairs: self.pairs.iter().map(|&(s, t)| (t, s)).collect(),
        }
    }
}

/// Re-expresses a pose in the target skeleton.
///
/// Mapped keypoints are copied verbatim; target keypoints without a source
/// become unlabeled and source keypoints without a target are dropped.
pub fn align_skeleton(pose: &Pose, table: &AlignmentTable) -> Result<Pose> {
    if pose.keypoints.len() != table.source_len {
        return Err(Error::dims(
            format!("{} keypoints ({})", table.source_len, table.source),
            format!("{} keypoints", pose.keypoints.len()),
        ));
    }
    let mut keypoints = alloc::vec![Keypoint::default(); table.target_len];
    for &(s, t) in &table.pairs {
        keypoints[t] = pose.keypoints[s];
    }
    Ok(Pose {
        keypoints,
        ..pose.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x: f64, y: f64, w: f64, h: f64, score: f64, image: u64) -> DetectionBox {
        DetectionBox::new(x, y, w, h, score, ImageId(image)).unwrap()
    }

    #[test]
    fn mining_rules() {
        let gts = [bx(0.0, 0.0, 10.0, 10.0, 1.0, 1)];
        let overlapping = bx(5.0, 5.0, 10.0, 10.0, 0.6, 1);
        let low = bx(50.0, 50.0, 10.0, 10.0, 0.4, 1);
        let good = bx(50.0, 50.0, 10.0, 10.0, 0.5, 1);
        let other_image = bx(5.0, 5.0, 10.0, 10.0, 0.9, 2);
        let out = mine_hard_negatives(&[overlapping, low, good, other_image], &gts, 0.5).unwrap();
        assert_eq!(out, vec![good, other_image]);
        assert!(mine_hard_negatives(&[], &gts, 1.5).is_err());
    }

    #[test]
    fn mining_matches_exhaustive_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gts: Vec<DetectionBox> = (0..6)
            .map(|i| bx(rng.random_range(0.0..80.0), rng.random_range(0.0..80.0), 15.0, 30.0, 1.0, i % 2))
            .collect();
        let dets: Vec<DetectionBox> = (0..20)
            .map(|i| {
                bx(
                    rng.random_range(0.0..90.0),
                    rng.random_range(0.0..90.0),
                    rng.random_range(2.0..20.0),
                    rng.random_range(2.0..20.0),
                    rng.random_range(0.0..1.0),
                    i % 2,
                )
            })
            .collect();
        let got = mine_hard_negatives(&dets, &gts, 0.5).unwrap();
        let mut expected = vec![];
        for d in &dets {
            let mut clear = d.score >= 0.5;
            for g in &gts {
                let ox = (d.x + d.w).min(g.x + g.w) - d.x.max(g.x);
                let oy = (d.y + d.h).min(g.y + g.h) - d.y.max(g.y);
                if g.image_id == d.image_id && ox > 0.0 && oy > 0.0 {
                    clear = false;
                }
            }
            if clear {
                expected.push(*d);
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn screening_counts() {
        let dets: Vec<DetectionBox> = (0..300).map(|i| bx(0.0, 0.0, 1.0, 1.0, 0.99, i % 100)).collect();
        let cut = screen_instance_threshold(&dets, 100, 2.0).unwrap();
        assert_eq!(cut.kept, 200);
        assert_eq!(cut.threshold, 0.99);
        assert_eq!(apply_instance_cut(&dets, &cut).len(), 200);

        let cut = screen_instance_threshold(&dets, 100, 5.0).unwrap();
        assert_eq!((cut.threshold, cut.kept), (0.0, 300));

        let cut = screen_instance_threshold(&dets, 100, 0.001).unwrap();
        assert_eq!(cut.kept, 0);
        assert!(cut.threshold > 0.99);

        assert!(screen_instance_threshold(&[], 10, 1.0).is_err());
        assert!(screen_instance_threshold(&dets, 10, 0.0).is_err());
    }

    #[test]
    fn screening_threshold_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dets: Vec<DetectionBox> = (0..57)
            .map(|i| bx(0.0, 0.0, 1.0, 1.0, rng.random_range(0.0..1.0), i % 10))
            .collect();
        let cut = screen_instance_threshold(&dets, 10, 2.35).unwrap();
        let count = dets.iter().filter(|d| d.score >= cut.threshold).count();
        assert_eq!(count, 23);
        assert!(count as f64 / 10.0 <= 2.35);
        assert!((count + 1) as f64 / 10.0 > 2.35);
    }

    fn kp_pose(scores: &[f64]) -> Pose {
        Pose {
            keypoints: scores.iter().map(|&s| Keypoint::predicted(1.0, 2.0, s)).collect(),
            instance_score: 0.9,
            area: 10.0,
            image_id: ImageId(0),
        }
    }

    #[test]
    fn pseudolabel_screening() {
        let out = screen_keypoint_pseudolabels(&[kp_pose(&[0.95; 4])], 0.9).unwrap();
        assert!(out[0].keypoints.iter().all(|k| k.visibility == Visibility::LabeledVisible));
        assert!(screen_keypoint_pseudolabels(&[kp_pose(&[0.5; 4])], 0.9).unwrap().is_empty());

        let scores = [0.91, 0.9, 0.2, 0.99, 0.9000001];
        let out = screen_keypoint_pseudolabels(&[kp_pose(&scores)], 0.9).unwrap();
        for (k, s) in out[0].keypoints.iter().zip(scores) {
            let expected = if s > 0.9 { Visibility::LabeledVisible } else { Visibility::Unlabeled };
            assert_eq!(k.visibility, expected);
        }
    }

    /// AIC (14) → COCO (17) limb correspondence.
    fn aic_to_coco() -> AlignmentTable {
        AlignmentTable::new(
            "aic",
            14,
            "coco",
            17,
            vec![
                (0, 6),
                (1, 8),
                (2, 10),
                (3, 5),
                (4, 7),
                (5, 9),
                (6, 12),
                (7, 14),
                (8, 16),
                (9, 11),
                (10, 13),
                (11, 15),
            ],
        )
        .unwrap()
    }

    fn aic_pose() -> Pose {
        Pose {
            keypoints: (0..14)
                .map(|i| Keypoint::labeled(i as f64 * 1.5, 100.0 - i as f64, Visibility::LabeledVisible))
                .collect(),
            instance_score: 1.0,
            area: 500.0,
            image_id: ImageId(8),
        }
    }

    #[test]
    fn aic_pose_to_coco() {
        let out = align_skeleton(&aic_pose(), &aic_to_coco()).unwrap();
        assert_eq!(out.keypoints.len(), 17);
        assert_eq!(out.num_labeled(), 12);
        for face in 0..5 {
            assert_eq!(out.keypoints[face].visibility, Visibility::Unlabeled);
        }
        assert_eq!(out.keypoints[6], aic_pose().keypoints[0]);
        assert_eq!(out.area, 500.0);
        assert!(align_skeleton(&out, &aic_to_coco()).is_err());
    }

    #[test]
    fn empty_table_gives_unlabeled_pose() {
        let t = AlignmentTable::new("aic", 14, "coco", 17, vec![]).unwrap();
        let out = align_skeleton(&aic_pose(), &t).unwrap();
        assert_eq!(out.num_labeled(), 0);
    }

    #[test]
    fn round_trip_on_shared_limbs() {
        let fwd = aic_to_coco();
        let back = align_skeleton(&align_skeleton(&aic_pose(), &fwd).unwrap(), &fwd.reversed()).unwrap();
        let orig = aic_pose();
        for &(s, _) in fwd.pairs() {
            assert_eq!(back.keypoints[s].x.to_bits(), orig.keypoints[s].x.to_bits());
            assert_eq!(back.keypoints[s].y.to_bits(), orig.keypoints[s].y.to_bits());
        }
        assert_eq!(back.keypoints[12].visibility, Visibility::Unlabeled);
    }

    #[test]
    fn table_validation() {
        assert!(AlignmentTable::new("a", 3, "b", 3, vec![(0, 1), (1, 1)]).is_err());
        assert!(AlignmentTable::new("a", 3, "b", 3, vec![(0, 1), (0, 2)]).is_err());
        assert!(AlignmentTable::new("a", 3, "b", 3, vec![(3, 1)]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn mining_is_monotone_in_threshold(seed in 0u64..200, lo in 0.0..1.0f64, hi in 0.0..1.0f64) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gts: Vec<DetectionBox> =
                (0..4).map(|_| bx(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), 10.0, 20.0, 1.0, 0)).collect();
            let dets: Vec<DetectionBox> = (0..30)
                .map(|_| bx(rng.random_range(0.0..60.0), rng.random_range(0.0..60.0), 8.0, 8.0, rng.random_range(0.0..1.0), 0))
                .collect();
            let at_hi = mine_hard_negatives(&dets, &gts, hi).unwrap();
            let at_lo = mine_hard_negatives(&dets, &gts, lo).unwrap();
            proptest::prop_assert!(at_hi.iter().all(|d| at_lo.contains(d)));
        }
    }
}
