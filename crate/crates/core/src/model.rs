//! Domain types shared by every stage: skeletons, keypoints, poses, boxes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Identifier of the image a pose or detection belongs to (COCO integer ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ImageId(pub u64);

/// Keypoint layout of a dataset together with its OKS falloff constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSpec {
    name: String,
    keypoint_names: Vec<String>,
    oks_k: Vec<f64>,
    flip_pairs: Vec<(usize, usize)>,
}

impl SkeletonSpec {
    /// Builds a spec, checking arity of the σ table and flip pair sanity.
    pub fn new(
        name: impl Into<String>,
        keypoint_names: Vec<String>,
        oks_k: Vec<f64>,
        flip_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let k = keypoint_names.len();
        if k == 0 {
            return Err(Error::InvalidSkeleton("at least one keypoint is required".into()));
        }
        if oks_k.len() != k {
            return Err(Error::InvalidSkeleton(format!(
                "{} oks constants for {} keypoints",
                oks_k.len(),
                k
            )));
        }
        if let Some(s) = oks_k.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidSkeleton(format!("oks constant {s} must be positive")));
        }
        let mut seen = alloc::vec![false; k];
        for &(l, r) in &flip_pairs {
            if l == r || l >= k || r >= k {
                return Err(Error::InvalidSkeleton(format!("bad flip pair ({l}, {r})")));
            }
            for i in [l, r] {
                if core::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidSkeleton(format!(
                        "keypoint {i} appears in two flip pairs"
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            keypoint_names,
            oks_k,
            flip_pairs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn keypoint_names(&self) -> &[String] {
        &self.keypoint_names
    }

    /// Per-keypoint normalization constants σ_i.
    pub fn oks_k(&self) -> &[f64] {
        &self.oks_k
    }

    pub fn flip_pairs(&self) -> &[(usize, usize)] {
        &self.flip_pairs
    }

    /// Channel permutation that exchanges left and right keypoints.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.num_keypoints()).collect();
        for &(l, r) in &self.flip_pairs {
            perm.swap(l, r);
        }
        perm
    }
}

/// Ground-truth labeling state of a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Visibility {
    #[default]
    Unlabeled = 0,
    LabeledInvisible = 1,
    LabeledVisible = 2,
}

impl Visibility {
    pub fn from_flag(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Unlabeled),
            1 => Some(Self::LabeledInvisible),
            2 => Some(Self::LabeledVisible),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        self as u8
    }

    pub fn is_labeled(self) -> bool {
        self != Self::Unlabeled
    }
}

/// A keypoint in image coordinates.
///
/// Predictions fill `score` and leave `visibility` unlabeled; ground truth
/// fills `visibility` and leaves `score` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub fn predicted(x: f64, y: f64, score: f64) -> Self {
        Self {
            x,
            y,
            score,
            visibility: Visibility::Unlabeled,
        }
    }

    pub fn labeled(x: f64, y: f64, visibility: Visibility) -> Self {
        Self {
            x,
            y,
            score: 0.0,
            visibility,
        }
    }
}

/// One person instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pose {
    pub keypoints: Vec<Keypoint>,
    pub instance_score: f64,
    /// Instance area in pixels², the `a_p` of OKS.
    pub area: f64,
    pub image_id: ImageId,
}

impl Pose {
    pub fn num_labeled(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visibility.is_labeled()).count()
    }
}

/// Checks a pose against a skeleton and returns it unchanged if it conforms.
pub fn validate_pose(pose: Pose, spec: &SkeletonSpec) -> Result<Pose> {
    if pose.keypoints.len() != spec.num_keypoints() {
        return Err(Error::dims(
            format!("{} keypoints", spec.num_keypoints()),
            format!("{} keypoints", pose.keypoints.len()),
        ));
    }
    for kp in &pose.keypoints {
        if !(kp.x.is_finite() && kp.y.is_finite()) {
            return Err(Error::NonFinite("keypoint coordinate"));
        }
        check_unit("keypoint score", kp.score)?;
    }
    check_unit("instance score", pose.instance_score)?;
    if !pose.area.is_finite() || pose.area < 0.0 {
        return Err(Error::OutOfRange {
            what: "area",
            value: pose.area,
        });
    }
    Ok(pose)
}

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::OutOfRange { what, value });
    }
    Ok(())
}

/// Person box in image pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub image_id: ImageId,
}

impl DetectionBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, score: f64, image_id: ImageId) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox);
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            score,
            image_id,
        })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// True iff the two rectangles overlap with positive area.
///
/// Boxes that only share an edge or a corner do not intersect.
pub fn box_intersects(a: &DetectionBox, b: &DetectionBox) -> bool {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    ix > 0.0 && iy > 0.0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    pub(crate) fn coco_spec() -> SkeletonSpec {
        let names = [
            "nose",
            "left_eye",
            "right_eye",
            "left_ear",
            "right_ear",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hip",
            "right_hip",
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
        ];
        let sigmas = [
            0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72, 0.62, 0.62, 1.07, 1.07, 0.87,
            0.87, 0.89, 0.89,
        ];
        SkeletonSpec::new(
            "coco",
            names.iter().map(|s| s.to_string()).collect(),
            sigmas.iter().map(|s| s / 10.0).collect(),
            vec![(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)],
        )
        .unwrap()
    }

    fn pose(k: usize) -> Pose {
        Pose {
            keypoints: (0..k)
                .map(|i| Keypoint::predicted(i as f64, 2.0 * i as f64, 0.5))
                .collect(),
            instance_score: 0.9,
            area: 100.0,
            image_id: ImageId(1),
        }
    }

    #[test]
    fn accepts_matching_arity_and_is_idempotent() {
        let spec = coco_spec();
        let p = validate_pose(pose(17), &spec).unwrap();
        assert_eq!(validate_pose(p.clone(), &spec).unwrap(), p);
    }

    #[test]
    fn rejects_aic_arity_against_coco() {
        assert!(matches!(
            validate_pose(pose(14), &coco_spec()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_scores_and_coordinates() {
        let spec = coco_spec();
        let mut p = pose(17);
        p.keypoints[3].score = 1.5;
        assert!(matches!(validate_pose(p, &spec), Err(Error::OutOfRange { .. })));
        let mut p = pose(17);
        p.keypoints[0].x = f64::NAN;
        assert!(matches!(validate_pose(p, &spec), Err(Error::NonFinite(_))));
    }

    #[test]
    fn skeleton_invariants() {
        let names = || vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert!(SkeletonSpec::new("t", vec![], vec![], vec![]).is_err());
        assert!(SkeletonSpec::new("t", names(), vec![0.1, 0.1], vec![]).is_err());
        assert!(SkeletonSpec::new("t", names(), vec![0.1, 0.0, 0.1], vec![]).is_err());
        assert!(SkeletonSpec::new("t", names(), vec![0.1; 3], vec![(0, 3)]).is_err());
        assert!(SkeletonSpec::new("t", names(), vec![0.1; 3], vec![(0, 1), (1, 2)]).is_err());
        assert!(SkeletonSpec::new("t", names(), vec![0.1; 3], vec![(1, 1)]).is_err());
        let s = SkeletonSpec::new("t", names(), vec![0.1; 3], vec![(0, 2)]).unwrap();
        assert_eq!(s.flip_permutation(), vec![2, 1, 0]);
    }

    #[test]
    fn box_intersection_cases() {
        let b = |x, y, w, h| DetectionBox::new(x, y, w, h, 1.0, ImageId(0)).unwrap();
        assert!(box_intersects(&b(0.0, 0.0, 10.0, 10.0), &b(0.0, 0.0, 10.0, 10.0)));
        assert!(!box_intersects(&b(0.0, 0.0, 10.0, 10.0), &b(10.0, 0.0, 10.0, 10.0)));
        assert!(!box_intersects(&b(0.0, 0.0, 10.0, 10.0), &b(10.0, 10.0, 5.0, 5.0)));
        // overlap is the 5×5 square [5,10]²
        let (a, c) = (b(0.0, 0.0, 10.0, 10.0), b(5.0, 5.0, 10.0, 10.0));
        assert!(box_intersects(&a, &c));
        let overlap = ((a.x + a.w).min(c.x + c.w) - a.x.max(c.x))
            * ((a.y + a.h).min(c.y + c.h) - a.y.max(c.y));
        assert_eq!(overlap, 25.0);
        assert!(DetectionBox::new(0.0, 0.0, 0.0, 1.0, 1.0, ImageId(0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn box_intersects_is_symmetric(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, aw in 0.1..40.0f64, ah in 0.1..40.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64, bw in 0.1..40.0f64, bh in 0.1..40.0f64,
        ) {
            let a = DetectionBox::new(ax, ay, aw, ah, 1.0, ImageId(0)).unwrap();
            let b = DetectionBox::new(bx, by, bw, bh, 1.0, ImageId(0)).unwrap();
            proptest::prop_assert_eq!(box_intersects(&a, &b), box_intersects(&b, &a));
        }
    }
}
