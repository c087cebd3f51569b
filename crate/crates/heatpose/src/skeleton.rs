//! Skeleton definitions and alignment tables as JSON.

use std::path::Path;

use heatpose_core::prep::AlignmentTable;
use heatpose_core::SkeletonSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

const COCO_JSON: &str = include_str!("../data/coco_skeleton.json");
const AIC_TO_COCO_JSON: &str = include_str!("../data/aic_to_coco.json");

/// `{"name", "keypoints", "oks_k", "flip_pairs"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub name: String,
    pub keypoints: Vec<String>,
    pub oks_k: Vec<f64>,
    #[serde(default)]
    pub flip_pairs: Vec<[usize; 2]>,
}

impl SkeletonFile {
    pub fn into_spec(self) -> Result<SkeletonSpec> {
        let pairs = self.flip_pairs.iter().map(|p| (p[0], p[1])).collect();
        Ok(SkeletonSpec::new(self.name, self.keypoints, self.oks_k, pairs)?)
    }

    pub fn from_spec(spec: &SkeletonSpec) -> Self {
        Self {
            name: spec.name().to_string(),
            keypoints: spec.keypoint_names().to_vec(),
            oks_k: spec.oks_k().to_vec(),
            flip_pairs: spec.flip_pairs().iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

pub fn parse_skeleton(json: &str) -> Result<SkeletonSpec> {
    serde_json::from_str::<SkeletonFile>(json)?.into_spec()
}

/// The 17-keypoint COCO person skeleton.
pub fn coco() -> SkeletonSpec {
    parse_skeleton(COCO_JSON).expect("bundled COCO skeleton is valid")
}

/// Loads a skeleton file, or the COCO skeleton when `path` is `None`.
pub fn load_skeleton(path: Option<&Path>) -> Result<SkeletonSpec> {
    match path {
        Some(p) => parse_skeleton(&String::from_utf8_lossy(&fsutil::read(p)?)),
        None => Ok(coco()),
    }
}

/// Keypoint count of a skeleton known by name.
pub fn builtin_arity(name: &str) -> Option<usize> {
    match name {
        "coco" => Some(17),
        "aic" => Some(14),
        _ => None,
    }
}

/// `{"source", "target", "pairs": [[s, t], ...]}` with optional explicit
/// keypoint counts for skeletons not known by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_keypoints: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_keypoints: Option<usize>,
    pub pairs: Vec<[usize; 2]>,
}

impl TableFile {
    pub fn into_table(self) -> Result<AlignmentTable> {
        let arity = |explicit: Option<usize>, name: &str| {
            explicit
                .or_else(|| builtin_arity(name))
                .ok_or_else(|| Error::format(format!("unknown skeleton {name:?}; give its keypoint count")))
        };
        let (ns, nt) = (arity(self.source_keypoints, &self.source)?, arity(self.target_keypoints, &self.target)?);
        let pairs = self.pairs.iter().map(|p| (p[0], p[1])).collect();
        Ok(AlignmentTable::new(self.source, ns, self.target, nt, pairs)?)
    }
}

pub fn parse_table(json: &str) -> Result<AlignmentTable> {
    serde_json::from_str::<TableFile>(json)?.into_table()
}

pub fn load_table(path: impl AsRef<Path>) -> Result<AlignmentTable> {
    parse_table(&String::from_utf8_lossy(&fsutil::read(path)?))
}

/// AI Challenger (14 keypoints) to COCO limb correspondence.
pub fn aic_to_coco() -> AlignmentTable {
    parse_table(AIC_TO_COCO_JSON).expect("bundled alignment table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_coco() {
        let spec = coco();
        assert_eq!(spec.num_keypoints(), 17);
        assert_eq!(spec.flip_pairs().len(), 8);
        assert_eq!(spec.keypoint_names()[5], "left_shoulder");
        let again = SkeletonFile::from_spec(&spec).into_spec().unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn bundled_table_keeps_twelve_limbs() {
        let t = aic_to_coco();
        assert_eq!((t.source_len(), t.target_len(), t.pairs().len()), (14, 17, 12));
        let targets: Vec<usize> = t.pairs().iter().map(|p| p.1).collect();
        assert!((0..5).all(|face| !targets.contains(&face)));
    }

    #[test]
    fn table_arity_rules() {
        assert!(parse_table(r#"{"source":"x","target":"coco","pairs":[]}"#).is_err());
        let t = parse_table(r#"{"source":"x","target":"coco","source_keypoints":3,"pairs":[[2,0]]}"#).unwrap();
        assert_eq!(t.source_len(), 3);
        assert!(parse_table(r#"{"source":"aic","target":"coco","pairs":[[14,0]]}"#).is_err());
        assert!(matches!(parse_table("{"), Err(Error::Json(_))));
    }

    #[test]
    fn invalid_skeleton_rejected() {
        let bad = r#"{"name":"x","keypoints":["a","b"],"oks_k":[0.1],"flip_pairs":[]}"#;
        assert!(matches!(parse_skeleton(bad), Err(Error::Core(_))));
    }
}
