//! COCO-style keypoint JSON: annotation files, detection lists, keypoint
//! results and evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use heatpose_core::metrics::EvalReport;
use heatpose_core::model::validate_pose;
use heatpose_core::{DetectionBox, ImageId, Keypoint, Pose, SkeletonSpec, Visibility};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

fn person() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageEntry {
    id: u64,
    #[serde(default)]
    width: u32,
    #[serde(default)]
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    num_keypoints: usize,
    bbox: [f64; 4],
    area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationFile {
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionEntry {
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultEntry {
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    keypoints: Vec<f64>,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageInfo {
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

/// One ground-truth person.
#[derive(Debug, Clone, PartialEq)]
pub struct GtAnnotation {
    pub id: u64,
    pub pose: Pose,
    /// `[x, y, w, h]` as stored; may be degenerate.
    pub bbox: [f64; 4],
}

/// Images, ground-truth persons and (optionally) detections of a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: BTreeMap<ImageId, ImageInfo>,
    pub annotations: Vec<GtAnnotation>,
    pub detections: Vec<DetectionBox>,
}

impl AnnotationSet {
    pub fn gt_poses(&self) -> Vec<Pose> {
        self.annotations.iter().map(|a| a.pose.clone()).collect()
    }

    /// Ground-truth boxes with positive size, scored 1.
    pub fn gt_boxes(&self) -> Vec<DetectionBox> {
        self.annotations
            .iter()
            .filter_map(|a| {
                let [x, y, w, h] = a.bbox;
                DetectionBox::new(x, y, w, h, 1.0, a.pose.image_id).ok()
            })
            .collect()
    }

    pub fn image_ids(&self) -> Vec<ImageId> {
        self.images.keys().copied().collect()
    }
}

fn triplets(flat: &[f64], k: usize, what: &str) -> Result<()> {
    if flat.len() != 3 * k {
        return Err(Error::format(format!(
            "{what}: keypoints has {} numbers, expected {} for {k} keypoints",
            flat.len(),
            3 * k
        )));
    }
    Ok(())
}

fn gt_keypoints(flat: &[f64], k: usize, ann_id: u64) -> Result<Vec<Keypoint>> {
    triplets(flat, k, &format!("annotation {ann_id}"))?;
    flat.chunks_exact(3)
        .map(|t| {
            let v = Some(t[2])
                .filter(|v| v.fract() == 0.0 && (0.0..=2.0).contains(v))
                .and_then(|v| Visibility::from_flag(v as u8))
                .ok_or_else(|| Error::format(format!("annotation {ann_id}: visibility {} not in {{0,1,2}}", t[2])))?;
            Ok(Keypoint::labeled(t[0], t[1], v))
        })
        .collect()
}

/// Parses an annotation file whose poses have `num_keypoints` keypoints.
pub fn parse_annotations(json: &str, num_keypoints: usize) -> Result<AnnotationSet> {
    let file: AnnotationFile = serde_json::from_str(json)?;
    let images: BTreeMap<ImageId, ImageInfo> = file
        .images
        .into_iter()
        .map(|im| {
            let info = ImageInfo {
                width: im.width,
                height: im.height,
                file_name: im.file_name,
            };
            (ImageId(im.id), info)
        })
        .collect();
    let known = |id: u64| {
        if images.contains_key(&ImageId(id)) {
            Ok(ImageId(id))
        } else {
            Err(Error::Core(heatpose_core::Error::UnknownImage(id)))
        }
    };
    let mut annotations = Vec::with_capacity(file.annotations.len());
    for a in file.annotations {
        let pose = Pose {
            keypoints: gt_keypoints(&a.keypoints, num_keypoints, a.id)?,
            instance_score: 1.0,
            area: a.area,
            image_id: known(a.image_id)?,
        };
        annotations.push(GtAnnotation {
            id: a.id,
            pose,
            bbox: a.bbox,
        });
    }
    let detections = file
        .detections
        .into_iter()
        .map(|d| {
            known(d.image_id)?;
            detection_box(&d)
        })
        .collect::<Result<_>>()?;
    Ok(AnnotationSet {
        images,
        annotations,
        detections,
    })
}

pub fn load_annotations(path: impl AsRef<Path>, num_keypoints: usize) -> Result<AnnotationSet> {
    parse_annotations(&read_text(path)?, num_keypoints)
}

pub fn annotations_to_json(set: &AnnotationSet) -> Result<String> {
    let file = AnnotationFile {
        images: set
            .images
            .iter()
            .map(|(id, info)| ImageEntry {
                id: id.0,
                width: info.width,
                height: info.height,
                file_name: info.file_name.clone(),
            })
            .collect(),
        annotations: set
            .annotations
            .iter()
            .map(|a| AnnotationEntry {
                id: a.id,
                image_id: a.pose.image_id.0,
                category_id: person(),
                keypoints: a
                    .pose
                    .keypoints
                    .iter()
                    .flat_map(|k| [k.x, k.y, k.visibility.flag() as f64])
                    .collect(),
                num_keypoints: a.pose.num_labeled(),
                bbox: a.bbox,
                area: a.pose.area,
            })
            .collect(),
        detections: set.detections.iter().map(detection_entry).collect(),
    };
    to_json(&file)
}

fn detection_box(d: &DetectionEntry) -> Result<DetectionBox> {
    let [x, y, w, h] = d.bbox;
    if !(0.0..=1.0).contains(&d.score) {
        return Err(Error::format(format!("detection score {} outside [0, 1]", d.score)));
    }
    Ok(DetectionBox::new(x, y, w, h, d.score, ImageId(d.image_id))?)
}

fn detection_entry(d: &DetectionBox) -> DetectionEntry {
    DetectionEntry {
        image_id: d.image_id.0,
        category_id: person(),
        bbox: [d.x, d.y, d.w, d.h],
        score: d.score,
    }
}

/// A JSON array of `{"image_id", "bbox", "score"}` detections.
pub fn parse_detections(json: &str) -> Result<Vec<DetectionBox>> {
    let entries: Vec<DetectionEntry> = serde_json::from_str(json)?;
    entries.iter().map(detection_box).collect()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionBox>> {
    parse_detections(&read_text(path)?)
}

pub fn detections_to_json(dets: &[DetectionBox]) -> Result<String> {
    to_json(&dets.iter().map(detection_entry).collect::<Vec<_>>())
}

/// Area of the keypoints' bounding rectangle.
pub fn keypoint_extent_area(kps: &[Keypoint]) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in kps {
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    if kps.is_empty() {
        0.0
    } else {
        (x1 - x0) * (y1 - y0)
    }
}

/// Parses keypoint results (`[x, y, score] × K` per entry).
///
/// Entries without `"area"` take the area of their keypoints' bounding
/// rectangle.
pub fn parse_results(json: &str, spec: &SkeletonSpec) -> Result<Vec<Pose>> {
    let entries: Vec<ResultEntry> = serde_json::from_str(json)?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            triplets(&e.keypoints, spec.num_keypoints(), &format!("result {i}"))?;
            let keypoints: Vec<Keypoint> = e
                .keypoints
                .chunks_exact(3)
                .map(|t| Keypoint::predicted(t[0], t[1], t[2]))
                .collect();
            let area = e.area.unwrap_or_else(|| keypoint_extent_area(&keypoints));
            let pose = Pose {
                keypoints,
                instance_score: e.score,
                area,
                image_id: ImageId(e.image_id),
            };
            Ok(validate_pose(pose, spec)?)
        })
        .collect()
}

pub fn load_results(path: impl AsRef<Path>, spec: &SkeletonSpec) -> Result<Vec<Pose>> {
    parse_results(&read_text(path)?, spec)
}

/// `[{"image_id", "category_id": 1, "keypoints", "score", "area"}]`.
pub fn results_to_json(poses: &[Pose]) -> Result<String> {
    let entries: Vec<ResultEntry> = poses
        .iter()
        .map(|p| ResultEntry {
            image_id: p.image_id.0,
            category_id: person(),
            keypoints: p.keypoints.iter().flat_map(|k| [k.x, k.y, k.score]).collect(),
            score: p.instance_score,
            area: Some(p.area),
        })
        .collect();
    to_json(&entries)
}

/// The ten headline numbers of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub ap: f64,
    pub ap_50: f64,
    pub ap_75: f64,
    pub ap_m: f64,
    pub ap_l: f64,
    pub ar: f64,
    pub ar_50: f64,
    pub ar_75: f64,
    pub ar_m: f64,
    pub ar_l: f64,
}

impl From<&EvalReport> for ReportJson {
    fn from(r: &EvalReport) -> Self {
        Self {
            ap: r.mean_ap,
            ap_50: r.ap(0.5),
            ap_75: r.ap(0.75),
            ap_m: r.ap_medium,
            ap_l: r.ap_large,
            ar: r.mean_ar,
            ar_50: r.ar(0.5),
            ar_75: r.ar(0.75),
            ar_m: r.ar_medium,
            ar_l: r.ar_large,
        }
    }
}

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    to_json(&ReportJson::from(report))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_text(path: impl AsRef<Path>) -> Result<String> {
    String::from_utf8(fsutil::read(path)?).map_err(|e| Error::format(format!("not UTF-8: {e}")))
}
