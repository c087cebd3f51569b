//! Batch decoding of heatmap stacks on a thread pool.

use heatpose_core::heatmap::flip_fuse_ssp;
use heatpose_core::subpixel::Decoder;
use heatpose_core::{DecodeOptions, DetectionBox, HeatmapStack, Pose, SkeletonSpec};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Everything that turns a network output into a pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub decode: DecodeOptions,
    /// Sub-pixel shift for fusing flipped heatmaps; used only when flipped
    /// stacks are supplied.
    pub ssp: f64,
}

/// A pool with `threads` workers, or one per available core when 0.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Arg(format!("thread pool: {e}")))
}

fn decode_one(
    decoder: &mut Decoder,
    h: &HeatmapStack,
    flipped: Option<&HeatmapStack>,
    bbox: &DetectionBox,
    cfg: &PipelineConfig,
    spec: &SkeletonSpec,
) -> Result<Pose> {
    let pose = match flipped {
        Some(f) => decoder.decode(&flip_fuse_ssp(h, f, cfg.ssp, spec)?, bbox, spec.num_keypoints()),
        None => decoder.decode(h, bbox, spec.num_keypoints()),
    };
    Ok(pose?)
}

/// Decodes stack `i` inside `boxes[i]`, optionally fusing `flipped[i]`
/// first. Output order follows input order regardless of `threads`.
pub fn decode_batch(
    stacks: &[HeatmapStack],
    flipped: Option<&[HeatmapStack]>,
    boxes: &[DetectionBox],
    cfg: &PipelineConfig,
    spec: &SkeletonSpec,
    threads: usize,
) -> Result<Vec<Pose>> {
    if boxes.len() != stacks.len() {
        return Err(Error::Arg(format!("{} stacks but {} boxes", stacks.len(), boxes.len())));
    }
    if let Some(f) = flipped {
        if f.len() != stacks.len() {
            return Err(Error::Arg(format!("{} stacks but {} flipped stacks", stacks.len(), f.len())));
        }
    }
    Decoder::new(cfg.decode)?;
    thread_pool(threads)?.install(|| {
        (0..stacks.len())
            .into_par_iter()
            .map_init(
                || Decoder::new(cfg.decode).expect("options checked above"),
                |decoder, i| decode_one(decoder, &stacks[i], flipped.map(|f| &f[i]), &boxes[i], cfg, spec),
            )
            .collect()
    })
}

/// Boxes that map each heatmap pixel onto a `stride`-sized image cell.
pub fn identity_boxes(stacks: &[HeatmapStack], stride: f64) -> Result<Vec<DetectionBox>> {
    stacks
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let b = DetectionBox::new(
                0.0,
                0.0,
                s.width() as f64 * stride,
                s.height() as f64 * stride,
                1.0,
                heatpose_core::ImageId(i as u64),
            )?;
            Ok(b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::coco;
    use heatpose_core::subpixel::decode_pose;
    use heatpose_core::Refinement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stacks(n: usize) -> Vec<HeatmapStack> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (0..n)
            .map(|_| HeatmapStack::new(17, 12, 10, (0..17 * 120).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn matches_per_instance_decode_at_any_width() {
        let spec = coco();
        let s = stacks(9);
        let boxes = identity_boxes(&s, 4.0).unwrap();
        let cfg = PipelineConfig {
            decode: DecodeOptions {
                refinement: Refinement::Paraboloid,
                filter_sigma: Some(1.0),
            },
            ssp: 0.0,
        };
        let one = decode_batch(&s, None, &boxes, &cfg, &spec, 1).unwrap();
        let four = decode_batch(&s, None, &boxes, &cfg, &spec, 4).unwrap();
        assert_eq!(one, four);
        for (i, p) in one.iter().enumerate() {
            assert_eq!(*p, decode_pose(&s[i], &boxes[i], cfg.decode, &spec).unwrap());
        }
    }

    #[test]
    fn flipped_fusion_is_applied() {
        let spec = coco();
        let s = stacks(2);
        let boxes = identity_boxes(&s, 1.0).unwrap();
        let cfg = PipelineConfig {
            ssp: 1.0,
            ..Default::default()
        };
        let fused: Vec<HeatmapStack> = s.iter().map(|h| flip_fuse_ssp(h, h, 1.0, &spec).unwrap()).collect();
        let direct = decode_batch(&fused, None, &boxes, &cfg, &spec, 2).unwrap();
        assert_eq!(decode_batch(&s, Some(&s), &boxes, &cfg, &spec, 2).unwrap(), direct);
        assert!(decode_batch(&s, Some(&s[..1]), &boxes, &cfg, &spec, 2).is_err());
        assert!(decode_batch(&s, None, &boxes[..1], &cfg, &spec, 2).is_err());
    }
}
