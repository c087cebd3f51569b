//! Seeded synthetic heatmaps with known peak centers.

use heatpose_core::heatmap::encode_gaussian;
use heatpose_core::{EncodeConfig, HeatmapStack, ImageId, Keypoint, Pose, Visibility};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    /// `(channels, height, width)`.
    pub dims: (usize, usize, usize),
    /// Peak spread in heatmap pixels.
    pub sigma: f64,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise: f64,
    pub seed: u64,
}

/// Exact peak centers, `centers[instance][channel] = [x, y]` in heatmap
/// pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub dims: [usize; 3],
    pub sigma: f64,
    pub noise: f64,
    pub seed: u64,
    pub centers: Vec<Vec<[f64; 2]>>,
}

/// Peaks keep `3σ` away from the borders where the map allows it.
fn center_range(n: usize, sigma: f64) -> (f64, f64) {
    let max = (n - 1) as f64;
    let margin = (3.0 * sigma).min(max / 2.0);
    (margin, max - margin)
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws, for every instance, one uniform center per channel, renders the
/// truncated Gaussian targets and adds noise.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Vec<HeatmapStack>, SynthTruth)> {
    let (c, h, w) = cfg.dims;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Arg(format!("invalid dims {c},{h},{w}")));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Arg(format!("invalid noise {}", cfg.noise)));
    }
    let encode = EncodeConfig {
        sigma: cfg.sigma,
        stride: 1.0,
        ..EncodeConfig::default()
    };
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Arg(e.to_string()))?;
    let (xr, yr) = (center_range(w, cfg.sigma), center_range(h, cfg.sigma));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stacks = Vec::with_capacity(cfg.count);
    let mut centers = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let pts: Vec<[f64; 2]> = (0..c).map(|_| [draw(&mut rng, xr), draw(&mut rng, yr)]).collect();
        let pose = Pose {
            keypoints: pts
                .iter()
                .map(|p| Keypoint::labeled(p[0], p[1], Visibility::LabeledVisible))
                .collect(),
            instance_score: 1.0,
            area: 0.0,
            image_id: ImageId(i as u64),
        };
        let clean = encode_gaussian(&pose, &encode, cfg.dims)?;
        let stack = if cfg.noise > 0.0 {
            let data = clean.into_data().into_iter().map(|v| v + noise.sample(&mut rng)).collect();
            HeatmapStack::new(c, h, w, data)?
        } else {
            clean
        };
        stacks.push(stack);
        centers.push(pts);
    }
    let truth = SynthTruth {
        dims: [c, h, w],
        sigma: cfg.sigma,
        noise: cfg.noise,
        seed: cfg.seed,
        centers,
    };
    Ok((stacks, truth))
}
