//! Wall-clock timing of the heatmap-to-coordinate stage.

use std::hint::black_box;
use std::time::Instant;

use heatpose_core::subpixel::Decoder;
use heatpose_core::{DecodeOptions, DetectionBox, HeatmapStack, Refinement};
use rayon::prelude::*;
use serde::Serialize;

use crate::batch::{identity_boxes, thread_pool};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    /// Timed passes over the whole batch, after one untimed warmup pass.
    pub repeat: usize,
    /// Worker count of the multi-threaded run; 0 uses every core.
    pub threads: usize,
    pub filter_sigma: Option<f64>,
}

/// Per-instance time statistics over the timed passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub threads: usize,
    pub samples: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub instances_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub refine: String,
    pub instances: usize,
    pub dims: [usize; 3],
    pub single_thread: Timing,
    pub multi_thread: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub filter_sigma: Option<f64>,
    pub repeat: usize,
    pub entries: Vec<BenchEntry>,
}

fn summarize(mut per_instance_us: Vec<f64>, threads: usize) -> Timing {
    per_instance_us.sort_by(f64::total_cmp);
    let n = per_instance_us.len();
    let mean = per_instance_us.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        per_instance_us[n / 2]
    } else {
        0.5 * (per_instance_us[n / 2 - 1] + per_instance_us[n / 2])
    };
    Timing {
        threads,
        samples: n,
        mean_us: mean,
        median_us: median,
        instances_per_s: 1e6 / mean,
    }
}

fn pass_serial(decoder: &mut Decoder, stacks: &[HeatmapStack], boxes: &[DetectionBox]) -> Result<()> {
    for (h, b) in stacks.iter().zip(boxes) {
        black_box(decoder.decode(black_box(h), b, h.channels())?);
    }
    Ok(())
}

fn pass_parallel(opts: DecodeOptions, stacks: &[HeatmapStack], boxes: &[DetectionBox]) -> Result<()> {
    stacks
        .par_iter()
        .zip(boxes)
        .map_init(
            || Decoder::new(opts).expect("options checked by caller"),
            |d, (h, b)| d.decode(black_box(h), b, h.channels()).map(black_box),
        )
        .collect::<heatpose_core::Result<Vec<_>>>()?;
    Ok(())
}

fn time_passes(repeat: usize, n: usize, mut pass: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    pass()?;
    (0..repeat)
        .map(|_| {
            let start = Instant::now();
            pass()?;
            Ok(start.elapsed().as_secs_f64() * 1e6 / n as f64)
        })
        .collect()
}

/// Times the full decode (filter, argmax, refinement, crop-back) of every
/// stack for each refinement, single-threaded and on `threads` workers.
pub fn run_bench(stacks: &[HeatmapStack], refinements: &[Refinement], cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeat == 0 {
        return Err(Error::Arg("repeat must be at least 1".into()));
    }
    let first = stacks.first().ok_or_else(|| Error::Arg("no heatmaps to time".into()))?;
    let boxes = identity_boxes(stacks, 4.0)?;
    let pool = thread_pool(cfg.threads)?;
    let mut entries = Vec::with_capacity(refinements.len());
    for &refinement in refinements {
        let opts = DecodeOptions {
            refinement,
            filter_sigma: cfg.filter_sigma,
        };
        let mut decoder = Decoder::new(opts)?;
        let single = time_passes(cfg.repeat, stacks.len(), || pass_serial(&mut decoder, stacks, &boxes))?;
        let multi = pool.install(|| time_passes(cfg.repeat, stacks.len(), || pass_parallel(opts, stacks, &boxes)))?;
        entries.push(BenchEntry {
            refine: refinement.name().to_string(),
            instances: stacks.len(),
            dims: [first.channels(), first.height(), first.width()],
            single_thread: summarize(single, 1),
            multi_thread: summarize(multi, pool.current_num_threads()),
        });
    }
    Ok(BenchReport {
        filter_sigma: cfg.filter_sigma,
        repeat: cfg.repeat,
        entries,
    })
}
