//! Command-line surface. Results go to stdout (or `--out`), progress to
//! stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use heatpose_core::metrics::{evaluate_images, ApMode, EvalConfig};
use heatpose_core::nms::{pose_nms, NmsConfig, NmsMode, OksConvention};
use heatpose_core::prep::{align_skeleton, apply_instance_cut, mine_hard_negatives, screen_instance_threshold};
use heatpose_core::{DecodeOptions, Refinement};
use serde::Serialize;

use crate::batch::{decode_batch, identity_boxes, PipelineConfig};
use crate::bench::{run_bench, BenchConfig};
use crate::coco::{self, to_json, AnnotationSet, GtAnnotation};
use crate::error::{Error, Result};
use crate::synth::{synthesize, SynthConfig};
use crate::{fsutil, hmt, skeleton};

#[derive(Debug, Parser)]
#[command(name = "heatpose", version, about = "Top-down keypoint heatmap post-processing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApModeArg {
    Ratio,
    Coco101,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OksArg {
    Coco,
    Literal,
}

impl From<OksArg> for OksConvention {
    fn from(v: OksArg) -> Self {
        match v {
            OksArg::Coco => OksConvention::Coco,
            OksArg::Literal => OksConvention::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NmsModeArg {
    Hard,
    Soft,
}

fn parse_refine(s: &str) -> std::result::Result<Refinement, String> {
    s.parse().map_err(|_| format!("unknown refinement {s:?}; use none, quarter, parabola or paraboloid"))
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad dimension {p:?}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(format!("expected three positive sizes C,H,W, got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode heatmap stacks into keypoint results.
    Decode {
        #[arg(long)]
        heatmaps: PathBuf,
        /// Detection boxes, one per stack in file order. Without it each
        /// stack maps onto `stride`-sized image cells from the origin.
        #[arg(long)]
        boxes: Option<PathBuf>,
        #[arg(long, default_value_t = 4.0)]
        stride: f64,
        #[arg(long, default_value = "parabola", value_parser = parse_refine)]
        refine: Refinement,
        /// Gaussian pre-filter std in heatmap pixels.
        #[arg(long)]
        gauss_sigma: Option<f64>,
        /// Sub-pixel shift applied to the flipped stacks.
        #[arg(long, default_value_t = 1.0)]
        ssp: f64,
        #[arg(long)]
        flip_heatmaps: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score keypoint results against ground-truth annotations.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ratio")]
        ap_mode: ApModeArg,
        #[arg(long, value_enum, default_value = "coco")]
        oks: OksArg,
    },
    /// OKS non-maximum suppression of keypoint results.
    Nms {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, value_enum, default_value = "hard")]
        mode: NmsModeArg,
        #[arg(long, default_value_t = 0.9)]
        thr: f64,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "coco")]
        oks: OksArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep confident detections that overlap no ground-truth box.
    Mine {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        thr: f64,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score threshold that caps the mean detections per image.
    Screen {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        images: usize,
        #[arg(long)]
        target_avg: f64,
    },
    /// Re-express annotations in another skeleton.
    Align {
        #[arg(long)]
        poses: PathBuf,
        /// Alignment table; the bundled AIC-to-COCO table by default.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the heatmap-to-coordinate stage.
    Bench {
        #[arg(long)]
        heatmaps: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_refine,
              default_value = "none,quarter,parabola,paraboloid")]
        refine: Vec<Refinement>,
        #[arg(long, default_value_t = 1000)]
        repeat: usize,
        #[arg(long)]
        gauss_sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Write seeded synthetic heatmaps and their exact peak centers.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, value_parser = parse_dims)]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Writes `text` to `out`, or returns it for stdout.
fn emit(text: String, out: Option<&Path>) -> Result<Option<String>> {
    match out {
        Some(p) => {
            fsutil::write(p, text.as_bytes())?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

#[derive(Serialize)]
struct ScreenJson {
    threshold: f64,
    kept: usize,
    mean_per_image: f64,
}

/// Runs one command; returns what belongs on stdout.
pub fn run(cli: Cli) -> Result<Option<String>> {
    match cli.command {
        Command::Decode {
            heatmaps,
            boxes,
            stride,
            refine,
            gauss_sigma,
            ssp,
            flip_heatmaps,
            spec,
            threads,
            out,
        } => {
            let spec = skeleton::load_skeleton(spec.as_deref())?;
            let stacks = hmt::load_hmt(&heatmaps)?;
            let flipped = flip_heatmaps.map(hmt::load_hmt).transpose()?;
            let boxes = match boxes {
                Some(p) => coco::load_detections(p)?,
                None => identity_boxes(&stacks, stride)?,
            };
            let cfg = PipelineConfig {
                decode: DecodeOptions {
                    refinement: refine,
                    filter_sigma: gauss_sigma,
                },
                ssp,
            };
            let poses = decode_batch(&stacks, flipped.as_deref(), &boxes, &cfg, &spec, threads)?;
            eprintln!("decoded {} instances ({refine})", poses.len());
            emit(coco::results_to_json(&poses)?, out.as_deref())
        }
        Command::Eval {
            preds,
            gt,
            spec,
            ap_mode,
            oks,
        } => {
            let spec = skeleton::load_skeleton(spec.as_deref())?;
            let gt = coco::load_annotations(gt, spec.num_keypoints())?;
            let preds = coco::load_results(preds, &spec)?;
            let cfg = EvalConfig {
                convention: oks.into(),
                ap_mode: match ap_mode {
                    ApModeArg::Ratio => ApMode::Ratio,
                    ApModeArg::Coco101 => ApMode::Coco101,
                },
                ..EvalConfig::default()
            };
            let report = evaluate_images(&gt.image_ids(), &preds, &gt.gt_poses(), &spec, &cfg)?;
            eprintln!("evaluated {} predictions on {} images", preds.len(), gt.images.len());
            Ok(Some(coco::report_to_json(&report)?))
        }
        Command::Nms {
            poses,
            mode,
            thr,
            spec,
            oks,
            out,
        } => {
            let spec = skeleton::load_skeleton(spec.as_deref())?;
            let poses = coco::load_results(poses, &spec)?;
            let mode = match mode {
                NmsModeArg::Hard => NmsMode::Hard,
                NmsModeArg::Soft => NmsMode::Soft,
            };
            let cfg = NmsConfig {
                convention: oks.into(),
                ..NmsConfig::new(thr, mode)?
            };
            let kept = pose_nms(&poses, &cfg, &spec)?;
            eprintln!("kept {} of {} poses", kept.len(), poses.len());
            emit(coco::results_to_json(&kept)?, out.as_deref())
        }
        Command::Mine {
            dets,
            gt,
            thr,
            spec,
            out,
        } => {
            let k = skeleton::load_skeleton(spec.as_deref())?.num_keypoints();
            let gt = coco::load_annotations(gt, k)?;
            let dets = coco::load_detections(dets)?;
            let mined = mine_hard_negatives(&dets, &gt.gt_boxes(), thr)?;
            eprintln!("mined {} hard negatives from {} detections", mined.len(), dets.len());
            emit(coco::detections_to_json(&mined)?, out.as_deref())
        }
        Command::Screen {
            dets,
            images,
            target_avg,
        } => {
            let dets = coco::load_detections(dets)?;
            let cut = screen_instance_threshold(&dets, images, target_avg)?;
            let kept = apply_instance_cut(&dets, &cut).len();
            Ok(Some(to_json(&ScreenJson {
                threshold: cut.threshold,
                kept,
                mean_per_image: kept as f64 / images as f64,
            })?))
        }
        Command::Align { poses, table, out } => {
            let table = match table {
                Some(p) => skeleton::load_table(p)?,
                None => skeleton::aic_to_coco(),
            };
            let set = coco::load_annotations(poses, table.source_len())?;
            let annotations = set
                .annotations
                .iter()
                .map(|a| {
                    Ok(GtAnnotation {
                        pose: align_skeleton(&a.pose, &table)?,
                        ..a.clone()
                    })
                })
                .collect::<Result<_>>()?;
            let aligned = AnnotationSet { annotations, ..set };
            emit(coco::annotations_to_json(&aligned)?, out.as_deref())
        }
        Command::Bench {
            heatmaps,
            refine,
            repeat,
            gauss_sigma,
            threads,
        } => {
            let stacks = hmt::load_hmt(heatmaps)?;
            let cfg = BenchConfig {
                repeat,
                threads,
                filter_sigma: gauss_sigma,
            };
            let report = run_bench(&stacks, &refine, &cfg)?;
            for e in &report.entries {
                eprintln!(
                    "{:>10}: {:.1} us/instance single-threaded, {:.1} us/instance on {} threads",
                    e.refine, e.single_thread.mean_us, e.multi_thread.mean_us, e.multi_thread.threads
                );
            }
            Ok(Some(to_json(&report)?))
        }
        Command::Synth {
            count,
            dims,
            sigma,
            noise,
            seed,
            out,
            truth,
        } => {
            let (stacks, centers) = synthesize(&SynthConfig {
                count,
                dims,
                sigma,
                noise,
                seed,
            })?;
            hmt::save_hmt(&out, &stacks)?;
            eprintln!("wrote {count} stacks to {}", out.display());
            emit(to_json(&centers)?, truth.as_deref())
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<Option<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Arg(e.to_string()))?;
    run(cli)
}
