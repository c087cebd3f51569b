//! Heatmap-to-coordinate decoding with sub-pixel refinement.
//!
//! Every refinement starts from the integer argmax and moves at most half a
//! pixel per axis. Degenerate second-order fits fall back to the next simpler
//! technique: paraboloid → parabola → quarter shift.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::heatmap::{GaussianKernel, HeatmapStack};
use crate::model::{DetectionBox, Keypoint, Pose, SkeletonSpec};

/// Guard for vanishing second-order denominators.
pub const EPSILON: f64 = 1e-12;

/// Largest shift a refinement may apply on one axis.
pub const MAX_SHIFT: f64 = 0.5;

/// Borrowed single-channel heatmap, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    data: &'a [f64],
    width: usize,
    height: usize,
}

impl<'a> Channel<'a> {
    pub fn new(data: &'a [f64], width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::dims(
                format!("{width}x{height} plane"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            data,
            width,
            height,
        })
    }

    pub fn of(stack: &'a HeatmapStack, c: usize) -> Self {
        Self {
            data: stack.channel(c),
            width: stack.width(),
            height: stack.height(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Peak location in heatmap coordinates.
///
/// `col`/`row` is the integer argmax the estimate was refined from; `score`
/// is the channel value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub x: f64,
    pub y: f64,
    pub col: usize,
    pub row: usize,
    pub score: f64,
}

impl PeakEstimate {
    fn shifted(self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.col as f64 + dx,
            y: self.row as f64 + dy,
            ..self
        }
    }
}

/// Position of the maximum; ties go to the smallest row-major index.
pub fn argmax_decode(ch: Channel<'_>) -> PeakEstimate {
    let mut best = 0usize;
    let mut best_val = ch.data[0];
    for (i, &v) in ch.data.iter().enumerate().skip(1) {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let (row, col) = (best / ch.width, best % ch.width);
    PeakEstimate {
        x: col as f64,
        y: row as f64,
        col,
        row,
        score: best_val,
    }
}

/// Samples at `center - 1`, `center`, `center + 1` along one axis, or `None`
/// when the peak sits on that axis' border.
fn neighbors(ch: Channel<'_>, peak: &PeakEstimate, horizontal: bool) -> Option<[f64; 3]> {
    let (c, r) = (peak.col, peak.row);
    if horizontal {
        (c > 0 && c + 1 < ch.width).then(|| [ch.at(c - 1, r), ch.at(c, r), ch.at(c + 1, r)])
    } else {
        (r > 0 && r + 1 < ch.height).then(|| [ch.at(c, r - 1), ch.at(c, r), ch.at(c, r + 1)])
    }
}

fn quarter_axis(z: Option<[f64; 3]>) -> f64 {
    match z {
        Some([lo, _, hi]) if hi > lo => 0.25,
        Some([lo, _, hi]) if hi < lo => -0.25,
        _ => 0.0,
    }
}

/// Moves a quarter pixel toward the larger neighbor on each axis.
pub fn quarter_shift(ch: Channel<'_>, peak: PeakEstimate) -> PeakEstimate {
    let dx = quarter_axis(neighbors(ch, &peak, true));
    let dy = quarter_axis(neighbors(ch, &peak, false));
    peak.shifted(dx, dy)
}

/// Vertex offset of the parabola through three equally spaced samples.
fn parabola_axis(z: Option<[f64; 3]>) -> f64 {
    let Some([z0, z1, z2]) = z else {
        return 0.0;
    };
    let den = z0 + z2 - 2.0 * z1;
    if den.abs() < EPSILON {
        return quarter_axis(z);
    }
    let shift = (z0 - z2) / (2.0 * den);
    if !shift.is_finite() {
        return quarter_axis(z);
    }
    shift.clamp(-MAX_SHIFT, MAX_SHIFT)
}

/// Fits a parabola per axis through the argmax and its two neighbors.
pub fn parabola_refine(ch: Channel<'_>, peak: PeakEstimate) -> PeakEstimate {
    let dx = parabola_axis(neighbors(ch, &peak, true));
    let dy = parabola_axis(neighbors(ch, &peak, false));
    peak.shifted(dx, dy)
}

/// Coefficients of `z = a x² + b y² + c xy + d x + e y + f` around the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaboloidCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl ParaboloidCoefficients {
    /// Fits the 3×3 patch `z[row][col]` with the origin at its center.
    ///
    /// The closed forms are the weighted least-squares solution with
    /// separable binomial weights (1, 2, 1) ⊗ (1, 2, 1); on patches sampled
    /// from an exact quadratic they coincide with the unweighted fit.
    pub fn fit(z: &[[f64; 3]; 3]) -> Self {
        let a = (2.0 * (z[1][2] + z[1][0] - 2.0 * z[1][1])
            + (z[0][2] + z[0][0] - 2.0 * z[0][1])
            + (z[2][2] + z[2][0] - 2.0 * z[2][1]))
            / 8.0;
        let b = (2.0 * (z[0][1] + z[2][1] - 2.0 * z[1][1])
            + (z[0][0] + z[2][0] - 2.0 * z[1][0])
            + (z[0][2] + z[2][2] - 2.0 * z[1][2]))
            / 8.0;
        let c = (z[0][0] + z[2][2] - z[0][2] - z[2][0]) / 4.0;
        let d = ((z[0][2] - z[0][0]) + (z[2][2] - z[2][0]) + 2.0 * (z[1][2] - z[1][0])) / 8.0;
        let e = ((z[2][0] - z[0][0]) + (z[2][2] - z[0][2]) + 2.0 * (z[2][1] - z[0][1])) / 8.0;
        Self { a, b, c, d, e }
    }

    /// Stationary point relative to the patch center, if the fit is not
    /// degenerate.
    pub fn stationary_point(&self) -> Option<(f64, f64)> {
        let Self { a, b, c, d, e } = *self;
        let den = c * c - 4.0 * a * b;
        if den.abs() < EPSILON {
            return None;
        }
        let x = (2.0 * b * d - c * e) / den;
        let y = (2.0 * a * e - c * d) / den;
        (x.is_finite() && y.is_finite()).then_some((x, y))
    }
}

/// 3×3 neighborhood of the peak, `None` if the peak touches any border.
pub fn patch3x3(ch: Channel<'_>, peak: &PeakEstimate) -> Option<[[f64; 3]; 3]> {
    let (c, r) = (peak.col, peak.row);
    if c == 0 || r == 0 || c + 1 >= ch.width || r + 1 >= ch.height {
        return None;
    }
    let mut z = [[0.0; 3]; 3];
    for (dr, zrow) in z.iter_mut().enumerate() {
        for (dc, v) in zrow.iter_mut().enumerate() {
            *v = ch.at(c + dc - 1, r + dr - 1);
        }
    }
    Some(z)
}

/// Fits a paraboloid to the 3×3 neighborhood and jumps to its extremum.
///
/// Border peaks, degenerate fits and shifts beyond half a pixel fall back to
/// [`parabola_refine`].
pub fn paraboloid_refine(ch: Channel<'_>, peak: PeakEstimate) -> PeakEstimate {
    let shift = patch3x3(ch, &peak)
        .and_then(|z| ParaboloidCoefficients::fit(&z).stationary_point())
        .filter(|(dx, dy)| dx.abs() <= MAX_SHIFT && dy.abs() <= MAX_SHIFT);
    match shift {
        Some((dx, dy)) => peak.shifted(dx, dy),
        None => parabola_refine(ch, peak),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Refinement {
    None,
    QuarterShift,
    #[default]
    Parabola,
    Paraboloid,
}

impl Refinement {
    pub const ALL: [Refinement; 4] = [
        Refinement::None,
        Refinement::QuarterShift,
        Refinement::Parabola,
        Refinement::Paraboloid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Refinement::None => "none",
            Refinement::QuarterShift => "quarter",
            Refinement::Parabola => "parabola",
            Refinement::Paraboloid => "paraboloid",
        }
    }

    pub fn apply(self, ch: Channel<'_>, peak: PeakEstimate) -> PeakEstimate {
        match self {
            Refinement::None => peak,
            Refinement::QuarterShift => quarter_shift(ch, peak),
            Refinement::Parabola => parabola_refine(ch, peak),
            Refinement::Paraboloid => paraboloid_refine(ch, peak),
        }
    }

    /// Argmax followed by this refinement.
    pub fn locate(self, ch: Channel<'_>) -> PeakEstimate {
        self.apply(ch, argmax_decode(ch))
    }
}

impl FromStr for Refinement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Refinement::None,
            "quarter" | "quarter_shift" | "0.25" => Refinement::QuarterShift,
            "parabola" => Refinement::Parabola,
            "paraboloid" => Refinement::Paraboloid,
            other => return Err(Error::InvalidParams(format!("unknown refinement {other:?}"))),
        })
    }
}

impl core::fmt::Display for Refinement {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecodeOptions {
    pub refinement: Refinement,
    /// Gaussian pre-filter std in heatmap pixels; `None` disables filtering.
    pub filter_sigma: Option<f64>,
}

/// Reusable decoder holding the filter kernel and scratch buffers.
#[derive(Debug, Clone)]
pub struct Decoder {
    refinement: Refinement,
    kernel: Option<GaussianKernel>,
    plane: Vec<f64>,
    scratch: Vec<f64>,
}

impl Decoder {
    pub fn new(opts: DecodeOptions) -> Result<Self> {
        let kernel = opts.filter_sigma.map(GaussianKernel::new).transpose()?;
        Ok(Self {
            refinement: opts.refinement,
            kernel,
            plane: Vec::new(),
            scratch: Vec::new(),
        })
    }

    /// Peak of channel `c` in heatmap coordinates, after optional filtering.
    pub fn locate(&mut self, h: &HeatmapStack, c: usize) -> PeakEstimate {
        let (w, ht) = (h.width(), h.height());
        match &self.kernel {
            Some(kernel) => {
                self.plane.resize(w * ht, 0.0);
                kernel.filter_plane(h.channel(c), &mut self.plane, w, ht, &mut self.scratch);
                let ch = Channel {
                    data: &self.plane,
                    width: w,
                    height: ht,
                };
                self.refinement.locate(ch)
            }
            None => self.refinement.locate(Channel::of(h, c)),
        }
    }

    /// Decodes one person crop into image coordinates.
    ///
    /// The heatmap covers `bbox`; heatmap pixel centers map to the centers
    /// of the image-pixel blocks they cover:
    /// `x_img = bbox.x + (x + 0.5) * bbox.w / W - 0.5`.
    pub fn decode(&mut self, h: &HeatmapStack, bbox: &DetectionBox, num_keypoints: usize) -> Result<Pose> {
        if h.channels() != num_keypoints {
            return Err(Error::dims(
                format!("{num_keypoints} channels"),
                format!("{} channels", h.channels()),
            ));
        }
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::InvalidBox);
        }
        let sx = bbox.w / h.width() as f64;
        let sy = bbox.h / h.height() as f64;
        let mut keypoints = Vec::with_capacity(num_keypoints);
        let mut score_sum = 0.0;
        for c in 0..num_keypoints {
            let peak = self.locate(h, c);
            let score = peak.score.clamp(0.0, 1.0);
            score_sum += score;
            keypoints.push(Keypoint::predicted(
                bbox.x + (peak.x + 0.5) * sx - 0.5,
                bbox.y + (peak.y + 0.5) * sy - 0.5,
                score,
            ));
        }
        Ok(Pose {
            keypoints,
            instance_score: (bbox.score * score_sum / num_keypoints as f64).clamp(0.0, 1.0),
            area: bbox.area(),
            image_id: bbox.image_id,
        })
    }
}

/// Full per-instance decode: filter, argmax, refine, crop-back.
pub fn decode_pose(
    h: &HeatmapStack,
    bbox: &DetectionBox,
    opts: DecodeOptions,
    spec: &SkeletonSpec,
) -> Result<Pose> {
    Decoder::new(opts)?.decode(h, bbox, spec.num_keypoints())
}
