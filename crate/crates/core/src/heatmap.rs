//! Heatmap stacks: Gaussian target encoding, MSE losses, Gaussian filtering
//! and flip-test fusion with a sub-pixel shift.
//!
//! Heatmap coordinates are image coordinates divided by the stride, with no
//! half-pixel offset: pixel `(row, col)` is centered at `(col, row)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{Pose, SkeletonSpec};

/// `C` channels of `H × W` responses, row-major per channel, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::dims(
                format!("{} values for {channels}x{height}x{width}", channels * height * width),
                format!("{} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("heatmap"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(channels, height, width)?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::dims("dimensions >= 1", format!("{c}x{h}x{w}")));
    }
    Ok(())
}

/// Parameters of the Gaussian target encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    /// Standard deviation in heatmap pixels.
    pub sigma: f64,
    /// Image-to-heatmap downscale factor.
    pub stride: f64,
    pub peak_value: f64,
    /// Support radius in units of `sigma`; values beyond it are exactly 0.
    pub truncate: f64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            stride: 4.0,
            peak_value: 1.0,
            truncate: 3.0,
        }
    }
}

impl EncodeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::OutOfRange {
                what: "sigma",
                value: self.sigma,
            });
        }
        if !(self.stride >= 1.0 && self.stride.is_finite()) {
            return Err(Error::OutOfRange {
                what: "stride",
                value: self.stride,
            });
        }
        if !(self.truncate > 0.0) || !self.peak_value.is_finite() {
            return Err(Error::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Renders one truncated Gaussian peak per keypoint.
///
/// Unlabeled ground-truth keypoints leave their channel all-zero.
pub fn encode_gaussian(
    gt: &Pose,
    cfg: &EncodeConfig,
    dims: (usize, usize, usize),
) -> Result<HeatmapStack> {
    cfg.validate()?;
    let (c, h, w) = dims;
    if gt.keypoints.len() != c {
        return Err(Error::dims(
            format!("{c} channels"),
            format!("{} keypoints", gt.keypoints.len()),
        ));
    }
    let mut out = HeatmapStack::zeros(c, h, w)?;
    let radius = cfg.truncate * cfg.sigma;
    let r2 = radius * radius;
    let denom = 2.0 * cfg.sigma * cfg.sigma;
    for (ch, kp) in gt.keypoints.iter().enumerate() {
        if !kp.visibility.is_labeled() {
            continue;
        }
        if !(kp.x.is_finite() && kp.y.is_finite()) {
            return Err(Error::NonFinite("keypoint coordinate"));
        }
        let cx = kp.x / cfg.stride;
        let cy = kp.y / cfg.stride;
        let Some((x0, x1)) = clip_span(cx, radius, w) else {
            continue;
        };
        let Some((y0, y1)) = clip_span(cy, radius, h) else {
            continue;
        };
        let plane = out.channel_mut(ch);
        for row in y0..=y1 {
            let dy = row as f64 - cy;
            for col in x0..=x1 {
                let dx = col as f64 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 <= r2 {
                    plane[row * w + col] = cfg.peak_value * math::exp(-d2 / denom);
                }
            }
        }
    }
    Ok(out)
}

/// Inclusive pixel range covering `[center - radius, center + radius]`, or
/// `None` when it misses the grid entirely.
fn clip_span(center: f64, radius: f64, len: usize) -> Option<(usize, usize)> {
    let lo = math::ceil(center - radius).max(0.0);
    let hi = math::floor(center + radius).min(len as f64 - 1.0);
    if lo > hi {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Target for hard-negative crops: every value zero.
pub fn encode_all_zero(dims: (usize, usize, usize)) -> Result<HeatmapStack> {
    HeatmapStack::zeros(dims.0, dims.1, dims.2)
}

/// Mean squared error over every channel and pixel.
pub fn mse_loss(h: &HeatmapStack, h_gt: &HeatmapStack) -> Result<f64> {
    h.same_dims(h_gt)?;
    let sum: f64 = h
        .data
        .iter()
        .zip(&h_gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / h.data.len() as f64)
}

/// `l_main + lambda * l_aux`.
pub fn combined_loss(l_main: f64, l_aux: f64, lambda: f64) -> Result<f64> {
    for (what, value) in [("main loss", l_main), ("aux loss", l_aux), ("lambda", lambda)] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::OutOfRange { what, value });
        }
    }
    Ok(l_main + lambda * l_aux)
}

/// Normalized, symmetric 1D Gaussian taps with radius `ceil(3 sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    taps: Vec<f64>,
    radius: usize,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::OutOfRange {
                what: "filter sigma",
                value: sigma,
            });
        }
        let radius = math::ceil(3.0 * sigma) as usize;
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                math::exp(-d * d / (2.0 * sigma * sigma))
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Ok(Self { taps, radius })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Filters one `height × width` plane into `dst` with replicate borders.
    ///
    /// `scratch` is resized as needed; reusing it across calls avoids
    /// reallocating on the hot path.
    pub fn filter_plane(
        &self,
        src: &[f64],
        dst: &mut [f64],
        width: usize,
        height: usize,
        scratch: &mut Vec<f64>,
    ) {
        let r = self.radius;
        let n = width * height;
        debug_assert_eq!(src.len(), n);
        debug_assert_eq!(dst.len(), n);
        scratch.clear();
        scratch.resize(n + width + 2 * r, 0.0);
        let (tmp, pad) = scratch.split_at_mut(n);

        // horizontal pass into tmp
        for row in 0..height {
            let line = &src[row * width..(row + 1) * width];
            pad[..r].fill(line[0]);
            pad[r..r + width].copy_from_slice(line);
            pad[r + width..].fill(line[width - 1]);
            let out = &mut tmp[row * width..(row + 1) * width];
            out.fill(0.0);
            for (t, &k) in self.taps.iter().enumerate() {
                for (o, p) in out.iter_mut().zip(&pad[t..t + width]) {
                    *o += k * p;
                }
            }
        }

        // vertical pass into dst
        for row in 0..height {
            let out = &mut dst[row * width..(row + 1) * width];
            out.fill(0.0);
            for (t, &k) in self.taps.iter().enumerate() {
                let src_row = (row + t).saturating_sub(r).min(height - 1);
                let line = &tmp[src_row * width..(src_row + 1) * width];
                for (o, p) in out.iter_mut().zip(line) {
                    *o += k * p;
                }
            }
        }
    }
}

/// Smooths every channel with a normalized 2D Gaussian of std `filter_sigma`.
pub fn gaussian_filter(h: &HeatmapStack, filter_sigma: f64) -> Result<HeatmapStack> {
    let kernel = GaussianKernel::new(filter_sigma)?;
    let mut out = h.clone();
    let mut scratch = Vec::new();
    let (w, ht) = (h.width, h.height);
    for c in 0..h.channels {
        kernel.filter_plane(h.channel(c), out.channel_mut(c), w, ht, &mut scratch);
    }
    Ok(out)
}

/// Mirrors a stack horizontally and exchanges left/right channels.
///
/// The operation is an involution, so it both produces a flipped-input
/// stack and undoes one.
pub fn mirror(h: &HeatmapStack, spec: &SkeletonSpec) -> Result<HeatmapStack> {
    if h.channels != spec.num_keypoints() {
        return Err(Error::dims(
            format!("{} channels", spec.num_keypoints()),
            format!("{} channels", h.channels),
        ));
    }
    let perm = spec.flip_permutation();
    let mut out = h.clone();
    let w = h.width;
    for (c, &src_c) in perm.iter().enumerate() {
        let src = h.channel(src_c);
        let dst = out.channel_mut(c);
        for (drow, srow) in dst.chunks_exact_mut(w).zip(src.chunks_exact(w)) {
            for (d, s) in drow.iter_mut().zip(srow.iter().rev()) {
                *d = *s;
            }
        }
    }
    Ok(out)
}

/// Fuses a stack with the network output on the mirrored input.
///
/// `h_flipped` is un-mirrored, shifted right by `shift` pixels through linear
/// interpolation with its one-column shifted copy (edge column replicated),
/// and averaged with `h`. `shift = 1` is the classic one-pixel shift.
pub fn flip_fuse_ssp(
    h: &HeatmapStack,
    h_flipped: &HeatmapStack,
    shift: f64,
    spec: &SkeletonSpec,
) -> Result<HeatmapStack> {
    h.same_dims(h_flipped)?;
    if !(0.0..=1.0).contains(&shift) {
        return Err(Error::OutOfRange {
            what: "sub-pixel shift",
            value: shift,
        });
    }
    let unflipped = mirror(h_flipped, spec)?;
    let mut out = h.clone();
    let w = h.width;
    for (orow, urow) in out
        .data
        .chunks_exact_mut(w)
        .zip(unflipped.data.chunks_exact(w))
    {
        for j in 0..w {
            let left = urow[j.saturating_sub(1)];
            let shifted = (1.0 - shift) * urow[j] + shift * left;
            orow[j] = 0.5 * (orow[j] + shifted);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::coco_spec;
    use crate::model::{ImageId, Keypoint, Visibility};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt_pose(points: &[(f64, f64, Visibility)]) -> Pose {
        Pose {
            keypoints: points
                .iter()
                .map(|&(x, y, v)| Keypoint::labeled(x, y, v))
                .collect(),
            instance_score: 1.0,
            area: 1.0,
            image_id: ImageId(0),
        }
    }

    fn random_stack(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> HeatmapStack {
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        HeatmapStack::new(c, h, w, data).unwrap()
    }

    #[test]
    fn peak_at_pixel_center() {
        let cfg = EncodeConfig {
            sigma: 1.5,
            stride: 1.0,
            peak_value: 2.0,
            truncate: 3.0,
        };
        let hm = encode_gaussian(&gt_pose(&[(5.0, 4.0, Visibility::LabeledVisible)]), &cfg, (1, 10, 12))
            .unwrap();
        assert_eq!(hm.get(0, 4, 5), 2.0);
        let expected = 2.0 * libm::exp(-1.0 / (2.0 * 1.5 * 1.5));
        for (r, c) in [(3, 5), (5, 5), (4, 4), (4, 6)] {
            assert!((hm.get(0, r, c) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn stride_maps_image_to_heatmap_frame() {
        let cfg = EncodeConfig::default();
        let hm = encode_gaussian(&gt_pose(&[(20.0, 12.0, Visibility::LabeledInvisible)]), &cfg, (1, 16, 16))
            .unwrap();
        assert_eq!(hm.get(0, 3, 5), 1.0);
    }

    #[test]
    fn unlabeled_keypoint_gives_zero_channel() {
        let hm = encode_gaussian(
            &gt_pose(&[(5.0, 5.0, Visibility::Unlabeled), (5.0, 5.0, Visibility::LabeledVisible)]),
            &EncodeConfig {
                stride: 1.0,
                ..Default::default()
            },
            (2, 10, 10),
        )
        .unwrap();
        assert!(hm.channel(0).iter().all(|v| *v == 0.0));
        assert!(hm.channel(1).iter().any(|v| *v > 0.0));
    }

    #[test]
    fn subpixel_encoding_matches_dense_double_loop() {
        let cfg = EncodeConfig {
            sigma: 2.0,
            stride: 1.0,
            peak_value: 1.0,
            truncate: 3.0,
        };
        let (x, y) = (10.3, 7.6);
        let hm = encode_gaussian(&gt_pose(&[(x, y, Visibility::LabeledVisible)]), &cfg, (1, 20, 24))
            .unwrap();
        let mut oracle = 0.0;
        for row in 0..20 {
            for col in 0..24 {
                let d2 = (col as f64 - x).powi(2) + (row as f64 - y).powi(2);
                let v = if d2 <= 36.0 { (-d2 / 8.0).exp() } else { 0.0 };
                assert!((hm.get(0, row, col) - v).abs() < 1e-15);
                oracle += v;
            }
        }
        let sum: f64 = hm.channel(0).iter().sum();
        assert!((sum - oracle).abs() < 1e-12);
    }

    #[test]
    fn encode_rejects_wrong_channel_count() {
        let p = gt_pose(&[(1.0, 1.0, Visibility::LabeledVisible)]);
        assert!(encode_gaussian(&p, &EncodeConfig::default(), (2, 4, 4)).is_err());
    }

    #[test]
    fn all_zero_targets() {
        let z = encode_all_zero((17, 64, 48)).unwrap();
        assert_eq!(z.data().iter().sum::<f64>(), 0.0);
        assert_eq!(z.data().len(), 17 * 64 * 48);
        let one = encode_all_zero((1, 1, 1)).unwrap();
        assert_eq!(one.data(), &[0.0]);
        assert_eq!(mse_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn mse_cases() {
        let ones = HeatmapStack::new(2, 3, 4, vec![1.0; 24]).unwrap();
        let zeros = HeatmapStack::zeros(2, 3, 4).unwrap();
        assert_eq!(mse_loss(&ones, &zeros).unwrap(), 1.0);
        assert!(mse_loss(&ones, &HeatmapStack::zeros(2, 4, 3).unwrap()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_stack(&mut rng, 3, 4, 5);
        let b = random_stack(&mut rng, 3, 4, 5);
        let mut oracle = 0.0;
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..5 {
                    oracle += (a.get(c, i, j) - b.get(c, i, j)).powi(2);
                }
            }
        }
        oracle /= 60.0;
        let got = mse_loss(&a, &b).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_cases() {
        assert_eq!(combined_loss(0.5, 0.3, 0.0).unwrap(), 0.5);
        assert_eq!(combined_loss(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!((combined_loss(0.5, 0.3, 0.5).unwrap() - 0.65).abs() < 1e-15);
        assert!(combined_loss(0.5, 0.3, -0.1).is_err());
    }

    #[test]
    fn filter_keeps_constant_channel() {
        let h = HeatmapStack::new(1, 9, 7, vec![0.75; 63]).unwrap();
        let f = gaussian_filter(&h, 1.3).unwrap();
        assert!(f.data().iter().all(|v| (v - 0.75).abs() < 1e-14));
    }

    #[test]
    fn filter_of_impulse_is_the_kernel() {
        let sigma = 1.2;
        let r = 4usize; // ceil(3 * 1.2)
        let (h, w) = (15usize, 17usize);
        let mut data = vec![0.0; h * w];
        data[7 * w + 8] = 1.0;
        let f = gaussian_filter(&HeatmapStack::new(1, h, w, data).unwrap(), sigma).unwrap();
        let mut table = vec![0.0; (2 * r + 1) * (2 * r + 1)];
        for dy in 0..=2 * r {
            for dx in 0..=2 * r {
                let (a, b) = (dx as f64 - r as f64, dy as f64 - r as f64);
                table[dy * (2 * r + 1) + dx] = (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
            }
        }
        let total: f64 = table.iter().sum();
        for row in 0..h {
            for col in 0..w {
                let (dy, dx) = (row as isize - 7, col as isize - 8);
                let expected = if dy.unsigned_abs() <= r && dx.unsigned_abs() <= r {
                    table[(dy + r as isize) as usize * (2 * r + 1) + (dx + r as isize) as usize] / total
                } else {
                    0.0
                };
                assert!((f.get(0, row, col) - expected).abs() < 1e-15, "{row},{col}");
            }
        }
    }

    #[test]
    fn filter_keeps_symmetric_peak_location() {
        let cfg = EncodeConfig {
            stride: 1.0,
            ..Default::default()
        };
        let hm = encode_gaussian(&gt_pose(&[(11.0, 9.0, Visibility::LabeledVisible)]), &cfg, (1, 20, 24))
            .unwrap();
        let f = gaussian_filter(&hm, 1.0).unwrap();
        let best = (0..f.plane_len())
            .max_by(|&a, &b| f.channel(0)[a].total_cmp(&f.channel(0)[b]))
            .unwrap();
        assert_eq!(best, 9 * 24 + 11);
    }

    #[test]
    fn filter_preserves_interior_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, sigma) = (30usize, 30usize, 1.5);
        let mut data = vec![0.0; h * w];
        // support within [12, 18), at least 3 sigma + radius away from borders
        for row in 12..18 {
            for col in 12..18 {
                data[row * w + col] = rng.random_range(0.0..1.0);
            }
        }
        let src = HeatmapStack::new(1, h, w, data).unwrap();
        let f = gaussian_filter(&src, sigma).unwrap();
        let before: f64 = src.data().iter().sum();
        let after: f64 = f.data().iter().sum();
        assert!(((after - before) / before).abs() < 1e-6);
    }

    #[test]
    fn mirror_is_involution() {
        let spec = coco_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_stack(&mut rng, 17, 5, 6);
        let m = mirror(&h, &spec).unwrap();
        assert_eq!(m.get(1, 2, 0), h.get(2, 2, 5));
        assert_eq!(m.get(0, 3, 1), h.get(0, 3, 4));
        assert_eq!(mirror(&m, &spec).unwrap(), h);
    }

    #[test]
    fn self_fusion_without_shift_is_identity() {
        let spec = coco_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_stack(&mut rng, 17, 6, 5);
        let flipped = mirror(&h, &spec).unwrap();
        assert_eq!(flip_fuse_ssp(&h, &flipped, 0.0, &spec).unwrap(), h);
    }

    #[test]
    fn full_shift_is_one_pixel_shift() {
        let spec = coco_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_stack(&mut rng, 17, 4, 6);
        let f = random_stack(&mut rng, 17, 4, 6);
        let fused = flip_fuse_ssp(&h, &f, 1.0, &spec).unwrap();
        let u = mirror(&f, &spec).unwrap();
        for c in 0..17 {
            for i in 0..4 {
                for j in 0..6usize {
                    let shifted = u.get(c, i, j.saturating_sub(1));
                    assert_eq!(fused.get(c, i, j), 0.5 * (h.get(c, i, j) + shifted));
                }
            }
        }
        assert!(flip_fuse_ssp(&h, &f, 1.5, &spec).is_err());
        assert!(flip_fuse_ssp(&h, &HeatmapStack::zeros(17, 4, 5).unwrap(), 0.5, &spec).is_err());
    }

    proptest::proptest! {
        #[test]
        fn encode_values_bounded_and_truncated(
            x in 0.0..40.0f64, y in 0.0..30.0f64, sigma in 0.5..4.0f64, peak in 0.1..5.0f64,
        ) {
            let cfg = EncodeConfig { sigma, stride: 1.0, peak_value: peak, truncate: 3.0 };
            let hm = encode_gaussian(&gt_pose(&[(x, y, Visibility::LabeledVisible)]), &cfg, (1, 30, 40)).unwrap();
            for row in 0..30 {
                for col in 0..40 {
                    let v = hm.get(0, row, col);
                    proptest::prop_assert!((0.0..=peak).contains(&v));
                    let d2 = (col as f64 - x).powi(2) + (row as f64 - y).powi(2);
                    if d2 > 9.0 * sigma * sigma {
                        proptest::prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }

        #[test]
        fn mse_symmetric_and_zero_only_on_equal(seed in 0u64..500, lambda in 0.0..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_stack(&mut rng, 2, 3, 4);
            let b = random_stack(&mut rng, 2, 3, 4);
            let ab = mse_loss(&a, &b).unwrap();
            proptest::prop_assert_eq!(ab, mse_loss(&b, &a).unwrap());
            proptest::prop_assert!(ab > 0.0);
            proptest::prop_assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
            let combined = combined_loss(ab, ab, lambda).unwrap();
            proptest::prop_assert!((combined - (1.0 + lambda) * ab).abs() <= 1e-12 * combined.max(1.0));
        }
    }
}
