//! Forward-only reference of the context mixer (CM) decoder stage and its
//! cascade.
//!
//! A CM stage doubles the spatial resolution of its input `f` and mixes
//! three branches:
//!
//! ```text
//! res   = bn(conv1x1(upsample2(f)))
//! alpha = sigmoid(conv1x1(relu(bn(conv1x1(avgpool(f))))))
//! hdc   = bn(deconv(concat(relu(bn(conv3x3_d(f))) for d in 1..=4)))
//! out   = relu(hdc * alpha + res)
//! ```
//!
//! where `*` scales each channel of `hdc` by the matching entry of `alpha`.
//! Parameters are supplied by the caller; nothing here is trained.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heatmap::{combined_loss, mse_loss, HeatmapStack};
use crate::math::{exp, sqrt};

/// Dilation rates of the four HDC branches.
pub const DILATIONS: [usize; 4] = [1, 2, 3, 4];

/// Dense `channels × height × width` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::dims(
                format!("{channels}x{height}x{width}"),
                format!("{} values", data.len()),
            ));
        }
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Empty("feature map"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }
}

/// Inference-mode batch normalization with stored moments.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    /// The normalization that leaves its input unchanged.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 0.0,
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        for (what, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("mean", &self.mean),
            ("var", &self.var),
        ] {
            if v.len() != channels {
                return Err(Error::dims(
                    format!("{channels} batch-norm {what}"),
                    v.len(),
                ));
            }
        }
        if self.eps < 0.0 || self.var.iter().any(|&v| !(v + self.eps > 0.0)) {
            return Err(Error::InvalidParams("batch-norm variance must be positive".into()));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = scale * x + shift`.
    fn affine(&self, c: usize) -> (f64, f64) {
        let scale = self.gamma[c] / sqrt(self.var[c] + self.eps);
        (scale, self.beta[c] - self.mean[c] * scale)
    }
}

/// Square-kernel convolution or stride-2 transposed convolution.
///
/// Convolution weights are laid out `[out][in][k][k]`, transposed
/// convolution weights `[in][out][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; in_channels * out_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
            bn: None,
        }
    }

    /// Fills weights, biases and (if `with_bn`) batch-norm moments from
    /// `sample`, which should yield small values around zero.
    pub fn from_fn(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        with_bn: bool,
        sample: &mut impl FnMut() -> f64,
    ) -> Self {
        let mut layer = Self::zeros(in_channels, out_channels, kernel);
        layer.weight.iter_mut().for_each(|w| *w = sample());
        layer.bias.iter_mut().for_each(|b| *b = sample());
        if with_bn {
            let mut draw = |f: &dyn Fn(f64) -> f64| (0..out_channels).map(|_| f(sample())).collect();
            layer.bn = Some(BatchNorm {
                gamma: draw(&|v| 1.0 + v),
                beta: draw(&|v| v),
                mean: draw(&|v| v),
                var: draw(&|v| 0.5 + v.abs()),
                eps: 1e-5,
            });
        }
        layer
    }

    fn validate(&self, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Result<()> {
        let shape = (self.in_channels, self.out_channels, self.kernel);
        if shape != (in_channels, out_channels, kernel) {
            return Err(Error::dims(
                format!("{name}: {in_channels}->{out_channels} k{kernel}"),
                format!("{}->{} k{}", shape.0, shape.1, shape.2),
            ));
        }
        if self.weight.len() != in_channels * out_channels * kernel * kernel {
            return Err(Error::dims(format!("{name} weight count"), self.weight.len()));
        }
        if self.bias.len() != out_channels {
            return Err(Error::dims(format!("{name} bias count"), self.bias.len()));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        if let Some(bn) = &self.bn {
            bn.validate(out_channels)?;
        }
        Ok(())
    }

    fn finish(&self, out: &mut FeatureMap) {
        let n = out.height * out.width;
        for (o, plane) in out.data.chunks_exact_mut(n).enumerate() {
            let (scale, shift) = match &self.bn {
                Some(bn) => bn.affine(o),
                None => (1.0, 0.0),
            };
            let b = self.bias[o];
            plane.iter_mut().for_each(|v| *v = (*v + b) * scale + shift);
        }
    }

    /// Same-size convolution with the given dilation; padding is
    /// `dilation * (kernel / 2)` zeros on every side.
    pub fn conv(&self, input: &FeatureMap, dilation: usize) -> Result<FeatureMap> {
        if input.channels != self.in_channels {
            return Err(Error::dims(self.in_channels, input.channels));
        }
        let (h, w, k) = (input.height, input.width, self.kernel);
        let pad = (dilation * (k / 2)) as isize;
        let mut out = FeatureMap::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            let dst = &mut out.data[o * h * w..(o + 1) * h * w];
            for i in 0..self.in_channels {
                let src = input.plane(i);
                for ky in 0..k {
                    let dy = (ky * dilation) as isize - pad;
                    for kx in 0..k {
                        let dx = (kx * dilation) as isize - pad;
                        let wt = self.weight[((o * self.in_channels + i) * k + ky) * k + kx];
                        if wt == 0.0 {
                            continue;
                        }
                        for row in 0..h {
                            let sr = row as isize + dy;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            let srow = &src[sr as usize * w..(sr as usize + 1) * w];
                            let drow = &mut dst[row * w..(row + 1) * w];
                            let lo = (-dx).max(0) as usize;
                            let hi = (w as isize - dx).min(w as isize).max(0) as usize;
                            for col in lo..hi {
                                drow[col] += wt * srow[(col as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        self.finish(&mut out);
        Ok(out)
    }

    /// Stride-2 transposed convolution with padding `(kernel - 2) / 2`,
    /// which exactly doubles both spatial dims for even kernels.
    pub fn deconv(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels != self.in_channels {
            return Err(Error::dims(self.in_channels, input.channels));
        }
        let k = self.kernel;
        if k < 2 || !k.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!("deconvolution kernel {k} must be even")));
        }
        let pad = ((k - 2) / 2) as isize;
        let (h, w) = (input.height, input.width);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = FeatureMap::zeros(self.out_channels, oh, ow);
        for i in 0..self.in_channels {
            let src = input.plane(i);
            for o in 0..self.out_channels {
                let dst = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = self.weight[((i * self.out_channels + o) * k + ky) * k + kx];
                        if wt == 0.0 {
                            continue;
                        }
                        for row in 0..h {
                            let y = 2 * row as isize - pad + ky as isize;
                            if y < 0 || y >= oh as isize {
                                continue;
                            }
                            for col in 0..w {
                                let x = 2 * col as isize - pad + kx as isize;
                                if x >= 0 && x < ow as isize {
                                    dst[y as usize * ow + x as usize] += wt * src[row * w + col];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.finish(&mut out);
        Ok(out)
    }
}

/// Residual-branch upsampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Upsample {
    #[default]
    Nearest,
    /// Half-pixel-centred bilinear with edge clamping.
    Bilinear,
}

/// 2× spatial upsampling.
pub fn upsample2(f: &FeatureMap, mode: Upsample) -> FeatureMap {
    let (h, w) = (f.height, f.width);
    let mut out = FeatureMap::zeros(f.channels, 2 * h, 2 * w);
    let src_at = |dst: usize, n: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s as usize;
        (lo, (lo + 1).min(n - 1), s - lo as f64)
    };
    for c in 0..f.channels {
        let src = f.plane(c);
        let dst = &mut out.data[c * 4 * h * w..(c + 1) * 4 * h * w];
        for row in 0..2 * h {
            for col in 0..2 * w {
                dst[row * 2 * w + col] = match mode {
                    Upsample::Nearest => src[(row / 2) * w + col / 2],
                    Upsample::Bilinear => {
                        let (r0, r1, fy) = src_at(row, h);
                        let (c0, c1, fx) = src_at(col, w);
                        let top = src[r0 * w + c0] * (1.0 - fx) + src[r0 * w + c1] * fx;
                        let bottom = src[r1 * w + c0] * (1.0 - fx) + src[r1 * w + c1] * fx;
                        top * (1.0 - fy) + bottom * fy
                    }
                };
            }
        }
    }
    out
}

fn relu_in_place(f: &mut FeatureMap) {
    f.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Parameters of one CM stage mapping `in_channels` to `out_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmParams {
    /// 1×1 convolution on the upsampled input.
    pub res: ConvLayer,
    /// Bottleneck (to `out_channels / 4`) then expansion back to
    /// `out_channels`.
    pub se: [ConvLayer; 2],
    /// 3×3 branches at the rates in [`DILATIONS`], `out_channels / 4`
    /// filters each.
    pub hdc: [ConvLayer; 4],
    /// Stride-2 transposed convolution over the concatenated branches.
    pub deconv: ConvLayer,
    pub upsample: Upsample,
}

impl CmParams {
    /// Builds a stage with every parameter drawn from `sample`.
    ///
    /// Batch-norm follows the residual, HDC and deconvolution layers and
    /// the SE bottleneck.
    pub fn from_fn(
        in_channels: usize,
        out_channels: usize,
        deconv_kernel: usize,
        sample: &mut impl FnMut() -> f64,
    ) -> Result<Self> {
        check_out_channels(out_channels)?;
        let q = out_channels / 4;
        let params = Self {
            res: ConvLayer::from_fn(in_channels, out_channels, 1, true, sample),
            se: [
                ConvLayer::from_fn(in_channels, q, 1, true, sample),
                ConvLayer::from_fn(q, out_channels, 1, false, sample),
            ],
            hdc: core::array::from_fn(|_| ConvLayer::from_fn(in_channels, q, 3, true, sample)),
            deconv: ConvLayer::from_fn(out_channels, out_channels, deconv_kernel, true, sample),
            upsample: Upsample::Nearest,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn in_channels(&self) -> usize {
        self.res.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.res.out_channels
    }

    /// Checks that every layer agrees with the stage's channel counts.
    pub fn validate(&self) -> Result<()> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        check_out_channels(cout)?;
        let q = cout / 4;
        self.res.validate("res", cin, cout, 1)?;
        self.se[0].validate("se bottleneck", cin, q, 1)?;
        self.se[1].validate("se expansion", q, cout, 1)?;
        for (d, layer) in DILATIONS.iter().zip(&self.hdc) {
            layer.validate(&format!("hdc rate {d}"), cin, q, 3)?;
        }
        let k = self.deconv.kernel;
        if k < 2 || !k.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!("deconvolution kernel {k} must be even")));
        }
        self.deconv.validate("deconv", cout, cout, k)
    }
}

fn check_out_channels(c: usize) -> Result<()> {
    if c == 0 || !c.is_multiple_of(4) {
        return Err(Error::InvalidParams(format!(
            "stage output channels {c} must be a positive multiple of 4"
        )));
    }
    Ok(())
}

/// Channel gate `alpha` of a stage, one entry per output channel.
pub fn se_gate(f_prev: &FeatureMap, p: &CmParams) -> Result<Vec<f64>> {
    let n = (f_prev.height * f_prev.width) as f64;
    let pooled: Vec<f64> = (0..f_prev.channels)
        .map(|c| f_prev.plane(c).iter().sum::<f64>() / n)
        .collect();
    let pooled = FeatureMap::new(f_prev.channels, 1, 1, pooled)?;
    let mut squeezed = p.se[0].conv(&pooled, 1)?;
    relu_in_place(&mut squeezed);
    let excited = p.se[1].conv(&squeezed, 1)?;
    Ok(excited.data.into_iter().map(sigmoid).collect())
}

fn hdc_branch(f_prev: &FeatureMap, p: &CmParams) -> Result<FeatureMap> {
    let q = p.out_channels() / 4;
    let plane = f_prev.height * f_prev.width;
    let mut concat = FeatureMap::zeros(p.out_channels(), f_prev.height, f_prev.width);
    for (b, (&d, layer)) in DILATIONS.iter().zip(&p.hdc).enumerate() {
        let mut branch = layer.conv(f_prev, d)?;
        relu_in_place(&mut branch);
        concat.data[b * q * plane..(b + 1) * q * plane].copy_from_slice(&branch.data);
    }
    p.deconv.deconv(&concat)
}

/// One CM stage; output is `out_channels × 2H × 2W`.
pub fn cm_forward(f_prev: &FeatureMap, p: &CmParams) -> Result<FeatureMap> {
    p.validate()?;
    if f_prev.channels != p.in_channels() {
        return Err(Error::dims(
            format!("{} input channels", p.in_channels()),
            f_prev.channels,
        ));
    }
    let alpha = se_gate(f_prev, p)?;
    let hdc = hdc_branch(f_prev, p)?;
    let mut out = p.res.conv(&upsample2(f_prev, p.upsample), 1)?;
    let n = out.height * out.width;
    for (c, (o, g)) in out.data.chunks_exact_mut(n).zip(hdc.data.chunks_exact(n)).enumerate() {
        let a = alpha[c];
        for (v, &x) in o.iter_mut().zip(g) {
            *v = (x * a + *v).max(0.0);
        }
    }
    Ok(out)
}

/// Runs the stages in order, then the 1×1 `predictor`, giving one heatmap
/// channel per predictor output.
pub fn ccm_forward(f_enc: &FeatureMap, stages: &[CmParams], predictor: &ConvLayer) -> Result<HeatmapStack> {
    predictor.validate("predictor", predictor.in_channels, predictor.out_channels, 1)?;
    let mut f = f_enc.clone();
    for (k, stage) in stages.iter().enumerate() {
        if stage.in_channels() != f.channels {
            return Err(Error::InvalidParams(format!(
                "stage {} expects {} channels, got {}",
                k + 1,
                stage.in_channels(),
                f.channels
            )));
        }
        f = cm_forward(&f, stage)?;
    }
    if predictor.in_channels != f.channels {
        return Err(Error::InvalidParams(format!(
            "predictor expects {} channels, got {}",
            predictor.in_channels, f.channels
        )));
    }
    let h = predictor.conv(&f, 1)?;
    HeatmapStack::new(h.channels, h.height, h.width, h.data)
}

/// Main-decoder loss plus `lambda` times the auxiliary-decoder loss, both
/// against the same target.
pub fn aux_decoder_loss(
    h_main: &HeatmapStack,
    h_aux: &HeatmapStack,
    h_gt: &HeatmapStack,
    lambda: f64,
) -> Result<f64> {
    combined_loss(mse_loss(h_main, h_gt)?, mse_loss(h_aux, h_gt)?, lambda)
}
