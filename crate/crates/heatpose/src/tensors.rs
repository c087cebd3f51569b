//! CMP: a container of named `f32` tensors, used for context-mixer
//! parameters.
//!
//! Layout (little-endian):
//! - magic `b"CMP1"`, entry count as `u32`
//! - per entry: name length `u32`, UTF-8 name, rank `u32`, rank × `u32`
//!   dims, then `f32` values in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use heatpose_core::context_mixer::{BatchNorm, CmParams, ConvLayer, Upsample};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"CMP1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::format(format!("{name}: dims {dims:?} do not hold {} values", data.len())));
        }
        Ok(Self { name, dims, data })
    }

    fn from_f64(name: String, dims: Vec<usize>, data: &[f64]) -> Self {
        Self {
            name,
            dims,
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    fn values(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let u32_of = |v: usize| u32::try_from(v).map_err(|_| Error::format(format!("{v} exceeds u32")));
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&u32_of(tensors.len())?.to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&u32_of(t.name.len())?.to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&u32_of(t.dims.len())?.to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&u32_of(d)?.to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(format!("CMP truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::format("bad CMP magic"));
    }
    let count = cur.u32()?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u32()?;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|e| Error::format(e.to_string()))?;
        let rank = cur.u32()?;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(format!("{name}: dims overflow")))?;
        let data = cur.take(n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push(NamedTensor { name, dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after CMP entries", bytes.len() - cur.pos)));
    }
    Ok(out)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    fsutil::write(path, &encode_tensors(tensors)?)
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    decode_tensors(&fsutil::read(path)?)
}

fn layer_tensors(prefix: &str, l: &ConvLayer, transposed: bool, out: &mut Vec<NamedTensor>) {
    let (a, b) = if transposed {
        (l.in_channels, l.out_channels)
    } else {
        (l.out_channels, l.in_channels)
    };
    out.push(NamedTensor::from_f64(format!("{prefix}.weight"), vec![a, b, l.kernel, l.kernel], &l.weight));
    out.push(NamedTensor::from_f64(format!("{prefix}.bias"), vec![l.out_channels], &l.bias));
    if let Some(bn) = &l.bn {
        for (name, v) in [("gamma", &bn.gamma), ("beta", &bn.beta), ("mean", &bn.mean), ("var", &bn.var)] {
            out.push(NamedTensor::from_f64(format!("{prefix}.bn.{name}"), vec![v.len()], v));
        }
        out.push(NamedTensor::from_f64(format!("{prefix}.bn.eps"), vec![1], &[bn.eps]));
    }
}

fn stage_layers(p: &CmParams) -> Vec<(String, &ConvLayer, bool)> {
    let mut layers = vec![("res".to_string(), &p.res, false)];
    layers.extend(p.se.iter().enumerate().map(|(i, l)| (format!("se{i}"), l, false)));
    layers.extend(p.hdc.iter().enumerate().map(|(i, l)| (format!("hdc{i}"), l, false)));
    layers.push(("deconv".to_string(), &p.deconv, true));
    layers
}

/// Flattens a cascade into named tensors (`stage{k}.{layer}.weight`, …,
/// `predictor.weight`); values are narrowed to `f32`.
pub fn cascade_to_tensors(stages: &[CmParams], predictor: &ConvLayer) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (k, p) in stages.iter().enumerate() {
        for (name, layer, transposed) in stage_layers(p) {
            layer_tensors(&format!("stage{k}.{name}"), layer, transposed, &mut out);
        }
        let mode = match p.upsample {
            Upsample::Nearest => 0.0,
            Upsample::Bilinear => 1.0,
        };
        out.push(NamedTensor::from_f64(format!("stage{k}.upsample"), vec![1], &[mode]));
    }
    layer_tensors("predictor", predictor, false, &mut out);
    out
}

fn read_layer(map: &BTreeMap<&str, &NamedTensor>, prefix: &str, transposed: bool) -> Result<ConvLayer> {
    let get = |suffix: &str| map.get(format!("{prefix}.{suffix}").as_str()).copied();
    let weight = get("weight").ok_or_else(|| Error::format(format!("missing {prefix}.weight")))?;
    let bias = get("bias").ok_or_else(|| Error::format(format!("missing {prefix}.bias")))?;
    let [a, b, k, k2] = weight.dims[..] else {
        return Err(Error::format(format!("{prefix}.weight must be rank 4")));
    };
    if k != k2 {
        return Err(Error::format(format!("{prefix}.weight kernel must be square")));
    }
    let (in_channels, out_channels) = if transposed { (a, b) } else { (b, a) };
    let bn = match get("bn.gamma") {
        None => None,
        Some(gamma) => {
            let part = |name: &str| {
                get(name)
                    .map(NamedTensor::values)
                    .ok_or_else(|| Error::format(format!("missing {prefix}.{name}")))
            };
            Some(BatchNorm {
                gamma: gamma.values(),
                beta: part("bn.beta")?,
                mean: part("bn.mean")?,
                var: part("bn.var")?,
                eps: part("bn.eps")?.first().copied().unwrap_or(0.0),
            })
        }
    };
    Ok(ConvLayer {
        in_channels,
        out_channels,
        kernel: k,
        weight: weight.values(),
        bias: bias.values(),
        bn,
    })
}

/// Rebuilds a cascade written by [`cascade_to_tensors`] and checks every
/// stage's arities.
pub fn cascade_from_tensors(tensors: &[NamedTensor]) -> Result<(Vec<CmParams>, ConvLayer)> {
    let map: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut stages = Vec::new();
    while map.contains_key(format!("stage{}.res.weight", stages.len()).as_str()) {
        let k = stages.len();
        let layer = |name: &str, transposed| read_layer(&map, &format!("stage{k}.{name}"), transposed);
        let upsample = match map.get(format!("stage{k}.upsample").as_str()).and_then(|t| t.data.first().copied()) {
            Some(1.0) => Upsample::Bilinear,
            _ => Upsample::Nearest,
        };
        let p = CmParams {
            res: layer("res", false)?,
            se: [layer("se0", false)?, layer("se1", false)?],
            hdc: [layer("hdc0", false)?, layer("hdc1", false)?, layer("hdc2", false)?, layer("hdc3", false)?],
            deconv: layer("deconv", true)?,
            upsample,
        };
        p.validate()?;
        stages.push(p);
    }
    let predictor = read_layer(&map, "predictor", false)?;
    Ok((stages, predictor))
}
