//! Block-wise Shannon entropy of a resized noise map.
//!
//! The residual is resampled to a square canvas, the value range of each
//! channel (or of the whole map) is cut into `bins` equal-width intervals,
//! and every `canvas/n`-sided block gets the entropy, in bits, of its
//! interval histogram. The three channel grids stacked together form the
//! feature tensor.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{resize_bicubic, ImageF, CHANNELS};
use crate::nlm::{extract_noise, NlmParams, NoiseMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    PerChannel,
    Global,
}

impl RangeMode {
    fn code(self) -> u8 {
        match self {
            RangeMode::PerChannel => 0,
            RangeMode::Global => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RangeMode::PerChannel),
            1 => Some(RangeMode::Global),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RangeMode::PerChannel => "per-channel",
            RangeMode::Global => "global",
        }
    }
}

impl std::str::FromStr for RangeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-channel" => Ok(RangeMode::PerChannel),
            "global" => Ok(RangeMode::Global),
            other => Err(Error::param(format!("unknown range mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyParams {
    /// Side of the square the noise map is resized to.
    pub canvas: usize,
    /// Blocks per side.
    pub n: usize,
    pub bins: usize,
    pub range_mode: RangeMode,
}

impl Default for EntropyParams {
    fn default() -> Self {
        Self {
            canvas: 1024,
            n: 64,
            bins: 32,
            range_mode: RangeMode::PerChannel,
        }
    }
}

impl EntropyParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("entropy grid n must be >= 1"));
        }
        if self.canvas == 0 || !self.canvas.is_multiple_of(self.n) {
            return Err(Error::param(format!(
                "canvas ({}) must be a positive multiple of n ({})",
                self.canvas, self.n
            )));
        }
        if self.bins < 2 {
            return Err(Error::param(format!("bins must be >= 2, got {}", self.bins)));
        }
        for (name, v) in [("canvas", self.canvas), ("n", self.n), ("bins", self.bins)] {
            if v > u16::MAX as usize {
                return Err(Error::param(format!("{name} {v} does not fit the cache header")));
            }
        }
        Ok(())
    }

    pub fn block_side(&self) -> usize {
        self.canvas / self.n
    }

    /// Upper bound of any block entropy.
    pub fn max_entropy(&self) -> f64 {
        (self.bins as f64).log2()
    }

    pub fn feature_dim(&self) -> usize {
        CHANNELS * self.n * self.n
    }
}

/// 3×n×n grid of block entropies in bits, planar.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTensor {
    n: usize,
    values: Vec<f32>,
}

impl EntropyTensor {
    pub fn new(n: usize, values: Vec<f32>) -> Result<Self> {
        if n == 0 || values.len() != CHANNELS * n * n {
            return Err(Error::shape(
                format!("{} values for n={n}", CHANNELS * n * n),
                values.len(),
            ));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.values[(c * self.n + i) * self.n + j]
    }

    /// Mean over all blocks and channels.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// Resamples a noise map onto the square `canvas`×`canvas` grid.
pub fn resize_noise(noise: &NoiseMap, canvas: usize) -> Result<NoiseMap> {
    let resized = resize_bicubic(noise.as_image(), canvas, canvas)?;
    Ok(NoiseMap::from_image(resized))
}

/// Shannon entropy in bits of a histogram with `total` samples.
pub fn histogram_entropy(counts: &[u32], total: u32) -> f64 {
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Equal-width quantiser over `[lo, hi]`; the top interval is closed.
#[derive(Debug, Clone, Copy)]
pub struct Quantizer {
    lo: f64,
    width: f64,
    bins: usize,
}

impl Quantizer {
    pub fn new(lo: f32, hi: f32, bins: usize) -> Self {
        let (lo, hi) = (lo as f64, hi as f64);
        Self {
            lo,
            width: (hi - lo) / bins as f64,
            bins,
        }
    }

    /// A zero-width range sends everything to bin 0.
    #[inline]
    pub fn bin(&self, v: f32) -> usize {
        if self.width <= 0.0 {
            return 0;
        }
        let k = ((v as f64 - self.lo) / self.width).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.bins - 1)
        }
    }
}

fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Entropy grid of one channel plane of side `canvas`.
fn plane_entropy(plane: &[f32], q: Quantizer, params: &EntropyParams) -> Vec<f32> {
    let (canvas, n, side) = (params.canvas, params.n, params.block_side());
    let total = (side * side) as u32;
    (0..n)
        .into_par_iter()
        .flat_map_iter(|bi| {
            let mut counts = vec![0u32; params.bins];
            (0..n)
                .map(|bj| {
                    counts.iter_mut().for_each(|c| *c = 0);
                    for y in bi * side..(bi + 1) * side {
                        let row = &plane[y * canvas + bj * side..y * canvas + (bj + 1) * side];
                        for &v in row {
                            counts[q.bin(v)] += 1;
                        }
                    }
                    histogram_entropy(&counts, total) as f32
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Block entropies of a canvas-sized noise map.
pub fn block_entropy(resized: &NoiseMap, params: &EntropyParams) -> Result<EntropyTensor> {
    params.validate()?;
    if resized.width() != params.canvas || resized.height() != params.canvas {
        return Err(Error::shape(
            format!("{0}x{0} noise map", params.canvas),
            format!("{}x{}", resized.width(), resized.height()),
        ));
    }
    let global = min_max(resized.samples());
    let mut values = Vec::with_capacity(params.feature_dim());
    for c in 0..CHANNELS {
        let plane = resized.plane(c);
        let (lo, hi) = match params.range_mode {
            RangeMode::PerChannel => min_max(plane),
            RangeMode::Global => global,
        };
        values.extend(plane_entropy(plane, Quantizer::new(lo, hi, params.bins), params));
    }
    EntropyTensor::new(params.n, values)
}

/// Full pipeline: NLM residual, resize to the canvas, block entropy.
pub fn extract_features(
    img: &ImageF,
    nlm: &NlmParams,
    params: &EntropyParams,
) -> Result<EntropyTensor> {
    params.validate()?;
    let noise = extract_noise(img, nlm)?;
    let resized = resize_noise(&noise, params.canvas)?;
    block_entropy(&resized, params)
}

const FEATURE_MAGIC: &[u8; 4] = b"NENT";
const FEATURE_VERSION: u16 = 1;
const FEATURE_HEADER_LEN: usize = 13;

/// Parameters recorded in a feature cache header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub n: usize,
    pub bins: usize,
    pub canvas: usize,
    pub range_mode: RangeMode,
}

impl From<&EntropyParams> for FeatureHeader {
    fn from(p: &EntropyParams) -> Self {
        Self {
            n: p.n,
            bins: p.bins,
            canvas: p.canvas,
            range_mode: p.range_mode,
        }
    }
}

pub fn write_features(
    tensor: &EntropyTensor,
    params: &EntropyParams,
    mut w: impl Write,
) -> Result<()> {
    params.validate()?;
    if tensor.n() != params.n {
        return Err(Error::shape(format!("n={}", params.n), format!("n={}", tensor.n())));
    }
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + tensor.values.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.n as u16).to_le_bytes());
    buf.extend_from_slice(&(params.bins as u16).to_le_bytes());
    buf.extend_from_slice(&(params.canvas as u16).to_le_bytes());
    buf.push(params.range_mode.code());
    for v in &tensor.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
        .map_err(|e| Error::Cache(format!("writing features: {e}")))
}

fn parse_feature_header(header: &[u8]) -> Result<FeatureHeader> {
    if header.len() < FEATURE_HEADER_LEN || &header[..4] != FEATURE_MAGIC {
        return Err(Error::Cache("bad feature cache magic".into()));
    }
    let field = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
    if field(4) != FEATURE_VERSION {
        return Err(Error::Cache(format!("unsupported feature cache version {}", field(4))));
    }
    let range_mode = RangeMode::from_code(header[12])
        .ok_or_else(|| Error::Cache(format!("unknown range mode code {}", header[12])))?;
    Ok(FeatureHeader {
        n: field(6) as usize,
        bins: field(8) as usize,
        canvas: field(10) as usize,
        range_mode,
    })
}

pub fn read_features(mut r: impl Read) -> Result<(FeatureHeader, EntropyTensor)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Cache(format!("reading features: {e}")))?;
    let header = parse_feature_header(&bytes)?;
    let body = &bytes[FEATURE_HEADER_LEN..];
    let expected = CHANNELS * header.n * header.n * 4;
    if body.len() != expected {
        return Err(Error::Cache(format!(
            "feature body is {} bytes, expected {expected}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((header, EntropyTensor::new(header.n, values)?))
}

pub fn save_features(
    tensor: &EntropyTensor,
    params: &EntropyParams,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_features(tensor, params, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<(FeatureHeader, EntropyTensor)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_features(bytes.as_slice())
}

/// Reads only the header of a cache file; `None` when the file is missing
/// or not a feature cache.
pub fn peek_feature_header(path: impl AsRef<Path>) -> Option<FeatureHeader> {
    let mut f = std::fs::File::open(path).ok()?;
    let mut header = [0u8; FEATURE_HEADER_LEN];
    f.read_exact(&mut header).ok()?;
    parse_feature_header(&header).ok()
}
