//! Non-local means denoising and the residual noise map.
//!
//! Each output pixel is a weighted mean over a square search window, with
//! weights `exp(-d² / h²)` normalised to sum to one. `d²` is the squared
//! Euclidean distance between the two patches divided by the number of
//! samples compared, so `h` is expressed in sample units regardless of patch
//! size. Patches that reach past the border read a mirror-padded copy of the
//! image; candidate pixels are restricted to the image itself.
//!
//! The implementation sweeps one displacement at a time and gets every patch
//! distance for that displacement from a summed-area table of squared
//! differences.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{ImageF, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// Every channel is denoised on its own.
    PerChannel,
    /// Patch distance pools all three channels and the weights are shared.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlmParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub h: f32,
    pub channel_mode: ChannelMode,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 10,
            h: 10.0,
            channel_mode: ChannelMode::PerChannel,
        }
    }
}

impl NlmParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 {
            return Err(Error::param("nlm patch_radius must be >= 1"));
        }
        if self.search_radius < self.patch_radius {
            return Err(Error::param(format!(
                "nlm search_radius ({}) must be >= patch_radius ({})",
                self.search_radius, self.patch_radius
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::param(format!("nlm h must be > 0, got {}", self.h)));
        }
        Ok(())
    }

    pub fn patch_area(&self) -> usize {
        let side = 2 * self.patch_radius + 1;
        side * side
    }
}

/// Half-sample symmetric reflection of `i` into `0..n`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

struct Padded {
    data: Vec<f64>,
    width: usize,
    height: usize,
}

fn pad_plane(plane: &[f32], width: usize, height: usize, pad: usize) -> Padded {
    let pw = width + 2 * pad;
    let ph = height + 2 * pad;
    let mut data = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = mirror_index(y as isize - pad as isize, height);
        for x in 0..pw {
            let sx = mirror_index(x as isize - pad as isize, width);
            data.push(plane[sy * width + sx] as f64);
        }
    }
    Padded {
        data,
        width: pw,
        height: ph,
    }
}

/// Accumulates, for one displacement, the patch distance of every pixel whose
/// displaced partner lies inside the image.
struct DistanceSweep {
    width: usize,
    height: usize,
    pad: usize,
    sat: Vec<f64>,
}

impl DistanceSweep {
    fn new(width: usize, height: usize, pad: usize) -> Self {
        let sat_w = width + 2 * pad + 1;
        let sat_h = height + 2 * pad + 1;
        Self {
            width,
            height,
            pad,
            sat: vec![0.0; sat_w * sat_h],
        }
    }

    /// Rebuilds the summed-area table of squared differences between the
    /// padded planes and their copies shifted by (dy, dx), summed over
    /// `planes`.
    fn load(&mut self, planes: &[&Padded], dy: isize, dx: isize) {
        let pw = self.width + 2 * self.pad;
        let ph = self.height + 2 * self.pad;
        let sat_w = pw + 1;
        for y in 0..ph {
            let sy = y as isize + dy;
            let mut row_acc = 0.0;
            for x in 0..pw {
                let sx = x as isize + dx;
                let mut v = 0.0;
                if sy >= 0 && sy < ph as isize && sx >= 0 && sx < pw as isize {
                    for p in planes {
                        let d = p.data[y * pw + x] - p.data[sy as usize * pw + sx as usize];
                        v += d * d;
                    }
                }
                row_acc += v;
                self.sat[(y + 1) * sat_w + x + 1] = self.sat[y * sat_w + x + 1] + row_acc;
            }
        }
    }

    /// Sum of squared differences over the patch centred on image pixel (y, x).
    #[inline]
    fn patch_sum(&self, y: usize, x: usize) -> f64 {
        let sat_w = self.width + 2 * self.pad + 1;
        let side = 2 * self.pad + 1;
        // padded coordinates of the patch's top-left are (y, x)
        let (y0, x0, y1, x1) = (y, x, y + side, x + side);
        self.sat[y1 * sat_w + x1] - self.sat[y0 * sat_w + x1] - self.sat[y1 * sat_w + x0]
            + self.sat[y0 * sat_w + x0]
    }
}

/// Runs the weighted average for the given group of planes that share
/// weights. Returns one denoised plane per input plane.
fn denoise_group(
    planes: &[&[f32]],
    width: usize,
    height: usize,
    params: &NlmParams,
) -> Vec<Vec<f32>> {
    let pr = params.patch_radius;
    let sr = params.search_radius as isize;
    let padded: Vec<Padded> = planes
        .iter()
        .map(|p| pad_plane(p, width, height, pr))
        .collect();
    let padded_refs: Vec<&Padded> = padded.iter().collect();
    debug_assert!(padded.iter().all(|p| p.width == width + 2 * pr));
    debug_assert!(padded.iter().all(|p| p.height == height + 2 * pr));

    let norm = 1.0 / (params.patch_area() * planes.len()) as f64;
    let inv_h2 = 1.0 / (params.h as f64 * params.h as f64);

    let n = width * height;
    let mut weight_sum = vec![0f64; n];
    let mut acc = vec![vec![0f64; n]; planes.len()];
    let mut sweep = DistanceSweep::new(width, height, pr);

    // Zero displacement: every pixel matches itself with weight 1.
    for i in 0..n {
        weight_sum[i] += 1.0;
        for (a, p) in acc.iter_mut().zip(planes) {
            a[i] += p[i] as f64;
        }
    }
    // The patch distance is symmetric, so each displacement δ with δ > 0 in
    // raster order also supplies the weights for -δ.
    for dy in 0..=sr {
        let dx_start = if dy == 0 { 1 } else { -sr };
        for dx in dx_start..=sr {
            sweep.load(&padded_refs, dy, dx);
            let y_hi = (height as isize - dy).max(0) as usize;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (width as isize - dx).min(width as isize);
            if x_hi <= x_lo as isize {
                continue;
            }
            for y in 0..y_hi {
                let jy = (y as isize + dy) as usize;
                for x in x_lo..x_hi as usize {
                    let jx = (x as isize + dx) as usize;
                    let d2 = sweep.patch_sum(y, x) * norm;
                    let w = (-d2 * inv_h2).exp();
                    let i = y * width + x;
                    let j = jy * width + jx;
                    weight_sum[i] += w;
                    weight_sum[j] += w;
                    for (a, p) in acc.iter_mut().zip(planes) {
                        a[i] += w * p[j] as f64;
                        a[j] += w * p[i] as f64;
                    }
                }
            }
        }
    }

    acc.into_iter()
        .map(|a| {
            a.iter()
                .zip(&weight_sum)
                .map(|(&num, &den)| (num / den) as f32)
                .collect()
        })
        .collect()
}

/// Non-local means estimate of `img`. Output is f32 and unclamped.
pub fn nlm_denoise(img: &ImageF, params: &NlmParams) -> Result<ImageF> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let planes: Vec<Vec<f32>> = match params.channel_mode {
        ChannelMode::PerChannel => (0..CHANNELS)
            .into_par_iter()
            .map(|c| {
                denoise_group(&[img.plane(c)], w, h, params)
                    .pop()
                    .expect("one plane in, one plane out")
            })
            .collect(),
        ChannelMode::Joint => {
            let refs: Vec<&[f32]> = (0..CHANNELS).map(|c| img.plane(c)).collect();
            denoise_group(&refs, w, h, params)
        }
    };
    ImageF::new(w, h, planes.concat())
}

/// Signed residual `original - denoised`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap(ImageF);

impl NoiseMap {
    pub fn from_image(img: ImageF) -> Self {
        Self(img)
    }

    pub fn as_image(&self) -> &ImageF {
        &self.0
    }

    pub fn into_image(self) -> ImageF {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn samples(&self) -> &[f32] {
        self.0.samples()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        self.0.plane(c)
    }
}

pub fn residual_noise(img: &ImageF, denoised: &ImageF) -> Result<NoiseMap> {
    if !img.same_shape(denoised) {
        return Err(Error::shape(img.shape_string(), denoised.shape_string()));
    }
    let samples = img
        .samples()
        .iter()
        .zip(denoised.samples())
        .map(|(a, b)| a - b)
        .collect();
    Ok(NoiseMap(ImageF::new(img.width(), img.height(), samples)?))
}

/// Denoise and subtract in one step.
pub fn extract_noise(img: &ImageF, params: &NlmParams) -> Result<NoiseMap> {
    let denoised = nlm_denoise(img, params)?;
    residual_noise(img, &denoised)
}

const NOISE_MAGIC: &[u8; 4] = b"NOIZ";
const NOISE_VERSION: u16 = 1;

pub fn write_noise_map(map: &NoiseMap, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(NOISE_MAGIC)?;
    w.write_all(&NOISE_VERSION.to_le_bytes())?;
    w.write_all(&(map.height() as u32).to_le_bytes())?;
    w.write_all(&(map.width() as u32).to_le_bytes())?;
    w.write_all(&[CHANNELS as u8])?;
    let mut buf = Vec::with_capacity(map.samples().len() * 4);
    for v in map.samples() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_noise_map(mut r: impl Read) -> Result<NoiseMap> {
    let mut header = [0u8; 15];
    r.read_exact(&mut header)
        .map_err(|e| Error::Cache(format!("noise map header: {e}")))?;
    if &header[..4] != NOISE_MAGIC {
        return Err(Error::Cache("bad noise map magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != NOISE_VERSION {
        return Err(Error::Cache(format!("unsupported noise map version {version}")));
    }
    let height = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    if header[14] as usize != CHANNELS {
        return Err(Error::Cache(format!("noise map has {} channels", header[14])));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)
        .map_err(|e| Error::Cache(format!("noise map body: {e}")))?;
    if body.len() != width * height * CHANNELS * 4 {
        return Err(Error::Cache(format!(
            "noise map body is {} bytes, expected {}",
            body.len(),
            width * height * CHANNELS * 4
        )));
    }
    let samples = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(NoiseMap(ImageF::new(width, height, samples)?))
}

pub fn save_noise_map(map: &NoiseMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_noise_map(map, &mut buf).expect("writing to a Vec cannot fail");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_noise_map(path: impl AsRef<Path>) -> Result<NoiseMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_noise_map(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(radius: usize, search: usize) -> NlmParams {
        NlmParams {
            patch_radius: radius,
            search_radius: search,
            h: 10.0,
            channel_mode: ChannelMode::PerChannel,
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(NlmParams::default().validate().is_ok());
        assert!(small(0, 2).validate().is_err());
        assert!(small(3, 2).validate().is_err());
        let mut p = small(1, 2);
        p.h = 0.0;
        assert!(p.validate().is_err());
        p.h = f32::NAN;
        assert!(nlm_denoise(&ImageF::filled(3, 3, 0.0).unwrap(), &p).is_err());
    }

    #[test]
    fn mirror_reflects_repeatedly() {
        let got: Vec<usize> = (-5..8).map(|i| mirror_index(i, 3)).collect();
        assert_eq!(got, vec![1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
        assert_eq!(mirror_index(-3, 1), 0);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = ImageF::filled(9, 6, 77.0).unwrap();
        for mode in [ChannelMode::PerChannel, ChannelMode::Joint] {
            let p = NlmParams {
                channel_mode: mode,
                ..small(1, 3)
            };
            let out = nlm_denoise(&img, &p).unwrap();
            assert!(out.samples().iter().all(|&v| v == 77.0));
        }
    }

    #[test]
    fn tiny_images_work() {
        let img = ImageF::from_fn(1, 2, |c, y, _| (c * 10 + y) as f32).unwrap();
        let out = nlm_denoise(&img, &NlmParams::default()).unwrap();
        assert_eq!(out.width(), 1);
        assert!(out.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn residual_arithmetic() {
        let a = ImageF::filled(1, 1, 10.0).unwrap();
        let b = ImageF::filled(1, 1, 12.5).unwrap();
        let n = residual_noise(&a, &b).unwrap();
        assert!(n.samples().iter().all(|&v| v == -2.5));
        assert!(residual_noise(&a, &a).unwrap().samples().iter().all(|&v| v == 0.0));
        let c = ImageF::filled(2, 1, 0.0).unwrap();
        assert!(matches!(
            residual_noise(&a, &c),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn noise_cache_round_trip_and_corruption() {
        let img = ImageF::from_fn(3, 2, |c, y, x| c as f32 - y as f32 * 0.5 + x as f32).unwrap();
        let map = NoiseMap::from_image(img);
        let mut buf = Vec::new();
        write_noise_map(&map, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"NOIZ");
        assert_eq!(buf.len(), 15 + 3 * 2 * 3 * 4);
        assert_eq!(read_noise_map(buf.as_slice()).unwrap(), map);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_noise_map(bad.as_slice()).is_err());
        assert!(read_noise_map(&buf[..buf.len() - 1]).is_err());
    }
}
