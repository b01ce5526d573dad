//! Raster container, codecs and resampling shared by the rest of the crate.
//!
//! Images are stored planar: all samples of channel 0 in row-major order,
//! then channel 1, then channel 2. Every decoded image has exactly three
//! channels.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Planar 3-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    width: usize,
    height: usize,
    samples: Vec<T>,
}

pub type Image8 = ImageTensor<u8>;
pub type ImageF = ImageTensor<f32>;

impl<T: Copy> ImageTensor<T> {
    pub fn new(width: usize, height: usize, samples: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "image dimensions must be non-zero, got {width}x{height}"
            )));
        }
        let expected = width * height * CHANNELS;
        if samples.len() != expected {
            return Err(Error::shape(
                format!("{expected} samples"),
                format!("{} samples", samples.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * CHANNELS])
    }

    /// Builds an image by evaluating `f(channel, y, x)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * CHANNELS);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    samples.push(f(c, y, x));
                }
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.pixel_count();
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.pixel_count();
        &mut self.samples[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.samples[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.samples[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape<U>(&self, other: &ImageTensor<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", CHANNELS, self.height, self.width)
    }

    /// Copies the `side`×`side` window whose top-left corner is (x, y).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::param(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(w, h, |c, yy, xx| self.get(c, y + yy, x + xx))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> ImageTensor<U> {
        ImageTensor {
            width: self.width,
            height: self.height,
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ImageTensor<u8> {
    pub fn to_f32(&self) -> ImageF {
        self.map(f32::from)
    }

    /// Interleaved RGB bytes, the layout codecs expect.
    pub fn to_interleaved(&self) -> Vec<u8> {
        let n = self.pixel_count();
        let mut out = Vec::with_capacity(n * CHANNELS);
        for i in 0..n {
            for c in 0..CHANNELS {
                out.push(self.samples[c * n + i]);
            }
        }
        out
    }

    pub fn from_interleaved(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let n = width * height;
        if rgb.len() != n * CHANNELS {
            return Err(Error::shape(n * CHANNELS, rgb.len()));
        }
        let mut samples = vec![0u8; n * CHANNELS];
        for i in 0..n {
            for c in 0..CHANNELS {
                samples[c * n + i] = rgb[i * CHANNELS + c];
            }
        }
        Self::new(width, height, samples)
    }
}

impl ImageTensor<f32> {
    /// Rounds to nearest and saturates into [0, 255].
    pub fn to_u8(&self) -> Image8 {
        self.map(|v| v.round().clamp(0.0, 255.0) as u8)
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<Image8> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    match format {
        ImageFormat::Png | ImageFormat::Jpeg => {}
        other => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Decode("zero-dimension image".into()));
    }
    Image8::from_interleaved(w as usize, h as usize, rgb.as_raw())
}

/// Loads a PNG or JPEG file as a 3-channel 8-bit image. Grayscale is
/// replicated across channels and alpha is discarded.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn encode_png(img: &Image8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(
            &img.to_interleaved(),
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

pub fn save_png(img: &Image8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Baseline JPEG with the standard luminance/chrominance tables scaled by
/// the usual quality-factor rule, 4:4:4 sampling.
pub fn encode_jpeg(img: &Image8, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::param(format!(
            "jpeg quality must be in 1..=100, got {quality}"
        )));
    }
    let mut out = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut out, quality)
        .write_image(
            &img.to_interleaved(),
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
#[inline]
pub fn catmull_rom(x: f32) -> f32 {
    const A: f32 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source coordinate sampled by output index `i` under pixel-centre
/// alignment.
#[inline]
pub fn source_coordinate(i: usize, in_len: usize, out_len: usize) -> f32 {
    let scale = in_len as f64 / out_len as f64;
    ((i as f64 + 0.5) * scale - 0.5) as f32
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    (0..out_len)
        .map(|i| {
            let src = source_coordinate(i, in_len, out_len);
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let mut index = [0usize; 4];
            let mut weight = [0f64; 4];
            for k in 0..4 {
                let offset = k as isize - 1;
                index[k] = (base + offset).clamp(0, in_len as isize - 1) as usize;
                weight[k] = catmull_rom(frac - offset as f32) as f64;
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

/// Separable Catmull-Rom resize with replicate padding. Output values are
/// not clamped, so signed data survives.
pub fn resize_bicubic(img: &ImageF, out_h: usize, out_w: usize) -> Result<ImageF> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param(format!(
            "resize target must be non-zero, got {out_w}x{out_h}"
        )));
    }
    let (in_w, in_h) = (img.width(), img.height());
    if in_w == out_w && in_h == out_h {
        return Ok(img.clone());
    }
    let htaps = taps(in_w, out_w);
    let vtaps = taps(in_h, out_h);

    let mut out = Vec::with_capacity(out_w * out_h * CHANNELS);
    let mut horizontal = vec![0f64; in_h * out_w];
    for c in 0..CHANNELS {
        let plane = img.plane(c);
        for y in 0..in_h {
            let row = &plane[y * in_w..(y + 1) * in_w];
            let dst = &mut horizontal[y * out_w..(y + 1) * out_w];
            for (d, t) in dst.iter_mut().zip(&htaps) {
                *d = t.weight[0] * row[t.index[0]] as f64
                    + t.weight[1] * row[t.index[1]] as f64
                    + t.weight[2] * row[t.index[2]] as f64
                    + t.weight[3] * row[t.index[3]] as f64;
            }
        }
        for t in &vtaps {
            let rows = t.index.map(|r| &horizontal[r * out_w..(r + 1) * out_w]);
            out.extend((0..out_w).map(|x| {
                (t.weight[0] * rows[0][x]
                    + t.weight[1] * rows[1][x]
                    + t.weight[2] * rows[2][x]
                    + t.weight[3] * rows[3][x]) as f32
            }));
        }
    }
    ImageF::new(out_w, out_h, out)
}

/// Averages non-overlapping `factor`×`factor` cells; trailing pixels that do
/// not fill a cell are dropped.
pub fn downsample_area(img: &ImageF, factor: usize) -> Result<ImageF> {
    if factor == 0 || factor > img.width() || factor > img.height() {
        return Err(Error::param(format!(
            "downsample factor {factor} invalid for {}x{}",
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    let norm = 1.0 / (factor * factor) as f32;
    ImageF::from_fn(w, h, |c, y, x| {
        let mut acc = 0f32;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(c, y * factor + dy, x * factor + dx);
            }
        }
        acc * norm
    })
}

/// Top-left corners and side of the square crops `crop_square_patches`
/// takes from a `width`×`height` image.
pub fn square_patch_origins(
    width: usize,
    height: usize,
    ratio_threshold: f64,
) -> Vec<(usize, usize, usize)> {
    let (long, short) = (width.max(height), width.min(height));
    if short == 0 {
        return Vec::new();
    }
    if (long as f64) / (short as f64) < ratio_threshold {
        return Vec::new();
    }
    (0..long / short)
        .map(|k| {
            if width >= height {
                (k * short, 0, short)
            } else {
                (0, k * short, short)
            }
        })
        .collect()
}

/// Splits elongated images into short-edge squares along the long axis.
/// Images whose aspect ratio is below `ratio_threshold` come back unchanged.
pub fn crop_square_patches<T: Copy>(
    img: &ImageTensor<T>,
    ratio_threshold: f64,
) -> Vec<ImageTensor<T>> {
    let origins = square_patch_origins(img.width(), img.height(), ratio_threshold);
    if origins.is_empty() {
        return vec![img.clone()];
    }
    origins
        .into_iter()
        .map(|(x, y, side)| img.crop(x, y, side, side).expect("origin lies inside image"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image8 {
        Image8::from_fn(w, h, |c, y, x| ((c * 50 + y * 7 + x * 3) % 256) as u8).unwrap()
    }

    #[test]
    fn rejects_zero_dimensions_and_bad_lengths() {
        assert!(Image8::new(0, 3, vec![]).is_err());
        assert!(Image8::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn png_single_pixel_decodes_to_written_value() {
        let mut bytes = Vec::new();
        PngEncoder::new(&mut bytes)
            .write_image(&[10, 20, 30], 1, 1, ExtendedColorType::Rgb8)
            .unwrap();
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.samples(), &[10, 20, 30]);
    }

    #[test]
    fn grayscale_is_replicated() {
        let mut bytes = Vec::new();
        PngEncoder::new(&mut bytes)
            .write_image(&[7, 7, 7, 7], 2, 2, ExtendedColorType::L8)
            .unwrap();
        let img = decode_image(&bytes).unwrap();
        assert!(img.samples().iter().all(|&v| v == 7));
        assert_eq!(img.samples().len(), 12);
    }

    #[test]
    fn alpha_is_dropped() {
        let mut bytes = Vec::new();
        PngEncoder::new(&mut bytes)
            .write_image(&[1, 2, 3, 0], 1, 1, ExtendedColorType::Rgba8)
            .unwrap();
        assert_eq!(decode_image(&bytes).unwrap().samples(), &[1, 2, 3]);
    }

    #[test]
    fn png_round_trip() {
        let img = ramp(13, 9);
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn corrupt_and_foreign_formats_fail() {
        let png = encode_png(&ramp(8, 8)).unwrap();
        assert!(decode_image(&png[..png.len() / 2]).is_err());
        assert!(decode_image(b"not an image at all").is_err());
        // minimal BMP header
        let bmp = b"BM\x3e\x00\x00\x00\x00\x00\x00\x00\x36\x00\x00\x00";
        assert!(decode_image(bmp).is_err());
    }

    #[test]
    fn u8_f32_round_trip_is_exact() {
        let img = ramp(5, 4);
        assert_eq!(img.to_f32().to_u8(), img);
    }

    #[test]
    fn jpeg_quality_bounds() {
        let img = ramp(8, 8);
        assert!(encode_jpeg(&img, 0).is_err());
        assert!(encode_jpeg(&img, 101).is_err());
        assert!(encode_jpeg(&img, 1).is_ok());
    }

    #[test]
    fn constant_survives_jpeg() {
        let img = Image8::filled(32, 24, 131).unwrap();
        let back = decode_image(&encode_jpeg(&img, 75).unwrap()).unwrap();
        for &v in back.samples() {
            assert!((v as i32 - 131).abs() <= 2, "{v}");
        }
    }

    #[test]
    fn kernel_interpolates_at_integers() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(-2.0), 0.0);
        assert_eq!(catmull_rom(2.5), 0.0);
        // partition of unity at an arbitrary phase
        let t = 0.3;
        let s: f32 = (-1..=2).map(|k| catmull_rom(t - k as f32)).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(7, 5).to_f32();
        let same = resize_bicubic(&img, 5, 7).unwrap();
        assert_eq!(same, img);

        let c = ImageF::filled(5, 3, 42.5).unwrap();
        for (h, w) in [(1, 1), (3, 5), (17, 4), (40, 40)] {
            let r = resize_bicubic(&c, h, w).unwrap();
            assert_eq!((r.height(), r.width()), (h, w));
            assert!(r.samples().iter().all(|v| (v - 42.5).abs() < 1e-5));
        }
        assert!(resize_bicubic(&c, 0, 4).is_err());
    }

    #[test]
    fn resize_keeps_signed_overshoot() {
        let img = ImageF::from_fn(4, 1, |_, _, x| if x < 2 { -10.0 } else { 10.0 }).unwrap();
        let r = resize_bicubic(&img, 1, 16).unwrap();
        let max = r.samples().iter().cloned().fold(f32::MIN, f32::max);
        let min = r.samples().iter().cloned().fold(f32::MAX, f32::min);
        assert!(max > 10.0 && min < -10.0, "Catmull-Rom rings at a step");
    }

    #[test]
    fn square_patches() {
        let small = Image8::filled(100, 100, 1).unwrap();
        assert_eq!(crop_square_patches(&small, 2.0), vec![small.clone()]);

        let wide = Image8::filled(2048, 512, 1).unwrap();
        let p = crop_square_patches(&wide, 2.0);
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|q| q.width() == 512 && q.height() == 512));

        let odd = square_patch_origins(1300, 512, 2.0);
        assert_eq!(odd, vec![(0, 0, 512), (512, 0, 512)]);
        // 1300 - 2*512 columns are dropped
        assert_eq!(1300 - odd.len() * 512, 276);

        let tall = square_patch_origins(300, 700, 2.0);
        assert_eq!(tall, vec![(0, 0, 300), (0, 300, 300)]);

        // ratio 1.9 stays whole
        assert!(square_patch_origins(190, 100, 2.0).is_empty());
    }

    #[test]
    fn patch_content_comes_from_source() {
        let img = ramp(6, 2);
        let p = crop_square_patches(&img, 2.0);
        assert_eq!(p.len(), 3);
        assert_eq!(p[1].get(1, 1, 0), img.get(1, 1, 2));
    }

    #[test]
    fn area_downsample_averages() {
        let img = ImageF::from_fn(4, 2, |_, _, x| x as f32).unwrap();
        let d = downsample_area(&img, 2).unwrap();
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.plane(0), &[0.5, 2.5]);
    }
}
