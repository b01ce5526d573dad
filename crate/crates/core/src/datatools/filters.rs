use std::io::Cursor;
use std::path::Path;

use image::ImageReader;
use rayon::prelude::*;
use serde::Serialize;

use super::manifest::ManifestRecord;
use crate::error::{Error, Result};

pub const RESOLUTION_BIN_LABELS: [&str; 4] = ["[1e3,1e4)", "[1e4,1e5)", "[1e5,1e6)", ">=1e6"];

/// Share of readable images per total-pixel decade.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionHistogram {
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
    /// (record index, path, error) for files whose size could not be read.
    pub unreadable: Vec<(usize, String, String)>,
}

/// Bin index of a pixel count. Anything under 10³ is folded into the first
/// bin.
pub fn resolution_bin(pixels: u64) -> usize {
    match pixels {
        p if p >= 1_000_000 => 3,
        p if p >= 100_000 => 2,
        p if p >= 10_000 => 1,
        _ => 0,
    }
}

pub fn resolution_histogram(
    records: &[ManifestRecord],
    root: impl AsRef<Path>,
) -> ResolutionHistogram {
    let root = root.as_ref();
    let dims: Vec<_> = records
        .par_iter()
        .map(|r| image::image_dimensions(root.join(&r.path)))
        .collect();
    let mut counts = [0usize; 4];
    let mut unreadable = Vec::new();
    for (i, d) in dims.into_iter().enumerate() {
        match d {
            Ok((w, h)) => counts[resolution_bin(w as u64 * h as u64)] += 1,
            Err(e) => unreadable.push((i, records[i].path.clone(), e.to_string())),
        }
    }
    let total: usize = counts.iter().sum();
    let fractions = counts.map(|c| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    });
    ResolutionHistogram {
        counts,
        fractions,
        unreadable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JpegQuality {
    NotJpeg,
    Quality(u8),
}

#[rustfmt::skip]
const STD_LUMA: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

/// Natural (row-major) index of the k-th coefficient in zigzag order.
#[rustfmt::skip]
const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

/// Standard luminance table scaled for quality `q`, natural order.
pub fn scaled_luma_table(q: u8) -> [u16; 64] {
    let q = q.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    STD_LUMA.map(|v| ((v as u32 * scale + 50) / 100).clamp(1, 255) as u16)
}

/// Luminance (id 0) quantisation table of a JPEG stream, natural order.
fn read_luma_table(bytes: &[u8]) -> Result<[u16; 64]> {
    let corrupt = |m: &str| Error::Decode(format!("corrupt JPEG header: {m}"));
    let mut pos = 2;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xFF {
            return Err(corrupt("expected marker"));
        }
        let marker = bytes[pos + 1];
        match marker {
            0xFF => {
                pos += 1;
                continue;
            }
            0xD8 | 0x01 | 0xD0..=0xD7 => {
                pos += 2;
                continue;
            }
            0xD9 | 0xDA => break,
            _ => {}
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > bytes.len() {
            return Err(corrupt("segment overruns file"));
        }
        if marker == 0xDB {
            let mut seg = &bytes[pos + 4..pos + 2 + len];
            while !seg.is_empty() {
                let precision = seg[0] >> 4;
                let id = seg[0] & 0x0F;
                let entry = if precision == 0 { 1 } else { 2 };
                if seg.len() < 1 + 64 * entry {
                    return Err(corrupt("short quantisation table"));
                }
                if id == 0 {
                    let mut table = [0u16; 64];
                    for (k, &natural) in ZIGZAG.iter().enumerate() {
                        table[natural] = if entry == 1 {
                            seg[1 + k] as u16
                        } else {
                            u16::from_be_bytes([seg[1 + 2 * k], seg[2 + 2 * k]])
                        };
                    }
                    return Ok(table);
                }
                seg = &seg[1 + 64 * entry..];
            }
        }
        pos += 2 + len;
    }
    Err(corrupt("no luminance quantisation table"))
}

/// Quality factor whose scaled standard table is nearest (L1) to the file's
/// luminance table; ties go to the higher quality.
pub fn estimate_jpeg_quality_bytes(bytes: &[u8]) -> Result<JpegQuality> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != 0xD8 {
        return Ok(JpegQuality::NotJpeg);
    }
    let table = read_luma_table(bytes)?;
    let best = (1..=100u8)
        .rev()
        .min_by_key(|&q| {
            scaled_luma_table(q)
                .iter()
                .zip(&table)
                .map(|(&a, &b)| (a as i64 - b as i64).unsigned_abs())
                .sum::<u64>()
        })
        .expect("non-empty range");
    Ok(JpegQuality::Quality(best))
}

pub fn estimate_jpeg_quality(path: impl AsRef<Path>) -> Result<JpegQuality> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    estimate_jpeg_quality_bytes(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum RejectReason {
    Unreadable { error: String },
    UnsupportedFormat,
    Resolution { pixels: u64 },
    Quality { quality: u8 },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Unreadable { .. } => "unreadable",
            RejectReason::UnsupportedFormat => "unsupported-format",
            RejectReason::Resolution { .. } => "resolution",
            RejectReason::Quality { .. } => "quality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    #[serde(flatten)]
    pub record: ManifestRecord,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<ManifestRecord>,
    pub rejected: Vec<Rejection>,
}

fn judge(path: &Path, min_quality: u8, min_pixels: u64) -> Option<RejectReason> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return Some(RejectReason::Unreadable { error: e.to_string() }),
    };
    let reader = match ImageReader::new(Cursor::new(&bytes)).with_guessed_format() {
        Ok(r) => r,
        Err(e) => return Some(RejectReason::Unreadable { error: e.to_string() }),
    };
    let format = reader.format();
    if !matches!(format, Some(image::ImageFormat::Png | image::ImageFormat::Jpeg)) {
        return Some(RejectReason::UnsupportedFormat);
    }
    let (w, h) = match reader.into_dimensions() {
        Ok(d) => d,
        Err(e) => return Some(RejectReason::Unreadable { error: e.to_string() }),
    };
    let pixels = w as u64 * h as u64;
    if pixels < min_pixels {
        return Some(RejectReason::Resolution { pixels });
    }
    match estimate_jpeg_quality_bytes(&bytes) {
        Ok(JpegQuality::Quality(q)) if q < min_quality => Some(RejectReason::Quality { quality: q }),
        Ok(_) => None,
        Err(e) => Some(RejectReason::Unreadable { error: e.to_string() }),
    }
}

/// Keeps PNGs and sufficiently high-quality JPEGs that have at least
/// `min_pixels` pixels. Order within each partition follows the input.
pub fn quality_filter(
    records: &[ManifestRecord],
    root: impl AsRef<Path>,
    min_quality: u8,
    min_pixels: u64,
) -> FilterOutcome {
    let root = root.as_ref();
    let verdicts: Vec<_> = records
        .par_iter()
        .map(|r| judge(&root.join(&r.path), min_quality, min_pixels))
        .collect();
    let mut out = FilterOutcome::default();
    for (r, v) in records.iter().zip(verdicts) {
        match v {
            None => out.kept.push(r.clone()),
            Some(reason) => out.rejected.push(Rejection {
                record: r.clone(),
                reason,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{encode_jpeg, encode_png, Image8};

    #[test]
    fn bins_are_half_open_powers_of_ten() {
        assert_eq!(resolution_bin(100 * 100), 1);
        assert_eq!(resolution_bin(9_999), 0);
        assert_eq!(resolution_bin(1000 * 1000), 3);
        assert_eq!(resolution_bin(999_999), 2);
        assert_eq!(resolution_bin(12), 0);
    }

    #[test]
    fn quality_100_and_1_tables() {
        assert!(scaled_luma_table(100).iter().all(|&v| v == 1));
        assert!(scaled_luma_table(1).iter().all(|&v| v == 255 || v > 200));
        assert_eq!(scaled_luma_table(50), STD_LUMA);
    }

    #[test]
    fn own_encoder_round_trips() {
        let img = Image8::from_fn(16, 16, |c, y, x| (c * 40 + x * 9 + y * 5) as u8).unwrap();
        for q in [10, 50, 75, 85, 90, 95] {
            let bytes = encode_jpeg(&img, q).unwrap();
            assert_eq!(estimate_jpeg_quality_bytes(&bytes).unwrap(), JpegQuality::Quality(q));
        }
        let bytes = encode_jpeg(&img, 100).unwrap();
        assert_eq!(estimate_jpeg_quality_bytes(&bytes).unwrap(), JpegQuality::Quality(100));
    }

    #[test]
    fn png_is_not_jpeg() {
        let png = encode_png(&Image8::filled(2, 2, 0).unwrap()).unwrap();
        assert_eq!(estimate_jpeg_quality_bytes(&png).unwrap(), JpegQuality::NotJpeg);
    }

    #[test]
    fn truncated_header_is_an_error() {
        let img = Image8::filled(8, 8, 9).unwrap();
        let bytes = encode_jpeg(&img, 80).unwrap();
        assert!(estimate_jpeg_quality_bytes(&bytes[..24]).is_err());
        assert!(estimate_jpeg_quality_bytes(&[0xFF, 0xD8, 0x00, 0x00, 0x00]).is_err());
    }
}
