//! Synthetic two-class corpus for controlled experiments.
//!
//! Each scene is a smooth random picture (gradients, sinusoids and a few
//! soft-edged shapes) defined on the unit square. A "real-like" image samples
//! the scene at full resolution and adds Gaussian sensor noise; its
//! "generated-like" twin samples the same scene at half resolution and
//! upsamples it with bicubic interpolation, with no noise added.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datatools::{write_manifest, Category, ManifestRecord, Method};
use crate::error::{Error, Result};
use crate::imagecore::{downsample_area, resize_bicubic, save_png, Image8, ImageF, CHANNELS};

pub const SYNTH_GENERATOR: &str = "bicubic-upsampler";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Scenes; each yields one image per class.
    pub pairs: usize,
    /// Side length of every image, pixels. Must be even.
    pub side: usize,
    pub sigma_range: [f64; 2],
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pairs: 200,
            side: 128,
            sigma_range: [3.0, 8.0],
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs < 2 {
            return Err(Error::param("need at least two scenes"));
        }
        if self.side < 8 || !self.side.is_multiple_of(2) {
            return Err(Error::param(format!("side {} must be even and >= 8", self.side)));
        }
        let [lo, hi] = self.sigma_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param(format!("bad sigma range [{lo}, {hi}]")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::param("train fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn train_scenes(&self) -> usize {
        ((self.pairs as f64 * self.train_fraction).round() as usize).clamp(1, self.pairs - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Wave {
    freq: [f64; 2],
    phase: f64,
    amp: [f64; CHANNELS],
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Disk { centre: [f64; 2], radius: f64 },
    Rect { lo: [f64; 2], hi: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    shape: Shape,
    colour: [f64; CHANNELS],
    /// Edge softness in unit-square units.
    soft: f64,
}

/// A random smooth picture over [0, 1]².
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    base: [f64; CHANNELS],
    gradient: [[f64; 2]; CHANNELS],
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl Scene {
    pub fn random(rng: &mut impl Rng) -> Self {
        let base = std::array::from_fn(|_| rng.random_range(60.0..190.0));
        let gradient = std::array::from_fn(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]);
        let waves = (0..rng.random_range(2..5))
            .map(|_| Wave {
                freq: [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: std::array::from_fn(|_| rng.random_range(5.0..25.0)),
            })
            .collect();
        let blobs = (0..rng.random_range(2..6))
            .map(|_| {
                let shape = if rng.random_bool(0.5) {
                    Shape::Disk {
                        centre: [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                        radius: rng.random_range(0.08..0.3),
                    }
                } else {
                    let a = [rng.random_range(0.0..0.7), rng.random_range(0.0..0.7)];
                    let size = [rng.random_range(0.15..0.5), rng.random_range(0.15..0.5)];
                    Shape::Rect {
                        lo: a,
                        hi: [a[0] + size[0], a[1] + size[1]],
                    }
                };
                Blob {
                    shape,
                    colour: std::array::from_fn(|_| rng.random_range(30.0..225.0)),
                    soft: rng.random_range(0.01..0.04),
                }
            })
            .collect();
        Self {
            base,
            gradient,
            waves,
            blobs,
        }
    }

    /// Colour at unit-square point (u, v), channel c.
    pub fn sample(&self, c: usize, u: f64, v: f64) -> f64 {
        let mut value = self.base[c] + self.gradient[c][0] * (u - 0.5) + self.gradient[c][1] * (v - 0.5);
        for w in &self.waves {
            let arg = std::f64::consts::TAU * (w.freq[0] * u + w.freq[1] * v) + w.phase;
            value += w.amp[c] * arg.sin();
        }
        for b in &self.blobs {
            // Signed distance, negative inside.
            let d = match &b.shape {
                Shape::Disk { centre, radius } => {
                    ((u - centre[0]).powi(2) + (v - centre[1]).powi(2)).sqrt() - radius
                }
                Shape::Rect { lo, hi } => {
                    let dx = (lo[0] - u).max(u - hi[0]);
                    let dy = (lo[1] - v).max(v - hi[1]);
                    dx.max(dy)
                }
            };
            let alpha = 1.0 - smoothstep((d + b.soft) / (2.0 * b.soft));
            value += alpha * (b.colour[c] - value);
        }
        value
    }

    /// Samples pixel centres of a `side`×`side` grid.
    pub fn render(&self, side: usize) -> ImageF {
        ImageF::from_fn(side, side, |c, y, x| {
            let u = (x as f64 + 0.5) / side as f64;
            let v = (y as f64 + 0.5) / side as f64;
            self.sample(c, u, v) as f32
        })
        .expect("side > 0")
    }
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// The real-like and generated-like images of scene `index`, plus the
/// noise standard deviation used for the real one.
pub fn synth_pair(index: usize, cfg: &SynthConfig) -> Result<(Image8, Image8, f64)> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let scene = Scene::random(&mut rng);
    let [lo, hi] = cfg.sigma_range;
    let sigma = if lo == hi { lo } else { rng.random_range(lo..hi) };

    let mut real = scene.render(cfg.side);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
        for v in real.samples_mut() {
            *v += noise.sample(&mut rng) as f32;
        }
    }
    let half = scene.render(cfg.side / 2);
    let generated = resize_bicubic(&half, cfg.side, cfg.side)?;
    Ok((real.to_u8(), generated.to_u8(), sigma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub train: Vec<ManifestRecord>,
    pub test: Vec<ManifestRecord>,
    pub sigmas: Vec<f64>,
}

pub const MANIFEST_ALL: &str = "manifest.jsonl";
pub const MANIFEST_TRAIN: &str = "train.jsonl";
pub const MANIFEST_TEST: &str = "test.jsonl";

/// Writes PNGs under `real/` and `generated/` plus three manifests. Both
/// images of a scene land in the same split.
pub fn write_corpus(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let root = out_dir.as_ref();
    for sub in ["real", "generated"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let pairs: Vec<(ManifestRecord, ManifestRecord, f64)> = (0..cfg.pairs)
        .into_par_iter()
        .map(|i| {
            let (real, generated, sigma) = synth_pair(i, cfg)?;
            let real_path = format!("real/scene_{i:04}.png");
            let gen_path = format!("generated/scene_{i:04}.png");
            save_png(&real, root.join(&real_path))?;
            save_png(&generated, root.join(&gen_path))?;
            Ok((
                ManifestRecord::real(real_path, Category::Landscape),
                ManifestRecord::generated(gen_path, Category::Landscape, Method::T2I, SYNTH_GENERATOR),
                sigma,
            ))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..cfg.pairs).collect();
    order.shuffle(&mut scene_rng(cfg.seed, 0));
    let n_train = cfg.train_scenes();
    let mut train_scenes = order[..n_train].to_vec();
    let mut test_scenes = order[n_train..].to_vec();
    train_scenes.sort_unstable();
    test_scenes.sort_unstable();
    let pick = |scenes: &[usize]| -> Vec<ManifestRecord> {
        scenes
            .iter()
            .flat_map(|&i| [pairs[i].0.clone(), pairs[i].1.clone()])
            .collect()
    };
    let corpus = SynthCorpus {
        root: root.to_path_buf(),
        records: pick(&(0..cfg.pairs).collect::<Vec<_>>()),
        train: pick(&train_scenes),
        test: pick(&test_scenes),
        sigmas: pairs.iter().map(|p| p.2).collect(),
    };
    for (name, records) in [
        (MANIFEST_ALL, &corpus.records),
        (MANIFEST_TRAIN, &corpus.train),
        (MANIFEST_TEST, &corpus.test),
    ] {
        let path = root.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write_manifest(records, &mut w).map_err(|e| Error::io(&path, e))?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))?;
    }
    Ok(corpus)
}

/// Baseline features: the image area-averaged down by `factor`, flattened
/// in planar order and scaled to [0, 1].
pub fn pixel_features(img: &Image8, factor: usize) -> Result<Vec<f32>> {
    let small = downsample_area(&img.to_f32(), factor)?;
    Ok(small.samples().iter().map(|v| v / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_reproducible() {
        let cfg = SynthConfig {
            side: 32,
            ..SynthConfig::default()
        };
        let a = synth_pair(3, &cfg).unwrap();
        let b = synth_pair(3, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, synth_pair(4, &cfg).unwrap().0);
        assert!((3.0..8.0).contains(&a.2));
    }

    #[test]
    fn generated_twin_tracks_the_scene() {
        let cfg = SynthConfig {
            side: 64,
            sigma_range: [0.0, 0.0],
            ..SynthConfig::default()
        };
        let (real, generated, _) = synth_pair(0, &cfg).unwrap();
        let mae: f64 = real
            .samples()
            .iter()
            .zip(generated.samples())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / real.samples().len() as f64;
        assert!(mae < 6.0, "{mae}");
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { side: 31, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { pairs: 1, ..SynthConfig::default() }.validate().is_err());
        assert_eq!(SynthConfig::default().train_scenes(), 160);
    }
}
