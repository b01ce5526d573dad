//! Run configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noise_entropy::classifier::TrainConfig;
use noise_entropy::datatools::BrushParams;
use noise_entropy::entropy::EntropyParams;
use noise_entropy::nlm::NlmParams;
use noise_entropy::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable consulted for the worker thread count.
pub const THREADS_ENV: &str = "NOISENT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub min_quality: u8,
    pub min_pixels: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_quality: 90,
            min_pixels: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Steer portrait prompts towards the built-in demographic targets.
    pub demographics: bool,
    pub max_retries: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            demographics: true,
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every section below.
    pub seed: Option<u64>,
    pub threshold: f64,
    pub qualities: Vec<u8>,
    /// Worker threads; 0 picks the number of cores.
    pub threads: usize,
    /// Directory manifest paths are relative to; defaults to the manifest's
    /// own directory.
    pub image_root: Option<PathBuf>,
    pub nlm: NlmParams,
    pub entropy: EntropyParams,
    pub train: TrainConfig,
    pub filter: FilterConfig,
    pub brush: BrushParams,
    pub synth: SynthConfig,
    pub prompts: PromptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threshold: 0.5,
            qualities: vec![90, 75, 50],
            threads: 0,
            image_root: None,
            nlm: NlmParams::default(),
            entropy: EntropyParams::default(),
            train: TrainConfig::default(),
            filter: FilterConfig::default(),
            brush: BrushParams::default(),
            synth: SynthConfig::default(),
            prompts: PromptConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Applies the global seed and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.brush.seed = seed;
            self.synth.seed = seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.nlm.validate()?;
        self.entropy.validate()?;
        self.train.validate()?;
        self.brush.validate()?;
        self.synth.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            bail!("threshold {} must lie in [0, 1]", self.threshold);
        }
        if let Some(q) = self.qualities.iter().find(|q| !(1..=100).contains(*q)) {
            bail!("jpeg quality {q} outside 1..=100");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Hash of the whole resolved configuration.
    pub fn fingerprint(&self) -> String {
        digest(&self.to_toml())
    }

    /// Hash of the settings that determine feature values.
    pub fn feature_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct FeatureSettings<'a> {
            nlm: &'a NlmParams,
            entropy: &'a EntropyParams,
        }
        let text = toml::to_string(&FeatureSettings {
            nlm: &self.nlm,
            entropy: &self.entropy,
        })
        .expect("feature settings serialise");
        digest(&text)
    }

    /// The configuration as `# `-prefixed lines, for embedding in reports.
    pub fn echo(&self) -> String {
        let mut s = format!("# config_fingerprint={}\n", self.fingerprint());
        for line in self.to_toml().lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    /// Thread count from the config, else the environment, else 0 (auto).
    pub fn effective_threads(&self) -> Result<usize> {
        if self.threads > 0 {
            return Ok(self.threads);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count")),
            _ => Ok(0),
        }
    }

    pub fn image_root_for(&self, manifest: &Path) -> PathBuf {
        match &self.image_root {
            Some(root) => root.clone(),
            None => manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
