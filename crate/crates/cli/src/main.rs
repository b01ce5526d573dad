use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use noise_entropy::entropy::RangeMode;
use noise_entropy::nlm::ChannelMode;
use noise_entropy_cli::commands::{self, Outcome};
use noise_entropy_cli::{ClientMode, PromptJob, RunConfig};

/// Noise-entropy features for separating camera images from generated ones.
#[derive(Parser)]
#[command(name = "noisent", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags win over the config file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, masks, prompts and the synthetic corpus.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Worker threads (0 = all cores). Defaults to $NOISENT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory that manifest paths are relative to.
    #[arg(long, global = true)]
    image_root: Option<PathBuf>,
    /// JPEG qualities for the robustness sweep, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    qualities: Option<Vec<u8>>,
    #[arg(long, global = true)]
    patch_radius: Option<usize>,
    #[arg(long, global = true)]
    search_radius: Option<usize>,
    /// NLM filtering strength.
    #[arg(long, global = true)]
    nlm_h: Option<f32>,
    /// per-channel or joint.
    #[arg(long, global = true, value_parser = parse_channel_mode)]
    channel_mode: Option<ChannelMode>,
    #[arg(long, global = true)]
    canvas: Option<usize>,
    /// Entropy blocks per side.
    #[arg(long, global = true)]
    blocks: Option<usize>,
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// per-channel or global.
    #[arg(long, global = true, value_parser = parse_range_mode)]
    range_mode: Option<RangeMode>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    l2: Option<f64>,
}

fn parse_channel_mode(s: &str) -> Result<ChannelMode, String> {
    match s {
        "per-channel" => Ok(ChannelMode::PerChannel),
        "joint" => Ok(ChannelMode::Joint),
        other => Err(format!("unknown channel mode {other:?}")),
    }
}

fn parse_range_mode(s: &str) -> Result<RangeMode, String> {
    s.parse().map_err(|e: noise_entropy::Error| e.to_string())
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if self.image_root.is_some() {
            cfg.image_root = self.image_root.clone();
        }
        set!(threshold => threshold);
        set!(threads => threads);
        set!(qualities => qualities);
        set!(patch_radius => nlm.patch_radius);
        set!(search_radius => nlm.search_radius);
        set!(nlm_h => nlm.h);
        set!(channel_mode => nlm.channel_mode);
        set!(canvas => entropy.canvas);
        set!(blocks => entropy.n);
        set!(bins => entropy.bins);
        set!(range_mode => entropy.range_mode);
        set!(epochs => train.epochs);
        set!(learning_rate => train.learning_rate);
        set!(batch_size => train.batch_size);
        set!(l2 => train.l2);
        cfg.resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract entropy features for a manifest into a cache directory.
    Extract {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear model on cached features.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a manifest and report accuracy, F1 and AUC.
    Eval {
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Read features from this cache instead of the images.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate after JPEG re-encoding at each configured quality.
    Robustness {
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolution histogram, quality-filter dry run and entropy summary.
    Stats {
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Write rejected records here as JSON Lines.
        #[arg(long)]
        rejections: Option<PathBuf>,
        #[arg(long)]
        min_quality: Option<u8>,
        #[arg(long)]
        min_pixels: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check manifest invariants and referenced files.
    Validate { manifest: PathBuf },
    /// Generate brush-stroke inpainting masks.
    Maskgen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate text-to-image prompts from templates and a corpus.
    Prompts {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Template file; the bundled demo templates when omitted.
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Corpus file; the bundled demo corpus when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// none, identity or suffix.
        #[arg(long, default_value = "none")]
        client: ClientMode,
        /// Sample ethnic and age groups uniformly instead of by target.
        #[arg(long)]
        no_demographics: bool,
    },
    /// Write the paired synthetic corpus used for end-to-end checks.
    Synthcorpus {
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; each yields one real and one generated image.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
    },
}

fn write_report(out: Option<&Path>, text: &str) -> Result<()> {
    if let Some(path) = out {
        commands::write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Stats {
            min_quality,
            min_pixels,
            ..
        } => {
            if let Some(q) = min_quality {
                cfg.filter.min_quality = *q;
            }
            if let Some(p) = min_pixels {
                cfg.filter.min_pixels = *p;
            }
        }
        Command::Prompts {
            no_demographics: true,
            ..
        } => cfg.prompts.demographics = false,
        Command::Synthcorpus { size, side, .. } => {
            if let Some(n) = size {
                cfg.synth.pairs = *n;
            }
            if let Some(s) = side {
                cfg.synth.side = *s;
            }
            cfg = cfg.resolve()?;
        }
        _ => {}
    }
    let cfg = cfg;
    commands::with_pool(&cfg, || match cli.command {
        Command::Extract { manifest, out } => {
            commands::cmd_extract(&manifest, &out, &cfg).map(|s| s.outcome)
        }
        Command::Train {
            manifest,
            features,
            model,
        } => commands::cmd_train(&manifest, &features, &model, &cfg),
        Command::Eval {
            manifest,
            model,
            features,
            out,
        } => {
            let s = commands::cmd_eval(&manifest, &model, features.as_deref(), &cfg)?;
            write_report(out.as_deref(), &s.outcome.text)?;
            Ok(s.outcome)
        }
        Command::Robustness {
            manifest,
            model,
            out,
        } => {
            let s = commands::cmd_robustness(&manifest, &model, &cfg)?;
            write_report(out.as_deref(), &s.outcome.text)?;
            Ok(s.outcome)
        }
        Command::Stats {
            manifest,
            features,
            rejections,
            out,
            ..
        } => {
            let o = commands::cmd_stats(&manifest, features.as_deref(), rejections.as_deref(), &cfg)?;
            write_report(out.as_deref(), &o.text)?;
            Ok(o)
        }
        Command::Validate { manifest } => commands::cmd_validate(&manifest, &cfg),
        Command::Maskgen {
            count,
            height,
            width,
            out,
        } => commands::cmd_maskgen(count, height, width, &out, &cfg),
        Command::Prompts {
            count,
            out,
            templates,
            corpus,
            blocklist,
            client,
            ..
        } => commands::cmd_prompts(
            &PromptJob {
                templates,
                corpus,
                blocklist,
                count,
                client,
                out,
            },
            &cfg,
        ),
        Command::Synthcorpus { out, .. } => commands::cmd_synthcorpus(&out, &cfg),
    })?
    .context("command failed")
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            for e in &outcome.errors {
                eprintln!("error: {e}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("fatal: {e:#}");
            ExitCode::from(2)
        }
    }
}
