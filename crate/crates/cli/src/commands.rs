//! Subcommand implementations. Each returns a printable summary plus the
//! error diagnostics it collected; fatal problems come back as `Err`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use noise_entropy::classifier::{load_model, save_model, train, LinearModel, Scorer};
use noise_entropy::datatools::{
    gen_brush_mask, load_manifest, quality_filter, resolution_histogram, save_mask,
    validate_manifest, ManifestRecord, RESOLUTION_BIN_LABELS,
};
use noise_entropy::entropy::{
    extract_features, load_features, peek_feature_header, write_features, EntropyParams,
    EntropyTensor, FeatureHeader,
};
use noise_entropy::eval::{self, entropy_distribution_summary, jpeg_robustness, RobustnessTable};
use noise_entropy::imagecore::load_image;
use noise_entropy::nlm::NlmParams;
use noise_entropy::promptgen::{
    demo_templates, enrich, generate_batch, load_templates, refine, BatchOptions, Blocklist,
    CorpusRepository, DemographicTargets, IdentityClient, RefinementClient, SuffixClient,
};
use noise_entropy::synth::{write_corpus, MANIFEST_TEST, MANIFEST_TRAIN};
use noise_entropy::Label;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{digest, RunConfig};

/// Name of the index written next to feature caches.
pub const FEATURE_INDEX: &str = "index.json";
/// Name of the configuration echo written into a synthetic corpus.
pub const SYNTH_CONFIG_ECHO: &str = "synth.toml";
pub const MASK_FRAGMENT: &str = "masks.jsonl";

/// What every command hands back to `main`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    /// Human-readable summary, already carrying the config echo.
    pub text: String,
    /// Error-level diagnostics. A non-empty list means exit code 1.
    pub errors: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.errors.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Runs `f` on a pool sized from the configuration.
pub fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_threads()?)
        .build()
        .context("building thread pool")?;
    Ok(pool.install(f))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_records(manifest: &Path) -> Result<Vec<ManifestRecord>> {
    load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))
}

fn record_error(index: usize, r: &ManifestRecord, e: impl std::fmt::Display) -> String {
    format!("record {index} ({}): {e}", r.path)
}

// ---------------------------------------------------------------------------
// Feature cache

/// Cache file name for a manifest path.
pub fn cache_name(record_path: &str) -> String {
    format!("{}.nent", digest(record_path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureIndex {
    pub fingerprint: String,
    pub nlm: NlmParams,
    pub entropy: EntropyParams,
    /// Manifest path to cache file name.
    pub entries: BTreeMap<String, String>,
}

impl FeatureIndex {
    fn fresh(cfg: &RunConfig) -> Self {
        Self {
            fingerprint: cfg.feature_fingerprint(),
            nlm: cfg.nlm,
            entropy: cfg.entropy,
            entries: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(FEATURE_INDEX);
        if !path.exists() {
            return Ok(None);
        }
        let text =
            std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let index = serde_json::from_str(&text)
            .with_context(|| format!("parsing feature index {}", path.display()))?;
        Ok(Some(index))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(FEATURE_INDEX), text.as_bytes())
    }

    /// Loads the index of `dir` and insists it was built with `cfg`'s
    /// feature settings.
    pub fn load_matching(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let index = Self::load(dir)?
            .with_context(|| format!("{} has no {FEATURE_INDEX}; run extract first", dir.display()))?;
        index.check(cfg, dir)?;
        Ok(index)
    }

    fn check(&self, cfg: &RunConfig, dir: &Path) -> Result<()> {
        let want = cfg.feature_fingerprint();
        ensure!(
            self.fingerprint == want,
            "feature cache {} was built with fingerprint {} but the configuration gives {want}",
            dir.display(),
            self.fingerprint
        );
        Ok(())
    }
}

fn compute_features(path: &Path, cfg: &RunConfig) -> noise_entropy::Result<EntropyTensor> {
    let img = load_image(path)?;
    extract_features(&img.to_f32(), &cfg.nlm, &cfg.entropy)
}

fn load_cached(dir: &Path, record: &ManifestRecord, cfg: &RunConfig) -> Result<EntropyTensor> {
    let path = dir.join(cache_name(&record.path));
    let (header, tensor) =
        load_features(&path).with_context(|| format!("loading {}", path.display()))?;
    ensure!(
        header == FeatureHeader::from(&cfg.entropy),
        "{} holds {header:?}, configuration expects {:?}",
        path.display(),
        FeatureHeader::from(&cfg.entropy)
    );
    Ok(tensor)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractSummary {
    pub computed: usize,
    pub reused: usize,
    pub outcome: Outcome,
}

/// Extracts features for every manifest image into `out_dir`. Caches that
/// already match the configuration are left alone, so an interrupted run
/// can simply be restarted.
pub fn cmd_extract(manifest: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<ExtractSummary> {
    let records = read_records(manifest)?;
    let root = cfg.image_root_for(manifest);
    create_dir(out_dir)?;
    let mut index = match FeatureIndex::load(out_dir)? {
        Some(existing) => {
            existing.check(cfg, out_dir)?;
            existing
        }
        None => FeatureIndex::fresh(cfg),
    };
    // Record the fingerprint before any cache is written, so a crash mid-run
    // still leaves caches that can be trusted on resume.
    index.save(out_dir)?;

    let header = FeatureHeader::from(&cfg.entropy);
    let results: Vec<Result<bool>> = records
        .par_iter()
        .map(|r| {
            let cache = out_dir.join(cache_name(&r.path));
            if peek_feature_header(&cache) == Some(header) {
                return Ok(false);
            }
            let tensor = compute_features(&root.join(&r.path), cfg)?;
            let mut bytes = Vec::new();
            write_features(&tensor, &cfg.entropy, &mut bytes)?;
            write_atomic(&cache, &bytes)?;
            Ok(true)
        })
        .collect();

    let mut summary = ExtractSummary::default();
    for (i, (r, res)) in records.iter().zip(results).enumerate() {
        match res {
            Ok(computed) => {
                if computed {
                    summary.computed += 1;
                } else {
                    summary.reused += 1;
                }
                index.entries.insert(r.path.clone(), cache_name(&r.path));
            }
            Err(e) => summary.outcome.errors.push(record_error(i, r, format!("{e:#}"))),
        }
    }
    index.save(out_dir)?;

    let mut text = cfg.echo();
    let _ = writeln!(text, "feature_fingerprint={}", index.fingerprint);
    let _ = writeln!(text, "records={}", records.len());
    let _ = writeln!(text, "computed={}", summary.computed);
    let _ = writeln!(text, "reused={}", summary.reused);
    let _ = writeln!(text, "errors={}", summary.outcome.errors.len());
    summary.outcome.text = text;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Training and evaluation

fn provenance_tag(cfg: &RunConfig) -> String {
    format!("features-{}", cfg.feature_fingerprint())
}

/// Trains on cached features and writes the model plus `<model>.log`.
pub fn cmd_train(
    manifest: &Path,
    features_dir: &Path,
    model_out: &Path,
    cfg: &RunConfig,
) -> Result<Outcome> {
    let records = read_records(manifest)?;
    FeatureIndex::load_matching(features_dir, cfg)?;
    let loaded: Vec<Result<EntropyTensor>> = records
        .par_iter()
        .map(|r| load_cached(features_dir, r, cfg))
        .collect();
    let mut outcome = Outcome::default();
    let mut features = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, (r, res)) in records.iter().zip(loaded).enumerate() {
        match res {
            Ok(t) => {
                features.push(t);
                labels.push(r.label);
            }
            Err(e) => outcome.errors.push(record_error(i, r, format!("{e:#}"))),
        }
    }
    let trained = train(&features, &labels, &cfg.train, &cfg.entropy).context("training failed")?;
    let model = trained.model.clone().with_provenance(provenance_tag(cfg))?;
    if let Some(dir) = model_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_model(&model, model_out)?;

    let mut log = cfg.echo();
    let _ = writeln!(log, "# examples={}", features.len());
    log.push_str(&trained.log_text());
    let mut log_path = model_out.as_os_str().to_owned();
    log_path.push(".log");
    write_atomic(Path::new(&log_path), log.as_bytes())?;

    let mut text = cfg.echo();
    let _ = writeln!(text, "examples={}", features.len());
    let _ = writeln!(text, "final_loss={}", trained.final_loss());
    let _ = writeln!(text, "rejected_epochs={}", trained.rejected_epochs.len());
    let _ = writeln!(text, "model={}", model_out.display());
    outcome.text = text;
    Ok(outcome)
}

/// Refuses models whose feature settings disagree with the configuration.
pub fn check_model(model: &LinearModel, cfg: &RunConfig) -> Result<()> {
    match model.params() {
        Some(p) => ensure!(
            *p == cfg.entropy,
            "model was trained on entropy settings {p:?}, configuration has {:?}",
            cfg.entropy
        ),
        None => bail!("model does not record entropy settings, so it cannot score entropy features"),
    }
    if let Some(tag) = model.provenance() {
        let want = provenance_tag(cfg);
        ensure!(
            tag == want,
            "model provenance {tag} does not match configuration ({want})"
        );
    }
    Ok(())
}

fn model_header(model: &LinearModel) -> String {
    format!(
        "# model_provenance={}\n",
        model.provenance().unwrap_or("unrecorded")
    )
}

/// Evaluation over a manifest. AUC is `None` when only one class is present.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub confusion: eval::Confusion,
    pub auc: Option<f64>,
    /// (record index, score) for every scored record.
    pub scores: Vec<(usize, f64)>,
    pub outcome: Outcome,
}

/// Scores a manifest with `model`, from the feature cache when one is given
/// and from the images otherwise.
pub fn cmd_eval(
    manifest: &Path,
    model_path: &Path,
    features_dir: Option<&Path>,
    cfg: &RunConfig,
) -> Result<EvalSummary> {
    let records = read_records(manifest)?;
    ensure!(!records.is_empty(), "manifest {} is empty", manifest.display());
    let model = load_model(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    check_model(&model, cfg)?;
    if let Some(dir) = features_dir {
        FeatureIndex::load_matching(dir, cfg)?;
    }
    let root = cfg.image_root_for(manifest);
    let results: Vec<Result<f64>> = records
        .par_iter()
        .map(|r| {
            let f = match features_dir {
                Some(dir) => load_cached(dir, r, cfg)?,
                None => compute_features(&root.join(&r.path), cfg)?,
            };
            Ok(model.score(&f)?)
        })
        .collect();

    let mut outcome = Outcome::default();
    let mut scores = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, (r, res)) in records.iter().zip(results).enumerate() {
        match res {
            Ok(s) => {
                scores.push((i, s));
                values.push(s);
                labels.push(r.label);
            }
            Err(e) => outcome.errors.push(record_error(i, r, format!("{e:#}"))),
        }
    }
    ensure!(!values.is_empty(), "no record could be scored");
    let confusion = eval::confusion(&values, &labels, cfg.threshold)?;
    let auc = eval::auc(&values, &labels).ok();

    let mut text = cfg.echo();
    text.push_str(&model_header(&model));
    let auc_text = auc.map_or("undefined".to_string(), |a| a.to_string());
    for (k, v) in [
        ("count", values.len().to_string()),
        ("threshold", cfg.threshold.to_string()),
        ("acc", confusion.accuracy().to_string()),
        ("f1", confusion.f1().to_string()),
        ("auc", auc_text),
        ("tp", confusion.tp.to_string()),
        ("fp", confusion.fp.to_string()),
        ("tn", confusion.tn.to_string()),
        ("fn", confusion.fn_.to_string()),
        ("skipped", outcome.errors.len().to_string()),
    ] {
        let _ = writeln!(text, "{k}={v}");
    }
    for (i, s) in &scores {
        let _ = writeln!(text, "score.{i}={s}");
    }
    outcome.text = text;
    Ok(EvalSummary {
        confusion,
        auc,
        scores,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSummary {
    pub table: RobustnessTable,
    pub outcome: Outcome,
}

/// Re-encodes the manifest at each configured JPEG quality and evaluates.
pub fn cmd_robustness(manifest: &Path, model_path: &Path, cfg: &RunConfig) -> Result<RobustnessSummary> {
    let records = read_records(manifest)?;
    let model = load_model(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    check_model(&model, cfg)?;
    let root = cfg.image_root_for(manifest);
    let table = jpeg_robustness(
        &model,
        &records,
        &root,
        &cfg.qualities,
        &cfg.nlm,
        &cfg.entropy,
        cfg.threshold,
    )?;
    let mut outcome = Outcome::default();
    for (q, report) in &table.rows {
        let q = q.map_or("original".to_string(), |q| format!("q{q}"));
        for item in &report.skipped {
            outcome
                .errors
                .push(format!("{q}: record {} ({}): {}", item.index, item.path, item.error));
        }
    }
    let mut text = cfg.echo();
    text.push_str(&model_header(&model));
    text.push_str(&table.kv_lines());
    text.push_str(&table.to_tsv());
    outcome.text = text;
    Ok(RobustnessSummary { table, outcome })
}

// ---------------------------------------------------------------------------
// Dataset tooling

/// Resolution histogram, quality-filter dry run and per-class entropy
/// summary. Rejections go to `rejections_out` as JSON Lines when given.
pub fn cmd_stats(
    manifest: &Path,
    features_dir: Option<&Path>,
    rejections_out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<Outcome> {
    let records = read_records(manifest)?;
    let root = cfg.image_root_for(manifest);
    let mut outcome = Outcome::default();
    let mut text = cfg.echo();

    let hist = resolution_histogram(&records, &root);
    for (i, label) in RESOLUTION_BIN_LABELS.iter().enumerate() {
        let _ = writeln!(
            text,
            "resolution.{label}={} ({:.4})",
            hist.counts[i], hist.fractions[i]
        );
    }
    for (i, path, e) in &hist.unreadable {
        outcome.errors.push(format!("record {i} ({path}): {e}"));
    }

    let filtered = quality_filter(&records, &root, cfg.filter.min_quality, cfg.filter.min_pixels);
    let _ = writeln!(text, "filter.kept={}", filtered.kept.len());
    let _ = writeln!(text, "filter.rejected={}", filtered.rejected.len());
    let mut by_reason: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &filtered.rejected {
        *by_reason.entry(r.reason.code()).or_default() += 1;
    }
    for (code, n) in &by_reason {
        let _ = writeln!(text, "filter.rejected.{code}={n}");
    }
    if let Some(path) = rejections_out {
        let mut body = String::new();
        for r in &filtered.rejected {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        write_atomic(path, body.as_bytes())?;
    }

    if let Some(dir) = features_dir {
        FeatureIndex::load_matching(dir, cfg)?;
    }
    let feats: Vec<Result<EntropyTensor>> = records
        .par_iter()
        .map(|r| match features_dir {
            Some(dir) => load_cached(dir, r, cfg),
            None => Ok(compute_features(&root.join(&r.path), cfg)?),
        })
        .collect();
    let mut items = Vec::new();
    for (i, (r, res)) in records.iter().zip(&feats).enumerate() {
        match res {
            Ok(t) => items.push((r.label, t)),
            Err(e) => outcome.errors.push(record_error(i, r, format!("{e:#}"))),
        }
    }
    match entropy_distribution_summary(items.iter().map(|(l, t)| (*l, *t))) {
        Ok(summary) => {
            let d = summary.cohen_d.map_or("undefined".to_string(), |d| d.to_string());
            let _ = writeln!(text, "entropy.cohen_d={d}");
            text.push_str(&summary.to_tsv());
        }
        Err(e) => {
            let _ = writeln!(text, "entropy.summary=undefined ({e})");
        }
    }
    outcome.text = text;
    Ok(outcome)
}

/// Checks manifest invariants and that every referenced file is usable.
pub fn cmd_validate(manifest: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let records = read_records(manifest)?;
    let root = cfg.image_root_for(manifest);
    let diagnostics = validate_manifest(&records, &root);
    let mut text = cfg.echo();
    let _ = writeln!(text, "records={}", records.len());
    let _ = writeln!(text, "diagnostics={}", diagnostics.len());
    Ok(Outcome {
        text,
        errors: diagnostics.iter().map(ToString::to_string).collect(),
    })
}

#[derive(Debug, Serialize)]
struct MaskEntry<'a> {
    mask_path: String,
    height: usize,
    width: usize,
    seed: u64,
    coverage: f64,
    strokes: usize,
    reached_target: bool,
    config_fingerprint: &'a str,
}

/// Writes `count` brush masks as `mask_NNNN.png`; mask `i` uses seed
/// `brush.seed + i`. A JSON Lines fragment describes each mask.
pub fn cmd_maskgen(count: usize, h: usize, w: usize, out_dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    ensure!(count > 0, "mask count must be positive");
    create_dir(out_dir)?;
    let fingerprint = cfg.fingerprint();
    let masks: Vec<_> = (0..count)
        .into_par_iter()
        .map(|i| {
            let params = noise_entropy::datatools::BrushParams {
                seed: cfg.brush.seed.wrapping_add(i as u64),
                ..cfg.brush
            };
            let m = gen_brush_mask(h, w, &params)?;
            let name = format!("mask_{i:04}.png");
            save_mask(&m.mask, out_dir.join(&name))?;
            Ok((name, params.seed, m))
        })
        .collect::<noise_entropy::Result<_>>()?;

    let mut outcome = Outcome::default();
    let mut fragment = String::new();
    for (name, seed, m) in &masks {
        if !m.reached_target {
            outcome.errors.push(format!(
                "{name}: coverage {:.4} below target minimum {}",
                m.coverage, cfg.brush.target_coverage[0]
            ));
        }
        let entry = MaskEntry {
            mask_path: name.clone(),
            height: h,
            width: w,
            seed: *seed,
            coverage: m.coverage,
            strokes: m.strokes,
            reached_target: m.reached_target,
            config_fingerprint: &fingerprint,
        };
        fragment.push_str(&serde_json::to_string(&entry)?);
        fragment.push('\n');
    }
    write_atomic(&out_dir.join(MASK_FRAGMENT), fragment.as_bytes())?;

    let mut text = cfg.echo();
    let _ = writeln!(text, "masks={count}");
    let mean = masks.iter().map(|m| m.2.coverage).sum::<f64>() / count as f64;
    let _ = writeln!(text, "mean_coverage={mean:.4}");
    outcome.text = text;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Prompts and the synthetic corpus

/// Which rewriting client post-processes generated prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClientMode {
    /// Template output only.
    #[default]
    None,
    Identity,
    /// Appends a fixed enrichment sentence in the long variant.
    Suffix,
}

impl FromStr for ClientMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(ClientMode::None),
            "identity" => Ok(ClientMode::Identity),
            "suffix" => Ok(ClientMode::Suffix),
            other => Err(format!("unknown client mode {other:?} (none, identity, suffix)")),
        }
    }
}

impl ClientMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientMode::None => "none",
            ClientMode::Identity => "identity",
            ClientMode::Suffix => "suffix",
        }
    }
}

/// Inputs to [`cmd_prompts`]; any missing file falls back to the bundled
/// demo inventory.
#[derive(Debug, Clone, Default)]
pub struct PromptJob {
    pub templates: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    pub count: usize,
    pub client: ClientMode,
    pub out: PathBuf,
}

/// Path of the long (enriched) prompt file that goes with `out`.
pub fn long_prompt_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".long");
    PathBuf::from(p)
}

/// Generates prompts with seed `cfg.seed` (0 when unset). Writes one prompt
/// per line after a `#` header; with a client, the refined prompts go to
/// `out` and the enriched ones to `out.long`.
pub fn cmd_prompts(job: &PromptJob, cfg: &RunConfig) -> Result<Outcome> {
    ensure!(job.count > 0, "prompt count must be positive");
    let templates = match &job.templates {
        Some(p) => load_templates(p).with_context(|| format!("loading {}", p.display()))?,
        None => demo_templates(),
    };
    let repo = match &job.corpus {
        Some(p) => CorpusRepository::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => CorpusRepository::demo(),
    };
    let blocklist = match &job.blocklist {
        Some(p) => Blocklist::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Blocklist::parse(noise_entropy::promptgen::DEMO_BLOCKLIST)?,
    };
    let seed = cfg.seed.unwrap_or(0);
    let opts = BatchOptions {
        mixture: None,
        demographics: cfg.prompts.demographics.then(DemographicTargets::default),
        blocklist,
        max_retries: cfg.prompts.max_retries,
    };
    let batch = generate_batch(&templates, &repo, job.count, seed, &opts)?;

    let mut outcome = Outcome::default();
    for (category, n) in &batch.shortfall {
        outcome.errors.push(format!(
            "{}: {n} prompts short after retries",
            category.as_str()
        ));
    }
    let texts = batch.texts();
    // The suffix mock only stands in for enrichment; refinement passes
    // text through in both mock modes.
    let clients: Option<(Box<dyn RefinementClient>, Box<dyn RefinementClient>)> = match job.client {
        ClientMode::None => None,
        ClientMode::Identity => Some((Box::new(IdentityClient), Box::new(IdentityClient))),
        ClientMode::Suffix => Some((Box::new(IdentityClient), Box::new(SuffixClient::default()))),
    };

    let mut header = cfg.echo();
    let _ = writeln!(header, "# seed={seed}");
    let _ = writeln!(header, "# client={}", job.client.as_str());
    let _ = writeln!(header, "# requested={}", batch.requested);
    let _ = writeln!(header, "# produced={}", batch.prompts.len());
    let _ = writeln!(header, "# retries={}", batch.retries);
    let render = |lines: &[String], variant: &str| {
        let mut s = header.clone();
        let _ = writeln!(s, "# variant={variant}");
        for l in lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    };

    if let Some(dir) = job.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let short: Vec<String> = match &clients {
        None => texts.iter().map(|t| t.to_string()).collect(),
        Some((refiner, enricher)) => {
            let refined = refine(&texts, refiner.as_ref());
            for f in &refined.flagged {
                outcome.errors.push(format!("refine: {f}"));
            }
            let enriched = enrich(&refined.prompts, enricher.as_ref());
            for f in &enriched.flagged {
                outcome.errors.push(format!("enrich: {f}"));
            }
            write_atomic(
                &long_prompt_path(&job.out),
                render(&enriched.prompts, "long").as_bytes(),
            )?;
            refined.prompts
        }
    };
    write_atomic(&job.out, render(&short, "short").as_bytes())?;

    let mut text = header;
    let _ = writeln!(
        text,
        "mean_tokens={:.2}",
        noise_entropy::promptgen::mean_token_count(&short)
    );
    let _ = writeln!(text, "shortfall={}", batch.total_shortfall());
    outcome.text = text;
    Ok(outcome)
}

/// Writes the paired synthetic corpus and its manifests to `out_dir`.
pub fn cmd_synthcorpus(out_dir: &Path, cfg: &RunConfig) -> Result<Outcome> {
    create_dir(out_dir)?;
    let corpus = write_corpus(out_dir, &cfg.synth)?;
    let echo = cfg.echo();
    write_atomic(&out_dir.join(SYNTH_CONFIG_ECHO), echo.as_bytes())?;
    let mut text = echo;
    let _ = writeln!(text, "images={}", corpus.records.len());
    let _ = writeln!(text, "train={} ({MANIFEST_TRAIN})", corpus.train.len());
    let _ = writeln!(text, "test={} ({MANIFEST_TEST})", corpus.test.len());
    let real = corpus.records.iter().filter(|r| r.label == Label::Real).count();
    let _ = writeln!(text, "real={real}");
    let _ = writeln!(text, "generated={}", corpus.records.len() - real);
    Ok(Outcome {
        text,
        errors: Vec::new(),
    })
}
