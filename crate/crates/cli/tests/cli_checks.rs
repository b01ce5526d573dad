use std::path::Path;
use std::process::Command;

use noise_entropy::classifier::{predict_score, save_model, LinearModel};
use noise_entropy::datatools::{write_manifest, Category, ManifestRecord, Method};
use noise_entropy::entropy::{extract_features, EntropyParams};
use noise_entropy::imagecore::{save_png, Image8};
use noise_entropy_cli::commands::{cache_name, FEATURE_INDEX, MASK_FRAGMENT};
use noise_entropy_cli::{
    cmd_eval, cmd_extract, cmd_maskgen, cmd_prompts, cmd_validate, ClientMode, PromptJob, RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_noisent");

fn small_config() -> RunConfig {
    let text = "[nlm]\npatch_radius = 1\nsearch_radius = 3\n[entropy]\ncanvas = 64\nn = 8\nbins = 16\n";
    RunConfig::parse(text).unwrap().resolve().unwrap()
}

fn noisy(seed: u64, side: usize) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image8::from_fn(side, side, |c, y, x| {
        (60.0 + 3.0 * x as f64 + 2.0 * y as f64 + 10.0 * c as f64 + rng.random_range(-20.0..20.0))
            as u8
    })
    .unwrap()
}

fn write_records(dir: &Path, name: &str, records: &[ManifestRecord]) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    write_manifest(records, &mut f).unwrap();
    path
}

/// Two real and two generated images plus their manifest.
fn tiny_corpus(dir: &Path) -> std::path::PathBuf {
    let mut records = Vec::new();
    for i in 0..2u64 {
        let real = format!("real_{i}.png");
        save_png(&noisy(i, 24), dir.join(&real)).unwrap();
        records.push(ManifestRecord::real(real, Category::Animal));
        let gen = format!("gen_{i}.png");
        save_png(&Image8::filled(24, 24, 90 + i as u8).unwrap(), dir.join(&gen)).unwrap();
        records.push(ManifestRecord::generated(gen, Category::Animal, Method::T2I, "toy"));
    }
    write_records(dir, "manifest.jsonl", &records)
}

#[test]
fn second_extract_recomputes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cache = dir.path().join("features");
    let cfg = small_config();

    let first = cmd_extract(&manifest, &cache, &cfg).unwrap();
    assert_eq!((first.computed, first.reused), (4, 0));
    assert!(first.outcome.errors.is_empty());
    let stamp = |p: &Path| std::fs::metadata(p).unwrap().modified().unwrap();
    let probe = cache.join(cache_name("real_0.png"));
    let before = stamp(&probe);

    let second = cmd_extract(&manifest, &cache, &cfg).unwrap();
    assert_eq!((second.computed, second.reused), (0, 4));
    assert_eq!(stamp(&probe), before);

    // A partially populated cache only fills the gaps.
    std::fs::remove_file(cache.join(cache_name("gen_1.png"))).unwrap();
    let third = cmd_extract(&manifest, &cache, &cfg).unwrap();
    assert_eq!((third.computed, third.reused), (1, 3));
}

#[test]
fn resume_with_other_settings_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cache = dir.path().join("features");
    cmd_extract(&manifest, &cache, &small_config()).unwrap();

    // Same cache header, different denoiser: only the index can tell.
    let mut other = small_config();
    other.nlm.h = 4.0;
    let err = cmd_extract(&manifest, &cache, &other).unwrap_err();
    assert!(format!("{err:#}").contains("fingerprint"), "{err:#}");
    let index = std::fs::read_to_string(cache.join(FEATURE_INDEX)).unwrap();
    assert!(index.contains(&small_config().feature_fingerprint()));
}

#[test]
fn one_image_eval_matches_hand_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let img = noisy(11, 20);
    save_png(&img, dir.path().join("one.png")).unwrap();
    let manifest = write_records(
        dir.path(),
        "one.jsonl",
        &[ManifestRecord::real("one.png", Category::Portrait)],
    );
    let cfg = small_config();
    let ep: EntropyParams = cfg.entropy;
    let dim = ep.feature_dim();
    let weights: Vec<f32> = (0..dim).map(|i| ((i % 7) as f32 - 3.0) * 0.05).collect();
    let mean: Vec<f32> = (0..dim).map(|i| 1.5 + (i % 3) as f32 * 0.25).collect();
    let std: Vec<f32> = (0..dim).map(|i| 0.5 + (i % 5) as f32 * 0.1).collect();
    let model = LinearModel::new(weights.clone(), -0.3, mean.clone(), std.clone(), Some(ep), 0).unwrap();
    let model_path = dir.path().join("hand.model");
    save_model(&model, &model_path).unwrap();

    let summary = cmd_eval(&manifest, &model_path, None, &cfg).unwrap();
    assert!(summary.outcome.errors.is_empty());
    assert_eq!(summary.auc, None);
    assert_eq!(summary.scores.len(), 1);

    let features = extract_features(&img.to_f32(), &cfg.nlm, &ep).unwrap();
    let mut z = -0.3f64;
    for (i, x) in features.values().iter().enumerate() {
        z += weights[i] as f64 * ((*x - mean[i]) as f64 / std[i] as f64);
    }
    let by_hand = 1.0 / (1.0 + (-z).exp());
    let score = summary.scores[0].1;
    assert!((score - by_hand).abs() < 1e-6, "{score} vs {by_hand}");
    assert_eq!(score, predict_score(&model, &features).unwrap());

    let c = summary.confusion;
    let predicted_generated = by_hand >= cfg.threshold;
    assert_eq!((c.fp, c.tn), (predicted_generated as usize, !predicted_generated as usize));
    assert!(summary.outcome.text.contains("auc=undefined"));
    assert!(summary.outcome.text.contains(&format!("# config_fingerprint={}", cfg.fingerprint())));
}

#[test]
fn eval_refuses_a_model_for_other_settings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cfg = small_config();
    let other = EntropyParams { n: 4, ..cfg.entropy };
    let model = LinearModel::zeros(other.feature_dim(), Some(other)).unwrap();
    let path = dir.path().join("m.model");
    save_model(&model, &path).unwrap();
    assert!(cmd_eval(&manifest, &path, None, &cfg).is_err());
}

#[test]
fn validate_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_records(
        dir.path(),
        "m.jsonl",
        &[ManifestRecord::real("nowhere.png", Category::News)],
    );
    let out = cmd_validate(&manifest, &RunConfig::default()).unwrap();
    assert_eq!(out.errors.len(), 1);
    assert_eq!(out.exit_code(), 1);

    let status = Command::new(BIN)
        .args(["validate", manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing file"));
}

#[test]
fn unknown_config_keys_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[entropy]\ncanvas = 64\nblock_count = 8\n").unwrap();
    let out = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "validate", manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("block_count"));
}

/// Parses the `# `-prefixed configuration echo back into a config.
fn echoed_config(stdout: &str) -> RunConfig {
    let body: String = stdout
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| !l.starts_with("config_fingerprint="))
        .map(|l| format!("{l}\n"))
        .collect();
    RunConfig::parse(&body).unwrap()
}

#[test]
fn flags_win_over_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "threshold = 0.25\nseed = 3\n[entropy]\ncanvas = 64\nn = 8\nbins = 16\n[train]\nepochs = 7\n",
    )
    .unwrap();
    let out = Command::new(BIN)
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "--bins",
            "8",
            "--seed",
            "12",
            "validate",
            manifest.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = echoed_config(&String::from_utf8_lossy(&out.stdout));
    assert_eq!(echoed.entropy.bins, 8);
    assert_eq!(echoed.entropy.canvas, 64);
    assert_eq!(echoed.threshold, 0.25);
    assert_eq!(echoed.train.epochs, 7);
    assert_eq!(echoed.seed, Some(12));
    assert_eq!(echoed.train.seed, 12);
}

#[test]
fn invalid_flag_values_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let out = Command::new(BIN)
        .args(["--canvas", "100", "--blocks", "64", "validate", manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn maskgen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: Some(5),
        ..RunConfig::default()
    }
    .resolve()
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(cmd_maskgen(4, 128, 160, &a, &cfg).unwrap().errors.is_empty());
    cmd_maskgen(4, 128, 160, &b, &cfg).unwrap();
    for i in 0..4 {
        let name = format!("mask_{i:04}.png");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    let fragment = std::fs::read_to_string(a.join(MASK_FRAGMENT)).unwrap();
    assert_eq!(fragment.lines().count(), 4);
    assert!(fragment.lines().nth(2).unwrap().contains("\"seed\":7"));
    assert!(fragment.contains(&cfg.fingerprint()));
}

#[test]
fn prompt_files_carry_header_and_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: Some(1),
        ..RunConfig::default()
    };
    let job = PromptJob {
        count: 20,
        client: ClientMode::Suffix,
        out: dir.path().join("prompts.txt"),
        ..PromptJob::default()
    };
    let out = cmd_prompts(&job, &cfg).unwrap();
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    let body = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };
    let short = body(&job.out);
    let long = body(&noise_entropy_cli::commands::long_prompt_path(&job.out));
    assert_eq!(short.len(), 20);
    assert_eq!(long.len(), 20);
    for (s, l) in short.iter().zip(&long) {
        assert!(l.starts_with(s.as_str()) && l.len() > s.len());
    }
    let again = dir.path().join("again.txt");
    cmd_prompts(&PromptJob { out: again.clone(), ..job.clone() }, &cfg).unwrap();
    assert_eq!(body(&again), short);
}
