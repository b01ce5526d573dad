use std::collections::VecDeque;
use std::path::Path;

use noise_entropy::datatools::{
    estimate_jpeg_quality, gen_brush_mask, load_mask, quality_filter, resolution_histogram,
    save_mask, validate_manifest, BinaryMask, BrushParams, Category, DiagnosticKind, JpegQuality,
    ManifestRecord, Method, RejectReason,
};
use noise_entropy::imagecore::{encode_jpeg, save_png, Image8};

fn textured(w: usize, h: usize) -> Image8 {
    Image8::from_fn(w, h, |c, y, x| ((x * 7 + y * 13 + c * 50) % 251) as u8).unwrap()
}

fn write_png(dir: &Path, name: &str, w: usize, h: usize) -> String {
    save_png(&textured(w, h), dir.join(name)).unwrap();
    name.to_string()
}

fn write_jpeg(dir: &Path, name: &str, w: usize, h: usize, q: u8) -> String {
    std::fs::write(dir.join(name), encode_jpeg(&textured(w, h), q).unwrap()).unwrap();
    name.to_string()
}

#[test]
fn manifest_with_two_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_png(d, "real.png", 32, 32);
    write_png(d, "gen.png", 32, 32);
    write_png(d, "inp.png", 32, 32);
    save_mask(&BinaryMask::zeros(32, 32), d.join("inp_mask.png")).unwrap();
    write_png(d, "src.png", 32, 32);

    let mut inp = ManifestRecord::generated("inp.png", Category::Portrait, Method::INP, "sd-inpaint");
    inp.mask_path = Some("inp_mask.png".into());
    let mut refined = ManifestRecord::generated("gen.png", Category::Art, Method::REF, "sdxl-refiner");
    refined.source_path = Some("src.png".into());
    let missing_mask = ManifestRecord::generated("gen.png", Category::Art, Method::INP, "sd-inpaint");
    let missing_file = ManifestRecord::real("nowhere.png", Category::News);
    let records = vec![
        ManifestRecord::real("real.png", Category::Landscape),
        missing_mask,
        inp,
        missing_file,
        refined,
    ];
    let diags = validate_manifest(&records, d);
    assert_eq!(diags.len(), 2, "{diags:?}");
    assert_eq!((diags[0].index, diags[0].kind), (1, DiagnosticKind::MissingMask));
    assert_eq!((diags[1].index, diags[1].kind), (3, DiagnosticKind::MissingFile));
}

#[test]
fn mask_size_must_match_image() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_png(d, "a.png", 40, 30);
    save_mask(&BinaryMask::zeros(30, 40), d.join("m.png")).unwrap();
    let mut r = ManifestRecord::generated("a.png", Category::Animal, Method::INP, "x");
    r.mask_path = Some("m.png".into());
    let diags = validate_manifest(&[r], d);
    assert_eq!(diags.len(), 1);
    assert_eq!(diags[0].kind, DiagnosticKind::MaskSizeMismatch);
}

#[test]
fn resolution_histogram_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let records: Vec<_> = [(50, 50), (400, 400), (700, 700), (1200, 1200)]
        .iter()
        .map(|&(w, h)| {
            let name = write_png(d, &format!("{w}x{h}.png"), w, h);
            ManifestRecord::real(name, Category::Landscape)
        })
        .collect();
    let hist = resolution_histogram(&records, d);
    assert_eq!(hist.counts, [1, 0, 2, 1]);
    assert_eq!(hist.fractions, [0.25, 0.0, 0.5, 0.25]);
    assert!((hist.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let one = |w, h| {
        let name = write_png(d, "single.png", w, h);
        resolution_histogram(&[ManifestRecord::real(name, Category::Art)], d).fractions
    };
    assert_eq!(one(100, 100), [0.0, 1.0, 0.0, 0.0]);
    assert_eq!(one(1000, 1000), [0.0, 0.0, 0.0, 1.0]);

    let missing = vec![ManifestRecord::real("gone.png", Category::Art)];
    let hist = resolution_histogram(&missing, d);
    assert_eq!(hist.unreadable.len(), 1);
    assert_eq!(hist.fractions, [0.0; 4]);
}

#[test]
fn quality_of_external_encoder() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pil_q85.jpg");
    match estimate_jpeg_quality(&path).unwrap() {
        JpegQuality::Quality(q) => assert!((83..=87).contains(&q), "estimated {q}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn own_encoder_qualities() {
    let dir = tempfile::tempdir().unwrap();
    for q in [90, 50] {
        let name = write_jpeg(dir.path(), "x.jpg", 24, 24, q);
        assert_eq!(
            estimate_jpeg_quality(dir.path().join(name)).unwrap(),
            JpegQuality::Quality(q)
        );
    }
}

#[test]
fn quality_filter_partition() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("broken.jpg"), b"\xFF\xD8\xFF\xDB\x00").unwrap();
    let records = vec![
        ManifestRecord::real(write_png(d, "big.png", 400, 400), Category::Art),
        ManifestRecord::real(write_png(d, "small.png", 200, 200), Category::Art),
        ManifestRecord::real(write_jpeg(d, "q95.jpg", 400, 300, 95), Category::News),
        ManifestRecord::real(write_jpeg(d, "q75.jpg", 400, 400, 75), Category::News),
        ManifestRecord::real(write_jpeg(d, "tiny_q60.jpg", 100, 100, 60), Category::News),
        ManifestRecord::real("broken.jpg", Category::News),
    ];
    let out = quality_filter(&records, d, 90, 100_000);
    let kept: Vec<_> = out.kept.iter().map(|r| r.path.as_str()).collect();
    assert_eq!(kept, ["big.png", "q95.jpg"]);
    let rejected: Vec<_> = out
        .rejected
        .iter()
        .map(|r| (r.record.path.as_str(), r.reason.code()))
        .collect();
    assert_eq!(
        rejected,
        [
            ("small.png", "resolution"),
            ("q75.jpg", "quality"),
            ("tiny_q60.jpg", "resolution"),
            ("broken.jpg", "unreadable"),
        ]
    );
    assert_eq!(out.rejected[1].reason, RejectReason::Quality { quality: 75 });
    let line = serde_json::to_string(&out.rejected[1]).unwrap();
    assert!(line.contains("\"reason\":\"quality\""), "{line}");

    let again = quality_filter(&out.kept, d, 90, 100_000);
    assert_eq!(again.kept, out.kept);
    assert!(again.rejected.is_empty());
}

#[test]
fn large_png_is_kept() {
    let dir = tempfile::tempdir().unwrap();
    let name = write_png(dir.path(), "hd.png", 2000, 2000);
    let out = quality_filter(&[ManifestRecord::real(name, Category::Landscape)], dir.path(), 90, 100_000);
    assert_eq!(out.kept.len(), 1);
}

#[test]
fn hundred_masks_binary_in_range_and_repeatable() {
    let base = BrushParams::default();
    for seed in 0..100 {
        let p = BrushParams { seed, ..base };
        let a = gen_brush_mask(256, 256, &p).unwrap();
        assert!(a.mask.bits().iter().all(|&b| b <= 1));
        assert!(a.reached_target, "seed {seed}: coverage {}", a.coverage);
        assert!((0.05..=0.40).contains(&a.coverage), "seed {seed}: {}", a.coverage);
        assert_eq!(a.mask, gen_brush_mask(256, 256, &p).unwrap().mask);
    }
}

fn components(mask: &BinaryMask) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || mask.bits()[start] == 0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && mask.bits()[j] == 1 {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    count
}

#[test]
fn single_stroke_is_connected() {
    for seed in 0..20 {
        let p = BrushParams {
            stroke_count_range: [1, 1],
            seed,
            ..BrushParams::default()
        };
        let m = gen_brush_mask(200, 240, &p).unwrap();
        assert_eq!(components(&m.mask), 1, "seed {seed}");
    }
}

#[test]
fn mask_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_brush_mask(120, 130, &BrushParams { radius_range: [5, 20], ..BrushParams::default() })
        .unwrap()
        .mask;
    let path = dir.path().join("m.png");
    save_mask(&m, &path).unwrap();
    assert_eq!(load_mask(&path).unwrap(), m);

    save_png(&textured(8, 8), &path).unwrap();
    assert!(load_mask(&path).is_err());
}
