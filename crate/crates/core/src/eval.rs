//! Detection metrics, JPEG robustness sweeps and entropy distribution
//! summaries. The positive class is always [`Label::Generated`].

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::Scorer;
use crate::datatools::ManifestRecord;
use crate::entropy::{extract_features, EntropyParams, EntropyTensor};
use crate::error::{Error, Result};
use crate::imagecore::{decode_image, encode_jpeg, load_image, Image8};
use crate::nlm::NlmParams;
use crate::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_QUALITIES: [u8; 3] = [90, 75, 50];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::param("no scores to evaluate"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidData(format!("score {i} is NaN")));
    }
    Ok(())
}

/// Predicts generated when `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    Ok(confusion(scores, labels, threshold)?.accuracy())
}

/// `2tp / (2tp + fp + fn)`, or 0 when nothing is positive on either side.
pub fn f1(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    Ok(confusion(scores, labels, threshold)?.f1())
}

/// Mann-Whitney AUC with ties counted as one half, computed from average
/// ranks.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::param("AUC needs both real and generated items"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tied (half-integer) ranks exact.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share the average (start+1+end)/2.
        let twice_avg = (start + 1 + end) as u128;
        let positives = order[start..end]
            .iter()
            .filter(|&&i| labels[i].is_positive())
            .count() as u128;
        twice_rank_sum += twice_avg * positives;
        start = end;
    }
    let pos_u = pos as u128;
    let twice_u = twice_rank_sum - pos_u * (pos_u + 1);
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedItem {
    pub index: usize,
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub threshold: f64,
    pub count: usize,
    pub skipped: Vec<SkippedItem>,
}

impl EvalReport {
    /// `key=value` lines; `prefix` is prepended to every key.
    pub fn kv_lines(&self, prefix: &str) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        for (k, v) in [
            ("count", self.count.to_string()),
            ("threshold", self.threshold.to_string()),
            ("acc", self.acc.to_string()),
            ("f1", self.f1.to_string()),
            ("auc", self.auc.to_string()),
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("tn", c.tn.to_string()),
            ("fn", c.fn_.to_string()),
            ("skipped", self.skipped.len().to_string()),
        ] {
            let _ = writeln!(s, "{prefix}{k}={v}");
        }
        for item in &self.skipped {
            let _ = writeln!(
                s,
                "{prefix}skipped.{}={}: {}",
                item.index, item.path, item.error
            );
        }
        s
    }
}

pub fn evaluate_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Result<EvalReport> {
    let c = confusion(scores, labels, threshold)?;
    Ok(EvalReport {
        acc: c.accuracy(),
        f1: c.f1(),
        auc: auc(scores, labels)?,
        confusion: c,
        threshold,
        count: scores.len(),
        skipped: Vec::new(),
    })
}

/// Scores every record with features from `features(index, record)`.
/// Records whose features fail are skipped and listed in the report.
pub fn evaluate_with<F>(
    model: &(dyn Scorer + Sync),
    records: &[ManifestRecord],
    threshold: f64,
    features: F,
) -> Result<EvalReport>
where
    F: Fn(usize, &ManifestRecord) -> Result<EntropyTensor> + Sync,
{
    if records.is_empty() {
        return Err(Error::param("manifest is empty"));
    }
    let results: Vec<Result<f64>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| features(i, r).and_then(|f| model.score(&f)))
        .collect();
    let mut scores = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for (i, (r, res)) in records.iter().zip(results).enumerate() {
        match res {
            Ok(s) => {
                scores.push(s);
                labels.push(r.label);
            }
            Err(e) => skipped.push(SkippedItem {
                index: i,
                path: r.path.clone(),
                error: e.to_string(),
            }),
        }
    }
    let mut report = evaluate_scores(&scores, &labels, threshold)?;
    report.skipped = skipped;
    Ok(report)
}

/// Extracts features from each image under `root` and scores them.
pub fn evaluate(
    model: &(dyn Scorer + Sync),
    records: &[ManifestRecord],
    root: impl AsRef<Path>,
    nlm: &NlmParams,
    ep: &EntropyParams,
    threshold: f64,
) -> Result<EvalReport> {
    let root = root.as_ref();
    nlm.validate()?;
    ep.validate()?;
    evaluate_with(model, records, threshold, |_, r| {
        let img = load_image(root.join(&r.path))?;
        extract_features(&img.to_f32(), nlm, ep)
    })
}

fn recompress(img: &Image8, quality: u8) -> Result<Image8> {
    decode_image(&encode_jpeg(img, quality)?)
}

/// One row per quality level; `quality == None` is the untouched baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessTable {
    pub rows: Vec<(Option<u8>, EvalReport)>,
}

impl RobustnessTable {
    pub fn report(&self, quality: Option<u8>) -> Option<&EvalReport> {
        self.rows.iter().find(|(q, _)| *q == quality).map(|(_, r)| r)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("quality\tcount\tacc\tf1\tauc\ttp\tfp\ttn\tfn\tskipped\n");
        for (q, r) in &self.rows {
            let c = &r.confusion;
            let q = q.map_or_else(|| "original".to_string(), |q| q.to_string());
            let _ = writeln!(
                s,
                "{q}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.count,
                r.acc,
                r.f1,
                r.auc,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                r.skipped.len()
            );
        }
        s
    }

    pub fn kv_lines(&self) -> String {
        self.rows
            .iter()
            .map(|(q, r)| {
                let prefix = q.map_or_else(|| "original.".to_string(), |q| format!("q{q}."));
                r.kv_lines(&prefix)
            })
            .collect()
    }
}

/// Re-encodes every image at each JPEG quality, then re-extracts features
/// and evaluates. The first row is the original images.
pub fn jpeg_robustness(
    model: &(dyn Scorer + Sync),
    records: &[ManifestRecord],
    root: impl AsRef<Path>,
    qualities: &[u8],
    nlm: &NlmParams,
    ep: &EntropyParams,
    threshold: f64,
) -> Result<RobustnessTable> {
    let root = root.as_ref();
    nlm.validate()?;
    ep.validate()?;
    if let Some(q) = qualities.iter().find(|q| !(1..=100).contains(*q)) {
        return Err(Error::param(format!("jpeg quality {q} outside 1..=100")));
    }
    let mut rows = Vec::with_capacity(qualities.len() + 1);
    for q in std::iter::once(None).chain(qualities.iter().map(|&q| Some(q))) {
        let report = evaluate_with(model, records, threshold, |_, r| {
            let mut img = load_image(root.join(&r.path))?;
            if let Some(q) = q {
                img = recompress(&img, q)?;
            }
            extract_features(&img.to_f32(), nlm, ep)
        })?;
        rows.push((q, report));
    }
    Ok(RobustnessTable { rows })
}

/// Linear interpolation between order statistics; `sorted` must be sorted
/// and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub quartiles: [f64; 3],
    pub deciles: [f64; 9],
}

pub fn summarize(values: &[f64]) -> Result<ClassSummary> {
    if values.is_empty() {
        return Err(Error::param("cannot summarise an empty class"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ClassSummary {
        count: sorted.len(),
        mean,
        std,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        quartiles: [0.25, 0.5, 0.75].map(|p| quantile(&sorted, p)),
        deciles: std::array::from_fn(|k| quantile(&sorted, (k + 1) as f64 / 10.0)),
    })
}

/// Standardised mean difference `(mean_a − mean_b) / pooled sd`.
pub fn cohen_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::param("Cohen's d needs at least two values per group"));
    }
    let sa = summarize(a)?;
    let sb = summarize(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sa.std.powi(2) + (nb - 1.0) * sb.std.powi(2)) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        return Err(Error::InvalidData("both groups have zero variance".into()));
    }
    Ok((sa.mean - sb.mean) / pooled)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub real: ClassSummary,
    pub generated: ClassSummary,
    /// Real minus generated, in pooled standard deviations; `None` when
    /// undefined (fewer than two images per class or no spread).
    pub cohen_d: Option<f64>,
}

impl DistributionSummary {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class\tcount\tmean\tstd\tmin\tq25\tmedian\tq75\tmax");
        for k in 1..=9 {
            let _ = write!(s, "\td{k}0");
        }
        s.push('\n');
        for (name, c) in [("real", &self.real), ("generated", &self.generated)] {
            let _ = write!(
                s,
                "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.count, c.mean, c.std, c.min, c.quartiles[0], c.quartiles[1], c.quartiles[2], c.max
            );
            for d in c.deciles {
                let _ = write!(s, "\t{d}");
            }
            s.push('\n');
        }
        s
    }
}

/// Per-class statistics of per-image mean entropy.
pub fn entropy_distribution_summary<'a>(
    items: impl IntoIterator<Item = (Label, &'a EntropyTensor)>,
) -> Result<DistributionSummary> {
    let mut real = Vec::new();
    let mut generated = Vec::new();
    for (label, t) in items {
        match label {
            Label::Real => real.push(t.mean()),
            Label::Generated => generated.push(t.mean()),
        }
    }
    if real.is_empty() || generated.is_empty() {
        return Err(Error::param("both classes need at least one feature tensor"));
    }
    Ok(DistributionSummary {
        real: summarize(&real)?,
        generated: summarize(&generated)?,
        cohen_d: cohen_d(&real, &generated).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Generated as G, Real as R};

    #[test]
    fn four_item_case() {
        let s = [0.9, 0.4, 0.6, 0.2];
        let l = [G, G, R, R];
        let c = confusion(&s, &l, 0.5).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 1));
        assert_eq!(accuracy(&s, &l, 0.5).unwrap(), 0.5);
        assert_eq!(f1(&s, &l, 0.5).unwrap(), 0.5);
        assert_eq!(accuracy(&[0.9, 0.1], &[G, R], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(accuracy(&[], &[], 0.5).is_err());
        assert!(accuracy(&[0.1], &[R, G], 0.5).is_err());
        assert!(auc(&[0.1, 0.2], &[R, R]).is_err());
        assert!(auc(&[f64::NAN, 0.2], &[R, G]).is_err());
    }

    #[test]
    fn f1_without_positives_is_zero() {
        assert_eq!(f1(&[0.1, 0.2], &[R, R], 0.5).unwrap(), 0.0);
        assert_eq!(f1(&[0.1, 0.2], &[G, R], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn auc_anchors() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[R, R, G, G]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[R, G, R, G, G, R]).unwrap(), 0.5);
        // two of four positive/negative pairs ordered correctly
        assert_eq!(auc(&[0.8, 0.6, 0.4, 0.55], &[G, R, G, R]).unwrap(), 0.5);
    }

    #[test]
    fn summary_of_two_values() {
        let s = summarize(&[3.0, 1.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.quartiles[1], 2.0);
        let flat = summarize(&[1.5; 4]).unwrap();
        assert_eq!(flat.std, 0.0);
        assert!(flat.deciles.iter().all(|&d| d == 1.5));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn cohen_d_known_value() {
        // means 2 and 0, both sample variances 1 → d = 2
        let d = cohen_d(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 1.0]).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }
}
