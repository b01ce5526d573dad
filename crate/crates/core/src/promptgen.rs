//! Template-based prompt generation.
//!
//! Templates are sequences of fixed text and slots. Each slot names a
//! sub-corpus in a [`CorpusRepository`] and is filled with an expression
//! drawn from it. Portrait prompts can be steered towards demographic
//! targets by stratifying the "ethnic group" and "age group" sub-corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datatools::Category;
use crate::error::{Error, Result};

pub const ETHNIC_GROUP: &str = "ethnic group";
pub const AGE_GROUP: &str = "age group";

/// Sub-corpora a repository may contain, grouped by the category that uses
/// them. "location" serves both animal and news prompts.
pub const CATEGORY_SUB_CORPORA: [(Category, &[&str]); 5] = [
    (
        Category::Portrait,
        &[
            ETHNIC_GROUP,
            "gender",
            AGE_GROUP,
            "facial expression",
            "clothing",
            "appearance",
        ],
    ),
    (Category::Art, &["genre", "artist"]),
    (Category::Landscape, &["landform", "environment"]),
    (Category::Animal, &["location", "animal species"]),
    (Category::News, &["location", "figure", "body movement"]),
];

pub fn is_known_sub_corpus(name: &str) -> bool {
    CATEGORY_SUB_CORPORA
        .iter()
        .any(|(_, names)| names.contains(&name))
}

pub const DEMO_CORPUS: &str = include_str!("../assets/demo_corpus.txt");
pub const DEMO_TEMPLATES: &str = include_str!("../assets/demo_templates.txt");
pub const DEMO_BLOCKLIST: &str = include_str!("../assets/demo_blocklist.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expression {
    pub text: String,
    pub stratum: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusRepository {
    corpora: BTreeMap<String, Vec<Expression>>,
}

fn is_skippable(line: &str) -> bool {
    line.is_empty() || line.starts_with('#')
}

fn section_header(line: &str) -> Option<&str> {
    line.strip_prefix('[')?.strip_suffix(']').map(str::trim)
}

impl CorpusRepository {
    /// Parses `[name]` / `[name @ stratum]` sections with one expression per
    /// line. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut repo = CorpusRepository::default();
        let mut current: Option<(String, Option<String>)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if is_skippable(line) {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            if let Some(header) = section_header(line) {
                let (name, stratum) = match header.split_once('@') {
                    Some((n, s)) => (n.trim(), Some(s.trim().to_string())),
                    None => (header, None),
                };
                if !is_known_sub_corpus(name) {
                    return Err(parse_err(format!("unknown sub-corpus {name:?}")));
                }
                if stratum.as_deref() == Some("") {
                    return Err(parse_err("empty stratum name".into()));
                }
                repo.corpora.entry(name.to_string()).or_default();
                current = Some((name.to_string(), stratum));
                continue;
            }
            let Some((name, stratum)) = &current else {
                return Err(parse_err("expression before any [section]".into()));
            };
            repo.corpora.get_mut(name).expect("section inserted").push(Expression {
                text: line.to_string(),
                stratum: stratum.clone(),
            });
        }
        if let Some((name, _)) = repo.corpora.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidData(format!("sub-corpus {name:?} is empty")));
        }
        Ok(repo)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_CORPUS).expect("bundled demo corpus parses")
    }

    /// Adds expressions programmatically; blank strings are rejected.
    pub fn insert(
        &mut self,
        name: &str,
        stratum: Option<&str>,
        expressions: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<()> {
        if !is_known_sub_corpus(name) {
            return Err(Error::param(format!("unknown sub-corpus {name:?}")));
        }
        let entry = self.corpora.entry(name.to_string()).or_default();
        for e in expressions {
            let text: String = e.into();
            let text = text.trim();
            if text.is_empty() {
                return Err(Error::param(format!("blank expression in {name:?}")));
            }
            entry.push(Expression {
                text: text.to_string(),
                stratum: stratum.map(str::to_string),
            });
        }
        if entry.is_empty() {
            return Err(Error::param(format!("sub-corpus {name:?} is empty")));
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.corpora.keys().map(String::as_str)
    }

    pub fn expressions(&self, name: &str) -> Option<&[Expression]> {
        self.corpora.get(name).map(Vec::as_slice)
    }

    fn pool(&self, name: &str) -> Result<&[Expression]> {
        match self.corpora.get(name) {
            None => Err(Error::InvalidData(format!("missing sub-corpus {name:?}"))),
            Some(v) if v.is_empty() => {
                Err(Error::InvalidData(format!("sub-corpus {name:?} is empty")))
            }
            Some(v) => Ok(v),
        }
    }

    /// Distinct strata of a sub-corpus, in first-appearance order.
    pub fn strata(&self, name: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in self.corpora.get(name).into_iter().flatten() {
            if let Some(s) = e.stratum.as_deref() {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    fn draw_uniform<'a>(&'a self, name: &str, rng: &mut impl Rng) -> Result<&'a str> {
        let pool = self.pool(name)?;
        Ok(&pool[rng.random_range(0..pool.len())].text)
    }

    fn draw_in_stratum<'a>(
        &'a self,
        name: &str,
        stratum: &str,
        rng: &mut impl Rng,
    ) -> Result<&'a str> {
        let pool: Vec<&Expression> = self
            .pool(name)?
            .iter()
            .filter(|e| e.stratum.as_deref() == Some(stratum))
            .collect();
        if pool.is_empty() {
            return Err(Error::InvalidData(format!(
                "sub-corpus {name:?} has no expressions for {stratum:?}"
            )));
        }
        Ok(&pool[rng.random_range(0..pool.len())].text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Fixed(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub category: Category,
    pub tokens: Vec<Token>,
}

impl Template {
    pub fn new(category: Category, tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::param("template has no tokens"));
        }
        Ok(Self { category, tokens })
    }

    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Slot(s) => Some(s.as_str()),
            Token::Fixed(_) => None,
        })
    }

    /// Every slot names a non-empty sub-corpus of `repo`.
    pub fn check_against(&self, repo: &CorpusRepository) -> Result<()> {
        self.slots().try_for_each(|s| repo.pool(s).map(|_| ()))
    }
}

/// Parses templates: each starts with a `[category]` header followed by
/// `fix: text` and `slot: name` lines.
pub fn parse_templates(text: &str) -> Result<Vec<Template>> {
    let mut out: Vec<(usize, Category, Vec<Token>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if is_skippable(line) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        if let Some(header) = section_header(line) {
            let category = header.parse().map_err(|e: Error| parse_err(e.to_string()))?;
            out.push((i + 1, category, Vec::new()));
            continue;
        }
        let Some((_, _, tokens)) = out.last_mut() else {
            return Err(parse_err("token before any [category] header".into()));
        };
        if let Some(rest) = line.strip_prefix("fix:") {
            tokens.push(Token::Fixed(rest.trim().to_string()));
        } else if let Some(rest) = line.strip_prefix("slot:") {
            let name = rest.trim();
            if !is_known_sub_corpus(name) {
                return Err(parse_err(format!("unknown sub-corpus {name:?}")));
            }
            tokens.push(Token::Slot(name.to_string()));
        } else {
            return Err(parse_err(format!("expected fix: or slot:, got {line:?}")));
        }
    }
    out.into_iter()
        .map(|(line, category, tokens)| {
            Template::new(category, tokens).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<Template>> {
    let path = path.as_ref();
    parse_templates(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn demo_templates() -> Vec<Template> {
    parse_templates(DEMO_TEMPLATES).expect("bundled demo templates parse")
}

/// Joins pieces with single spaces and removes the space before closing
/// punctuation. A prompt that ends on a slot is closed with a period.
pub fn join_pieces(pieces: &[&str], ends_with_slot: bool) -> String {
    let mut out = String::new();
    for word in pieces.iter().flat_map(|p| p.split_whitespace()) {
        let glue = word.starts_with(['.', ',', ';', ':', '!', '?']);
        if !out.is_empty() && !glue {
            out.push(' ');
        }
        out.push_str(word);
    }
    if ends_with_slot && !out.is_empty() && !out.ends_with(['.', '!', '?']) {
        out.push('.');
    }
    out
}

fn render(t: &Template, filled: &[&str]) -> String {
    let mut slot_values = filled.iter();
    let pieces: Vec<&str> = t
        .tokens
        .iter()
        .map(|tok| match tok {
            Token::Fixed(s) => s.as_str(),
            Token::Slot(_) => slot_values.next().expect("one value per slot"),
        })
        .collect();
    join_pieces(&pieces, matches!(t.tokens.last(), Some(Token::Slot(_))))
}

/// Fills every slot with a uniform draw from its sub-corpus, in token order.
pub fn fill_template(t: &Template, repo: &CorpusRepository, rng: &mut impl Rng) -> Result<String> {
    let filled = t
        .slots()
        .map(|s| repo.draw_uniform(s, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(render(t, &filled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographicTargets {
    pub regions: Vec<(String, f64)>,
    pub ages: Vec<(String, f64)>,
}

impl Default for DemographicTargets {
    fn default() -> Self {
        let own = |v: &[(&str, f64)]| v.iter().map(|(k, w)| (k.to_string(), *w)).collect();
        Self {
            regions: own(&[
                ("Eurasia", 0.475),
                ("Africa", 0.067),
                ("Americas", 0.376),
                ("Oceania", 0.082),
            ]),
            ages: own(&[("0-12", 0.113), ("13-18", 0.176), ("19-60", 0.603), (">60", 0.108)]),
        }
    }
}

fn check_weights(kind: &str, weights: &[(String, f64)]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::param(format!("{kind} weights are empty")));
    }
    if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::param(format!("{kind} weights must be non-negative")));
    }
    let sum: f64 = weights.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("{kind} weights sum to {sum}, not 1")));
    }
    Ok(())
}

impl DemographicTargets {
    pub fn validate(&self) -> Result<()> {
        check_weights("region", &self.regions)?;
        check_weights("age", &self.ages)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demographic {
    pub region: String,
    pub age_group: String,
}

/// Precomputed categorical samplers for [`DemographicTargets`].
#[derive(Debug, Clone)]
pub struct DemographicSampler {
    targets: DemographicTargets,
    regions: WeightedIndex<f64>,
    ages: WeightedIndex<f64>,
}

impl DemographicSampler {
    pub fn new(targets: DemographicTargets) -> Result<Self> {
        targets.validate()?;
        let index = |w: &[(String, f64)]| {
            WeightedIndex::new(w.iter().map(|(_, w)| *w))
                .map_err(|e| Error::param(format!("bad weights: {e}")))
        };
        Ok(Self {
            regions: index(&targets.regions)?,
            ages: index(&targets.ages)?,
            targets,
        })
    }

    pub fn targets(&self) -> &DemographicTargets {
        &self.targets
    }

    /// Index of the region and of the age group; region is drawn first.
    pub fn sample_indices(&self, rng: &mut impl Rng) -> (usize, usize) {
        let r = self.regions.sample(rng);
        let a = self.ages.sample(rng);
        (r, a)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Demographic {
        let (r, a) = self.sample_indices(rng);
        Demographic {
            region: self.targets.regions[r].0.clone(),
            age_group: self.targets.ages[a].0.clone(),
        }
    }
}

/// Independent region and age-group draws from `targets`.
pub fn sample_demographics(targets: &DemographicTargets, rng: &mut impl Rng) -> Result<Demographic> {
    Ok(DemographicSampler::new(targets.clone())?.sample(rng))
}

/// Pearson's chi-square of observed counts against expected proportions.
pub fn chi_square(counts: &[u64], weights: &[f64]) -> Result<f64> {
    if counts.len() != weights.len() {
        return Err(Error::shape(weights.len(), counts.len()));
    }
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    for (&c, &w) in counts.iter().zip(weights) {
        let expected = w * total as f64;
        if expected > 0.0 {
            stat += (c as f64 - expected).powi(2) / expected;
        } else if c > 0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(stat)
}

/// Expression pairs that may not co-occur in a prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    pairs: Vec<(String, String)>,
}

impl Blocklist {
    /// One `first | second` pair per line; `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if is_skippable(line) {
                continue;
            }
            match line.split_once('|') {
                Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    pairs.push((a.trim().to_string(), b.trim().to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("expected `first | second`, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn forbids(&self, filled: &[&str]) -> bool {
        self.pairs
            .iter()
            .any(|(a, b)| filled.contains(&a.as_str()) && filled.contains(&b.as_str()))
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Category shares; `None` splits evenly over categories that have
    /// templates.
    pub mixture: Option<Vec<(Category, f64)>>,
    /// Steers portrait ethnic-group and age-group slots when the repository
    /// stratifies them.
    pub demographics: Option<DemographicTargets>,
    pub blocklist: Blocklist,
    /// Extra draws allowed per prompt to avoid duplicates and blocked pairs.
    pub max_retries: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            mixture: None,
            demographics: None,
            blocklist: Blocklist::default(),
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratedPrompt {
    pub category: Category,
    pub template: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub prompts: Vec<GeneratedPrompt>,
    pub requested: usize,
    /// Per category, prompts that could not be made unique within the
    /// retry budget.
    pub shortfall: BTreeMap<Category, usize>,
    pub retries: usize,
}

impl Batch {
    pub fn total_shortfall(&self) -> usize {
        self.shortfall.values().sum()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.prompts.iter().map(|p| p.text.as_str()).collect()
    }
}

/// Splits `count` by `shares` with the largest-remainder rule; ties go to
/// the earlier entry.
fn apportion(count: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / total * count as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = count - out.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        out[i] += 1;
    }
    out
}

struct Filler<'a> {
    repo: &'a CorpusRepository,
    demographics: Option<(DemographicSampler, Vec<String>, Vec<String>)>,
}

impl<'a> Filler<'a> {
    fn new(repo: &'a CorpusRepository, targets: Option<&DemographicTargets>) -> Result<Self> {
        let demographics = match targets {
            None => None,
            Some(t) => {
                let sampler = DemographicSampler::new(t.clone())?;
                let regions = repo.strata(ETHNIC_GROUP);
                let ages = repo.strata(AGE_GROUP);
                let pick = |wanted: &[(String, f64)], have: &[&str]| -> Vec<String> {
                    if have.is_empty() {
                        return Vec::new();
                    }
                    wanted.iter().map(|(k, _)| k.clone()).collect()
                };
                for (name, wanted, have) in [
                    (ETHNIC_GROUP, &t.regions, &regions),
                    (AGE_GROUP, &t.ages, &ages),
                ] {
                    if have.is_empty() {
                        continue;
                    }
                    if let Some((missing, _)) = wanted
                        .iter()
                        .find(|(k, w)| *w > 0.0 && !have.contains(&k.as_str()))
                    {
                        return Err(Error::InvalidData(format!(
                            "sub-corpus {name:?} has no stratum {missing:?}"
                        )));
                    }
                }
                let (r, a) = (pick(&t.regions, &regions), pick(&t.ages, &ages));
                Some((sampler, r, a))
            }
        };
        Ok(Self { repo, demographics })
    }

    fn fill(&self, t: &Template, rng: &mut ChaCha8Rng) -> Result<(String, Vec<&'a str>)> {
        let steer = t.category == Category::Portrait
            && self.demographics.is_some()
            && t.slots().any(|s| s == ETHNIC_GROUP || s == AGE_GROUP);
        let chosen = match (&self.demographics, steer) {
            (Some((sampler, regions, ages)), true) => {
                let (r, a) = sampler.sample_indices(rng);
                Some((regions.get(r), ages.get(a)))
            }
            _ => None,
        };
        let mut filled = Vec::new();
        for slot in t.slots() {
            let stratum = match (slot, &chosen) {
                (ETHNIC_GROUP, Some((Some(r), _))) => Some(r.as_str()),
                (AGE_GROUP, Some((_, Some(a)))) => Some(a.as_str()),
                _ => None,
            };
            filled.push(match stratum {
                Some(s) => self.repo.draw_in_stratum(slot, s, rng)?,
                None => self.repo.draw_uniform(slot, rng)?,
            });
        }
        Ok((render(t, &filled), filled))
    }
}

/// Generates `count` unique prompts from one seeded stream.
///
/// Prompts are produced category by category in [`Category::ALL`] order;
/// each picks a template of its category uniformly. A duplicate or blocked
/// prompt is redrawn up to `max_retries` times before it is given up and
/// counted as shortfall.
pub fn generate_batch(
    templates: &[Template],
    repo: &CorpusRepository,
    count: usize,
    seed: u64,
    opts: &BatchOptions,
) -> Result<Batch> {
    let mut by_category: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, t) in templates.iter().enumerate() {
        t.check_against(repo)?;
        by_category.entry(t.category).or_default().push(i);
    }
    let mixture: Vec<(Category, f64)> = match &opts.mixture {
        Some(m) => {
            if m.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || m.iter().all(|(_, w)| *w == 0.0)
            {
                return Err(Error::param("mixture weights must be non-negative, not all zero"));
            }
            Category::ALL
                .iter()
                .filter_map(|c| {
                    let w: f64 = m.iter().filter(|(k, _)| k == c).map(|(_, w)| w).sum();
                    (w > 0.0).then_some((*c, w))
                })
                .collect()
        }
        None => Category::ALL
            .iter()
            .filter(|c| by_category.contains_key(c))
            .map(|c| (*c, 1.0))
            .collect(),
    };
    if count > 0 {
        if mixture.is_empty() {
            return Err(Error::param("no templates to generate from"));
        }
        if let Some((c, _)) = mixture.iter().find(|(c, _)| !by_category.contains_key(c)) {
            return Err(Error::param(format!("no templates for category {}", c.as_str())));
        }
    }
    let shares: Vec<f64> = mixture.iter().map(|(_, w)| *w).collect();
    let quotas = if count == 0 { vec![0; shares.len()] } else { apportion(count, &shares) };

    let filler = Filler::new(repo, opts.demographics.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut batch = Batch {
        prompts: Vec::with_capacity(count),
        requested: count,
        shortfall: BTreeMap::new(),
        retries: 0,
    };
    for ((category, _), quota) in mixture.iter().zip(quotas) {
        let candidates = &by_category[category];
        for _ in 0..quota {
            let mut made = false;
            for attempt in 0..=opts.max_retries {
                let ti = candidates[rng.random_range(0..candidates.len())];
                let (text, filled) = filler.fill(&templates[ti], &mut rng)?;
                if !opts.blocklist.forbids(&filled) && seen.insert(text.clone()) {
                    batch.retries += attempt;
                    batch.prompts.push(GeneratedPrompt {
                        category: *category,
                        template: ti,
                        text,
                    });
                    made = true;
                    break;
                }
            }
            if !made {
                batch.retries += opts.max_retries;
                *batch.shortfall.entry(*category).or_default() += 1;
            }
        }
    }
    Ok(batch)
}

/// Mean whitespace-separated token count.
pub fn mean_token_count<S: AsRef<str>>(prompts: &[S]) -> f64 {
    if prompts.is_empty() {
        return 0.0;
    }
    let total: usize = prompts
        .iter()
        .map(|p| p.as_ref().split_whitespace().count())
        .sum();
    total as f64 / prompts.len() as f64
}

pub const REFINE_INSTRUCTION: &str = "Rewrite this sentence so that it reads fluently and naturally.";
pub const ENRICH_INSTRUCTION: &str = "Expand this sentence with more concrete, scene-specific detail.";

/// A text rewriting service, such as a language model behind an API.
pub trait RefinementClient: Sync {
    fn transform(&self, instruction: &str, text: &str) -> Result<String>;
}

/// Returns the text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityClient;

impl RefinementClient for IdentityClient {
    fn transform(&self, _instruction: &str, text: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Appends a fixed sentence; stands in for enrichment in pipeline tests.
#[derive(Debug, Clone)]
pub struct SuffixClient {
    pub suffix: String,
}

pub const DEFAULT_ENRICH_SUFFIX: &str = " The scene is shown in sharp focus with natural lighting.";

impl Default for SuffixClient {
    fn default() -> Self {
        Self {
            suffix: DEFAULT_ENRICH_SUFFIX.to_string(),
        }
    }
}

impl RefinementClient for SuffixClient {
    fn transform(&self, _instruction: &str, text: &str) -> Result<String> {
        Ok(format!("{text}{}", self.suffix))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flagged {
    pub index: usize,
    pub error: String,
}

impl fmt::Display for Flagged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prompt {}: {}", self.index, self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewritten {
    /// Same length and order as the input.
    pub prompts: Vec<String>,
    /// Items the client failed on; those are passed through unchanged.
    pub flagged: Vec<Flagged>,
}

fn rewrite<S: AsRef<str> + Sync>(
    prompts: &[S],
    client: &dyn RefinementClient,
    instruction: &str,
) -> Rewritten {
    let results: Vec<Result<String>> = prompts
        .par_iter()
        .map(|p| client.transform(instruction, p.as_ref()))
        .collect();
    let mut out = Rewritten {
        prompts: Vec::with_capacity(prompts.len()),
        flagged: Vec::new(),
    };
    for (i, (p, r)) in prompts.iter().zip(results).enumerate() {
        match r {
            Ok(text) => out.prompts.push(text),
            Err(e) => {
                out.prompts.push(p.as_ref().to_string());
                out.flagged.push(Flagged {
                    index: i,
                    error: e.to_string(),
                });
            }
        }
    }
    out
}

pub fn refine<S: AsRef<str> + Sync>(prompts: &[S], client: &dyn RefinementClient) -> Rewritten {
    rewrite(prompts, client, REFINE_INSTRUCTION)
}

pub fn enrich<S: AsRef<str> + Sync>(prompts: &[S], client: &dyn RefinementClient) -> Rewritten {
    rewrite(prompts, client, ENRICH_INSTRUCTION)
}
