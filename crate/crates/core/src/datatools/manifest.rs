use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Art,
    Landscape,
    Portrait,
    News,
    Animal,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Portrait,
        Category::Art,
        Category::Landscape,
        Category::Animal,
        Category::News,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Art => "art",
            Category::Landscape => "landscape",
            Category::Portrait => "portrait",
            Category::News => "news",
            Category::Animal => "animal",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown category {s:?}")))
    }
}

/// How a generated image was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    T2I,
    INP,
    REF,
    FS,
    #[serde(rename = "none")]
    None,
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub category: Category,
    pub method: Method,
    #[serde(default)]
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
}

impl ManifestRecord {
    pub fn real(path: impl Into<String>, category: Category) -> Self {
        Self {
            path: path.into(),
            label: Label::Real,
            category,
            method: Method::None,
            generator: String::new(),
            mask_path: None,
            source_path: None,
        }
    }

    pub fn generated(
        path: impl Into<String>,
        category: Category,
        method: Method,
        generator: impl Into<String>,
    ) -> Self {
        Self {
            path: path.into(),
            label: Label::Generated,
            category,
            method,
            generator: generator.into(),
            mask_path: None,
            source_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    RealWithMethod,
    RealWithGenerator,
    MissingMask,
    MissingSource,
    MissingFile,
    UnreadableImage,
    MaskSizeMismatch,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::RealWithMethod => "real image with generation method",
            DiagnosticKind::RealWithGenerator => "real image with generator",
            DiagnosticKind::MissingMask => "missing mask",
            DiagnosticKind::MissingSource => "missing source",
            DiagnosticKind::MissingFile => "missing file",
            DiagnosticKind::UnreadableImage => "unreadable image",
            DiagnosticKind::MaskSizeMismatch => "mask size mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Zero-based record index.
    pub index: usize,
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "record {}: {}", self.index, self.kind.as_str())?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Parses line-delimited JSON records. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(records: &[ManifestRecord], mut w: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Field-level invariants that need no filesystem access.
pub fn check_record(index: usize, r: &ManifestRecord) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Diagnostic { index, kind, detail });
    if r.label == Label::Real {
        if r.method != Method::None {
            push(DiagnosticKind::RealWithMethod, format!("{:?}", r.method));
        }
        if !r.generator.is_empty() {
            push(DiagnosticKind::RealWithGenerator, r.generator.clone());
        }
    }
    if r.method == Method::INP && r.mask_path.is_none() {
        push(DiagnosticKind::MissingMask, r.path.clone());
    }
    if r.method == Method::REF && r.source_path.is_none() {
        push(DiagnosticKind::MissingSource, r.path.clone());
    }
    out
}

fn file_checks(index: usize, r: &ManifestRecord, root: &Path) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let image_path = root.join(&r.path);
    let mut linked = vec![(&r.path, image_path.clone())];
    if let Some(m) = &r.mask_path {
        linked.push((m, root.join(m)));
    }
    if let Some(s) = &r.source_path {
        linked.push((s, root.join(s)));
    }
    for (name, p) in &linked {
        if !p.is_file() {
            out.push(Diagnostic {
                index,
                kind: DiagnosticKind::MissingFile,
                detail: (*name).clone(),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }
    let dims = match image::image_dimensions(&image_path) {
        Ok(d) => d,
        Err(e) => {
            out.push(Diagnostic {
                index,
                kind: DiagnosticKind::UnreadableImage,
                detail: format!("{}: {e}", r.path),
            });
            return out;
        }
    };
    if let Some(m) = &r.mask_path {
        match image::image_dimensions(root.join(m)) {
            Ok(md) if md != dims => out.push(Diagnostic {
                index,
                kind: DiagnosticKind::MaskSizeMismatch,
                detail: format!("image {}x{}, mask {}x{}", dims.0, dims.1, md.0, md.1),
            }),
            Ok(_) => {}
            Err(e) => out.push(Diagnostic {
                index,
                kind: DiagnosticKind::UnreadableImage,
                detail: format!("{m}: {e}"),
            }),
        }
    }
    out
}

/// All invariant and filesystem problems, ordered by record index.
pub fn validate_manifest(records: &[ManifestRecord], root: impl AsRef<Path>) -> Vec<Diagnostic> {
    let root = root.as_ref();
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut d = check_record(i, r);
            d.extend(file_checks(i, r, root));
            d
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}
