//! Dataset construction helpers: manifests, curation filters and the
//! brush-stroke inpainting mask generator.

mod filters;
mod manifest;
mod mask;

pub use filters::{
    estimate_jpeg_quality, estimate_jpeg_quality_bytes, quality_filter, resolution_histogram,
    FilterOutcome, JpegQuality, RejectReason, Rejection, ResolutionHistogram, RESOLUTION_BIN_LABELS,
};
pub use manifest::{
    check_record, load_manifest, parse_manifest, validate_manifest, write_manifest, Category,
    Diagnostic, DiagnosticKind, ManifestRecord, Method,
};
pub use mask::{gen_brush_mask, load_mask, save_mask, BinaryMask, BrushMask, BrushParams};
