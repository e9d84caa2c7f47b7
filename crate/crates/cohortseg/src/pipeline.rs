//! Headless annotation of one case: load, optional N4, per-object
//! segmentation, merge, corrections, lock, export, and the session update.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cohortseg_core::engine::{
    run_object_pipeline, EngineError, EngineWarning, PipelineOptions, SegmentationBackend,
};
use cohortseg_core::labels::{merge_objects, EditOp, LabelError};
use cohortseg_core::preprocess::{
    n4_correct, normalize_intensity, N4Params, NormalizeMethod, PreprocessError,
};
use cohortseg_core::prompts::PromptSet;
use cohortseg_core::ObjectId;
use cohortseg_core::quant::{compute_volumetry, QuantError, ReportMeta, VolumetryReport};
use thiserror::Error;

use crate::cohort::{CaseStatus, CohortError, Decision, SessionState};
use crate::formats::{self, FormatError};
use crate::imageio::{self, ImageIoError};

/// Directory under the cohort root that receives default outputs.
pub const DERIVED_DIR: &str = "derived";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("N4 correction: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("label map: {0}")]
    Label(#[from] LabelError),
    #[error("volumetry: {0}")]
    Quant(#[from] QuantError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default)]
pub struct AnnotateRequest {
    pub prompts: PromptSet,
    /// Runs N4 before segmentation when set.
    pub n4: Option<N4Params>,
    /// Defaults to `<root>/derived/<case_id>/`.
    pub out_dir: Option<PathBuf>,
    /// Corrections applied to the merged map before lock-in.
    pub edits: Vec<EditOp>,
    pub options: PipelineOptions,
}

#[derive(Debug, Clone)]
pub struct AnnotateOutcome {
    pub mask_path: PathBuf,
    pub report_path: PathBuf,
    pub prompts_path: PathBuf,
    pub report: VolumetryReport,
    pub warnings: Vec<String>,
}

pub fn mask_file_name(case_id: &str) -> String {
    format!("{case_id}_mask.nii.gz")
}

pub fn report_file_name(case_id: &str) -> String {
    format!("{case_id}_volumetry.json")
}

pub fn prompts_file_name(case_id: &str) -> String {
    format!("{case_id}_prompts.json")
}

pub fn default_out_dir(root: &Path, case_id: &str) -> PathBuf {
    root.join(DERIVED_DIR).join(case_id)
}

pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs the full pipeline for a pending case and marks it annotated.
///
/// Outputs are written only after every computation has succeeded, and the
/// session is updated last.
pub fn annotate_case<B: SegmentationBackend + ?Sized>(
    session: &mut SessionState,
    case_id: &str,
    request: &AnnotateRequest,
    backend: &B,
) -> Result<AnnotateOutcome, PipelineError> {
    let case = session
        .case(case_id)
        .ok_or_else(|| CohortError::UnknownCase(case_id.to_string()))?
        .clone();
    let decision = Decision::ProceedAnnotated;
    let (required, _) = decision.transition();
    if case.status != CaseStatus::Pending {
        return Err(CohortError::InvalidTransition {
            case_id: case.case_id,
            status: case.status,
            decision,
            required,
        }
        .into());
    }

    let mut warnings = Vec::new();
    let source = case.absolute_path(session.root());
    let loaded = imageio::load_volume(case.source_kind, &source, case.series_uid.as_deref())?;
    warnings.extend(loaded.warnings.iter().map(|w| w.to_string()));
    let original = loaded.volume;
    let shape = original.shape();

    let violations = request.prompts.validate(shape);
    if !violations.is_empty() {
        return Err(EngineError::Validation(violations).into());
    }

    let corrected = match &request.n4 {
        Some(params) => {
            let out = n4_correct(&original, params)?;
            warnings.extend(out.warnings.iter().map(|w| format!("N4: {w:?}")));
            out.corrected
        }
        None => original.clone(),
    };
    let input = normalize_intensity(&corrected, NormalizeMethod::PercentileClip)?;

    let mut ids: Vec<ObjectId> = request.prompts.objects().iter().map(|o| o.id).collect();
    ids.sort_unstable();
    let mut masks = Vec::new();
    let mut finalized = Vec::new();
    for &id in &ids {
        if request.prompts.boxes_for(id).is_empty() {
            warnings.push(format!("object {id}: no boxes; skipped"));
            continue;
        }
        let m = run_object_pipeline(&input, &request.prompts, id, backend, &request.options)?;
        warnings.extend(m.warnings.iter().map(EngineWarning::to_string));
        masks.push(m);
        finalized.push(id);
    }

    let mut labels = merge_objects(shape, &masks, &finalized)?;
    for edit in &request.edits {
        labels = labels.apply_edit(edit)?;
    }
    let labels = labels.lock();

    let names: BTreeMap<u16, String> = request
        .prompts
        .objects()
        .iter()
        .map(|o| (o.id, o.name.clone()))
        .collect();
    let meta = ReportMeta {
        case_id: case_id.to_string(),
        created_at: now_timestamp(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let report = compute_volumetry(&labels, shape, &original.geometry, meta, &names)?;

    let out_dir = request
        .out_dir
        .clone()
        .unwrap_or_else(|| default_out_dir(session.root(), case_id));
    fs::create_dir_all(&out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let mask_path = out_dir.join(mask_file_name(case_id));
    let report_path = out_dir.join(report_file_name(case_id));
    let prompts_path = out_dir.join(prompts_file_name(case_id));
    imageio::export_labelmap(&labels, &original.geometry, &mask_path)?;
    formats::write_report(&report, &report_path)?;
    formats::write_prompts(&prompts_path, &request.prompts)?;

    session.record_decision(case_id, decision)?;
    Ok(AnnotateOutcome {
        mask_path,
        report_path,
        prompts_path,
        report,
        warnings,
    })
}

/// Recomputes `<case_id>_volumetry.json` from the exported mask, taking
/// object names from the saved prompts when present.
pub fn regenerate_report(case_id: &str, out_dir: &Path) -> Result<VolumetryReport, PipelineError> {
    let mask_path = out_dir.join(mask_file_name(case_id));
    let (labels, geometry) = imageio::load_labelmap(&mask_path)?;
    let prompts_path = out_dir.join(prompts_file_name(case_id));
    let names: BTreeMap<u16, String> = if prompts_path.is_file() {
        formats::read_prompts(&prompts_path)?
            .objects()
            .iter()
            .map(|o| (o.id, o.name.clone()))
            .collect()
    } else {
        BTreeMap::new()
    };
    let meta = ReportMeta {
        case_id: case_id.to_string(),
        created_at: now_timestamp(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let labels = labels.lock();
    let report = compute_volumetry(&labels, labels.shape(), &geometry, meta, &names)?;
    formats::write_report(&report, &out_dir.join(report_file_name(case_id)))?;
    Ok(report)
}
