//! Cohort discovery and the sequential proceed/skip session.
//!
//! A session lives in `<root>/session.json` and is rewritten atomically after
//! every decision. An advisory lock on `<root>/session.lock` keeps a second
//! process from opening the same session.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::config::DiscoveryConfig;
use crate::fsutil;
use crate::imageio::{self, SourceKind};

pub const SESSION_FILE: &str = "session.json";
pub const LOCK_FILE: &str = "session.lock";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Pending,
    Annotated,
    Skipped,
}

impl CaseStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseStatus::Pending => "pending",
            CaseStatus::Annotated => "annotated",
            CaseStatus::Skipped => "skipped",
        }
    }
}

impl fmt::Display for CaseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    ProceedAnnotated,
    Skip,
    /// Re-opens a skipped case.
    Unskip,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::ProceedAnnotated => "proceed_annotated",
            Decision::Skip => "skip",
            Decision::Unskip => "unskip",
        }
    }

    /// Status a case must have for the decision to apply, and the status
    /// it gets.
    pub fn transition(&self) -> (CaseStatus, CaseStatus) {
        match self {
            Decision::ProceedAnnotated => (CaseStatus::Pending, CaseStatus::Annotated),
            Decision::Skip => (CaseStatus::Pending, CaseStatus::Skipped),
            Decision::Unskip => (CaseStatus::Skipped, CaseStatus::Pending),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub case_id: String,
    pub source_kind: SourceKind,
    /// Relative to the cohort root, `/`-separated.
    pub source_path: String,
    /// Set for DICOM cases.
    pub series_uid: Option<String>,
    pub status: CaseStatus,
    /// The source disappeared since the case was discovered. History is kept.
    pub missing: bool,
}

impl CaseRecord {
    fn same_source(&self, other: &CaseRecord) -> bool {
        self.source_kind == other.source_kind
            && self.source_path == other.source_path
            && self.series_uid == other.series_uid
    }

    pub fn absolute_path(&self, root: &Path) -> PathBuf {
        root.join(&self.source_path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    pub root: PathBuf,
    /// Sorted by `case_id`.
    pub cases: Vec<CaseRecord>,
}

impl Cohort {
    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// A source that was found but could not become a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryWarning {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for DiscoveryWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub cohort: Cohort,
    pub warnings: Vec<DiscoveryWarning>,
}

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("cannot read cohort root {path}: {source}")]
    RootUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("case {case_id} is {status}; {decision} requires {required}")]
    InvalidTransition {
        case_id: String,
        status: CaseStatus,
        decision: Decision,
        required: CaseStatus,
    },
    #[error("no session file at {path}; run `discover` on the root to create one")]
    SessionMissing { path: PathBuf },
    #[error(
        "{path}: session file version {found} is not supported (expected {expected}); \
         move it aside and run `discover` to start a new session"
    )]
    VersionMismatch {
        path: PathBuf,
        found: u64,
        expected: u32,
    },
    #[error(
        "{path}: corrupt session file: {message}; restore it from backup or move it \
         aside and run `discover` to start a new session"
    )]
    Corrupt { path: PathBuf, message: String },
    #[error("session {path} is in use by another process")]
    Locked { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn relative_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

/// Scans `root` for cases: NIfTI files directly under it, and directories
/// (at any depth) holding a DICOM series with enough files. Directories with
/// several such series give one case per series, suffixed `_s1`, `_s2`, ...
/// in series-UID order. Colliding ids get `_2`, `_3`, ...
pub fn discover_cohort(root: &Path, config: &DiscoveryConfig) -> Result<Discovery, CohortError> {
    let entries = fs::read_dir(root).map_err(|source| CohortError::RootUnreadable {
        path: root.to_path_buf(),
        source,
    })?;
    let mut warnings = Vec::new();
    let mut found: Vec<CaseRecord> = Vec::new();

    let mut nifti_files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CohortError::RootUnreadable {
            path: root.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_file() && imageio::is_nifti_path(&path) {
            nifti_files.push(path);
        }
    }
    nifti_files.sort();
    for path in nifti_files {
        match imageio::nifti::probe_nifti(&path) {
            Ok(()) => found.push(CaseRecord {
                case_id: imageio::nifti_stem(&path).expect("filtered as NIfTI"),
                source_kind: SourceKind::NiftiFile,
                source_path: relative_string(root, &path),
                series_uid: None,
                status: CaseStatus::Pending,
                missing: false,
            }),
            Err(e) => warnings.push(DiscoveryWarning {
                path: path.clone(),
                message: format!("excluded: {e}"),
            }),
        }
    }

    let excluded: BTreeSet<&str> = config.exclude_dirs.iter().map(String::as_str).collect();
    let walker = WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            let name = e.file_name().to_string_lossy();
            !(e.file_type().is_dir() && (name.starts_with('.') || excluded.contains(name.as_ref())))
        });
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                warnings.push(DiscoveryWarning {
                    path: e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf()),
                    message: format!("excluded: {e}"),
                });
                continue;
            }
        };
        if !entry.file_type().is_dir() {
            continue;
        }
        let dir = entry.path();
        let series = match imageio::scan_dicom_dir(dir) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(DiscoveryWarning {
                    path: dir.to_path_buf(),
                    message: format!("excluded: {e}"),
                });
                continue;
            }
        };
        let (usable, small): (Vec<_>, Vec<_>) = series
            .into_iter()
            .partition(|s| s.files.len() >= config.min_dicom_files.max(1));
        for s in small {
            warnings.push(DiscoveryWarning {
                path: dir.to_path_buf(),
                message: format!(
                    "series {} excluded: {} file(s), need {}",
                    s.uid,
                    s.files.len(),
                    config.min_dicom_files
                ),
            });
        }
        let rel = relative_string(root, dir);
        let base = rel.replace('/', "_");
        let many = usable.len() > 1;
        for (i, s) in usable.into_iter().enumerate() {
            found.push(CaseRecord {
                case_id: if many { format!("{base}_s{}", i + 1) } else { base.clone() },
                source_kind: SourceKind::DicomSeries,
                source_path: rel.clone(),
                series_uid: Some(s.uid),
                status: CaseStatus::Pending,
                missing: false,
            });
        }
    }

    found.sort_by(|a, b| {
        (&a.case_id, a.source_kind, &a.source_path, &a.series_uid)
            .cmp(&(&b.case_id, b.source_kind, &b.source_path, &b.series_uid))
    });
    let mut taken = BTreeSet::new();
    for case in &mut found {
        case.case_id = unique_id(&case.case_id, &taken);
        taken.insert(case.case_id.clone());
    }
    found.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(Discovery {
        cohort: Cohort {
            root: root.to_path_buf(),
            cases: found,
        },
        warnings,
    })
}

fn unique_id(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}_{n}"))
        .find(|id| !taken.contains(id))
        .expect("unbounded search")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub case_id: String,
    pub decision: Decision,
    /// ISO 8601 / RFC 3339, UTC.
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusCounts {
    pub pending: usize,
    pub annotated: usize,
    pub skipped: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.pending + self.annotated + self.skipped
    }
}

/// What a re-discovery changed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reconciliation {
    pub added: Vec<String>,
    pub missing: Vec<String>,
    pub restored: Vec<String>,
}

impl Reconciliation {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.missing.is_empty() && self.restored.is_empty()
    }
}

/// Exclusive advisory lock on `session.lock`, released on drop.
#[derive(Debug)]
pub struct SessionLock {
    _file: File,
}

impl SessionLock {
    pub fn acquire(root: &Path) -> Result<Self, CohortError> {
        let path = root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(CohortError::Locked { path }),
            Err(fs::TryLockError::Error(e)) => Err(CohortError::Io { path, source: e }),
        }
    }
}

// ---- session.json ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    id: String,
    kind: SourceKind,
    path: String,
    status: CaseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    series: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    missing: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogDoc {
    id: String,
    decision: Decision,
    ts_iso8601: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionDoc {
    version: u32,
    root: String,
    cases: Vec<CaseDoc>,
    log: Vec<LogDoc>,
}

/// Cohort cursor plus decision history, bound to one session file.
#[derive(Debug)]
pub struct SessionState {
    cohort: Cohort,
    log: Vec<LogEntry>,
    session_file: PathBuf,
    lock: Option<SessionLock>,
}

impl SessionState {
    /// Starts a session for a freshly discovered cohort and persists it.
    pub fn create(cohort: Cohort) -> Result<Self, CohortError> {
        let lock = SessionLock::acquire(&cohort.root)?;
        let session_file = cohort.root.join(SESSION_FILE);
        let state = Self {
            cohort,
            log: Vec::new(),
            session_file,
            lock: Some(lock),
        };
        state.persist()?;
        Ok(state)
    }

    /// Resumes the session at `root` and reconciles it with the files now on
    /// disk, or creates one when none exists.
    pub fn open_or_create(
        root: &Path,
        config: &DiscoveryConfig,
    ) -> Result<(Self, Reconciliation, Vec<DiscoveryWarning>), CohortError> {
        let discovery = discover_cohort(root, config)?;
        let session_file = root.join(SESSION_FILE);
        if session_file.exists() {
            let mut state = resume_session(&session_file)?;
            let rec = state.reconcile(&discovery.cohort)?;
            Ok((state, rec, discovery.warnings))
        } else {
            let rec = Reconciliation {
                added: discovery.cohort.cases.iter().map(|c| c.case_id.clone()).collect(),
                ..Reconciliation::default()
            };
            Ok((Self::create(discovery.cohort)?, rec, discovery.warnings))
        }
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cohort.cases
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cohort.case(case_id)
    }

    pub fn decision_log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn session_file(&self) -> &Path {
        &self.session_file
    }

    pub fn root(&self) -> &Path {
        &self.cohort.root
    }

    /// Index of the first pending case whose source is present.
    pub fn cursor(&self) -> Option<usize> {
        self.cohort
            .cases
            .iter()
            .position(|c| c.status == CaseStatus::Pending && !c.missing)
    }

    pub fn next_pending_case(&self) -> Option<&CaseRecord> {
        self.cursor().map(|i| &self.cohort.cases[i])
    }

    pub fn counts(&self) -> StatusCounts {
        let mut n = StatusCounts::default();
        for c in &self.cohort.cases {
            match c.status {
                CaseStatus::Pending => n.pending += 1,
                CaseStatus::Annotated => n.annotated += 1,
                CaseStatus::Skipped => n.skipped += 1,
            }
        }
        n
    }

    /// Applies a decision stamped with the current UTC time.
    pub fn record_decision(&mut self, case_id: &str, decision: Decision) -> Result<(), CohortError> {
        let ts = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        self.record_decision_at(case_id, decision, ts)
    }

    /// Applies a decision with an explicit timestamp, then rewrites the
    /// session file. On a write failure the in-memory state is rolled back.
    pub fn record_decision_at(
        &mut self,
        case_id: &str,
        decision: Decision,
        timestamp: String,
    ) -> Result<(), CohortError> {
        let idx = self
            .cohort
            .cases
            .iter()
            .position(|c| c.case_id == case_id)
            .ok_or_else(|| CohortError::UnknownCase(case_id.to_string()))?;
        let (required, next) = decision.transition();
        let status = self.cohort.cases[idx].status;
        if status != required {
            return Err(CohortError::InvalidTransition {
                case_id: case_id.to_string(),
                status,
                decision,
                required,
            });
        }
        self.cohort.cases[idx].status = next;
        self.log.push(LogEntry {
            case_id: case_id.to_string(),
            decision,
            timestamp,
        });
        if let Err(e) = self.persist() {
            self.log.pop();
            self.cohort.cases[idx].status = status;
            return Err(e);
        }
        Ok(())
    }

    pub fn unskip(&mut self, case_id: &str) -> Result<(), CohortError> {
        self.record_decision(case_id, Decision::Unskip)
    }

    /// Merges a fresh discovery: unseen sources are added as pending, vanished
    /// ones are flagged missing (never dropped), returning ones are unflagged.
    pub fn reconcile(&mut self, discovered: &Cohort) -> Result<Reconciliation, CohortError> {
        let mut rec = Reconciliation::default();
        let mut seen = vec![false; self.cohort.cases.len()];
        let mut taken: BTreeSet<String> =
            self.cohort.cases.iter().map(|c| c.case_id.clone()).collect();
        let mut added = Vec::new();
        for d in &discovered.cases {
            match self.cohort.cases.iter().position(|c| c.same_source(d)) {
                Some(i) => seen[i] = true,
                None => {
                    let mut case = d.clone();
                    case.case_id = unique_id(&d.case_id, &taken);
                    case.status = CaseStatus::Pending;
                    case.missing = false;
                    taken.insert(case.case_id.clone());
                    rec.added.push(case.case_id.clone());
                    added.push(case);
                }
            }
        }
        for (case, present) in self.cohort.cases.iter_mut().zip(&seen) {
            if !present && !case.missing {
                case.missing = true;
                rec.missing.push(case.case_id.clone());
            } else if *present && case.missing {
                case.missing = false;
                rec.restored.push(case.case_id.clone());
            }
        }
        if rec.is_empty() {
            return Ok(rec);
        }
        self.cohort.cases.extend(added);
        self.cohort.cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        self.persist()?;
        Ok(rec)
    }

    fn to_doc(&self) -> SessionDoc {
        SessionDoc {
            version: SESSION_VERSION,
            root: self.cohort.root.to_string_lossy().into_owned(),
            cases: self
                .cohort
                .cases
                .iter()
                .map(|c| CaseDoc {
                    id: c.case_id.clone(),
                    kind: c.source_kind,
                    path: c.source_path.clone(),
                    status: c.status,
                    series: c.series_uid.clone(),
                    missing: c.missing,
                })
                .collect(),
            log: self
                .log
                .iter()
                .map(|e| LogDoc {
                    id: e.case_id.clone(),
                    decision: e.decision,
                    ts_iso8601: e.timestamp.clone(),
                })
                .collect(),
        }
    }

    /// Atomically rewrites the session file.
    pub fn persist(&self) -> Result<(), CohortError> {
        let mut bytes = serde_json::to_vec_pretty(&self.to_doc()).expect("session serializes");
        bytes.push(b'\n');
        fsutil::write_atomic(&self.session_file, &bytes).map_err(io_err(&self.session_file))
    }

    /// Releases the advisory lock early (it is also released on drop).
    pub fn release(&mut self) {
        self.lock = None;
    }
}

/// Loads a session written by [`SessionState::persist`]. The decision log is
/// replayed from an all-pending start and must reproduce the stored
/// statuses. The cohort root is taken to be the directory holding the file.
pub fn resume_session(session_file: &Path) -> Result<SessionState, CohortError> {
    let corrupt = |message: String| CohortError::Corrupt {
        path: session_file.to_path_buf(),
        message,
    };
    let text = match fs::read_to_string(session_file) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CohortError::SessionMissing {
                path: session_file.to_path_buf(),
            })
        }
        Err(e) => return Err(io_err(session_file)(e)),
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SESSION_VERSION) => {}
        Some(v) => {
            return Err(CohortError::VersionMismatch {
                path: session_file.to_path_buf(),
                found: v,
                expected: SESSION_VERSION,
            })
        }
        None => return Err(corrupt("missing or non-integer \"version\"".into())),
    }
    let doc: SessionDoc = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;

    let root = match session_file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut cases = Vec::with_capacity(doc.cases.len());
    let mut ids = BTreeSet::new();
    for c in doc.cases {
        if !ids.insert(c.id.clone()) {
            return Err(corrupt(format!("duplicate case id {}", c.id)));
        }
        cases.push(CaseRecord {
            case_id: c.id,
            source_kind: c.kind,
            source_path: c.path,
            series_uid: c.series,
            status: c.status,
            missing: c.missing,
        });
    }
    if cases.windows(2).any(|w| w[0].case_id > w[1].case_id) {
        return Err(corrupt("cases are not ordered by id".into()));
    }

    let mut replay: BTreeMap<&str, CaseStatus> =
        cases.iter().map(|c| (c.case_id.as_str(), CaseStatus::Pending)).collect();
    let mut log = Vec::with_capacity(doc.log.len());
    for (i, e) in doc.log.iter().enumerate() {
        let status = replay
            .get_mut(e.id.as_str())
            .ok_or_else(|| corrupt(format!("log entry {i} names unknown case {}", e.id)))?;
        let (required, next) = e.decision.transition();
        if *status != required {
            return Err(corrupt(format!(
                "log entry {i} applies {} to {} case {}",
                e.decision, status, e.id
            )));
        }
        *status = next;
        log.push(LogEntry {
            case_id: e.id.clone(),
            decision: e.decision,
            timestamp: e.ts_iso8601.clone(),
        });
    }
    for c in &cases {
        if replay[c.case_id.as_str()] != c.status {
            return Err(corrupt(format!(
                "case {} is {} but its log implies {}",
                c.case_id,
                c.status,
                replay[c.case_id.as_str()]
            )));
        }
    }

    let lock = SessionLock::acquire(&root)?;
    Ok(SessionState {
        cohort: Cohort { root, cases },
        log,
        session_file: session_file.to_path_buf(),
        lock: Some(lock),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nifti_case(id: &str) -> CaseRecord {
        CaseRecord {
            case_id: id.to_string(),
            source_kind: SourceKind::NiftiFile,
            source_path: format!("{id}.nii.gz"),
            series_uid: None,
            status: CaseStatus::Pending,
            missing: false,
        }
    }

    fn session(ids: &[&str]) -> (tempfile::TempDir, SessionState) {
        let dir = tempfile::tempdir().unwrap();
        let cohort = Cohort {
            root: dir.path().to_path_buf(),
            cases: ids.iter().map(|i| nifti_case(i)).collect(),
        };
        let s = SessionState::create(cohort).unwrap();
        (dir, s)
    }

    #[test]
    fn first_pending_rule() {
        let (_d, mut s) = session(&["a", "b", "c"]);
        assert_eq!(s.next_pending_case().unwrap().case_id, "a");
        s.record_decision("a", Decision::ProceedAnnotated).unwrap();
        assert_eq!(s.cursor(), Some(1));
        s.record_decision("b", Decision::Skip).unwrap();
        s.record_decision("c", Decision::Skip).unwrap();
        assert_eq!(s.next_pending_case(), None);
        assert_eq!(
            s.counts(),
            StatusCounts {
                pending: 0,
                annotated: 1,
                skipped: 2
            }
        );
    }

    #[test]
    fn invalid_transitions() {
        let (_d, mut s) = session(&["a", "b"]);
        s.record_decision("a", Decision::ProceedAnnotated).unwrap();
        assert!(matches!(
            s.record_decision("a", Decision::Skip),
            Err(CohortError::InvalidTransition { .. })
        ));
        assert!(matches!(s.unskip("b"), Err(CohortError::InvalidTransition { .. })));
        assert!(matches!(
            s.record_decision("zzz", Decision::Skip),
            Err(CohortError::UnknownCase(_))
        ));
        assert_eq!(s.decision_log().len(), 1);
    }

    #[test]
    fn unskip_reopens() {
        let (_d, mut s) = session(&["a", "b"]);
        s.record_decision("a", Decision::Skip).unwrap();
        assert_eq!(s.cursor(), Some(1));
        s.unskip("a").unwrap();
        assert_eq!(s.cursor(), Some(0));
    }

    #[test]
    fn second_open_is_locked_until_release() {
        let (d, mut s) = session(&["a"]);
        let file = d.path().join(SESSION_FILE);
        assert!(matches!(resume_session(&file), Err(CohortError::Locked { .. })));
        s.release();
        assert!(resume_session(&file).is_ok());
    }

    #[test]
    fn resume_round_trip() {
        let (d, mut s) = session(&["a", "b", "c"]);
        s.record_decision_at("b", Decision::Skip, "2026-01-02T03:04:05.000Z".into())
            .unwrap();
        s.record_decision_at("a", Decision::ProceedAnnotated, "2026-01-02T03:04:06.000Z".into())
            .unwrap();
        let before = fs::read(s.session_file()).unwrap();
        let (cases, log, cursor) = (s.cases().to_vec(), s.decision_log().to_vec(), s.cursor());
        drop(s);
        let r = resume_session(&d.path().join(SESSION_FILE)).unwrap();
        assert_eq!(r.cases(), &cases[..]);
        assert_eq!(r.decision_log(), &log[..]);
        assert_eq!(r.cursor(), cursor);
        r.persist().unwrap();
        assert_eq!(fs::read(r.session_file()).unwrap(), before);
    }

    #[test]
    fn missing_session_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let err = resume_session(&d.path().join(SESSION_FILE)).unwrap_err();
        assert!(matches!(err, CohortError::SessionMissing { .. }));
        assert!(err.to_string().contains("discover"));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join(SESSION_FILE);
        fs::write(&f, r#"{"version": 2, "root": ".", "cases": [], "log": []}"#).unwrap();
        let err = resume_session(&f).unwrap_err();
        assert!(matches!(err, CohortError::VersionMismatch { found: 2, .. }));
    }

    #[test]
    fn inconsistent_log_is_corrupt() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join(SESSION_FILE);
        fs::write(
            &f,
            r#"{"version": 1, "root": ".", "cases": [{"id":"a","kind":"nifti_file","path":"a.nii","status":"skipped"}], "log": []}"#,
        )
        .unwrap();
        assert!(matches!(resume_session(&f), Err(CohortError::Corrupt { .. })));
        fs::write(&f, "{not json").unwrap();
        assert!(matches!(resume_session(&f), Err(CohortError::Corrupt { .. })));
    }

    #[test]
    fn reconcile_adds_flags_and_restores() {
        let (d, mut s) = session(&["a", "b"]);
        s.record_decision("a", Decision::Skip).unwrap();
        let found = Cohort {
            root: d.path().to_path_buf(),
            cases: vec![nifti_case("a"), nifti_case("c")],
        };
        let rec = s.reconcile(&found).unwrap();
        assert_eq!(rec.added, vec!["c"]);
        assert_eq!(rec.missing, vec!["b"]);
        let ids: Vec<_> = s.cases().iter().map(|c| c.case_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(s.case("a").unwrap().status, CaseStatus::Skipped);
        assert!(s.case("b").unwrap().missing);
        assert_eq!(s.next_pending_case().unwrap().case_id, "c");
        let again = Cohort {
            root: d.path().to_path_buf(),
            cases: vec![nifti_case("a"), nifti_case("b"), nifti_case("c")],
        };
        let rec = s.reconcile(&again).unwrap();
        assert_eq!(rec.restored, vec!["b"]);
        assert!(s.reconcile(&again).unwrap().is_empty());
    }

    #[test]
    fn unique_ids() {
        let taken: BTreeSet<String> = ["a", "a_2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(unique_id("a", &taken), "a_3");
        assert_eq!(unique_id("b", &taken), "b");
    }
}
