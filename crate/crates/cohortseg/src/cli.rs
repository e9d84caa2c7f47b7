//! Command-line interface.
//!
//! Exit codes: 0 success, 2 environment or input error, 3 validation or
//! state error, 4 backend error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cohortseg_core::engine::{BackendError, EngineError};
use cohortseg_core::preprocess::PreprocessError;
use cohortseg_core::quant::VolumetryReport;

use crate::backends::build_backend;
use crate::cohort::{resume_session, CaseRecord, CohortError, Decision, SessionState, SESSION_FILE};
use crate::config::{AppConfig, ConfigError, N4Config};
use crate::formats;
use crate::pipeline::{self, AnnotateRequest, PipelineError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STATE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cohortseg", version, about = "Prompt-driven cohort annotation of 3D medical volumes")]
pub struct Cli {
    /// Cohort root folder.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Segmentation backend id (overrides the config file).
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Backend seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the root, create or update the session, print the cohort table.
    Discover,
    /// Segment a case from a prompt file, export mask and report, mark it annotated.
    Annotate(AnnotateArgs),
    /// Mark a pending case skipped.
    Skip { case_id: String },
    /// Return a skipped case to pending.
    Unskip { case_id: String },
    /// Without a case: session summary. With a case: recompute its volumetry report.
    Report {
        case_id: Option<String>,
        /// Directory holding the case outputs.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    pub case_id: String,
    /// `*_prompts.json` file.
    #[arg(long)]
    pub prompts: PathBuf,
    /// Correction edits replayed before lock-in.
    #[arg(long)]
    pub edits: Option<PathBuf>,
    /// Output directory; defaults to `<root>/derived/<case_id>/`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Apply N4 bias-field correction before segmentation.
    #[arg(long)]
    pub n4: bool,
    #[arg(long, requires = "n4")]
    pub n4_shrink: Option<usize>,
    #[arg(long, requires = "n4")]
    pub n4_levels: Option<usize>,
    #[arg(long, requires = "n4")]
    pub n4_iters: Option<usize>,
    #[arg(long, requires = "n4")]
    pub n4_conv: Option<f64>,
}

/// A failure with its exit code and the lines to print.
#[derive(Debug)]
struct Failure {
    code: i32,
    lines: Vec<String>,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            lines: vec![message.into()],
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_INPUT, e.to_string())
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::new(EXIT_BACKEND, e.to_string())
    }
}

impl From<CohortError> for Failure {
    fn from(e: CohortError) -> Self {
        let code = match e {
            CohortError::UnknownCase(_) | CohortError::InvalidTransition { .. } => EXIT_STATE,
            _ => EXIT_INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Cohort(c) => c.into(),
            PipelineError::Engine(EngineError::Backend(b)) => b.into(),
            PipelineError::Engine(EngineError::Validation(violations)) => {
                let mut lines = vec![format!("prompt validation failed: {} violation(s)", violations.len())];
                lines.extend(violations.iter().map(|v| format!("  {v}")));
                Failure {
                    code: EXIT_STATE,
                    lines,
                }
            }
            PipelineError::Preprocess(PreprocessError::InvalidParams(_))
            | PipelineError::Image(_)
            | PipelineError::Format(_)
            | PipelineError::Io { .. } => Failure::new(EXIT_INPUT, e.to_string()),
            PipelineError::Engine(_)
            | PipelineError::Preprocess(_)
            | PipelineError::Label(_)
            | PipelineError::Quant(_) => Failure::new(EXIT_STATE, e.to_string()),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            for line in &f.lines {
                let _ = writeln!(err, "error: {line}");
            }
            f.code
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(b) = &cli.backend {
        cfg.engine.backend = b.clone();
    }
    if let Some(s) = cli.seed {
        cfg.engine.seed = s;
    }
    Ok(cfg)
}

fn session_file(root: &Path) -> PathBuf {
    root.join(SESSION_FILE)
}

fn warn(err: &mut dyn Write, message: impl std::fmt::Display) {
    let _ = writeln!(err, "warning: {message}");
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Discover => discover(&cli.root, &cfg, out, err),
        Command::Annotate(args) => annotate(&cli.root, &cfg, args, out, err),
        Command::Skip { case_id } => decide(&cli.root, case_id, Decision::Skip, out),
        Command::Unskip { case_id } => decide(&cli.root, case_id, Decision::Unskip, out),
        Command::Report { case_id, out_dir } => match case_id {
            None => summary(&cli.root, out),
            Some(id) => report(&cli.root, id, out_dir.as_deref(), out),
        },
    }
}

fn print_table(cases: &[CaseRecord], out: &mut dyn Write) {
    let width = cases.iter().map(|c| c.case_id.len()).max().unwrap_or(0).max(4);
    let _ = writeln!(out, "{:<width$}  {:<12}  STATUS", "ID", "KIND");
    for c in cases {
        let status = if c.missing {
            format!("{} (missing)", c.status)
        } else {
            c.status.to_string()
        };
        let _ = writeln!(out, "{:<width$}  {:<12}  {status}", c.case_id, c.source_kind.as_str());
    }
}

fn discover(root: &Path, cfg: &AppConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let (mut state, rec, warnings) = SessionState::open_or_create(root, &cfg.discovery)?;
    for w in &warnings {
        warn(err, w);
    }
    for id in &rec.missing {
        warn(err, format_args!("case {id}: source no longer found"));
    }
    print_table(state.cases(), out);
    state.release();
    Ok(())
}

fn n4_overrides(args: &AnnotateArgs) -> N4Config {
    N4Config {
        shrink_factor: args.n4_shrink,
        fitting_levels: args.n4_levels,
        iterations: args.n4_iters,
        convergence_threshold: args.n4_conv,
    }
}

fn annotate(
    root: &Path,
    cfg: &AppConfig,
    args: &AnnotateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let n4 = if args.n4 {
        let params = cfg
            .n4
            .merged(&n4_overrides(args))
            .params()
            .map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
        Some(params)
    } else {
        None
    };
    let prompts = formats::read_prompts(&args.prompts).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?;
    let edits = match &args.edits {
        Some(p) => formats::read_edits(p).map_err(|e| Failure::new(EXIT_INPUT, e.to_string()))?,
        None => Vec::new(),
    };
    let backend = build_backend(&cfg.engine)?;
    let mut session = resume_session(&session_file(root))?;
    let request = AnnotateRequest {
        prompts,
        n4,
        out_dir: args.out_dir.clone(),
        edits,
        options: cohortseg_core::engine::PipelineOptions {
            box_margin: cfg.box_margin,
            span_override: None,
        },
    };
    let result = pipeline::annotate_case(&mut session, &args.case_id, &request, backend.as_ref());
    session.release();
    let outcome = result?;
    for w in &outcome.warnings {
        warn(err, w);
    }
    let _ = writeln!(out, "mask: {}", outcome.mask_path.display());
    let _ = writeln!(out, "report: {}", outcome.report_path.display());
    print_report(&outcome.report, out);
    Ok(())
}

fn decide(root: &Path, case_id: &str, decision: Decision, out: &mut dyn Write) -> Result<(), Failure> {
    let mut session = resume_session(&session_file(root))?;
    let result = session.record_decision(case_id, decision);
    session.release();
    result?;
    let status = session.case(case_id).map(|c| c.status.to_string()).unwrap_or_default();
    let _ = writeln!(out, "{case_id}: {status}");
    Ok(())
}

fn summary(root: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let mut session = resume_session(&session_file(root))?;
    session.release();
    print_table(session.cases(), out);
    let c = session.counts();
    let _ = writeln!(
        out,
        "total {}: {} pending, {} annotated, {} skipped",
        c.total(),
        c.pending,
        c.annotated,
        c.skipped
    );
    if let Some(next) = session.next_pending_case() {
        let _ = writeln!(out, "next: {}", next.case_id);
    }
    Ok(())
}

fn report(root: &Path, case_id: &str, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    let dir = out_dir.map_or_else(|| pipeline::default_out_dir(root, case_id), Path::to_path_buf);
    let report = pipeline::regenerate_report(case_id, &dir)?;
    let _ = writeln!(out, "report: {}", dir.join(pipeline::report_file_name(case_id)).display());
    print_report(&report, out);
    Ok(())
}

fn print_report(report: &VolumetryReport, out: &mut dyn Write) {
    let _ = writeln!(out, "{:>4}  {:<16}  {:>10}  {:>14}  {:>10}", "ID", "NAME", "VOXELS", "MM3", "ML");
    for o in &report.objects {
        let _ = writeln!(
            out,
            "{:>4}  {:<16}  {:>10}  {:>14.3}  {:>10.4}",
            o.object_id, o.name, o.voxel_count, o.volume_mm3, o.volume_ml
        );
    }
}
