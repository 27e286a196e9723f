//! The `copilot` command line: a thin layer over [`copilot_app::Service`].
//!
//! Results go to stdout. Failures print one JSON line on stderr and exit
//! with 1 (usage or config), 2 (validation, not found, conflict),
//! 3 (model provider) or 4 (internal).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use copilot_app::views::RecordSummary;
use copilot_app::{AppConfig, AppError, ConfigOverrides, ErrorKind, Service};
use copilot_client::CaptureLog;
use copilot_core::analytics::report::{
    write_anova_csv, write_lengths_csv, write_manova_csv, write_pairwise_csv, Factor,
};
use copilot_core::ingest::AssignmentBundle;
use copilot_core::{LifecycleState, PromptVariant, TriageCategory};
use copilot_store::{RecordQuery, SortOrder, MAX_LIMIT};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(
    name = "copilot",
    version,
    about = "Generate, triage, review and deliver assignment feedback"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file (default: $FEEDBACK_CONFIG, else ./feedback.toml if present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// SQLite database path.
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    /// Seed for the mock model and the pseudonym map.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Assignment to act on; optional when only one is stored.
    #[arg(long, global = true)]
    pub assignment: Option<String>,
    /// Use the deterministic mock model instead of the HTTP provider.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Provider base URL.
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    /// Provider model name.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Write every outbound model request to this file as JSON lines.
    #[arg(long, global = true, hide = true)]
    pub capture: Option<PathBuf>,
    /// Log to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Base,
    Advanced,
}

impl From<Variant> for PromptVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Base => PromptVariant::Base,
            Variant::Advanced => PromptVariant::Advanced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Colour {
    Red,
    Amber,
    Green,
}

impl From<Colour> for TriageCategory {
    fn from(c: Colour) -> Self {
        match c {
            Colour::Red => TriageCategory::ReviewRequired,
            Colour::Amber => TriageCategory::ReviewDesirable,
            Colour::Green => TriageCategory::ReadyToDeliver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and store an assignment bundle directory.
    Ingest { bundle: PathBuf },
    /// Generate, evaluate and triage feedback for every queued student.
    Generate {
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long)]
        parallel: Option<usize>,
        /// Limit the run to these student ids.
        #[arg(long = "student", value_name = "ID")]
        students: Vec<String>,
    },
    /// Show triage counts, or re-apply thresholds with --reconfig.
    Triage {
        #[arg(long)]
        reconfig: bool,
        #[arg(long)]
        green_min: Option<u8>,
        #[arg(long)]
        amber_min: Option<u8>,
    },
    /// List records; --queue shows one triage colour in review order.
    List {
        #[arg(long, value_enum)]
        queue: Option<Colour>,
    },
    /// Approve a triaged record.
    Approve {
        record_id: String,
        /// Expected version; the command fails if the record changed since.
        #[arg(long)]
        version: Option<u64>,
    },
    /// Send a record back and generate it again.
    Regenerate {
        record_id: String,
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        note: Option<String>,
    },
    /// Deliver approved records and write the delivery artifact.
    Deliver {
        #[arg(long, conflicts_with = "record_ids")]
        all_approved: bool,
        record_ids: Vec<String>,
        /// Artifact path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a research-question analysis and write CSV tables.
    Analyze {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        rq: u8,
        /// Main table path; extra tables go next to it (default: stdout, main table only).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the full report as JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Compare score distributions by variant, achievement or variant_achievement.
    Compare {
        #[arg(long, default_value = "variant")]
        factor: String,
    },
    /// Export per-record scores.
    Export {
        #[arg(long, value_enum, default_value = "json")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

/// How a successful command finished. `Degraded` commands printed their
/// output but still exit non-zero.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    Degraded(AppError),
}

impl Cli {
    pub fn overrides(&self) -> ConfigOverrides {
        let g = &self.global;
        let mut o = ConfigOverrides {
            database: g.db.clone(),
            seed: g.seed,
            mock: g.mock.then_some(true),
            base_url: g.base_url.clone(),
            model: g.model.clone(),
            ..Default::default()
        };
        match &self.command {
            Command::Generate { variant, parallel, .. } => {
                o.variant = variant.map(Into::into);
                o.parallelism = *parallel;
            }
            Command::Triage {
                green_min, amber_min, ..
            } => {
                o.green_min = *green_min;
                o.amber_min = *amber_min;
            }
            Command::Serve { listen } => o.listen = listen.clone(),
            _ => {}
        }
        o
    }

    pub fn config(&self, vars: impl Fn(&str) -> Option<String>) -> Result<AppConfig, AppError> {
        AppConfig::resolve(self.global.config.as_deref(), vars, &self.overrides())
    }
}

fn json_line(out: &mut dyn Write, v: &impl serde::Serialize) -> Result<(), AppError> {
    serde_json::to_writer(&mut *out, v).map_err(|e| AppError::Internal(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, AppError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// `out.csv` → `out_<suffix>.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn csv_err(e: impl std::fmt::Display) -> AppError {
    AppError::Internal(format!("csv: {e}"))
}

fn summary_line(r: &RecordSummary) -> String {
    let num = |x: Option<f64>| x.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into());
    format!(
        "{}\t{}\t{}\t{}\t{}",
        r.record_id,
        r.state,
        r.colour.as_deref().unwrap_or("-"),
        num(r.mean_score),
        r.min_score.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
    )
}

/// Runs one command against an opened service.
pub async fn execute(cli: &Cli, service: Arc<Service>, out: &mut dyn Write) -> Result<Outcome, AppError> {
    let aid = cli.global.assignment.as_deref();
    match &cli.command {
        Command::Ingest { bundle } => {
            let bundle = AssignmentBundle::from_dir(bundle)
                .map_err(|e| AppError::Invalid(format!("cannot read bundle {}: {e}", bundle.display())))?;
            json_line(out, &service.ingest(&bundle)?)?;
        }
        Command::Generate { students, .. } => {
            let assignment = service.resolve_assignment(aid)?;
            let cfg = service.config();
            let only = (!students.is_empty()).then_some(students.as_slice());
            let job = service.create_job(&assignment, cfg.variant, cfg.parallelism, only)?;
            service.run_job(&job.job_id).await?;
            let view = service.job_view(&job.job_id)?;
            let stats = service.model_stats();
            json_line(
                out,
                &json!({
                    "job_id": view.job.job_id,
                    "status": view.job.status,
                    "variant": view.job.variant,
                    "counts": view.counts,
                    "model_calls": stats.completed,
                }),
            )?;
            let failed = view.counts.get(&LifecycleState::Failed).copied().unwrap_or(0);
            if failed > 0 {
                return Ok(Outcome::Degraded(AppError::Provider(format!(
                    "{failed} record(s) failed; see the audit notes"
                ))));
            }
        }
        Command::Triage { reconfig, .. } => {
            let summary = if *reconfig {
                service.retriage(aid)?
            } else {
                service.triage_summary(aid)?
            };
            json_line(out, &summary)?;
        }
        Command::List { queue } => {
            let rows = match queue {
                Some(c) => service.review_queue(aid, (*c).into())?,
                None => {
                    let assignment = service.resolve_assignment(aid)?;
                    let mut q = RecordQuery {
                        assignment_id: Some(assignment),
                        sort: SortOrder::RecordId,
                        limit: MAX_LIMIT,
                        ..Default::default()
                    };
                    let mut rows = Vec::new();
                    loop {
                        let page = service.queue(&q)?;
                        let n = page.items.len();
                        rows.extend(page.items);
                        if n < q.limit {
                            break;
                        }
                        q.offset += n;
                    }
                    rows
                }
            };
            for r in &rows {
                writeln!(out, "{}", summary_line(r))?;
            }
        }
        Command::Approve { record_id, version } => {
            json_line(out, &service.approve(record_id, *version, "cli")?)?;
        }
        Command::Regenerate {
            record_id,
            version,
            note,
        } => {
            let (_, job) = service.regenerate(record_id, *version, "cli", note.clone())?;
            service.run_job(&job.job_id).await?;
            let detail = service.detail(record_id)?;
            json_line(
                out,
                &json!({
                    "record_id": detail.record_id,
                    "state": detail.state,
                    "triage": detail.triage,
                    "mean_score": detail.mean_score,
                    "version": detail.version,
                }),
            )?;
            if detail.state == LifecycleState::Failed {
                return Ok(Outcome::Degraded(AppError::Provider(format!("{record_id} failed"))));
            }
        }
        Command::Deliver {
            all_approved,
            record_ids,
            out: path,
        } => {
            let report = if *all_approved {
                service.deliver_all_approved(aid, "cli")?
            } else if record_ids.is_empty() {
                return Err(AppError::Config("give record ids or --all-approved".into()));
            } else {
                service.deliver(record_ids, "cli")?
            };
            match path {
                Some(p) => {
                    let mut f = create(p)?;
                    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| AppError::Internal(e.to_string()))?;
                    f.flush()?;
                    json_line(
                        out,
                        &json!({"delivered": report.delivered.len(), "failed": report.failed.len(), "out": p}),
                    )?;
                }
                None => json_line(out, &report)?,
            }
            if let Some(f) = report.failed.first() {
                return Ok(Outcome::Degraded(AppError::Invalid(format!(
                    "{} record(s) not delivered; first: {}: {}",
                    report.failed.len(),
                    f.record_id,
                    f.message
                ))));
            }
        }
        Command::Analyze { rq, out: path, json } => analyze(&service, aid, *rq, path.as_deref(), *json, out)?,
        Command::Compare { factor } => {
            let factor: Factor = factor.parse().map_err(AppError::Invalid)?;
            json_line(out, &service.compare(aid, factor)?)?;
        }
        Command::Export { format, out: path } => {
            let mut sink: Box<dyn Write> = match path {
                Some(p) => Box::new(create(p)?),
                None => Box::new(&mut *out),
            };
            match format {
                ExportFormat::Json => service.export_json(aid, &mut sink)?,
                ExportFormat::Csv => service.export_csv(aid, &mut sink)?,
            }
            sink.flush()?;
        }
        Command::Serve { .. } => {
            let cfg = service.config();
            let addr: SocketAddr = cfg
                .server
                .listen
                .parse()
                .map_err(|e| AppError::Config(format!("invalid listen address {:?}: {e}", cfg.server.listen)))?;
            let state = copilot_server::AppState {
                service: service.clone(),
                api_token: cfg.server.api_token.clone(),
            };
            copilot_server::serve(state, addr).await?;
        }
    }
    Ok(Outcome::Ok)
}

fn analyze(
    service: &Service,
    aid: Option<&str>,
    rq: u8,
    path: Option<&Path>,
    as_json: bool,
    out: &mut dyn Write,
) -> Result<(), AppError> {
    let mut main: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(&mut *out),
    };
    match rq {
        1 => {
            let r = service.rq1(aid)?;
            if as_json {
                json_line(&mut main, &r)?;
            } else {
                write_anova_csv(&mut main, &[&r.anova, &r.levene]).map_err(csv_err)?;
            }
        }
        2 => {
            let r = service.rq2(aid)?;
            if as_json {
                json_line(&mut main, &r)?;
            } else {
                write_anova_csv(&mut main, &r.followups.iter().collect::<Vec<_>>()).map_err(csv_err)?;
                if let Some(p) = path {
                    write_manova_csv(create(&sibling(p, "manova"))?, &r.manova).map_err(csv_err)?;
                }
            }
        }
        _ => {
            let r = service.rq3(aid)?;
            if as_json {
                json_line(&mut main, &r)?;
            } else {
                write_anova_csv(&mut main, &r.effects.iter().collect::<Vec<_>>()).map_err(csv_err)?;
                if let Some(p) = path {
                    write_pairwise_csv(create(&sibling(p, "pairwise"))?, &r.pairwise).map_err(csv_err)?;
                    write_lengths_csv(create(&sibling(p, "lengths"))?, &r.lengths).map_err(csv_err)?;
                }
            }
        }
    }
    main.flush()?;
    Ok(())
}

/// The single stderr line for a failure.
pub fn error_line(e: &AppError) -> Value {
    let mut v = json!({
        "error": e.code(),
        "kind": e.kind().as_str(),
        "exit_code": e.kind().exit_code(),
        "message": e.to_string(),
    });
    if let Some(d) = e.details() {
        v["details"] = d;
    }
    v
}

/// Parses, runs and reports; returns the process exit code.
pub async fn main_with(
    args: Vec<std::ffi::OsString>,
    vars: impl Fn(&str) -> Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let line = json!({"error": "usage", "kind": "usage", "exit_code": 1, "message": first});
            let _ = writeln!(err, "{line}");
            return ErrorKind::Usage.exit_code();
        }
    };
    let fail = |err: &mut dyn Write, e: &AppError| {
        let _ = writeln!(err, "{}", error_line(e));
        e.kind().exit_code()
    };
    let config = match cli.config(&vars) {
        Ok(c) => c,
        Err(e) => return fail(err, &e),
    };
    let capture = cli.global.capture.as_ref().map(|_| Arc::new(CaptureLog::new()));
    let service = match Service::open(config) {
        Ok(s) => match &capture {
            Some(log) => s.with_capture(log.clone()),
            None => s,
        },
        Err(e) => return fail(err, &e),
    };
    let result = execute(&cli, Arc::new(service), out).await;
    if let (Some(path), Some(log)) = (&cli.global.capture, &capture) {
        let written = create(path).and_then(|mut f| {
            for entry in log.snapshot() {
                json_line(&mut f, &entry)?;
            }
            f.flush().map_err(AppError::from)
        });
        if let Err(e) = written {
            return fail(err, &e);
        }
    }
    let _ = out.flush();
    match result {
        Ok(Outcome::Ok) => 0,
        // A closed stdout (e.g. piped into `head`) is not a failure.
        Err(AppError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Ok(Outcome::Degraded(e)) | Err(e) => fail(err, &e),
    }
}
