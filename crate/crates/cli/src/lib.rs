//! `trajlab` command line. Machine-readable output goes to stdout (CSV by
//! default, JSON with `--json`); diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 validation rejection or runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;
use trajlab_core::aggregation::{detect_candidates, merge_layers, DecisionDocument, ThresholdProfile};
use trajlab_core::agreement::{report_rows, tau_sweep, DEFAULT_TAU_SWEEP};
use trajlab_core::autoann::{run_autoann, AutoAnnConfig};
use trajlab_core::config::FlatConfig;
use trajlab_core::corpus::Corpus;
use trajlab_core::dact::{parse_dact, write_dact, DactOptions, ParsedTrip, Verdict};
use trajlab_core::geo::EARTH_RADIUS_METERS;
use trajlab_core::model::{AnnotationLayer, AnnotationType, Phase, TrajectoryPoint};
use trajlab_service::{Store, StoreConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "trajlab", version, about = "Trajectory segment annotation toolkit")]
pub struct Cli {
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check DACT files and report a verdict per trip.
    Validate {
        /// DACT files or directories of them (a corpus root reads trips/).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run the automated annotator and print its marks.
    Autoann {
        #[command(flatten)]
        flags: AutoAnnFlags,
        /// Print per-type counts instead of marks.
        #[arg(long)]
        summary: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print strict or easy aggregation candidates.
    Candidates {
        #[command(flatten)]
        flags: ProfileFlags,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Agreement report over a corpus directory.
    Agreement {
        #[arg(long, value_enum, default_value = "expert")]
        phase: PhaseArg,
        /// Matching thresholds in meters, ascending (comma separated or repeated).
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
        /// Only the per-threshold summary rows.
        #[arg(long)]
        summary: bool,
        corpus: PathBuf,
    },
    /// Merge a trip's layers under an aggregator decision file.
    Merge {
        corpus: PathBuf,
        /// JSON decision document ({trip_id, author, decisions}).
        #[arg(long)]
        decisions: PathBuf,
        #[arg(long, value_enum)]
        phase: FinalPhase,
        /// Also write the result to the corpus' finalized layers.
        #[arg(long)]
        save: bool,
        #[command(flatten)]
        autoann: AutoAnnFlags,
    },
    /// Write one trip as DACT CSV with a chosen layer in the annotation columns.
    Export {
        corpus: PathBuf,
        #[arg(long)]
        trip: String,
        /// Annotator layer to export.
        #[arg(long, conflicts_with = "phase")]
        author: Option<String>,
        /// Finalized layer to export.
        #[arg(long, value_enum)]
        phase: Option<FinalPhase>,
    },
    /// Start the HTTP annotation service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Corpus root; defaults to TRAJLAB_DATA_DIR.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhaseArg {
    Expert,
    Strict,
    Easy,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Expert => Phase::Expert,
            PhaseArg::Strict => Phase::Strict,
            PhaseArg::Easy => Phase::Easy,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FinalPhase {
    Strict,
    Easy,
}

impl From<FinalPhase> for Phase {
    fn from(p: FinalPhase) -> Self {
        match p {
            FinalPhase::Strict => Phase::Strict,
            FinalPhase::Easy => Phase::Easy,
        }
    }
}

#[derive(Debug, Args)]
pub struct AutoAnnFlags {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    low_speed_threshold: Option<f64>,
    #[arg(long)]
    turn_threshold: Option<f64>,
    #[arg(long)]
    loop_radius: Option<f64>,
    #[arg(long)]
    loop_min_speed: Option<f64>,
    #[arg(long)]
    loop_enabled: bool,
}

#[derive(Debug, Args)]
pub struct ProfileFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    /// strict or easy
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    min_speed_change: Option<f64>,
    #[arg(long)]
    min_heading_run: Option<u32>,
}

fn read_config(path: Option<&Path>) -> Result<FlatConfig, CliError> {
    let Some(path) = path else {
        return Ok(FlatConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    let cfg = FlatConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let known: Vec<&str> = AutoAnnConfig::KEYS
        .iter()
        .chain(ThresholdProfile::KEYS.iter())
        .copied()
        .collect();
    cfg.check_known(&known)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

impl AutoAnnFlags {
    fn resolve(&self) -> Result<AutoAnnConfig, CliError> {
        let mut cfg = read_config(self.config.as_deref())?;
        let mut set = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                cfg.set(key, v);
            }
        };
        set("k", self.k.map(|v| v.to_string()));
        set("low_speed_threshold", self.low_speed_threshold.map(|v| v.to_string()));
        set("turn_threshold", self.turn_threshold.map(|v| v.to_string()));
        set("loop_radius", self.loop_radius.map(|v| v.to_string()));
        set("loop_min_speed", self.loop_min_speed.map(|v| v.to_string()));
        set("loop_enabled", self.loop_enabled.then(|| "true".to_string()));
        AutoAnnConfig::from_flat(&cfg).map_err(|e| CliError::Usage(e.to_string()))
    }
}

impl ProfileFlags {
    fn resolve(&self) -> Result<ThresholdProfile, CliError> {
        let mut cfg = read_config(self.config.as_deref())?;
        if let Some(p) = &self.profile {
            cfg.set("profile", p.clone());
        }
        if let Some(v) = self.min_speed_change {
            cfg.set("min_speed_change", v.to_string());
        }
        if let Some(v) = self.min_heading_run {
            cfg.set("min_heading_run", v.to_string());
        }
        ThresholdProfile::from_flat(&cfg, ThresholdProfile::strict()).map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// DACT files named by `inputs`; a directory contributes its `trips/`
/// subdirectory if present, else its own `*.csv` files, in name order.
fn dact_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_file() {
            out.push(input.clone());
            continue;
        }
        if !input.is_dir() {
            return Err(failed(format!("{}: no such file or directory", input.display())));
        }
        let dir = if input.join("trips").is_dir() { input.join("trips") } else { input.clone() };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| failed(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();
        out.extend(files);
    }
    Ok(out)
}

fn parse_inputs(inputs: &[PathBuf], opts: &DactOptions) -> Result<Vec<ParsedTrip>, CliError> {
    let mut trips = Vec::new();
    for path in dact_files(inputs)? {
        let file = fs::File::open(&path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
        let parsed = parse_dact(std::io::BufReader::new(file), opts)
            .map_err(|e| failed(format!("{}: {e}", path.display())))?;
        trips.extend(parsed.trips);
    }
    Ok(trips)
}

/// Accepted trips; rejected ones are reported on stderr.
fn accepted(trips: Vec<ParsedTrip>, err: &mut dyn Write) -> (Vec<ParsedTrip>, bool) {
    let mut any_rejected = false;
    let mut keep = Vec::new();
    for t in trips {
        if t.report.is_accepted() {
            keep.push(t);
        } else {
            any_rejected = true;
            let _ = writeln!(err, "skipping rejected trip {:?} ({} fatal issues)", t.report.trip_id, t.report.fatal_count());
        }
    }
    (keep, any_rejected)
}

fn emit<T: Serialize>(rows: &[T], json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if json {
        serde_json::to_writer_pretty(&mut *out, rows).map_err(failed)?;
        writeln!(out).map_err(failed)?;
        return Ok(());
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r).map_err(failed)?;
    }
    w.flush().map_err(failed)
}

#[derive(Debug, Serialize)]
struct ValidateRow {
    trip_id: String,
    verdict: Verdict,
    points: usize,
    fatal: usize,
    advisory: usize,
}

#[derive(Debug, Serialize)]
struct MarkRow {
    trip_id: String,
    author: String,
    time_step: u32,
    annotation_type: AnnotationType,
    segment_types: String,
}

fn mark_rows(layer: &AnnotationLayer) -> Vec<MarkRow> {
    layer
        .marks()
        .iter()
        .map(|m| MarkRow {
            trip_id: m.trip_id.clone(),
            author: m.author.clone(),
            time_step: m.time_step,
            annotation_type: m.annotation_type,
            segment_types: m.segment_types.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(";"),
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    segment_type: String,
    count: usize,
    share: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CandidateRow {
    trip_id: String,
    id: String,
    begin: u32,
    end: u32,
    suggested_types: String,
    evidence: String,
}

fn finish(rejected: bool) -> Result<(), CliError> {
    if rejected {
        Err(CliError::Failed("one or more trips were rejected".into()))
    } else {
        Ok(())
    }
}

fn cmd_validate(inputs: &[PathBuf], json: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let trips = parse_inputs(inputs, &DactOptions::default())?;
    let mut rows = Vec::new();
    let mut rejected = false;
    for t in &trips {
        for issue in &t.report.issues {
            let _ = writeln!(err, "{} {}: {}", t.report.trip_id, issue.severity, issue);
        }
        rejected |= !t.report.is_accepted();
        rows.push(ValidateRow {
            trip_id: t.report.trip_id.clone(),
            verdict: t.report.verdict,
            points: t.trajectory.len(),
            fatal: t.report.fatal_count(),
            advisory: t.report.advisory_count(),
        });
    }
    emit(&rows, json, out)?;
    finish(rejected)
}

fn cmd_autoann(
    flags: &AutoAnnFlags,
    summary: bool,
    inputs: &[PathBuf],
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    let (trips, rejected) = accepted(parse_inputs(inputs, &DactOptions::default())?, err);
    let mut marks = Vec::new();
    let mut hist = std::collections::BTreeMap::new();
    let mut total_marks = 0;
    for t in &trips {
        let res = run_autoann(&t.trajectory, &cfg).map_err(failed)?;
        total_marks += res.total_marks();
        for (ty, n) in &res.type_histogram {
            *hist.entry(*ty).or_insert(0usize) += n;
        }
        marks.extend(mark_rows(&res.layer));
    }
    if summary {
        let typed: usize = hist.values().sum();
        let mut rows: Vec<HistogramRow> = hist
            .iter()
            .map(|(ty, &count)| HistogramRow {
                segment_type: ty.as_str().to_string(),
                count,
                share: (typed > 0).then(|| count as f64 / typed as f64),
            })
            .collect();
        rows.push(HistogramRow { segment_type: "total_typed".into(), count: typed, share: None });
        rows.push(HistogramRow { segment_type: "total_marks".into(), count: total_marks, share: None });
        emit(&rows, json, out)?;
    } else {
        emit(&marks, json, out)?;
    }
    finish(rejected)
}

fn cmd_candidates(
    flags: &ProfileFlags,
    inputs: &[PathBuf],
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let profile = flags.resolve()?;
    let (trips, rejected) = accepted(parse_inputs(inputs, &DactOptions::default())?, err);
    let mut rows = Vec::new();
    for t in &trips {
        for c in detect_candidates(&t.trajectory, &profile) {
            rows.push(CandidateRow {
                trip_id: t.trajectory.trip_id.clone(),
                id: c.id(),
                begin: c.begin,
                end: c.end,
                suggested_types: c.suggested_types.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(";"),
                evidence: c.evidence.to_string(),
            });
        }
    }
    emit(&rows, json, out)?;
    finish(rejected)
}

fn load_corpus(root: &Path) -> Result<Corpus, CliError> {
    Corpus::load(root, &DactOptions::default()).map_err(failed)
}

fn cmd_agreement(
    phase: Phase,
    taus: &[f64],
    summary: bool,
    corpus: &Path,
    json: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let corpus = load_corpus(corpus)?;
    for t in corpus.trips.values().filter(|t| !t.report.is_accepted()) {
        let _ = writeln!(err, "skipping rejected trip {:?}", t.trajectory.trip_id);
    }
    let taus: Vec<f64> = if taus.is_empty() { DEFAULT_TAU_SWEEP.to_vec() } else { taus.to_vec() };
    let reports = tau_sweep(&corpus.dataset(), phase, &taus, EARTH_RADIUS_METERS)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(first) = reports.first() {
        for w in &first.warnings {
            let _ = writeln!(err, "warning: {w}");
        }
    }
    let mut rows = report_rows(&reports);
    if summary {
        rows.retain(|r| r.trip_id == "*");
    }
    emit(&rows, json, out)
}

fn cmd_merge(
    corpus_root: &Path,
    decisions: &Path,
    phase: Phase,
    save: bool,
    autoann: &AutoAnnFlags,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = autoann.resolve()?;
    let corpus = load_corpus(corpus_root)?;
    let text = fs::read_to_string(decisions).map_err(|e| failed(format!("{}: {e}", decisions.display())))?;
    let doc: DecisionDocument =
        serde_json::from_str(&text).map_err(|e| failed(format!("{}: {e}", decisions.display())))?;
    let trip = corpus.trip(&doc.trip_id).map_err(failed)?;
    let mut layers: Vec<AnnotationLayer> = trip
        .layers
        .values()
        .filter(|l| l.author() != doc.author)
        .cloned()
        .collect();
    layers.push(run_autoann(&trip.trajectory, &cfg).map_err(failed)?.layer);
    let profile = match phase {
        Phase::Easy => ThresholdProfile::easy(),
        _ => ThresholdProfile::strict(),
    };
    let candidates = detect_candidates(&trip.trajectory, &profile);
    let merged = merge_layers(&trip.trajectory, &layers, &candidates, &doc.decisions, &doc.author).map_err(failed)?;
    if save {
        Corpus::save_finalized(corpus_root, phase, &merged).map_err(failed)?;
    }
    emit(&mark_rows(&merged), json, out)
}

#[derive(Serialize)]
struct ExportDocument<'a> {
    points: &'a [TrajectoryPoint],
    layer: &'a AnnotationLayer,
}

fn cmd_export(
    corpus_root: &Path,
    trip_id: &str,
    author: Option<&str>,
    phase: Option<Phase>,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_root)?;
    let trip = corpus.trip(trip_id).map_err(failed)?;
    let opts = DactOptions::default();
    let empty = AnnotationLayer::new(trip_id, opts.author.clone());
    let layer = match (author, phase) {
        (Some(a), _) => trip
            .layers
            .get(a)
            .ok_or_else(|| failed(format!("trip {trip_id:?} has no layer by {a:?}")))?,
        (None, Some(p)) => trip
            .finalized
            .get(&p)
            .ok_or_else(|| failed(format!("trip {trip_id:?} has no {p} layer")))?,
        (None, None) => &empty,
    };
    if json {
        let doc = ExportDocument { points: &trip.trajectory.points, layer };
        serde_json::to_writer_pretty(&mut *out, &doc).map_err(failed)?;
        writeln!(out).map_err(failed)?;
        return Ok(());
    }
    let bytes = write_dact(Vec::new(), &trip.trajectory, layer, &opts).map_err(failed)?;
    out.write_all(&bytes).map_err(failed)
}

fn cmd_serve(port: u16, data_dir: Option<&Path>, host: &str, err: &mut dyn Write) -> Result<(), CliError> {
    let mut config = match data_dir {
        Some(d) => StoreConfig::new(d),
        None => StoreConfig::from_env().map_err(CliError::Usage)?,
    };
    if let Ok(a) = std::env::var("TRAJLAB_AGGREGATOR") {
        config.aggregator = a;
    }
    let store = Store::open(config).map_err(failed)?;
    for r in store.rejected() {
        let _ = writeln!(err, "not serving rejected trip {:?}", r.trip_id);
    }
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(failed)?;
    runtime
        .block_on(trajlab_service::run(addr, std::sync::Arc::new(store), |bound| {
            eprintln!("listening on http://{bound}");
        }))
        .map_err(failed)
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::Validate { inputs } => cmd_validate(&inputs, json, out, err),
        Command::Autoann { flags, summary, inputs } => cmd_autoann(&flags, summary, &inputs, json, out, err),
        Command::Candidates { flags, inputs } => cmd_candidates(&flags, &inputs, json, out, err),
        Command::Agreement { phase, tau, summary, corpus } => {
            cmd_agreement(phase.into(), &tau, summary, &corpus, json, out, err)
        }
        Command::Merge { corpus, decisions, phase, save, autoann } => {
            cmd_merge(&corpus, &decisions, phase.into(), save, &autoann, json, out)
        }
        Command::Export { corpus, trip, author, phase } => {
            cmd_export(&corpus, &trip, author.as_deref(), phase.map(Into::into), json, out)
        }
        Command::Serve { port, data_dir, host } => cmd_serve(port, data_dir.as_deref(), &host, err),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 2;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
