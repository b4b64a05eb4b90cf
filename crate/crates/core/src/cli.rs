//! Command-line front end and file formats.
//!
//! Datasets are CSV with header `x1..xd,t,y[,ybar][,c_true]`. Floats are
//! written in shortest round-trip form; an empty cell means "absent".
//! Exit codes: 0 success, 2 usage or validation error, 3 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CfMode, Dataset, KnnK, PcmConfig, PreclusterMode, Subject};
use crate::error::PcmError;
use crate::metrics::{evaluate, EvalReport, Histogram};
use crate::pipeline::{run_pcm, Diagnostics, PcmFit};
use crate::precluster::{Cluster, PreClustering};
use crate::rng::mix_seed;
use crate::synthgen::{generate, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

const HISTOGRAM_BINS: usize = 100;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<PcmError> for CliError {
    fn from(e: PcmError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "pcm", version, about = "Recover treatment-effect levels from trial data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a trial and write it as CSV.
    Generate(GenerateArgs),
    /// Fit effect levels to a dataset.
    Fit(FitArgs),
    /// Score a fit against the true levels.
    Eval(EvalArgs),
    /// Run generate, fit and eval over a grid of sizes, seeds and modes.
    Sweep(SweepArgs),
    /// Print the built-in simulation spec as JSON.
    DefaultSpec,
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    /// Spec JSON; the built-in spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CfArg {
    Given,
    Knn,
    ControlDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreclusterArg {
    Box,
    Kmeans,
}

impl From<PreclusterArg> for PreclusterMode {
    fn from(p: PreclusterArg) -> Self {
        match p {
            PreclusterArg::Box => PreclusterMode::Box,
            PreclusterArg::Kmeans => PreclusterMode::Kmeans,
        }
    }
}

fn mode_name(m: PreclusterMode) -> &'static str {
    match m {
        PreclusterMode::Box => "box",
        PreclusterMode::Kmeans => "kmeans",
    }
}

#[derive(clap::Args, Debug, Clone)]
pub struct FitOptions {
    #[arg(long, value_enum, default_value = "given")]
    pub cf: CfArg,
    /// Neighbours for --cf knn: a count or "auto".
    #[arg(long, default_value = "auto")]
    pub knn_k: String,
    #[arg(long, value_enum, default_value = "box")]
    pub precluster: PreclusterArg,
    #[arg(long, default_value_t = 1)]
    pub em_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau_multiplier: f64,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FitOptions {
    pub fn to_config(&self) -> CliResult<PcmConfig> {
        let cf_mode = match self.cf {
            CfArg::Given => CfMode::Given,
            CfArg::ControlDiff => CfMode::ControlDiff,
            CfArg::Knn => CfMode::Knn(parse_knn_k(&self.knn_k)?),
        };
        let cfg = PcmConfig {
            precluster: self.precluster.into(),
            cf_mode,
            em_iters: self.em_iters,
            tau_multiplier: self.tau_multiplier,
            k_max: self.k_max,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_knn_k(s: &str) -> CliResult<KnnK> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(KnnK::Auto);
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(KnnK::Fixed(k)),
        _ => Err(CliError::Usage(format!("--knn-k must be a positive integer or auto, got {s:?}"))),
    }
}

#[derive(clap::Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub options: FitOptions,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub out_assignments: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub assignments: PathBuf,
    /// Report JSON; sidecar CSVs are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// True level effects, comma separated and ascending.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub true_mu: Option<Vec<f64>>,
    /// Take the true effects from this spec instead.
    #[arg(long, conflicts_with = "true_mu")]
    pub spec: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub n: Vec<usize>,
    /// Seeds per size: 0..seeds.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., default_value = "box")]
    pub modes: Vec<PreclusterArg>,
    #[arg(long, default_value = "given")]
    pub cf: CfArg,
    #[arg(long, default_value = "auto")]
    pub knn_k: String,
    #[arg(long, default_value_t = 1)]
    pub em_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau_multiplier: f64,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::DefaultSpec => {
            let s = serde_json::to_string_pretty(&SynthSpec::default()).expect("spec serialises");
            println!("{s}");
            Ok(())
        }
    }
}

// ---- file formats ----

pub fn read_spec(path: &Path) -> CliResult<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid spec: {e}", path.display())))?;
    Ok(spec)
}

fn load_spec(path: Option<&Path>) -> CliResult<SynthSpec> {
    match path {
        Some(p) => read_spec(p),
        None => Ok(SynthSpec::default()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn opt_cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_dataset<W: Write>(w: W, ds: &Dataset) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=ds.d).map(|j| format!("x{j}")).collect();
    header.extend(["t", "y", "ybar", "c_true"].map(String::from));
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for s in &ds.subjects {
        row.clear();
        row.extend(s.x.iter().map(|v| v.to_string()));
        row.push(if s.t { "1".into() } else { "0".into() });
        row.push(s.y.to_string());
        row.push(opt_cell(s.ybar));
        row.push(opt_cell(s.c_true));
        out.write_record(&row)?;
    }
    out.flush()
}

pub fn write_dataset_file(path: &Path, ds: &Dataset) -> CliResult<()> {
    let w = create(path)?;
    write_dataset(w, ds).map_err(|e| io_err(path, e))
}

fn parse_f64(s: &str, what: &str, row: usize) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("row {row}: bad {what} value {s:?}")))
}

/// Reads a dataset CSV. The `ybar` and `c_true` columns are optional.
pub fn read_dataset<R: io::Read>(r: R) -> CliResult<Dataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("bad header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut xs = Vec::new();
    while let Some(c) = col(&format!("x{}", xs.len() + 1)) {
        xs.push(c);
    }
    if xs.is_empty() {
        return Err(CliError::Usage("no feature columns (x1, x2, ...)".into()));
    }
    let t_col = col("t").ok_or_else(|| CliError::Usage("missing column t".into()))?;
    let y_col = col("y").ok_or_else(|| CliError::Usage("missing column y".into()))?;
    let ybar_col = col("ybar");
    let c_col = col("c_true");
    let mut subjects = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("row {row}: {e}")))?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let x = xs
            .iter()
            .map(|&c| parse_f64(get(c), "x", row))
            .collect::<CliResult<Vec<f64>>>()?;
        let t = match get(t_col) {
            "1" | "1.0" | "true" => true,
            "0" | "0.0" | "false" => false,
            other => return Err(CliError::Usage(format!("row {row}: bad t value {other:?}"))),
        };
        let y = parse_f64(get(y_col), "y", row)?;
        let ybar = match ybar_col.map(get) {
            Some(s) if !s.is_empty() => Some(parse_f64(s, "ybar", row)?),
            _ => None,
        };
        let c_true = match c_col.map(get) {
            Some(s) if !s.is_empty() => Some(
                s.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("row {row}: bad c_true value {s:?}")))?,
            ),
            _ => None,
        };
        subjects.push(Subject { x, t, y, ybar, c_true });
    }
    Ok(Dataset::new(xs.len(), subjects))
}

pub fn read_dataset_file(path: &Path) -> CliResult<Dataset> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_dataset(io::BufReader::new(f))
}

/// Fit report as written by `pcm fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub dataset_rows: usize,
    pub config: PcmConfig,
    pub ell_hat: usize,
    pub mu_hat: Vec<f64>,
    pub level_sizes: Vec<usize>,
    pub err_curve: Vec<ErrPoint>,
    pub tau: f64,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrPoint {
    pub k: usize,
    pub err: f64,
}

impl FitReport {
    pub fn new(fit: &PcmFit, config: &PcmConfig) -> Self {
        Self {
            dataset_rows: fit.model.assignment.len(),
            config: config.clone(),
            ell_hat: fit.model.ell_hat(),
            mu_hat: fit.model.mu_hat.clone(),
            level_sizes: fit.model.level_sizes(),
            err_curve: fit
                .model
                .err_curve
                .iter()
                .map(|&(k, err)| ErrPoint { k, err })
                .collect(),
            tau: fit.diagnostics.tau,
            converged: fit.diagnostics.converged,
            diagnostics: fit.diagnostics.clone(),
        }
    }
}

/// Per-subject output: `index,level,ite,smoothed_ite,cluster`.
pub fn write_assignments<W: Write>(w: W, fit: &PcmFit) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "level", "ite", "smoothed_ite", "cluster"])?;
    let cluster_of = fit.preclustering.membership(fit.model.assignment.len());
    for (i, level) in fit.model.assignment.iter().enumerate() {
        out.write_record([
            i.to_string(),
            opt_cell(*level),
            opt_cell(fit.ite(i)),
            opt_cell(fit.smoothed[i]),
            opt_cell(cluster_of[i].map(|c| fit.preclustering.clusters[c].id)),
        ])?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRow {
    pub level: Option<usize>,
    pub ite: Option<f64>,
    pub smoothed_ite: Option<f64>,
    pub cluster: Option<usize>,
}

pub fn read_assignments<R: io::Read>(r: R) -> CliResult<Vec<AssignmentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("bad header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let level_col = col("level").ok_or_else(|| CliError::Usage("missing column level".into()))?;
    let (ite_col, smooth_col, cluster_col) = (col("ite"), col("smoothed_ite"), col("cluster"));
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("row {row}: {e}")))?;
        let cell = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::trim).filter(|s| !s.is_empty());
        let int = |c: Option<usize>, what: &str| -> CliResult<Option<usize>> {
            cell(c)
                .map(|s| s.parse::<usize>().map_err(|_| CliError::Usage(format!("row {row}: bad {what} {s:?}"))))
                .transpose()
        };
        let float = |c: Option<usize>, what: &str| cell(c).map(|s| parse_f64(s, what, row)).transpose();
        rows.push(AssignmentRow {
            level: int(Some(level_col), "level")?,
            ite: float(ite_col, "ite")?,
            smoothed_ite: float(smooth_col, "smoothed_ite")?,
            cluster: int(cluster_col, "cluster")?,
        });
    }
    Ok(rows)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

// ---- commands ----

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let mut spec = load_spec(a.spec.as_deref())?;
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let ds = generate(&spec)?;
    write_dataset_file(&a.out, &ds)
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let config = a.options.to_config()?;
    let ds = read_dataset_file(&a.data)?;
    if config.cf_mode == CfMode::Given && ds.subjects.iter().any(|s| s.t && s.ybar.is_none()) {
        return Err(CliError::Usage(
            "--cf given needs a ybar value for every treated subject".into(),
        ));
    }
    let fit = run_pcm(&ds, &config)?;
    write_json(&a.out_model, &FitReport::new(&fit, &config))?;
    if let Some(p) = &a.out_assignments {
        let w = create(p)?;
        write_assignments(w, &fit).map_err(|e| io_err(p, e))?;
    }
    if !fit.diagnostics.converged {
        eprintln!(
            "warning: no level count up to {} reached the threshold {}",
            config.k_max, fit.diagnostics.tau
        );
    }
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ds = read_dataset_file(&a.data)?;
    let text = fs::read_to_string(&a.model).map_err(|e| io_err(&a.model, e))?;
    let report: FitReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid model: {e}", a.model.display())))?;
    let f = File::open(&a.assignments).map_err(|e| io_err(&a.assignments, e))?;
    let rows = read_assignments(io::BufReader::new(f))?;
    if report.dataset_rows != ds.n() || rows.len() != ds.n() {
        return Err(CliError::Usage(format!(
            "row count mismatch: data {}, model {}, assignments {}",
            ds.n(),
            report.dataset_rows,
            rows.len()
        )));
    }
    if let Some(i) = ds.subjects.iter().position(|s| s.c_true.is_none()) {
        return Err(CliError::Usage(format!("subject {i} has no c_true; cannot evaluate")));
    }
    let true_mu = match (&a.true_mu, &a.spec) {
        (Some(mu), _) => mu.clone(),
        (None, Some(p)) => read_spec(p)?.true_effects(),
        (None, None) => {
            return Err(CliError::Usage("pass --true-mu or --spec to give the true effects".into()))
        }
    };
    if rows.iter().flat_map(|r| r.level).any(|l| l >= report.ell_hat) {
        return Err(CliError::Usage("assignment level out of range for the model".into()));
    }
    let model = crate::domain::LevelModel {
        mu_hat: report.mu_hat.clone(),
        assignment: rows.iter().map(|r| r.level).collect(),
        err_curve: report.err_curve.iter().map(|p| (p.k, p.err)).collect(),
        threshold_used: report.tau,
    };
    let pre = clusters_from_rows(&rows, report.config.precluster);
    let ites: Vec<Option<f64>> = rows.iter().map(|r| r.ite).collect();
    let has_ites = ites.iter().any(Option::is_some);
    let eval = evaluate(
        &model,
        &ds,
        &true_mu,
        pre.as_ref(),
        has_ites.then_some(ites.as_slice()),
    )?;
    write_json(&a.out, &eval)?;
    write_sidecars(&a.out, &eval, &model, &rows)
}

/// Rebuilds the pre-clustering from the `cluster` column, if present.
fn clusters_from_rows(rows: &[AssignmentRow], mode: PreclusterMode) -> Option<PreClustering> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(c) = r.cluster {
            groups.entry(c).or_default().push(i);
        }
    }
    if groups.is_empty() {
        return None;
    }
    Some(PreClustering {
        mode,
        epsilon: None,
        clusters: groups
            .into_iter()
            .map(|(id, members)| Cluster {
                id,
                members,
                att: f64::NAN,
            })
            .collect(),
        dropped: 0,
    })
}

fn csv_err(p: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| io_err(p, e)
}

fn write_sidecars(
    out: &Path,
    eval: &EvalReport,
    model: &crate::domain::LevelModel,
    rows: &[AssignmentRow],
) -> CliResult<()> {
    let p = sidecar(out, "confusion");
    let mut w = csv::Writer::from_writer(create(&p)?);
    let mut header = vec!["true_level".to_string()];
    header.extend((0..eval.ell_hat).map(|b| format!("level{b}")));
    w.write_record(&header).map_err(csv_err(&p))?;
    for (a, row) in eval.confusion.iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(&p))?;
    }
    w.flush().map_err(|e| io_err(&p, e))?;

    let p = sidecar(out, "histogram");
    let smoothed: Vec<f64> = rows.iter().filter_map(|r| r.smoothed_ite).collect();
    let h = Histogram::new(&smoothed, HISTOGRAM_BINS);
    let edges = h.edges();
    let mut w = csv::Writer::from_writer(create(&p)?);
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err(&p))?;
    for (b, c) in h.counts.iter().enumerate() {
        w.write_record([edges[b].to_string(), edges[b + 1].to_string(), c.to_string()])
            .map_err(csv_err(&p))?;
    }
    w.flush().map_err(|e| io_err(&p, e))?;

    let p = sidecar(out, "effects");
    let sizes = model.level_sizes();
    let mut w = csv::Writer::from_writer(create(&p)?);
    w.write_record(["level", "mu_hat", "true_mu", "size"]).map_err(csv_err(&p))?;
    for l in 0..eval.ell_hat.max(eval.ell_true) {
        w.write_record([
            l.to_string(),
            opt_cell(eval.mu_hat.get(l)),
            opt_cell(eval.true_mu.get(l)),
            opt_cell(sizes.get(l)),
        ])
        .map_err(csv_err(&p))?;
    }
    w.flush().map_err(|e| io_err(&p, e))
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub mode: String,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub ell_hat: Option<usize>,
    pub homogeneity: Option<f64>,
    pub diag0: Option<f64>,
    pub diag1: Option<f64>,
    pub diag2: Option<f64>,
    pub mu_hat0: Option<f64>,
    pub mu_hat1: Option<f64>,
    pub mu_hat2: Option<f64>,
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

fn mode_label(m: PreclusterMode) -> u64 {
    match m {
        PreclusterMode::Box => 1,
        PreclusterMode::Kmeans => 2,
    }
}

/// Runs one sweep cell. The data depend on (seed, n); the fit's own
/// randomness on (seed, n, mode).
pub fn sweep_cell(spec: &SynthSpec, n: usize, seed: u64, template: &PcmConfig) -> SweepRow {
    let mode = template.precluster;
    let mut row = SweepRow {
        n,
        seed,
        mode: mode_name(mode).into(),
        mae_mean: None,
        mae_std: None,
        ell_hat: None,
        homogeneity: None,
        diag0: None,
        diag1: None,
        diag2: None,
        mu_hat0: None,
        mu_hat1: None,
        mu_hat2: None,
        wall_ms: None,
        error: None,
    };
    let start = Instant::now();
    let result = (|| -> crate::error::Result<()> {
        let spec = SynthSpec {
            n,
            seed: mix_seed(seed, &[n as u64]),
            ..spec.clone()
        };
        let ds = generate(&spec)?;
        let config = PcmConfig {
            seed: mix_seed(seed, &[n as u64, mode_label(mode)]),
            ..template.clone()
        };
        let fit = run_pcm(&ds, &config)?;
        let eval = evaluate(&fit.model, &ds, &spec.true_effects(), Some(&fit.preclustering), None)?;
        row.mae_mean = Some(eval.mae.mean);
        row.mae_std = Some(eval.mae.std);
        row.ell_hat = Some(eval.ell_hat);
        row.homogeneity = eval.homogeneity;
        let diag = |k: usize| eval.confusion.get(k).and_then(|r| r.get(k)).copied();
        (row.diag0, row.diag1, row.diag2) = (diag(0), diag(1), diag(2));
        let mu = |k: usize| eval.mu_hat.get(k).copied();
        (row.mu_hat0, row.mu_hat1, row.mu_hat2) = (mu(0), mu(1), mu(2));
        Ok(())
    })();
    row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let spec = load_spec(a.spec.as_deref())?;
    spec.validate()?;
    let base = FitOptions {
        cf: a.cf,
        knn_k: a.knn_k.clone(),
        precluster: PreclusterArg::Box,
        em_iters: a.em_iters,
        tau_multiplier: a.tau_multiplier,
        k_max: a.k_max,
        seed: 0,
    }
    .to_config()?;
    let mut cells = Vec::new();
    for &n in &a.n {
        for seed in 0..a.seeds {
            for &m in &a.modes {
                cells.push((n, seed, m));
            }
        }
    }
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(n, seed, m)| {
            let cfg = PcmConfig {
                precluster: m.into(),
                ..base.clone()
            };
            sweep_cell(&spec, n, seed, &cfg)
        })
        .collect();
    let p = a.out_dir.join("summary.csv");
    let mut w = csv::Writer::from_writer(create(&p)?);
    for r in &rows {
        w.serialize(r).map_err(|e| io_err(&p, e))?;
    }
    w.flush().map_err(|e| io_err(&p, e))?;
    write_json(&a.out_dir.join("summary.json"), &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep cells failed", rows.len());
    }
    if failed == rows.len() {
        return Err(CliError::Usage("every sweep cell failed".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_is_exact() {
        let spec = SynthSpec {
            n: 500,
            seed: 3,
            ..SynthSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn optional_columns() {
        let csv = "x1,x2,t,y\n0.1,0.2,1,3.5\n0.3,1,0,-2e-3\n";
        let ds = read_dataset(csv.as_bytes()).unwrap();
        assert_eq!(ds.d, 2);
        assert_eq!(ds.subjects[1].y, -0.002);
        assert!(ds.subjects.iter().all(|s| s.ybar.is_none() && s.c_true.is_none()));
    }

    #[test]
    fn bad_cells_are_usage_errors() {
        for csv in ["x1,t,y\n0.1,2,1\n", "x1,t,y\nabc,1,1\n", "t,y\n1,1\n", "x1,y\n0.1,1\n"] {
            let e = read_dataset(csv.as_bytes()).unwrap_err();
            assert_eq!(e.exit_code(), EXIT_USAGE, "{csv}");
        }
    }

    #[test]
    fn knn_k_parsing() {
        assert_eq!(parse_knn_k("auto").unwrap(), KnnK::Auto);
        assert_eq!(parse_knn_k("7").unwrap(), KnnK::Fixed(7));
        assert!(parse_knn_k("0").is_err());
        assert!(parse_knn_k("x").is_err());
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/eval.json"), "confusion"), Path::new("out/eval.confusion.csv"));
    }
}
