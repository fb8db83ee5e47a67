//! Command-line surface and command implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fokcp::basis::{smooth_dataset, BasisSpec};
use fokcp::bootstrap::{bootstrap_band, BootstrapConfig};
use fokcp::conformal::{conformal_predict, DEFAULT_ALPHA};
use fokcp::metrics::pct;
use fokcp::simulate::{sample_dataset, ScenarioConfig};
use fokcp::variogram::VariogramFamily;
use fokcp::{Case, CaseConfig, Site, SpatialFunctionalDataset, VariogramSettings};

use crate::eval::{loo_bootstrap, loo_sweep, EvalOptions};
use crate::manifest::{RunManifest, Timings};

pub const DATASET_FILE: &str = "dataset.csv";

#[derive(Debug, Parser)]
#[command(name = "fokcp", version, about = "Functional kriging with conformal prediction bands")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write kriging system dumps where applicable.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Generate a simulated scenario dataset.
    Simulate(SimulateArgs),
    /// Smooth a long-format CSV onto a basis and store it with a sidecar.
    Ingest(IngestArgs),
    /// Empirical trace-variogram and fitted model.
    Variogram(VariogramArgs),
    /// Conformal band at one target.
    Predict(PredictArgs),
    /// Leave-one-out metrics over the twelve cases.
    Sweep(SweepArgs),
    /// Leave-one-out metrics for selected cases, optionally against the bootstrap.
    Loocv(LoocvArgs),
    /// Bootstrap baseline band.
    Bootstrap(BootstrapArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Ingest(_) => "ingest",
            Command::Variogram(_) => "variogram",
            Command::Predict(_) => "predict",
            Command::Sweep(_) => "sweep",
            Command::Loocv(_) => "loocv",
            Command::Bootstrap(_) => "bootstrap",
            Command::Rerun(_) => "rerun",
        }
    }

    fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Simulate(a) => Some(&mut a.out),
            Command::Ingest(a) => Some(&mut a.out),
            Command::Variogram(a) => Some(&mut a.data.out),
            Command::Predict(a) => Some(&mut a.data.out),
            Command::Sweep(a) => Some(&mut a.out),
            Command::Loocv(a) => Some(&mut a.data.out),
            Command::Bootstrap(a) => Some(&mut a.data.out),
            Command::Rerun(_) => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,
    #[arg(long, default_value_t = 100)]
    pub n_sites: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Noise scale; 0 writes the bare mean curves.
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Long-format CSV with header `site_id,u,v,t,value`.
    #[arg(long)]
    pub input: PathBuf,
    /// `bspline:K`, `fourier:K` or `fourier:K:PERIOD`.
    #[arg(long, default_value = "fourier:65")]
    pub basis: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by commands reading a dataset.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Smoothing basis, or `none`. Defaults to `bspline:30` for simulated
    /// data, no smoothing for ingested data, and `fourier:65` otherwise.
    #[arg(long)]
    pub basis: Option<String>,
    /// Variogram family.
    #[arg(long, default_value = "exponential")]
    pub family: String,
    #[arg(long, default_value_t = 15)]
    pub n_bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VariogramArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TargetArgs {
    /// Target coordinates `u,v`.
    #[arg(long, conflicts_with = "target_id")]
    pub target: Option<String>,
    /// Use a dataset site as the target; it is removed from the data.
    #[arg(long)]
    pub target_id: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Case label such as `Δ50,Ssqrt,Dsup` (or `50,Ssqrt,Dsup`).
    #[arg(long)]
    pub case: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Divide by S(t)² instead of S(t) in the integral score.
    #[arg(long)]
    pub squared_denominator: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Dataset to sweep; without it a scenario is simulated per (η, c) cell.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long, default_value = "exponential")]
    pub family: String,
    #[arg(long, default_value_t = 15)]
    pub n_bins: usize,
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    /// Comma-separated η values.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.9")]
    pub eta: Vec<f64>,
    /// Comma-separated c values.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.9")]
    pub c: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub n_sites: usize,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',', default_value = "0.25")]
    pub alpha: Vec<f64>,
    /// Restrict to these cases (repeatable); all twelve by default.
    #[arg(long)]
    pub case: Vec<String>,
    #[arg(long)]
    pub squared_denominator: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LoocvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Cases to evaluate (repeatable); the four Δ50 cases by default.
    #[arg(long)]
    pub case: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Also run the bootstrap baseline with this many resamples.
    #[arg(long = "bootstrap-B")]
    pub bootstrap_b: Option<usize>,
    #[arg(long)]
    pub squared_denominator: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Evaluate every site leave-one-out instead of a single target.
    #[arg(long, conflicts_with_all = ["target", "target_id"])]
    pub loocv: bool,
    #[arg(long = "bootstrap-B", default_value_t = 1000)]
    pub bootstrap_b: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Sidecar stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    /// Basis already applied to the stored curves.
    #[serde(default)]
    pub basis: Option<String>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub struct Loaded {
    pub data: SpatialFunctionalDataset,
    pub meta: Option<DatasetMeta>,
    pub basis: Option<String>,
    pub inputs: Vec<PathBuf>,
}

pub fn load_dataset(path: &Path, basis: Option<&str>) -> Result<Loaded> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let raw = SpatialFunctionalDataset::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
    let side = sidecar_path(path);
    let mut inputs = vec![path.to_path_buf()];
    let meta: Option<DatasetMeta> = if side.exists() {
        inputs.push(side.clone());
        Some(serde_json::from_str(&fs::read_to_string(&side)?).with_context(|| format!("parsing {}", side.display()))?)
    } else {
        None
    };
    let chosen: Option<String> = match basis {
        Some("none") => None,
        Some(b) => Some(b.to_string()),
        None => match &meta {
            Some(m) if m.basis.is_some() => None,
            Some(m) if m.source == "simulate" => Some("bspline:30".into()),
            _ => Some("fourier:65".into()),
        },
    };
    let data = match &chosen {
        Some(b) => smooth(&raw, b)?,
        None => raw,
    };
    Ok(Loaded {
        data,
        meta,
        basis: chosen,
        inputs,
    })
}

fn smooth(data: &SpatialFunctionalDataset, basis: &str) -> Result<SpatialFunctionalDataset> {
    let spec = BasisSpec::from_str(basis)?;
    let system = spec.for_grid(data.grid())?;
    Ok(smooth_dataset(data, &system)?)
}

fn fitter(family: &str, n_bins: usize) -> Result<VariogramSettings> {
    Ok(VariogramSettings {
        family: VariogramFamily::from_str(family)?,
        n_bins,
        max_lag: None,
    })
}

fn parse_target(args: &TargetArgs, data: SpatialFunctionalDataset) -> Result<(SpatialFunctionalDataset, Site)> {
    match (&args.target, &args.target_id) {
        (Some(t), None) => {
            let parts: Vec<&str> = t.split(',').collect();
            if parts.len() != 2 {
                bail!("--target expects `u,v`, got `{t}`");
            }
            let u: f64 = parts[0].trim().parse().context("parsing target u")?;
            let v: f64 = parts[1].trim().parse().context("parsing target v")?;
            Ok((data, Site::at(u, v)))
        }
        (None, Some(id)) => {
            let i = data.site_index(id).ok_or_else(|| anyhow!("no site with id `{id}`"))?;
            let site = data.sites()[i].clone();
            Ok((data.without(i)?, site))
        }
        _ => bail!("give exactly one of --target or --target-id"),
    }
}

fn parse_cases(labels: &[String], default: Vec<Case>) -> Result<Vec<Case>> {
    if labels.is_empty() {
        return Ok(default);
    }
    labels
        .iter()
        .map(|l| Case::from_str(l).map_err(|e| anyhow!("{e}")))
        .collect()
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = out.join(name);
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// What a command produced.
struct RunRecord {
    outputs: Vec<String>,
    inputs: Vec<PathBuf>,
}

/// Run a parsed invocation and write its manifest. `args` are recorded
/// verbatim so the run can be repeated.
pub fn execute(cli: Cli, args: Vec<String>) -> Result<PathBuf> {
    let start = Instant::now();
    let Cli {
        seed,
        verbose,
        command,
        ..
    } = cli;
    if let Command::Rerun(r) = &command {
        return rerun(r);
    }
    let config = serde_json::to_value(&command)?;
    let name = command.name();
    let (out, record) = match command {
        Command::Simulate(a) => (a.out.clone(), cmd_simulate(&a, seed)?),
        Command::Ingest(a) => (a.out.clone(), cmd_ingest(&a)?),
        Command::Variogram(a) => (a.data.out.clone(), cmd_variogram(&a)?),
        Command::Predict(a) => (a.data.out.clone(), cmd_predict(&a, verbose)?),
        Command::Sweep(a) => (a.out.clone(), cmd_sweep(&a, seed)?),
        Command::Loocv(a) => (a.data.out.clone(), cmd_loocv(&a, seed)?),
        Command::Bootstrap(a) => (a.data.out.clone(), cmd_bootstrap(&a, seed)?),
        Command::Rerun(_) => unreachable!(),
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        args,
        config,
        seed,
        inputs: RunManifest::digest_inputs(&record.inputs)?,
        outputs: RunManifest::digest_outputs(&out, &record.outputs)?,
        timings: Timings {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    };
    manifest.write(&out)?;
    Ok(out)
}

fn rerun(r: &RerunArgs) -> Result<PathBuf> {
    let m = RunManifest::read(&r.manifest)?;
    let mut argv = vec!["fokcp".to_string()];
    argv.extend(m.args.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| anyhow!("manifest arguments no longer parse: {e}"))?;
    let mut args = m.args.clone();
    if let Some(new_out) = &r.out {
        if let Some(out) = cli.command.out_mut() {
            *out = new_out.clone();
        }
        // keep the recorded argument list in step with the override
        if let Some(pos) = args.iter().position(|a| a == "--out") {
            if pos + 1 < args.len() {
                args[pos + 1] = new_out.display().to_string();
            }
        } else if let Some(pos) = args.iter().position(|a| a.starts_with("--out=")) {
            args[pos] = format!("--out={}", new_out.display());
        }
    }
    execute(cli, args)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> Result<RunRecord> {
    ensure_dir(&a.out)?;
    let cfg = ScenarioConfig {
        n_sites: a.scenario.n_sites,
        noise_sd: a.noise_sd,
        ..ScenarioConfig::new(a.scenario.scenario, a.scenario.eta, a.scenario.c, seed)
    };
    let data = sample_dataset(&cfg)?;
    let mut w = create(&a.out, DATASET_FILE)?;
    data.write_csv(&mut w)?;
    w.flush()?;
    let meta = DatasetMeta {
        source: "simulate".into(),
        scenario: Some(cfg),
        basis: None,
    };
    write_json(&a.out, "dataset.json", &meta)?;
    Ok(RunRecord {
        outputs: vec![DATASET_FILE.into(), "dataset.json".into()],
        inputs: vec![],
    })
}

fn cmd_ingest(a: &IngestArgs) -> Result<RunRecord> {
    ensure_dir(&a.out)?;
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let raw = SpatialFunctionalDataset::read_csv(file).with_context(|| format!("reading {}", a.input.display()))?;
    let data = smooth(&raw, &a.basis)?;
    let mut w = create(&a.out, DATASET_FILE)?;
    data.write_csv(&mut w)?;
    w.flush()?;
    let meta = DatasetMeta {
        source: "ingest".into(),
        scenario: None,
        basis: Some(a.basis.clone()),
    };
    write_json(&a.out, "dataset.json", &meta)?;
    Ok(RunRecord {
        outputs: vec![DATASET_FILE.into(), "dataset.json".into()],
        inputs: vec![a.input.clone()],
    })
}

fn cmd_variogram(a: &VariogramArgs) -> Result<RunRecord> {
    ensure_dir(&a.data.out)?;
    let loaded = load_dataset(&a.data.data, a.data.basis.as_deref())?;
    let settings = fitter(&a.data.family, a.data.n_bins)?;
    let emp = settings.empirical(&loaded.data)?;
    let mut w = create(&a.data.out, "variogram.csv")?;
    emp.write_csv(&mut w)?;
    w.flush()?;
    let model = fokcp::variogram::fit_model(&emp, settings.family)?;
    write_json(&a.data.out, "model.json", &model)?;
    Ok(RunRecord {
        outputs: vec!["variogram.csv".into(), "model.json".into()],
        inputs: loaded.inputs,
    })
}

#[derive(Serialize)]
struct BandMeta {
    alpha: f64,
    delta_percentile: u32,
    modulation: fokcp::conformal::Modulation,
    score: fokcp::conformal::Score,
    score_sqrt_squared_denominator: bool,
    /// The integral score does not give a sup-norm guarantee for the band.
    heuristic_band: bool,
    delta_k: f64,
    rho: f64,
    n_train: usize,
    n_test: usize,
    n_surrogate_failures: usize,
    epsilon_floor: f64,
    variogram: fokcp::VariogramModel,
    basis: Option<String>,
    target: Site,
    timings: serde_json::Value,
}

fn cmd_predict(a: &PredictArgs, verbose: bool) -> Result<RunRecord> {
    ensure_dir(&a.data.out)?;
    let case = Case::from_str(&a.case).map_err(|e| anyhow!("{e}"))?;
    let loaded = load_dataset(&a.data.data, a.data.basis.as_deref())?;
    let (data, target) = parse_target(&a.target, loaded.data)?;
    let settings = fitter(&a.data.family, a.data.n_bins)?;
    let mut cfg = CaseConfig::new(case, a.alpha);
    cfg.score_sqrt_squared_denominator = a.squared_denominator;
    let start = Instant::now();
    let out = conformal_predict(&data, &target, &cfg, &settings)?;
    let secs = start.elapsed().as_secs_f64();

    let mut w = create(&a.data.out, "band.csv")?;
    out.band.write_csv(&mut w)?;
    w.flush()?;
    let cal = &out.calibration;
    let meta = BandMeta {
        alpha: a.alpha,
        delta_percentile: case.delta.percent(),
        modulation: case.modulation,
        score: case.score,
        score_sqrt_squared_denominator: a.squared_denominator,
        heuristic_band: case.score == fokcp::conformal::Score::Sqrt,
        delta_k: cal.split.delta_k,
        rho: out.band.rho,
        n_train: cal.split.train_idx.len(),
        n_test: cal.split.test_idx.len(),
        n_surrogate_failures: cal.surrogates.failures.len(),
        epsilon_floor: out.epsilon_floor,
        variogram: cal.model,
        basis: loaded.basis.clone(),
        target: target.clone(),
        timings: serde_json::json!({ "total_seconds": secs }),
    };
    write_json(&a.data.out, "band.json", &meta)?;
    let mut outputs = vec!["band.csv".to_string(), "band.json".to_string()];
    if verbose {
        write_json(
            &a.data.out,
            "kriging_debug.json",
            &serde_json::json!({
                "model": cal.model,
                "train_ids": cal.split.train_idx.iter().map(|&i| data.sites()[i].id.clone()).collect::<Vec<_>>(),
                "system": cal.center_system,
                "solution": cal.center_solution,
            }),
        )?;
        outputs.push("kriging_debug.json".into());
    }
    Ok(RunRecord {
        outputs,
        inputs: loaded.inputs,
    })
}

const METRICS_HEADER: &str = "delta,S,D,eta,c,alpha,cov_l,cov_g,width,s_alpha,tt,mt";

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_sweep(a: &SweepArgs, seed: u64) -> Result<RunRecord> {
    ensure_dir(&a.out)?;
    let cases = parse_cases(&a.case, Case::all())?;
    let settings = fitter(&a.family, a.n_bins)?;
    let opts = EvalOptions {
        squared_denominator: a.squared_denominator,
        ..EvalOptions::default()
    };
    // (η, c, dataset) cells
    let mut cells: Vec<(Option<f64>, Option<f64>, SpatialFunctionalDataset)> = Vec::new();
    let mut inputs = Vec::new();
    if let Some(path) = &a.data {
        let loaded = load_dataset(path, a.basis.as_deref())?;
        let sc = loaded.meta.as_ref().and_then(|m| m.scenario.clone());
        inputs = loaded.inputs;
        cells.push((sc.as_ref().map(|s| s.eta), sc.as_ref().map(|s| s.c), loaded.data));
    } else {
        for &eta in &a.eta {
            for &c in &a.c {
                let cfg = ScenarioConfig {
                    n_sites: a.n_sites,
                    ..ScenarioConfig::new(a.scenario, eta, c, seed)
                };
                let raw = sample_dataset(&cfg)?;
                let data = smooth(&raw, a.basis.as_deref().unwrap_or("bspline:30"))?;
                cells.push((Some(eta), Some(c), data));
            }
        }
    }

    let mut w = create(&a.out, "metrics.csv")?;
    writeln!(w, "{METRICS_HEADER}")?;
    let mut cov = create(&a.out, "local_coverage.csv")?;
    let mut header = vec!["eta".to_string(), "c".into(), "alpha".into(), "case".into()];
    let grid = cells[0].2.grid().clone();
    header.extend(grid.points().iter().map(|t| format!("t={t}")));
    writeln!(cov, "{}", header.join(","))?;

    for (eta, c, data) in &cells {
        let rows = loo_sweep(data, &cases, &a.alpha, &settings, &opts)?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.case.delta.percent(),
                r.case.modulation_label(),
                r.case.score_label(),
                fmt_opt(*eta),
                fmt_opt(*c),
                r.alpha,
                pct(r.report.cov_local),
                pct(r.report.cov_global),
                r.report.width,
                r.report.band_score,
                r.report.total_time,
                r.report.mono_time
            )?;
            let vals: Vec<String> = r.report.cov_local_curve.iter().map(|v| v.to_string()).collect();
            writeln!(cov, "{},{},{},\"{}\",{}", fmt_opt(*eta), fmt_opt(*c), r.alpha, r.case, vals.join(","))?;
        }
    }
    w.flush()?;
    cov.flush()?;
    Ok(RunRecord {
        outputs: vec!["metrics.csv".into(), "local_coverage.csv".into()],
        inputs,
    })
}

const SUMMARY_HEADER: &str = "method,delta,S,D,alpha,cov_l,cov_g,width,s_alpha,tt,mt";
const PER_SITE_HEADER: &str = "method,case,site_id,width,s_alpha,cov_l,inside,time";

fn default_loocv_cases() -> Vec<Case> {
    Case::all()
        .into_iter()
        .filter(|c| c.delta == fokcp::conformal::DeltaPercentile::P50)
        .collect()
}

fn cmd_loocv(a: &LoocvArgs, seed: u64) -> Result<RunRecord> {
    ensure_dir(&a.data.out)?;
    let cases = parse_cases(&a.case, default_loocv_cases())?;
    let loaded = load_dataset(&a.data.data, a.data.basis.as_deref())?;
    let data = &loaded.data;
    let settings = fitter(&a.data.family, a.data.n_bins)?;
    let opts = EvalOptions {
        squared_denominator: a.squared_denominator,
        ..EvalOptions::default()
    };
    let rows = loo_sweep(data, &cases, &[a.alpha], &settings, &opts)?;

    let mut summary = create(&a.data.out, "summary.csv")?;
    writeln!(summary, "{SUMMARY_HEADER}")?;
    let mut per_site = create(&a.data.out, "per_site.csv")?;
    writeln!(per_site, "{PER_SITE_HEADER}")?;
    for r in &rows {
        writeln!(
            summary,
            "conformal,{},{},{},{},{},{},{},{},{},{}",
            r.case.delta.percent(),
            r.case.modulation_label(),
            r.case.score_label(),
            r.alpha,
            pct(r.report.cov_local),
            pct(r.report.cov_global),
            r.report.width,
            r.report.band_score,
            r.report.total_time,
            r.report.mono_time
        )?;
        for (i, band) in r.bands.iter().enumerate() {
            write_site_row(&mut per_site, "conformal", &r.case.to_string(), data, i, band, a.alpha, r.times[i])?;
        }
    }
    if let Some(b) = a.bootstrap_b {
        let boot = loo_bootstrap(data, b, a.alpha, seed, &settings, &opts.solver)?;
        writeln!(
            summary,
            "bootstrap,,,,{},{},{},{},{},{},{}",
            a.alpha,
            pct(boot.report.cov_local),
            pct(boot.report.cov_global),
            boot.report.width,
            boot.report.band_score,
            boot.report.total_time,
            boot.report.mono_time
        )?;
        for (i, band) in boot.bands.iter().enumerate() {
            write_site_row(&mut per_site, "bootstrap", "", data, i, band, a.alpha, boot.times[i])?;
        }
    }
    summary.flush()?;
    per_site.flush()?;
    Ok(RunRecord {
        outputs: vec!["summary.csv".into(), "per_site.csv".into()],
        inputs: loaded.inputs,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_site_row(
    w: &mut impl Write,
    method: &str,
    case: &str,
    data: &SpatialFunctionalDataset,
    i: usize,
    band: &impl fokcp::metrics::Envelope,
    alpha: f64,
    secs: f64,
) -> Result<()> {
    let truth = &data.curves()[i];
    let hits = band.covers_at(truth)?;
    let frac = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    writeln!(
        w,
        "{method},\"{case}\",{},{},{},{},{},{}",
        data.sites()[i].id,
        fokcp::metrics::band_width(band),
        fokcp::metrics::band_score(band, truth, alpha)?,
        pct(100.0 * frac),
        hits.iter().all(|&h| h),
        secs
    )?;
    Ok(())
}

fn cmd_bootstrap(a: &BootstrapArgs, seed: u64) -> Result<RunRecord> {
    ensure_dir(&a.data.out)?;
    let loaded = load_dataset(&a.data.data, a.data.basis.as_deref())?;
    let settings = fitter(&a.data.family, a.data.n_bins)?;
    let mut outputs = Vec::new();
    if a.loocv {
        let data = &loaded.data;
        let boot = loo_bootstrap(data, a.bootstrap_b, a.alpha, seed, &settings, &Default::default())?;
        let mut summary = create(&a.data.out, "summary.csv")?;
        writeln!(summary, "{SUMMARY_HEADER}")?;
        writeln!(
            summary,
            "bootstrap,,,,{},{},{},{},{},{},{}",
            a.alpha,
            pct(boot.report.cov_local),
            pct(boot.report.cov_global),
            boot.report.width,
            boot.report.band_score,
            boot.report.total_time,
            boot.report.mono_time
        )?;
        summary.flush()?;
        let mut per_site = create(&a.data.out, "per_site.csv")?;
        writeln!(per_site, "{PER_SITE_HEADER}")?;
        for (i, band) in boot.bands.iter().enumerate() {
            write_site_row(&mut per_site, "bootstrap", "", data, i, band, a.alpha, boot.times[i])?;
        }
        per_site.flush()?;
        outputs.extend(["summary.csv".to_string(), "per_site.csv".to_string()]);
    } else {
        let (data, target) = parse_target(&a.target, loaded.data)?;
        let cfg = BootstrapConfig {
            b: a.bootstrap_b,
            alpha: a.alpha,
            seed,
        };
        let start = Instant::now();
        let band = bootstrap_band(&data, &target, &settings, &cfg)?;
        let secs = start.elapsed().as_secs_f64();
        let mut w = create(&a.data.out, "band.csv")?;
        band.write_csv(&mut w)?;
        w.flush()?;
        write_json(
            &a.data.out,
            "band.json",
            &serde_json::json!({
                "method": "bootstrap",
                "alpha": a.alpha,
                "B": a.bootstrap_b,
                "resampling_unit": "site",
                "interval": "pointwise percentile",
                "n_failed": band.n_failed,
                "target": target,
                "timings": { "total_seconds": secs },
            }),
        )?;
        outputs.extend(["band.csv".to_string(), "band.json".to_string()]);
    }
    Ok(RunRecord {
        outputs,
        inputs: loaded.inputs,
    })
}
