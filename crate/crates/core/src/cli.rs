//! Command-line front end. Every run writes its artifacts into `--out`
//! together with `manifest.json`, whose `argv` replays the run exactly.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::demography::{self, curves, AgeGrid};
use crate::error::{Error, Result};
use crate::estimation::{fit_global, fit_individual, FitConfig, FitResult, GlobalRates, RateBasis, Weighting};
use crate::io::{self, DataFormat};
use crate::likelihood::LifeVectorSample;
use crate::model::{build_atmmpp, preset, validate, TmapModel};
use crate::selection::{
    aic, cross_validate_with, msil_grid, msil_select_with, mse_global, partition_mk1, partition_mk2, simulated_rates,
    FoldFits, MsilPartition, SelectionReport,
};
use crate::simulation::{aggregate_rates, extinction_frequency, simulate_sample, SimConfig, TreeCaps};
use crate::uncertainty::{band_bootstrap, band_delta, band_resample, BandOptions, BandStyle, ConfidenceBand};

#[derive(Debug, Parser)]
#[command(name = "mbtfit", version, about = "Fit Markovian binary tree population models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an n-phase model to life vectors or global rates.
    Fit(FitArgs),
    /// Choose the number of phases.
    Select(SelectArgs),
    /// Simulate life vectors (and aggregated rates) from a model.
    Simulate(SimulateArgs),
    /// Pointwise confidence bands for mortality and fertility.
    Ci(CiArgs),
    /// Extinction probability against the founder's age.
    Extinction(ExtinctionArgs),
    /// Mortality, fertility and survival curves of a model.
    Curves(CurvesArgs),
    /// Check a model or a data file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for all randomness; drawn and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker bound (runs are sequential; recorded for provenance).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Life-vector CSV/JSON or global-rates CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Class length `l` (life vectors default to 1; rates read it from the
    /// sidecar or the age column).
    #[arg(long = "l", alias = "class-length")]
    pub class_length: Option<f64>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Vectors,
    Rates,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    PerClass,
    PerYear,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Model JSON.
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    /// Built-in example: example1, example2, example3.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct FitOpts {
    /// Number of starts.
    #[arg(long, default_value_t = 25)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "survival")]
    pub weighting: WeightingArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Survival,
    Counts,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub fit: FitOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum CriterionArg {
    Aic,
    Cv,
    Msil,
    Mse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Mk1,
    Mk2,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Life vectors (aic, cv, msil) or unused for mse.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "l", alias = "class-length")]
    pub class_length: Option<f64>,
    #[arg(long, value_enum)]
    pub criterion: CriterionArg,
    /// Inclusive range `a..b`.
    #[arg(long, default_value = "1..15")]
    pub n_range: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// MSIL partition K.
    #[arg(long = "msil-k")]
    pub msil_k: Option<usize>,
    /// MSIL partition M.
    #[arg(long = "msil-m")]
    pub msil_m: Option<usize>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleArg>,
    #[arg(long, default_value_t = 0.05)]
    pub covering_p: f64,
    /// Sensitivity sweep, e.g. `M=2..4,K=0..3`.
    #[arg(long)]
    pub msil_grid: Option<String>,
    /// True model for the mse criterion.
    #[command(flatten)]
    pub truth: ModelArgs,
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    #[arg(long = "individuals", alias = "N")]
    pub individuals: Option<usize>,
    #[arg(long = "horizon", alias = "T")]
    pub horizon: Option<f64>,
    #[command(flatten)]
    pub fit: FitOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of individuals (defaults to the preset's).
    #[arg(long = "individuals", alias = "N")]
    pub individuals: Option<usize>,
    /// Observation horizon (defaults to the preset's).
    #[arg(long = "horizon", alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long = "l", alias = "class-length", default_value_t = 1.0)]
    pub class_length: f64,
    #[arg(long, default_value_t = 0.0)]
    pub censoring: f64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum MethodArg {
    Bootstrap,
    Resample,
    Delta,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum FitKind {
    Individual,
    Global,
}

#[derive(Debug, Args)]
pub struct CiArgs {
    /// Life vectors (bootstrap, delta).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "l", alias = "class-length")]
    pub class_length: Option<f64>,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "B", alias = "replicates", default_value_t = 25)]
    pub replicates: usize,
    /// Which fit the bands are built from.
    #[arg(long = "fit", value_enum, default_value = "individual")]
    pub fit_kind: FitKind,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Quantile bands instead of mean +- z sd.
    #[arg(long)]
    pub quantile: bool,
    /// True model for resampling.
    #[command(flatten)]
    pub truth: ModelArgs,
    #[arg(long = "individuals", alias = "N")]
    pub individuals: Option<usize>,
    #[arg(long = "horizon", alias = "T")]
    pub horizon: Option<f64>,
    /// Last class start of the band grid (defaults to the data's).
    #[arg(long)]
    pub max_age: Option<f64>,
    #[command(flatten)]
    pub fit: FitOpts,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExtinctionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 14.0)]
    pub max_age: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    /// Also estimate the newborn extinction frequency from this many trees.
    #[arg(long, default_value_t = 0)]
    pub trees: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_population: usize,
    #[arg(long, default_value_t = 200.0)]
    pub max_time: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 14.0)]
    pub max_age: f64,
    #[arg(long = "l", alias = "class-length", default_value_t = 1.0)]
    pub class_length: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "l", alias = "class-length")]
    pub class_length: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, &argv) {
        Ok(outputs) => {
            for o in outputs {
                println!("wrote {}", o.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Run {
    out: PathBuf,
    seed: u64,
    argv: Vec<String>,
    command: &'static str,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(common: &Common, command: &'static str, argv: &[OsString]) -> Result<Self> {
        let seed = common.seed.unwrap_or_else(rand::random);
        let mut argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
        if common.seed.is_none() {
            argv.push("--seed".into());
            argv.push(seed.to_string());
        }
        fs::create_dir_all(&common.out)?;
        Ok(Run {
            out: common.out.clone(),
            seed,
            argv,
            command,
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.out.join(name);
        io::write_atomic(&p, text.as_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn finish(mut self, jobs: usize) -> Result<Vec<PathBuf>> {
        let mut names: Vec<String> = self
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        let manifest = json!({
            "tool": "mbtfit",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "jobs": jobs,
            "outputs": names,
        });
        self.write_json("manifest.json", &manifest)?;
        Ok(self.files)
    }
}

fn load_model(m: &ModelArgs) -> Result<TmapModel> {
    match (&m.model, &m.preset) {
        (Some(p), _) => TmapModel::from_json(&fs::read_to_string(p)?),
        (None, Some(name)) => build_atmmpp(&preset(name)?.params),
        (None, None) => Err(Error::structural("need --model or --preset")),
    }
}

enum Data {
    Vectors(LifeVectorSample),
    Rates(GlobalRates),
}

fn load_data(path: &Path, format: Option<FormatArg>, l: Option<f64>, basis: Option<BasisArg>) -> Result<Data> {
    let text = fs::read_to_string(path)?;
    let fmt = match format {
        Some(FormatArg::Vectors) => DataFormat::Vectors,
        Some(FormatArg::Rates) => DataFormat::Rates,
        None => io::detect_format(&text).ok_or_else(|| Error::Parse {
            line: 1,
            message: "cannot tell life vectors from rates; pass --format".into(),
        })?,
    };
    let basis = basis.map(|b| match b {
        BasisArg::PerClass => RateBasis::PerClass,
        BasisArg::PerYear => RateBasis::PerYear,
    });
    Ok(match fmt {
        DataFormat::Vectors => Data::Vectors(io::parse_life_vectors(&text, l.unwrap_or(1.0))?),
        DataFormat::Rates => Data::Rates(io::read_rates(path, l, basis)?),
    })
}

fn load_vectors(path: Option<&PathBuf>, l: Option<f64>) -> Result<LifeVectorSample> {
    let path = path.ok_or_else(|| Error::structural("need --data"))?;
    match load_data(path, None, l, None)? {
        Data::Vectors(s) => Ok(s),
        Data::Rates(_) => Err(Error::structural("this command needs life vectors, not rates")),
    }
}

fn fit_config(n: usize, opts: &FitOpts, seed: u64) -> FitConfig {
    FitConfig {
        seeds: opts.seeds,
        max_iter: opts.max_iter,
        weighting: match opts.weighting {
            WeightingArg::Survival => Weighting::Survival,
            WeightingArg::Counts => Weighting::Counts,
        },
        ..FitConfig::new(n).with_seed(seed)
    }
}

/// Number of classes spanned by a sample.
fn sample_classes(s: &LifeVectorSample) -> usize {
    s.vectors().iter().map(|v| v.len() - usize::from(v.died())).max().unwrap_or(1).max(1)
}

fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::structural(format!("expected a range like 1..15, got '{s}'"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

/// `M=2..4,K=0..3`.
fn parse_grid(s: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut m = None;
    let mut k = None;
    for part in s.split(',') {
        let (key, range) = part
            .split_once('=')
            .ok_or_else(|| Error::structural(format!("bad grid part '{part}'")))?;
        let (a, b) = range
            .split_once("..")
            .ok_or_else(|| Error::structural(format!("bad grid range '{range}'")))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::structural(format!("bad number '{v}'")));
        let vals: Vec<usize> = (parse(a)?..=parse(b)?).collect();
        match key.trim() {
            "M" | "m" => m = Some(vals),
            "K" | "k" => k = Some(vals),
            other => return Err(Error::structural(format!("unknown grid key '{other}'"))),
        }
    }
    match (m, k) {
        (Some(m), Some(k)) if !m.is_empty() && !k.is_empty() => Ok((m, k)),
        _ => Err(Error::structural("grid needs both M and K ranges")),
    }
}

fn run(cli: Cli, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a, argv),
        Command::Select(a) => cmd_select(a, argv),
        Command::Simulate(a) => cmd_simulate(a, argv),
        Command::Ci(a) => cmd_ci(a, argv),
        Command::Extinction(a) => cmd_extinction(a, argv),
        Command::Curves(a) => cmd_curves(a, argv),
        Command::Validate(a) => cmd_validate(a, argv),
    }
}

fn cmd_fit(a: FitArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "fit", argv)?;
    let cfg = fit_config(a.n, &a.fit, run.seed);
    let data = load_data(&a.data.data, a.data.format, a.data.class_length, a.data.basis)?;
    let (fit, classes, l, kind): (FitResult, usize, f64, &str) = match &data {
        Data::Vectors(s) => (fit_individual(s, &cfg)?, sample_classes(s), s.class_length(), "individual"),
        Data::Rates(r) => (fit_global(r, &cfg)?, r.len(), r.class_length, "global"),
    };
    let model = fit.model()?;
    run.write("model.json", &(model.to_json()? + "\n"))?;
    let c = curves(&model, &AgeGrid::classes(classes, l)?)?;
    run.write("curves.csv", &io::curves_csv(&c))?;
    run.write_json("fit_trace.json", &json!({ "kind": kind, "config": cfg, "result": fit }))?;
    run.finish(a.common.jobs)
}

fn cmd_select(a: SelectArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "select", argv)?;
    let n_values = parse_range(&a.n_range)?;
    let cfg = fit_config(n_values[0], &a.fit, run.seed);
    if a.criterion == CriterionArg::Mse {
        let truth = load_model(&a.truth)?;
        let (dn, dt) = match &a.truth.preset {
            Some(p) => {
                let p = preset(p)?;
                (p.sample_size, p.horizon)
            }
            None => (500, 15.0),
        };
        let sim = SimConfig::new(
            a.individuals.unwrap_or(dn),
            a.horizon.unwrap_or(dt),
            a.class_length.unwrap_or(1.0),
            run.seed,
        );
        let report = mse_global(&truth, &n_values, simulated_rates(&truth, &sim), a.replicates, &cfg)?;
        println!("chosen n = {:?}", report.chosen_n);
        run.write_json("selection.json", &report)?;
        return run.finish(a.common.jobs);
    }
    let sample = load_vectors(a.data.as_ref(), a.class_length)?;
    let report: SelectionReport = match a.criterion {
        CriterionArg::Aic => aic(&sample, &n_values, &cfg)?,
        CriterionArg::Cv => {
            let mut fits = FoldFits::new(&sample, a.folds, &cfg)?;
            cross_validate_with(&mut fits, &n_values)?
        }
        CriterionArg::Msil => {
            if let Some(grid) = &a.msil_grid {
                let (ms, ks) = parse_grid(grid)?;
                let reports = msil_grid(&sample, &n_values, a.folds, &ms, &ks, &cfg)?;
                let mut table = String::from("M,K,chosen_n\n");
                for r in &reports {
                    let p = r.msil.as_ref().map(|m| m.partition).expect("msil report");
                    let chosen = r.chosen_n.map(|n| n.to_string()).unwrap_or_default();
                    table.push_str(&format!("{},{},{}\n", p.horizon, p.max_count, chosen));
                }
                print!("{table}");
                run.write("msil_grid.csv", &table)?;
                run.write_json("selection.json", &reports)?;
                return run.finish(a.common.jobs);
            }
            let partition = match (a.rule, a.msil_k, a.msil_m) {
                (Some(rule), _, _) => {
                    let rates = aggregate_rates(&sample)?;
                    let p = match rule {
                        RuleArg::Mk1 => partition_mk1(&rates)?,
                        RuleArg::Mk2 => partition_mk2(&rates, a.covering_p)?,
                    };
                    println!("MSIL partition from rule: K = {}, M = {}", p.max_count, p.horizon);
                    p
                }
                (None, Some(k), Some(m)) => MsilPartition {
                    max_count: k,
                    horizon: m,
                },
                _ => return Err(Error::structural("msil needs --rule, or both --msil-k and --msil-m")),
            };
            let mut fits = FoldFits::new(&sample, a.folds, &cfg)?;
            msil_select_with(&mut fits, &n_values, partition)?
        }
        CriterionArg::Mse => unreachable!(),
    };
    println!("chosen n = {:?}", report.chosen_n);
    run.write_json("selection.json", &report)?;
    run.finish(a.common.jobs)
}

fn cmd_simulate(a: SimulateArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "simulate", argv)?;
    let model = load_model(&a.model)?;
    let p = a.model.preset.as_deref().map(preset).transpose()?;
    let n = a.individuals.or(p.as_ref().map(|p| p.sample_size)).ok_or_else(|| Error::structural("need --individuals"))?;
    let t = a.horizon.or(p.as_ref().map(|p| p.horizon)).ok_or_else(|| Error::structural("need --horizon"))?;
    let cfg = SimConfig {
        censoring: a.censoring,
        ..SimConfig::new(n, t, a.class_length, run.seed)
    };
    let sample = simulate_sample(&model, &cfg, a.replicate)?;
    run.write("vectors.csv", &io::life_vectors_csv(&sample))?;
    let rates = aggregate_rates(&sample)?;
    let path = run.out.join("rates.csv");
    io::write_rates(&path, &rates)?;
    run.files.push(path.clone());
    run.files.push(io::sidecar_path(&path));
    run.write("model.json", &(model.to_json()? + "\n"))?;
    run.finish(a.common.jobs)
}

fn band_grid(classes: usize, l: f64, max_age: Option<f64>) -> Result<AgeGrid> {
    let count = match max_age {
        Some(m) => (m / l).floor() as usize + 1,
        None => classes,
    };
    AgeGrid::classes(count, l)
}

fn cmd_ci(a: CiArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "ci", argv)?;
    let cfg = fit_config(a.n, &a.fit, run.seed);
    let opts = BandOptions {
        level: a.level,
        style: if a.quantile { BandStyle::Quantile } else { BandStyle::MeanSd },
        ..BandOptions::new(a.replicates, run.seed)
    };
    let fit_kind = a.fit_kind;
    let fitter = |s: &LifeVectorSample| -> Result<TmapModel> {
        match fit_kind {
            FitKind::Individual => fit_individual(s, &cfg)?.model(),
            FitKind::Global => fit_global(&aggregate_rates(s)?, &cfg)?.model(),
        }
    };
    let (mort, fert): (ConfidenceBand, ConfidenceBand) = match a.method {
        MethodArg::Bootstrap | MethodArg::Delta => {
            let sample = load_vectors(a.data.as_ref(), a.class_length)?;
            let grid = band_grid(sample_classes(&sample), sample.class_length(), a.max_age)?;
            if a.method == MethodArg::Delta {
                if fit_kind == FitKind::Global {
                    return Err(Error::structural("the delta method applies to individual-data fits"));
                }
                let fit = fit_individual(&sample, &cfg)?;
                let g = grid.clone();
                let m = band_delta(&sample, &fit.params, grid.ages(), |m| Ok(curves(m, &g)?.mortality), a.level)?;
                let f = band_delta(&sample, &fit.params, grid.ages(), |m| Ok(curves(m, &g)?.fertility), a.level)?;
                (m, f)
            } else {
                // one set of fits serves both outputs
                let g = grid.clone();
                let both = band_bootstrap(&sample, &both_ages(&grid), fitter, |m| both_curves(m, &g), &opts)?;
                split(both, grid.len())
            }
        }
        MethodArg::Resample => {
            let truth = load_model(&a.truth)?;
            let p = a.truth.preset.as_deref().map(preset).transpose()?;
            let n = a.individuals.or(p.as_ref().map(|p| p.sample_size)).unwrap_or(500);
            let t = a.horizon.or(p.as_ref().map(|p| p.horizon)).unwrap_or(15.0);
            let l = a.class_length.unwrap_or(1.0);
            let sim = SimConfig::new(n, t, l, run.seed);
            let grid = band_grid((t / l).round() as usize, l, a.max_age)?;
            let g = grid.clone();
            let both = band_resample(&truth, &sim, &both_ages(&grid), fitter, |m| both_curves(m, &g), &opts)?;
            split(both, grid.len())
        }
    };
    run.write("band_mortality.csv", &io::band_csv(&mort))?;
    run.write("band_fertility.csv", &io::band_csv(&fert))?;
    run.write_json(
        "band.json",
        &json!({
            "method": mort.method,
            "B": mort.replicates,
            "level": mort.level,
            "failures": mort.failures,
            "fit": format!("{:?}", fit_kind).to_lowercase(),
            "diagnostics": mort.diagnostics.iter().chain(&fert.diagnostics).collect::<Vec<_>>(),
            "mean_width": { "mortality": mort.mean_width(), "fertility": fert.mean_width() },
        }),
    )?;
    run.finish(a.common.jobs)
}

fn both_ages(grid: &AgeGrid) -> Vec<f64> {
    grid.ages().iter().chain(grid.ages()).copied().collect()
}

fn both_curves(m: &TmapModel, grid: &AgeGrid) -> Result<Vec<f64>> {
    let c = curves(m, grid)?;
    Ok(c.mortality.into_iter().chain(c.fertility).collect())
}

fn split(b: ConfidenceBand, n: usize) -> (ConfidenceBand, ConfidenceBand) {
    let part = |lo: usize, hi: usize| ConfidenceBand {
        ages: b.ages[lo..hi].to_vec(),
        estimate: b.estimate[lo..hi].to_vec(),
        lower: b.lower[lo..hi].to_vec(),
        upper: b.upper[lo..hi].to_vec(),
        point: b.point.as_ref().map(|p| p[lo..hi].to_vec()),
        ..b.clone()
    };
    (part(0, n), part(n, 2 * n))
}

fn age_grid(max_age: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max_age >= 0.0) {
        return Err(Error::structural("need step > 0 and max age >= 0"));
    }
    let count = (max_age / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| i as f64 * step).collect())
}

fn cmd_extinction(a: ExtinctionArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "extinction", argv)?;
    let model = load_model(&a.model)?;
    let q = demography::extinction_vector(&model, demography::DEFAULT_EXTINCTION_TOL, demography::DEFAULT_EXTINCTION_MAX_ITER)?;
    let ages = age_grid(a.max_age, a.step)?;
    let curve = demography::extinction_curve(&model, &q, &ages)?;
    run.write("extinction.csv", &io::extinction_csv(&ages, &curve))?;
    let mut summary = json!({
        "q": q.as_slice(),
        "newborn": model.alpha().dot(&q),
        "mean_offspring": demography::mean_offspring(&model).ok(),
        "residual": demography::extinction_residual(&model, &q),
    });
    if a.trees > 0 {
        let caps = TreeCaps {
            max_population: a.max_population,
            max_time: a.max_time,
        };
        summary["simulated"] = serde_json::to_value(extinction_frequency(&model, a.trees, &caps, run.seed)?)?;
    }
    run.write_json("extinction.json", &summary)?;
    run.finish(a.common.jobs)
}

fn cmd_curves(a: CurvesArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "curves", argv)?;
    let model = load_model(&a.model)?;
    let grid = AgeGrid::new(age_grid(a.max_age, a.class_length)?, a.class_length)?;
    run.write("curves.csv", &io::curves_csv(&curves(&model, &grid)?))?;
    run.finish(a.common.jobs)
}

fn cmd_validate(a: ValidateArgs, argv: &[OsString]) -> Result<Vec<PathBuf>> {
    let mut run = Run::new(&a.common, "validate", argv)?;
    let mut report = serde_json::Map::new();
    let mut problems = Vec::new();
    if a.model.model.is_some() || a.model.preset.is_some() {
        let model = match &a.model.model {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let raw: serde_json::Value = serde_json::from_str(&text)?;
                // parse without validation so every violation is listed
                match TmapModel::from_json(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        problems.push(e.to_string());
                        report.insert("model".into(), raw);
                        report.insert("violations".into(), json!(problems));
                        run.write_json("validation.json", &report)?;
                        run.finish(a.common.jobs)?;
                        return Err(Error::structural(format!("invalid model: {}", problems.join("; "))));
                    }
                }
            }
            None => load_model(&a.model)?,
        };
        let v: Vec<String> = validate(&model).iter().map(|v| format!("{v:?}")).collect();
        problems.extend(v.iter().cloned());
        report.insert("model_phases".into(), json!(model.n()));
        report.insert("violations".into(), json!(v));
    }
    if let Some(path) = &a.data {
        match load_data(path, None, a.class_length, None)? {
            Data::Vectors(s) => {
                report.insert(
                    "data".into(),
                    json!({ "format": "vectors", "vectors": s.len(), "max_count": s.max_count(), "classes": sample_classes(&s) }),
                );
            }
            Data::Rates(r) => {
                report.insert(
                    "data".into(),
                    json!({ "format": "rates", "rows": r.len(), "class_length": r.class_length, "basis": r.basis }),
                );
            }
        }
    }
    if report.is_empty() {
        return Err(Error::structural("nothing to validate: pass --model, --preset or --data"));
    }
    run.write_json("validation.json", &report)?;
    let files = run.finish(a.common.jobs)?;
    if problems.is_empty() {
        Ok(files)
    } else {
        Err(Error::structural(format!("invalid model: {}", problems.join("; "))))
    }
}
