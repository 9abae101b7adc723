//! Command-line driver: `fit`, `bootstrap`, `simulate` and `combine`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix2;
use pairlme_core::fit::{Estimator, FitOptions, FitResult};
use pairlme_core::formula::{parse_formula, ModelFormula};
use pairlme_core::inference::{bootstrap_fit, rubin_combine, sandwich_beta, score_total, SandwichOptions};
use pairlme_core::pairs::PairSet;
use pairlme_core::pairwise::fit_pairs;
use pairlme_core::pairwise::pairwise_start;
use pairlme_core::reference::{fit_ml, fit_stagewise, SizeTarget, WeightScaling};
use pairlme_core::sample::SurveySample;

use crate::config::{pick, ConfigFile};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, DesignColumns, Ingested};
use crate::report::{aligned, read_params, sig6, write_params, ParamRow};
use crate::simlab::{min_one_sided_difference, run_study, SimScenario, StudyOptions, ESTIMATORS};

#[derive(Debug, Parser)]
#[command(name = "pairlme", version, about = "Survey-weighted linear mixed models by pairwise likelihood")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one or more estimators to a survey data file.
    Fit(FitArgs),
    /// Rao-Wu bootstrap standard errors for the pairwise fit.
    Bootstrap(BootstrapArgs),
    /// Run a simulation study from a preset or scenario file.
    Simulate(SimulateArgs),
    /// Combine fits of plausible values by Rubin's rules.
    Combine(CombineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Ml,
    Pairwise,
    Stagewise,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScalingArg {
    Unscaled,
    Size,
    Gk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Sample,
    Population,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Model formula, e.g. `y ~ x + (1 + x | school)`.
    #[arg(short, long)]
    pub formula: Option<String>,
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub stratum: Option<String>,
    #[arg(long)]
    pub psu: Option<String>,
    /// Group column; defaults to the formula's grouping factor.
    #[arg(long)]
    pub group: Option<String>,
    /// Stage-1 inclusion probability column.
    #[arg(long)]
    pub p1: Option<String>,
    /// Stage-2 (within-group) inclusion probability column.
    #[arg(long)]
    pub p2: Option<String>,
    /// Within-group pair inclusion probability column.
    #[arg(long)]
    pub ppair: Option<String>,
    /// Population group size column.
    #[arg(long)]
    pub npop: Option<String>,
    /// Output CSV path.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(short, long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Stagewise weight scaling.
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    /// Target of the cluster-size scaling.
    #[arg(long, value_enum)]
    pub size_target: Option<TargetArg>,
    /// Center PSU score totals at their stratum mean.
    #[arg(long)]
    pub center: bool,
    /// Report the score root and one-sided differences at the optimum.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(short, long)]
    pub replicates: Option<usize>,
    #[arg(short, long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// table1 ... table9.
    #[arg(short, long)]
    pub preset: Option<String>,
    /// Scenario `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub replicates: Option<usize>,
    #[arg(short, long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strata: Option<usize>,
    /// Text table path; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Metrics CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CombineArgs {
    /// Fit CSV files, one per plausible value.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

const DATA_KEYS: [&str; 11] =
    ["input", "formula", "stratum", "psu", "group", "p1", "p2", "ppair", "npop", "output", "seed"];

struct Resolved {
    formula: ModelFormula,
    input: PathBuf,
    cols: DesignColumns,
    output: Option<PathBuf>,
    file: Option<ConfigFile>,
}

fn resolve_data(d: &DataArgs, extra_keys: &[&str]) -> CliResult<Resolved> {
    let file = d.config.as_deref().map(ConfigFile::load).transpose()?;
    if let Some(f) = &file {
        let keys: Vec<&str> = DATA_KEYS.iter().chain(extra_keys).copied().collect();
        f.check_keys(&keys)?;
    }
    let f = file.as_ref();
    let text: Option<String> = pick(d.formula.clone(), f, "formula")?;
    let formula = parse_formula(&text.ok_or_else(|| CliError::user("a model formula is required (--formula)"))?)?;
    let input: PathBuf =
        pick(d.input.clone(), f, "input")?.ok_or_else(|| CliError::user("an input file is required (--input)"))?;
    let base = DesignColumns::default();
    let cols = DesignColumns {
        stratum: pick(d.stratum.clone(), f, "stratum")?.unwrap_or(base.stratum),
        psu: pick(d.psu.clone(), f, "psu")?.unwrap_or(base.psu),
        group: pick(d.group.clone(), f, "group")?,
        p1: pick(d.p1.clone(), f, "p1")?.unwrap_or(base.p1),
        p2: pick(d.p2.clone(), f, "p2")?.unwrap_or(base.p2),
        ppair: pick(d.ppair.clone(), f, "ppair")?,
        npop: pick(d.npop.clone(), f, "npop")?,
    };
    let output = pick(d.output.clone(), f, "output")?;
    Ok(Resolved { formula, input, cols, output, file })
}

fn load(r: &Resolved) -> CliResult<(Ingested, SurveySample)> {
    let ing = ingest_csv(&r.input, &r.formula, &r.cols)?;
    if ing.dropped > 0 {
        eprintln!("dropped {} of {} rows with missing values", ing.dropped, ing.rows_read);
    }
    let sample = ing.sample(&r.formula)?;
    let paths: Vec<String> = sample.pair_paths.iter().map(|(p, n)| format!("{p:?}={n}")).collect();
    eprintln!("pair probabilities by group: {}", paths.join(" "));
    Ok((ing, sample))
}

fn default_output(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    input.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn parse_enum<T: ValueEnum>(v: &str) -> Result<T, String> {
    T::from_str(v, true)
}

fn estimators_for(sel: EstimatorArg, scaling: WeightScaling) -> Vec<Estimator> {
    match sel {
        EstimatorArg::Ml => vec![Estimator::Ml],
        EstimatorArg::Pairwise => vec![Estimator::Pairwise],
        EstimatorArg::Stagewise => vec![Estimator::Stagewise(scaling)],
        EstimatorArg::All => {
            let mut v = ESTIMATORS.to_vec();
            if let WeightScaling::ClusterSize(_) = scaling {
                v[2] = Estimator::Stagewise(scaling);
            }
            v
        }
    }
}

fn section(fit: &FitResult, se: Option<&[f64]>, diag: Option<(f64, Option<f64>)>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== {} ==", fit.estimator.label());
    let _ = writeln!(out, "observations {}  groups {}", fit.n_obs, fit.n_groups);
    if fit.n_pairs > 0 {
        let _ = writeln!(out, "pairs {}  estimated population pairs {}", fit.n_pairs, sig6(fit.n_hat_p));
    }
    let yn = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(
        out,
        "converged {}  boundary {}  evaluations {}  restarted {}  deviance {}",
        yn(fit.converged),
        yn(fit.boundary),
        fit.evaluations,
        yn(fit.restarted),
        sig6(fit.deviance)
    );
    if let Some((score, diff)) = diag {
        let _ = writeln!(
            out,
            "relative score at optimum {}  smallest one-sided difference {}",
            sig6(score),
            diff.map_or("NA".into(), sig6)
        );
    }
    let rows: Vec<Vec<String>> = fit
        .parameters()
        .into_iter()
        .enumerate()
        .map(|(i, (n, v))| vec![n, sig6(v), se.and_then(|s| s.get(i)).map_or(String::new(), |s| sig6(*s))])
        .collect();
    out.push_str(&aligned(&["parameter", "estimate", "se"], &rows));
    out
}

fn param_rows(fit: &FitResult, se: Option<&[f64]>) -> Vec<ParamRow> {
    fit.parameters()
        .into_iter()
        .enumerate()
        .map(|(i, (parameter, estimate))| ParamRow {
            estimator: fit.estimator.label().to_string(),
            parameter,
            estimate,
            se: se.and_then(|s| s.get(i).copied()),
        })
        .collect()
}

fn write_csv(path: &Path, rows: &[ParamRow]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::user(format!("cannot write {}: {e}", path.display())))?;
    write_params(f, rows)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<String> {
    let r = resolve_data(&a.data, &["estimator", "scaling", "size-target", "center", "diagnostics"])?;
    let f = r.file.as_ref();
    let sel = match a.estimator {
        Some(e) => e,
        None => f
            .and_then(|c| c.get("estimator"))
            .map(parse_enum)
            .transpose()
            .map_err(CliError::User)?
            .unwrap_or(EstimatorArg::Pairwise),
    };
    let target = match a.size_target {
        Some(t) => t,
        None => f
            .and_then(|c| c.get("size-target"))
            .map(parse_enum)
            .transpose()
            .map_err(CliError::User)?
            .unwrap_or(TargetArg::Sample),
    };
    let scaling_arg = match a.scaling {
        Some(s) => s,
        None => f
            .and_then(|c| c.get("scaling"))
            .map(parse_enum)
            .transpose()
            .map_err(CliError::User)?
            .unwrap_or(ScalingArg::Size),
    };
    let scaling = match scaling_arg {
        ScalingArg::Unscaled => WeightScaling::Unscaled,
        ScalingArg::Gk => WeightScaling::Gk,
        ScalingArg::Size => WeightScaling::ClusterSize(match target {
            TargetArg::Sample => SizeTarget::Sample,
            TargetArg::Population => SizeTarget::Population,
        }),
    };
    let center = a.center || f.map(|c| c.parsed::<bool>("center")).transpose()?.flatten().unwrap_or(false);
    let diagnostics =
        a.diagnostics || f.map(|c| c.parsed::<bool>("diagnostics")).transpose()?.flatten().unwrap_or(false);

    let (_, sample) = load(&r)?;
    let opts = FitOptions::default();
    let mut report = String::new();
    let mut rows = Vec::new();
    let mut pairs: Option<PairSet> = None;
    for est in estimators_for(sel, scaling) {
        let fit = match est {
            Estimator::Ml => fit_ml(&sample, &opts)?,
            Estimator::Stagewise(s) => fit_stagewise(&sample, s, &opts)?,
            Estimator::Pairwise => {
                let ps = PairSet::enumerate(&sample)?;
                let fit = fit_pairs(&ps, &sample, &pairwise_start(&sample, &opts), &opts)?;
                pairs = Some(ps);
                fit
            }
        };
        let mut se = None;
        if est == Estimator::Pairwise {
            let ps = pairs.as_ref().ok_or(CliError::user("no pairs"))?;
            match sandwich_beta(&fit, ps, &SandwichOptions { center, ..SandwichOptions::default() }) {
                Ok(sw) => se = Some(sw.se.iter().copied().collect::<Vec<f64>>()),
                Err(e) => eprintln!("sandwich standard errors unavailable: {e}"),
            }
        }
        let diag = if diagnostics {
            let score = match (est, pairs.as_ref()) {
                (Estimator::Pairwise, Some(ps)) => {
                    let (total, scale) = score_total(&fit, ps)?;
                    total.amax() / scale.max(1.0)
                }
                _ => 0.0,
            };
            Some((score, min_one_sided_difference(&fit, &sample, pairs.as_ref())?))
        } else {
            None
        };
        if !fit.converged {
            eprintln!("warning: {} fit did not converge", est.label());
        }
        report.push_str(&section(&fit, se.as_deref(), diag));
        report.push('\n');
        rows.extend(param_rows(&fit, se.as_deref()));
    }
    let out = r.output.clone().unwrap_or_else(|| default_output(&r.input, "fit"));
    write_csv(&out, &rows)?;
    Ok(report)
}

pub fn cmd_bootstrap(a: &BootstrapArgs) -> CliResult<String> {
    let r = resolve_data(&a.data, &["replicates"])?;
    let f = r.file.as_ref();
    let seed: u64 = pick(a.seed, f, "seed")?.ok_or_else(|| CliError::user("a seed is required (--seed)"))?;
    let reps: usize = pick(a.replicates, f, "replicates")?.unwrap_or(100);
    let (_, sample) = load(&r)?;
    let opts = FitOptions::default();
    let pairs = PairSet::enumerate(&sample)?;
    let fit = fit_pairs(&pairs, &sample, &pairwise_start(&sample, &opts), &opts)?;
    let set = bootstrap_fit(&fit, &sample, &pairs, reps, seed, &opts)?;
    let mut report = format!("Rao-Wu bootstrap: {} replicates, seed {seed}, {} failed\n", set.requested, set.failed);
    report.push_str(&section(&fit, Some(&set.se), None));
    let out = r.output.clone().unwrap_or_else(|| default_output(&r.input, "bootstrap"));
    write_csv(&out, &param_rows(&fit, Some(&set.se)))?;
    Ok(report)
}

const SCENARIO_KEYS: [&str; 15] = [
    "preset",
    "strata",
    "stratum_size",
    "cluster_size",
    "clusters_per_stratum",
    "rule",
    "x_dist",
    "beta",
    "v",
    "sigma2",
    "independent",
    "replicates",
    "seed",
    "output",
    "csv",
];

fn triple(key: &str, v: &str) -> CliResult<[f64; 3]> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::user(format!("config `{key}`: {e}")))?;
    <[f64; 3]>::try_from(parts)
        .map_err(|_| CliError::user(format!("config `{key}` needs three comma-separated numbers")))
}

/// Preset (or default) scenario with file entries and flags applied.
pub fn resolve_scenario(a: &SimulateArgs) -> CliResult<SimScenario> {
    let file = a.config.as_deref().map(ConfigFile::load).transpose()?;
    if let Some(f) = &file {
        f.check_keys(&SCENARIO_KEYS)?;
    }
    let f = file.as_ref();
    let preset: Option<String> = pick(a.preset.clone(), f, "preset")?;
    let mut sc = match &preset {
        Some(p) => SimScenario::preset(p)?,
        None if f.is_some() => SimScenario::default(),
        None => return Err(CliError::user("a preset (--preset) or scenario file (--config) is required")),
    };
    if let Some(f) = f {
        if let Some(v) = f.parsed("stratum_size")? {
            sc.stratum_size = v;
        }
        if let Some(v) = f.parsed("cluster_size")? {
            sc.cluster_size = v;
        }
        if let Some(v) = f.parsed("clusters_per_stratum")? {
            sc.clusters_per_stratum = v;
        }
        if let Some(v) = f.parsed("rule")? {
            sc.rule = v;
        }
        if let Some(v) = f.parsed("x_dist")? {
            sc.x_dist = v;
        }
        if let Some(v) = f.get("beta") {
            sc.beta = triple("beta", v)?;
        }
        if let Some(v) = f.get("v") {
            let [a, b, d] = triple("v", v)?;
            sc.v = Matrix2::new(a, b, b, d);
        }
        if let Some(v) = f.parsed("sigma2")? {
            sc.sigma2 = v;
        }
        if let Some(v) = f.parsed("independent")? {
            sc.independent = v;
        }
    }
    if let Some(v) = pick(a.strata, f, "strata")? {
        sc.strata = v;
    }
    if let Some(v) = pick(a.replicates, f, "replicates")? {
        sc.replicates = v;
    }
    sc.seed = pick(a.seed, f, "seed")?.ok_or_else(|| CliError::user("a seed is required (--seed)"))?;
    sc.validate()?;
    Ok(sc)
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    let sc = resolve_scenario(a)?;
    let file = a.config.as_deref().map(ConfigFile::load).transpose()?;
    let output: Option<PathBuf> = pick(a.output.clone(), file.as_ref(), "output")?;
    let csv_path: Option<PathBuf> = pick(a.csv.clone(), file.as_ref(), "csv")?;
    let result = run_study(&sc, &StudyOptions::default())?;
    let m = &result.metrics;
    let mut header = String::new();
    for (k, v) in sc.describe() {
        let _ = writeln!(header, "# {k}: {v}");
    }
    let failures: Vec<String> = m.estimators.iter().zip(&m.failed).map(|(e, n)| format!("{}={n}", e.label())).collect();
    let _ = writeln!(header, "# failures: {}", failures.join(" "));
    let text = format!("{header}{}", m.to_text());
    if let Some(p) = &csv_path {
        let mut f = File::create(p).map_err(|e| CliError::user(format!("cannot write {}: {e}", p.display())))?;
        f.write_all(header.as_bytes())?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["estimator", "parameter", "statistic", "value"])?;
        for row in m.csv_rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        eprintln!("wrote {}", p.display());
    }
    match output {
        Some(p) => {
            std::fs::write(&p, &text).map_err(|e| CliError::user(format!("cannot write {}: {e}", p.display())))?;
            eprintln!("wrote {}", p.display());
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn cmd_combine(a: &CombineArgs) -> CliResult<String> {
    let mut sets = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        let f = File::open(p).map_err(|e| CliError::user(format!("cannot open {}: {e}", p.display())))?;
        sets.push(read_params(f).map_err(|e| CliError::user(format!("{}: {e}", p.display())))?);
    }
    let keys: Vec<(String, String)> = sets[0].iter().map(|r| (r.estimator.clone(), r.parameter.clone())).collect();
    for (p, s) in a.inputs.iter().zip(&sets).skip(1) {
        let other: Vec<(String, String)> = s.iter().map(|r| (r.estimator.clone(), r.parameter.clone())).collect();
        if other != keys {
            return Err(CliError::user(format!(
                "{} has a different parameter set than {}",
                p.display(),
                a.inputs[0].display()
            )));
        }
    }
    if sets.len() == 1 {
        eprintln!("warning: a single input; passing it through without combining");
    }
    let estimates: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().map(|r| r.estimate).collect()).collect();
    let variances: Vec<Vec<f64>> =
        sets.iter().map(|s| s.iter().map(|r| r.se.map_or(f64::NAN, |v| v * v)).collect()).collect();
    let res = rubin_combine(&estimates, &variances)?;
    let mut table = Vec::new();
    let mut rows = Vec::new();
    for (c, (est, par)) in keys.iter().enumerate() {
        let se = (!res.se[c].is_nan()).then_some(res.se[c]);
        table.push(vec![
            est.clone(),
            par.clone(),
            sig6(res.point[c]),
            se.map_or(String::new(), sig6),
            sig6(res.between[c]),
            if res.df[c].is_infinite() { "Inf".into() } else { sig6(res.df[c]) },
        ]);
        rows.push(ParamRow { estimator: est.clone(), parameter: par.clone(), estimate: res.point[c], se });
    }
    let mut report = format!("Rubin combination of {} fits\n", res.m);
    report.push_str(&aligned(&["estimator", "parameter", "estimate", "se", "between", "df"], &table));
    if let Some(p) = &a.output {
        write_csv(p, &rows)?;
    }
    Ok(report)
}

pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Combine(a) => cmd_combine(a),
    }
}
