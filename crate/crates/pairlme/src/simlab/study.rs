//! Replicated simulation studies and their summary metrics.

use std::fmt::Write as _;

use pairlme_core::fit::{one_sided_differences, Estimator, FitOptions, FitResult};
use pairlme_core::inference::{bootstrap_fit, sandwich_beta, score_total, SandwichOptions};
use pairlme_core::pairs::PairSet;
use pairlme_core::pairwise::{fit_pairs, profile_deviance};
use pairlme_core::reference::{fit_ml, fit_stagewise, scale_weights, SizeTarget, WeightScaling, WeightedClusters};
use pairlme_core::sample::SurveySample;
use pairlme_core::stats::{mad, median};
use pairlme_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::population::{draw_sample, Population};
use super::scenario::SimScenario;

pub const ESTIMATORS: [Estimator; 5] = [
    Estimator::Ml,
    Estimator::Pairwise,
    Estimator::Stagewise(WeightScaling::ClusterSize(SizeTarget::Sample)),
    Estimator::Stagewise(WeightScaling::Gk),
    Estimator::Stagewise(WeightScaling::Unscaled),
];

pub const PARAMETERS: [&str; 6] = ["(Intercept)", "z", "x", "var((Intercept))", "var(z)", "sigma2"];

/// Fraction of failed fits above which an estimator is flagged.
pub const FAILURE_FLAG: f64 = 0.05;

/// Step for the one-sided optimality check on θ̂.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub fit: FitOptions,
    /// Sandwich standard errors for the pairwise β̂.
    pub sandwich: Option<SandwichOptions>,
    /// Rao–Wu bootstrap replicates for the pairwise fit.
    pub bootstrap: Option<usize>,
    /// Score-root and finite-difference checks on each pairwise fit.
    pub diagnostics: bool,
    /// Restrict to these estimators (all five when empty).
    pub estimators: Vec<Estimator>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            fit: FitOptions::default(),
            sandwich: None,
            bootstrap: None,
            diagnostics: false,
            estimators: ESTIMATORS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub values: [f64; 6],
    pub converged: bool,
    pub boundary: bool,
    /// `‖Σ w U‖∞ / max(1, Σ ‖w U‖∞)`, pairwise only.
    pub score_ratio: Option<f64>,
    /// Smallest one-sided difference of the profile deviance, pairwise only.
    pub min_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub index: usize,
    pub truth: Option<[f64; 6]>,
    /// One entry per studied estimator.
    pub fits: Vec<std::result::Result<FitSummary, String>>,
    /// Pairwise sandwich SEs for the three coefficients.
    pub sandwich_se: Option<[f64; 3]>,
    /// Pairwise bootstrap SEs for the six parameters.
    pub bootstrap_se: Option<std::result::Result<[f64; 6], String>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub bias100: f64,
    pub se100: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub estimators: Vec<Estimator>,
    pub parameters: Vec<String>,
    /// `cells[e][k]`; `None` with fewer than two successful replicates.
    pub cells: Vec<Vec<Option<Metric>>>,
    pub succeeded: Vec<usize>,
    pub failed: Vec<usize>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub scenario: SimScenario,
    pub options: StudyOptions,
    pub records: Vec<ReplicateRecord>,
    pub metrics: MetricsTable,
}

pub fn six_parameters(fit: &FitResult) -> Result<[f64; 6]> {
    let params = fit.parameters();
    let mut out = [0.0; 6];
    for (k, name) in PARAMETERS.iter().enumerate() {
        out[k] = params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("fit has no parameter `{name}`")))?;
    }
    Ok(out)
}

/// Generator for replicate `r`: the scenario seed on stream `r`.
pub fn replicate_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

fn bootstrap_seed(seed: u64, r: usize) -> u64 {
    (seed ^ 0x5151_5151_5151_5151).wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn fit_one(
    est: Estimator,
    sample: &SurveySample,
    pairs: Option<&PairSet>,
    ml: Option<&FitResult>,
    opts: &FitOptions,
) -> Result<FitResult> {
    match est {
        Estimator::Ml => fit_ml(sample, opts),
        Estimator::Stagewise(s) => fit_stagewise(sample, s, opts),
        Estimator::Pairwise => {
            let pairs = pairs.ok_or(Error::NoPairs)?;
            let start = match (&opts.start, ml) {
                (Some(s), _) => s.clone(),
                (None, Some(m)) => m.theta.values().to_vec(),
                (None, None) => pairlme_core::pairwise::pairwise_start(sample, opts),
            };
            fit_pairs(pairs, sample, &start, opts)
        }
    }
}

/// Smallest change of the fitted objective over steps of `FD_STEP` from θ̂
/// along each coordinate direction that stays inside the box.
pub fn min_one_sided_difference(
    fit: &FitResult,
    sample: &SurveySample,
    pairs: Option<&PairSet>,
) -> Result<Option<f64>> {
    let d = match fit.estimator {
        Estimator::Pairwise => {
            let pairs = pairs.ok_or(Error::NoPairs)?;
            one_sided_differences(&fit.theta, FD_STEP, |t| profile_deviance(pairs, t))?
        }
        Estimator::Ml => {
            let wc = WeightedClusters::unweighted(sample);
            one_sided_differences(&fit.theta, FD_STEP, |t| wc.profile(t).map(|p| p.deviance))?
        }
        Estimator::Stagewise(s) => {
            let wc = WeightedClusters::new(sample, &scale_weights(sample, s)?);
            one_sided_differences(&fit.theta, FD_STEP, |t| wc.profile(t).map(|p| p.deviance))?
        }
    };
    Ok(d.into_iter().reduce(f64::min))
}

/// Simulate one replicate: population, truth, sample, and every fit.
pub fn run_replicate(sc: &SimScenario, opts: &StudyOptions, r: usize) -> ReplicateRecord {
    let mut rng = replicate_rng(sc.seed, r);
    let n_est = opts.estimators.len();
    let fail_all = |msg: String| ReplicateRecord {
        index: r,
        truth: None,
        fits: vec![Err(msg); n_est],
        sandwich_se: None,
        bootstrap_se: None,
    };
    let pop = match Population::generate(sc, &mut rng) {
        Ok(p) => p,
        Err(e) => return fail_all(format!("population: {e}")),
    };
    let truth = match pop.truth(&opts.fit).and_then(|t| six_parameters(&t)) {
        Ok(t) => t,
        Err(e) => return fail_all(format!("population truth: {e}")),
    };
    let drawn = draw_sample(&pop, sc, &mut rng);
    let sample = match drawn.survey_sample(sc) {
        Ok(s) => s,
        Err(e) => {
            let mut rec = fail_all(format!("sample: {e}"));
            rec.truth = Some(truth);
            return rec;
        }
    };
    let pairs = PairSet::enumerate(&sample).ok();
    let ml = if opts.estimators.contains(&Estimator::Pairwise) { fit_ml(&sample, &opts.fit).ok() } else { None };
    let mut rec =
        ReplicateRecord { index: r, truth: Some(truth), fits: Vec::new(), sandwich_se: None, bootstrap_se: None };
    for &est in &opts.estimators {
        let fitted = match (est, &ml) {
            (Estimator::Ml, Some(m)) => Ok(m.clone()),
            _ => fit_one(est, &sample, pairs.as_ref(), ml.as_ref(), &opts.fit),
        };
        let summary = fitted.and_then(|fit| {
            let mut s = FitSummary {
                values: six_parameters(&fit)?,
                converged: fit.converged,
                boundary: fit.boundary,
                score_ratio: None,
                min_difference: None,
            };
            if opts.diagnostics {
                s.min_difference = min_one_sided_difference(&fit, &sample, pairs.as_ref())?;
            }
            if est == Estimator::Pairwise {
                let pairs = pairs.as_ref().ok_or(Error::NoPairs)?;
                if opts.diagnostics {
                    let (total, scale) = score_total(&fit, pairs)?;
                    s.score_ratio = Some(total.amax() / scale.max(1.0));
                }
                if let Some(so) = &opts.sandwich {
                    let sw = sandwich_beta(&fit, pairs, so)?;
                    rec.sandwich_se = Some([sw.se[0], sw.se[1], sw.se[2]]);
                }
                if let Some(b) = opts.bootstrap {
                    let boot =
                        bootstrap_fit(&fit, &sample, pairs, b, bootstrap_seed(sc.seed, r), &opts.fit).and_then(|set| {
                            let names: Vec<String> = set.names.clone();
                            let mut se = [0.0; 6];
                            for (k, name) in PARAMETERS.iter().enumerate() {
                                let c = names.iter().position(|n| n == name).ok_or(Error::NoPairs)?;
                                se[k] = set.se[c];
                            }
                            Ok(se)
                        });
                    rec.bootstrap_se = Some(boot.map_err(|e| e.to_string()));
                }
            }
            Ok(s)
        });
        rec.fits.push(summary.map_err(|e| e.to_string()));
    }
    rec
}

pub fn run_study(sc: &SimScenario, opts: &StudyOptions) -> Result<StudyResult> {
    sc.validate()?;
    if opts.estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators selected".into()));
    }
    let records: Vec<ReplicateRecord> =
        (0..sc.replicates).into_par_iter().map(|r| run_replicate(sc, opts, r)).collect();
    let metrics = MetricsTable::from_records(&opts.estimators, &records);
    Ok(StudyResult { scenario: sc.clone(), options: opts.clone(), records, metrics })
}

/// Estimate-minus-truth values of parameter `k` for estimator `e` over the
/// successful replicates.
pub fn errors_for(records: &[ReplicateRecord], e: usize, k: usize) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| match (&r.truth, &r.fits[e]) {
            (Some(t), Ok(f)) => Some(f.values[k] - t[k]),
            _ => None,
        })
        .collect()
}

impl MetricsTable {
    pub fn from_records(estimators: &[Estimator], records: &[ReplicateRecord]) -> Self {
        let mut cells = Vec::new();
        let mut succeeded = Vec::new();
        let mut failed = Vec::new();
        for e in 0..estimators.len() {
            let ok = records.iter().filter(|r| r.truth.is_some() && r.fits[e].is_ok()).count();
            succeeded.push(ok);
            failed.push(records.len() - ok);
            cells.push(
                (0..PARAMETERS.len())
                    .map(|k| {
                        let d = errors_for(records, e, k);
                        (d.len() >= 2).then(|| Metric { bias100: 100.0 * median(&d), se100: 100.0 * mad(&d) })
                    })
                    .collect(),
            );
        }
        MetricsTable {
            estimators: estimators.to_vec(),
            parameters: PARAMETERS.iter().map(|s| s.to_string()).collect(),
            cells,
            succeeded,
            failed,
            replicates: records.len(),
        }
    }

    pub fn index_of(&self, est: Estimator) -> Option<usize> {
        self.estimators.iter().position(|e| *e == est)
    }

    pub fn get(&self, est: Estimator, parameter: &str) -> Option<Metric> {
        let e = self.index_of(est)?;
        let k = self.parameters.iter().position(|p| p == parameter)?;
        self.cells[e][k]
    }

    pub fn flagged(&self, e: usize) -> bool {
        self.failed[e] as f64 > FAILURE_FLAG * self.replicates as f64
    }

    /// Aligned text table in the layout of the published tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = 12;
        let _ = write!(out, "{:<14}", "");
        for p in &self.parameters {
            let _ = write!(out, "{:>width$}", short_name(p));
        }
        out.push('\n');
        for (e, est) in self.estimators.iter().enumerate() {
            let _ = write!(out, "{} ({} ok, {} failed)", est.label(), self.succeeded[e], self.failed[e]);
            if self.flagged(e) {
                out.push_str("  [FLAGGED: failure rate above 5%]");
            }
            out.push('\n');
            for (label, pick) in [("  Bias x 100", 0), ("  SE x 100", 1)] {
                let _ = write!(out, "{label:<14}");
                for cell in &self.cells[e] {
                    match cell {
                        Some(m) => {
                            let v = if pick == 0 { m.bias100 } else { m.se100 };
                            let _ = write!(out, "{v:>width$.1}");
                        }
                        None => {
                            let _ = write!(out, "{:>width$}", "NA");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// One row per estimator, parameter and statistic, at full precision.
    pub fn csv_rows(&self) -> Vec<[String; 4]> {
        let mut rows = Vec::new();
        for (e, est) in self.estimators.iter().enumerate() {
            for (k, p) in self.parameters.iter().enumerate() {
                let (b, s) = match self.cells[e][k] {
                    Some(m) => (m.bias100.to_string(), m.se100.to_string()),
                    None => ("NA".into(), "NA".into()),
                };
                rows.push([est.label().into(), p.clone(), "bias100".into(), b]);
                rows.push([est.label().into(), p.clone(), "se100".into(), s]);
            }
        }
        rows
    }
}

fn short_name(p: &str) -> &str {
    match p {
        "var((Intercept))" => "var(b0)",
        "var(z)" => "var(bz)",
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimScenario {
        SimScenario { strata: 4, stratum_size: 200, replicates: 6, seed: 7, ..SimScenario::default() }
    }

    #[test]
    fn study_shape_and_determinism() {
        let sc = tiny();
        let a = run_study(&sc, &StudyOptions::default()).unwrap();
        assert_eq!(a.metrics.cells.len(), 5);
        assert!(a.metrics.cells.iter().all(|row| row.len() == 6 && row.iter().all(|c| c.is_some())));
        assert_eq!(a.metrics.csv_rows().len(), 60);
        let b = run_study(&sc, &StudyOptions::default()).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn metrics_ignore_replicate_order() {
        let sc = tiny();
        let res = run_study(&sc, &StudyOptions::default()).unwrap();
        let mut rev = res.records.clone();
        rev.reverse();
        assert_eq!(MetricsTable::from_records(&ESTIMATORS, &rev), res.metrics);
    }

    #[test]
    fn failures_are_counted_and_flagged() {
        let sc = tiny();
        let mut res = run_study(&sc, &StudyOptions::default()).unwrap();
        res.records[0].fits[1] = Err("boom".into());
        let m = MetricsTable::from_records(&ESTIMATORS, &res.records);
        assert_eq!(m.failed[1], 1);
        assert!(m.flagged(1) && !m.flagged(0));
        assert!(m.to_text().contains("FLAGGED"));
    }

    #[test]
    fn replicate_records_carry_diagnostics() {
        let sc = tiny();
        let opts = StudyOptions {
            sandwich: Some(SandwichOptions::default()),
            diagnostics: true,
            estimators: vec![Estimator::Pairwise],
            ..StudyOptions::default()
        };
        let rec = run_replicate(&sc, &opts, 0);
        let f = rec.fits[0].as_ref().unwrap();
        assert!(f.score_ratio.unwrap() < 1e-8);
        assert!(f.min_difference.unwrap() >= -1e-4);
        assert!(rec.sandwich_se.unwrap().iter().all(|s| *s > 0.0));
    }
}
