//! Finite populations and stratified two-stage samples drawn from them.

use nalgebra::{DMatrix, DVector, Matrix2};
use pairlme_core::design::SurveyDesign;
use pairlme_core::fit::{FitOptions, FitResult};
use pairlme_core::formula::parse_formula;
use pairlme_core::reference::fit_ml;
use pairlme_core::sample::{Frame, GroupData, SurveySample};
use pairlme_core::stats::median;
use pairlme_core::Result;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::scenario::{Informative, SimScenario, SizeRule, XDist};

#[derive(Debug, Clone, PartialEq)]
pub struct PopCluster {
    pub key: u32,
    pub stratum: u32,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    /// Realized `(b0, bz)`.
    pub b: [f64; 2],
    /// Sample variance of the realized residuals.
    pub eps_var: f64,
    /// Within-cluster sample size assigned by the scenario's rule.
    pub n_sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub clusters: Vec<PopCluster>,
    pub independent: bool,
}

/// Sampled observations in long format with their design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    pub frame: Frame,
    pub design: SurveyDesign,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl Population {
    pub fn generate<R: Rng + ?Sized>(sc: &SimScenario, rng: &mut R) -> Result<Self> {
        sc.validate()?;
        let gamma = Gamma::new(2.0, 1.0).expect("valid gamma parameters");
        let chol = cov_factor(&(sc.v * sc.sigma2));
        let sigma = sc.sigma2.sqrt();
        let per_stratum = sc.clusters_in_stratum();
        let m = sc.cluster_size;
        let mut clusters = Vec::with_capacity(sc.strata * per_stratum);
        for h in 0..sc.strata {
            for _ in 0..per_stratum {
                let (u0, u1) = (normal(rng), normal(rng));
                let b = [chol[(0, 0)] * u0, chol[(1, 0)] * u0 + chol[(1, 1)] * u1];
                let shift = match sc.x_dist {
                    XDist::ClusterCorrelated => normal(rng),
                    _ => 0.0,
                };
                let mut x = Vec::with_capacity(m);
                let mut z = Vec::with_capacity(m);
                let mut eps = Vec::with_capacity(m);
                for _ in 0..m {
                    let xv = match sc.x_dist {
                        XDist::Normal => normal(rng),
                        XDist::Mixture => (rng.random_range(0..3) + 1) as f64 * normal(rng),
                        XDist::ClusterCorrelated => shift + normal(rng),
                    };
                    x.push(xv);
                    z.push(gamma.sample(rng));
                    eps.push(sigma * normal(rng));
                }
                let y = (0..m)
                    .map(|j| sc.beta[0] + sc.beta[1] * z[j] + sc.beta[2] * x[j] + b[0] + b[1] * z[j] + eps[j])
                    .collect();
                let mean = eps.iter().sum::<f64>() / m as f64;
                let eps_var =
                    if m > 1 { eps.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1) as f64 } else { 0.0 };
                clusters.push(PopCluster {
                    key: clusters.len() as u32,
                    stratum: h as u32,
                    x,
                    z,
                    y,
                    b,
                    eps_var,
                    n_sample: 0,
                });
            }
        }
        assign_sizes(&mut clusters, sc.rule, rng);
        Ok(Population { clusters, independent: sc.independent })
    }

    pub fn n_units(&self) -> usize {
        self.clusters.iter().map(|c| c.y.len()).sum()
    }

    /// The whole population as a census sample.
    pub fn census(&self) -> Result<SurveySample> {
        let groups = self
            .clusters
            .iter()
            .map(|c| {
                let m = c.y.len();
                GroupData {
                    key: c.key,
                    psu: c.key,
                    stratum: c.stratum,
                    y: DVector::from_column_slice(&c.y),
                    x: DMatrix::from_fn(m, 3, |r, k| match k {
                        0 => 1.0,
                        1 => c.z[r],
                        _ => c.x[r],
                    }),
                    z: DMatrix::from_fn(m, 2, |r, k| if k == 0 { 1.0 } else { c.z[r] }),
                    pi: 1.0,
                    pi_cond: vec![1.0; m],
                    pair_cond: vec![1.0; m * (m - 1) / 2],
                    pop_size: Some(m as f64),
                }
            })
            .collect();
        let fixed = vec!["(Intercept)".to_string(), "z".to_string(), "x".to_string()];
        let random = vec!["(Intercept)".to_string(), "z".to_string()];
        let blocks = if self.independent { vec![1, 1] } else { vec![2] };
        SurveySample::from_groups(groups, fixed, random, blocks)
    }

    /// Finite-population truth: the ML fit to the census.
    pub fn truth(&self, opts: &FitOptions) -> Result<FitResult> {
        fit_ml(&self.census()?, opts)
    }
}

/// Lower Cholesky factor of a PSD 2×2 matrix, tolerating singular `V`.
fn cov_factor(v: &Matrix2<f64>) -> Matrix2<f64> {
    let l00 = v[(0, 0)].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { v[(1, 0)] / l00 } else { 0.0 };
    let l11 = (v[(1, 1)] - l10 * l10).max(0.0).sqrt();
    Matrix2::new(l00, 0.0, l10, l11)
}

fn assign_sizes<R: Rng + ?Sized>(clusters: &mut [PopCluster], rule: SizeRule, rng: &mut R) {
    let by = match rule {
        SizeRule::Fixed(n) => {
            clusters.iter_mut().for_each(|c| c.n_sample = n);
            return;
        }
        SizeRule::TwoOrSix(by) => by,
    };
    let stat = |c: &PopCluster| match by {
        Informative::VarEps => c.eps_var,
        Informative::AbsB => c.b[1].abs(),
        _ => c.b[1],
    };
    let cut = match by {
        Informative::None | Informative::SignB => 0.0,
        _ => median(&clusters.iter().map(stat).collect::<Vec<_>>()),
    };
    for c in clusters.iter_mut() {
        let large = match by {
            Informative::None => rng.random_bool(0.5),
            Informative::SignB => stat(c) >= cut,
            _ => stat(c) > cut,
        };
        c.n_sample = if large { 6 } else { 2 };
    }
}

pub fn generate_population<R: Rng + ?Sized>(sc: &SimScenario, rng: &mut R) -> Result<(Population, FitResult)> {
    let pop = Population::generate(sc, rng)?;
    let truth = pop.truth(&FitOptions::default())?;
    Ok((pop, truth))
}

/// SRS of clusters within each stratum, then SRS of each cluster's assigned
/// size within it. Probabilities are exact at both stages.
pub fn draw_sample<R: Rng + ?Sized>(pop: &Population, sc: &SimScenario, rng: &mut R) -> DrawnSample {
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); sc.strata];
    for (i, c) in pop.clusters.iter().enumerate() {
        by_stratum[c.stratum as usize].push(i);
    }
    let mut cols: [Vec<f64>; 3] = Default::default();
    let mut design = SurveyDesign { pop_cluster_size: Some(Vec::new()), ..SurveyDesign::default() };
    let mut ids = Vec::new();
    for members in &by_stratum {
        let k = sc.clusters_per_stratum.min(members.len());
        let p1 = k as f64 / members.len() as f64;
        let mut chosen: Vec<usize> = index::sample(rng, members.len(), k).into_iter().map(|i| members[i]).collect();
        chosen.sort_unstable();
        for ci in chosen {
            let c = &pop.clusters[ci];
            let big_n = c.y.len();
            let n = c.n_sample.min(big_n);
            let mut units: Vec<usize> = index::sample(rng, big_n, n).into_vec();
            units.sort_unstable();
            for j in units {
                cols[0].push(c.y[j]);
                cols[1].push(c.z[j]);
                cols[2].push(c.x[j]);
                ids.push(c.key as f64);
                design.stratum.push(c.stratum);
                design.psu.push(c.key);
                design.group.push(c.key);
                design.p_stage1.push(p1);
                design.p_stage2.push(n as f64 / big_n as f64);
                design.pop_cluster_size.as_mut().unwrap().push(big_n as f64);
            }
        }
    }
    let [y, z, x] = cols;
    let strata: Vec<f64> = design.stratum.iter().map(|&h| h as f64).collect();
    let frame = Frame::new()
        .with_column("y", y)
        .and_then(|f| f.with_column("z", z))
        .and_then(|f| f.with_column("x", x))
        .and_then(|f| f.with_column("id", ids))
        .and_then(|f| f.with_column("stratum", strata))
        .expect("distinct columns of equal length");
    DrawnSample { frame, design }
}

impl DrawnSample {
    pub fn survey_sample(&self, sc: &SimScenario) -> Result<SurveySample> {
        SurveySample::build(&parse_formula(sc.formula())?, &self.frame, &self.design)
    }
}
