//! Sandwich variance for β̂, replicate-weight bootstrap, and Rubin's rules.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitResult};
use crate::math::sqrt;
use crate::pairs::PairSet;
use crate::pairwise::{fit_pairs, kernel_at, pair_residual};
use crate::sample::SurveySample;

/// Pair weights inside the sensitivity matrix Ĥ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityWeights {
    /// `1/π_{i,jk}`, the weights of the estimating equation.
    #[default]
    Joint,
    /// `1/(π_ij π_ik)`.
    Product,
}

/// Pair weights on the scores inside the PSU totals of Ĵ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreWeights {
    /// `1/π_{i,jk}`, the weights of the estimating equation.
    #[default]
    Joint,
    /// `1/(π_i π_{j|i} π_{k|i})`.
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SandwichOptions {
    pub sensitivity: SensitivityWeights,
    pub scores: ScoreWeights,
    /// Center PSU totals at their stratum mean.
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichPieces {
    pub h_hat: DMatrix<f64>,
    pub j_hat: DMatrix<f64>,
    pub var_beta: DMatrix<f64>,
    pub se: DVector<f64>,
    /// First-stage units minus strata.
    pub df: usize,
}

/// PSUs of a sample, grouped by stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct PsuLayout {
    pub psus: Vec<u32>,
    pub psu_stratum: Vec<u32>,
    /// PSU indices per stratum.
    pub strata: BTreeMap<u32, Vec<usize>>,
    /// PSU index of every group.
    pub group_psu: Vec<usize>,
}

impl PsuLayout {
    pub fn new(pairs: &PairSet) -> Self {
        let mut psus: Vec<(u32, u32)> =
            pairs.group_psu.iter().copied().zip(pairs.group_stratum.iter().copied()).collect();
        psus.sort_unstable();
        psus.dedup();
        let index: BTreeMap<u32, usize> = psus.iter().enumerate().map(|(i, (p, _))| (*p, i)).collect();
        let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, (_, h)) in psus.iter().enumerate() {
            strata.entry(*h).or_default().push(i);
        }
        PsuLayout {
            group_psu: pairs.group_psu.iter().map(|p| index[p]).collect(),
            psu_stratum: psus.iter().map(|(_, h)| *h).collect(),
            psus: psus.into_iter().map(|(p, _)| p).collect(),
            strata,
        }
    }

    pub fn require_two_per_stratum(&self) -> Result<()> {
        for (h, members) in &self.strata {
            if members.len() < 2 {
                return Err(Error::SinglePsuStratum { stratum: *h });
            }
        }
        Ok(())
    }

    pub fn df(&self) -> usize {
        self.psus.len() - self.strata.len()
    }
}

/// `U = (1/σ̂²) XᵀΞ⁻¹(Y − Xβ̂)` for pair `t`.
pub fn pair_score_beta(fit: &FitResult, pairs: &PairSet, t: usize) -> Result<DVector<f64>> {
    let q = pairs.q();
    let l = fit.theta.lower_factor();
    let (mut u, mut w) = (vec![0.0; q], vec![0.0; q]);
    let kern = kernel_at(pairs, &l, t, &mut u, &mut w)?;
    let r = pair_residual(pairs, t, &fit.beta);
    let (xj, xk) = pairs.x_pair(t);
    let ir = [kern.inv.a * r[0] + kern.inv.b * r[1], kern.inv.b * r[0] + kern.inv.d * r[1]];
    Ok(DVector::from_fn(pairs.p(), |c, _| (xj[c] * ir[0] + xk[c] * ir[1]) / fit.sigma2))
}

/// `Σ w U` over all pairs, plus `Σ ‖w U‖∞` as a scale reference.
pub fn score_total(fit: &FitResult, pairs: &PairSet) -> Result<(DVector<f64>, f64)> {
    let mut total = DVector::zeros(pairs.p());
    let mut scale = 0.0;
    for t in 0..pairs.len() {
        let u = pair_score_beta(fit, pairs, t)? * pairs.weight[t];
        scale += u.amax();
        total += u;
    }
    Ok((total, scale))
}

/// `Ĥ⁻¹ Ĵ Ĥ⁻¹` with Ĵ built from stratified PSU totals of weighted scores.
pub fn sandwich_beta(fit: &FitResult, pairs: &PairSet, opts: &SandwichOptions) -> Result<SandwichPieces> {
    let layout = PsuLayout::new(pairs);
    layout.require_two_per_stratum()?;
    let p = pairs.p();
    let q = pairs.q();
    let l = fit.theta.lower_factor();
    let (mut u, mut w) = (vec![0.0; q], vec![0.0; q]);
    let mut h = DMatrix::zeros(p, p);
    let mut totals = vec![DVector::<f64>::zeros(p); layout.psus.len()];
    let s2 = fit.sigma2;
    for t in 0..pairs.len() {
        let kern = kernel_at(pairs, &l, t, &mut u, &mut w)?;
        let inv = kern.inv;
        let (xj, xk) = pairs.x_pair(t);
        let hw = match opts.sensitivity {
            SensitivityWeights::Joint => pairs.weight[t],
            SensitivityWeights::Product => pairs.product_weight[t],
        };
        for a in 0..p {
            let ia = [inv.a * xj[a] + inv.b * xk[a], inv.b * xj[a] + inv.d * xk[a]];
            for b in 0..p {
                h[(a, b)] += hw * (ia[0] * xj[b] + ia[1] * xk[b]) / s2;
            }
        }
        let r = pair_residual(pairs, t, &fit.beta);
        let ir = [inv.a * r[0] + inv.b * r[1], inv.b * r[0] + inv.d * r[1]];
        let sw = match opts.scores {
            ScoreWeights::Product => pairs.score_weight[t],
            ScoreWeights::Joint => pairs.weight[t],
        };
        let tot = &mut totals[layout.group_psu[pairs.group[t]]];
        for a in 0..p {
            tot[a] += sw * (xj[a] * ir[0] + xk[a] * ir[1]) / s2;
        }
    }
    let mut j = DMatrix::zeros(p, p);
    for members in layout.strata.values() {
        let n = members.len() as f64;
        let mean = if opts.center {
            members.iter().fold(DVector::zeros(p), |acc, &i| acc + &totals[i]) / n
        } else {
            DVector::zeros(p)
        };
        let mut part = DMatrix::zeros(p, p);
        for &i in members {
            let d = &totals[i] - &mean;
            part += &d * d.transpose();
        }
        j += part * (n / (n - 1.0));
    }
    let h_inv = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Optimizer("sensitivity matrix is not positive definite".into()))?
        .inverse();
    let var = &h_inv * &j * &h_inv;
    let var = (&var + var.transpose()) * 0.5;
    let se = DVector::from_fn(p, |i, _| sqrt(var[(i, i)].max(0.0)));
    Ok(SandwichPieces { h_hat: h, j_hat: j, var_beta: var, se, df: layout.df() })
}

/// Rao–Wu multipliers for replicate `r`: within each stratum draw `n_h − 1`
/// PSUs with replacement; a PSU drawn `c` times gets `c n_h/(n_h − 1)`.
pub fn rao_wu_multipliers(layout: &PsuLayout, seed: u64, r: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    let mut mult = vec![0.0; layout.psus.len()];
    for members in layout.strata.values() {
        let n = members.len();
        if n < 2 {
            for &i in members {
                mult[i] = 1.0;
            }
            continue;
        }
        let f = n as f64 / (n as f64 - 1.0);
        for _ in 0..n - 1 {
            mult[members[rng.random_range(0..n)]] += f;
        }
    }
    mult
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    pub names: Vec<String>,
    /// One row per successful replicate.
    pub estimates: Vec<Vec<f64>>,
    /// PSU multipliers of the successful replicates.
    pub multipliers: Vec<Vec<f64>>,
    pub failed: usize,
    pub requested: usize,
    pub variance: Vec<f64>,
    pub se: Vec<f64>,
}

/// Refit one bootstrap replicate. Returns the PSU multipliers and the
/// replicate's parameter vector.
pub fn bootstrap_replicate(
    fit: &FitResult,
    sample: &SurveySample,
    pairs: &PairSet,
    layout: &PsuLayout,
    seed: u64,
    r: u64,
    opts: &FitOptions,
) -> (Vec<f64>, Result<Vec<f64>>) {
    let mult = rao_wu_multipliers(layout, seed, r);
    let group_mult: Vec<f64> = layout.group_psu.iter().map(|&i| mult[i]).collect();
    let res = pairs.with_group_multipliers(&group_mult).and_then(|rp| {
        let f = fit_pairs(&rp, sample, fit.theta.values(), opts)?;
        Ok(f.parameter_values())
    });
    (mult, res)
}

/// Collect replicate outcomes; fails when more than 10% of them failed.
pub fn summarize_replicates(names: Vec<String>, outcomes: Vec<(Vec<f64>, Result<Vec<f64>>)>) -> Result<ReplicateSet> {
    let requested = outcomes.len();
    let mut estimates = Vec::new();
    let mut multipliers = Vec::new();
    for (m, res) in outcomes {
        if let Ok(e) = res {
            estimates.push(e);
            multipliers.push(m);
        }
    }
    let failed = requested - estimates.len();
    if failed * 10 > requested || estimates.len() < 2 {
        return Err(Error::BootstrapFailures { failed, total: requested });
    }
    let k = names.len();
    let n = estimates.len() as f64;
    let mut variance = vec![0.0; k];
    for c in 0..k {
        let mean = estimates.iter().map(|e| e[c]).sum::<f64>() / n;
        variance[c] = estimates.iter().map(|e| (e[c] - mean) * (e[c] - mean)).sum::<f64>() / (n - 1.0);
    }
    let se = variance.iter().map(|v| sqrt(*v)).collect();
    Ok(ReplicateSet { names, estimates, multipliers, failed, requested, variance, se })
}

/// Sequential bootstrap over `replicates` Rao–Wu replicates.
pub fn bootstrap_fit(
    fit: &FitResult,
    sample: &SurveySample,
    pairs: &PairSet,
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<ReplicateSet> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("at least two bootstrap replicates are needed".into()));
    }
    let layout = PsuLayout::new(pairs);
    layout.require_two_per_stratum()?;
    let outcomes =
        (0..replicates as u64).map(|r| bootstrap_replicate(fit, sample, pairs, &layout, seed, r, opts)).collect();
    let names = fit.parameters().into_iter().map(|(n, _)| n).collect();
    summarize_replicates(names, outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RubinResult {
    pub point: Vec<f64>,
    pub within: Vec<f64>,
    pub between: Vec<f64>,
    pub total: Vec<f64>,
    pub se: Vec<f64>,
    /// Infinite when the between-imputation variance is zero.
    pub df: Vec<f64>,
    pub m: usize,
    /// Single input passed through unchanged.
    pub pass_through: bool,
}

/// Combine `M` point estimates and their variances by Rubin's rules.
pub fn rubin_combine(estimates: &[Vec<f64>], variances: &[Vec<f64>]) -> Result<RubinResult> {
    let m = estimates.len();
    if m == 0 || variances.len() != m {
        return Err(Error::InvalidArgument("need matching estimate and variance sets".into()));
    }
    let k = estimates[0].len();
    if estimates.iter().chain(variances).any(|v| v.len() != k) {
        return Err(Error::InvalidArgument("parameter sets differ in length".into()));
    }
    if m == 1 {
        return Ok(RubinResult {
            point: estimates[0].clone(),
            within: variances[0].clone(),
            between: vec![0.0; k],
            total: variances[0].clone(),
            se: variances[0].iter().map(|v| sqrt(*v)).collect(),
            df: vec![f64::INFINITY; k],
            m,
            pass_through: true,
        });
    }
    let mf = m as f64;
    let mut out = RubinResult {
        point: vec![0.0; k],
        within: vec![0.0; k],
        between: vec![0.0; k],
        total: vec![0.0; k],
        se: vec![0.0; k],
        df: vec![0.0; k],
        m,
        pass_through: false,
    };
    for c in 0..k {
        let q = estimates.iter().map(|e| e[c]).sum::<f64>() / mf;
        let w = variances.iter().map(|v| v[c]).sum::<f64>() / mf;
        let b = estimates.iter().map(|e| (e[c] - q) * (e[c] - q)).sum::<f64>() / (mf - 1.0);
        let inflated = (1.0 + 1.0 / mf) * b;
        let t = w + inflated;
        out.point[c] = q;
        out.within[c] = w;
        out.between[c] = b;
        out.total[c] = t;
        out.se[c] = sqrt(t);
        out.df[c] = if inflated > 0.0 {
            let ratio = 1.0 + w / inflated;
            (mf - 1.0) * ratio * ratio
        } else {
            f64::INFINITY
        };
    }
    Ok(out)
}
