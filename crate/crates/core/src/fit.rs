//! Fitted-model container and the shared θ optimization driver.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::boxmin::{minimize, BoxProblem};
use crate::error::{Error, Result};
use crate::lmm::{theta_to_v, ThetaParam};
use crate::reference::WeightScaling;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Ml,
    Pairwise,
    Stagewise(WeightScaling),
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Ml => "ml",
            Estimator::Pairwise => "pairwise",
            Estimator::Stagewise(WeightScaling::Unscaled) => "stagewise-unscaled",
            Estimator::Stagewise(WeightScaling::ClusterSize(_)) => "stagewise-size",
            Estimator::Stagewise(WeightScaling::Gk) => "stagewise-gk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Initial trust-region radius for θ.
    pub rho_begin: f64,
    pub rho_end: f64,
    /// Defaults to `500 ×` the number of θ entries.
    pub max_evals: Option<usize>,
    /// Starting θ values; each estimator has its own default.
    pub start: Option<Vec<f64>>,
    /// Retry once from a perturbed start after a failed or truncated run.
    pub restart: bool,
    /// A diagonal entry of L at or below this marks a boundary fit.
    pub boundary_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { rho_begin: 0.2, rho_end: 1e-6, max_evals: None, start: None, restart: true, boundary_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: Estimator,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub theta: ThetaParam,
    /// `σ̂² V(θ̂)`.
    pub v_hat: DMatrix<f64>,
    pub deviance: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Pair count and `N̂_P`; zero for the likelihood-based estimators.
    pub n_pairs: usize,
    pub n_hat_p: f64,
    pub singletons_dropped: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub restarted: bool,
    pub boundary: bool,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
}

impl FitResult {
    pub fn v_relative(&self) -> DMatrix<f64> {
        theta_to_v(&self.theta)
    }

    /// Names of the `q(q+1)/2` variance components in lower-triangle
    /// column-major order.
    pub fn variance_names(&self) -> Vec<String> {
        variance_names(&self.random_names)
    }

    /// β̂, then σ̂², then the lower triangle of `V̂`.
    pub fn parameters(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.fixed_names.iter().cloned().zip(self.beta.iter().copied()).collect();
        out.push(("sigma2".into(), self.sigma2));
        let q = self.v_hat.nrows();
        let names = self.variance_names();
        let mut n = 0;
        for c in 0..q {
            for r in c..q {
                out.push((names[n].clone(), self.v_hat[(r, c)]));
                n += 1;
            }
        }
        out
    }

    pub fn parameter_values(&self) -> Vec<f64> {
        self.parameters().into_iter().map(|(_, v)| v).collect()
    }
}

pub fn variance_names(random: &[String]) -> Vec<String> {
    let q = random.len();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for c in 0..q {
        for r in c..q {
            if r == c {
                out.push(format!("var({})", random[r]));
            } else {
                out.push(format!("cov({},{})", random[c], random[r]));
            }
        }
    }
    out
}

pub(crate) struct ThetaFit {
    pub theta: ThetaParam,
    pub evaluations: usize,
    pub converged: bool,
    pub restarted: bool,
}

fn clamp_start(template: &ThetaParam, start: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = template.bounds();
    if start.len() != lo.len() {
        return Err(Error::InvalidArgument(format!("start has {} entries, expected {}", start.len(), lo.len())));
    }
    Ok(start.iter().zip(lo.iter().zip(&hi)).map(|(s, (l, h))| s.clamp(*l, *h)).collect())
}

/// Minimize `f` over the θ box, restarting once from `start + 0.1` on the
/// diagonal when the first run fails or exhausts its budget.
pub(crate) fn optimize_theta<F>(template: &ThetaParam, start: &[f64], opts: &FitOptions, mut f: F) -> Result<ThetaFit>
where
    F: FnMut(&ThetaParam) -> Result<f64>,
{
    let (lo, hi) = template.bounds();
    let d = lo.len();
    let max_evals = opts.max_evals.unwrap_or(500 * d);
    let start = clamp_start(template, start)?;
    // A failure at the start point is reported with its own cause.
    f(&template.with_values(&start)?)?;
    let mut run = |x0: Vec<f64>| {
        let objective = |x: &[f64]| match template.with_values(x) {
            Ok(t) => f(&t).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        let problem = BoxProblem::new(objective, lo.clone(), hi.clone(), x0)
            .with_radii(opts.rho_begin, opts.rho_end)
            .with_max_evals(max_evals);
        minimize(problem)
    };
    let first = run(start.clone());
    let needs_restart = !matches!(&first, Ok(r) if r.converged);
    if !opts.restart || !needs_restart {
        let r = first?;
        return Ok(ThetaFit {
            theta: template.with_values(&r.x)?,
            evaluations: r.evaluations,
            converged: r.converged,
            restarted: false,
        });
    }
    let mut perturbed = start;
    for (i, v) in perturbed.iter_mut().enumerate() {
        if template.is_diagonal(i) {
            *v = (*v + 0.1).min(hi[i]);
        }
    }
    let second = run(perturbed);
    let used = first.as_ref().map(|r| r.evaluations).unwrap_or(0) + second.as_ref().map(|r| r.evaluations).unwrap_or(0);
    let best = match (first, second) {
        (Ok(a), Ok(b)) => {
            if b.converged && (!a.converged || b.value <= a.value) || !a.converged && b.value < a.value {
                b
            } else {
                a
            }
        }
        (Ok(a), Err(_)) => a,
        (Err(_), Ok(b)) => b,
        (Err(_), Err(e)) => return Err(e),
    };
    Ok(ThetaFit {
        theta: template.with_values(&best.x)?,
        evaluations: used,
        converged: best.converged,
        restarted: true,
    })
}

/// Projected Newton refinement of a converged θ: analytic gradient,
/// finite-difference Hessian on the free coordinates, step halving. Diagonal
/// entries left within `boundary_tol` of zero are then set to zero when that
/// does not raise the objective. Any failure keeps the best point so far.
pub(crate) fn polish_theta<F, G>(theta: &ThetaParam, opts: &FitOptions, mut f: F, mut grad: G) -> ThetaParam
where
    F: FnMut(&ThetaParam) -> Result<f64>,
    G: FnMut(&ThetaParam) -> Result<Vec<f64>>,
{
    let (lo, hi) = theta.bounds();
    let d = lo.len();
    let mut x = theta.values().to_vec();
    let Ok(mut fx) = f(theta) else { return theta.clone() };
    let at = |x: &[f64]| theta.with_values(x);
    for _ in 0..POLISH_ITERATIONS {
        let Ok(g) = at(&x).and_then(|t| grad(&t)) else { break };
        let free: Vec<usize> =
            (0..d).filter(|&i| !(x[i] <= lo[i] && g[i] >= 0.0 || x[i] >= hi[i] && g[i] <= 0.0)).collect();
        if free.is_empty() {
            break;
        }
        let m = free.len();
        let mut h = DMatrix::zeros(m, m);
        let mut ok = true;
        for (a, &j) in free.iter().enumerate() {
            let step = 1e-6 * x[j].abs().max(1.0);
            let (up, down) = ((x[j] + step).min(hi[j]), (x[j] - step).max(lo[j]));
            let mut yu = x.clone();
            yu[j] = up;
            let mut yd = x.clone();
            yd[j] = down;
            match (at(&yu).and_then(|t| grad(&t)), at(&yd).and_then(|t| grad(&t))) {
                (Ok(gu), Ok(gd)) => {
                    for (b, &i) in free.iter().enumerate() {
                        h[(b, a)] = (gu[i] - gd[i]) / (up - down);
                    }
                }
                _ => ok = false,
            }
        }
        if !ok {
            break;
        }
        let h = (&h + h.transpose()) * 0.5;
        let Some(chol) = h.cholesky() else { break };
        let gf = DVector::from_iterator(m, free.iter().map(|&i| g[i]));
        let dir = -chol.solve(&gf);
        let mut t = 1.0;
        let mut moved = None;
        for _ in 0..12 {
            let mut y = x.clone();
            for (a, &i) in free.iter().enumerate() {
                y[i] = (x[i] + t * dir[a]).clamp(lo[i], hi[i]);
            }
            if let Ok(fy) = at(&y).and_then(|t| f(&t)) {
                if fy <= fx + 1e-12 * fx.abs() {
                    moved = Some((y, fy));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((y, fy)) = moved else { break };
        let size = y.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        x = y;
        fx = fy;
        if size <= 1e-12 * scale {
            break;
        }
    }
    for i in 0..d {
        if theta.is_diagonal(i) && x[i] > lo[i] && x[i] <= lo[i] + opts.boundary_tol {
            let mut y = x.clone();
            y[i] = lo[i];
            if let Ok(fy) = at(&y).and_then(|t| f(&t)) {
                if fy <= fx {
                    x = y;
                    fx = fy;
                }
            }
        }
    }
    at(&x).unwrap_or_else(|_| theta.clone())
}

const POLISH_ITERATIONS: usize = 20;

/// One-sided differences `f(θ ± h eᵢ) − f(θ)` along every coordinate
/// direction that stays inside the box.
pub fn one_sided_differences<F>(theta: &ThetaParam, h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&ThetaParam) -> Result<f64>,
{
    let (lo, hi) = theta.bounds();
    let base = f(theta)?;
    let x = theta.values().to_vec();
    let mut out = Vec::new();
    for i in 0..x.len() {
        for step in [h, -h] {
            let v = x[i] + step;
            if v < lo[i] || v > hi[i] {
                continue;
            }
            let mut y = x.clone();
            y[i] = v;
            out.push(f(&theta.with_values(&y)?)? - base);
        }
    }
    Ok(out)
}
