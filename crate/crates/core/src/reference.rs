//! Naive maximum likelihood and the stagewise pseudolikelihood.
//!
//! Both maximize `Σᵢ gᵢ ℓᵢ` where `ℓᵢ` is the cluster loglikelihood with
//! observation weights `ω_j`:
//!
//! `ℓᵢ = −(Wᵢ/2) log(2πσ²) − ½ log|Mᵢ| − Qᵢ/(2σ²)`,
//!
//! with `Wᵢ = Σ ω_j`, `Mᵢ = I + LᵀZᵀΩZL`, `Qᵢ = rᵀΩr − cᵀMᵢ⁻¹c` and
//! `c = LᵀZᵀΩr`. ML is the case `g = ω = 1`. Everything reduces to per-cluster
//! cross products, so one evaluation costs `O(q³)` per cluster.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dense::{chol_in_place, chol_solve, solve_normal};
use crate::error::{Error, Result};
use crate::fit::{optimize_theta, Estimator, FitOptions, FitResult};
use crate::lmm::{theta_to_v, ThetaParam};
use crate::math::{ln, sqrt, LN_2PI};
use crate::sample::{GroupData, SurveySample};

/// Target for the cluster-size scaling of stage-2 weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeTarget {
    /// Scaled weights sum to the sampled cluster size.
    #[default]
    Sample,
    /// Scaled weights sum to the population cluster size.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScaling {
    Unscaled,
    ClusterSize(SizeTarget),
    Gk,
}

/// Per-cluster weights `gᵢ` and per-observation conditional weights `ω_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledWeights {
    pub group: Vec<f64>,
    pub cond: Vec<Vec<f64>>,
}

pub fn scale_weights(sample: &SurveySample, scaling: WeightScaling) -> Result<ScaledWeights> {
    let mut group = Vec::with_capacity(sample.groups.len());
    let mut cond = Vec::with_capacity(sample.groups.len());
    for g in &sample.groups {
        let wi = 1.0 / g.pi;
        let wc: Vec<f64> = g.pi_cond.iter().map(|p| 1.0 / p).collect();
        let total: f64 = wc.iter().sum();
        match scaling {
            WeightScaling::Unscaled => {
                group.push(wi);
                cond.push(wc);
            }
            WeightScaling::ClusterSize(target) => {
                let size = match target {
                    SizeTarget::Sample => g.m() as f64,
                    SizeTarget::Population => g.pop_size.ok_or_else(|| {
                        Error::InvalidArgument(alloc::format!(
                            "cluster-size scaling to the population size needs a population cluster size for group {}",
                            g.key
                        ))
                    })?,
                };
                group.push(wi);
                cond.push(wc.iter().map(|w| w * size / total).collect());
            }
            WeightScaling::Gk => {
                group.push(wi * total / g.m() as f64);
                cond.push(vec![1.0; g.m()]);
            }
        }
    }
    Ok(ScaledWeights { group, cond })
}

/// Offsets of the per-cluster cross products inside one flat record:
/// `g, W, XᵀΩX, XᵀΩZ, ZᵀΩZ, XᵀΩy, ZᵀΩy, yᵀΩy`, matrices row-major.
#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    q: usize,
    xwx: usize,
    xwz: usize,
    zwz: usize,
    xwy: usize,
    zwy: usize,
    ywy: usize,
    stride: usize,
}

impl Layout {
    fn new(p: usize, q: usize) -> Self {
        let xwx = 2;
        let xwz = xwx + p * p;
        let zwz = xwz + p * q;
        let xwy = zwz + q * q;
        let zwy = xwy + p;
        let ywy = zwy + q;
        Layout { p, q, xwx, xwz, zwz, xwy, zwy, ywy, stride: ywy + 1 }
    }

    fn push(&self, out: &mut Vec<f64>, gd: &GroupData, g: f64, w: &[f64]) {
        let (p, q) = (self.p, self.q);
        let base = out.len();
        out.resize(base + self.stride, 0.0);
        let s = &mut out[base..];
        s[0] = g;
        s[1] = w.iter().sum();
        for j in 0..gd.m() {
            let wj = w[j];
            let y = gd.y[j];
            for a in 0..p {
                let xa = wj * gd.x[(j, a)];
                for b in 0..p {
                    s[self.xwx + a * p + b] += xa * gd.x[(j, b)];
                }
                for b in 0..q {
                    s[self.xwz + a * q + b] += xa * gd.z[(j, b)];
                }
                s[self.xwy + a] += xa * y;
            }
            for a in 0..q {
                let za = wj * gd.z[(j, a)];
                for b in 0..q {
                    s[self.zwz + a * q + b] += za * gd.z[(j, b)];
                }
                s[self.zwy + a] += za * y;
            }
            s[self.ywy] += wj * y * y;
        }
    }
}

/// Clusters prepared for repeated profile evaluations.
#[derive(Debug, Clone)]
pub struct WeightedClusters {
    layout: Layout,
    stats: Vec<f64>,
    names: Vec<alloc::string::String>,
}

/// Profile quantities of the weighted cluster likelihood at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    /// `(Σ gW) log(2πσ̂²) + Σ g log|M|`; equals `−2 × loglik − Σ gW`.
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl WeightedClusters {
    pub fn new(sample: &SurveySample, weights: &ScaledWeights) -> Self {
        let layout = Layout::new(sample.p(), sample.q());
        let mut stats = Vec::with_capacity(layout.stride * sample.groups.len());
        for (gd, (g, w)) in sample.groups.iter().zip(weights.group.iter().zip(&weights.cond)) {
            layout.push(&mut stats, gd, *g, w);
        }
        WeightedClusters { layout, stats, names: sample.fixed_names.clone() }
    }

    pub fn unweighted(sample: &SurveySample) -> Self {
        let weights = ScaledWeights {
            group: vec![1.0; sample.groups.len()],
            cond: sample.groups.iter().map(|g| vec![1.0; g.m()]).collect(),
        };
        Self::new(sample, &weights)
    }

    /// Profile out β and σ² at θ.
    pub fn profile(&self, theta: &ThetaParam) -> Result<ClusterProfile> {
        let (p, q) = (self.layout.p, self.layout.q);
        let lm = theta.lower_factor();
        // Row-major copy of L.
        let l: Vec<f64> = (0..q * q).map(|i| lm[(i / q, i % q)]).collect();
        let mut acc = Totals { xpx: vec![0.0; p * p], xpy: vec![0.0; p], ypy: 0.0, logdet: 0.0, wtot: 0.0 };
        match q {
            1 => self.accumulate_fixed::<1>(&l, &mut acc)?,
            2 => self.accumulate_fixed::<2>(&l, &mut acc)?,
            3 => self.accumulate_fixed::<3>(&l, &mut acc)?,
            _ => self.accumulate(&l, &mut acc)?,
        }
        let Totals { xpx, xpy, ypy, logdet, wtot } = acc;
        let a = DMatrix::from_fn(p, p, |r, c| 0.5 * (xpx[r * p + c] + xpx[c * p + r]));
        let b = DVector::from_vec(xpy);
        let beta = solve_normal(&a, &b, &self.names)?;
        let qtot = ypy - b.dot(&beta);
        if !(qtot > 1e-13 * ypy.abs()) || !qtot.is_finite() {
            return Err(Error::DegenerateFit);
        }
        let sigma2 = qtot / wtot;
        Ok(ClusterProfile { deviance: wtot * (LN_2PI + ln(sigma2)) + logdet, beta, sigma2 })
    }
}

struct Totals {
    xpx: Vec<f64>,
    xpy: Vec<f64>,
    ypy: f64,
    logdet: f64,
    wtot: f64,
}

fn not_pd() -> Error {
    Error::Optimizer("cluster precision is not positive definite".into())
}

impl WeightedClusters {
    fn accumulate(&self, l: &[f64], acc: &mut Totals) -> Result<()> {
        let lay = self.layout;
        let (p, q) = (lay.p, lay.q);
        let mut t = vec![0.0; q * q];
        let mut m = vec![0.0; q * q];
        let mut ax = vec![0.0; p * q];
        let mut sx = vec![0.0; p * q];
        let mut ay = vec![0.0; q];
        let mut sy = vec![0.0; q];
        for s in self.stats.chunks_exact(lay.stride) {
            let zwz = &s[lay.zwz..lay.zwz + q * q];
            let xwz = &s[lay.xwz..lay.xwz + p * q];
            let zwy = &s[lay.zwy..lay.zwy + q];
            // T = ZᵀΩZ L, M = I + Lᵀ T.
            for r in 0..q {
                for c in 0..q {
                    t[r * q + c] = (c..q).map(|k| zwz[r * q + k] * l[k * q + c]).sum();
                }
            }
            for a in 0..q {
                for c in 0..q {
                    let v: f64 = (a..q).map(|r| l[r * q + a] * t[r * q + c]).sum();
                    m[a * q + c] = v + if a == c { 1.0 } else { 0.0 };
                }
            }
            let ld = chol_in_place(&mut m, q).ok_or_else(not_pd)?;
            // A_x = XᵀΩZ L, a_y = Lᵀ ZᵀΩy.
            for a in 0..p {
                for c in 0..q {
                    ax[a * q + c] = (c..q).map(|k| xwz[a * q + k] * l[k * q + c]).sum();
                }
                sx[a * q..(a + 1) * q].copy_from_slice(&ax[a * q..(a + 1) * q]);
                chol_solve(&m, q, &mut sx[a * q..(a + 1) * q]);
            }
            for c in 0..q {
                ay[c] = (c..q).map(|k| l[k * q + c] * zwy[k]).sum();
            }
            sy.copy_from_slice(&ay);
            chol_solve(&m, q, &mut sy);
            let g = s[0];
            for a in 0..p {
                let ra = &ax[a * q..(a + 1) * q];
                for b in 0..p {
                    let corr: f64 = ra.iter().zip(&sx[b * q..(b + 1) * q]).map(|(u, v)| u * v).sum();
                    acc.xpx[a * p + b] += g * (s[lay.xwx + a * p + b] - corr);
                }
                let corr: f64 = ra.iter().zip(&sy).map(|(u, v)| u * v).sum();
                acc.xpy[a] += g * (s[lay.xwy + a] - corr);
            }
            acc.ypy += g * (s[lay.ywy] - ay.iter().zip(&sy).map(|(u, v)| u * v).sum::<f64>());
            acc.logdet += g * ld;
            acc.wtot += g * s[1];
        }
        Ok(())
    }

    /// Same as [`Self::accumulate`] with the random-effect dimension fixed at
    /// compile time.
    fn accumulate_fixed<const Q: usize>(&self, l: &[f64], acc: &mut Totals) -> Result<()> {
        let lay = self.layout;
        let p = lay.p;
        let mut lf = [[0.0; Q]; Q];
        for r in 0..Q {
            for c in 0..=r {
                lf[r][c] = l[r * Q + c];
            }
        }
        let mut ax = vec![[0.0; Q]; p];
        let mut sx = vec![[0.0; Q]; p];
        for s in self.stats.chunks_exact(lay.stride) {
            let zwz = &s[lay.zwz..lay.zwz + Q * Q];
            let xwz = &s[lay.xwz..lay.xwz + p * Q];
            let zwy = &s[lay.zwy..lay.zwy + Q];
            let mut t = [[0.0; Q]; Q];
            for r in 0..Q {
                for c in 0..Q {
                    for k in c..Q {
                        t[r][c] += zwz[r * Q + k] * lf[k][c];
                    }
                }
            }
            let mut m = [[0.0; Q]; Q];
            for a in 0..Q {
                m[a][a] = 1.0;
                for c in 0..=a {
                    for r in a..Q {
                        m[a][c] += lf[r][a] * t[r][c];
                    }
                }
            }
            // Cholesky of M in place (lower triangle).
            let mut ld = 0.0;
            for j in 0..Q {
                let mut d = m[j][j];
                for k in 0..j {
                    d -= m[j][k] * m[j][k];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return Err(not_pd());
                }
                let dj = sqrt(d);
                m[j][j] = dj;
                ld += ln(d);
                for i in j + 1..Q {
                    let mut v = m[i][j];
                    for k in 0..j {
                        v -= m[i][k] * m[j][k];
                    }
                    m[i][j] = v / dj;
                }
            }
            let solve = |b: &mut [f64; Q]| {
                for i in 0..Q {
                    let mut v = b[i];
                    for k in 0..i {
                        v -= m[i][k] * b[k];
                    }
                    b[i] = v / m[i][i];
                }
                for i in (0..Q).rev() {
                    let mut v = b[i];
                    for k in i + 1..Q {
                        v -= m[k][i] * b[k];
                    }
                    b[i] = v / m[i][i];
                }
            };
            for a in 0..p {
                let mut row = [0.0; Q];
                for c in 0..Q {
                    for k in c..Q {
                        row[c] += xwz[a * Q + k] * lf[k][c];
                    }
                }
                ax[a] = row;
                solve(&mut row);
                sx[a] = row;
            }
            let mut ay = [0.0; Q];
            for c in 0..Q {
                for k in c..Q {
                    ay[c] += lf[k][c] * zwy[k];
                }
            }
            let mut sy = ay;
            solve(&mut sy);
            let g = s[0];
            for a in 0..p {
                for b in 0..p {
                    let mut corr = 0.0;
                    for c in 0..Q {
                        corr += ax[a][c] * sx[b][c];
                    }
                    acc.xpx[a * p + b] += g * (s[lay.xwx + a * p + b] - corr);
                }
                let mut corr = 0.0;
                for c in 0..Q {
                    corr += ax[a][c] * sy[c];
                }
                acc.xpy[a] += g * (s[lay.xwy + a] - corr);
            }
            let mut corr = 0.0;
            for c in 0..Q {
                corr += ay[c] * sy[c];
            }
            acc.ypy += g * (s[lay.ywy] - corr);
            acc.logdet += g * ld;
            acc.wtot += g * s[1];
        }
        Ok(())
    }
}

/// `log ∫ Πⱼ φ(yⱼ; xⱼβ + zⱼb, σ²)^{ωⱼ} φ(b; 0, σ²V) db`, in closed form.
pub fn cluster_loglik_weighted(
    group: &GroupData,
    beta: &DVector<f64>,
    theta: &ThetaParam,
    sigma2: f64,
    w_cond: &[f64],
) -> Result<f64> {
    if !(sigma2 > 0.0) || w_cond.len() != group.m() || w_cond.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "weighted cluster loglikelihood needs σ² > 0 and non-negative weights".into(),
        ));
    }
    let l = theta.lower_factor();
    let r = &group.y - &group.x * beta;
    let a = &group.z * &l;
    let om = DMatrix::from_diagonal(&DVector::from_column_slice(w_cond));
    let q = l.ncols();
    let m = DMatrix::identity(q, q) + a.transpose() * &om * &a;
    let c = a.transpose() * (&om * &r);
    let chol = m.cholesky().ok_or_else(|| Error::Optimizer("cluster precision is not positive definite".into()))?;
    let logdet_m = 2.0 * chol.l_dirty().diagonal().iter().map(|d| ln(*d)).sum::<f64>();
    let wr: f64 = r.iter().zip(w_cond).map(|(ri, w)| w * ri * ri).sum();
    let quad = wr - c.dot(&chol.solve(&c));
    let wsum: f64 = w_cond.iter().sum();
    Ok(-0.5 * wsum * (LN_2PI + ln(sigma2)) - 0.5 * logdet_m - quad / (2.0 * sigma2))
}

fn fit_clusters(
    clusters: &WeightedClusters,
    sample: &SurveySample,
    estimator: Estimator,
    opts: &FitOptions,
) -> Result<FitResult> {
    if sample.groups.len() < 2 {
        return Err(Error::InvalidArgument("at least two groups are needed".into()));
    }
    let template = ThetaParam::diagonal(sample.blocks.clone(), 0.0);
    let start = match &opts.start {
        Some(s) => s.clone(),
        None => ThetaParam::diagonal(sample.blocks.clone(), 1.0).values().to_vec(),
    };
    let opt = optimize_theta(&template, &start, opts, |t| clusters.profile(t).map(|p| p.deviance))?;
    let prof = clusters.profile(&opt.theta)?;
    Ok(FitResult {
        estimator,
        v_hat: theta_to_v(&opt.theta) * prof.sigma2,
        beta: prof.beta,
        sigma2: prof.sigma2,
        deviance: prof.deviance,
        n_obs: sample.n_obs(),
        n_groups: sample.groups.len(),
        n_pairs: 0,
        n_hat_p: 0.0,
        singletons_dropped: 0,
        converged: opt.converged,
        evaluations: opt.evaluations,
        restarted: opt.restarted,
        boundary: opt.theta.min_diagonal() <= opts.boundary_tol,
        theta: opt.theta,
        fixed_names: sample.fixed_names.clone(),
        random_names: sample.random_names.clone(),
    })
}

/// Unweighted maximum likelihood.
pub fn fit_ml(sample: &SurveySample, opts: &FitOptions) -> Result<FitResult> {
    fit_clusters(&WeightedClusters::unweighted(sample), sample, Estimator::Ml, opts)
}

/// Stagewise pseudolikelihood under the given weight scaling.
pub fn fit_stagewise(sample: &SurveySample, scaling: WeightScaling, opts: &FitOptions) -> Result<FitResult> {
    let weights = scale_weights(sample, scaling)?;
    fit_clusters(&WeightedClusters::new(sample, &weights), sample, Estimator::Stagewise(scaling), opts)
}
