//! Weighted pairwise likelihood: profile GLS, profile deviance and the fit.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dense::solve_normal;
use crate::error::{Error, Result};
use crate::fit::{optimize_theta, polish_theta, Estimator, FitOptions, FitResult};
use crate::lmm::{pair_kernel, pair_xi_factored, theta_to_v, PairKernel, Sym2, ThetaParam};
use crate::math::{ln, LN_2PI};
use crate::pairs::PairSet;
use crate::reference::fit_ml;
use crate::sample::SurveySample;

/// `u = Lᵀ z`, with `L` given as its dense lower factor.
#[inline]
pub(crate) fn lt_times(l: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    let q = z.len();
    for c in 0..q {
        let mut s = 0.0;
        for r in c..q {
            s += l[(r, c)] * z[r];
        }
        out[c] = s;
    }
}

/// Closed-form kernel of one pair under factor `l`.
pub(crate) fn kernel_at(
    pairs: &PairSet,
    l: &DMatrix<f64>,
    t: usize,
    u: &mut [f64],
    w: &mut [f64],
) -> Result<PairKernel> {
    let (zj, zk) = pairs.z_pair(t);
    lt_times(l, zj, u);
    lt_times(l, zk, w);
    pair_kernel(pair_xi_factored(u, w)).map_err(|e| singular_pair(pairs, t, e))
}

/// Weighted sums over pairs at a fixed θ.
#[derive(Debug, Clone)]
struct Accum {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    logdet: f64,
    n_hat: f64,
    touched: usize,
}

fn accumulate(pairs: &PairSet, theta: &ThetaParam) -> Result<Accum> {
    let l = theta.lower_factor();
    match pairs.q() {
        1 => accumulate_fixed::<1>(pairs, &l),
        2 => accumulate_fixed::<2>(pairs, &l),
        3 => accumulate_fixed::<3>(pairs, &l),
        _ => accumulate_generic(pairs, &l),
    }
}

fn finish(p: usize, xtx: Vec<f64>, xty: Vec<f64>, yty: f64, logdet: f64, n_hat: f64, touched: usize) -> Accum {
    let xtx = DMatrix::from_fn(p, p, |r, c| if r <= c { xtx[r * p + c] } else { xtx[c * p + r] });
    Accum { xtx, xty: DVector::from_vec(xty), yty, logdet, n_hat, touched }
}

fn accumulate_fixed<const Q: usize>(pairs: &PairSet, l: &DMatrix<f64>) -> Result<Accum> {
    let p = pairs.p();
    let mut lt = [[0.0; Q]; Q];
    for c in 0..Q {
        for r in c..Q {
            lt[c][r] = l[(r, c)];
        }
    }
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut yty = 0.0;
    let mut logdet = 0.0;
    let mut n_hat = 0.0;
    let mut ix = vec![0.0; 2 * p];
    for t in 0..pairs.len() {
        let (zj, zk) = pairs.z_pair(t);
        let (mut a, mut b, mut d) = (1.0, 0.0, 1.0);
        for c in 0..Q {
            let mut u = 0.0;
            let mut w = 0.0;
            for r in c..Q {
                u += lt[c][r] * zj[r];
                w += lt[c][r] * zk[r];
            }
            a += u * u;
            b += u * w;
            d += w * w;
        }
        let kern = pair_kernel(Sym2 { a, b, d }).map_err(|e| singular_pair(pairs, t, e))?;
        let wt = pairs.weight[t];
        let inv = kern.inv;
        let (xj, xk) = pairs.x_pair(t);
        let y = pairs.y_pair(t);
        let (wa, wb, wd) = (wt * inv.a, wt * inv.b, wt * inv.d);
        for c in 0..p {
            ix[c] = wa * xj[c] + wb * xk[c];
            ix[p + c] = wb * xj[c] + wd * xk[c];
        }
        for r in 0..p {
            let (xr, kr) = (xj[r], xk[r]);
            let row = &mut xtx[r * p..(r + 1) * p];
            for c in r..p {
                row[c] += xr * ix[c] + kr * ix[p + c];
            }
            xty[r] += ix[r] * y[0] + ix[p + r] * y[1];
        }
        yty += wa * y[0] * y[0] + 2.0 * wb * y[0] * y[1] + wd * y[1] * y[1];
        logdet += wt * kern.logdet;
        n_hat += wt;
    }
    Ok(finish(p, xtx, xty, yty, logdet, n_hat, pairs.len()))
}

fn singular_pair(pairs: &PairSet, t: usize, e: Error) -> Error {
    match e {
        Error::SingularKernel(det) => {
            let (j, k) = pairs.rows[t];
            Error::SingularBlock { group: pairs.group_key[pairs.group[t]], j: j as usize, k: k as usize, det }
        }
        other => other,
    }
}

fn accumulate_generic(pairs: &PairSet, l: &DMatrix<f64>) -> Result<Accum> {
    let p = pairs.p();
    let q = pairs.q();
    let mut u = vec![0.0; q];
    let mut w = vec![0.0; q];
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut yty = 0.0;
    let mut logdet = 0.0;
    let mut n_hat = 0.0;
    let mut ix = vec![0.0; 2 * p];
    for t in 0..pairs.len() {
        let kern = kernel_at(pairs, l, t, &mut u, &mut w)?;
        let wt = pairs.weight[t];
        let inv = kern.inv;
        let (xj, xk) = pairs.x_pair(t);
        let y = pairs.y_pair(t);
        // Ξ⁻¹ X for the two rows.
        for c in 0..p {
            ix[c] = inv.a * xj[c] + inv.b * xk[c];
            ix[p + c] = inv.b * xj[c] + inv.d * xk[c];
        }
        for r in 0..p {
            for c in r..p {
                xtx[r * p + c] += wt * (xj[r] * ix[c] + xk[r] * ix[p + c]);
            }
            xty[r] += wt * (ix[r] * y[0] + ix[p + r] * y[1]);
        }
        yty += wt * inv.quad(y, y);
        logdet += wt * kern.logdet;
        n_hat += wt;
    }
    Ok(finish(p, xtx, xty, yty, logdet, n_hat, pairs.len()))
}

/// Profile quantities at one θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEval {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    /// `Σ w log|Ξ|`.
    pub logdet: f64,
    pub n_hat: f64,
    /// Pair blocks visited; each pair exactly once.
    pub pairs_touched: usize,
}

/// `β̂_θ = (Σ w XᵀΞ⁻¹X)⁻¹ Σ w XᵀΞ⁻¹Y`.
pub fn gls_beta(pairs: &PairSet, theta: &ThetaParam) -> Result<DVector<f64>> {
    let acc = accumulate(pairs, theta)?;
    solve_normal(&acc.xtx, &acc.xty, &pairs.fixed_names)
}

/// `σ̂²_θ = Σ w rᵀΞ⁻¹r / (2 N̂_P)` at the given β.
pub fn profile_sigma2(pairs: &PairSet, theta: &ThetaParam, beta: &DVector<f64>) -> Result<f64> {
    let q = pairs.q();
    let l = theta.lower_factor();
    let (mut u, mut w) = (vec![0.0; q], vec![0.0; q]);
    let mut rss = 0.0;
    let mut n_hat = 0.0;
    for t in 0..pairs.len() {
        let kern = kernel_at(pairs, &l, t, &mut u, &mut w)?;
        let r = pair_residual(pairs, t, beta);
        rss += pairs.weight[t] * kern.inv.quad(r, r);
        n_hat += pairs.weight[t];
    }
    Ok((rss / (2.0 * n_hat)).max(0.0))
}

#[inline]
pub(crate) fn pair_residual(pairs: &PairSet, t: usize, beta: &DVector<f64>) -> [f64; 2] {
    let (xj, xk) = pairs.x_pair(t);
    let y = pairs.y_pair(t);
    let fj: f64 = xj.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
    let fk: f64 = xk.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
    [y[0] - fj, y[1] - fk]
}

/// `d̂(θ) = 2N̂_P log(2πσ̂²_θ) + Σ w log|Ξ|`, with β̂ and σ̂² from one pass.
pub fn profile_eval(pairs: &PairSet, theta: &ThetaParam) -> Result<ProfileEval> {
    let acc = accumulate(pairs, theta)?;
    let beta = solve_normal(&acc.xtx, &acc.xty, &pairs.fixed_names)?;
    let rss = acc.yty - acc.xty.dot(&beta);
    if !(rss > 1e-13 * acc.yty.abs()) || !rss.is_finite() {
        return Err(Error::DegenerateFit);
    }
    let sigma2 = rss / (2.0 * acc.n_hat);
    Ok(ProfileEval {
        deviance: 2.0 * acc.n_hat * (LN_2PI + ln(sigma2)) + acc.logdet,
        beta,
        sigma2,
        logdet: acc.logdet,
        n_hat: acc.n_hat,
        pairs_touched: acc.touched,
    })
}

pub fn profile_deviance(pairs: &PairSet, theta: &ThetaParam) -> Result<f64> {
    profile_eval(pairs, theta).map(|e| e.deviance)
}

/// Gradient of `d̂` in θ. β̂ and σ̂² drop out by the envelope argument, so
/// `∂d̂ = Σ w tr(M ∂Ξ)` with `M = Ξ⁻¹ − ssᵀ/σ̂²`, `s = Ξ⁻¹r`.
pub fn profile_gradient(pairs: &PairSet, theta: &ThetaParam) -> Result<Vec<f64>> {
    let eval = profile_eval(pairs, theta)?;
    let q = pairs.q();
    let l = theta.lower_factor();
    let (mut u, mut w) = (vec![0.0; q], vec![0.0; q]);
    let mut g = DMatrix::<f64>::zeros(q, q);
    for t in 0..pairs.len() {
        let inv = kernel_at(pairs, &l, t, &mut u, &mut w)?.inv;
        let r = pair_residual(pairs, t, &eval.beta);
        let s = [inv.a * r[0] + inv.b * r[1], inv.b * r[0] + inv.d * r[1]];
        let wt = pairs.weight[t];
        let maa = wt * (inv.a - s[0] * s[0] / eval.sigma2);
        let mab = wt * (inv.b - s[0] * s[1] / eval.sigma2);
        let mdd = wt * (inv.d - s[1] * s[1] / eval.sigma2);
        let (zj, zk) = pairs.z_pair(t);
        for c in 0..q {
            for r in c..q {
                g[(r, c)] += maa * zj[r] * zj[c] + mab * (zj[r] * zk[c] + zk[r] * zj[c]) + mdd * zk[r] * zk[c];
            }
        }
    }
    g.fill_upper_triangle_with_lower_triangle();
    let gl = g * l;
    Ok((0..theta.n_params())
        .map(|i| {
            let (r, c) = theta.position(i);
            2.0 * gl[(r, c)]
        })
        .collect())
}

/// Fit from an explicit starting θ.
pub fn fit_pairs(pairs: &PairSet, sample: &SurveySample, start: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let template = ThetaParam::diagonal(sample.blocks.clone(), 0.0);
    let mut opt = optimize_theta(&template, start, opts, |t| profile_deviance(pairs, t))?;
    if opt.converged {
        opt.theta = polish_theta(&opt.theta, opts, |t| profile_deviance(pairs, t), |t| profile_gradient(pairs, t));
    }
    let eval = profile_eval(pairs, &opt.theta)?;
    let v = theta_to_v(&opt.theta);
    Ok(FitResult {
        estimator: Estimator::Pairwise,
        beta: eval.beta,
        sigma2: eval.sigma2,
        v_hat: v * eval.sigma2,
        deviance: eval.deviance,
        n_obs: sample.n_obs(),
        n_groups: sample.groups.len(),
        n_pairs: pairs.len(),
        n_hat_p: eval.n_hat,
        singletons_dropped: pairs.singletons_dropped,
        converged: opt.converged,
        evaluations: opt.evaluations,
        restarted: opt.restarted,
        boundary: opt.theta.min_diagonal() <= opts.boundary_tol,
        theta: opt.theta,
        fixed_names: sample.fixed_names.clone(),
        random_names: sample.random_names.clone(),
    })
}

/// Starting θ: the supplied start, else the naive ML estimate, else a
/// diagonal of 0.1.
pub fn pairwise_start(sample: &SurveySample, opts: &FitOptions) -> Vec<f64> {
    if let Some(s) = &opts.start {
        return s.clone();
    }
    match fit_ml(sample, &FitOptions { start: None, ..opts.clone() }) {
        Ok(fit) => fit.theta.values().to_vec(),
        Err(_) => ThetaParam::diagonal(sample.blocks.clone(), 0.1).values().to_vec(),
    }
}

pub fn fit_pairwise(sample: &SurveySample, opts: &FitOptions) -> Result<FitResult> {
    let pairs = PairSet::enumerate(sample)?;
    let start = pairwise_start(sample, opts);
    fit_pairs(&pairs, sample, &start, opts)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::design::pair_index;
    use crate::sample::GroupData;
    use alloc::string::String;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_sample(seed: u64, groups: usize, m: usize, q: usize, weighted: bool) -> SurveySample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gs = Vec::new();
        for g in 0..groups {
            let mm = if m == 0 { rng.random_range(1..6) } else { m };
            let b: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = DMatrix::from_fn(mm, 3, |_, c| if c == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
            let z = DMatrix::from_fn(mm, q, |r, c| if c == 0 { 1.0 } else { x[(r, c)] });
            let y = DVector::from_fn(mm, |r, _| {
                1.0 + x[(r, 1)] - 0.5 * x[(r, 2)]
                    + (0..q).map(|c| z[(r, c)] * b[c]).sum::<f64>()
                    + rng.random_range(-1.0..1.0)
            });
            let pi = if weighted { rng.random_range(0.2..1.0) } else { 1.0 };
            let pi_cond: Vec<f64> = (0..mm).map(|_| if weighted { rng.random_range(0.3..1.0) } else { 1.0 }).collect();
            let mut pair_cond = vec![0.0; mm * mm.saturating_sub(1) / 2];
            for j in 0..mm {
                for k in j + 1..mm {
                    pair_cond[pair_index(mm, j, k)] =
                        pi_cond[j] * pi_cond[k] * if weighted { rng.random_range(0.8..1.0) } else { 1.0 };
                }
            }
            gs.push(GroupData {
                key: g as u32,
                psu: g as u32,
                stratum: (g % 2) as u32,
                y,
                x,
                z,
                pi,
                pi_cond,
                pair_cond,
                pop_size: None,
            });
        }
        let fixed: Vec<String> = vec!["(Intercept)".into(), "x1".into(), "x2".into()];
        let random: Vec<String> = fixed[..q].to_vec();
        SurveySample::from_groups(gs, fixed, random, vec![q]).unwrap()
    }

    /// Dense oracle: stack all pairs, build block-diagonal weights, solve.
    fn dense_profile(sample: &SurveySample, theta: &ThetaParam) -> (DVector<f64>, f64, f64) {
        let v = theta_to_v(theta);
        let mut rows_x = Vec::new();
        let mut rows_y = Vec::new();
        let mut blocks = Vec::new();
        for g in &sample.groups {
            let m = g.m();
            for j in 0..m {
                for k in j + 1..m {
                    let w = 1.0 / (g.pi * g.pair_cond[pair_index(m, j, k)]);
                    let xp = DMatrix::from_fn(2, g.x.ncols(), |r, c| g.x[(if r == 0 { j } else { k }, c)]);
                    let zp = DMatrix::from_fn(2, g.z.ncols(), |r, c| g.z[(if r == 0 { j } else { k }, c)]);
                    let xi = DMatrix::identity(2, 2) + &zp * &v * zp.transpose();
                    rows_x.push(xp);
                    rows_y.push(DVector::from_vec(vec![g.y[j], g.y[k]]));
                    blocks.push((w, xi));
                }
            }
        }
        let n = rows_x.len();
        let p = sample.p();
        let big_x = DMatrix::from_fn(2 * n, p, |r, c| rows_x[r / 2][(r % 2, c)]);
        let big_y = DVector::from_fn(2 * n, |r, _| rows_y[r / 2][r % 2]);
        let mut omega = DMatrix::zeros(2 * n, 2 * n);
        let mut n_hat = 0.0;
        let mut logdet = 0.0;
        for (t, (w, xi)) in blocks.iter().enumerate() {
            let inv = xi.clone().try_inverse().unwrap();
            omega.view_mut((2 * t, 2 * t), (2, 2)).copy_from(&(inv * *w));
            n_hat += w;
            logdet += w * xi.determinant().ln();
        }
        let a = big_x.transpose() * &omega * &big_x;
        let b = big_x.transpose() * &omega * &big_y;
        let beta = a.lu().solve(&b).unwrap();
        let r = &big_y - &big_x * &beta;
        let sigma2 = (r.transpose() * &omega * &r)[(0, 0)] / (2.0 * n_hat);
        let dev = 2.0 * n_hat * (2.0 * core::f64::consts::PI * sigma2).ln() + logdet;
        (beta, sigma2, dev)
    }

    fn random_theta(rng: &mut ChaCha8Rng, q: usize) -> ThetaParam {
        let n = q * (q + 1) / 2;
        let t = ThetaParam::diagonal(vec![q], 0.0);
        let vals: Vec<f64> = (0..n)
            .map(|i| if t.is_diagonal(i) { rng.random_range(0.0..2.0) } else { rng.random_range(-1.0..1.0) })
            .collect();
        t.with_values(&vals).unwrap()
    }

    #[test]
    fn matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..20 {
            let q = 1 + (seed as usize % 3);
            let s = random_sample(seed, 3, 4, q, true);
            let pairs = PairSet::enumerate(&s).unwrap();
            let theta = random_theta(&mut rng, q);
            let (beta, sigma2, dev) = dense_profile(&s, &theta);
            let ev = profile_eval(&pairs, &theta).unwrap();
            assert!((&ev.beta - &beta).amax() < 1e-10 * beta.amax().max(1.0));
            assert!((ev.sigma2 - sigma2).abs() < 1e-10 * sigma2);
            assert!((ev.deviance - dev).abs() < 1e-8 * dev.abs().max(1.0));
            let direct = profile_sigma2(&pairs, &theta, &ev.beta).unwrap();
            assert!((direct - sigma2).abs() < 1e-10 * sigma2);
            assert_eq!(ev.pairs_touched, pairs.len());
        }
    }

    #[test]
    fn fixed_size_kernels_match_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in 1..=3 {
            let s = random_sample(40 + q as u64, 6, 0, q, true);
            let pairs = PairSet::enumerate(&s).unwrap();
            let l = random_theta(&mut rng, q).lower_factor();
            let a = match q {
                1 => accumulate_fixed::<1>(&pairs, &l),
                2 => accumulate_fixed::<2>(&pairs, &l),
                _ => accumulate_fixed::<3>(&pairs, &l),
            }
            .unwrap();
            let b = accumulate_generic(&pairs, &l).unwrap();
            assert!((&a.xtx - &b.xtx).amax() < 1e-12 * b.xtx.amax());
            assert!((&a.xty - &b.xty).amax() < 1e-12 * b.xty.amax().max(1.0));
            assert!((a.yty - b.yty).abs() < 1e-12 * b.yty);
            assert!((a.logdet - b.logdet).abs() < 1e-12 * b.logdet.abs().max(1.0));
            assert_eq!(a.n_hat, b.n_hat);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in 1..=3 {
            let s = random_sample(60 + q as u64, 8, 0, q, true);
            let pairs = PairSet::enumerate(&s).unwrap();
            let theta = random_theta(&mut rng, q);
            let g = profile_gradient(&pairs, &theta).unwrap();
            for i in 0..g.len() {
                let h = 1e-5;
                let mut up = theta.values().to_vec();
                let mut dn = up.clone();
                up[i] += h;
                dn[i] -= h;
                let fu = profile_deviance(&pairs, &theta.with_values(&up).unwrap()).unwrap();
                let fd = profile_deviance(&pairs, &theta.with_values(&dn).unwrap()).unwrap();
                let num = (fu - fd) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-5 * g[i].abs().max(1.0), "q {q} i {i}: {num} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn polished_fit_is_a_gradient_root() {
        let s = random_sample(77, 40, 4, 2, true);
        let fit = fit_pairwise(&s, &FitOptions::default()).unwrap();
        let pairs = PairSet::enumerate(&s).unwrap();
        let g = profile_gradient(&pairs, &fit.theta).unwrap();
        let (lo, _) = fit.theta.bounds();
        for (i, gi) in g.iter().enumerate() {
            let at_bound = fit.theta.values()[i] <= lo[i] && *gi >= 0.0;
            assert!(at_bound || gi.abs() < 1e-6 * fit.n_hat_p, "{g:?} at {:?}", fit.theta.values());
        }
    }

    #[test]
    fn zero_theta_is_ols_on_stacked_rows() {
        let s = random_sample(3, 5, 3, 1, false);
        let pairs = PairSet::enumerate(&s).unwrap();
        let theta = ThetaParam::diagonal(vec![1], 0.0);
        let ev = profile_eval(&pairs, &theta).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in 0..pairs.len() {
            let (xj, xk) = pairs.x_pair(t);
            xs.extend_from_slice(xj);
            xs.extend_from_slice(xk);
            ys.extend_from_slice(&pairs.y_pair(t));
        }
        let x = DMatrix::from_row_slice(ys.len(), 3, &xs);
        let y = DVector::from_vec(ys);
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
        assert!((&ev.beta - &ols).amax() < 1e-12);
        let rss = (&y - &x * &ols).norm_squared();
        assert!((ev.sigma2 - rss / (2.0 * pairs.len() as f64)).abs() < 1e-12);
        assert!(ev.logdet.abs() < 1e-15);
        assert!((ev.deviance - 2.0 * ev.n_hat * (2.0 * core::f64::consts::PI * ev.sigma2).ln()).abs() < 1e-9);
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        let mut s = random_sample(4, 4, 3, 2, true);
        for g in &mut s.groups {
            g.y = &g.x * DVector::from_vec(vec![0.5, -2.0, 3.0]);
        }
        let pairs = PairSet::enumerate(&s).unwrap();
        let theta = ThetaParam::new(vec![2], vec![0.8, 0.3, 0.5]).unwrap();
        let beta = gls_beta(&pairs, &theta).unwrap();
        assert!((beta - DVector::from_vec(vec![0.5, -2.0, 3.0])).amax() < 1e-10);
        assert_eq!(profile_sigma2(&pairs, &theta, &DVector::from_vec(vec![0.5, -2.0, 3.0])).unwrap(), 0.0);
        assert!(matches!(profile_deviance(&pairs, &theta), Err(Error::DegenerateFit)));
    }

    #[test]
    fn weight_scaling_multiplies_deviance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sample(5, 6, 0, 2, true);
        let pairs = PairSet::enumerate(&s).unwrap();
        for c in [0.1, 2.0, 7.0] {
            let scaled = pairs.scale_weights(c).unwrap();
            for _ in 0..5 {
                let theta = random_theta(&mut rng, 2);
                let a = profile_eval(&pairs, &theta).unwrap();
                let b = profile_eval(&scaled, &theta).unwrap();
                assert!((b.deviance - c * a.deviance).abs() < 1e-9 * a.deviance.abs().max(1.0) * c);
                assert!((&a.beta - &b.beta).amax() < 1e-10);
                assert!((a.sigma2 - b.sigma2).abs() < 1e-12 * a.sigma2);
            }
        }
    }

    #[test]
    fn singular_block_is_named() {
        let mut s = random_sample(6, 2, 3, 1, false);
        s.groups[1].z[(0, 0)] = 1e200;
        let pairs = PairSet::enumerate(&s).unwrap();
        let theta = ThetaParam::diagonal(vec![1], 1.0);
        match profile_deviance(&pairs, &theta) {
            Err(Error::SingularBlock { group, j, .. }) => assert_eq!((group, j), (1, 0)),
            other => panic!("{other:?}"),
        }
    }
}
