//! Derivative-free minimization subject to box constraints.
//!
//! A trust-region method on quadratic interpolation models, in the manner of
//! Powell's BOBYQA: the model interpolates the objective at `2d + 1` points and
//! its Hessian is updated by the least Frobenius-norm change compatible with
//! the new interpolation conditions. The trust-region subproblem is solved
//! over the intersection of the box and an infinity-norm ball by truncated
//! conjugate gradients with an active set.
//!
//! Every evaluated point lies inside the box. The method has no random
//! components, so a problem always produces the same iterate sequence.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Consecutive non-finite evaluations tolerated before giving up.
const MAX_NONFINITE: usize = 12;

pub struct BoxProblem<F> {
    pub objective: F,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start: Vec<f64>,
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> BoxProblem<F> {
    /// Problem with default radii (`0.2 ×` the narrowest box width, `1e-6`)
    /// and an evaluation budget of `500 d`.
    pub fn new(objective: F, lower: Vec<f64>, upper: Vec<f64>, start: Vec<f64>) -> Self {
        let d = start.len();
        let width = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min);
        BoxProblem { objective, lower, upper, start, rho_begin: 0.2 * width, rho_end: 1e-6, max_evals: 500 * d.max(1) }
    }

    pub fn with_radii(mut self, rho_begin: f64, rho_end: f64) -> Self {
        self.rho_begin = rho_begin;
        self.rho_end = rho_end;
        self
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// True when the trust region shrank to `rho_end`.
    pub converged: bool,
}

fn validate<F>(p: &BoxProblem<F>) -> Result<()> {
    let d = p.start.len();
    if d == 0 || p.lower.len() != d || p.upper.len() != d {
        return Err(Error::InvalidArgument("box problem dimensions disagree".into()));
    }
    for i in 0..d {
        let (l, u, x) = (p.lower[i], p.upper[i], p.start[i]);
        if !(l.is_finite() && u.is_finite() && l < u) {
            return Err(Error::InvalidArgument(format!("bad bounds [{l}, {u}] for coordinate {i}")));
        }
        if !(l <= x && x <= u) {
            return Err(Error::InvalidArgument(format!("start {x} outside [{l}, {u}] for coordinate {i}")));
        }
        if 3.0 * p.rho_begin > u - l {
            return Err(Error::InvalidArgument(format!(
                "rho_begin {} exceeds a third of the width of coordinate {i}",
                p.rho_begin
            )));
        }
    }
    if !(p.rho_end > 0.0 && p.rho_end < p.rho_begin) {
        return Err(Error::InvalidArgument("need 0 < rho_end < rho_begin".into()));
    }
    if p.max_evals < 2 * d + 1 {
        return Err(Error::InvalidArgument(format!("max_evals must be at least {}", 2 * d + 1)));
    }
    Ok(())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Quadratic `c + gᵀ(x - xc) + ½ (x - xc)ᵀ H (x - xc)`.
struct Quadratic {
    center: Vec<f64>,
    c: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
}

impl Quadratic {
    fn zero(center: &[f64]) -> Self {
        let d = center.len();
        Quadratic { center: center.to_vec(), c: 0.0, g: DVector::zeros(d), h: DMatrix::zeros(d, d) }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let s = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, b)| a - b));
        self.c + self.g.dot(&s) + 0.5 * s.dot(&(&self.h * &s))
    }

    fn grad(&self, x: &[f64]) -> DVector<f64> {
        let s = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, b)| a - b));
        &self.g + &self.h * s
    }
}

/// Minimum-norm interpolation system for the current point set, scaled by
/// `scale` for conditioning.
struct Kkt {
    lu: LU<f64, Dyn, Dyn>,
    steps: Vec<DVector<f64>>,
    scale: f64,
}

impl Kkt {
    fn build(points: &[Vec<f64>], origin: &[f64], scale: f64) -> Option<Kkt> {
        let npt = points.len();
        let d = origin.len();
        let steps: Vec<DVector<f64>> = points
            .iter()
            .map(|y| DVector::from_iterator(d, y.iter().zip(origin).map(|(a, b)| (a - b) / scale)))
            .collect();
        let n = npt + 1 + d;
        let mut m = DMatrix::zeros(n, n);
        for k in 0..npt {
            for l in 0..npt {
                let dot = steps[k].dot(&steps[l]);
                m[(k, l)] = 0.5 * dot * dot;
            }
            m[(k, npt)] = 1.0;
            m[(npt, k)] = 1.0;
            for i in 0..d {
                m[(k, npt + 1 + i)] = steps[k][i];
                m[(npt + 1 + i, k)] = steps[k][i];
            }
        }
        let lu = m.lu();
        // reject numerically singular systems
        let diag_min = lu.u().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
        let diag_max = lu.u().diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if !(diag_min > 1e-13 * diag_max) {
            return None;
        }
        Some(Kkt { lu, steps, scale })
    }

    /// Coefficients `(λ, c, g)` in scaled coordinates for right-hand side `rhs`.
    fn solve(&self, rhs: &[f64]) -> Option<DVector<f64>> {
        let npt = self.steps.len();
        let d = self.steps[0].len();
        let mut b = DVector::zeros(npt + 1 + d);
        b.rows_mut(0, npt).copy_from_slice(rhs);
        let sol = self.lu.solve(&b)?;
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }

    /// Value at `x` of the quadratic with coefficients `sol`, where `x` is
    /// given relative to the origin in unscaled units.
    fn value_at(&self, sol: &DVector<f64>, rel: &[f64]) -> f64 {
        let npt = self.steps.len();
        let d = rel.len();
        let s = DVector::from_iterator(d, rel.iter().map(|v| v / self.scale));
        let mut v = sol[npt] + sol.rows(npt + 1, d).dot(&s);
        for k in 0..npt {
            let dot = self.steps[k].dot(&s);
            v += 0.5 * sol[k] * dot * dot;
        }
        v
    }

    /// Lagrange function `t` evaluated at `rel`.
    fn lagrange(&self, t: usize, rel: &[f64]) -> Option<f64> {
        let mut e = vec![0.0; self.steps.len()];
        e[t] = 1.0;
        let sol = self.solve(&e)?;
        Some(self.value_at(&sol, rel))
    }
}

/// Approximate minimizer of `gᵀs + ½ sᵀHs` over `lo ≤ s ≤ hi` (with `lo ≤ 0 ≤ hi`).
fn box_qp(g: &DVector<f64>, h: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let d = g.len();
    let mut s = DVector::zeros(d);
    let mut fixed = vec![false; d];
    let gscale = g.amax().max(1e-300);
    for _outer in 0..(2 * d + 2) {
        let grad = g + h * &s;
        // fix coordinates sitting on a bound with the gradient pushing outward
        for i in 0..d {
            let at_lo = s[i] <= lo[i];
            let at_hi = s[i] >= hi[i];
            fixed[i] = (at_lo && grad[i] > 0.0) || (at_hi && grad[i] < 0.0) || (lo[i] == hi[i]);
        }
        let mut r = DVector::from_fn(d, |i, _| if fixed[i] { 0.0 } else { -grad[i] });
        if r.amax() <= 1e-14 * gscale {
            break;
        }
        let mut p = r.clone();
        let mut hit_bound = false;
        for _cg in 0..d {
            let hp = h * &p;
            let curv = p.dot(&hp);
            let mut tmax = f64::INFINITY;
            let mut hit = None;
            for i in 0..d {
                if fixed[i] || p[i] == 0.0 {
                    continue;
                }
                let t = if p[i] > 0.0 { (hi[i] - s[i]) / p[i] } else { (lo[i] - s[i]) / p[i] };
                let t = t.max(0.0);
                if t < tmax {
                    tmax = t;
                    hit = Some(i);
                }
            }
            let rr = r.dot(&r);
            let alpha = if curv > 0.0 { rr / curv } else { f64::INFINITY };
            if alpha >= tmax {
                s.axpy(tmax, &p, 1.0);
                if let Some(i) = hit {
                    s[i] = if p[i] > 0.0 { hi[i] } else { lo[i] };
                    fixed[i] = true;
                }
                hit_bound = true;
                break;
            }
            s.axpy(alpha, &p, 1.0);
            let mut r_new = &r - alpha * hp;
            for i in 0..d {
                if fixed[i] {
                    r_new[i] = 0.0;
                }
            }
            if r_new.amax() <= 1e-14 * gscale {
                r = r_new;
                break;
            }
            let beta = r_new.dot(&r_new) / rr;
            p = &r_new + beta * p;
            r = r_new;
        }
        if !hit_bound {
            break;
        }
    }
    for i in 0..d {
        s[i] = s[i].clamp(lo[i], hi[i]);
    }
    // fall back on the projected Cauchy step if CG did worse
    let model = |s: &DVector<f64>| g.dot(s) + 0.5 * s.dot(&(h * s));
    let mut cauchy = DVector::from_fn(d, |i, _| (-g[i]).clamp(lo[i], hi[i]));
    let cg = g.dot(&cauchy);
    let cc = cauchy.dot(&(h * &cauchy));
    if cg < 0.0 {
        let t = if cc > 0.0 { (-cg / cc).min(1.0) } else { 1.0 };
        cauchy *= t;
        if model(&cauchy) < model(&s) {
            return cauchy;
        }
    }
    if model(&s) > 0.0 {
        s.fill(0.0);
    }
    s
}

struct State<'p, F> {
    f: &'p mut F,
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    kopt: usize,
    evals: usize,
    max_evals: usize,
    trace: Vec<(Vec<f64>, f64)>,
}

impl<'p, F: FnMut(&[f64]) -> f64> State<'p, F> {
    fn clamp(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if !v.is_finite() && self.trace.len() < 8 {
            self.trace.push((x.to_vec(), v));
        }
        v
    }

    fn xopt(&self) -> &[f64] {
        &self.points[self.kopt]
    }

    fn farthest(&self) -> (usize, f64) {
        let xo = self.xopt();
        let mut best = (self.kopt, 0.0);
        for (k, y) in self.points.iter().enumerate() {
            let d = dist2(y, xo);
            if k != self.kopt && d > best.1 {
                best = (k, d);
            }
        }
        (best.0, sqrt(best.1))
    }

    /// Fresh `2d + 1` point set around `xopt` at radius `rho`; keeps `xopt`.
    fn reset_points(&mut self, rho: f64) -> bool {
        let x0 = self.xopt().to_vec();
        let f0 = self.values[self.kopt];
        let d = x0.len();
        let mut pts = vec![x0.clone()];
        let mut vals = vec![f0];
        for i in 0..d {
            let (a, b) = axis_steps(x0[i], self.lower[i], self.upper[i], rho);
            for step in [a, b] {
                let mut y = x0.clone();
                y[i] += step;
                self.clamp(&mut y);
                let v = self.eval(&y);
                if !v.is_finite() {
                    return false;
                }
                pts.push(y);
                vals.push(v);
            }
        }
        self.points = pts;
        self.values = vals;
        self.kopt = 0;
        for k in 1..self.values.len() {
            if self.values[k] < self.values[self.kopt] {
                self.kopt = k;
            }
        }
        true
    }
}

/// Two distinct steps along one axis that keep the point in `[l, u]`.
fn axis_steps(x: f64, l: f64, u: f64, rho: f64) -> (f64, f64) {
    let room_lo = x - l;
    let room_hi = u - x;
    if room_lo >= rho && room_hi >= rho {
        (rho, -rho)
    } else if room_hi >= room_lo {
        let r = rho.min(room_hi / 2.0);
        (r, 2.0 * r)
    } else {
        let r = rho.min(room_lo / 2.0);
        (-r, -2.0 * r)
    }
}

/// Minimize the objective over the box.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut problem: BoxProblem<F>) -> Result<BoxResult> {
    validate(&problem)?;
    let d = problem.start.len();
    let mut st = State {
        f: &mut problem.objective,
        lower: problem.lower.clone(),
        upper: problem.upper.clone(),
        points: Vec::new(),
        values: Vec::new(),
        kopt: 0,
        evals: 0,
        max_evals: problem.max_evals,
        trace: Vec::new(),
    };
    let f0 = st.eval(&problem.start);
    if !f0.is_finite() {
        return Err(Error::Optimizer(format!("objective is {f0} at the starting point")));
    }
    st.points.push(problem.start.clone());
    st.values.push(f0);

    let rho_end = problem.rho_end;
    let mut rho = problem.rho_begin;
    let mut delta = rho;
    if !st.reset_points(rho) {
        return Err(nonfinite_error(&st));
    }
    let mut model = Quadratic::zero(st.xopt());
    let mut nonfinite = 0usize;
    let mut geo_shrink = 1.0;
    let mut resets = 0usize;
    let mut converged = false;

    loop {
        if st.evals >= st.max_evals {
            break;
        }
        // refresh the model by the least Frobenius-norm change
        let xo = st.xopt().to_vec();
        let (_, far) = st.farthest();
        let scale = far.max(rho);
        let kkt = match Kkt::build(&st.points, &xo, scale) {
            Some(k) => k,
            None => {
                resets += 1;
                if resets > 50 || !st.reset_points(rho) {
                    return Err(Error::Optimizer("interpolation set degenerated".into()));
                }
                continue;
            }
        };
        let resid: Vec<f64> = st.points.iter().zip(&st.values).map(|(y, v)| v - model.eval(y)).collect();
        let sol = match kkt.solve(&resid) {
            Some(s) => s,
            None => {
                resets += 1;
                if resets > 50 || !st.reset_points(rho) {
                    return Err(Error::Optimizer("interpolation system is singular".into()));
                }
                continue;
            }
        };
        let npt = st.points.len();
        let mut dh = DMatrix::zeros(d, d);
        for k in 0..npt {
            dh.ger(sol[k], &kkt.steps[k], &kkt.steps[k], 1.0);
        }
        let inv = 1.0 / scale;
        let g_new = model.grad(&xo) + sol.rows(npt + 1, d) * inv;
        let h_new = &model.h + dh * (inv * inv);
        model = Quadratic { center: xo.clone(), c: st.values[st.kopt], g: g_new, h: h_new };

        // trust-region step
        let lo: Vec<f64> = (0..d).map(|i| (st.lower[i] - xo[i]).max(-delta)).collect();
        let hi: Vec<f64> = (0..d).map(|i| (st.upper[i] - xo[i]).min(delta)).collect();
        let s = box_qp(&model.g, &model.h, &lo, &hi);
        let snorm = s.norm();
        let pred = -(model.g.dot(&s) + 0.5 * s.dot(&(&model.h * &s)));

        if snorm < 0.5 * rho || !(pred > 0.0) {
            // model step too short at this resolution
            let (t, far) = st.farthest();
            if far > 2.0 * delta.max(rho) {
                match geometry_step(&mut st, &kkt, t, delta.max(rho) * geo_shrink) {
                    Geometry::Moved => {
                        geo_shrink = 1.0;
                        continue;
                    }
                    Geometry::NonFinite => {
                        geo_shrink *= 0.5;
                        nonfinite += 1;
                        if nonfinite > MAX_NONFINITE {
                            return Err(nonfinite_error(&st));
                        }
                        continue;
                    }
                    Geometry::NoCandidate => {}
                }
            }
            if rho <= rho_end {
                converged = true;
                break;
            }
            let old = rho;
            rho = next_rho(rho, rho_end);
            delta = (0.5 * old).max(rho);
            continue;
        }

        let mut xn: Vec<f64> = xo.iter().zip(s.iter()).map(|(a, b)| a + b).collect();
        st.clamp(&mut xn);
        let fnew = st.eval(&xn);
        if !fnew.is_finite() {
            nonfinite += 1;
            if nonfinite > MAX_NONFINITE {
                return Err(nonfinite_error(&st));
            }
            delta = 0.5 * delta.min(snorm);
            if delta < rho {
                if rho <= rho_end {
                    return Err(nonfinite_error(&st));
                }
                rho = next_rho(rho, rho_end);
                delta = delta.max(rho);
            }
            continue;
        }
        nonfinite = 0;
        let fopt = st.values[st.kopt];
        let ratio = (fopt - fnew) / pred;
        delta = if ratio <= 0.1 {
            (0.5 * delta).min(snorm)
        } else if ratio <= 0.7 {
            (0.5 * delta).max(snorm)
        } else {
            (0.5 * delta).max(2.0 * snorm)
        };
        if delta <= 1.5 * rho {
            delta = rho;
        }

        // replace the point whose removal best preserves poisedness
        let rel: Vec<f64> = xn.iter().zip(&xo).map(|(a, b)| a - b).collect();
        let mut best_t = None;
        let mut best_score = -1.0;
        let new_is_best = fnew < fopt;
        for t in 0..npt {
            if t == st.kopt && !new_is_best {
                continue;
            }
            let lag = kkt.lagrange(t, &rel).unwrap_or(0.0).abs();
            let dist = sqrt(dist2(&st.points[t], if new_is_best { &xn } else { &xo }));
            let ratio = dist / delta.max(rho);
            let w = (ratio * ratio).max(1.0);
            let score = lag * w;
            if score > best_score {
                best_score = score;
                best_t = Some(t);
            }
        }
        let t = best_t.unwrap_or(if st.kopt == 0 { 1 } else { 0 });
        st.points[t] = xn;
        st.values[t] = fnew;
        if new_is_best {
            st.kopt = t;
        }

        if ratio < 0.1 {
            let (t, far) = st.farthest();
            if far > 2.0 * delta {
                improve_geometry(&mut st, t, delta, rho);
            } else if delta <= rho && snorm <= 2.0 * rho {
                if rho <= rho_end {
                    converged = true;
                    break;
                }
                let old = rho;
                rho = next_rho(rho, rho_end);
                delta = (0.5 * old).max(rho);
            }
        }
    }

    let x = st.xopt().to_vec();
    let value = st.values[st.kopt];
    Ok(BoxResult { x, value, evaluations: st.evals, converged })
}

fn next_rho(rho: f64, rho_end: f64) -> f64 {
    let ratio = rho / rho_end;
    if ratio <= 16.0 {
        rho_end
    } else if ratio <= 250.0 {
        sqrt(rho * rho_end)
    } else {
        0.1 * rho
    }
}

/// Geometry improvement for point `t` on the current set; the model itself
/// is refreshed on the next iteration.
fn improve_geometry<F: FnMut(&[f64]) -> f64>(st: &mut State<'_, F>, t: usize, delta: f64, rho: f64) {
    let xo = st.xopt().to_vec();
    let (_, far) = st.farthest();
    if let Some(kkt) = Kkt::build(&st.points, &xo, far.max(rho)) {
        geometry_step(st, &kkt, t, delta);
    }
}

enum Geometry {
    Moved,
    NoCandidate,
    NonFinite,
}

/// Move interpolation point `t` to a nearby location where its Lagrange
/// function is large.
fn geometry_step<F: FnMut(&[f64]) -> f64>(st: &mut State<'_, F>, kkt: &Kkt, t: usize, delta: f64) -> Geometry {
    let xo = st.xopt().to_vec();
    let d = xo.len();
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut y = xo.clone();
            y[i] += sign * delta;
            candidates.push(y);
        }
    }
    for (k, y) in st.points.iter().enumerate() {
        if k == st.kopt {
            continue;
        }
        let norm = sqrt(dist2(y, &xo));
        if norm > 0.0 {
            for sign in [1.0, -1.0] {
                candidates.push(xo.iter().zip(y).map(|(a, b)| a + sign * delta * (b - a) / norm).collect());
            }
        }
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mut c in candidates {
        st.clamp(&mut c);
        if dist2(&c, &xo) == 0.0 || st.points.iter().enumerate().any(|(k, p)| k != t && dist2(p, &c) == 0.0) {
            continue;
        }
        let rel: Vec<f64> = c.iter().zip(&xo).map(|(a, b)| a - b).collect();
        let lag = kkt.lagrange(t, &rel).unwrap_or(0.0).abs();
        if best.as_ref().is_none_or(|(_, b)| lag > *b) {
            best = Some((c, lag));
        }
    }
    let Some((y, _)) = best else { return Geometry::NoCandidate };
    let v = st.eval(&y);
    if !v.is_finite() {
        return Geometry::NonFinite;
    }
    st.points[t] = y;
    st.values[t] = v;
    if v < st.values[st.kopt] {
        st.kopt = t;
    }
    Geometry::Moved
}

fn nonfinite_error<F>(st: &State<'_, F>) -> Error {
    let mut msg = String::from("objective repeatedly non-finite; last points:");
    for (x, v) in &st.trace {
        msg.push_str(&format!(" {x:?} -> {v};"));
    }
    Error::Optimizer(msg)
}
