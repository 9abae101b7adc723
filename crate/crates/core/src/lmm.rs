//! Variance-component parameterization and covariance kernels of the
//! two-level model `Y_i = X_i β + Z_i b_i + ε_i`, `b_i ~ N(0, σ² V(θ))`.
//!
//! The group covariance is `σ² Ξ_i` with `Ξ_i = I + Z_i V Z_iᵀ`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::math::ln;

/// Upper bound on diagonal entries of the relative covariance factor.
pub const THETA_DIAG_MAX: f64 = 100.0;
/// Bound on the magnitude of off-diagonal entries of the factor.
pub const THETA_OFFDIAG_MAX: f64 = 100.0;
/// Determinants of 2×2 blocks below this are treated as singular.
pub const SINGULAR_DET: f64 = 1e-14;

/// Lower-triangular factor `L` of `V(θ) = L Lᵀ`, block diagonal with one
/// block per independent random-effect group.
///
/// Only the free entries are stored: for each block, its lower triangle in
/// column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParam {
    blocks: Vec<usize>,
    values: Vec<f64>,
}

fn block_params(s: usize) -> usize {
    s * (s + 1) / 2
}

impl ThetaParam {
    pub fn new(blocks: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if blocks.contains(&0) {
            return Err(Error::InvalidArgument("empty covariance block".into()));
        }
        let need: usize = blocks.iter().map(|&s| block_params(s)).sum();
        if values.len() != need {
            return Err(Error::InvalidArgument(format!(
                "theta has {} values, block structure needs {need}",
                values.len()
            )));
        }
        let theta = ThetaParam { blocks, values };
        for (i, &v) in theta.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("theta[{i}] is not finite")));
            }
            if theta.is_diagonal(i) && v < 0.0 {
                return Err(Error::InvalidArgument(format!("diagonal theta[{i}] = {v} is negative")));
            }
        }
        Ok(theta)
    }

    /// Factor with every diagonal entry equal to `d` and zero off-diagonals.
    pub fn diagonal(blocks: Vec<usize>, d: f64) -> Self {
        let mut values = Vec::new();
        for &s in &blocks {
            for c in 0..s {
                for r in c..s {
                    values.push(if r == c { d } else { 0.0 });
                }
            }
        }
        ThetaParam { blocks, values }
    }

    pub fn q(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    /// Same block structure, new free values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        ThetaParam::new(self.blocks.clone(), values.to_vec())
    }

    /// Row/column of free parameter `idx` within the full `q × q` factor.
    pub fn position(&self, idx: usize) -> (usize, usize) {
        let mut offset = 0;
        let mut base = 0;
        for &s in &self.blocks {
            let n = block_params(s);
            if idx < base + n {
                let mut local = idx - base;
                for c in 0..s {
                    let len = s - c;
                    if local < len {
                        return (offset + c + local, offset + c);
                    }
                    local -= len;
                }
            }
            base += n;
            offset += s;
        }
        panic!("theta index {idx} out of range");
    }

    pub fn is_diagonal(&self, idx: usize) -> bool {
        let (r, c) = self.position(idx);
        r == c
    }

    /// Box bounds for the free parameters.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.n_params())
            .map(|i| if self.is_diagonal(i) { (0.0, THETA_DIAG_MAX) } else { (-THETA_OFFDIAG_MAX, THETA_OFFDIAG_MAX) })
            .unzip()
    }

    /// Smallest diagonal entry of the factor.
    pub fn min_diagonal(&self) -> f64 {
        (0..self.n_params()).filter(|&i| self.is_diagonal(i)).map(|i| self.values[i]).fold(f64::INFINITY, f64::min)
    }

    /// The full `q × q` lower-triangular factor.
    pub fn lower_factor(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut l = DMatrix::zeros(q, q);
        for (i, &v) in self.values.iter().enumerate() {
            let (r, c) = self.position(i);
            l[(r, c)] = v;
        }
        l
    }

    /// All `q(q+1)/2` lower-triangle entries of the factor in column-major
    /// order, with structural zeros between blocks.
    pub fn entries(&self) -> Vec<f64> {
        let l = self.lower_factor();
        lower_triangle(&l)
    }
}

/// Lower triangle of a square matrix in column-major order.
pub fn lower_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let q = m.nrows();
    let mut out = Vec::with_capacity(q * (q + 1) / 2);
    for c in 0..q {
        for r in c..q {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Relative covariance `V(θ) = L Lᵀ`.
pub fn theta_to_v(theta: &ThetaParam) -> DMatrix<f64> {
    let l = theta.lower_factor();
    let mut v = &l * l.transpose();
    // exact zeros across independent blocks
    let mut offset = Vec::with_capacity(theta.blocks.len());
    let mut o = 0;
    for &s in &theta.blocks {
        offset.push((o, o + s));
        o += s;
    }
    for &(a0, a1) in &offset {
        for &(b0, b1) in &offset {
            if a0 != b0 {
                v.view_mut((a0, b0), (a1 - a0, b1 - b0)).fill(0.0);
            }
        }
    }
    v
}

/// Symmetric 2×2 matrix `[[a, b], [b, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { a: 1.0, b: 0.0, d: 1.0 };

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.b
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.a, self.b, self.b, self.d])
    }

    #[inline]
    pub fn quad(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        u[0] * (self.a * v[0] + self.b * v[1]) + u[1] * (self.b * v[0] + self.d * v[1])
    }
}

/// `Ξ = I₂ + [z_j; z_k] V [z_j; z_k]ᵀ` for one within-group pair.
pub fn pair_xi(v: &DMatrix<f64>, z_j: &[f64], z_k: &[f64]) -> Sym2 {
    let q = v.nrows();
    debug_assert!(z_j.len() == q && z_k.len() == q && v.ncols() == q);
    let mut a = 1.0;
    let mut b = 0.0;
    let mut d = 1.0;
    for r in 0..q {
        for c in 0..q {
            let vrc = v[(r, c)];
            a += z_j[r] * vrc * z_j[c];
            b += z_j[r] * vrc * z_k[c];
            d += z_k[r] * vrc * z_k[c];
        }
    }
    Sym2 { a, b, d }
}

/// `Ξ` from the factor: with `u = Lᵀ z_j`, `w = Lᵀ z_k`,
/// `Ξ = [[1 + u·u, u·w], [u·w, 1 + w·w]]`.
#[inline]
pub(crate) fn pair_xi_factored(u: &[f64], w: &[f64]) -> Sym2 {
    let mut a = 1.0;
    let mut b = 0.0;
    let mut d = 1.0;
    for (x, y) in u.iter().zip(w) {
        a += x * x;
        b += x * y;
        d += y * y;
    }
    Sym2 { a, b, d }
}

/// Log-determinant and inverse of a 2×2 block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernel {
    pub logdet: f64,
    pub inv: Sym2,
}

impl PairKernel {
    /// Inverse as `[a, b, b, d]` (row-major).
    pub fn inverse4(&self) -> [f64; 4] {
        [self.inv.a, self.inv.b, self.inv.b, self.inv.d]
    }
}

/// Closed-form `log|Ξ|` and `Ξ⁻¹` for a symmetric 2×2 block.
#[inline]
pub fn pair_kernel(xi: Sym2) -> Result<PairKernel> {
    let det = xi.det();
    if !(det > SINGULAR_DET) || !det.is_finite() {
        return Err(Error::SingularKernel(det));
    }
    let s = 1.0 / det;
    Ok(PairKernel { logdet: ln(det), inv: Sym2 { a: xi.d * s, b: -xi.b * s, d: xi.a * s } })
}

/// Whole-group `Ξ_i = I + Z_i V Z_iᵀ` held as a dense Cholesky factorization.
#[derive(Debug, Clone)]
pub struct GroupXi {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
}

impl GroupXi {
    pub fn new(v: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Self> {
        let m = z.nrows();
        if m == 0 {
            return Err(Error::InvalidArgument("empty group".into()));
        }
        let xi = DMatrix::identity(m, m) + z * v * z.transpose();
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entries in group covariance".into()));
        }
        let chol = Cholesky::new(xi)
            .ok_or_else(|| Error::InvalidArgument("group covariance is not positive definite".into()))?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| ln(*d)).sum::<f64>();
        Ok(GroupXi { chol, logdet })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}
