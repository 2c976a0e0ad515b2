//! Regularized design matrix `M = λI + Σ x xᵀ` with an incrementally
//! maintained inverse and log-determinant.
//!
//! Matrices are dense, row-major `Vec<f64>`; the dimensions involved here are
//! small (tens), so a full `d × d` layout is simpler than packed storage.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, OfdError, Result};

/// Interval (in updates) of the drift check run in debug builds.
const GUARD_INTERVAL: u64 = 1000;
/// `max |M M⁻¹ - I|` above which the debug guard re-inverts from scratch.
const GUARD_TOLERANCE: f64 = 1e-6;

/// Precision (design) matrix of a ridge regression together with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionState {
    dim: usize,
    m_mat: Vec<f64>,
    m_inv: Vec<f64>,
    log_det: f64,
    updates: u64,
}

impl PrecisionState {
    /// `M = λ I`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be a positive finite real, got {lambda}")));
        }
        let mut m_mat = vec![0.0; dim * dim];
        let mut m_inv = vec![0.0; dim * dim];
        for i in 0..dim {
            m_mat[i * dim + i] = lambda;
            m_inv[i * dim + i] = 1.0 / lambda;
        }
        Ok(Self {
            dim,
            m_mat,
            m_inv,
            log_det: dim as f64 * lambda.ln(),
            updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `M`, row-major.
    pub fn matrix(&self) -> &[f64] {
        &self.m_mat
    }

    /// `M⁻¹`, row-major.
    pub fn inverse(&self) -> &[f64] {
        &self.m_inv
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Number of rank-one updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `M += v vᵀ`, with `M⁻¹` updated by Sherman-Morrison and
    /// `log det M` by the matrix determinant lemma.
    pub fn rank_one_update(&mut self, v: &[f64]) -> Result<()> {
        self.check_len(v)?;
        let d = self.dim;
        let u = self.inv_mul(v);
        let quad: f64 = crate::dot(v, &u);
        let denom = 1.0 + quad;

        // Only the upper triangle is computed; mirroring keeps both matrices
        // exactly symmetric.
        for i in 0..d {
            for j in i..d {
                let m = self.m_mat[i * d + j] + v[i] * v[j];
                self.m_mat[i * d + j] = m;
                self.m_mat[j * d + i] = m;
                let inv = self.m_inv[i * d + j] - u[i] * u[j] / denom;
                self.m_inv[i * d + j] = inv;
                self.m_inv[j * d + i] = inv;
            }
        }
        self.log_det += quad.ln_1p();
        self.updates += 1;

        if cfg!(debug_assertions) && self.updates.is_multiple_of(GUARD_INTERVAL) {
            self.reinvert_if_drifted()?;
        }
        Ok(())
    }

    /// `xᵀ M⁻¹ x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(crate::dot(x, &self.inv_mul(x)).max(0.0))
    }

    /// Weighted norm `‖x‖_{M⁻¹} = sqrt(xᵀ M⁻¹ x)`.
    pub fn inv_norm(&self, x: &[f64]) -> Result<f64> {
        Ok(self.quad_form(x)?.sqrt())
    }

    /// `M⁻¹ x`.
    pub fn inv_mul(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| crate::dot(&self.m_inv[i * d..(i + 1) * d], x))
            .collect()
    }

    /// Draws `mean + scale · C z` with `C Cᵀ = M⁻¹` and `z` standard normal,
    /// i.e. a sample from `Normal(mean, scale² M⁻¹)`.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        &self,
        mean: &[f64],
        scale: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_len(mean)?;
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(invalid(format!("sampling scale must be finite and >= 0, got {scale}")));
        }
        if scale == 0.0 {
            return Ok(mean.to_vec());
        }
        let d = self.dim;
        let chol = cholesky(&self.m_inv, d).map_err(|e| {
            OfdError::Numeric(format!(
                "inverse design matrix lost positive definiteness after {} updates: {e}",
                self.updates
            ))
        })?;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        Ok((0..d)
            .map(|i| mean[i] + scale * crate::dot(&chol[i * d..i * d + i + 1], &z[..=i]))
            .collect())
    }

    /// `max_ij |(M M⁻¹ - I)_ij|`.
    pub fn inverse_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.m_mat[i * d + k] * self.m_inv[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    fn reinvert_if_drifted(&mut self) -> Result<()> {
        if self.inverse_residual() > GUARD_TOLERANCE {
            self.m_inv = cholesky_inverse(&self.m_mat, self.dim)?;
        }
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(invalid(format!(
                "vector length {} does not match dimension {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor `L` (row-major, `L Lᵀ = a`) of a
/// symmetric positive-definite `n × n` matrix.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(invalid(format!("expected {} entries, got {}", n * n, a.len())));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - crate::dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) {
                    return Err(OfdError::Numeric(format!(
                        "non-positive pivot {s:e} at row {i} of {n}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular row-major `L`.
pub fn forward_substitute(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - crate::dot(&l[i * n..i * n + i], &y[..i]);
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular row-major `L`.
pub fn backward_substitute(l: &[f64], n: usize, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn cholesky_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = backward_substitute(&l, n, &forward_substitute(&l, n, &e));
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    Ok(inv)
}
