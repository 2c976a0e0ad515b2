//! Utility estimators whose pointwise error admits a high-probability bound:
//! incremental ridge regression (optimistic and sampled scores) and
//! Gaussian-process regression with an information-gain based width.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OfdError, Result};
use crate::linalg::{cholesky, PrecisionState};

/// Constants of the confidence bounds: noise level `R`, parameter-norm bound
/// `S`, feature-norm bound `L`, failure probability `δ` and ridge penalty `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub noise_r: f64,
    pub param_bound_s: f64,
    pub feature_bound_l: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl ConfidenceParams {
    pub const DEFAULT_LAMBDA: f64 = 0.01;
    pub const DEFAULT_NOISE_R: f64 = 0.1;
    pub const DEFAULT_DELTA: f64 = 0.05;

    /// Defaults for `d`-dimensional features drawn from `(0, 10)^d`:
    /// `S = 1` (unit-norm parameter) and `L = 10 √d`.
    pub fn for_dim(d: usize) -> Self {
        Self {
            noise_r: Self::DEFAULT_NOISE_R,
            param_bound_s: 1.0,
            feature_bound_l: 10.0 * (d as f64).sqrt(),
            delta: Self::DEFAULT_DELTA,
            lambda: Self::DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("param_bound_s", self.param_bound_s),
            ("feature_bound_l", self.feature_bound_l),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.noise_r >= 0.0 && self.noise_r.is_finite()) {
            return Err(invalid(format!("noise_r must be non-negative, got {}", self.noise_r)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Confidence radius `α_t = R √(d log((1 + t L²/λ)/δ)) + √λ S`.
    pub fn alpha(&self, d: usize, t: u64) -> f64 {
        let t = t.max(1) as f64;
        let l2 = self.feature_bound_l * self.feature_bound_l;
        let log_term = ((1.0 + t * l2 / self.lambda) / self.delta).ln();
        self.noise_r * (d as f64 * log_term).sqrt() + self.lambda.sqrt() * self.param_bound_s
    }

    /// Thompson sampling scale `β_t = R √(9 d log(t/δ))`.
    pub fn beta(&self, d: usize, t: u64) -> f64 {
        let t = t.max(1) as f64;
        self.noise_r * (9.0 * d as f64 * (t / self.delta).ln()).sqrt()
    }
}

/// Ridge regression `θ̂ = M⁻¹ b` with `M = λI + Σ x xᵀ`, `b = Σ y x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeState {
    precision: PrecisionState,
    moment: Vec<f64>,
    theta_hat: Vec<f64>,
    n_obs: u64,
}

impl RidgeState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            precision: PrecisionState::new(dim, lambda)?,
            moment: vec![0.0; dim],
            theta_hat: vec![0.0; dim],
            n_obs: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn precision(&self) -> &PrecisionState {
        &self.precision
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn moment(&self) -> &[f64] {
        &self.moment
    }

    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.precision.rank_one_update(x)?;
        for (b, xi) in self.moment.iter_mut().zip(x) {
            *b += y * xi;
        }
        self.theta_hat = self.precision.inv_mul(&self.moment);
        self.n_obs += 1;
        Ok(())
    }

    /// `xᵀ θ̂`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(crate::dot(x, &self.theta_hat))
    }

    /// `xᵀ θ̂ + α ‖x‖_{M⁻¹}` for an explicit radius `α`.
    pub fn optimistic(&self, x: &[f64], alpha: f64) -> Result<f64> {
        Ok(self.predict(x)? + alpha * self.precision.inv_norm(x)?)
    }

    /// Optimistic score at round `t` with radius [`ConfidenceParams::alpha`].
    pub fn ucb_score(&self, params: &ConfidenceParams, t: u64, x: &[f64]) -> Result<f64> {
        self.optimistic(x, params.alpha(self.dim(), t))
    }

    /// Draws `θ̃ ~ Normal(θ̂, β_t² M⁻¹)`.
    pub fn sample_theta<R: Rng + ?Sized>(
        &self,
        params: &ConfidenceParams,
        t: u64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.precision.sample_gaussian(&self.theta_hat, params.beta(self.dim(), t), rng)
    }

    /// `xᵀ θ̃` for a single fresh posterior sample.
    pub fn ts_score<R: Rng + ?Sized>(
        &self,
        params: &ConfidenceParams,
        t: u64,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        self.check_len(x)?;
        Ok(crate::dot(x, &self.sample_theta(params, t, rng)?))
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "feature length {} does not match dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of the GP estimator. Inputs are divided by `input_scale`
/// before the RBF kernel is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    /// RKHS-norm bound `B` of the width multiplier.
    pub bound_b: f64,
    pub input_scale: f64,
}

impl GpParams {
    /// Smallest observation noise variance used; keeps the Gram matrix
    /// invertible when the utility noise is zero.
    pub const MIN_NOISE_VAR: f64 = 1e-6;

    /// Features in `(0, 10)^d` rescaled to the unit cube, lengthscale `0.2 √d`,
    /// unit signal variance, noise variance `R²` and `B = 1`.
    pub fn for_dim(d: usize, noise_r: f64) -> Self {
        Self {
            lengthscale: 0.2 * (d as f64).sqrt(),
            signal_var: 1.0,
            noise_var: (noise_r * noise_r).max(Self::MIN_NOISE_VAR),
            bound_b: 1.0,
            input_scale: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lengthscale", self.lengthscale),
            ("signal_var", self.signal_var),
            ("noise_var", self.noise_var),
            ("input_scale", self.input_scale),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("GP {name} must be positive, got {value}")));
            }
        }
        if !(self.bound_b >= 0.0 && self.bound_b.is_finite()) {
            return Err(invalid(format!("GP bound_b must be non-negative, got {}", self.bound_b)));
        }
        Ok(())
    }
}

/// Observations between full re-factorizations of the Gram matrix.
const GP_REBUILD_INTERVAL: usize = 256;

/// Gaussian-process posterior with an incrementally grown Cholesky factor of
/// `K + σ² I` and running information gain `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    params: GpParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    /// Row `i` holds the first `i + 1` entries of row `i` of the factor.
    chol: Vec<Vec<f64>>,
    /// `L⁻¹ y`.
    whitened: Vec<f64>,
    info_gain: f64,
}

impl GpState {
    pub fn new(params: GpParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: Vec::new(),
            whitened: Vec::new(),
            info_gain: 0.0,
        })
    }

    pub fn params(&self) -> &GpParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Running `γ_t = ½ Σ log(1 + σ²_{s-1}(x_s)/σ²)`.
    pub fn info_gain(&self) -> f64 {
        self.info_gain
    }

    /// Observed inputs, already divided by `input_scale`.
    pub fn scaled_inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.params.input_scale).collect()
    }

    /// RBF kernel on already-scaled inputs.
    pub fn kernel_scaled(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let l = self.params.lengthscale;
        self.params.signal_var * (-sq / (2.0 * l * l)).exp()
    }

    /// `L⁻¹ k(X, x)` for a scaled query.
    fn whiten_cross(&self, xs: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.inputs.len());
        for (i, row) in self.chol.iter().enumerate() {
            let k = self.kernel_scaled(&self.inputs[i], xs);
            let s = k - crate::dot(&row[..i], &v);
            v.push(s / row[i]);
        }
        v
    }

    /// Posterior `(mean, standard deviation)` of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let xs = self.scale(x);
        let v = self.whiten_cross(&xs);
        let mean = crate::dot(&v, &self.whitened);
        let var = self.params.signal_var - crate::dot(&v, &v);
        Ok((mean, var.max(0.0).sqrt()))
    }

    /// Width multiplier `√(2(γ + 1 + log(1/δ))) + B`.
    pub fn width(&self, params: &ConfidenceParams) -> f64 {
        (2.0 * (self.info_gain + 1.0 + (1.0 / params.delta).ln())).sqrt() + self.params.bound_b
    }

    /// `μ(x) + width · σ(x)`.
    pub fn ucb_score(&self, params: &ConfidenceParams, x: &[f64]) -> Result<f64> {
        let (mean, sd) = self.posterior(x)?;
        Ok(mean + self.width(params) * sd)
    }

    /// Joint draw of the latent function at `xs` from the posterior with
    /// covariance inflated by `scale²`.
    pub fn sample_joint<R: Rng + ?Sized>(
        &self,
        xs: &[Vec<f64>],
        scale: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = xs.len();
        let mut scaled = Vec::with_capacity(n);
        let mut whitened = Vec::with_capacity(n);
        for x in xs {
            self.check_dim(x)?;
            let s = self.scale(x);
            whitened.push(self.whiten_cross(&s));
            scaled.push(s);
        }
        let means: Vec<f64> = whitened.iter().map(|v| crate::dot(v, &self.whitened)).collect();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let c = self.kernel_scaled(&scaled[i], &scaled[j]) - crate::dot(&whitened[i], &whitened[j]);
                cov[i * n + j] = c;
                cov[j * n + i] = c;
            }
        }
        let chol = jittered_cholesky(&mut cov, n, self.params.signal_var)?;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Ok((0..n)
            .map(|i| means[i] + scale * crate::dot(&chol[i * n..i * n + i + 1], &z[..=i]))
            .collect())
    }

    /// Appends an observation, extending the factor by one row.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.check_dim(x)?;
        let xs = self.scale(x);
        let v = self.whiten_cross(&xs);
        let prior_var = self.params.signal_var - crate::dot(&v, &v);
        let pivot = prior_var + self.params.noise_var;
        if !(pivot > 0.0) {
            return Err(OfdError::Numeric(format!(
                "GP Gram matrix not positive definite at observation {}",
                self.len() + 1
            )));
        }
        self.info_gain += 0.5 * (prior_var.max(0.0) / self.params.noise_var).ln_1p();
        let diag = pivot.sqrt();
        let w = (y - crate::dot(&v, &self.whitened)) / diag;
        let mut row = v;
        row.push(diag);
        self.chol.push(row);
        self.whitened.push(w);
        self.inputs.push(xs);
        self.targets.push(y);
        if self.len().is_multiple_of(GP_REBUILD_INTERVAL) {
            self.refactor()?;
        }
        Ok(())
    }

    /// Recomputes the factor and whitened targets from scratch.
    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = self.kernel_scaled(&self.inputs[i], &self.inputs[j]);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
            gram[i * n + i] += self.params.noise_var;
        }
        let l = cholesky(&gram, n)?;
        self.chol = (0..n).map(|i| l[i * n..i * n + i + 1].to_vec()).collect();
        let mut w = Vec::with_capacity(n);
        for (i, row) in self.chol.iter().enumerate() {
            let s = self.targets[i] - crate::dot(&row[..i], &w);
            w.push(s / row[i]);
        }
        self.whitened = w;
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.inputs.first() {
            Some(first) if first.len() != x.len() => Err(invalid(format!(
                "feature length {} does not match observed dimension {}",
                x.len(),
                first.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Cholesky of a covariance that may be singular (e.g. duplicate query
/// points); diagonal jitter grows tenfold per retry.
fn jittered_cholesky(cov: &mut [f64], n: usize, signal_var: f64) -> Result<Vec<f64>> {
    let mut jitter = 1e-10 * signal_var;
    for i in 0..n {
        cov[i * n + i] = cov[i * n + i].max(0.0);
    }
    for _ in 0..8 {
        let mut trial = cov.to_vec();
        for i in 0..n {
            trial[i * n + i] += jitter;
        }
        if let Ok(l) = cholesky(&trial, n) {
            return Ok(l);
        }
        jitter *= 10.0;
    }
    Err(OfdError::Numeric("posterior covariance could not be factorized".into()))
}

/// The estimator behind a policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Ridge(RidgeState),
    Gp(GpState),
}

impl Estimator {
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        match self {
            Estimator::Ridge(r) => r.update(x, y),
            Estimator::Gp(g) => g.update(x, y),
        }
    }
}
