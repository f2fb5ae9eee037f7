//! Ordinary-kriging Gaussian process machinery.
//!
//! The constant mean carries an improper uniform prior and is integrated out
//! analytically. With `K` the noisy Gram matrix, `a = 1' K^-1 1` and
//! `Q = K^-1 - K^-1 1 (1' K^-1 1)^-1 1' K^-1`, the integrated log-likelihood
//! of the observations `z` is
//!
//! ```text
//! log pi(z) = -1/2 [ (n-1) log(2 pi) + log|K| + log(1' K^-1 1) + z' Q z ].
//! ```
//!
//! Prediction follows the ordinary-kriging equations with the generalized
//! least-squares mean `beta = (1' K^-1 1)^-1 1' K^-1 z`:
//!
//! ```text
//! m(u)     = beta + k(u)' K^-1 (z - beta 1)
//! C(u, u') = k(u, u') - k(u)' K^-1 k(u')
//!            + (1 - 1' K^-1 k(u)) (1 - 1' K^-1 k(u')) / a
//! ```
//!
//! The predicted distribution is that of the latent process; observation
//! noise is never added here.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cov_matrix_ref, CovFunction};
use crate::linalg::jittered_cholesky;
use crate::prior::{HyperParams, ModelKind};
use crate::rng::Stream;

/// Observations of the multi-fidelity simulator grouped by fidelity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfDataset {
    points: Vec<(Vec<f64>, f64)>,
    z: Vec<f64>,
    levels: Vec<f64>,
    level_of: Vec<usize>,
    bounds: Vec<(f64, f64)>,
}

fn level_index(levels: &[f64], t: f64) -> Option<usize> {
    levels
        .iter()
        .position(|&l| (l - t).abs() <= 1e-12 * l.abs().max(1.0))
}

impl MfDataset {
    /// Validates sizes, level membership and domain membership.
    pub fn new(
        points: Vec<(Vec<f64>, f64)>,
        z: Vec<f64>,
        levels: Vec<f64>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if points.len() != z.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} outputs",
                points.len(),
                z.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least 2 observations (the integrated likelihood is improper for n < 2)"
                    .into(),
            ));
        }
        if levels.is_empty()
            || !levels.iter().all(|&t| t.is_finite() && t > 0.0)
            || !levels.windows(2).all(|w| w[0] > w[1])
        {
            return Err(Error::InvalidArgument(
                "levels must be strictly decreasing and positive".into(),
            ));
        }
        let dim = bounds.len();
        if dim == 0 || !bounds.iter().all(|&(a, b)| a < b) {
            return Err(Error::InvalidArgument("invalid domain bounds".into()));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("outputs must be finite".into()));
        }
        let mut level_of = Vec::with_capacity(points.len());
        for (i, (x, t)) in points.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "point {i} has dimension {} but domain has {dim}",
                    x.len()
                )));
            }
            for (k, &(a, b)) in bounds.iter().enumerate() {
                if !(x[k] >= a && x[k] <= b) {
                    return Err(Error::InvalidArgument(format!(
                        "point {i} coordinate {k} = {} outside [{a}, {b}]",
                        x[k]
                    )));
                }
            }
            match level_index(&levels, *t) {
                Some(s) => level_of.push(s),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "point {i} fidelity {t} is not one of the declared levels"
                    )))
                }
            }
        }
        Ok(Self {
            points,
            z,
            levels,
            level_of,
            bounds,
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn points(&self) -> &[(Vec<f64>, f64)] {
        &self.points
    }

    pub fn outputs(&self) -> &[f64] {
        &self.z
    }

    /// Fidelity levels, sorted `t_1 > ... > t_S`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Lowest fidelity, i.e. the largest observed `t`.
    pub fn t_lf(&self) -> f64 {
        self.levels[0]
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Level ordinal of a fidelity value, if observed.
    pub fn level_index_of(&self, t: f64) -> Option<usize> {
        level_index(&self.levels, t)
    }

    /// Level ordinal per observation.
    pub fn level_of(&self) -> &[usize] {
        &self.level_of
    }

    /// The sub-dataset at one level (used by the single-level baseline).
    pub fn restrict_to_level(&self, s: usize) -> Result<MfDataset> {
        if s >= self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "level index {s} out of range ({} levels)",
                self.levels.len()
            )));
        }
        let mut points = Vec::new();
        let mut z = Vec::new();
        for i in 0..self.n() {
            if self.level_of[i] == s {
                points.push(self.points[i].clone());
                z.push(self.z[i]);
            }
        }
        MfDataset::new(points, z, vec![self.levels[s]], self.bounds.clone())
    }

    /// Per-observation noise variances implied by `theta`.
    fn noise_vector(&self, noise_by_level: &[f64]) -> Result<Vec<f64>> {
        if noise_by_level.len() != self.levels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} noise levels for a dataset with {} levels",
                noise_by_level.len(),
                self.levels.len()
            )));
        }
        Ok(self.level_of.iter().map(|&s| noise_by_level[s]).collect())
    }
}

fn check_model(theta: &HyperParams, data: &MfDataset) -> Result<()> {
    let kind = theta.kind();
    if kind.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {} vs dataset dimension {}",
            kind.dim(),
            data.dim()
        )));
    }
    match kind {
        ModelKind::MultiFidelity { n_levels, .. } => {
            if n_levels != data.levels().len() {
                return Err(Error::DimensionMismatch(format!(
                    "model has {} levels, dataset has {}",
                    n_levels,
                    data.levels().len()
                )));
            }
        }
        ModelKind::SingleLevel { .. } => {
            if data.levels().len() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "single-level model on a dataset with {} levels",
                    data.levels().len()
                )));
            }
        }
    }
    Ok(())
}

struct Factorized {
    cov_fn: CovFunction,
    noise_by_level: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    k_inv_z: DVector<f64>,
    k_inv_one: DVector<f64>,
    one_k_inv_one: f64,
    one_k_inv_z: f64,
    log_det: f64,
}

fn factorize(theta: &HyperParams, data: &MfDataset) -> Result<Factorized> {
    check_model(theta, data)?;
    let cov_fn = theta.cov_function(data.t_lf())?;
    let noise_by_level = theta.noise_variances();
    let noise = data.noise_vector(&noise_by_level)?;
    let k = cov_matrix_ref(&cov_fn, data.points(), &noise)?;
    let (chol, jitter) = jittered_cholesky(&k)?;

    let z = DVector::from_column_slice(data.outputs());
    let one = DVector::from_element(data.n(), 1.0);
    let k_inv_z = chol.solve(&z);
    let k_inv_one = chol.solve(&one);
    let one_k_inv_one = one.dot(&k_inv_one);
    let one_k_inv_z = one.dot(&k_inv_z);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    if !(one_k_inv_one > 0.0) || !log_det.is_finite() {
        return Err(Error::ModelEvaluation(format!(
            "degenerate kriging system (1'K^-1 1 = {one_k_inv_one}, log|K| = {log_det})"
        )));
    }
    Ok(Factorized {
        cov_fn,
        noise_by_level,
        chol,
        jitter,
        k_inv_z,
        k_inv_one,
        one_k_inv_one,
        one_k_inv_z,
        log_det,
    })
}

/// Log marginal density of the observations with the constant mean
/// integrated out under its improper uniform prior.
pub fn integrated_log_likelihood(theta: &HyperParams, data: &MfDataset) -> Result<f64> {
    let f = factorize(theta, data)?;
    let z = DVector::from_column_slice(data.outputs());
    let z_k_inv_z = z.dot(&f.k_inv_z);
    let quad = z_k_inv_z - f.one_k_inv_z * f.one_k_inv_z / f.one_k_inv_one;
    let n = data.n() as f64;
    let ll = -0.5
        * ((n - 1.0) * (2.0 * std::f64::consts::PI).ln()
            + f.log_det
            + f.one_k_inv_one.ln()
            + quad);
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::ModelEvaluation(format!(
            "non-finite integrated log-likelihood ({ll})"
        )))
    }
}

/// Factorized kriging state for prediction and joint sampling.
///
/// Immutable after [`fit`]; prediction and sampling only read from it.
pub struct GpPosterior {
    data: MfDataset,
    cov_fn: CovFunction,
    noise_by_level: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    k_inv_one: DVector<f64>,
    one_k_inv_one: f64,
    beta_hat: f64,
    /// `K^-1 (z - beta 1)`
    alpha: DVector<f64>,
}

/// Fit the kriging state for fixed hyper-parameters.
pub fn fit(theta: &HyperParams, data: &MfDataset) -> Result<GpPosterior> {
    let f = factorize(theta, data)?;
    let beta_hat = f.one_k_inv_z / f.one_k_inv_one;
    let alpha = &f.k_inv_z - &f.k_inv_one * beta_hat;
    Ok(GpPosterior {
        data: data.clone(),
        cov_fn: f.cov_fn,
        noise_by_level: f.noise_by_level,
        chol: f.chol,
        jitter: f.jitter,
        k_inv_one: f.k_inv_one,
        one_k_inv_one: f.one_k_inv_one,
        beta_hat,
        alpha,
    })
}

impl GpPosterior {
    /// Generalized least-squares estimate of the constant mean.
    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    /// Diagonal jitter added to make the Gram matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn data(&self) -> &MfDataset {
        &self.data
    }

    /// Noise variance at a declared fidelity level.
    pub fn noise_at_level(&self, s: usize) -> Option<f64> {
        self.noise_by_level.get(s).copied()
    }

    /// Lower Cholesky factor of the noisy Gram matrix.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    fn cross_cov(&self, targets: &[(Vec<f64>, f64)]) -> Result<DMatrix<f64>> {
        let n = self.data.n();
        let m = targets.len();
        let mut kx = DMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                let (xi, ti) = &self.data.points()[i];
                kx[(i, j)] = self.cov_fn.cov(xi, *ti, &targets[j].0, targets[j].1)?;
            }
        }
        Ok(kx)
    }

    /// Posterior mean and covariance of the latent process at `targets`.
    pub fn predict(&self, targets: &[(Vec<f64>, f64)]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("no prediction targets".into()));
        }
        for (x, t) in targets {
            if x.len() != self.data.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "target dimension {} vs dataset dimension {}",
                    x.len(),
                    self.data.dim()
                )));
            }
            if matches!(self.cov_fn, CovFunction::MultiFidelity(_))
                && !(*t > 0.0 && *t <= self.data.t_lf())
            {
                return Err(Error::InvalidArgument(format!(
                    "target fidelity {t} outside (0, {}]",
                    self.data.t_lf()
                )));
            }
        }
        let m = targets.len();
        let kx = self.cross_cov(targets)?;
        let mean = DVector::from_fn(m, |j, _| self.beta_hat + kx.column(j).dot(&self.alpha));

        let mut sxx = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.cov_fn.cov(
                    &targets[i].0,
                    targets[i].1,
                    &targets[j].0,
                    targets[j].1,
                )?;
                sxx[(i, j)] = v;
                sxx[(j, i)] = v;
            }
        }
        let w = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::ModelEvaluation("triangular solve failed".into()))?;
        let u = DVector::from_fn(m, |j, _| 1.0 - self.k_inv_one.dot(&kx.column(j)));
        let mut cov = sxx - w.transpose() * w + &u * u.transpose() / self.one_k_inv_one;
        // symmetrize rounding noise
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok((mean, cov))
    }

    /// `q` joint draws of the latent process at `targets`, one row per draw.
    pub fn sample_paths(
        &self,
        targets: &[(Vec<f64>, f64)],
        q: usize,
        rng: &mut Stream,
    ) -> Result<DMatrix<f64>> {
        if q < 1 {
            return Err(Error::InvalidArgument("need q >= 1 sample paths".into()));
        }
        let (mean, cov) = self.predict(targets)?;
        let m = targets.len();
        let mut prior_var_max: f64 = 0.0;
        for (x, t) in targets {
            prior_var_max = prior_var_max.max(self.cov_fn.cov(x, *t, x, *t)?);
        }
        let max_diag = cov.diagonal().max();
        let mut out = DMatrix::zeros(q, m);
        if max_diag <= 1e-12 * prior_var_max {
            // numerically degenerate posterior: every path is the mean
            for l in 0..q {
                for j in 0..m {
                    out[(l, j)] = mean[j];
                }
            }
            return Ok(out);
        }
        let (chol, _) = jittered_cholesky(&cov)?;
        let l_factor = chol.l();
        for l in 0..q {
            let zvec = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let path = &mean + &l_factor * zvec;
            for j in 0..m {
                out[(l, j)] = path[j];
            }
        }
        Ok(out)
    }
}
