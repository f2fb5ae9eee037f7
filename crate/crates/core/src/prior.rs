//! Log-scale multivariate normal prior over the hyper-parameters.
//!
//! The hyper-parameter vector is worked with in log scale,
//! `l_theta = log(theta)`. For the multi-fidelity model with `d` input
//! dimensions and `S` fidelity levels the layout is
//!
//! ```text
//! (l_sigma0sq, l_rho0_1..d, l_G, l_rhoeps_1..d, l_L, l_lambda_1..S)
//! ```
//!
//! of length `D = 2d + 3 + S`. The prior is weakly informative: independent
//! normals on the kernel entries and a strongly correlated normal block on
//! the log noise variances, so that the prior uncertainty on the difference
//! of two log noise variances is small relative to their marginal
//! uncertainty. The single-level baseline keeps only
//! `(l_sigma0sq, l_rho0_1..d, l_lambda)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{CovFunction, KernelParams, StationaryParams};
use crate::rng::Stream;

/// Which covariance model a hyper-parameter vector parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Multi-fidelity model: `d` input dimensions, `S` observed levels.
    MultiFidelity { dim: usize, n_levels: usize },
    /// Stationary single-level model on the highest-fidelity data.
    SingleLevel { dim: usize },
}

impl ModelKind {
    pub fn param_len(&self) -> usize {
        match *self {
            ModelKind::MultiFidelity { dim, n_levels } => 2 * dim + 3 + n_levels,
            ModelKind::SingleLevel { dim } => dim + 2,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ModelKind::MultiFidelity { dim, .. } | ModelKind::SingleLevel { dim } => dim,
        }
    }

    pub fn n_levels(&self) -> usize {
        match *self {
            ModelKind::MultiFidelity { n_levels, .. } => n_levels,
            ModelKind::SingleLevel { .. } => 1,
        }
    }

    /// Index of the first log noise variance.
    pub fn noise_offset(&self) -> usize {
        match *self {
            ModelKind::MultiFidelity { dim, .. } => 2 * dim + 3,
            ModelKind::SingleLevel { dim } => dim + 1,
        }
    }

    /// Names of the log-scale coordinates, in layout order (used for CSV
    /// headers and diagnostics).
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = vec!["l_sigma0_sq".to_string()];
        match *self {
            ModelKind::MultiFidelity { dim, n_levels } => {
                for k in 0..dim {
                    names.push(format!("l_rho0_{}", k + 1));
                }
                names.push("l_g".to_string());
                for k in 0..dim {
                    names.push(format!("l_rho_eps_{}", k + 1));
                }
                names.push("l_degree".to_string());
                for s in 0..n_levels {
                    names.push(format!("l_lambda_{}", s + 1));
                }
            }
            ModelKind::SingleLevel { dim } => {
                for k in 0..dim {
                    names.push(format!("l_rho0_{}", k + 1));
                }
                names.push("l_lambda_1".to_string());
            }
        }
        names
    }
}

/// Hyper-parameter vector in log scale plus layout metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    kind: ModelKind,
    log_theta: DVector<f64>,
}

impl HyperParams {
    /// Wrap a log-scale vector; the natural-scale view must be finite.
    pub fn new(kind: ModelKind, log_theta: DVector<f64>) -> Result<Self> {
        if log_theta.len() != kind.param_len() {
            return Err(Error::DimensionMismatch(format!(
                "hyper-parameter vector of length {} for a model expecting {}",
                log_theta.len(),
                kind.param_len()
            )));
        }
        if !log_theta.iter().all(|v| v.is_finite() && v.exp().is_finite()) {
            return Err(Error::ModelEvaluation(
                "hyper-parameters are not finite in natural scale".into(),
            ));
        }
        Ok(Self { kind, log_theta })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn log_vector(&self) -> &DVector<f64> {
        &self.log_theta
    }

    /// Natural-scale noise variances, one per level.
    pub fn noise_variances(&self) -> Vec<f64> {
        let off = self.kind.noise_offset();
        (0..self.kind.n_levels())
            .map(|s| self.log_theta[off + s].exp())
            .collect()
    }

    /// Covariance function in natural scale. `t_lf` is the lowest fidelity
    /// of the dataset the kernel will be evaluated on.
    pub fn cov_function(&self, t_lf: f64) -> Result<CovFunction> {
        let l = &self.log_theta;
        match self.kind {
            ModelKind::MultiFidelity { dim, .. } => {
                let rho0 = (0..dim).map(|k| l[1 + k].exp()).collect();
                let rho_eps = (0..dim).map(|k| l[dim + 2 + k].exp()).collect();
                Ok(CovFunction::MultiFidelity(KernelParams::new(
                    l[0].exp(),
                    rho0,
                    l[dim + 1].exp(),
                    rho_eps,
                    l[2 * dim + 2].exp(),
                    t_lf,
                )?))
            }
            ModelKind::SingleLevel { dim } => {
                let rho0 = (0..dim).map(|k| l[1 + k].exp()).collect();
                Ok(CovFunction::SingleLevel(StationaryParams::new(
                    l[0].exp(),
                    rho0,
                )?))
            }
        }
    }
}

/// Multivariate normal prior specification over the log hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: ModelKind,
    /// Prior mean of `l_theta`.
    pub mean: DVector<f64>,
    /// Prior covariance of `l_theta`.
    pub cov: DMatrix<f64>,
    /// Correlation between two log noise variances (multi-fidelity only).
    pub noise_correlation: f64,
    /// Approximate output range the scale entries were derived from.
    pub r_out: f64,
    /// Input domain, one `(a_k, b_k)` interval per dimension.
    pub bounds: Vec<(f64, f64)>,
}

fn check_bounds(dim: usize, bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{} bounds for dimension {}",
            bounds.len(),
            dim
        )));
    }
    if !bounds.iter().all(|&(a, b)| a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(
            "domain bounds must be finite with a_k < b_k".into(),
        ));
    }
    Ok(())
}

/// Default weakly-informative prior for the multi-fidelity model,
/// with noise correlation `c = 0.99`.
pub fn default_prior(d: usize, s: usize, r_out: f64, bounds: &[(f64, f64)]) -> Result<PriorSpec> {
    default_prior_with_correlation(d, s, r_out, bounds, 0.99)
}

/// As [`default_prior`] with an explicit noise correlation `c` in `[0, 1)`.
pub fn default_prior_with_correlation(
    d: usize,
    s: usize,
    r_out: f64,
    bounds: &[(f64, f64)],
    c: f64,
) -> Result<PriorSpec> {
    if d < 1 || s < 1 {
        return Err(Error::InvalidConfig(format!(
            "need d >= 1 and S >= 1, got d = {d}, S = {s}"
        )));
    }
    if !(r_out.is_finite() && r_out > 0.0) {
        return Err(Error::InvalidConfig(format!("r_out must be positive, got {r_out}")));
    }
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidConfig(format!(
            "noise correlation must be in [0, 1) (c = 1 makes the prior singular), got {c}"
        )));
    }
    check_bounds(d, bounds)?;

    let kind = ModelKind::MultiFidelity { dim: d, n_levels: s };
    let n = kind.param_len();
    let log_scale_mean = 2.0 * (r_out / 100.0).ln();
    let sd_100 = 100.0f64.ln();
    let sd_10 = 10.0f64.ln();
    let sd_3 = 3.0f64.ln();

    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    mean[0] = log_scale_mean;
    cov[(0, 0)] = sd_100 * sd_100;
    for k in 0..d {
        let half_range = ((bounds[k].1 - bounds[k].0) / 2.0).ln();
        mean[1 + k] = half_range;
        cov[(1 + k, 1 + k)] = sd_10 * sd_10;
        mean[d + 2 + k] = half_range;
        cov[(d + 2 + k, d + 2 + k)] = sd_10 * sd_10;
    }
    mean[d + 1] = 0.0; // log G centered at log(1)
    cov[(d + 1, d + 1)] = sd_100 * sd_100;
    mean[2 * d + 2] = 4.0f64.ln();
    cov[(2 * d + 2, 2 * d + 2)] = sd_3 * sd_3;
    let off = kind.noise_offset();
    for i in 0..s {
        mean[off + i] = log_scale_mean;
        for j in 0..s {
            cov[(off + i, off + j)] = sd_100 * sd_100 * if i == j { 1.0 } else { c };
        }
    }

    Ok(PriorSpec {
        kind,
        mean,
        cov,
        noise_correlation: c,
        r_out,
        bounds: bounds.to_vec(),
    })
}

/// Prior for the single-level baseline: the same scale and range entries,
/// with the error-process parameters dropped and a single noise variance.
pub fn single_level_prior(d: usize, r_out: f64, bounds: &[(f64, f64)]) -> Result<PriorSpec> {
    if d < 1 {
        return Err(Error::InvalidConfig("need d >= 1".into()));
    }
    if !(r_out.is_finite() && r_out > 0.0) {
        return Err(Error::InvalidConfig(format!("r_out must be positive, got {r_out}")));
    }
    check_bounds(d, bounds)?;
    let kind = ModelKind::SingleLevel { dim: d };
    let n = kind.param_len();
    let log_scale_mean = 2.0 * (r_out / 100.0).ln();
    let sd_100 = 100.0f64.ln();
    let sd_10 = 10.0f64.ln();

    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    mean[0] = log_scale_mean;
    cov[(0, 0)] = sd_100 * sd_100;
    for k in 0..d {
        mean[1 + k] = ((bounds[k].1 - bounds[k].0) / 2.0).ln();
        cov[(1 + k, 1 + k)] = sd_10 * sd_10;
    }
    mean[d + 1] = log_scale_mean;
    cov[(d + 1, d + 1)] = sd_100 * sd_100;

    Ok(PriorSpec {
        kind,
        mean,
        cov,
        noise_correlation: 0.0,
        r_out,
        bounds: bounds.to_vec(),
    })
}

impl PriorSpec {
    pub fn param_len(&self) -> usize {
        self.kind.param_len()
    }

    /// Marginal prior standard deviations of `l_theta`.
    pub fn marginal_sd(&self) -> DVector<f64> {
        self.cov.diagonal().map(f64::sqrt)
    }

    /// Exact multivariate normal log-density of `h` (normalization included).
    pub fn log_prior_density(&self, h: &HyperParams) -> Result<f64> {
        if h.kind() != self.kind {
            return Err(Error::DimensionMismatch(
                "hyper-parameters and prior describe different models".into(),
            ));
        }
        self.log_density_of(h.log_vector())
    }

    /// Log-density of a raw log-scale vector.
    pub fn log_density_of(&self, l_theta: &DVector<f64>) -> Result<f64> {
        let n = self.param_len();
        if l_theta.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "vector length {} vs prior dimension {}",
                l_theta.len(),
                n
            )));
        }
        let chol = nalgebra::Cholesky::new(self.cov.clone()).ok_or_else(|| {
            Error::InvalidConfig("prior covariance is not positive definite".into())
        })?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let centered = l_theta - &self.mean;
        // quadratic form through the factor: || L^-1 (x - mu) ||^2
        let w = chol.l_dirty().solve_lower_triangular(&centered).ok_or_else(|| {
            Error::InvalidConfig("prior covariance factor is singular".into())
        })?;
        let quad = w.norm_squared();
        Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }

    /// `n` iid draws from the prior, in log scale.
    pub fn sample_prior(&self, n: usize, rng: &mut Stream) -> Result<Vec<HyperParams>> {
        if n < 1 {
            return Err(Error::InvalidArgument("need n >= 1 draws".into()));
        }
        let chol = nalgebra::Cholesky::new(self.cov.clone()).ok_or_else(|| {
            Error::InvalidConfig("prior covariance is not positive definite".into())
        })?;
        let l = chol.l();
        let dim = self.param_len();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            out.push(HyperParams::new(self.kind, &self.mean + &l * z)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LN_2PI: f64 = 1.8378770664093453;

    fn prior_osc() -> PriorSpec {
        default_prior(2, 5, 40.0, &[(0.0, 30.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn default_prior_mean_entries() {
        let p = prior_osc();
        assert_eq!(p.param_len(), 12);
        // log(40^2 / 100^2) = log(0.16)
        assert_relative_eq!(p.mean[0], -1.8325814637483102, max_relative = 1e-14);
        assert_relative_eq!(p.mean[1], 15.0f64.ln()); // (30 - 0)/2
        assert_relative_eq!(p.mean[2], 0.5f64.ln());
        assert_eq!(p.mean[3], 0.0); // log G
        assert_relative_eq!(p.mean[4], 15.0f64.ln());
        assert_relative_eq!(p.mean[5], 0.5f64.ln());
        assert_relative_eq!(p.mean[6], 4.0f64.ln());
        for s in 0..5 {
            assert_relative_eq!(p.mean[7 + s], -1.8325814637483102, max_relative = 1e-14);
        }
    }

    #[test]
    fn default_prior_noise_block() {
        let p = prior_osc();
        let v = 100.0f64.ln().powi(2);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { v } else { 0.99 * v };
                assert_relative_eq!(p.cov[(7 + i, 7 + j)], expect, max_relative = 1e-14);
            }
        }
        // Var[l_lambda_s - l_lambda_s'] = 2 (1 - c) log(100)^2
        let var_diff = p.cov[(7, 7)] + p.cov[(8, 8)] - 2.0 * p.cov[(7, 8)];
        assert_relative_eq!(var_diff, 2.0 * 0.01 * v, max_relative = 1e-10);
    }

    #[test]
    fn noise_block_eigenvalues() {
        let p = prior_osc();
        let block = p.cov.view((7, 7), (5, 5)).into_owned();
        let mut eig: Vec<f64> = block.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let v = 100.0f64.ln().powi(2);
        for e in &eig[..4] {
            assert_relative_eq!(*e, v * 0.01, max_relative = 1e-10);
        }
        assert_relative_eq!(eig[4], v * (1.0 + 4.0 * 0.99), max_relative = 1e-10);
    }

    #[test]
    fn unit_correlation_rejected() {
        assert!(default_prior_with_correlation(2, 5, 40.0, &[(0.0, 30.0), (0.0, 1.0)], 1.0).is_err());
    }

    #[test]
    fn log_density_at_mode() {
        let p = prior_osc();
        let h = HyperParams::new(p.kind, p.mean.clone()).unwrap();
        let chol = nalgebra::Cholesky::new(p.cov.clone()).unwrap();
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let expect = -0.5 * (12.0 * LN_2PI + log_det);
        assert_relative_eq!(p.log_prior_density(&h).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn log_density_one_sigma_shift() {
        let p = prior_osc();
        // l_L is independent of every other coordinate
        let mut v = p.mean.clone();
        v[6] += 3.0f64.ln();
        let h = HyperParams::new(p.kind, v).unwrap();
        let mode = p
            .log_prior_density(&HyperParams::new(p.kind, p.mean.clone()).unwrap())
            .unwrap();
        assert_relative_eq!(p.log_prior_density(&h).unwrap(), mode - 0.5, max_relative = 1e-12);
    }

    #[test]
    fn log_density_matches_dense_oracle() {
        let p = prior_osc();
        let mut rng = crate_stream(3);
        for _ in 0..20 {
            let h = &p.sample_prior(1, &mut rng).unwrap()[0];
            // dense oracle: explicit inverse and determinant
            let inv = p.cov.clone().try_inverse().unwrap();
            let det = p.cov.determinant();
            let c = h.log_vector() - &p.mean;
            let quad = (c.transpose() * inv * &c)[(0, 0)];
            let expect = -0.5 * (12.0 * LN_2PI + det.ln() + quad);
            assert_relative_eq!(p.log_prior_density(h).unwrap(), expect, epsilon = 1e-10);
        }
    }

    fn crate_stream(seed: u64) -> crate::rng::Stream {
        crate::rng::stream(seed, &[])
    }

    #[test]
    fn sample_prior_moments() {
        let p = prior_osc();
        let mut rng = crate_stream(9);
        let draws = p.sample_prior(100_000, &mut rng).unwrap();
        // empirical mean of l_L within 4 SE of log 4
        let l_vals: Vec<f64> = draws.iter().map(|h| h.log_vector()[6]).collect();
        let mean = l_vals.iter().sum::<f64>() / l_vals.len() as f64;
        let se = 3.0f64.ln() / (l_vals.len() as f64).sqrt();
        assert!((mean - 4.0f64.ln()).abs() < 4.0 * se);

        // noise coordinates correlated at ~0.99
        let a: Vec<f64> = draws.iter().map(|h| h.log_vector()[7]).collect();
        let b: Vec<f64> = draws.iter().map(|h| h.log_vector()[9]).collect();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let (mut caa, mut cbb, mut cab) = (0.0, 0.0, 0.0);
        for i in 0..a.len() {
            caa += (a[i] - ma) * (a[i] - ma);
            cbb += (b[i] - mb) * (b[i] - mb);
            cab += (a[i] - ma) * (b[i] - mb);
        }
        let corr = cab / (caa * cbb).sqrt();
        assert!((corr - 0.99).abs() < 0.01, "noise correlation {corr}");
    }

    #[test]
    fn sample_prior_deterministic() {
        let p = prior_osc();
        let a = p.sample_prior(5, &mut crate_stream(4)).unwrap();
        let b = p.sample_prior(5, &mut crate_stream(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyper_params_layout_round_trip() {
        let p = prior_osc();
        let h = HyperParams::new(p.kind, p.mean.clone()).unwrap();
        let cov = h.cov_function(1.0).unwrap();
        match cov {
            CovFunction::MultiFidelity(k) => {
                assert_relative_eq!(k.sigma0_sq, 0.16, max_relative = 1e-12);
                assert_relative_eq!(k.rho0[0], 15.0, max_relative = 1e-12);
                assert_relative_eq!(k.rho0[1], 0.5, max_relative = 1e-12);
                assert_relative_eq!(k.g_ratio, 1.0, max_relative = 1e-12);
                assert_relative_eq!(k.degree_l, 4.0, max_relative = 1e-12);
            }
            _ => panic!("expected multi-fidelity kernel"),
        }
        let noise = h.noise_variances();
        assert_eq!(noise.len(), 5);
        assert_relative_eq!(noise[0], 0.16, max_relative = 1e-12);
    }

    #[test]
    fn single_level_prior_layout() {
        let p = single_level_prior(2, 40.0, &[(0.0, 30.0), (0.0, 1.0)]).unwrap();
        assert_eq!(p.param_len(), 4);
        let h = HyperParams::new(p.kind, p.mean.clone()).unwrap();
        match h.cov_function(0.01).unwrap() {
            CovFunction::SingleLevel(s) => {
                assert_relative_eq!(s.sigma0_sq, 0.16, max_relative = 1e-12);
                assert_relative_eq!(s.rho0[0], 15.0, max_relative = 1e-12);
            }
            _ => panic!("expected single-level kernel"),
        }
        assert_eq!(h.noise_variances().len(), 1);
    }

    #[test]
    fn overflowing_log_params_rejected() {
        let p = prior_osc();
        let mut v = p.mean.clone();
        v[0] = 1e4; // exp overflows
        assert!(HyperParams::new(p.kind, v).is_err());
    }
}
