//! Multi-fidelity covariance function.
//!
//! The latent simulator response is modeled as an ideal process plus a
//! numerical-error process,
//!
//! ```text
//! cov((x, t), (x', t')) = c0(x - x') + r(t, t') * c_eps(x - x'),
//! ```
//!
//! where `c0` and `c_eps` are anisotropic Matern 5/2 covariances,
//!
//! ```text
//! c0(h)    = sigma0^2     * M52(||h / rho0||),
//! c_eps(h) = sigma0^2 * G * M52(||h / rho_eps||),
//! M52(h)   = (1 + sqrt(5) h + 5/3 h^2) exp(-sqrt(5) h),
//! ```
//!
//! and `r` is the distorted Brownian covariance in the fidelity direction,
//!
//! ```text
//! r(t, t') = (min(t, t') / t_lf)^L,
//! ```
//!
//! with `t_lf` the lowest (largest-`t`) observed fidelity, so that
//! `r <= 1` and the error process vanishes at `t = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matern 5/2 correlation, `(1 + sqrt(5) h + 5/3 h^2) exp(-sqrt(5) h)`.
///
/// Strictly decreasing on `h >= 0`, equal to 1 only at `h = 0`.
pub fn matern52(h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "matern52 requires h >= 0, got {h}"
        )));
    }
    let s = 5.0f64.sqrt() * h;
    Ok((1.0 + s + 5.0 / 3.0 * h * h) * (-s).exp())
}

/// Anisotropically scaled distance `sqrt(sum_k ((x_k - x2_k) / rho_k)^2)`.
pub fn scaled_distance(x: &[f64], x2: &[f64], rho: &[f64]) -> Result<f64> {
    if x.len() != x2.len() || x.len() != rho.len() {
        return Err(Error::DimensionMismatch(format!(
            "scaled_distance: |x|={}, |x2|={}, |rho|={}",
            x.len(),
            x2.len(),
            rho.len()
        )));
    }
    let mut acc = 0.0;
    for k in 0..x.len() {
        let d = (x[k] - x2[k]) / rho[k];
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Distorted Brownian fidelity covariance `(min(t, t') / t_lf)^L`.
///
/// Both fidelity values must lie in `[0, t_lf]`; values above `t_lf` would
/// break the `r <= 1` guarantee and are rejected.
pub fn fidelity_cov(t: f64, t2: f64, degree_l: f64, t_lf: f64) -> Result<f64> {
    if !(t >= 0.0 && t2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fidelity_cov requires nonnegative fidelities, got ({t}, {t2})"
        )));
    }
    if t > t_lf || t2 > t_lf {
        return Err(Error::InvalidArgument(format!(
            "fidelity value above t_lf = {t_lf}: ({t}, {t2})"
        )));
    }
    Ok((t.min(t2) / t_lf).powf(degree_l))
}

/// Hyper-parameters of the multi-fidelity covariance, natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Variance of the ideal process, `sigma0^2`.
    pub sigma0_sq: f64,
    /// Range parameters of the ideal process, one per input dimension.
    pub rho0: Vec<f64>,
    /// Variance ratio `G` of the error process relative to `sigma0^2`.
    pub g_ratio: f64,
    /// Range parameters of the error process.
    pub rho_eps: Vec<f64>,
    /// Degree `L` of the distorted Brownian fidelity covariance.
    pub degree_l: f64,
    /// Lowest fidelity level (largest `t` value the kernel accepts).
    pub t_lf: f64,
}

impl KernelParams {
    pub fn new(
        sigma0_sq: f64,
        rho0: Vec<f64>,
        g_ratio: f64,
        rho_eps: Vec<f64>,
        degree_l: f64,
        t_lf: f64,
    ) -> Result<Self> {
        let p = Self {
            sigma0_sq,
            rho0,
            g_ratio,
            rho_eps,
            degree_l,
            t_lf,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.rho0.len()
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.sigma0_sq) || !pos(self.g_ratio) || !pos(self.degree_l) || !pos(self.t_lf) {
            return Err(Error::InvalidArgument(
                "kernel parameters must be finite and strictly positive".into(),
            ));
        }
        if self.rho0.len() != self.rho_eps.len() || self.rho0.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "rho0 and rho_eps must have equal nonzero length, got {} and {}",
                self.rho0.len(),
                self.rho_eps.len()
            )));
        }
        if !self.rho0.iter().chain(self.rho_eps.iter()).all(|&r| pos(r)) {
            return Err(Error::InvalidArgument(
                "range parameters must be finite and strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Multi-fidelity covariance `c0(x - x') + r(t, t') c_eps(x - x')`.
pub fn mf_cov(p: &KernelParams, x: &[f64], t: f64, x2: &[f64], t2: f64) -> Result<f64> {
    if t <= 0.0 || t2 <= 0.0 {
        // t = 0 is the ideal process; observations live on (0, t_lf].
        return Err(Error::InvalidArgument(format!(
            "mf_cov fidelities must be in (0, t_lf], got ({t}, {t2})"
        )));
    }
    let c0 = p.sigma0_sq * matern52(scaled_distance(x, x2, &p.rho0)?)?;
    let r = fidelity_cov(t, t2, p.degree_l, p.t_lf)?;
    let ce = p.sigma0_sq * p.g_ratio * matern52(scaled_distance(x, x2, &p.rho_eps)?)?;
    Ok(c0 + r * ce)
}

/// Parameters of the single-level (stationary) covariance `c0` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryParams {
    pub sigma0_sq: f64,
    pub rho0: Vec<f64>,
}

impl StationaryParams {
    pub fn new(sigma0_sq: f64, rho0: Vec<f64>) -> Result<Self> {
        if !(sigma0_sq.is_finite() && sigma0_sq > 0.0)
            || rho0.is_empty()
            || !rho0.iter().all(|&r| r.is_finite() && r > 0.0)
        {
            return Err(Error::InvalidArgument(
                "stationary parameters must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { sigma0_sq, rho0 })
    }
}

/// A covariance function over (input, fidelity) pairs.
///
/// The single-level variant ignores the fidelity coordinate; it backs the
/// baseline model fitted to highest-fidelity observations only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovFunction {
    MultiFidelity(KernelParams),
    SingleLevel(StationaryParams),
}

impl From<KernelParams> for CovFunction {
    fn from(p: KernelParams) -> Self {
        CovFunction::MultiFidelity(p)
    }
}

impl CovFunction {
    pub fn dim(&self) -> usize {
        match self {
            CovFunction::MultiFidelity(p) => p.dim(),
            CovFunction::SingleLevel(p) => p.rho0.len(),
        }
    }

    /// Covariance between `(x, t)` and `(x2, t2)`.
    pub fn cov(&self, x: &[f64], t: f64, x2: &[f64], t2: f64) -> Result<f64> {
        match self {
            CovFunction::MultiFidelity(p) => mf_cov(p, x, t, x2, t2),
            CovFunction::SingleLevel(p) => {
                Ok(p.sigma0_sq * matern52(scaled_distance(x, x2, &p.rho0)?)?)
            }
        }
    }
}

/// Gram matrix of `points` with per-point noise added on the diagonal.
///
/// `cov` accepts anything convertible into a [`CovFunction`], in particular
/// a plain [`KernelParams`].
pub fn cov_matrix<C: Into<CovFunction>>(
    cov: C,
    points: &[(Vec<f64>, f64)],
    noise: &[f64],
) -> Result<DMatrix<f64>> {
    cov_matrix_ref(&cov.into(), points, noise)
}

/// As [`cov_matrix`] but borrowing the covariance function.
pub fn cov_matrix_ref(
    cov: &CovFunction,
    points: &[(Vec<f64>, f64)],
    noise: &[f64],
) -> Result<DMatrix<f64>> {
    let n = points.len();
    if noise.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "cov_matrix: {} points but {} noise entries",
            n,
            noise.len()
        )));
    }
    if let Some(v) = noise.iter().find(|&&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "noise variances must be nonnegative, got {v}"
        )));
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = cov.cov(&points[i].0, points[i].1, &points[j].0, points[j].1)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise[i];
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn params_2d() -> KernelParams {
        KernelParams::new(2.5, vec![3.0, 0.7], 0.8, vec![1.2, 2.1], 4.0, 1.0).unwrap()
    }

    #[test]
    fn matern52_at_zero_is_one() {
        assert_eq!(matern52(0.0).unwrap(), 1.0);
    }

    #[test]
    fn matern52_reference_values() {
        // direct high-precision evaluation of the closed form
        assert_relative_eq!(
            matern52(1.0).unwrap(),
            0.523994108831820310592713250761,
            max_relative = 1e-14
        );
        assert!(matern52(50.0).unwrap() < 1e-40);
    }

    #[test]
    fn matern52_rejects_negative() {
        assert!(matern52(-0.1).is_err());
        assert!(matern52(f64::NAN).is_err());
    }

    #[test]
    fn matern52_strictly_decreasing_and_bounded() {
        let mut prev = matern52(0.0).unwrap();
        for i in 1..=500 {
            let h = i as f64 * 0.05;
            let v = matern52(h).unwrap();
            assert!(v < prev, "not decreasing at h = {h}");
            assert!(v > 0.0 && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn scaled_distance_examples() {
        assert_eq!(
            scaled_distance(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 3.0]).unwrap(),
            0.0
        );
        assert_relative_eq!(
            scaled_distance(&[1.0, 0.0], &[0.0, 0.0], &[2.0, 1.0]).unwrap(),
            0.5
        );
        assert_relative_eq!(
            scaled_distance(&[3.0, 4.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            5.0
        );
        assert!(scaled_distance(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn fidelity_cov_examples() {
        assert_eq!(fidelity_cov(1.0, 1.0, 4.0, 1.0).unwrap(), 1.0);
        assert_eq!(fidelity_cov(0.0, 0.7, 4.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(fidelity_cov(0.5, 0.5, 4.0, 1.0).unwrap(), 0.0625);
        assert!(fidelity_cov(1.5, 0.5, 4.0, 1.0).is_err());
    }

    #[test]
    fn mf_cov_variance_at_extremes() {
        let p = params_2d();
        let x = [0.3, 0.4];
        // at the lowest fidelity r = 1
        let v = mf_cov(&p, &x, 1.0, &x, 1.0).unwrap();
        assert_relative_eq!(v, p.sigma0_sq * (1.0 + p.g_ratio), max_relative = 1e-14);
        // the error process vanishes as t -> 0
        let v0 = mf_cov(&p, &x, 1e-300, &x, 1e-300).unwrap();
        assert_relative_eq!(v0, p.sigma0_sq, max_relative = 1e-14);
    }

    #[test]
    fn mf_cov_composes_from_suboperations() {
        let p = params_2d();
        let mut rng = crate::rng::stream(7, &[0]);
        for _ in 0..50 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let y = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let t: f64 = rng.gen_range(0.01..1.0);
            let t2: f64 = rng.gen_range(0.01..1.0);
            let c0 = p.sigma0_sq * matern52(scaled_distance(&x, &y, &p.rho0).unwrap()).unwrap();
            let ce = p.sigma0_sq
                * p.g_ratio
                * matern52(scaled_distance(&x, &y, &p.rho_eps).unwrap()).unwrap();
            let r = fidelity_cov(t, t2, p.degree_l, p.t_lf).unwrap();
            assert_relative_eq!(
                mf_cov(&p, &x, t, &y, t2).unwrap(),
                c0 + r * ce,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn cov_matrix_small_cases() {
        let p = params_2d();
        let pt = (vec![0.1, 0.2], 0.5);
        let k = cov_matrix(p.clone(), &[pt.clone()], &[0.0]).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_relative_eq!(k[(0, 0)], mf_cov(&p, &pt.0, pt.1, &pt.0, pt.1).unwrap());

        let v = 0.3;
        let k2 = cov_matrix(p, &[pt.clone(), pt], &[v, v]).unwrap();
        assert_relative_eq!(k2[(0, 1)], k2[(0, 0)] - v, max_relative = 1e-14);
        assert_eq!(k2[(0, 1)], k2[(1, 0)]);
    }

    #[test]
    fn gram_matrix_numerically_psd() {
        let p = params_2d();
        let mut rng = crate::rng::stream(11, &[0]);
        for _ in 0..20 {
            let points: Vec<(Vec<f64>, f64)> = (0..20)
                .map(|_| {
                    (
                        vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                        rng.gen_range(0.01..=1.0),
                    )
                })
                .collect();
            let k = cov_matrix(p.clone(), &points, &vec![0.0; 20]).unwrap();
            let eig = k.clone().symmetric_eigenvalues();
            let max_diag = (0..20).map(|i| k[(i, i)]).fold(f64::MIN, f64::max);
            assert!(
                eig.iter().all(|&e| e >= -1e-8 * max_diag),
                "min eigenvalue {} below tolerance",
                eig.min()
            );
        }
    }

    proptest! {
        #[test]
        fn symmetry(
            x0 in -5.0..5.0f64, x1 in -5.0..5.0f64,
            y0 in -5.0..5.0f64, y1 in -5.0..5.0f64,
            t in 0.01..1.0f64, t2 in 0.01..1.0f64,
        ) {
            let p = params_2d();
            let a = mf_cov(&p, &[x0, x1], t, &[y0, y1], t2).unwrap();
            let b = mf_cov(&p, &[y0, y1], t2, &[x0, x1], t).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn stationarity(
            x0 in -2.0..2.0f64, x1 in -2.0..2.0f64,
            y0 in -2.0..2.0f64, y1 in -2.0..2.0f64,
            s0 in -3.0..3.0f64, s1 in -3.0..3.0f64,
            t in 0.01..1.0f64, t2 in 0.01..1.0f64,
        ) {
            let p = params_2d();
            let a = mf_cov(&p, &[x0, x1], t, &[y0, y1], t2).unwrap();
            let b = mf_cov(&p, &[x0 + s0, x1 + s1], t, &[y0 + s0, y1 + s1], t2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn fidelity_monotone_variance(
            x0 in -2.0..2.0f64, x1 in -2.0..2.0f64,
            ta in 0.01..1.0f64, tb in 0.01..1.0f64,
        ) {
            // variance at (x, t) is nondecreasing in t
            let p = params_2d();
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            let x = [x0, x1];
            let vlo = mf_cov(&p, &x, lo, &x, lo).unwrap();
            let vhi = mf_cov(&p, &x, hi, &x, hi).unwrap();
            prop_assert!(vlo <= vhi + 1e-15);
        }
    }
}
