//! Adaptive Metropolis sampling of the hyper-parameter posterior, plus a
//! derivative-free MAP point estimate.
//!
//! The chain walks in the unconstrained log scale `l_theta` and targets
//! `log pi(l_theta | data) = integrated log-likelihood + log prior density`
//! up to a constant. Proposals are Gaussian random walks; after a warm-up
//! period the proposal covariance is adapted to
//! `s_d * Cov(past states) + s_d * eps * I` with `s_d = 2.4^2 / D`,
//! updated recursively so each step costs O(D^2).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{integrated_log_likelihood, MfDataset};
use crate::prior::{HyperParams, PriorSpec};
use crate::rng::Stream;

/// Tuning parameters of the adaptive Metropolis chain.
#[derive(Debug, Clone)]
pub struct AmhConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Iteration at which covariance adaptation begins.
    pub adaptation_start: usize,
    /// Global proposal scale `s_d`; the classic choice is `2.4^2 / D`.
    pub proposal_scale: f64,
    /// Regularization `eps` keeping the adapted covariance positive definite.
    pub regularization: f64,
    /// Proposal covariance used before adaptation kicks in.
    pub initial_proposal_cov: DMatrix<f64>,
    pub seed: u64,
}

impl AmhConfig {
    /// Defaults for a given prior: 2e4 iterations, 5e3 burn-in, thinning 15
    /// (1e3 retained draws), adaptation from 1e3, initial proposal
    /// covariance `0.01 * prior covariance`.
    pub fn for_prior(prior: &PriorSpec, seed: u64) -> Self {
        let d = prior.param_len();
        Self {
            n_iterations: 20_000,
            burn_in: 5_000,
            thin: 15,
            adaptation_start: 1_000,
            proposal_scale: 2.4 * 2.4 / d as f64,
            regularization: 1e-6,
            initial_proposal_cov: prior.cov.clone() * 0.01,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.initial_proposal_cov.nrows()
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        if self.n_iterations <= self.burn_in {
            0
        } else {
            (self.n_iterations - self.burn_in + self.thin - 1) / self.thin
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin < 1 {
            return Err(Error::InvalidConfig("thinning must be >= 1".into()));
        }
        if !(self.regularization > 0.0) || !(self.proposal_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "proposal scale and regularization must be positive".into(),
            ));
        }
        let d = self.initial_proposal_cov.nrows();
        if d == 0 || self.initial_proposal_cov.ncols() != d {
            return Err(Error::InvalidConfig(
                "initial proposal covariance must be square and nonempty".into(),
            ));
        }
        Ok(())
    }
}

/// Raw output of the generic chain runner.
#[derive(Debug, Clone)]
pub struct RawChain {
    /// Post-burn-in, thinned states.
    pub retained: Vec<DVector<f64>>,
    /// Log-target values of the retained states.
    pub retained_log_target: Vec<f64>,
    /// Full per-iteration state trace (for CSV export and diagnostics).
    pub trace_states: Vec<DVector<f64>>,
    /// Full per-iteration log-target trace.
    pub trace_log_target: Vec<f64>,
    pub acceptance_rate: f64,
}

/// Retained hyper-parameter sample from the posterior.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub thetas: Vec<HyperParams>,
    pub acceptance_rate: f64,
    /// Log-posterior of each retained draw.
    pub retained_log_posterior: Vec<f64>,
    /// Full chain for trace export: one (state, log-posterior) per iteration.
    pub trace_states: Vec<DVector<f64>>,
    pub trace_log_posterior: Vec<f64>,
}

/// Run the adaptive Metropolis chain on an arbitrary log-target.
///
/// `log_target` returns `None` where the target is not evaluable; such
/// proposals are rejected. The initial point must be evaluable.
pub fn sample_log_target<F>(
    mut log_target: F,
    init: DVector<f64>,
    cfg: &AmhConfig,
) -> Result<RawChain>
where
    F: FnMut(&DVector<f64>) -> Option<f64>,
{
    cfg.validate()?;
    let d = cfg.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "initial state has dimension {}, proposal covariance {}",
            init.len(),
            d
        )));
    }
    let mut fx = log_target(&init).ok_or_else(|| {
        Error::ModelEvaluation("log-target not evaluable at the initial state".into())
    })?;
    let mut rng = crate::rng::stream(cfg.seed, &[0x11]);

    let chol0 = nalgebra::Cholesky::new(cfg.initial_proposal_cov.clone()).ok_or_else(|| {
        Error::InvalidConfig("initial proposal covariance is not positive definite".into())
    })?;
    let l0 = chol0.l();

    let mut x = init;
    // running mean and scatter of all past states (Welford)
    let mut mean = x.clone();
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut count = 1usize;

    let mut accepted = 0usize;
    let mut retained = Vec::with_capacity(cfg.retained());
    let mut retained_log_target = Vec::with_capacity(cfg.retained());
    let mut trace_states = Vec::with_capacity(cfg.n_iterations);
    let mut trace_log_target = Vec::with_capacity(cfg.n_iterations);

    let mut adapted_l: DMatrix<f64>;

    for t in 0..cfg.n_iterations {
        let l = if t >= cfg.adaptation_start && count >= 2 {
            let mut prop = &scatter * (cfg.proposal_scale / (count - 1) as f64);
            for i in 0..d {
                prop[(i, i)] += cfg.proposal_scale * cfg.regularization;
            }
            let chol = nalgebra::Cholesky::new(prop).ok_or_else(|| {
                Error::ModelEvaluation(
                    "adapted proposal covariance lost positive definiteness".into(),
                )
            })?;
            adapted_l = chol.l();
            &adapted_l
        } else {
            &l0
        };

        let zvec = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x + l * zvec;
        let log_u: f64 = rng.gen::<f64>().ln();
        if let Some(fy) = log_target(&y) {
            if fy.is_finite() && log_u < fy - fx {
                x = y;
                fx = fy;
                accepted += 1;
            }
        }

        // fold the (possibly repeated) state into the running moments
        count += 1;
        let delta = &x - &mean;
        mean += &delta / count as f64;
        let delta2 = &x - &mean;
        scatter += delta * delta2.transpose();

        trace_states.push(x.clone());
        trace_log_target.push(fx);
        if t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            retained.push(x.clone());
            retained_log_target.push(fx);
        }
    }

    Ok(RawChain {
        retained,
        retained_log_target,
        trace_states,
        trace_log_target,
        acceptance_rate: accepted as f64 / cfg.n_iterations as f64,
    })
}

fn posterior_closure<'a>(
    prior: &'a PriorSpec,
    data: &'a MfDataset,
) -> impl FnMut(&DVector<f64>) -> Option<f64> + 'a {
    move |v: &DVector<f64>| {
        let theta = HyperParams::new(prior.kind, v.clone()).ok()?;
        let ll = integrated_log_likelihood(&theta, data).ok()?;
        let lp = prior.log_density_of(v).ok()?;
        let total = ll + lp;
        total.is_finite().then_some(total)
    }
}

/// Sample the hyper-parameter posterior for `data` under `prior`.
///
/// The chain starts at the prior mean; if the model cannot be evaluated
/// there, fresh starting points are drawn from the prior (up to 100
/// attempts) before giving up.
pub fn run_amh(data: &MfDataset, prior: &PriorSpec, cfg: &AmhConfig) -> Result<PosteriorSample> {
    cfg.validate()?;
    if cfg.dim() != prior.param_len() {
        return Err(Error::DimensionMismatch(format!(
            "proposal covariance dimension {} vs prior dimension {}",
            cfg.dim(),
            prior.param_len()
        )));
    }
    let mut target = posterior_closure(prior, data);
    let mut init = prior.mean.clone();
    if target(&init).is_none() {
        let mut init_rng = crate::rng::stream(cfg.seed, &[0x22]);
        let mut found = false;
        for _ in 0..100 {
            let cand = prior.sample_prior(1, &mut init_rng)?.remove(0);
            if target(cand.log_vector()).is_some() {
                init = cand.log_vector().clone();
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::ModelEvaluation(
                "no evaluable starting point found in 100 prior draws".into(),
            ));
        }
    }
    let raw = sample_log_target(&mut target, init, cfg)?;
    let thetas = raw
        .retained
        .iter()
        .map(|v| HyperParams::new(prior.kind, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSample {
        thetas,
        acceptance_rate: raw.acceptance_rate,
        retained_log_posterior: raw.retained_log_target,
        trace_states: raw.trace_states,
        trace_log_posterior: raw.trace_log_target,
    })
}

/// Coordinate-wise pattern search with shrinking steps.
///
/// Starts at each point of `starts`; steps one coordinate at a time,
/// halving all steps when no move improves, until every step is below
/// `tol`. Returns the best point visited and its value.
pub fn maximize_log_target<F>(
    mut log_target: F,
    starts: &[DVector<f64>],
    initial_step: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, f64)>
where
    F: FnMut(&DVector<f64>) -> Option<f64>,
{
    if starts.is_empty() {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    let d = initial_step.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in starts {
        if start.len() != d {
            return Err(Error::DimensionMismatch(
                "start and step dimensions differ".into(),
            ));
        }
        let Some(mut fx) = log_target(start) else {
            continue;
        };
        let mut x = start.clone();
        let mut step = initial_step.clone();
        loop {
            let mut improved = false;
            for i in 0..d {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] += dir * step[i];
                    if let Some(fy) = log_target(&y) {
                        if fy > fx {
                            x = y;
                            fx = fy;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step.amax() < tol {
                    break;
                }
            }
        }
        match &best {
            Some((_, fb)) if *fb >= fx => {}
            _ => best = Some((x, fx)),
        }
    }
    best.ok_or_else(|| Error::ModelEvaluation("log-target not evaluable at any start".into()))
}

/// Maximum-a-posteriori hyper-parameters by multi-start pattern search.
///
/// Starting points are the prior mean plus `restarts` prior draws; the
/// initial step is half the marginal prior standard deviation.
pub fn map_estimate(
    data: &MfDataset,
    prior: &PriorSpec,
    restarts: usize,
    rng: &mut Stream,
) -> Result<HyperParams> {
    if restarts < 1 {
        return Err(Error::InvalidArgument("need restarts >= 1".into()));
    }
    let mut starts = vec![prior.mean.clone()];
    for h in prior.sample_prior(restarts, rng)? {
        starts.push(h.log_vector().clone());
    }
    let step = prior.marginal_sd() * 0.5;
    let mut target = posterior_closure(prior, data);
    let (x, _) = maximize_log_target(&mut target, &starts, &step, 1e-4)?;
    HyperParams::new(prior.kind, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_target(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> impl FnMut(&DVector<f64>) -> Option<f64> {
        let inv = cov.try_inverse().unwrap();
        move |x: &DVector<f64>| {
            let c = x - &mean;
            Some(-0.5 * (c.transpose() * &inv * &c)[(0, 0)])
        }
    }

    fn ar1_cov(d: usize, var: f64, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |i, j| var * rho.powi((i as i32 - j as i32).abs()))
    }

    fn small_cfg(d: usize, seed: u64) -> AmhConfig {
        AmhConfig {
            n_iterations: 40_000,
            burn_in: 5_000,
            thin: 5,
            adaptation_start: 1_000,
            proposal_scale: 2.4 * 2.4 / d as f64,
            regularization: 1e-6,
            initial_proposal_cov: DMatrix::identity(d, d),
            seed,
        }
    }

    #[test]
    fn gaussian_moments_recovered() {
        let d = 3;
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let cov = ar1_cov(d, 2.0, 0.6);
        let cfg = small_cfg(d, 42);
        let raw = sample_log_target(gaussian_target(mean.clone(), cov.clone()), DVector::zeros(d), &cfg)
            .unwrap();
        let n = raw.retained.len() as f64;
        let emp_mean: DVector<f64> =
            raw.retained.iter().fold(DVector::zeros(d), |a, b| a + b) / n;
        for i in 0..d {
            let sd = cov[(i, i)].sqrt();
            assert!(
                (emp_mean[i] - mean[i]).abs() < 0.08 * sd,
                "mean[{i}] = {} vs {}",
                emp_mean[i],
                mean[i]
            );
        }
    }

    #[test]
    fn fixed_proposal_moments_detailed_balance() {
        // adaptation disabled: plain random-walk Metropolis must still match
        let d = 2;
        let mean = DVector::from_vec(vec![0.3, -0.7]);
        let cov = ar1_cov(d, 1.0, 0.4);
        let mut cfg = small_cfg(d, 7);
        cfg.adaptation_start = cfg.n_iterations + 1;
        let raw = sample_log_target(gaussian_target(mean.clone(), cov.clone()), DVector::zeros(d), &cfg)
            .unwrap();
        let n = raw.retained.len() as f64;
        let emp_mean: DVector<f64> =
            raw.retained.iter().fold(DVector::zeros(d), |a, b| a + b) / n;
        for i in 0..d {
            assert!((emp_mean[i] - mean[i]).abs() < 0.1, "mean[{i}] = {}", emp_mean[i]);
        }
    }

    #[test]
    fn chains_are_deterministic() {
        let d = 3;
        let cov = ar1_cov(d, 1.5, 0.5);
        let cfg = small_cfg(d, 99);
        let a = sample_log_target(
            gaussian_target(DVector::zeros(d), cov.clone()),
            DVector::zeros(d),
            &cfg,
        )
        .unwrap();
        let b = sample_log_target(
            gaussian_target(DVector::zeros(d), cov),
            DVector::zeros(d),
            &cfg,
        )
        .unwrap();
        assert_eq!(a.retained, b.retained);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
    }

    #[test]
    fn no_retained_draws_rejected() {
        let mut cfg = small_cfg(2, 1);
        cfg.burn_in = cfg.n_iterations;
        assert!(cfg.validate().is_err());
        assert!(sample_log_target(|_| Some(0.0), DVector::zeros(2), &cfg).is_err());
    }

    #[test]
    fn pattern_search_finds_quadratic_maximum() {
        let d = 4;
        let xstar = DVector::from_vec(vec![0.7, -1.3, 2.0, 0.0]);
        let target = {
            let xs = xstar.clone();
            move |x: &DVector<f64>| {
                let c = x - &xs;
                Some(-c.norm_squared())
            }
        };
        let (x, _) = maximize_log_target(
            target,
            &[DVector::zeros(d)],
            &DVector::from_element(d, 1.0),
            1e-4,
        )
        .unwrap();
        for i in 0..d {
            assert!((x[i] - xstar[i]).abs() < 1e-3, "coordinate {i}: {}", x[i]);
        }
    }

    #[test]
    fn pattern_search_keeps_optimal_start() {
        let xstar = DVector::from_vec(vec![1.0, 2.0]);
        let target = {
            let xs = xstar.clone();
            move |x: &DVector<f64>| Some(-(x - &xs).norm_squared())
        };
        let (x, fx) = maximize_log_target(
            target,
            &[xstar.clone()],
            &DVector::from_element(2, 0.5),
            1e-4,
        )
        .unwrap();
        assert_eq!(x, xstar);
        assert_relative_eq!(fx, 0.0);
    }

    #[test]
    fn unevaluable_everywhere_errors() {
        let r = maximize_log_target(
            |_| None,
            &[DVector::zeros(2)],
            &DVector::from_element(2, 1.0),
            1e-4,
        );
        assert!(r.is_err());
    }
}
