//! Monte-Carlo sampling of the posterior distribution of the probability
//! of failure (PoF).
//!
//! For each hyper-parameter draw `theta_j`, `m` inputs are drawn from the
//! input distribution, `q` joint Gaussian sample paths of the latent
//! process are drawn at those inputs at the reference fidelity, each path
//! value is pushed through the conditional exceedance probability
//!
//! ```text
//! p = Phi((xi - z_crit) / sqrt(lambda(t_ref)))
//! ```
//!
//! and averaged over the inputs, giving the PoF draws `P_{j,l}` for
//! `l = 1..q`. The full sample over `j` and `l` approximates the posterior
//! distribution of the PoF; plug-in estimation is the single-theta special
//! case of the same code path.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gp::{fit, MfDataset};
use crate::prior::HyperParams;

/// Input distribution the PoF integrates over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSampler {
    /// Uniform on the hyper-rectangle `prod [a_k, b_k]`.
    Uniform { bounds: Vec<(f64, f64)> },
}

impl InputSampler {
    pub fn dim(&self) -> usize {
        match self {
            InputSampler::Uniform { bounds } => bounds.len(),
        }
    }

    fn draw(&self, rng: &mut crate::rng::Stream) -> Vec<f64> {
        match self {
            InputSampler::Uniform { bounds } => bounds
                .iter()
                .map(|&(a, b)| rng.gen_range(a..b))
                .collect(),
        }
    }
}

/// Configuration of the PoF sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PofConfig {
    /// Critical threshold on the simulator output.
    pub z_crit: f64,
    /// Reference fidelity level the PoF is estimated at.
    pub t_ref: f64,
    /// Number of input draws per theta.
    pub m_inputs: usize,
    /// Number of joint sample paths per theta.
    pub q_paths: usize,
    pub input_sampler: InputSampler,
    pub seed: u64,
}

impl PofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_inputs < 1 || self.q_paths < 1 {
            return Err(Error::InvalidConfig(
                "need m_inputs >= 1 and q_paths >= 1".into(),
            ));
        }
        if !self.z_crit.is_finite() || !(self.t_ref > 0.0) {
            return Err(Error::InvalidConfig(
                "z_crit must be finite and t_ref positive".into(),
            ));
        }
        Ok(())
    }
}

/// The `p x q` matrix of PoF draws plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PofSampleSet {
    /// `samples[j][l]` is the PoF draw from theta `theta_index[j]`, path `l`.
    pub samples: Vec<Vec<f64>>,
    /// Index into the theta list each row came from (skips excluded).
    pub theta_index: Vec<usize>,
    /// Indices of thetas that failed to produce a kriging state.
    pub skipped: Vec<usize>,
    pub config: PofConfig,
}

impl PofSampleSet {
    /// All `p * q` draws flattened in row-major order.
    pub fn flattened(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

/// Draw the PoF posterior sample for each hyper-parameter vector.
///
/// Per-theta failures to fit the kriging state are skipped with a record;
/// more than 10% of skips is an error.
pub fn sample_pof(
    data: &MfDataset,
    thetas: &[HyperParams],
    cfg: &PofConfig,
) -> Result<PofSampleSet> {
    cfg.validate()?;
    if thetas.is_empty() {
        return Err(Error::InvalidArgument("no hyper-parameter draws".into()));
    }
    if cfg.input_sampler.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "input sampler dimension {} vs dataset dimension {}",
            cfg.input_sampler.dim(),
            data.dim()
        )));
    }
    let s_ref = data.level_index_of(cfg.t_ref).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "reference fidelity {} is not an observed level",
            cfg.t_ref
        ))
    })?;

    let rows: Vec<(usize, Result<Vec<f64>>)> = thetas
        .par_iter()
        .enumerate()
        .map(|(j, theta)| {
            let mut rng = crate::rng::stream(cfg.seed, &[j as u64]);
            let row = (|| -> Result<Vec<f64>> {
                let gp = fit(theta, data)?;
                let lambda_ref = theta.noise_variances()[s_ref];
                let targets: Vec<(Vec<f64>, f64)> = (0..cfg.m_inputs)
                    .map(|_| (cfg.input_sampler.draw(&mut rng), cfg.t_ref))
                    .collect();
                let paths = gp.sample_paths(&targets, cfg.q_paths, &mut rng)?;
                Ok(pof_from_paths(&paths, cfg.z_crit, lambda_ref))
            })();
            (j, row)
        })
        .collect();

    let mut samples = Vec::with_capacity(thetas.len());
    let mut theta_index = Vec::with_capacity(thetas.len());
    let mut skipped = Vec::new();
    for (j, row) in rows {
        match row {
            Ok(r) => {
                samples.push(r);
                theta_index.push(j);
            }
            Err(_) => skipped.push(j),
        }
    }
    if skipped.len() * 10 > thetas.len() {
        return Err(Error::TooManyFailures {
            failed: skipped.len(),
            total: thetas.len(),
            detail: "kriging state could not be built for too many thetas".into(),
        });
    }
    Ok(PofSampleSet {
        samples,
        theta_index,
        skipped,
        config: cfg.clone(),
    })
}

/// The exceedance transform and input average producing one PoF draw per
/// sample path: row `l` of `paths` maps to
/// `mean_i Phi((paths[l][i] - z_crit) / sqrt(lambda))`.
///
/// The transform is applied pointwise before averaging; the order matters
/// and is pinned by the brute-force oracle tests.
pub fn pof_from_paths(paths: &nalgebra::DMatrix<f64>, z_crit: f64, lambda: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let sd = lambda.sqrt();
    let m = paths.ncols() as f64;
    (0..paths.nrows())
        .map(|l| {
            let mut acc = 0.0;
            for i in 0..paths.ncols() {
                acc += normal.cdf((paths[(l, i)] - z_crit) / sd);
            }
            acc / m
        })
        .collect()
}

/// Type-7 (linear interpolation between order statistics) quantile of a
/// sorted sample.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// An equal-tailed credible interval at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PofInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub length: f64,
}

/// Empirical summary of a PoF sample: median and equal-tailed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PofSummary {
    pub median: f64,
    pub intervals: Vec<PofInterval>,
    pub n_samples: usize,
}

/// Median and equal-tailed intervals of the flattened sample, using the
/// type-7 quantile convention.
pub fn summarize(samples: &PofSampleSet, levels: &[f64]) -> Result<PofSummary> {
    let mut flat = samples.flattened();
    if flat.is_empty() {
        return Err(Error::InvalidArgument("empty PoF sample".into()));
    }
    if !levels.iter().all(|&g| g > 0.0 && g < 1.0) {
        return Err(Error::InvalidArgument(
            "interval levels must lie in (0, 1)".into(),
        ));
    }
    flat.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile_type7(&flat, 0.5);
    let intervals = levels
        .iter()
        .map(|&gamma| {
            let lower = quantile_type7(&flat, (1.0 - gamma) / 2.0);
            let upper = quantile_type7(&flat, (1.0 + gamma) / 2.0);
            PofInterval {
                level: gamma,
                lower,
                upper,
                length: upper - lower,
            }
        })
        .collect();
    Ok(PofSummary {
        median,
        intervals,
        n_samples: flat.len(),
    })
}

/// One point of the coverage curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub level: f64,
    pub coverage: f64,
}

/// Fraction of summaries whose interval at each level contains `reference`.
pub fn coverage_report(
    summaries: &[PofSummary],
    reference: f64,
    levels: &[f64],
) -> Result<Vec<CoveragePoint>> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("no experiments to cover".into()));
    }
    levels
        .iter()
        .map(|&gamma| {
            let mut hits = 0usize;
            for s in summaries {
                let interval = s
                    .intervals
                    .iter()
                    .find(|i| (i.level - gamma).abs() <= 1e-12)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "summary lacks an interval at level {gamma}"
                        ))
                    })?;
                if interval.lower <= reference && reference <= interval.upper {
                    hits += 1;
                }
            }
            Ok(CoveragePoint {
                level: gamma,
                coverage: hits as f64 / summaries.len() as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{default_prior, HyperParams};
    use approx::assert_relative_eq;

    /// Flat synthetic dataset: every output equals `z_const`.
    fn constant_dataset(z_const: f64) -> MfDataset {
        let points = vec![
            (vec![0.2, 0.2], 1.0),
            (vec![0.8, 0.4], 1.0),
            (vec![0.4, 0.8], 0.5),
            (vec![0.6, 0.6], 0.5),
        ];
        MfDataset::new(
            points,
            vec![z_const; 4],
            vec![1.0, 0.5],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap()
    }

    fn theta_with(sigma0_sq: f64, lambda: f64) -> HyperParams {
        let prior = default_prior(2, 2, 40.0, &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let mut v = prior.mean.clone();
        v[0] = sigma0_sq.ln();
        v[1] = 0.5f64.ln();
        v[2] = 0.5f64.ln();
        v[3] = 0.5f64.ln(); // G
        v[4] = 0.5f64.ln();
        v[5] = 0.5f64.ln();
        v[6] = 4.0f64.ln();
        v[7] = lambda.ln();
        v[8] = lambda.ln();
        HyperParams::new(prior.kind, v).unwrap()
    }

    fn cfg(z_crit: f64, m: usize, q: usize, seed: u64) -> PofConfig {
        PofConfig {
            z_crit,
            t_ref: 0.5,
            m_inputs: m,
            q_paths: q,
            input_sampler: InputSampler::Uniform {
                bounds: vec![(0.0, 1.0), (0.0, 1.0)],
            },
            seed,
        }
    }

    #[test]
    fn deep_safe_region_gives_zero_pof() {
        // posterior mean sits 1e6 noise-sd below the threshold
        let lambda = 1.0;
        let data = constant_dataset(-1e6);
        let theta = theta_with(1.0, lambda);
        let out = sample_pof(&data, &[theta], &cfg(0.0, 50, 10, 1)).unwrap();
        assert!(out.samples.iter().flatten().all(|&p| p < 1e-12));
    }

    #[test]
    fn degenerate_posterior_at_threshold_gives_half() {
        // zero posterior covariance: every path equals the mean, which sits
        // exactly at the threshold
        let paths = nalgebra::DMatrix::from_element(5, 30, 1.0);
        for &p in &pof_from_paths(&paths, 1.0, 0.25) {
            assert_relative_eq!(p, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_observations_give_centered_pof() {
        // all z at the threshold: the posterior mean is the threshold
        // everywhere, so the PoF draws straddle 1/2
        let data = constant_dataset(1.0);
        let theta = theta_with(1e-30, 0.25);
        let out = sample_pof(&data, &[theta], &cfg(1.0, 200, 40, 2)).unwrap();
        let vals: Vec<f64> = out.flattened();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        // the only residual spread is the integrated-out constant mean
        assert!((mean - 0.5).abs() < 0.1, "mean PoF {mean}");
    }

    #[test]
    fn sampler_is_deterministic_and_parallel_invariant() {
        let data = constant_dataset(0.5);
        let thetas: Vec<HyperParams> = (0..8).map(|i| theta_with(1.0 + i as f64 * 0.1, 0.3)).collect();
        let a = sample_pof(&data, &thetas, &cfg(1.0, 20, 4, 3)).unwrap();
        let b = sample_pof(&data, &thetas, &cfg(1.0, 20, 4, 3)).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| sample_pof(&data, &thetas, &cfg(1.0, 20, 4, 3)).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn reference_level_must_be_observed() {
        let data = constant_dataset(0.5);
        let mut c = cfg(1.0, 10, 2, 4);
        c.t_ref = 0.25;
        assert!(sample_pof(&data, &[theta_with(1.0, 0.3)], &c).is_err());
    }

    #[test]
    fn larger_input_sample_reduces_variance() {
        let data = constant_dataset(1.0); // mean at threshold: P is sensitive
        let theta = theta_with(1.0, 0.5);
        let variance_of = |m: usize| {
            let reps = 200;
            let vals: Vec<f64> = (0..reps)
                .map(|r| {
                    let mut c = cfg(1.0, m, 1, 1000 + r);
                    c.t_ref = 0.5;
                    sample_pof(&data, &[theta.clone()], &c).unwrap().samples[0][0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64
        };
        let v25 = variance_of(25);
        let v400 = variance_of(400);
        assert!(
            v400 < v25,
            "variance at m=400 ({v400}) not below m=25 ({v25})"
        );
    }

    #[test]
    fn quantile_convention_matches_order_statistics() {
        let sorted: Vec<f64> = (1..=100).map(|k| 0.01 * k as f64).collect();
        // independent direct computation of the type-7 quantile
        let direct = |p: f64| {
            let h = 99.0 * p;
            let lo = h.floor() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[(lo + 1).min(99)] - sorted[lo])
        };
        for p in [0.025, 0.5, 0.975] {
            assert_relative_eq!(quantile_type7(&sorted, p), direct(p), epsilon = 1e-14);
        }
        assert_relative_eq!(quantile_type7(&sorted, 0.025), 0.03475, epsilon = 1e-12);
        assert_relative_eq!(quantile_type7(&sorted, 0.975), 0.97525, epsilon = 1e-12);
    }

    #[test]
    fn summarize_constant_sample() {
        let set = PofSampleSet {
            samples: vec![vec![0.3; 4]; 3],
            theta_index: vec![0, 1, 2],
            skipped: vec![],
            config: cfg(1.0, 10, 4, 5),
        };
        let s = summarize(&set, &[0.5, 0.95]).unwrap();
        assert_eq!(s.median, 0.3);
        for i in &s.intervals {
            assert_eq!(i.lower, 0.3);
            assert_eq!(i.upper, 0.3);
            assert_eq!(i.length, 0.0);
        }
    }

    #[test]
    fn coverage_trivial_cases() {
        let mk = |lo: f64, hi: f64| PofSummary {
            median: 0.5 * (lo + hi),
            intervals: vec![PofInterval {
                level: 0.95,
                lower: lo,
                upper: hi,
                length: hi - lo,
            }],
            n_samples: 10,
        };
        let all_hit = vec![mk(0.0, 1.0); 6];
        let cov = coverage_report(&all_hit, 0.5, &[0.95]).unwrap();
        assert_eq!(cov[0].coverage, 1.0);

        let alternating: Vec<PofSummary> = (0..6)
            .map(|i| if i % 2 == 0 { mk(0.0, 1.0) } else { mk(0.8, 0.9) })
            .collect();
        let cov = coverage_report(&alternating, 0.5, &[0.95]).unwrap();
        assert_eq!(cov[0].coverage, 0.5);
    }

    #[test]
    fn coverage_curve_nondecreasing() {
        // nested equal-tailed intervals make coverage monotone in the level
        let data = constant_dataset(1.0);
        let thetas: Vec<HyperParams> =
            (0..5).map(|i| theta_with(0.5 + 0.2 * i as f64, 0.4)).collect();
        let levels: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        let summaries: Vec<PofSummary> = (0..10)
            .map(|r| {
                let out = sample_pof(&data, &thetas, &cfg(1.0, 30, 4, 50 + r)).unwrap();
                summarize(&out, &levels).unwrap()
            })
            .collect();
        let cov = coverage_report(&summaries, 0.4, &levels).unwrap();
        for w in cov.windows(2) {
            assert!(w[1].coverage >= w[0].coverage - 1e-12);
        }
    }
}
