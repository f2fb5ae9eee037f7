//! Replicated-experiment harness on the oscillator testbed.
//!
//! One experiment: draw a nested design, run the simulator at every design
//! point, fit the chosen model variant, sample the PoF posterior and
//! summarize it. Replications regenerate both design and observations;
//! models and priors stay fixed. Aggregation produces the coverage curve
//! of the credible intervals against a reference PoF obtained by direct
//! Monte Carlo on the simulator.
//!
//! Everything is a pure function of the configuration, including the
//! master seed: replications, the per-theta PoF work and the reference
//! Monte Carlo all use index-derived random streams, so reports are
//! byte-identical across runs and thread counts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amh::{map_estimate, run_amh, AmhConfig, PosteriorSample};
use crate::design::{generate_nlhs, maximin_improve};
use crate::error::{Error, Result};
use crate::gp::MfDataset;
use crate::kde::{kde_density, kde_grid, KdeCurve};
use crate::oscillator::{batch_simulate, simulate, NoiseMode, OscillatorInput};
use crate::pof::{
    coverage_report, sample_pof, summarize, CoveragePoint, InputSampler, PofConfig, PofSummary,
};
use crate::prior::{default_prior_with_correlation, single_level_prior, PriorSpec};

// stream derivation tags
const TAG_REFERENCE: u64 = 0xA1;
const TAG_REPLICATION: u64 = 0xB2;
const STEP_DESIGN: u64 = 0;
const STEP_MAXIMIN: u64 = 1;
const STEP_SIMULATE: u64 = 2;
const STEP_FIT: u64 = 3;
const STEP_POF: u64 = 4;

/// Model variant: multi-fidelity or single-level data, fully-Bayesian or
/// MAP plug-in hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MfFb,
    MfMap,
    SlFb,
    SlMap,
}

impl Variant {
    pub fn is_multi_fidelity(self) -> bool {
        matches!(self, Variant::MfFb | Variant::MfMap)
    }

    pub fn is_fully_bayesian(self) -> bool {
        matches!(self, Variant::MfFb | Variant::SlFb)
    }

    pub const ALL: [Variant; 4] = [Variant::MfFb, Variant::MfMap, Variant::SlFb, Variant::SlMap];
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::MfFb => "mf-fb",
            Variant::MfMap => "mf-map",
            Variant::SlFb => "sl-fb",
            Variant::SlMap => "sl-map",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf-fb" => Ok(Variant::MfFb),
            "mf-map" => Ok(Variant::MfMap),
            "sl-fb" => Ok(Variant::SlFb),
            "sl-map" => Ok(Variant::SlMap),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}' (expected mf-fb, mf-map, sl-fb or sl-map)"
            ))),
        }
    }
}

/// Chain settings carried by the experiment configuration; the full
/// [`AmhConfig`] (seed, initial covariance) is derived per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmhSettings {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adaptation_start: usize,
    /// Global proposal scale; `null` means the default `2.4^2 / D`.
    pub proposal_scale: Option<f64>,
    pub regularization: f64,
}

impl Default for AmhSettings {
    fn default() -> Self {
        Self {
            n_iterations: 20_000,
            burn_in: 5_000,
            thin: 15,
            adaptation_start: 1_000,
            proposal_scale: None,
            regularization: 1e-6,
        }
    }
}

impl AmhSettings {
    pub fn to_config(&self, prior: &PriorSpec, seed: u64) -> AmhConfig {
        let d = prior.param_len();
        AmhConfig {
            n_iterations: self.n_iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            adaptation_start: self.adaptation_start,
            proposal_scale: self.proposal_scale.unwrap_or(2.4 * 2.4 / d as f64),
            regularization: self.regularization,
            initial_proposal_cov: prior.cov.clone() * 0.01,
            seed,
        }
    }
}

/// PoF sampler settings carried by the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PofSettings {
    pub m_inputs: usize,
    pub q_paths: usize,
}

impl Default for PofSettings {
    fn default() -> Self {
        Self {
            m_inputs: 500,
            q_paths: 20,
        }
    }
}

/// Full configuration of a replicated experiment.
///
/// The defaults reproduce the oscillator study: domain
/// `[0, 30] x [0, 1]`, fidelity levels `1, 0.5, 0.1, 0.05, 0.01` s with
/// design sizes `168/56/28/14/7`, output range guess `r_out = 40`,
/// threshold `z_crit = 1` and reference fidelity `0.01` s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub bounds: Vec<(f64, f64)>,
    pub fidelity_levels: Vec<f64>,
    pub design_sizes: Vec<usize>,
    pub maximin_iterations: usize,
    pub r_out: f64,
    pub z_crit: f64,
    pub t_ref: f64,
    pub noise_correlation: f64,
    pub variant: Variant,
    pub replications: usize,
    pub master_seed: u64,
    pub t_end: f64,
    pub noise_mode: NoiseMode,
    pub amh: AmhSettings,
    pub map_restarts: usize,
    pub pof: PofSettings,
    /// Monte-Carlo budget for the internally computed reference PoF.
    pub reference_runs: usize,
    /// Externally supplied reference PoF; skips the internal Monte Carlo.
    pub reference_value: Option<f64>,
    pub coverage_levels: Vec<f64>,
    pub kde_grid_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bounds: vec![(0.0, 30.0), (0.0, 1.0)],
            fidelity_levels: vec![1.0, 0.5, 0.1, 0.05, 0.01],
            design_sizes: vec![168, 56, 28, 14, 7],
            maximin_iterations: 2_000,
            r_out: 40.0,
            z_crit: 1.0,
            t_ref: 0.01,
            noise_correlation: 0.99,
            variant: Variant::MfFb,
            replications: 240,
            master_seed: 0,
            t_end: 30.0,
            noise_mode: NoiseMode::ExpEuler,
            amh: AmhSettings::default(),
            map_restarts: 10,
            pof: PofSettings::default(),
            reference_runs: 1_000_000,
            reference_value: None,
            coverage_levels: (1..=19).map(|i| i as f64 / 20.0).collect(),
            kde_grid_points: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.len() != 2 {
            return Err(Error::InvalidConfig(
                "the oscillator testbed has exactly 2 inputs".into(),
            ));
        }
        if !self.bounds.iter().all(|&(a, b)| a < b) {
            return Err(Error::InvalidConfig("invalid domain bounds".into()));
        }
        if self.fidelity_levels.len() != self.design_sizes.len()
            || self.fidelity_levels.is_empty()
        {
            return Err(Error::InvalidConfig(
                "fidelity levels and design sizes must match and be nonempty".into(),
            ));
        }
        if !self
            .fidelity_levels
            .iter()
            .position(|&t| (t - self.t_ref).abs() <= 1e-12 * t.abs().max(1.0))
            .is_some()
        {
            return Err(Error::InvalidConfig(format!(
                "t_ref = {} is not one of the fidelity levels",
                self.t_ref
            )));
        }
        if self.replications < 1 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        if !self.coverage_levels.iter().all(|&g| g > 0.0 && g < 1.0) {
            return Err(Error::InvalidConfig(
                "coverage levels must lie in (0, 1)".into(),
            ));
        }
        if self.kde_grid_points < 2 {
            return Err(Error::InvalidConfig("need at least 2 KDE grid points".into()));
        }
        Ok(())
    }

    /// Parse from JSON; unknown keys are rejected, missing keys take their
    /// defaults.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Interval levels used per replication: the coverage grid plus 0.95
    /// (needed for the interval-length outputs), deduplicated.
    pub fn summary_levels(&self) -> Vec<f64> {
        let mut levels = self.coverage_levels.clone();
        if !levels.iter().any(|&g| (g - 0.95).abs() <= 1e-12) {
            levels.push(0.95);
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        levels
    }
}

/// Where the reference PoF came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    Computed,
    Configured,
}

/// The reference PoF and its Monte-Carlo uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub value: f64,
    pub standard_error: f64,
    pub n_runs: usize,
    pub source: ReferenceSource,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: usize,
    /// Observations actually used by the fitted variant.
    pub n_observations: usize,
    /// Retained hyper-parameter draws (1 for MAP plug-in).
    pub n_thetas: usize,
    /// Chain acceptance rate (fully-Bayesian variants only).
    pub acceptance_rate: Option<f64>,
    /// Thetas skipped by the PoF sampler.
    pub n_skipped_thetas: usize,
    pub summary: PofSummary,
    /// Deterministic relative file name for the theta draws, written by the
    /// command-line harness next to the report.
    pub theta_csv: String,
}

/// Aggregated outcome of a replicated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub reference: ReferenceInfo,
    pub replications: Vec<ReplicationResult>,
    pub failed_replications: Vec<usize>,
    pub coverage: Vec<CoveragePoint>,
    pub medians: Vec<f64>,
    pub interval_lengths_95: Vec<f64>,
    pub kde_medians: Option<KdeCurve>,
    pub kde_lengths_95: Option<KdeCurve>,
}

/// Direct Monte-Carlo estimate of the PoF at the reference fidelity, with
/// its binomial standard error.
pub fn reference_pof(cfg: &ExperimentConfig, n_runs: usize, seed: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    if n_runs < 1_000 {
        return Err(Error::InvalidArgument(
            "reference Monte Carlo needs at least 1e3 runs".into(),
        ));
    }
    let hits: usize = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rng::stream(seed, &[TAG_REFERENCE, i as u64]);
            let omega0 = rng.gen_range(cfg.bounds[0].0..cfg.bounds[0].1);
            let zeta = rng.gen_range(cfg.bounds[1].0..cfg.bounds[1].1);
            let input = OscillatorInput::with_horizon(omega0, zeta, cfg.t_ref, cfg.t_end)
                .expect("validated configuration");
            match simulate(&input, cfg.noise_mode, &mut rng) {
                Ok(out) => usize::from(out > cfg.z_crit),
                Err(_) => 0,
            }
        })
        .sum();
    let p = hits as f64 / n_runs as f64;
    let se = (p * (1.0 - p) / n_runs as f64).sqrt();
    Ok((p, se))
}

/// Everything produced while running one replication, before summarizing
/// into a [`ReplicationResult`]. Exposed so the harness can dump traces.
pub struct ReplicationArtifacts {
    pub dataset: MfDataset,
    pub prior: PriorSpec,
    pub posterior: Option<PosteriorSample>,
    pub thetas: Vec<crate::prior::HyperParams>,
    pub pof_samples: crate::pof::PofSampleSet,
    pub result: ReplicationResult,
}

/// Run a single replication: fresh design, fresh observations, fit,
/// PoF sample, summary.
pub fn run_replication(cfg: &ExperimentConfig, r: usize) -> Result<ReplicationArtifacts> {
    cfg.validate()?;
    let seed_r = crate::rng::derive_seed(cfg.master_seed, &[TAG_REPLICATION, r as u64]);
    let dim = cfg.bounds.len();

    let design = generate_nlhs(
        dim,
        &cfg.design_sizes,
        &cfg.fidelity_levels,
        &mut crate::rng::stream(seed_r, &[STEP_DESIGN]),
    )?;
    let design = maximin_improve(
        &design,
        cfg.maximin_iterations,
        &mut crate::rng::stream(seed_r, &[STEP_MAXIMIN]),
    );

    let mut points = Vec::new();
    let mut inputs = Vec::new();
    for s in 0..design.n_levels() {
        let t = cfg.fidelity_levels[s];
        for x in design.level_points_scaled(s, &cfg.bounds)? {
            inputs.push(OscillatorInput::with_horizon(x[0], x[1], t, cfg.t_end)?);
            points.push((x, t));
        }
    }
    let outputs = batch_simulate(
        &inputs,
        cfg.noise_mode,
        crate::rng::derive_seed(seed_r, &[STEP_SIMULATE]),
    )?;
    let full = MfDataset::new(
        points,
        outputs,
        cfg.fidelity_levels.clone(),
        cfg.bounds.clone(),
    )?;

    let (dataset, prior) = if cfg.variant.is_multi_fidelity() {
        let prior = default_prior_with_correlation(
            dim,
            cfg.fidelity_levels.len(),
            cfg.r_out,
            &cfg.bounds,
            cfg.noise_correlation,
        )?;
        (full, prior)
    } else {
        let s_ref = full.level_index_of(cfg.t_ref).ok_or_else(|| {
            Error::InvalidConfig("t_ref is not an observed level".into())
        })?;
        let restricted = full.restrict_to_level(s_ref)?;
        let prior = single_level_prior(dim, cfg.r_out, &cfg.bounds)?;
        (restricted, prior)
    };

    let fit_seed = crate::rng::derive_seed(seed_r, &[STEP_FIT]);
    let (thetas, acceptance_rate, posterior) = if cfg.variant.is_fully_bayesian() {
        let amh_cfg = cfg.amh.to_config(&prior, fit_seed);
        let sample = run_amh(&dataset, &prior, &amh_cfg)?;
        (
            sample.thetas.clone(),
            Some(sample.acceptance_rate),
            Some(sample),
        )
    } else {
        let theta = map_estimate(
            &dataset,
            &prior,
            cfg.map_restarts,
            &mut crate::rng::stream(fit_seed, &[]),
        )?;
        (vec![theta], None, None)
    };

    let pof_cfg = PofConfig {
        z_crit: cfg.z_crit,
        t_ref: cfg.t_ref,
        m_inputs: cfg.pof.m_inputs,
        q_paths: cfg.pof.q_paths,
        input_sampler: InputSampler::Uniform {
            bounds: cfg.bounds.clone(),
        },
        seed: crate::rng::derive_seed(seed_r, &[STEP_POF]),
    };
    let pof_samples = sample_pof(&dataset, &thetas, &pof_cfg)?;
    let summary = summarize(&pof_samples, &cfg.summary_levels())?;

    let result = ReplicationResult {
        index: r,
        n_observations: dataset.n(),
        n_thetas: thetas.len(),
        acceptance_rate,
        n_skipped_thetas: pof_samples.skipped.len(),
        summary,
        theta_csv: format!("replication_{r:04}_thetas.csv"),
    };
    Ok(ReplicationArtifacts {
        dataset,
        prior,
        posterior,
        thetas,
        pof_samples,
        result,
    })
}

fn maybe_kde(values: &[f64], grid_points: usize) -> Option<KdeCurve> {
    let grid = kde_grid(values, grid_points, 4.0).ok()?;
    kde_density(values, &grid).ok()
}

/// The reference PoF the experiment will aggregate against: configured
/// value if present, internal Monte Carlo otherwise.
pub fn compute_reference(cfg: &ExperimentConfig) -> Result<ReferenceInfo> {
    match cfg.reference_value {
        Some(value) => Ok(ReferenceInfo {
            value,
            standard_error: 0.0,
            n_runs: 0,
            source: ReferenceSource::Configured,
        }),
        None => {
            let (value, standard_error) = reference_pof(
                cfg,
                cfg.reference_runs,
                crate::rng::derive_seed(cfg.master_seed, &[TAG_REFERENCE]),
            )?;
            Ok(ReferenceInfo {
                value,
                standard_error,
                n_runs: cfg.reference_runs,
                source: ReferenceSource::Computed,
            })
        }
    }
}

/// Aggregate per-replication outcomes into the final report.
pub fn assemble_report(
    cfg: &ExperimentConfig,
    reference: ReferenceInfo,
    outcomes: Vec<(usize, Result<ReplicationResult>)>,
) -> Result<ExperimentReport> {
    let mut replications = Vec::new();
    let mut failed = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(res) => replications.push(res),
            Err(_) => failed.push(r),
        }
    }
    if failed.len() * 10 > cfg.replications {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: cfg.replications,
            detail: "replication failures exceeded 10%".into(),
        });
    }
    if replications.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: cfg.replications,
            detail: "no replication succeeded".into(),
        });
    }

    let summaries: Vec<PofSummary> = replications.iter().map(|r| r.summary.clone()).collect();
    let mut coverage_levels = cfg.coverage_levels.clone();
    coverage_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let coverage = coverage_report(&summaries, reference.value, &coverage_levels)?;

    let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    let interval_lengths_95: Vec<f64> = summaries
        .iter()
        .map(|s| {
            s.intervals
                .iter()
                .find(|i| (i.level - 0.95).abs() <= 1e-12)
                .map(|i| i.length)
                .expect("0.95 interval is always included")
        })
        .collect();

    let kde_medians = maybe_kde(&medians, cfg.kde_grid_points);
    let kde_lengths_95 = maybe_kde(&interval_lengths_95, cfg.kde_grid_points);

    Ok(ExperimentReport {
        config: cfg.clone(),
        reference,
        replications,
        failed_replications: failed,
        coverage,
        medians,
        interval_lengths_95,
        kde_medians,
        kde_lengths_95,
    })
}

/// Run the full replicated experiment described by `cfg`.
///
/// Replications run in parallel; per-replication failures are tolerated up
/// to 10% and recorded in the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let reference = compute_reference(cfg)?;
    let outcomes: Vec<(usize, Result<ReplicationResult>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| (r, run_replication(cfg, r).map(|a| a.result)))
        .collect();
    assemble_report(cfg, reference, outcomes)
}
