//! Command-line harness: designs, simulator batches, model fits, PoF
//! sampling, replicated experiments, the reference Monte Carlo and KDE
//! curves. Failures exit nonzero with a machine-readable JSON error on
//! stderr.

mod io;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use mfpof::amh::{map_estimate, run_amh};
use mfpof::design::{generate_nlhs, maximin_improve};
use mfpof::experiment::{
    assemble_report, compute_reference, run_replication, ExperimentConfig, Variant,
};
use mfpof::kde::{kde_density, kde_grid};
use mfpof::oscillator::{cost, simulate, NoiseMode, OscillatorInput};
use mfpof::pof::{sample_pof, summarize, InputSampler, PofConfig};
use mfpof::prior::{default_prior_with_correlation, single_level_prior};

#[derive(Parser)]
#[command(
    name = "mfpof",
    version,
    about = "Multi-fidelity Gaussian-process estimation of a probability of failure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (JSON); missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the model variant (mf-fb, mf-map, sl-fb, sl-map).
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Override the replication count.
    #[arg(long)]
    replications: Option<usize>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))?;
                ExperimentConfig::from_json_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(variant) = self.variant {
            cfg.variant = variant;
        }
        if let Some(replications) = self.replications {
            cfg.replications = replications;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a maximin-optimized nested Latin hypercube design.
    Design {
        /// Input dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Per-level point counts, lowest fidelity first.
        #[arg(long, value_delimiter = ',', default_values_t = vec![168, 56, 28, 14, 7])]
        sizes: Vec<usize>,
        /// Fidelity values, decreasing.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5, 0.1, 0.05, 0.01])]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximin improvement proposals.
        #[arg(long, default_value_t = 2000)]
        maximin_iters: usize,
        /// Output CSV (level,x1..xd).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oscillator on a CSV batch of (omega0,zeta,dt,seed) rows, or
    /// over a stored design, producing an observation file.
    Simulate {
        /// Batch CSV with omega0,zeta,dt,seed columns.
        #[arg(long, conflicts_with = "design")]
        input: Option<PathBuf>,
        /// Design CSV as written by `design`; points are simulated at their
        /// levels with seeds derived from --seed.
        #[arg(long, requires = "data_out")]
        design: Option<PathBuf>,
        /// Noise convention of the exponential Euler scheme.
        #[arg(long, default_value = "exp-euler")]
        mode: String,
        /// Integration horizon in seconds.
        #[arg(long, default_value_t = 30.0)]
        t_end: f64,
        /// Seed for --design simulation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV with outputs and cost annotations (with --input).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Observation CSV output x1..xd,t,z (with --design).
        #[arg(long)]
        data_out: Option<PathBuf>,
    },
    /// Fit the hyper-parameter posterior (AMH) or MAP point on a dataset.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Observations CSV (x1..xd,t,z).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sample the PoF posterior for stored hyper-parameter draws.
    Pof {
        #[command(flatten)]
        config: ConfigArgs,
        /// Observations CSV (x1..xd,t,z).
        #[arg(long)]
        data: PathBuf,
        /// Hyper-parameter draws CSV as written by `fit`.
        #[arg(long)]
        thetas: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the replicated experiment and write the aggregated report.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write one theta CSV per replication.
        #[arg(long, default_value_t = false)]
        emit_thetas: bool,
    },
    /// Direct Monte-Carlo reference value of the PoF.
    Reference {
        #[command(flatten)]
        config: ConfigArgs,
        /// Simulation budget.
        #[arg(long, default_value_t = 100_000)]
        runs: usize,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Kernel density estimate of a sample column.
    Kde {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "value")]
        column: String,
        #[arg(long)]
        grid_min: Option<f64>,
        #[arg(long)]
        grid_max: Option<f64>,
        #[arg(long, default_value_t = 256)]
        grid_points: usize,
        /// Output CSV (x,density).
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<NoiseMode> {
    match s {
        "exp-euler" => Ok(NoiseMode::ExpEuler),
        "exact-ou" => Ok(NoiseMode::ExactOu),
        other => anyhow::bail!("unknown noise mode '{other}' (expected exp-euler or exact-ou)"),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("cannot create directory {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))
}

fn build_prior(
    cfg: &ExperimentConfig,
    data: &mfpof::gp::MfDataset,
) -> Result<mfpof::prior::PriorSpec> {
    let prior = if cfg.variant.is_multi_fidelity() {
        default_prior_with_correlation(
            data.dim(),
            data.levels().len(),
            cfg.r_out,
            data.bounds(),
            cfg.noise_correlation,
        )?
    } else {
        single_level_prior(data.dim(), cfg.r_out, data.bounds())?
    };
    Ok(prior)
}

/// Restrict the dataset for single-level variants to the reference level.
fn variant_dataset(
    cfg: &ExperimentConfig,
    data: mfpof::gp::MfDataset,
) -> Result<mfpof::gp::MfDataset> {
    if cfg.variant.is_multi_fidelity() {
        return Ok(data);
    }
    let s_ref = data
        .level_index_of(cfg.t_ref)
        .ok_or_else(|| anyhow::anyhow!("t_ref = {} is not an observed level", cfg.t_ref))?;
    Ok(data.restrict_to_level(s_ref)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design {
            dim,
            sizes,
            levels,
            seed,
            maximin_iters,
            out,
        } => {
            let design = generate_nlhs(dim, &sizes, &levels, &mut mfpof::rng::stream(seed, &[0]))?;
            let design =
                maximin_improve(&design, maximin_iters, &mut mfpof::rng::stream(seed, &[1]));
            io::write_design_csv(&out, &design)?;
            println!(
                "design: {} levels, {} points at the densest level, min distance {:.6}",
                design.n_levels(),
                design.sizes()[0],
                design.min_distance()
            );
        }
        Command::Simulate {
            input,
            mode,
            t_end,
            out,
        } => {
            let mode = parse_mode(&mode)?;
            let requests = io::read_sim_requests(&input)?;
            let rows: Vec<(io::SimRequest, f64, f64)> = requests
                .into_par_iter()
                .map(|req| -> Result<_> {
                    let input = OscillatorInput::with_horizon(req.omega0, req.zeta, req.dt, t_end)?;
                    let output = simulate(&input, mode, &mut mfpof::rng::stream(req.seed, &[]))?;
                    let c = cost(req.dt)?;
                    Ok((req, output, c))
                })
                .collect::<Result<_>>()?;
            io::write_sim_results(&out, &rows)?;
            let total_cost: f64 = rows.iter().map(|(_, _, c)| c).sum();
            println!(
                "simulated {} runs, modeled cost {:.2} ms",
                rows.len(),
                total_cost
            );
        }
        Command::Fit {
            config,
            data,
            out_dir,
        } => {
            let cfg = config.load()?;
            ensure_dir(&out_dir)?;
            let dataset = variant_dataset(&cfg, io::read_data_csv(&data, &cfg.bounds)?)?;
            let prior = build_prior(&cfg, &dataset)?;
            if cfg.variant.is_fully_bayesian() {
                let amh_cfg = cfg.amh.to_config(&prior, cfg.master_seed);
                let sample = run_amh(&dataset, &prior, &amh_cfg)?;
                io::write_thetas_csv(&out_dir.join("thetas.csv"), &sample.thetas)?;
                io::write_trace_csv(
                    &out_dir.join("trace.csv"),
                    prior.kind,
                    &sample.trace_states,
                    &sample.trace_log_posterior,
                )?;
                write_json(
                    &out_dir.join("fit.json"),
                    &serde_json::json!({
                        "variant": cfg.variant.to_string(),
                        "n_observations": dataset.n(),
                        "n_thetas": sample.thetas.len(),
                        "acceptance_rate": sample.acceptance_rate,
                    }),
                )?;
                println!(
                    "retained {} draws, acceptance rate {:.3}",
                    sample.thetas.len(),
                    sample.acceptance_rate
                );
            } else {
                let theta = map_estimate(
                    &dataset,
                    &prior,
                    cfg.map_restarts,
                    &mut mfpof::rng::stream(cfg.master_seed, &[]),
                )?;
                io::write_thetas_csv(&out_dir.join("thetas.csv"), std::slice::from_ref(&theta))?;
                write_json(
                    &out_dir.join("fit.json"),
                    &serde_json::json!({
                        "variant": cfg.variant.to_string(),
                        "n_observations": dataset.n(),
                        "n_thetas": 1,
                    }),
                )?;
                println!("MAP point written");
            }
        }
        Command::Pof {
            config,
            data,
            thetas,
            out_dir,
        } => {
            let cfg = config.load()?;
            ensure_dir(&out_dir)?;
            let dataset = variant_dataset(&cfg, io::read_data_csv(&data, &cfg.bounds)?)?;
            let prior = build_prior(&cfg, &dataset)?;
            let thetas = io::read_thetas_csv(&thetas, prior.kind)?;
            let pof_cfg = PofConfig {
                z_crit: cfg.z_crit,
                t_ref: cfg.t_ref,
                m_inputs: cfg.pof.m_inputs,
                q_paths: cfg.pof.q_paths,
                input_sampler: InputSampler::Uniform {
                    bounds: cfg.bounds.clone(),
                },
                seed: cfg.master_seed,
            };
            let set = sample_pof(&dataset, &thetas, &pof_cfg)?;
            let summary = summarize(&set, &cfg.summary_levels())?;
            io::write_pof_samples_csv(&out_dir.join("pof_samples.csv"), &set)?;
            write_json(&out_dir.join("pof_summary.json"), &summary)?;
            println!(
                "PoF median {:.6} over {} draws ({} thetas skipped)",
                summary.median,
                summary.n_samples,
                set.skipped.len()
            );
        }
        Command::Experiment {
            config,
            out_dir,
            emit_thetas,
        } => {
            let cfg = config.load()?;
            ensure_dir(&out_dir)?;
            let reference = compute_reference(&cfg)?;
            let outcomes: Vec<(usize, mfpof::Result<_>)> = (0..cfg.replications)
                .into_par_iter()
                .map(|r| {
                    let outcome = run_replication(&cfg, r);
                    let result = match outcome {
                        Ok(artifacts) => {
                            if emit_thetas {
                                let path = out_dir.join(&artifacts.result.theta_csv);
                                if let Err(e) = io::write_thetas_csv(&path, &artifacts.thetas) {
                                    eprintln!("warning: {e}");
                                }
                            }
                            Ok(artifacts.result)
                        }
                        Err(e) => Err(e),
                    };
                    (r, result)
                })
                .collect();
            let report = assemble_report(&cfg, reference, outcomes)?;
            write_json(&out_dir.join("report.json"), &report)?;
            io::write_coverage_csv(&out_dir.join("coverage.csv"), &report.coverage)?;
            io::write_column_csv(&out_dir.join("medians.csv"), "median", &report.medians)?;
            io::write_column_csv(
                &out_dir.join("interval_lengths_95.csv"),
                "length",
                &report.interval_lengths_95,
            )?;
            let cov95 = report
                .coverage
                .iter()
                .find(|p| (p.level - 0.95).abs() <= 1e-12)
                .map(|p| p.coverage);
            println!(
                "variant {}: {} replications ({} failed), reference {:.6}, coverage at 0.95: {}",
                cfg.variant,
                report.replications.len(),
                report.failed_replications.len(),
                report.reference.value,
                cov95.map_or("n/a".to_string(), |c| format!("{c:.3}")),
            );
        }
        Command::Reference { config, runs, out } => {
            let cfg = config.load()?;
            let (estimate, standard_error) =
                mfpof::experiment::reference_pof(&cfg, runs, cfg.master_seed)?;
            write_json(
                &out,
                &serde_json::json!({
                    "estimate": estimate,
                    "standard_error": standard_error,
                    "n_runs": runs,
                    "z_crit": cfg.z_crit,
                    "t_ref": cfg.t_ref,
                    "noise_mode": cfg.noise_mode,
                    "seed": cfg.master_seed,
                }),
            )?;
            println!("reference PoF {estimate:.6} (se {standard_error:.6})");
        }
        Command::Kde {
            input,
            column,
            grid_min,
            grid_max,
            grid_points,
            out,
        } => {
            let samples = io::read_column(&input, &column)?;
            let grid = match (grid_min, grid_max) {
                (Some(lo), Some(hi)) => {
                    anyhow::ensure!(lo < hi && grid_points >= 2, "invalid KDE grid");
                    (0..grid_points)
                        .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64)
                        .collect()
                }
                (None, None) => kde_grid(&samples, grid_points, 4.0)?,
                _ => anyhow::bail!("provide both --grid-min and --grid-max or neither"),
            };
            let curve = kde_density(&samples, &grid)?;
            io::write_kde_csv(&out, &curve)?;
            println!(
                "density on {} grid points, bandwidth {:.6}",
                curve.grid.len(),
                curve.bandwidth
            );
        }
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<mfpof::Error>() {
        Some(mfpof::Error::InvalidArgument(_)) => "invalid-argument",
        Some(mfpof::Error::DimensionMismatch(_)) => "dimension-mismatch",
        Some(mfpof::Error::CholeskyFailure { .. }) => "cholesky-failure",
        Some(mfpof::Error::ModelEvaluation(_)) => "model-evaluation",
        Some(mfpof::Error::InvalidConfig(_)) => "invalid-config",
        Some(mfpof::Error::SimulationDiverged(_)) => "simulation-diverged",
        Some(mfpof::Error::TooManyFailures { .. }) => "too-many-failures",
        Some(mfpof::Error::ConfigParse(_)) => "config-parse",
        None => "other",
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let payload = serde_json::json!({
            "error": {
                "kind": error_kind(&err),
                "message": format!("{err:#}"),
            }
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
