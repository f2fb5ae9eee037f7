//! Random damped harmonic oscillator, the multi-fidelity testbed.
//!
//! `X` solves the second-order SDE
//!
//! ```text
//! Xdd + 2 zeta omega0 Xd + omega0^2 X = W(t),
//! X(0) = Xd(0) = 0,
//! ```
//!
//! driven by white noise of unit one-sided spectral density, i.e.
//! `E[W(t) W(t+tau)] = 2 pi delta(tau)`. The state `(X, V)` is advanced by
//! an explicit exponential Euler scheme: the exact deterministic propagator
//! `exp(A dt)` with `A = [[0, 1], [-omega0^2, -2 zeta omega0]]`, plus one
//! noise increment per step. Two noise conventions are available:
//!
//! * [`NoiseMode::ExpEuler`] (default): an increment of standard deviation
//!   `sqrt(2 pi dt)` added to the velocity at the end of each step;
//! * [`NoiseMode::ExactOu`]: the full integrated covariance
//!   `int_0^dt exp(A s) q exp(A' s) ds`, giving the exact transition
//!   distribution of the continuous-time process.
//!
//! The simulator output is `max_n log |X_n|` over the steps `n >= 1` of the
//! integration horizon; the time step `dt` is the fidelity parameter. The
//! cost model is `C(dt) = 2.61/dt + 5.45` milliseconds.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Noise injection convention of the exponential Euler scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// End-of-step velocity increment with variance `2 pi dt`.
    #[default]
    ExpEuler,
    /// Exact one-step covariance of the linear SDE (Van Loan construction).
    ExactOu,
}

/// One simulator input: oscillator parameters plus the fidelity (time step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorInput {
    /// Natural pulse in `[0, 30]` rad/s.
    pub omega0: f64,
    /// Damping ratio in `[0, 1]`.
    pub zeta: f64,
    /// Time step in `(0, 1]` s; smaller is higher fidelity.
    pub dt: f64,
    /// Integration horizon in seconds.
    pub t_end: f64,
}

impl OscillatorInput {
    pub const DEFAULT_T_END: f64 = 30.0;

    pub fn new(omega0: f64, zeta: f64, dt: f64) -> Result<Self> {
        Self::with_horizon(omega0, zeta, dt, Self::DEFAULT_T_END)
    }

    pub fn with_horizon(omega0: f64, zeta: f64, dt: f64, t_end: f64) -> Result<Self> {
        let input = Self {
            omega0,
            zeta,
            dt,
            t_end,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=30.0).contains(&self.omega0) || !self.omega0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "omega0 must be in [0, 30], got {}",
                self.omega0
            )));
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::InvalidArgument(format!(
                "zeta must be in [0, 1], got {}",
                self.zeta
            )));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dt must be in (0, 1], got {}",
                self.dt
            )));
        }
        if !(self.t_end > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt <= t_end, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        Ok(())
    }

    /// Number of integration steps, `ceil(t_end / dt)` with protection
    /// against ratios that are integer up to rounding.
    pub fn n_steps(&self) -> usize {
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() < 1e-9 {
            ratio.round() as usize
        } else {
            ratio.ceil() as usize
        }
    }
}

/// sin(u)/u with a series fallback near zero.
fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-5 {
        1.0 - u * u / 6.0 + u.powi(4) / 120.0
    } else {
        u.sin() / u
    }
}

/// sinh(u)/u with a series fallback near zero.
fn sinhc(u: f64) -> f64 {
    if u.abs() < 1e-5 {
        1.0 + u * u / 6.0 + u.powi(4) / 120.0
    } else {
        u.sinh() / u
    }
}

/// Closed-form `exp(A dt)` for the oscillator drift matrix, row major.
///
/// Writing `A = -zeta omega0 I + B`, the matrix `B` squares to
/// `(zeta^2 - 1) omega0^2 I`, so the exponential reduces to circular
/// functions below critical damping and hyperbolic ones above it. The
/// degenerate cases (`zeta = 1`, `omega0 = 0`) fall out of the same
/// expressions through the stable `sinc`/`sinhc` evaluations.
pub fn propagator(omega0: f64, zeta: f64, dt: f64) -> [[f64; 2]; 2] {
    let decay = (-zeta * omega0 * dt).exp();
    let disc = zeta * zeta - 1.0;
    let (c, sfac) = if disc < 0.0 {
        let wd = omega0 * (-disc).sqrt();
        let u = wd * dt;
        (u.cos(), dt * sinc(u))
    } else {
        let we = omega0 * disc.sqrt();
        let u = we * dt;
        (u.cosh(), dt * sinhc(u))
    };
    let zw = zeta * omega0;
    [
        [decay * (c + zw * sfac), decay * sfac],
        [
            decay * (-omega0 * omega0 * sfac),
            decay * (c - zw * sfac),
        ],
    ]
}

/// One-step noise covariance `int_0^dt exp(A s) q exp(A' s) ds` with
/// `q = diag(0, 2 pi)`, computed by the Van Loan block-matrix exponential.
pub fn exact_step_covariance(omega0: f64, zeta: f64, dt: f64) -> [[f64; 2]; 2] {
    use nalgebra::DMatrix;
    let qw = 2.0 * std::f64::consts::PI;
    let a = [[0.0, 1.0], [-omega0 * omega0, -2.0 * zeta * omega0]];
    // H = [[-A, q], [0, A']] * dt; exp(H) = [[.., F12], [0, F22]],
    // Q = F22' F12
    let mut h = DMatrix::<f64>::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            h[(i, j)] = -a[i][j] * dt;
            h[(i + 2, j + 2)] = a[j][i] * dt;
        }
    }
    h[(1, 3)] = qw * dt;
    let f = h.exp();
    let f12 = f.view((0, 2), (2, 2));
    let f22 = f.view((2, 2), (2, 2));
    let q = f22.transpose() * f12;
    [[q[(0, 0)], 0.5 * (q[(0, 1)] + q[(1, 0)])], [0.5 * (q[(0, 1)] + q[(1, 0)]), q[(1, 1)]]]
}

/// Lower Cholesky factor of a 2x2 PSD matrix, clamping tiny negatives.
fn chol2(q: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let c11 = q[0][0].max(0.0).sqrt();
    let c21 = if c11 > 0.0 { q[1][0] / c11 } else { 0.0 };
    let c22 = (q[1][1] - c21 * c21).max(0.0).sqrt();
    [[c11, 0.0], [c21, c22]]
}

/// Result of one integrated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryOutcome {
    /// The trajectory never left zero (possible only without forcing).
    AllZero,
    /// `max_{n >= 1} log |X_n|`.
    MaxLogAmplitude(f64),
}

fn integrate(
    input: &OscillatorInput,
    mode: NoiseMode,
    noise_scale: f64,
    rng: &mut Stream,
) -> Result<(f64, [f64; 2])> {
    let p = propagator(input.omega0, input.zeta, input.dt);
    let n_steps = input.n_steps();
    let mut x = 0.0f64;
    let mut v = 0.0f64;
    let mut max_abs = 0.0f64;
    match mode {
        NoiseMode::ExpEuler => {
            let sig = noise_scale * (2.0 * std::f64::consts::PI * input.dt).sqrt();
            for _ in 0..n_steps {
                let eps: f64 = rng.sample(StandardNormal);
                let xn = p[0][0] * x + p[0][1] * v;
                let vn = p[1][0] * x + p[1][1] * v + sig * eps;
                x = xn;
                v = vn;
                if !x.is_finite() || !v.is_finite() {
                    return Err(Error::SimulationDiverged(format!(
                        "non-finite state for omega0 = {}, zeta = {}, dt = {}",
                        input.omega0, input.zeta, input.dt
                    )));
                }
                if x.abs() > max_abs {
                    max_abs = x.abs();
                }
            }
        }
        NoiseMode::ExactOu => {
            let q = exact_step_covariance(input.omega0, input.zeta, input.dt);
            let l = chol2(q);
            for _ in 0..n_steps {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let xn = p[0][0] * x + p[0][1] * v + noise_scale * l[0][0] * e1;
                let vn =
                    p[1][0] * x + p[1][1] * v + noise_scale * (l[1][0] * e1 + l[1][1] * e2);
                x = xn;
                v = vn;
                if !x.is_finite() || !v.is_finite() {
                    return Err(Error::SimulationDiverged(format!(
                        "non-finite state for omega0 = {}, zeta = {}, dt = {}",
                        input.omega0, input.zeta, input.dt
                    )));
                }
                if x.abs() > max_abs {
                    max_abs = x.abs();
                }
            }
        }
    }
    Ok((max_abs, [x, v]))
}

/// Integrate one trajectory with an explicit forcing scale (test hook).
///
/// With `noise_scale = 0` the trajectory stays at zero and the outcome
/// reports that instead of a log-amplitude.
pub fn simulate_trajectory(
    input: &OscillatorInput,
    mode: NoiseMode,
    noise_scale: f64,
    rng: &mut Stream,
) -> Result<TrajectoryOutcome> {
    input.validate()?;
    let (max_abs, _) = integrate(input, mode, noise_scale, rng)?;
    if max_abs == 0.0 {
        Ok(TrajectoryOutcome::AllZero)
    } else {
        Ok(TrajectoryOutcome::MaxLogAmplitude(max_abs.ln()))
    }
}

/// Simulator output `max_{n >= 1} log |X_n|` for one input.
pub fn simulate(input: &OscillatorInput, mode: NoiseMode, rng: &mut Stream) -> Result<f64> {
    match simulate_trajectory(input, mode, 1.0, rng)? {
        TrajectoryOutcome::MaxLogAmplitude(v) => Ok(v),
        TrajectoryOutcome::AllZero => Err(Error::ModelEvaluation(
            "trajectory never left zero; stochastic forcing is required".into(),
        )),
    }
}

/// Final state `(X, V)` at the end of the horizon (diagnostic surface).
pub fn simulate_final_state(
    input: &OscillatorInput,
    mode: NoiseMode,
    rng: &mut Stream,
) -> Result<[f64; 2]> {
    input.validate()?;
    let (_, state) = integrate(input, mode, 1.0, rng)?;
    Ok(state)
}

/// Cost model of the simulator in milliseconds, `2.61/dt + 5.45`.
pub fn cost(dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cost model needs dt > 0, got {dt}"
        )));
    }
    Ok(2.61 / dt + 5.45)
}

/// Simulate a batch; element `i` uses the stream derived from `(seed, i)`,
/// so results do not depend on the execution schedule.
pub fn batch_simulate(
    inputs: &[OscillatorInput],
    mode: NoiseMode,
    seed: u64,
) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty simulation batch".into()));
    }
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let mut rng = crate::rng::stream(seed, &[i as u64]);
            simulate(input, mode, &mut rng).map_err(|e| {
                Error::ModelEvaluation(format!("batch element {i}: {e}"))
            })
        })
        .collect()
}
