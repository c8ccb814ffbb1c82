//! Fitting a generated model's parameters to observed trajectories.
//!
//! The payoff is the sum of squared differences between simulated and observed
//! states over every dataset, sample time and state.

pub mod optim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{integrate_with, IntegrationConfig};
use crate::error::{FsnnError, Result};
use crate::ground_truth::TrainingDataset;
use crate::model::{GeneratedModel, ModelShape, ParameterVector};

pub use optim::{Bounds, EvalLog, LeastSquares, Minimizer, OptimizerKind, PENALTY};

/// Largest parameter vector `train` accepts.
pub const MAX_PARAMS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub integration: IntegrationConfig,
    /// Symmetric per-parameter box half-width.
    pub bounds: f64,
    /// Maximum payoff evaluations across all restarts.
    pub budget: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Extra runs from fresh perturbations of the zero start.
    pub restarts: usize,
    /// Standard deviation of the seeded perturbation applied to the zero start
    /// before each run; zero weights are a stationary point of the payoff.
    pub symmetry_breaking: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            integration: IntegrationConfig::default(),
            bounds: 10.0,
            budget: 20_000,
            seed: 0,
            optimizer: OptimizerKind::TrustRegion,
            restarts: 0,
            symmetry_breaking: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.integration.validate()?;
        if self.budget == 0 {
            return Err(FsnnError::config("training budget must be >= 1"));
        }
        if !(self.bounds.is_finite() && self.bounds > 0.0) {
            return Err(FsnnError::config("bounds must be finite and > 0"));
        }
        if !(self.symmetry_breaking.is_finite() && self.symmetry_breaking >= 0.0) {
            return Err(FsnnError::config("symmetry_breaking must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub params: ParameterVector,
    pub payoff: f64,
    pub evaluations_used: usize,
    pub converged: bool,
    pub per_state_rmse: Vec<f64>,
    /// Best-so-far payoff by evaluation index, one entry per improvement.
    pub trace: Vec<(usize, f64)>,
}

impl TrainingResult {
    pub fn best_so_far_trace(&self) -> &[(usize, f64)] {
        &self.trace
    }
}

/// Where each dataset's samples fall on the solver grid.
#[derive(Debug, Clone)]
struct DatasetGrid {
    /// Solver step index of every sample, strictly increasing.
    steps: Vec<usize>,
}

/// The payoff as a residual vector over all datasets.
pub struct TrainingProblem<'a> {
    shape: &'a ModelShape,
    datasets: &'a [TrainingDataset],
    dt: f64,
    grids: Vec<DatasetGrid>,
    n_residuals: usize,
}

impl<'a> TrainingProblem<'a> {
    pub fn new(shape: &'a ModelShape, datasets: &'a [TrainingDataset], integration: &IntegrationConfig) -> Result<Self> {
        integration.validate()?;
        if datasets.is_empty() {
            return Err(FsnnError::input("at least one training dataset is required"));
        }
        let n = shape.n_states();
        let dt = integration.dt;
        let mut grids = Vec::with_capacity(datasets.len());
        let mut n_residuals = 0;
        for (d, ds) in datasets.iter().enumerate() {
            if ds.trajectory.n_states() != n || ds.initialization.len() != n {
                return Err(FsnnError::input(format!(
                    "dataset {d} has {} states, model has {n}",
                    ds.trajectory.n_states()
                )));
            }
            let mut steps = Vec::with_capacity(ds.trajectory.len());
            for k in 0..ds.trajectory.len() {
                let t = ds.trajectory.time(k);
                let s = (t / dt).round();
                if s < 0.0 || (t / dt - s).abs() > 1e-9 {
                    return Err(FsnnError::input(format!("dataset {d} sample time {t} is off the dt grid")));
                }
                let s = s as usize;
                if steps.last().is_some_and(|&p| p >= s) {
                    return Err(FsnnError::input(format!("dataset {d} sample times are not increasing")));
                }
                steps.push(s);
            }
            n_residuals += steps.len() * n;
            grids.push(DatasetGrid { steps });
        }
        Ok(TrainingProblem {
            shape,
            datasets,
            dt,
            grids,
            n_residuals,
        })
    }

    /// Simulated minus observed, or `None` if a simulation fails.
    pub fn residual_vector(&self, params: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.n_residuals];
        self.residuals(params, &mut out).then_some(out)
    }

    pub fn payoff(&self, params: &[f64]) -> f64 {
        match self.residual_vector(params) {
            Some(r) => {
                let f: f64 = r.iter().map(|v| v * v).sum();
                if f.is_finite() {
                    f
                } else {
                    PENALTY
                }
            }
            None => PENALTY,
        }
    }

    /// Root-mean-square residual per state across all datasets and samples.
    pub fn per_state_rmse(&self, params: &[f64]) -> Vec<f64> {
        let n = self.shape.n_states();
        match self.residual_vector(params) {
            Some(r) => {
                let rows = (self.n_residuals / n) as f64;
                (0..n)
                    .map(|i| (r.iter().skip(i).step_by(n).map(|v| v * v).sum::<f64>() / rows).sqrt())
                    .collect()
            }
            None => vec![f64::INFINITY; n],
        }
    }
}

impl LeastSquares for TrainingProblem<'_> {
    fn dim(&self) -> usize {
        self.shape.param_count()
    }

    fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool {
        if x.len() != self.shape.param_count() {
            return false;
        }
        let n = self.shape.n_states();
        let view = self.shape.view(x);
        let mut at = 0;
        for (ds, grid) in self.datasets.iter().zip(&self.grids) {
            let obs = &ds.trajectory.samples;
            let mut next = 0;
            // samples at step 0 compare against the initialization itself
            while next < grid.steps.len() && grid.steps[next] == 0 {
                for i in 0..n {
                    out[at + i] = ds.initialization[i] - obs[next][i];
                }
                at += n;
                next += 1;
            }
            let Some(&last) = grid.steps.last() else { continue };
            if last == 0 {
                continue;
            }
            let ok = integrate_with(&view, &ds.initialization, self.dt, last, |k, s| {
                if next < grid.steps.len() && grid.steps[next] == k {
                    for i in 0..n {
                        out[at + i] = s[i] - obs[next][i];
                    }
                    at += n;
                    next += 1;
                }
            });
            if ok.is_err() {
                return false;
            }
        }
        true
    }
}

/// Sum of squared simulation errors for `params` against `datasets`.
pub fn payoff(
    params: &ParameterVector,
    shape: &ModelShape,
    datasets: &[TrainingDataset],
    integration: &IntegrationConfig,
) -> Result<f64> {
    if params.len() != shape.param_count() {
        return Err(FsnnError::input("parameter vector does not match model shape"));
    }
    Ok(TrainingProblem::new(shape, datasets, integration)?.payoff(&params.0))
}

/// Fits the model from zero parameters.
///
/// The zero vector is evaluated first. Each optimizer run then starts from a
/// seeded perturbation of it; `injected` starting points (if any) are run
/// before those. The budget is shared evenly among the runs that remain.
pub fn train(
    cfg: &TrainingConfig,
    datasets: &[TrainingDataset],
    shape: &ModelShape,
    injected: &[ParameterVector],
) -> Result<TrainingResult> {
    cfg.validate()?;
    let dim = shape.param_count();
    if dim > MAX_PARAMS {
        return Err(FsnnError::config(format!("{dim} parameters exceeds the ceiling of {MAX_PARAMS}")));
    }
    if let Some(bad) = injected.iter().find(|p| p.len() != dim) {
        return Err(FsnnError::input(format!("injected start has {} parameters, expected {dim}", bad.len())));
    }
    let problem = TrainingProblem::new(shape, datasets, &cfg.integration)?;
    let bounds = Bounds::symmetric(dim, cfg.bounds);
    let minimizer = cfg.optimizer.build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = EvalLog::new(cfg.budget);
    let mut scratch = vec![0.0; problem.n_residuals()];
    let zero = vec![0.0; dim];
    log.eval(&problem, &zero, &mut scratch);

    let total_runs = injected.len() + 1 + cfg.restarts;
    let mut converged = false;
    for run in 0..total_runs {
        if log.exhausted() {
            break;
        }
        let start = match injected.get(run) {
            Some(p) => p.0.clone(),
            None => optim::jitter(&zero, cfg.symmetry_breaking, &bounds, &mut rng),
        };
        log.cap(log.remaining() / (total_runs - run));
        let done = minimizer.minimize(&problem, &start, &bounds, &mut log, &mut rng);
        log::info!(
            "run {run}: best payoff {:.6e} after {} evaluations (converged {done})",
            log.best().1,
            log.evaluations()
        );
        converged |= done;
    }

    let (best, best_f) = log.best();
    let params = ParameterVector(best.to_vec());
    Ok(TrainingResult {
        per_state_rmse: problem.per_state_rmse(&params.0),
        params,
        payoff: best_f,
        evaluations_used: log.evaluations(),
        converged,
        trace: log.trace().to_vec(),
    })
}

impl GeneratedModel {
    /// Builds the fitted model from a training result.
    pub fn from_training(shape: ModelShape, result: &TrainingResult) -> Result<Self> {
        GeneratedModel::new(shape, result.params.clone())
    }
}
