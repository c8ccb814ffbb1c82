//! Fixed-step dynamical systems and classical Runge-Kutta integration.
//!
//! A [`System`] maps `(t, state)` to the state derivative. Trajectories are
//! sampled on a uniform grid that is an integer multiple of the solver step.

use serde::{Deserialize, Serialize};

use crate::error::{FsnnError, Result};

const GRID_TOL: f64 = 1e-9;

/// Ordered state values, one per named state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

impl<const N: usize> From<[f64; N]> for StateVector {
    fn from(v: [f64; N]) -> Self {
        StateVector(v.to_vec())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A right-hand side `ds/dt = f(t, s)`.
pub trait System {
    fn dim(&self) -> usize;

    /// Writes the derivative at `(t, state)` into `out`.
    fn derivs(&self, t: f64, state: &[f64], out: &mut [f64]);

    fn derivs_vec(&self, t: f64, state: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.derivs(t, state, &mut out);
        out
    }
}

impl<S: System + ?Sized> System for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn derivs(&self, t: f64, state: &[f64], out: &mut [f64]) {
        (**self).derivs(t, state, out)
    }
}

/// Adapts a closure returning a derivative vector into a [`System`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnSystem { dim, f }
    }
}

impl<F> System for FnSystem<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn derivs(&self, t: f64, state: &[f64], out: &mut [f64]) {
        let d = (self.f)(t, state);
        out.copy_from_slice(&d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub sample_interval: f64,
    /// Emit the initial state as the first sample.
    #[serde(default)]
    pub include_initial: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            dt: 0.25,
            horizon: 100.0,
            sample_interval: 1.0,
            include_initial: false,
        }
    }
}

fn integer_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if !r.is_finite() || k < 1.0 || (r - k).abs() > GRID_TOL {
        return Err(FsnnError::config(format!(
            "{what} must be a positive integer multiple of dt (got ratio {r})"
        )));
    }
    Ok(k as usize)
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid().map(|_| ())
    }

    /// Returns `(total steps, steps per sample)`.
    pub fn grid(&self) -> Result<(usize, usize)> {
        for (name, v) in [
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("sample_interval", self.sample_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FsnnError::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let steps = integer_ratio(self.horizon, self.dt, "horizon")?;
        let per_sample = integer_ratio(self.sample_interval, self.dt, "sample_interval")?;
        if steps % per_sample != 0 {
            return Err(FsnnError::config(
                "horizon must be an integer multiple of sample_interval",
            ));
        }
        Ok((steps, per_sample))
    }

    pub fn steps(&self) -> Result<usize> {
        Ok(self.grid()?.0)
    }

    /// Number of emitted samples.
    pub fn sample_count(&self) -> Result<usize> {
        let (steps, per) = self.grid()?;
        Ok(steps / per + usize::from(self.include_initial))
    }
}

/// Uniformly sampled state history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub sample_interval: f64,
    pub state_names: Vec<String>,
    pub samples: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(
        t0: f64,
        sample_interval: f64,
        state_names: Vec<String>,
        samples: Vec<StateVector>,
    ) -> Result<Self> {
        if !(sample_interval.is_finite() && sample_interval > 0.0) {
            return Err(FsnnError::input("sample_interval must be > 0"));
        }
        if samples.is_empty() {
            return Err(FsnnError::input("trajectory has no samples"));
        }
        if let Some(bad) = samples.iter().position(|s| s.len() != state_names.len()) {
            return Err(FsnnError::input(format!(
                "sample {bad} has {} values, expected {}",
                samples[bad].len(),
                state_names.len()
            )));
        }
        Ok(Trajectory {
            t0,
            sample_interval,
            state_names,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.sample_interval
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|k| self.time(k)).collect()
    }

    /// Values of state `i` across all samples.
    pub fn series(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.0[i]).collect()
    }
}

/// Default names `State_1 .. State_n`.
pub fn default_state_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("State_{i}")).collect()
}

/// Reusable RK4 stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(n: usize) -> Self {
        Rk4Workspace {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn check(v: &[f64], t: f64) -> Result<()> {
        match v.iter().position(|x| !x.is_finite()) {
            Some(state) => Err(FsnnError::Integration { state, time: t }),
            None => Ok(()),
        }
    }

    /// Advances `state` in place by one classical RK4 step.
    pub fn step<S: System + ?Sized>(
        &mut self,
        sys: &S,
        state: &mut [f64],
        t: f64,
        dt: f64,
    ) -> Result<()> {
        let n = state.len();
        let half = 0.5 * dt;

        sys.derivs(t, state, &mut self.k1);
        Self::check(&self.k1, t)?;
        for i in 0..n {
            self.tmp[i] = state[i] + half * self.k1[i];
        }
        sys.derivs(t + half, &self.tmp, &mut self.k2);
        Self::check(&self.k2, t + half)?;
        for i in 0..n {
            self.tmp[i] = state[i] + half * self.k2[i];
        }
        sys.derivs(t + half, &self.tmp, &mut self.k3);
        Self::check(&self.k3, t + half)?;
        for i in 0..n {
            self.tmp[i] = state[i] + dt * self.k3[i];
        }
        sys.derivs(t + dt, &self.tmp, &mut self.k4);
        Self::check(&self.k4, t + dt)?;
        for i in 0..n {
            state[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Self::check(state, t + dt)
    }
}

fn check_init<S: System + ?Sized>(sys: &S, init: &StateVector) -> Result<()> {
    if init.len() != sys.dim() {
        return Err(FsnnError::input(format!(
            "initial state has {} values, system has {} states",
            init.len(),
            sys.dim()
        )));
    }
    if !init.is_finite() {
        return Err(FsnnError::input("initial state must be finite"));
    }
    Ok(())
}

/// One classical four-stage Runge-Kutta step. The input state is not modified.
pub fn rk4_step<S: System + ?Sized>(sys: &S, s: &StateVector, t: f64, dt: f64) -> Result<StateVector> {
    let mut ws = Rk4Workspace::new(s.len());
    let mut next = s.0.clone();
    ws.step(sys, &mut next, t, dt)?;
    Ok(StateVector(next))
}

/// Integrates from `init` at t = 0 and returns samples every `cfg.sample_interval`.
pub fn integrate<S: System + ?Sized>(
    sys: &S,
    init: &StateVector,
    cfg: &IntegrationConfig,
    state_names: &[String],
) -> Result<Trajectory> {
    let (steps, per) = cfg.grid()?;
    check_init(sys, init)?;
    let mut samples = Vec::with_capacity(steps / per + 1);
    if cfg.include_initial {
        samples.push(init.clone());
    }
    integrate_with(sys, init, cfg.dt, steps, |k, s| {
        if k % per == 0 {
            samples.push(StateVector(s.to_vec()));
        }
    })?;
    let t0 = if cfg.include_initial { 0.0 } else { cfg.sample_interval };
    Trajectory::new(t0, cfg.sample_interval, names_or_default(state_names, init.len()), samples)
}

/// Step-boundary states at every solver step, including the initial state.
pub fn integrate_dense<S: System + ?Sized>(
    sys: &S,
    init: &StateVector,
    cfg: &IntegrationConfig,
    state_names: &[String],
) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    check_init(sys, init)?;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(init.clone());
    integrate_with(sys, init, cfg.dt, steps, |_, s| samples.push(StateVector(s.to_vec())))?;
    Trajectory::new(0.0, cfg.dt, names_or_default(state_names, init.len()), samples)
}

/// Runs `steps` RK4 steps, calling `visit(k, state)` after step `k` (1-based).
pub fn integrate_with<S, V>(sys: &S, init: &StateVector, dt: f64, steps: usize, mut visit: V) -> Result<()>
where
    S: System + ?Sized,
    V: FnMut(usize, &[f64]),
{
    let mut ws = Rk4Workspace::new(init.len());
    let mut state = init.0.clone();
    for k in 1..=steps {
        let t = (k - 1) as f64 * dt;
        ws.step(sys, &mut state, t, dt)?;
        visit(k, &state);
    }
    Ok(())
}

fn names_or_default(names: &[String], n: usize) -> Vec<String> {
    if names.len() == n {
        names.to_vec()
    } else {
        default_state_names(n)
    }
}
