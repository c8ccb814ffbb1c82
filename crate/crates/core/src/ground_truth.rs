//! The three-state cyclic benchmark: a chain of first-order delays closed by
//! a sigmoid feedback from the last stock to the first inflow.

use serde::{Deserialize, Serialize};

use crate::dynsys::{default_state_names, integrate, IntegrationConfig, StateVector, System, Trajectory};
use crate::error::{FsnnError, Result};

/// Initialization 1 of the training data.
pub const TRAINING_INIT_1: [f64; 3] = [29.0, 96.0, 4.0];
/// Initialization 2 of the training data.
pub const TRAINING_INIT_2: [f64; 3] = [22.0, 11.0, 78.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthParams {
    /// Delay time constant.
    pub t: f64,
    /// Target level driving the first inflow.
    pub g: f64,
    /// Horizontal scale of the sigmoid; slope at the inflection is `50 / sigmoid_halfwidth`.
    pub sigmoid_halfwidth: f64,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        GroundTruthParams {
            t: 5.0,
            g: 75.0,
            sigmoid_halfwidth: 40.0,
        }
    }
}

impl GroundTruthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("g", self.g), ("sigmoid_halfwidth", self.sigmoid_halfwidth)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FsnnError::config(format!("ground truth {name} must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// Increasing sigmoid through (50, 50) with range (0, 100).
pub fn sigmoid_f(x: f64, p: &GroundTruthParams) -> f64 {
    50.0 * (1.0 + ((x - 50.0) / p.sigmoid_halfwidth).tanh())
}

fn sigmoid_slope(x: f64, p: &GroundTruthParams) -> f64 {
    let th = ((x - 50.0) / p.sigmoid_halfwidth).tanh();
    50.0 / p.sigmoid_halfwidth * (1.0 - th * th)
}

/// The four flows `(flow_1, flow_2, flow_3, flow_4)`.
pub fn flows(s: &[f64], p: &GroundTruthParams) -> [f64; 4] {
    [
        (p.g - sigmoid_f(s[2], p)) / p.t,
        s[0] / p.t,
        s[1] / p.t,
        s[2] / p.t,
    ]
}

/// Stock derivatives, each inflow minus outflow.
pub fn ground_truth_derivs(s: &[f64], p: &GroundTruthParams) -> [f64; 3] {
    let f = flows(s, p);
    [f[0] - f[1], f[1] - f[2], f[2] - f[3]]
}

/// Analytic partials; `jac[target][source] = d(dS_target)/dS_source`.
pub fn ground_truth_jacobian(s: &[f64], p: &GroundTruthParams) -> [[f64; 3]; 3] {
    let inv = 1.0 / p.t;
    [
        [-inv, 0.0, -sigmoid_slope(s[2], p) * inv],
        [inv, -inv, 0.0],
        [0.0, inv, -inv],
    ]
}

/// Level `S*` with `S* + f(S*) = g`, found by bisection.
pub fn equilibrium_level(p: &GroundTruthParams) -> f64 {
    let h = |x: f64| x + sigmoid_f(x, p) - p.g;
    let (mut lo, mut hi) = (p.g - 100.0, p.g);
    // bisect down to adjacent floats, then keep the smaller residual
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if h(hi).abs() < h(lo).abs() {
        hi
    } else {
        lo
    }
}

/// The benchmark as an integrable system.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroundTruth {
    pub params: GroundTruthParams,
}

impl GroundTruth {
    pub fn new(params: GroundTruthParams) -> Self {
        GroundTruth { params }
    }

    pub fn equilibrium(&self) -> StateVector {
        let s = equilibrium_level(&self.params);
        StateVector::from([s, s, s])
    }

    pub fn state_names() -> Vec<String> {
        default_state_names(3)
    }
}

impl System for GroundTruth {
    fn dim(&self) -> usize {
        3
    }

    fn derivs(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&ground_truth_derivs(state, &self.params));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub initialization: StateVector,
    pub trajectory: Trajectory,
}

impl TrainingDataset {
    pub fn new(initialization: StateVector, trajectory: Trajectory) -> Result<Self> {
        if initialization.len() != trajectory.n_states() {
            return Err(FsnnError::input("initialization length differs from trajectory state count"));
        }
        Ok(TrainingDataset {
            initialization,
            trajectory,
        })
    }
}

pub fn training_initializations() -> Vec<StateVector> {
    vec![TRAINING_INIT_1.into(), TRAINING_INIT_2.into()]
}

/// Simulates the benchmark from each initialization.
pub fn generate_training_data(
    inits: &[StateVector],
    p: &GroundTruthParams,
    cfg: &IntegrationConfig,
) -> Result<Vec<TrainingDataset>> {
    p.validate()?;
    let sys = GroundTruth::new(*p);
    let names = GroundTruth::state_names();
    inits
        .iter()
        .map(|init| {
            if init.len() != 3 {
                return Err(FsnnError::input(format!("initialization has {} values, expected 3", init.len())));
            }
            let trajectory = integrate(&sys, init, cfg, &names)?;
            TrainingDataset::new(init.clone(), trajectory)
        })
        .collect()
}
