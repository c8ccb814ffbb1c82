//! Bound-constrained derivative-free minimizers for sum-of-squares payoffs.
//!
//! Every evaluation goes through an [`EvalLog`], which enforces the budget and
//! keeps the best point seen so far, so a minimizer may stop at any time and
//! the caller still gets the best-found parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Payoff reported for points whose residuals cannot be computed.
pub const PENALTY: f64 = 1e18;

/// A vector of residuals whose sum of squares is minimized.
pub trait LeastSquares {
    fn dim(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Fills `out`; returns `false` when the point cannot be evaluated.
    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool;
}

/// Box constraints `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Bounds {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Budgeted evaluation counter with best-so-far bookkeeping.
#[derive(Debug, Clone)]
pub struct EvalLog {
    budget: usize,
    limit: usize,
    evals: usize,
    best_x: Vec<f64>,
    best_f: f64,
    trace: Vec<(usize, f64)>,
}

impl EvalLog {
    pub fn new(budget: usize) -> Self {
        EvalLog {
            budget,
            limit: budget,
            evals: 0,
            best_x: Vec::new(),
            best_f: f64::INFINITY,
            trace: Vec::new(),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evals
    }

    /// Evaluations left in the overall budget.
    pub fn remaining(&self) -> usize {
        self.budget - self.evals
    }

    /// Caps the evaluations available from now on at `extra` (within the budget).
    pub fn cap(&mut self, extra: usize) {
        self.limit = self.budget.min(self.evals + extra);
    }

    pub fn exhausted(&self) -> bool {
        self.evals >= self.limit
    }

    pub fn budget_spent(&self) -> bool {
        self.evals >= self.budget
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.best_x, self.best_f)
    }

    /// `(evaluation index, best payoff so far)`, one entry per improvement.
    pub fn trace(&self) -> &[(usize, f64)] {
        &self.trace
    }

    /// Evaluates `x`, writing residuals into `r`. Returns `None` once the
    /// budget is spent, otherwise the payoff (or [`PENALTY`]).
    pub fn eval(&mut self, obj: &dyn LeastSquares, x: &[f64], r: &mut [f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        self.evals += 1;
        let f = if obj.residuals(x, r) {
            let f: f64 = r.iter().map(|v| v * v).sum();
            if f.is_finite() {
                f
            } else {
                PENALTY
            }
        } else {
            PENALTY
        };
        if f < self.best_f || self.trace.is_empty() {
            if f < self.best_f {
                self.best_f = f;
                self.best_x.clear();
                self.best_x.extend_from_slice(x);
            }
            self.trace.push((self.evals, self.best_f));
        }
        Some(f)
    }
}

/// A derivative-free minimizer driven through an [`EvalLog`].
pub trait Minimizer {
    fn name(&self) -> &'static str;

    /// Minimizes from `start` until converged (returns `true`) or the log's
    /// budget runs out (returns `false`).
    fn minimize(
        &self,
        obj: &dyn LeastSquares,
        start: &[f64],
        bounds: &Bounds,
        log: &mut EvalLog,
        rng: &mut ChaCha8Rng,
    ) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Trust-region method on an interpolated quadratic (Gauss-Newton) model.
    TrustRegion,
    /// Adam steps on forward-difference gradients.
    FdGradient,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 2] = [OptimizerKind::TrustRegion, OptimizerKind::FdGradient];

    pub fn id(&self) -> &'static str {
        match self {
            OptimizerKind::TrustRegion => "trust-region",
            OptimizerKind::FdGradient => "fd-gradient",
        }
    }

    pub fn build(&self) -> Box<dyn Minimizer> {
        match self {
            OptimizerKind::TrustRegion => Box::new(TrustRegionDfo::default()),
            OptimizerKind::FdGradient => Box::new(FdGradientDescent::default()),
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown optimizer '{s}' (expected trust-region or fd-gradient)"))
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Forward-difference step inside the box, flipped at an upper bound.
fn fd_step(x: f64, lo: f64, hi: f64, h: f64) -> f64 {
    if x + h <= hi || x - h < lo {
        h
    } else {
        -h
    }
}

/// Derivative-free trust-region method for bound-constrained least squares.
///
/// The residual vector is modelled linearly from interpolation points
/// `x` and `x + h e_i`, which gives the quadratic payoff model
/// `|r + J s|^2`. Each iteration minimizes that model inside a ball of radius
/// `radius` (Levenberg-Marquardt parameter chosen by the radius), projects onto
/// the box, and compares predicted with actual reduction. Between full
/// rebuilds the model is corrected with Broyden rank-one updates from every
/// evaluated trial point.
#[derive(Debug, Clone)]
pub struct TrustRegionDfo {
    pub initial_radius: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub fd_step: f64,
    /// Iterations between full interpolation rebuilds.
    pub rebuild_every: usize,
}

impl Default for TrustRegionDfo {
    fn default() -> Self {
        TrustRegionDfo {
            initial_radius: 1.0,
            min_radius: 1e-8,
            max_radius: 1e3,
            fd_step: 1e-6,
            rebuild_every: 4,
        }
    }
}

struct TrustStep {
    step: Vec<f64>,
    predicted: f64,
}

impl TrustRegionDfo {
    fn build_model(
        &self,
        obj: &dyn LeastSquares,
        x: &[f64],
        r: &[f64],
        bounds: &Bounds,
        log: &mut EvalLog,
        jac: &mut DMatrix<f64>,
    ) -> Option<()> {
        let mut probe = x.to_vec();
        let mut rp = vec![0.0; r.len()];
        for i in 0..x.len() {
            let h = fd_step(x[i], bounds.lower[i], bounds.upper[i], self.fd_step);
            probe[i] = x[i] + h;
            let f = log.eval(obj, &probe, &mut rp)?;
            probe[i] = x[i];
            if f >= PENALTY {
                jac.column_mut(i).fill(0.0);
                continue;
            }
            for (k, (a, b)) in rp.iter().zip(r).enumerate() {
                jac[(k, i)] = (a - b) / h;
            }
        }
        Some(())
    }

    /// Model minimizer within the radius, projected onto the box.
    fn solve_subproblem(
        eig: &SymmetricEigen<f64, nalgebra::Dyn>,
        proj_grad: &DVector<f64>,
        jac: &DMatrix<f64>,
        r: &DVector<f64>,
        x: &[f64],
        radius: f64,
        bounds: &Bounds,
    ) -> TrustStep {
        let vals = &eig.eigenvalues;
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let floor = 1e-12 * scale;
        let norm_at = |lambda: f64| -> f64 {
            proj_grad
                .iter()
                .zip(vals.iter())
                .map(|(g, v)| {
                    let d = v.max(0.0) + lambda + floor;
                    (g / d).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let lambda = if norm_at(0.0) <= radius {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            while norm_at(hi) > radius {
                hi *= 10.0;
            }
            for _ in 0..80 {
                let mid = if lo == 0.0 { hi * 1e-12 } else { (lo * hi).sqrt() };
                if norm_at(mid) > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi / lo.max(1e-300) < 1.0 + 1e-6 {
                    break;
                }
            }
            hi
        };
        let coef = DVector::from_iterator(
            proj_grad.len(),
            proj_grad
                .iter()
                .zip(vals.iter())
                .map(|(g, v)| -g / (v.max(0.0) + lambda + floor)),
        );
        let mut step: Vec<f64> = (&eig.eigenvectors * coef).iter().copied().collect();
        for (i, s) in step.iter_mut().enumerate() {
            *s = (x[i] + *s).clamp(bounds.lower[i], bounds.upper[i]) - x[i];
        }
        let sv = DVector::from_column_slice(&step);
        let model = r + jac * &sv;
        let predicted = r.norm_squared() - model.norm_squared();
        TrustStep { step, predicted }
    }
}

impl Minimizer for TrustRegionDfo {
    fn name(&self) -> &'static str {
        "trust-region"
    }

    fn minimize(
        &self,
        obj: &dyn LeastSquares,
        start: &[f64],
        bounds: &Bounds,
        log: &mut EvalLog,
        _rng: &mut ChaCha8Rng,
    ) -> bool {
        let n = obj.dim();
        let m = obj.n_residuals();
        let mut x = start.to_vec();
        bounds.project(&mut x);
        let mut r = vec![0.0; m];
        let Some(mut f) = log.eval(obj, &x, &mut r) else {
            return false;
        };
        if f >= PENALTY {
            return false;
        }
        let mut radius = self.initial_radius;
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut fresh = false;
        let mut since_rebuild = usize::MAX;
        let mut trial = vec![0.0; n];
        let mut r_trial = vec![0.0; m];

        loop {
            if radius < self.min_radius {
                return true;
            }
            if !fresh && since_rebuild >= self.rebuild_every {
                if self.build_model(obj, &x, &r, bounds, log, &mut jac).is_none() {
                    return false;
                }
                fresh = true;
                since_rebuild = 0;
            }
            let rv = DVector::from_column_slice(&r);
            let grad = jac.transpose() * &rv;
            if grad.norm() == 0.0 {
                if fresh {
                    return true;
                }
                since_rebuild = usize::MAX;
                continue;
            }
            let gram = jac.transpose() * &jac;
            let eig = SymmetricEigen::new(gram);
            let proj = eig.eigenvectors.transpose() * &grad;
            let ts = Self::solve_subproblem(&eig, &proj, &jac, &rv, &x, radius, bounds);
            let step_norm = ts.step.iter().map(|s| s * s).sum::<f64>().sqrt();
            if ts.predicted <= 0.0 || step_norm == 0.0 {
                if fresh {
                    radius *= 0.5;
                } else {
                    since_rebuild = usize::MAX;
                }
                continue;
            }
            for i in 0..n {
                trial[i] = x[i] + ts.step[i];
            }
            let Some(f_trial) = log.eval(obj, &trial, &mut r_trial) else {
                return false;
            };
            let rho = (f - f_trial) / ts.predicted;

            if f_trial < PENALTY {
                // Broyden correction along the step just taken.
                let s = DVector::from_column_slice(&ts.step);
                let y = DVector::from_column_slice(&r_trial) - &rv;
                let resid = y - &jac * &s;
                let ss = s.norm_squared();
                if ss > 0.0 {
                    jac.ger(1.0 / ss, &resid, &s, 1.0);
                }
            }

            if rho >= 0.1 && f_trial < f {
                x.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                f = f_trial;
                if rho > 0.75 && step_norm > 0.9 * radius {
                    radius = (2.0 * radius).min(self.max_radius);
                } else if rho < 0.25 {
                    radius *= 0.5;
                }
                fresh = false;
                since_rebuild = since_rebuild.saturating_add(1);
            } else if fresh {
                radius = 0.5 * step_norm.min(radius);
                if f_trial < f {
                    x.copy_from_slice(&trial);
                    r.copy_from_slice(&r_trial);
                    f = f_trial;
                    fresh = false;
                    since_rebuild = since_rebuild.saturating_add(1);
                }
            } else {
                // Poor prediction from a stale model: rebuild before judging the radius.
                fresh = false;
                since_rebuild = usize::MAX;
            }
        }
    }
}

/// Adam on forward-difference gradients of the payoff.
#[derive(Debug, Clone)]
pub struct FdGradientDescent {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub fd_step: f64,
    /// Stop when the gradient norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for FdGradientDescent {
    fn default() -> Self {
        FdGradientDescent {
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            fd_step: 1e-6,
            gradient_tolerance: 1e-10,
        }
    }
}

impl Minimizer for FdGradientDescent {
    fn name(&self) -> &'static str {
        "fd-gradient"
    }

    fn minimize(
        &self,
        obj: &dyn LeastSquares,
        start: &[f64],
        bounds: &Bounds,
        log: &mut EvalLog,
        _rng: &mut ChaCha8Rng,
    ) -> bool {
        let n = obj.dim();
        let mut r = vec![0.0; obj.n_residuals()];
        let mut x = start.to_vec();
        bounds.project(&mut x);
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut probe = x.clone();
        for iter in 1.. {
            let Some(f) = log.eval(obj, &x, &mut r) else {
                return false;
            };
            if f >= PENALTY {
                return false;
            }
            probe.copy_from_slice(&x);
            for i in 0..n {
                let h = fd_step(x[i], bounds.lower[i], bounds.upper[i], self.fd_step);
                probe[i] = x[i] + h;
                let Some(fp) = log.eval(obj, &probe, &mut r) else {
                    return false;
                };
                probe[i] = x[i];
                grad[i] = if fp >= PENALTY { 0.0 } else { (fp - f) / h };
            }
            if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < self.gradient_tolerance {
                return true;
            }
            let b1t = 1.0 - self.beta1.powi(iter);
            let b2t = 1.0 - self.beta2.powi(iter);
            for i in 0..n {
                m1[i] = self.beta1 * m1[i] + (1.0 - self.beta1) * grad[i];
                m2[i] = self.beta2 * m2[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let step = self.learning_rate * (m1[i] / b1t) / ((m2[i] / b2t).sqrt() + self.epsilon);
                x[i] = (x[i] - step).clamp(bounds.lower[i], bounds.upper[i]);
            }
        }
        unreachable!()
    }
}

/// Draws a point `center + scale * N(0, 1)` projected onto the box.
pub fn jitter(center: &[f64], scale: f64, bounds: &Bounds, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = center
        .iter()
        .map(|c| {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            c + scale * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    bounds.project(&mut x);
    x
}
