//! The generated model: one tanh multilayer perceptron per state, mapping the
//! rescaled (unmasked) states to that state's derivative.
//!
//! Parameter layout of the flat vector: targets in state order; for each
//! target, layers from input to output; for each layer, the weight matrix in
//! output-major order followed by the biases.

use serde::{Deserialize, Serialize};

use crate::dynsys::{default_state_names, StateVector, System};
use crate::error::{FsnnError, Result};

/// Hidden sizes used for every target by default.
pub const DEFAULT_HIDDEN: [usize; 3] = [8, 6, 4];

/// Default per-state magnitude used for input and output rescaling.
pub const DEFAULT_MAGNITUDE: f64 = 100.0;

const STACK_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub n_states: usize,
    /// Hidden layer widths for each target network.
    pub hidden_layers: Vec<Vec<usize>>,
}

impl NetworkArchitecture {
    pub fn uniform(n_states: usize, hidden: &[usize]) -> Self {
        NetworkArchitecture {
            n_states,
            hidden_layers: vec![hidden.to_vec(); n_states],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(FsnnError::config("architecture needs at least one state"));
        }
        if self.hidden_layers.len() != self.n_states {
            return Err(FsnnError::config(format!(
                "hidden_layers lists {} targets, expected {}",
                self.hidden_layers.len(),
                self.n_states
            )));
        }
        if self.hidden_layers.iter().flatten().any(|&w| w == 0) {
            return Err(FsnnError::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

impl Default for NetworkArchitecture {
    fn default() -> Self {
        NetworkArchitecture::uniform(3, &DEFAULT_HIDDEN)
    }
}

/// `allowed[source][target]`: whether `source` feeds the derivative network of `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMask {
    pub allowed: Vec<Vec<bool>>,
}

impl AdjacencyMask {
    pub fn full(n: usize) -> Self {
        AdjacencyMask {
            allowed: vec![vec![true; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_allowed(&self, source: usize, target: usize) -> bool {
        self.allowed[source][target]
    }

    pub fn set(&mut self, source: usize, target: usize, allowed: bool) {
        self.allowed[source][target] = allowed;
    }

    pub fn sources_of(&self, target: usize) -> Vec<usize> {
        (0..self.n()).filter(|&s| self.allowed[s][target]).collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.allowed.len() != n || self.allowed.iter().any(|row| row.len() != n) {
            return Err(FsnnError::config(format!("mask must be {n}x{n}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub magnitude: Vec<f64>,
}

impl ScalingSpec {
    pub fn uniform(n: usize, magnitude: f64) -> Self {
        ScalingSpec {
            magnitude: vec![magnitude; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.magnitude.len() != n {
            return Err(FsnnError::config(format!(
                "scaling lists {} magnitudes, expected {n}",
                self.magnitude.len()
            )));
        }
        if self.magnitude.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(FsnnError::config("magnitudes must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Layer widths `[inputs, hidden.., 1]` for one target.
fn widths_for(arch: &NetworkArchitecture, mask: &AdjacencyMask, target: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(arch.hidden_layers[target].len() + 2);
    w.push(mask.sources_of(target).len());
    w.extend_from_slice(&arch.hidden_layers[target]);
    w.push(1);
    w
}

fn count_for_widths(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn param_count(arch: &NetworkArchitecture, mask: &AdjacencyMask) -> usize {
    (0..arch.n_states)
        .map(|t| count_for_widths(&widths_for(arch, mask, t)))
        .sum()
}

pub fn zero_params(arch: &NetworkArchitecture, mask: &AdjacencyMask) -> ParameterVector {
    ParameterVector(vec![0.0; param_count(arch, mask)])
}

#[derive(Debug, Clone, PartialEq)]
struct TargetLayout {
    sources: Vec<usize>,
    widths: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Everything about a generated model except its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub state_names: Vec<String>,
    pub architecture: NetworkArchitecture,
    pub mask: AdjacencyMask,
    pub scaling: ScalingSpec,
    layout: Vec<TargetLayout>,
    param_count: usize,
}

impl ModelShape {
    pub fn new(
        state_names: Vec<String>,
        architecture: NetworkArchitecture,
        mask: AdjacencyMask,
        scaling: ScalingSpec,
    ) -> Result<Self> {
        architecture.validate()?;
        let n = architecture.n_states;
        mask.validate(n)?;
        scaling.validate(n)?;
        if state_names.len() != n {
            return Err(FsnnError::config(format!("{} state names for {n} states", state_names.len())));
        }
        let mut offset = 0;
        let mut layout = Vec::with_capacity(n);
        for target in 0..n {
            let sources = mask.sources_of(target);
            if sources.is_empty() {
                log::warn!("target {} has no allowed sources; its derivative is a constant", state_names[target]);
            }
            let widths = widths_for(&architecture, &mask, target);
            let len = count_for_widths(&widths);
            layout.push(TargetLayout {
                sources,
                widths,
                offset,
                len,
            });
            offset += len;
        }
        Ok(ModelShape {
            state_names,
            architecture,
            mask,
            scaling,
            layout,
            param_count: offset,
        })
    }

    /// Fully connected model with the default hidden sizes and magnitudes.
    pub fn default_for(n: usize) -> Self {
        ModelShape::new(
            default_state_names(n),
            NetworkArchitecture::uniform(n, &DEFAULT_HIDDEN),
            AdjacencyMask::full(n),
            ScalingSpec::uniform(n, DEFAULT_MAGNITUDE),
        )
        .expect("default shape is valid")
    }

    pub fn n_states(&self) -> usize {
        self.architecture.n_states
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Range of the flat parameter vector owned by `target`.
    pub fn target_range(&self, target: usize) -> std::ops::Range<usize> {
        let l = &self.layout[target];
        l.offset..l.offset + l.len
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(FsnnError::config(format!(
                "parameter vector has {} entries, model expects {}",
                params.len(),
                self.param_count
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FsnnError::Evaluation("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn view<'a>(&'a self, params: &'a [f64]) -> ModelView<'a> {
        debug_assert_eq!(params.len(), self.param_count);
        ModelView { shape: self, params }
    }

    fn target_output(&self, target: usize, params: &[f64], state: &[f64]) -> f64 {
        let l = &self.layout[target];
        let p = &params[l.offset..l.offset + l.len];
        let max_w = l.widths.iter().copied().max().unwrap_or(1);
        if max_w <= STACK_WIDTH {
            let mut a = [0.0; STACK_WIDTH];
            let mut b = [0.0; STACK_WIDTH];
            self.forward(l, p, state, &mut a, &mut b)
        } else {
            let mut a = vec![0.0; max_w];
            let mut b = vec![0.0; max_w];
            self.forward(l, p, state, &mut a, &mut b)
        }
    }

    fn forward(&self, l: &TargetLayout, p: &[f64], state: &[f64], a: &mut [f64], b: &mut [f64]) -> f64 {
        for (k, &src) in l.sources.iter().enumerate() {
            a[k] = state[src] / self.scaling.magnitude[src];
        }
        let (mut cur, mut next) = (a, b);
        let mut at = 0;
        for w in l.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &p[at..at + n_in * n_out];
            let biases = &p[at + n_in * n_out..at + n_in * n_out + n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(&cur[..n_in]).fold(biases[o], |acc, (w, x)| acc + w * x);
                next[o] = z.tanh();
            }
            at += n_in * n_out + n_out;
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Analytic input gradient of derivative `target` with respect to every
    /// state (zero for masked sources), by reverse accumulation through the layers.
    pub fn target_gradient(&self, target: usize, params: &[f64], state: &[f64]) -> Vec<f64> {
        let l = &self.layout[target];
        let p = &params[l.offset..l.offset + l.len];
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(l.widths.len());
        acts.push(l.sources.iter().map(|&s| state[s] / self.scaling.magnitude[s]).collect());
        let mut at = 0;
        let mut offsets = Vec::new();
        for w in l.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            offsets.push(at);
            let prev = acts.last().unwrap();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let mut z = p[at + n_in * n_out + o];
                    for i in 0..n_in {
                        z += p[at + o * n_in + i] * prev[i];
                    }
                    z.tanh()
                })
                .collect();
            acts.push(out);
            at += n_in * n_out + n_out;
        }
        // d output / d activation of the current layer
        let mut upstream = vec![1.0];
        for (li, w) in l.widths.windows(2).enumerate().rev() {
            let (n_in, n_out) = (w[0], w[1]);
            let out = &acts[li + 1];
            let at = offsets[li];
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let dz = upstream[o] * (1.0 - out[o] * out[o]);
                for (i, g) in grad_in.iter_mut().enumerate() {
                    *g += dz * p[at + o * n_in + i];
                }
            }
            upstream = grad_in;
        }
        let mag_out = self.scaling.magnitude[target];
        let mut full = vec![0.0; self.n_states()];
        for (k, &src) in l.sources.iter().enumerate() {
            full[src] = mag_out * upstream[k] / self.scaling.magnitude[src];
        }
        full
    }
}

/// A shape paired with borrowed parameters; cheap to build per evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    pub shape: &'a ModelShape,
    pub params: &'a [f64],
}

impl System for ModelView<'_> {
    fn dim(&self) -> usize {
        self.shape.n_states()
    }

    fn derivs(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        for (target, o) in out.iter_mut().enumerate() {
            *o = self.shape.scaling.magnitude[target] * self.shape.target_output(target, self.params, state);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedModel {
    pub shape: ModelShape,
    pub params: ParameterVector,
}

impl GeneratedModel {
    pub fn new(shape: ModelShape, params: ParameterVector) -> Result<Self> {
        shape.check_params(&params.0)?;
        Ok(GeneratedModel { shape, params })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        let params = ParameterVector(vec![0.0; shape.param_count()]);
        GeneratedModel { shape, params }
    }

    pub fn state_names(&self) -> &[String] {
        &self.shape.state_names
    }

    pub fn view(&self) -> ModelView<'_> {
        self.shape.view(&self.params.0)
    }

    /// Per-state derivatives at `s`.
    pub fn derivs(&self, s: &StateVector) -> Result<StateVector> {
        if s.len() != self.shape.n_states() {
            return Err(FsnnError::input(format!("state has {} values, model has {}", s.len(), self.shape.n_states())));
        }
        Ok(StateVector(self.view().derivs_vec(0.0, &s.0)))
    }

    /// `jac[target][source]`, analytic.
    pub fn jacobian(&self, s: &[f64]) -> Vec<Vec<f64>> {
        (0..self.shape.n_states())
            .map(|t| self.shape.target_gradient(t, &self.params.0, s))
            .collect()
    }
}

impl System for GeneratedModel {
    fn dim(&self) -> usize {
        self.shape.n_states()
    }

    fn derivs(&self, t: f64, state: &[f64], out: &mut [f64]) {
        self.view().derivs(t, state, out)
    }
}

/// One dense layer; `weights[o][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Structured view of one target network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub sources: Vec<usize>,
    pub layers: Vec<Layer>,
}

pub fn unpack(shape: &ModelShape, params: &[f64]) -> Result<Vec<NetworkParams>> {
    if params.len() != shape.param_count() {
        return Err(FsnnError::input("parameter length does not match model shape"));
    }
    Ok(shape
        .layout
        .iter()
        .map(|l| {
            let mut at = l.offset;
            let layers = l
                .widths
                .windows(2)
                .map(|w| {
                    let (n_in, n_out) = (w[0], w[1]);
                    let weights = (0..n_out)
                        .map(|o| params[at + o * n_in..at + (o + 1) * n_in].to_vec())
                        .collect();
                    let biases = params[at + n_in * n_out..at + n_in * n_out + n_out].to_vec();
                    at += n_in * n_out + n_out;
                    Layer { weights, biases }
                })
                .collect();
            NetworkParams {
                sources: l.sources.clone(),
                layers,
            }
        })
        .collect())
}

pub fn pack(shape: &ModelShape, nets: &[NetworkParams]) -> Result<ParameterVector> {
    if nets.len() != shape.n_states() {
        return Err(FsnnError::input("one network per target required"));
    }
    let mut out = Vec::with_capacity(shape.param_count());
    for (net, l) in nets.iter().zip(&shape.layout) {
        if net.layers.len() + 1 != l.widths.len() {
            return Err(FsnnError::input("layer count does not match model shape"));
        }
        for (layer, w) in net.layers.iter().zip(l.widths.windows(2)) {
            if layer.weights.len() != w[1] || layer.biases.len() != w[1] || layer.weights.iter().any(|r| r.len() != w[0]) {
                return Err(FsnnError::input("layer dimensions do not match model shape"));
            }
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.biases);
        }
    }
    Ok(ParameterVector(out))
}
