//! Out-of-sample evaluation: Sobol initializations, Monte Carlo prediction
//! error against the ground truth, and causal-structure comparison.

pub mod sobol;

use serde::{Deserialize, Serialize};

use crate::dynsys::{integrate, IntegrationConfig, StateVector, System};
use crate::error::{FsnnError, Result};
use crate::ltm::EdgeReport;
use crate::training::PENALTY;

pub use sobol::SobolSampler;

/// Maximum Sobol draws spent looking for accepted initializations.
pub const MAX_DRAWS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSampling {
    pub cube_max: f64,
    /// Accepted range of the initial-state sum, inclusive.
    pub sum_range: (f64, f64),
}

impl Default for InitSampling {
    fn default() -> Self {
        InitSampling {
            cube_max: 150.0,
            sum_range: (30.0, 150.0),
        }
    }
}

/// Sobol points scaled to `[0, cube_max]^dim`, keeping those whose
/// coordinate sum lies within `sum_range`.
pub fn sample_initializations(n: usize, dim: usize, sampling: &InitSampling) -> Result<Vec<StateVector>> {
    let (lo, hi) = sampling.sum_range;
    let cube = sampling.cube_max;
    if !(cube.is_finite() && cube > 0.0) {
        return Err(FsnnError::config("cube_max must be finite and > 0"));
    }
    if !(lo >= 0.0 && lo < hi && hi <= dim as f64 * cube) {
        return Err(FsnnError::config(format!(
            "sum range ({lo}, {hi}) must satisfy 0 <= lo < hi <= {}",
            dim as f64 * cube
        )));
    }
    let mut sobol = SobolSampler::new(dim)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..MAX_DRAWS {
        if out.len() == n {
            break;
        }
        let point: Vec<f64> = sobol.next_point().into_iter().map(|u| u * cube).collect();
        let sum: f64 = point.iter().sum();
        if (lo..=hi).contains(&sum) {
            out.push(StateVector(point));
        }
    }
    if out.len() < n {
        return Err(FsnnError::Sampling(format!(
            "only {} of {n} initializations accepted after {MAX_DRAWS} draws",
            out.len()
        )));
    }
    Ok(out)
}

/// One Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub initialization: StateVector,
    /// `errors[k][i]`: model minus truth for state `i` at sample `k`; empty when failed.
    pub errors: Vec<Vec<f64>>,
    pub max_abs_error: f64,
    pub failed: bool,
}

impl RunError {
    pub fn initial_sum(&self) -> f64 {
        self.initialization.sum()
    }
}

/// Simulates model and truth from `init` and differences their samples.
/// A failed simulation is reported with a penalty maximum error.
pub fn prediction_error<M, T>(model: &M, truth: &T, init: &StateVector, cfg: &IntegrationConfig) -> Result<RunError>
where
    M: System + ?Sized,
    T: System + ?Sized,
{
    cfg.validate()?;
    if model.dim() != truth.dim() || init.len() != model.dim() {
        return Err(FsnnError::input("model, truth and initialization dimensions differ"));
    }
    let sims = integrate(model, init, cfg, &[]).and_then(|m| Ok((m, integrate(truth, init, cfg, &[])?)));
    let (m, t) = match sims {
        Ok(pair) => pair,
        Err(FsnnError::Integration { .. }) => {
            return Ok(RunError {
                initialization: init.clone(),
                errors: Vec::new(),
                max_abs_error: PENALTY,
                failed: true,
            })
        }
        Err(e) => return Err(e),
    };
    let errors: Vec<Vec<f64>> = m
        .samples
        .iter()
        .zip(&t.samples)
        .map(|(a, b)| a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect())
        .collect();
    let max_abs_error = errors.iter().flatten().fold(0.0f64, |acc, e| acc.max(e.abs()));
    Ok(RunError {
        initialization: init.clone(),
        errors,
        max_abs_error,
        failed: false,
    })
}

/// Cross-run error quantiles for one (state, time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub state: usize,
    pub time: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub state_names: Vec<String>,
    pub times: Vec<f64>,
    pub runs: Vec<RunError>,
    /// Ordered by state, then time; failed runs are excluded.
    pub envelopes: Vec<Envelope>,
}

impl MonteCarloReport {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.failed).count()
    }

    pub fn max_abs_errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.max_abs_error).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Runs `prediction_error` for every initialization and aggregates
/// 2.5 / 50 / 97.5 % error envelopes per state and sample time.
pub fn monte_carlo<M, T>(
    model: &M,
    truth: &T,
    inits: &[StateVector],
    cfg: &IntegrationConfig,
    state_names: &[String],
) -> Result<MonteCarloReport>
where
    M: System + ?Sized,
    T: System + ?Sized,
{
    if inits.is_empty() {
        return Err(FsnnError::input("Monte Carlo needs at least one initialization"));
    }
    let n = model.dim();
    let runs = inits
        .iter()
        .map(|init| prediction_error(model, truth, init, cfg))
        .collect::<Result<Vec<_>>>()?;
    let samples = cfg.sample_count()?;
    let t0 = if cfg.include_initial { 0.0 } else { cfg.sample_interval };
    let times: Vec<f64> = (0..samples).map(|k| t0 + k as f64 * cfg.sample_interval).collect();
    let ok: Vec<&RunError> = runs.iter().filter(|r| !r.failed).collect();
    let mut envelopes = Vec::with_capacity(n * samples);
    if !ok.is_empty() {
        let mut column = Vec::with_capacity(ok.len());
        for state in 0..n {
            for (k, &time) in times.iter().enumerate() {
                column.clear();
                column.extend(ok.iter().map(|r| r.errors[k][state]));
                column.sort_by(f64::total_cmp);
                envelopes.push(Envelope {
                    state,
                    time,
                    q025: quantile_sorted(&column, 0.025),
                    q50: quantile_sorted(&column, 0.5),
                    q975: quantile_sorted(&column, 0.975),
                });
            }
        }
    }
    let names = if state_names.len() == n {
        state_names.to_vec()
    } else {
        crate::dynsys::default_state_names(n)
    };
    Ok(MonteCarloReport {
        state_names: names,
        times,
        runs,
        envelopes,
    })
}

/// Runs grouped by initial-state sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumBin {
    /// Exclusive lower edge.
    pub lo: f64,
    /// Inclusive upper edge.
    pub hi: f64,
    pub count: usize,
    pub median_max_abs_error: f64,
    pub max_max_abs_error: f64,
}

/// Bins runs by initial sum into `(k w, (k + 1) w]` up to `upper`; empty bins are omitted.
pub fn bin_by_initial_sum(runs: &[RunError], width: f64, upper: f64) -> Vec<SumBin> {
    let n_bins = (upper / width).ceil() as usize;
    (0..n_bins)
        .filter_map(|b| {
            let lo = b as f64 * width;
            let hi = lo + width;
            let errs: Vec<f64> = runs
                .iter()
                .filter(|r| {
                    let s = r.initial_sum();
                    s > lo && s <= hi
                })
                .map(|r| r.max_abs_error)
                .collect();
            (!errs.is_empty()).then(|| SumBin {
                lo,
                hi,
                count: errs.len(),
                median_max_abs_error: median(&errs),
                max_max_abs_error: errs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeComparison {
    pub source: usize,
    pub target: usize,
    pub truth_present: bool,
    pub truth_polarity: i8,
    pub generated_present: bool,
    pub generated_polarity: i8,
}

impl EdgeComparison {
    pub fn agrees(&self) -> bool {
        self.truth_present == self.generated_present
            && (!self.truth_present || self.truth_polarity == self.generated_polarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureComparison {
    pub state_names: Vec<String>,
    pub precision: f64,
    pub recall: f64,
    /// Fraction of edges present in both whose polarities agree.
    pub polarity_accuracy: f64,
    pub edges: Vec<EdgeComparison>,
}

impl StructureComparison {
    pub fn disagreements(&self) -> Vec<&EdgeComparison> {
        self.edges.iter().filter(|e| !e.agrees()).collect()
    }
}

/// Precision, recall and polarity agreement of `generated` against `truth`.
/// Ratios over an empty set are 1 when both reports are empty there, else 0.
pub fn structure_recovery(truth: &EdgeReport, generated: &EdgeReport) -> Result<StructureComparison> {
    if truth.state_names != generated.state_names {
        return Err(FsnnError::input("edge reports cover different state sets"));
    }
    let edges: Vec<EdgeComparison> = truth
        .edges
        .iter()
        .zip(&generated.edges)
        .map(|(t, g)| EdgeComparison {
            source: t.source,
            target: t.target,
            truth_present: t.present,
            truth_polarity: t.polarity,
            generated_present: g.present,
            generated_polarity: g.polarity,
        })
        .collect();
    let n_truth = edges.iter().filter(|e| e.truth_present).count();
    let n_gen = edges.iter().filter(|e| e.generated_present).count();
    let shared: Vec<&EdgeComparison> = edges.iter().filter(|e| e.truth_present && e.generated_present).collect();
    let same_sign = shared.iter().filter(|e| e.truth_polarity == e.generated_polarity).count();
    let ratio = |num: usize, den: usize| {
        if den > 0 {
            num as f64 / den as f64
        } else if n_truth == 0 && n_gen == 0 {
            1.0
        } else {
            0.0
        }
    };
    Ok(StructureComparison {
        state_names: truth.state_names.clone(),
        precision: ratio(shared.len(), n_gen),
        recall: ratio(shared.len(), n_truth),
        polarity_accuracy: ratio(same_sign, shared.len()),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::default_state_names;
    use crate::ground_truth::{GroundTruth, TRAINING_INIT_1};
    use crate::ltm::EdgeStat;
    use crate::model::{GeneratedModel, ModelShape};

    fn cfg() -> IntegrationConfig {
        IntegrationConfig::default()
    }

    #[test]
    fn default_initializations_satisfy_constraints() {
        let inits = sample_initializations(100, 3, &InitSampling::default()).unwrap();
        assert_eq!(inits.len(), 100);
        for s in &inits {
            assert!(s.0.iter().all(|v| (0.0..=150.0).contains(v)));
            assert!((30.0..=150.0).contains(&s.sum()));
        }
        let again = sample_initializations(100, 3, &InitSampling::default()).unwrap();
        assert_eq!(inits, again);
    }

    #[test]
    fn unconstrained_sum_keeps_sobol_order() {
        let s = InitSampling {
            cube_max: 150.0,
            sum_range: (0.0, 450.0),
        };
        let inits = sample_initializations(5, 3, &s).unwrap();
        assert_eq!(inits[0].0, vec![75.0, 75.0, 75.0]);
        let raw: Vec<Vec<f64>> = SobolSampler::new(3).unwrap().take(5).collect();
        for (a, b) in inits.iter().zip(raw) {
            assert_eq!(a.0, b.iter().map(|u| u * 150.0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn sampling_errors() {
        let tiny = InitSampling {
            cube_max: 150.0,
            sum_range: (449.9, 450.0),
        };
        assert!(matches!(sample_initializations(1, 3, &tiny), Err(FsnnError::Sampling(_))));
        let empty = InitSampling {
            cube_max: 150.0,
            sum_range: (100.0, 50.0),
        };
        assert!(matches!(sample_initializations(1, 3, &empty), Err(FsnnError::Config(_))));
        let beyond = InitSampling {
            cube_max: 10.0,
            sum_range: (0.0, 31.0),
        };
        assert!(matches!(sample_initializations(1, 3, &beyond), Err(FsnnError::Config(_))));
    }

    #[test]
    fn identical_systems_have_zero_error() {
        let gt = GroundTruth::default();
        let run = prediction_error(&gt, &gt, &TRAINING_INIT_1.into(), &cfg()).unwrap();
        assert_eq!(run.errors.len(), 100);
        assert_eq!(run.max_abs_error, 0.0);
        let inits = sample_initializations(20, 3, &InitSampling::default()).unwrap();
        let report = monte_carlo(&gt, &gt, &inits, &cfg(), &[]).unwrap();
        assert_eq!(report.envelopes.len(), 300);
        assert!(report.envelopes.iter().all(|e| e.q025 == 0.0 && e.q50 == 0.0 && e.q975 == 0.0));
    }

    #[test]
    fn flat_model_error_is_offset_from_truth() {
        let gt = GroundTruth::default();
        let flat = GeneratedModel::zeros(ModelShape::default_for(3));
        let init: StateVector = TRAINING_INIT_1.into();
        let run = prediction_error(&flat, &gt, &init, &cfg()).unwrap();
        let truth = integrate(&gt, &init, &cfg(), &[]).unwrap();
        for (k, row) in run.errors.iter().enumerate() {
            for i in 0..3 {
                assert_eq!(row[i], init[i] - truth.samples[k][i]);
            }
        }
    }

    #[test]
    fn failing_model_is_penalized_not_raised() {
        let bad = crate::dynsys::FnSystem::new(3, |_, _: &[f64]| vec![f64::NAN; 3]);
        let gt = GroundTruth::default();
        let run = prediction_error(&bad, &gt, &TRAINING_INIT_1.into(), &cfg()).unwrap();
        assert!(run.failed);
        assert_eq!(run.max_abs_error, PENALTY);
        let report = monte_carlo(&bad, &gt, &[TRAINING_INIT_1.into()], &cfg(), &[]).unwrap();
        assert_eq!(report.failed_runs(), 1);
        assert!(report.envelopes.is_empty());
    }

    #[test]
    fn envelopes_are_ordered_and_order_independent() {
        let gt = GroundTruth::default();
        let flat = GeneratedModel::zeros(ModelShape::default_for(3));
        let mut inits = sample_initializations(30, 3, &InitSampling::default()).unwrap();
        let a = monte_carlo(&flat, &gt, &inits, &cfg(), &[]).unwrap();
        for e in &a.envelopes {
            assert!(e.q025 <= e.q50 && e.q50 <= e.q975);
        }
        inits.reverse();
        inits.swap(3, 17);
        let b = monte_carlo(&flat, &gt, &inits, &cfg(), &[]).unwrap();
        for (x, y) in a.envelopes.iter().zip(&b.envelopes) {
            assert_eq!(x.q025.to_bits(), y.q025.to_bits());
            assert_eq!(x.q50.to_bits(), y.q50.to_bits());
            assert_eq!(x.q975.to_bits(), y.q975.to_bits());
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.125), 1.5);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn bins_by_sum() {
        let mk = |sum: f64, err: f64| RunError {
            initialization: StateVector::from([sum, 0.0, 0.0]),
            errors: vec![],
            max_abs_error: err,
            failed: false,
        };
        let runs = vec![mk(30.0, 1.0), mk(31.0, 2.0), mk(59.0, 4.0), mk(200.0, 9.0)];
        let bins = bin_by_initial_sum(&runs, 30.0, 300.0);
        assert_eq!(bins.len(), 3);
        assert_eq!((bins[0].lo, bins[0].hi, bins[0].count), (0.0, 30.0, 1));
        assert_eq!((bins[1].count, bins[1].median_max_abs_error, bins[1].max_max_abs_error), (2, 3.0, 4.0));
        assert_eq!(bins[2].lo, 180.0);
    }

    fn report(edges: &[(usize, usize, i8)]) -> EdgeReport {
        let n = 3;
        EdgeReport {
            state_names: default_state_names(n),
            threshold: 0.05,
            edges: (0..n * n)
                .map(|idx| {
                    let (source, target) = (idx / n, idx % n);
                    let hit = edges.iter().find(|e| e.0 == source && e.1 == target);
                    EdgeStat {
                        source,
                        target,
                        present: hit.is_some(),
                        polarity: hit.map_or(0, |e| e.2),
                        mean_abs_normalized: if hit.is_some() { 0.5 } else { 0.0 },
                        mean_normalized: hit.map_or(0.0, |e| 0.5 * e.2 as f64),
                        sign_consistency: 1.0,
                        unstable: false,
                    }
                })
                .collect(),
        }
    }

    const TRUE_EDGES: [(usize, usize, i8); 6] = [(0, 0, -1), (2, 0, -1), (0, 1, 1), (1, 1, -1), (1, 2, 1), (2, 2, -1)];

    #[test]
    fn structure_recovery_metrics() {
        let truth = report(&TRUE_EDGES);
        let same = structure_recovery(&truth, &truth).unwrap();
        assert_eq!((same.precision, same.recall, same.polarity_accuracy), (1.0, 1.0, 1.0));
        assert!(same.disagreements().is_empty());

        let missing = structure_recovery(&truth, &report(&TRUE_EDGES[1..])).unwrap();
        assert_eq!(missing.recall, 5.0 / 6.0);
        assert_eq!(missing.precision, 1.0);
        assert_eq!(missing.disagreements().len(), 1);

        let mut extra = TRUE_EDGES.to_vec();
        extra.push((1, 0, 1));
        let extra = structure_recovery(&truth, &report(&extra)).unwrap();
        assert_eq!(extra.precision, 6.0 / 7.0);
        assert_eq!(extra.recall, 1.0);

        let flipped = structure_recovery(&truth, &report(&[(0, 0, 1)])).unwrap();
        assert_eq!(flipped.polarity_accuracy, 0.0);

        let disjoint = structure_recovery(&truth, &report(&[(1, 0, 1), (2, 1, -1)])).unwrap();
        assert_eq!((disjoint.precision, disjoint.recall), (0.0, 0.0));
    }

    #[test]
    fn structure_recovery_requires_same_states() {
        let mut other = report(&TRUE_EDGES);
        other.state_names[0] = "X".into();
        assert!(structure_recovery(&report(&TRUE_EDGES), &other).is_err());
    }
}
