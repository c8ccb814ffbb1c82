//! Link scores between state variables and state derivatives.
//!
//! For each solver step `s(t - dt) -> s(t)` and each pair (source `x`,
//! target derivative `z`), the raw score is
//! `|dz_x / dz| * sign(dz_x / dx)` where `dz_x` is the change `z` would have
//! had if only `x` had moved. Raw scores are then normalized per target so
//! that their absolute values sum to one.

use serde::{Deserialize, Serialize};

use crate::dynsys::{System, Trajectory};
use crate::error::{FsnnError, Result};

/// Polarity below which an edge is flagged as unstable.
pub const STABLE_SIGN_CONSISTENCY: f64 = 0.8;

/// Default edge threshold on the time-mean absolute normalized score.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.05;

/// Change in `f` when only component `j` moves from `prev[j]` to `curr[j]`.
pub fn conditional_delta<F>(f: F, prev: &[f64], curr: &[f64], j: usize) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut moved = prev.to_vec();
    moved[j] = curr[j];
    f(&moved) - f(prev)
}

/// Link score of `x -> z` from the conditional change `delta_xz`, the total
/// change `delta_z` and the source change `delta_x`.
pub fn link_score(delta_xz: f64, delta_z: f64, delta_x: f64) -> f64 {
    if delta_z == 0.0 || delta_x == 0.0 {
        return 0.0;
    }
    let ratio = delta_xz / delta_x;
    let sign = if ratio > 0.0 {
        1.0
    } else if ratio < 0.0 {
        -1.0
    } else {
        0.0
    };
    (delta_xz / delta_z).abs() * sign
}

/// Score of a pathway: the product of its link scores.
pub fn compose_path(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(FsnnError::input("pathway has no links"));
    }
    Ok(scores.iter().product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScoreSample {
    pub time: f64,
    pub source: String,
    pub target: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Score series for one (source, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSeries {
    pub source: usize,
    pub target: usize,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Complete grid of link-score series over the solver steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub state_names: Vec<String>,
    /// End time of each scored step.
    pub times: Vec<f64>,
    /// Indexed `source * n + target`.
    pub series: Vec<LinkSeries>,
}

impl LinkProfile {
    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn get(&self, source: usize, target: usize) -> &LinkSeries {
        &self.series[source * self.n_states() + target]
    }

    /// Long-format rows ordered by time, then source, then target.
    pub fn samples(&self) -> impl Iterator<Item = LinkScoreSample> + '_ {
        let n = self.n_states();
        (0..self.times.len()).flat_map(move |k| {
            (0..n * n).map(move |idx| {
                let s = &self.series[idx];
                LinkScoreSample {
                    time: self.times[k],
                    source: self.state_names[s.source].clone(),
                    target: self.state_names[s.target].clone(),
                    raw: s.raw[k],
                    normalized: s.normalized[k],
                }
            })
        })
    }

    /// Rebuilds a profile from long-format rows. Every (time, source, target)
    /// combination must be present exactly once.
    pub fn from_samples(state_names: Vec<String>, rows: &[LinkScoreSample]) -> Result<Self> {
        let n = state_names.len();
        if n == 0 {
            return Err(FsnnError::input("link table names no states"));
        }
        let index = |name: &str| {
            state_names
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| FsnnError::input(format!("unknown state '{name}' in link table")))
        };
        let mut times: Vec<f64> = Vec::new();
        for r in rows {
            if times.last() != Some(&r.time) {
                if times.last().is_some_and(|&t| t > r.time) {
                    return Err(FsnnError::input("link table times must be non-decreasing"));
                }
                times.push(r.time);
            }
        }
        if rows.len() != times.len() * n * n {
            return Err(FsnnError::input(format!(
                "link table has {} rows, expected {} for {} times and {n} states",
                rows.len(),
                times.len() * n * n,
                times.len()
            )));
        }
        let mut series: Vec<LinkSeries> = (0..n * n)
            .map(|idx| LinkSeries {
                source: idx / n,
                target: idx % n,
                raw: vec![f64::NAN; times.len()],
                normalized: vec![f64::NAN; times.len()],
            })
            .collect();
        let mut k = 0;
        for r in rows {
            while times[k] != r.time {
                k += 1;
            }
            let s = &mut series[index(&r.source)? * n + index(&r.target)?];
            if !s.raw[k].is_nan() {
                return Err(FsnnError::input(format!(
                    "duplicate link row at t = {} for {} -> {}",
                    r.time, r.source, r.target
                )));
            }
            s.raw[k] = r.raw;
            s.normalized[k] = r.normalized;
        }
        Ok(LinkProfile {
            state_names,
            times,
            series,
        })
    }
}

/// Scores every (source, target) pair on each step of a dense trajectory.
///
/// `system` supplies the derivative of every target; `dense` holds the
/// step-boundary states at the solver interval.
pub fn link_profile<S: System + ?Sized>(system: &S, dense: &Trajectory) -> Result<LinkProfile> {
    let n = system.dim();
    if dense.n_states() != n {
        return Err(FsnnError::input(format!(
            "trajectory has {} states, system has {n}",
            dense.n_states()
        )));
    }
    if dense.len() < 2 {
        return Err(FsnnError::input("link scores need at least two trajectory points"));
    }
    let steps = dense.len() - 1;
    let mut series: Vec<LinkSeries> = (0..n * n)
        .map(|idx| LinkSeries {
            source: idx / n,
            target: idx % n,
            raw: Vec::with_capacity(steps),
            normalized: Vec::with_capacity(steps),
        })
        .collect();
    let mut z_prev = vec![0.0; n];
    let mut z_curr = vec![0.0; n];
    let mut z_moved = vec![0.0; n];
    let mut raw = vec![0.0; n * n];
    let mut times = Vec::with_capacity(steps);

    for k in 1..dense.len() {
        let t_prev = dense.time(k - 1);
        let prev = dense.samples[k - 1].as_slice();
        let curr = dense.samples[k].as_slice();
        system.derivs(t_prev, prev, &mut z_prev);
        system.derivs(dense.time(k), curr, &mut z_curr);
        let mut moved = prev.to_vec();
        for j in 0..n {
            let delta_x = curr[j] - prev[j];
            moved[j] = curr[j];
            system.derivs(t_prev, &moved, &mut z_moved);
            moved[j] = prev[j];
            for i in 0..n {
                raw[j * n + i] = link_score(z_moved[i] - z_prev[i], z_curr[i] - z_prev[i], delta_x);
            }
        }
        for i in 0..n {
            let denom: f64 = (0..n).map(|j| raw[j * n + i].abs()).sum();
            for j in 0..n {
                let r = raw[j * n + i];
                let s = &mut series[j * n + i];
                s.raw.push(r);
                s.normalized.push(if denom > 0.0 { r / denom } else { 0.0 });
            }
        }
        times.push(dense.time(k));
    }
    Ok(LinkProfile {
        state_names: dense.state_names.clone(),
        times,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStat {
    pub source: usize,
    pub target: usize,
    pub present: bool,
    /// -1, 0 or +1.
    pub polarity: i8,
    pub mean_abs_normalized: f64,
    pub mean_normalized: f64,
    /// Fraction of nonzero samples sharing the majority sign.
    pub sign_consistency: f64,
    /// Present edge whose sign consistency is below [`STABLE_SIGN_CONSISTENCY`].
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub state_names: Vec<String>,
    pub threshold: f64,
    /// Indexed `source * n + target`.
    pub edges: Vec<EdgeStat>,
}

impl EdgeReport {
    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn get(&self, source: usize, target: usize) -> &EdgeStat {
        &self.edges[source * self.n_states() + target]
    }

    /// `(source, target, polarity)` of every present edge.
    pub fn present_edges(&self) -> Vec<(usize, usize, i8)> {
        self.edges
            .iter()
            .filter(|e| e.present)
            .map(|e| (e.source, e.target, e.polarity))
            .collect()
    }
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Marks an edge present when its time-mean absolute normalized score reaches `threshold`.
pub fn classify_edges(profile: &LinkProfile, threshold: f64) -> Result<EdgeReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FsnnError::config(format!("edge threshold must lie in (0, 1), got {threshold}")));
    }
    if profile.times.is_empty() {
        return Err(FsnnError::input("link profile is empty"));
    }
    let len = profile.times.len() as f64;
    let edges = profile
        .series
        .iter()
        .map(|s| {
            let mean_abs = s.normalized.iter().map(|v| v.abs()).sum::<f64>() / len;
            let mean = s.normalized.iter().sum::<f64>() / len;
            let pos = s.normalized.iter().filter(|v| **v > 0.0).count();
            let neg = s.normalized.iter().filter(|v| **v < 0.0).count();
            let sign_consistency = if pos + neg == 0 {
                0.0
            } else {
                pos.max(neg) as f64 / (pos + neg) as f64
            };
            let polarity = sign_of(mean);
            let present = mean_abs >= threshold && polarity != 0;
            EdgeStat {
                source: s.source,
                target: s.target,
                present,
                polarity,
                mean_abs_normalized: mean_abs,
                mean_normalized: mean,
                sign_consistency,
                unstable: present && sign_consistency < STABLE_SIGN_CONSISTENCY,
            }
        })
        .collect();
    Ok(EdgeReport {
        state_names: profile.state_names.clone(),
        threshold,
        edges,
    })
}
