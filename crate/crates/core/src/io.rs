//! File formats: CSV tables, the JSON model document, the TOML run config and
//! the data manifest.
//!
//! Every float is written with Rust's shortest round-trip formatting, so
//! reading a file back reproduces the in-memory values bit for bit.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynsys::{IntegrationConfig, StateVector, Trajectory};
use crate::error::{FsnnError, Result};
use crate::evaluation::{InitSampling, MonteCarloReport, StructureComparison, SumBin};
use crate::ground_truth::{GroundTruthParams, TrainingDataset, TRAINING_INIT_1, TRAINING_INIT_2};
use crate::ltm::{EdgeReport, LinkProfile, LinkScoreSample, DEFAULT_EDGE_THRESHOLD};
use crate::model::{
    AdjacencyMask, GeneratedModel, ModelShape, NetworkArchitecture, ParameterVector, ScalingSpec, DEFAULT_HIDDEN,
    DEFAULT_MAGNITUDE,
};
use crate::training::{OptimizerKind, TrainingConfig, TrainingResult};

const TIME_TOL: f64 = 1e-9;

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| FsnnError::Format(format!("line {line}: cannot parse {what} '{field}'")))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(File::create(path)?)
}

// --- trajectories ---------------------------------------------------------

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend(traj.state_names.iter().cloned());
    out.write_record(&header)?;
    for (k, s) in traj.samples.iter().enumerate() {
        let mut row = vec![num(traj.time(k))];
        row.extend(s.0.iter().map(|v| num(*v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `time,<state names..>` rows on a uniform time grid.
pub fn read_trajectory<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv_reader(r);
    let headers = rd.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "time" {
        return Err(FsnnError::Format("trajectory header must be time,<state names..>".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(FsnnError::Format("duplicate state names in trajectory header".into()));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(FsnnError::Format(format!("line {line}: expected {} fields", headers.len())));
        }
        times.push(parse_f64(&rec[0], "time", line)?);
        let row = (1..rec.len())
            .map(|i| parse_f64(&rec[i], &names[i - 1], line))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(StateVector(row));
    }
    if samples.is_empty() {
        return Err(FsnnError::Format("trajectory has no rows".into()));
    }
    let t0 = times[0];
    let interval = if times.len() > 1 { times[1] - t0 } else { 1.0 };
    if !(interval > 0.0) {
        return Err(FsnnError::Format("trajectory times must increase".into()));
    }
    for (k, t) in times.iter().enumerate() {
        let expected = t0 + k as f64 * interval;
        if (t - expected).abs() > TIME_TOL * expected.abs().max(1.0) {
            return Err(FsnnError::Format(format!("row {k}: time {t} is off the uniform grid")));
        }
    }
    Trajectory::new(t0, interval, names, samples)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory(create(path)?, traj)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(File::open(path)?)
}

// --- model document -------------------------------------------------------

pub const MODEL_FORMAT: &str = "fsnn-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk model. `mask[source][target]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub state_names: Vec<String>,
    pub activation: String,
    pub hidden_layers: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub magnitudes: Vec<f64>,
    pub params: Vec<f64>,
}

impl ModelDocument {
    pub fn from_model(m: &GeneratedModel) -> Self {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            state_names: m.shape.state_names.clone(),
            activation: "tanh".into(),
            hidden_layers: m.shape.architecture.hidden_layers.clone(),
            mask: m.shape.mask.allowed.clone(),
            magnitudes: m.shape.scaling.magnitude.clone(),
            params: m.params.0.clone(),
        }
    }

    pub fn into_model(self) -> Result<GeneratedModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(FsnnError::Format(format!(
                "unsupported model document {} v{}",
                self.format, self.version
            )));
        }
        if self.activation != "tanh" {
            return Err(FsnnError::Format(format!("unsupported activation '{}'", self.activation)));
        }
        let n = self.state_names.len();
        let shape = ModelShape::new(
            self.state_names,
            NetworkArchitecture {
                n_states: n,
                hidden_layers: self.hidden_layers,
            },
            AdjacencyMask { allowed: self.mask },
            ScalingSpec {
                magnitude: self.magnitudes,
            },
        )?;
        GeneratedModel::new(shape, ParameterVector(self.params))
    }
}

pub fn model_to_string(m: &GeneratedModel) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ModelDocument::from_model(m))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(s: &str) -> Result<GeneratedModel> {
    serde_json::from_str::<ModelDocument>(s)?.into_model()
}

pub fn save_model(path: &Path, m: &GeneratedModel) -> Result<()> {
    create(path)?.write_all(model_to_string(m)?.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GeneratedModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

// --- link scores and edges ------------------------------------------------

pub fn write_link_table<W: Write>(w: W, profile: &LinkProfile) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["time", "source", "target", "raw", "normalized"])?;
    for s in profile.samples() {
        out.write_record([num(s.time), s.source, s.target, num(s.raw), num(s.normalized)])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a long-format link table; state order is the order of first appearance.
pub fn read_link_table<R: Read>(r: R) -> Result<LinkProfile> {
    let mut rd = csv_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time", "source", "target", "raw", "normalized"] {
        return Err(FsnnError::Format("link table header must be time,source,target,raw,normalized".into()));
    }
    let mut rows = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(FsnnError::Format(format!("line {line}: expected 5 fields")));
        }
        for name in [&rec[1], &rec[2]] {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
        rows.push(LinkScoreSample {
            time: parse_f64(&rec[0], "time", line)?,
            source: rec[1].to_string(),
            target: rec[2].to_string(),
            raw: parse_f64(&rec[3], "raw", line)?,
            normalized: parse_f64(&rec[4], "normalized", line)?,
        });
    }
    LinkProfile::from_samples(names, &rows)
}

pub fn save_link_table(path: &Path, profile: &LinkProfile) -> Result<()> {
    write_link_table(create(path)?, profile)
}

pub fn load_link_table(path: &Path) -> Result<LinkProfile> {
    read_link_table(File::open(path)?)
}

pub fn write_edge_report<W: Write>(w: W, report: &EdgeReport) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "source",
        "target",
        "present",
        "polarity",
        "mean_abs_normalized",
        "mean_normalized",
        "sign_consistency",
        "unstable",
    ])?;
    for e in &report.edges {
        out.write_record([
            report.state_names[e.source].clone(),
            report.state_names[e.target].clone(),
            e.present.to_string(),
            e.polarity.to_string(),
            num(e.mean_abs_normalized),
            num(e.mean_normalized),
            num(e.sign_consistency),
            e.unstable.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_comparison<W: Write>(w: W, cmp: &StructureComparison) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "source",
        "target",
        "truth_present",
        "truth_polarity",
        "generated_present",
        "generated_polarity",
        "agree",
    ])?;
    for e in &cmp.edges {
        out.write_record([
            cmp.state_names[e.source].clone(),
            cmp.state_names[e.target].clone(),
            e.truth_present.to_string(),
            e.truth_polarity.to_string(),
            e.generated_present.to_string(),
            e.generated_polarity.to_string(),
            e.agrees().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_comparison_summary<W: Write>(w: W, cmp: &StructureComparison) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["metric", "value"])?;
    out.write_record(["precision".to_string(), num(cmp.precision)])?;
    out.write_record(["recall".to_string(), num(cmp.recall)])?;
    out.write_record(["polarity_accuracy".to_string(), num(cmp.polarity_accuracy)])?;
    out.write_record(["disagreements".to_string(), cmp.disagreements().len().to_string()])?;
    out.flush()?;
    Ok(())
}

/// Reads `metric,value` rows.
pub fn read_metrics<R: Read>(r: R) -> Result<Vec<(String, f64)>> {
    let mut rd = csv_reader(r);
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            Ok((rec[0].to_string(), parse_f64(&rec[1], "value", line)?))
        })
        .collect()
}

// --- Monte Carlo reports --------------------------------------------------

pub fn write_mc_runs<W: Write>(w: W, report: &MonteCarloReport) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["run".to_string()];
    header.extend(report.state_names.iter().map(|n| format!("init_{n}")));
    header.extend(["sum".into(), "max_abs_error".into(), "failed".into()]);
    out.write_record(&header)?;
    for (k, r) in report.runs.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(r.initialization.0.iter().map(|v| num(*v)));
        row.extend([num(r.initial_sum()), num(r.max_abs_error), r.failed.to_string()]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_mc_envelopes<W: Write>(w: W, report: &MonteCarloReport) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["state", "time", "q025", "q50", "q975"])?;
    for e in &report.envelopes {
        out.write_record([
            report.state_names[e.state].clone(),
            num(e.time),
            num(e.q025),
            num(e.q50),
            num(e.q975),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sum_bins<W: Write>(w: W, bins: &[SumBin]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["sum_lo", "sum_hi", "count", "median_max_abs_error", "max_max_abs_error"])?;
    for b in bins {
        out.write_record([
            num(b.lo),
            num(b.hi),
            b.count.to_string(),
            num(b.median_max_abs_error),
            num(b.max_max_abs_error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

// --- training summary -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub optimizer: String,
    pub seed: u64,
    pub param_count: usize,
    pub payoff: f64,
    pub per_state_rmse: Vec<f64>,
    pub evaluations_used: usize,
    pub converged: bool,
}

impl TrainingSummary {
    pub fn new(cfg: &TrainingConfig, result: &TrainingResult) -> Self {
        TrainingSummary {
            optimizer: cfg.optimizer.id().into(),
            seed: cfg.seed,
            param_count: result.params.len(),
            payoff: result.payoff,
            per_state_rmse: result.per_state_rmse.clone(),
            evaluations_used: result.evaluations_used,
            converged: result.converged,
        }
    }
}

pub fn write_trace<W: Write>(w: W, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["evaluation", "best_payoff"])?;
    for (i, f) in trace {
        out.write_record([i.to_string(), num(*f)])?;
    }
    out.flush()?;
    Ok(())
}

// --- run configuration ----------------------------------------------------

/// Flat experiment configuration. Every key is optional in the file and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // ground truth
    pub time_constant: f64,
    pub target_level: f64,
    pub sigmoid_halfwidth: f64,
    pub initializations: Vec<Vec<f64>>,
    // integration
    pub dt: f64,
    pub horizon: f64,
    pub sample_interval: f64,
    // generated model
    pub hidden_layers: Vec<usize>,
    /// Links removed a priori, written `source->target`.
    pub masked_links: Vec<String>,
    pub magnitudes: Vec<f64>,
    // training
    pub budget: usize,
    pub bounds: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub restarts: usize,
    pub symmetry_breaking: f64,
    // analysis
    pub edge_threshold: f64,
    // Monte Carlo
    pub mc_runs: usize,
    pub mc_sum_lo: f64,
    pub mc_sum_hi: f64,
    pub mc_cube_max: f64,
    pub bin_width: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gt = GroundTruthParams::default();
        let integ = IntegrationConfig::default();
        let train = TrainingConfig::default();
        let mc = InitSampling::default();
        RunConfig {
            time_constant: gt.t,
            target_level: gt.g,
            sigmoid_halfwidth: gt.sigmoid_halfwidth,
            initializations: vec![TRAINING_INIT_1.to_vec(), TRAINING_INIT_2.to_vec()],
            dt: integ.dt,
            horizon: integ.horizon,
            sample_interval: integ.sample_interval,
            hidden_layers: DEFAULT_HIDDEN.to_vec(),
            masked_links: Vec::new(),
            magnitudes: vec![DEFAULT_MAGNITUDE; 3],
            budget: train.budget,
            bounds: train.bounds,
            seed: train.seed,
            optimizer: train.optimizer,
            restarts: train.restarts,
            symmetry_breaking: train.symmetry_breaking,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
            mc_runs: 100,
            mc_sum_lo: mc.sum_range.0,
            mc_sum_hi: mc.sum_range.1,
            mc_cube_max: mc.cube_max,
            bin_width: 30.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| FsnnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FsnnError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.ground_truth().validate()?;
        self.integration(false).validate()?;
        self.training().validate()?;
        self.model_shape(&crate::ground_truth::GroundTruth::state_names())?;
        if self.initializations.iter().any(|i| i.len() != 3) {
            return Err(FsnnError::config("each initialization needs 3 values"));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(FsnnError::config("edge_threshold must lie in (0, 1)"));
        }
        if self.mc_runs == 0 || !(self.bin_width > 0.0) {
            return Err(FsnnError::config("mc_runs and bin_width must be positive"));
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruthParams {
        GroundTruthParams {
            t: self.time_constant,
            g: self.target_level,
            sigmoid_halfwidth: self.sigmoid_halfwidth,
        }
    }

    pub fn integration(&self, include_initial: bool) -> IntegrationConfig {
        IntegrationConfig {
            dt: self.dt,
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            include_initial,
        }
    }

    pub fn initial_states(&self) -> Vec<StateVector> {
        self.initializations.iter().map(|v| StateVector(v.clone())).collect()
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            integration: self.integration(false),
            bounds: self.bounds,
            budget: self.budget,
            seed: self.seed,
            optimizer: self.optimizer,
            restarts: self.restarts,
            symmetry_breaking: self.symmetry_breaking,
        }
    }

    pub fn sampling(&self) -> InitSampling {
        InitSampling {
            cube_max: self.mc_cube_max,
            sum_range: (self.mc_sum_lo, self.mc_sum_hi),
        }
    }

    /// Model shape over `state_names` with this config's architecture, mask and scaling.
    pub fn model_shape(&self, state_names: &[String]) -> Result<ModelShape> {
        let n = state_names.len();
        let mut mask = AdjacencyMask::full(n);
        for link in &self.masked_links {
            let (src, tgt) = link
                .split_once("->")
                .ok_or_else(|| FsnnError::config(format!("masked link '{link}' must be written source->target")))?;
            let find = |name: &str| {
                state_names
                    .iter()
                    .position(|s| s == name.trim())
                    .ok_or_else(|| FsnnError::config(format!("masked link names unknown state '{name}'")))
            };
            mask.set(find(src)?, find(tgt)?, false);
        }
        let magnitudes = if self.magnitudes.len() == n {
            self.magnitudes.clone()
        } else if self.magnitudes.len() == 1 {
            vec![self.magnitudes[0]; n]
        } else {
            return Err(FsnnError::config(format!(
                "magnitudes lists {} values for {n} states",
                self.magnitudes.len()
            )));
        };
        ModelShape::new(
            state_names.to_vec(),
            NetworkArchitecture::uniform(n, &self.hidden_layers),
            mask,
            ScalingSpec { magnitude: magnitudes },
        )
    }
}

// --- data manifest --------------------------------------------------------

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub initialization: Vec<f64>,
}

/// Describes generated data: the exact configuration and one entry per file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator: String,
    pub config: RunConfig,
    pub datasets: Vec<ManifestEntry>,
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut s = serde_json::to_string_pretty(manifest)?;
    s.push('\n');
    create(&dir.join(MANIFEST_NAME))?.write_all(s.as_bytes())?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
}

/// Loads a training dataset. The initialization comes from a row at t = 0 if
/// present, otherwise from the manifest in the file's directory.
pub fn load_dataset(path: &Path) -> Result<TrainingDataset> {
    let traj = load_trajectory(path)?;
    if traj.t0 == 0.0 {
        let init = traj.samples[0].clone();
        return TrainingDataset::new(init, traj);
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let file = path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| FsnnError::input("data path has no file name"))?;
    let manifest = load_manifest(&dir)?.ok_or_else(|| {
        FsnnError::input(format!(
            "{}: no t = 0 row and no {MANIFEST_NAME} to supply the initialization",
            path.display()
        ))
    })?;
    let entry = manifest
        .datasets
        .iter()
        .find(|e| e.file == file)
        .ok_or_else(|| FsnnError::input(format!("{file} is not listed in {MANIFEST_NAME}")))?;
    TrainingDataset::new(StateVector(entry.initialization.clone()), traj)
}
