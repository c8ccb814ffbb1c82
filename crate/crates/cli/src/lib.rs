//! Command implementations behind the `fsnn` binary.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use std::ffi::OsString;

use clap::{Args, Parser, Subcommand};

use fsnn_core::dynsys::{integrate, integrate_dense, StateVector, System};
use fsnn_core::evaluation::{bin_by_initial_sum, monte_carlo, sample_initializations, structure_recovery};
use fsnn_core::ground_truth::{generate_training_data, GroundTruth};
use fsnn_core::io::{self, Manifest, ManifestEntry, RunConfig, TrainingSummary};
use fsnn_core::ltm::{classify_edges, link_profile};
use fsnn_core::model::GeneratedModel;
use fsnn_core::training::train;
use fsnn_core::FsnnError;

#[derive(Parser)]
#[command(name = "fsnn", version, about = "Fit neural-derivative ODE models and analyze their causal links")]
pub struct Cli {
    /// Flat TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured training seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ground truth from every configured initialization.
    Generate {
        /// Output directory.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Fit a generated model to trajectory files.
    Train {
        /// Trajectory files; initializations come from a t = 0 row or the manifest.
        #[arg(required = true, value_name = "DATA")]
        data: Vec<PathBuf>,
        /// Model file to write; the summary goes next to it.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Model files whose parameters are used as extra starting points.
        #[arg(long, value_name = "PATH")]
        inject: Vec<PathBuf>,
    },
    /// Write one trajectory of a model or of the ground truth.
    Simulate {
        #[command(flatten)]
        source: SystemSource,
        #[arg(long, value_name = "a,b,c", value_parser = parse_init)]
        init: StateVector,
        /// Write every solver step, including t = 0.
        #[arg(long)]
        dense: bool,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Link scores and edge report along one trajectory.
    Analyze {
        #[command(flatten)]
        source: SystemSource,
        #[arg(long, value_name = "a,b,c", value_parser = parse_init)]
        init: StateVector,
        /// Output directory for link_scores.csv and edges.csv.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Monte Carlo prediction error against the ground truth.
    Evaluate {
        /// Model file.
        #[arg(value_name = "MODEL", required_unless_present = "self_check", conflicts_with = "self_check")]
        model: Option<PathBuf>,
        /// Evaluate the ground truth against itself.
        #[arg(long)]
        self_check: bool,
        #[arg(long, value_name = "N")]
        runs: Option<usize>,
        #[arg(long, value_name = "lo:hi", value_parser = parse_range)]
        sum_range: Option<(f64, f64)>,
        /// Output directory for runs.csv, envelopes.csv and bins.csv.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Compare the edges of two link-score tables.
    Compare {
        /// Reference (ground-truth) link table.
        truth: PathBuf,
        /// Link table of the generated model.
        generated: PathBuf,
        /// Output directory for comparison.csv and summary.csv.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SystemSource {
    /// Model file.
    #[arg(value_name = "MODEL", required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
    model: Option<PathBuf>,
    /// Use the ground-truth system instead of a model file.
    #[arg(long)]
    ground_truth: bool,
}

fn parse_init(s: &str) -> Result<StateVector, String> {
    let v = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err("initial values must be finite".into());
    }
    Ok(StateVector(v))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo = lo.trim().parse::<f64>().map_err(|_| format!("'{lo}' is not a number"))?;
    let hi = hi.trim().parse::<f64>().map_err(|_| format!("'{hi}' is not a number"))?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err("need finite lo <= hi".into());
    }
    Ok((lo, hi))
}

enum Loaded {
    Truth(GroundTruth),
    Model(GeneratedModel),
}

impl Loaded {
    fn system(&self) -> &dyn System {
        match self {
            Loaded::Truth(g) => g,
            Loaded::Model(m) => m,
        }
    }

    fn state_names(&self) -> Vec<String> {
        match self {
            Loaded::Truth(_) => GroundTruth::state_names(),
            Loaded::Model(m) => m.shape.state_names.clone(),
        }
    }
}

fn load_source(src: &SystemSource, cfg: &RunConfig) -> Result<Loaded, FsnnError> {
    match &src.model {
        Some(path) => Ok(Loaded::Model(io::load_model(path)?)),
        None => Ok(Loaded::Truth(GroundTruth::new(cfg.ground_truth()))),
    }
}

fn check_init(init: &StateVector, n: usize) -> Result<(), FsnnError> {
    if init.len() != n {
        return Err(FsnnError::Input(format!("--init has {} values, system has {n} states", init.len())));
    }
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut File) -> Result<(), FsnnError>) -> Result<(), FsnnError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = File::create(path)?;
    f(&mut file)?;
    file.flush()?;
    Ok(())
}

/// `model.json` -> `model.<suffix>`
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), FsnnError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Generate { out } => {
            let data = generate_training_data(&cfg.initial_states(), &cfg.ground_truth(), &cfg.integration(false))?;
            std::fs::create_dir_all(&out)?;
            let mut entries = Vec::new();
            for (k, d) in data.iter().enumerate() {
                let file = format!("trajectory_{}.csv", k + 1);
                io::save_trajectory(&out.join(&file), &d.trajectory)?;
                entries.push(ManifestEntry {
                    file,
                    initialization: d.initialization.0.clone(),
                });
            }
            io::save_manifest(
                &out,
                &Manifest {
                    generator: "fsnn generate".into(),
                    config: cfg,
                    datasets: entries,
                },
            )?;
        }
        Command::Train { data, out, inject } => {
            let datasets = data.iter().map(|p| io::load_dataset(p)).collect::<Result<Vec<_>, _>>()?;
            let names = datasets[0].trajectory.state_names.clone();
            if let Some((p, _)) = data.iter().zip(&datasets).find(|(_, d)| d.trajectory.state_names != names) {
                return Err(FsnnError::Input(format!("{}: header differs from {}", p.display(), data[0].display())));
            }
            let shape = cfg.model_shape(&names)?;
            let injected = inject
                .iter()
                .map(|p| {
                    let m = io::load_model(p)?;
                    if m.shape != shape {
                        return Err(FsnnError::Input(format!("{}: model shape differs from the configured one", p.display())));
                    }
                    Ok(m.params)
                })
                .collect::<Result<Vec<_>, FsnnError>>()?;
            let tcfg = cfg.training();
            let result = train(&tcfg, &datasets, &shape, &injected)?;
            let model = GeneratedModel::from_training(shape, &result)?;
            io::save_model(&out, &model)?;
            write_file(&sibling(&out, "summary.json"), |f| {
                let mut s = serde_json::to_string_pretty(&TrainingSummary::new(&tcfg, &result))?;
                s.push('\n');
                Ok(f.write_all(s.as_bytes())?)
            })?;
            write_file(&sibling(&out, "trace.csv"), |f| io::write_trace(f, result.best_so_far_trace()))?;
            log::info!("payoff {:e}, per-state rmse {:?}", result.payoff, result.per_state_rmse);
        }
        Command::Simulate {
            source,
            init,
            dense,
            out,
        } => {
            let sys = load_source(&source, &cfg)?;
            check_init(&init, sys.state_names().len())?;
            let traj = if dense {
                integrate_dense(sys.system(), &init, &cfg.integration(true), &sys.state_names())?
            } else {
                integrate(sys.system(), &init, &cfg.integration(false), &sys.state_names())?
            };
            io::save_trajectory(&out, &traj)?;
        }
        Command::Analyze { source, init, out } => {
            let sys = load_source(&source, &cfg)?;
            check_init(&init, sys.state_names().len())?;
            let dense = integrate_dense(sys.system(), &init, &cfg.integration(true), &sys.state_names())?;
            let profile = link_profile(sys.system(), &dense)?;
            let report = classify_edges(&profile, cfg.edge_threshold)?;
            io::save_link_table(&out.join("link_scores.csv"), &profile)?;
            write_file(&out.join("edges.csv"), |f| io::write_edge_report(f, &report))?;
        }
        Command::Evaluate {
            model,
            self_check,
            runs,
            sum_range,
            out,
        } => {
            if let Some(n) = runs {
                cfg.mc_runs = n;
            }
            if let Some(r) = sum_range {
                cfg.mc_sum_lo = r.0;
                cfg.mc_sum_hi = r.1;
            }
            cfg.validate()?;
            let truth = GroundTruth::new(cfg.ground_truth());
            let sys = match (&model, self_check) {
                (Some(p), _) => Loaded::Model(io::load_model(p)?),
                _ => Loaded::Truth(truth),
            };
            let names = sys.state_names();
            if names.len() != 3 {
                return Err(FsnnError::Input(format!("model has {} states, the ground truth has 3", names.len())));
            }
            let inits = sample_initializations(cfg.mc_runs, 3, &cfg.sampling())?;
            let report = monte_carlo(sys.system(), &truth, &inits, &cfg.integration(false), &names)?;
            let upper = cfg.mc_sum_hi.max(cfg.bin_width);
            let bins = bin_by_initial_sum(&report.runs, cfg.bin_width, upper);
            std::fs::create_dir_all(&out)?;
            write_file(&out.join("runs.csv"), |f| io::write_mc_runs(f, &report))?;
            write_file(&out.join("envelopes.csv"), |f| io::write_mc_envelopes(f, &report))?;
            write_file(&out.join("bins.csv"), |f| io::write_sum_bins(f, &bins))?;
            if report.failed_runs() > 0 {
                log::warn!("{} of {} runs failed", report.failed_runs(), report.runs.len());
            }
        }
        Command::Compare { truth, generated, out } => {
            let a = classify_edges(&io::load_link_table(&truth)?, cfg.edge_threshold)?;
            let b = classify_edges(&io::load_link_table(&generated)?, cfg.edge_threshold)?;
            let cmp = structure_recovery(&a, &b)?;
            write_file(&out.join("comparison.csv"), |f| io::write_comparison(f, &cmp))?;
            write_file(&out.join("summary.csv"), |f| io::write_comparison_summary(f, &cmp))?;
        }
    }
    Ok(())
}

/// Process exit code for an error.
pub fn exit_code(e: &FsnnError) -> u8 {
    match e {
        FsnnError::Integration { .. } | FsnnError::Evaluation(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are reported on stderr.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fsnn: {e}");
            exit_code(&e)
        }
    }
}
