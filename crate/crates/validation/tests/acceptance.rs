//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsnn_core::dynsys::{integrate_dense, rk4_step, FnSystem, IntegrationConfig, StateVector};
use fsnn_core::evaluation::{bin_by_initial_sum, median, monte_carlo, sample_initializations, InitSampling, MonteCarloReport};
use fsnn_core::ground_truth::{generate_training_data, GroundTruth, TrainingDataset};
use fsnn_core::io;
use fsnn_core::ltm::{classify_edges, conditional_delta, link_profile, link_score, LinkProfile};
use fsnn_core::model::{pack, unpack, GeneratedModel, ModelShape};
use fsnn_core::training::{train, OptimizerKind, TrainingConfig, TrainingResult};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, title: &str, o: &Outcome, failures: &mut Vec<usize>) {
    println!("criterion {n} ({title}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        failures.push(n);
    }
}

const TRUE_EDGES: [(usize, usize, i8); 6] = [(0, 0, -1), (0, 1, 1), (1, 1, -1), (1, 2, 1), (2, 0, -1), (2, 2, -1)];

fn fsnn(dir: &Path, args: &[&str]) -> u8 {
    let cwd = std::env::current_dir().unwrap();
    std::env::set_current_dir(dir).unwrap();
    let code = fsnn_cli::run_from(std::iter::once("fsnn").chain(args.iter().copied()));
    std::env::set_current_dir(cwd).unwrap();
    code
}

// --- criterion 1 ----------------------------------------------------------

fn benchmark_behavior(tmp: &Path) -> Outcome {
    let start = Instant::now();
    if fsnn(tmp, &["generate", "--out", "data"]) != 0 {
        return outcome(false, "generate failed");
    }
    let elapsed = start.elapsed().as_secs_f64();
    let s_star = GroundTruth::default().equilibrium()[0];
    let mut pass = (s_star - 38.7).abs() < 0.05 && elapsed < 1.0;
    let mut counts = Vec::new();
    for file in ["trajectory_1.csv", "trajectory_2.csv"] {
        let traj = io::load_trajectory(&tmp.join("data").join(file)).unwrap();
        pass &= traj.len() == 100 && traj.time(0) == 1.0 && traj.time(99) == 100.0;
        for i in 0..3 {
            let x = traj.series(i);
            let peaks: Vec<f64> = (1..x.len() - 1)
                .filter(|&k| x[k] > x[k - 1] && x[k] >= x[k + 1])
                .map(|k| x[k] - s_star)
                .collect();
            let decreasing = peaks.windows(2).all(|w| w[1] < w[0]);
            let about_eq = peaks.iter().all(|&a| a > 0.0) && x.iter().any(|&v| v < s_star);
            let settles = (x[x.len() - 1] - s_star).abs() < peaks.first().copied().unwrap_or(0.0);
            pass &= (2..=4).contains(&peaks.len()) && decreasing && about_eq && settles;
            counts.push(peaks.len());
        }
    }
    outcome(pass, format!("S* = {s_star:.4}, local maxima per (init, state) {counts:?}, generate {elapsed:.3}s"))
}

// --- criterion 2 ----------------------------------------------------------

fn training_fit(data: &[TrainingDataset], shape: &ModelShape) -> (Outcome, TrainingResult) {
    let mut notes = Vec::new();
    let mut last = None;
    for kind in [OptimizerKind::TrustRegion, OptimizerKind::FdGradient] {
        let cfg = TrainingConfig {
            optimizer: kind,
            ..TrainingConfig::default()
        };
        let start = Instant::now();
        let result = train(&cfg, data, shape, &[]).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let max_rmse = result.per_state_rmse.iter().cloned().fold(0.0, f64::max);
        notes.push(format!(
            "{kind}: rmse {:?}, {} evaluations, {secs:.1}s",
            result.per_state_rmse.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            result.evaluations_used
        ));
        let ok = max_rmse <= 3.0 && secs <= 1800.0;
        last = Some(result);
        if ok {
            return (outcome(true, notes.join("; ")), last.unwrap());
        }
    }
    (outcome(false, notes.join("; ")), last.unwrap())
}

// --- criterion 3 ----------------------------------------------------------

fn causal_recovery(model: &GeneratedModel) -> Outcome {
    let start = Instant::now();
    let cfg = IntegrationConfig::default();
    let init: StateVector = fsnn_core::ground_truth::TRAINING_INIT_1.into();
    let gt = GroundTruth::default();
    let edges_of = |sys: &dyn fsnn_core::dynsys::System| {
        let dense = integrate_dense(sys, &init, &cfg, &GroundTruth::state_names()).unwrap();
        let report = classify_edges(&link_profile(sys, &dense).unwrap(), 0.05).unwrap();
        let spurious = report
            .edges
            .iter()
            .filter(|e| !TRUE_EDGES.iter().any(|t| (t.0, t.1) == (e.source, e.target)))
            .map(|e| e.mean_abs_normalized)
            .fold(0.0, f64::max);
        (report.present_edges(), spurious)
    };
    let (gt_edges, _) = edges_of(&gt);
    let (gen_edges, spurious) = edges_of(model);
    let secs = start.elapsed().as_secs_f64();
    let pass = gt_edges == TRUE_EDGES && gen_edges == TRUE_EDGES && secs < 10.0;
    outcome(
        pass,
        format!(
            "ground truth {} edges, generated {gen_edges:?}, largest absent-edge score {spurious:.4}, {secs:.2}s",
            gt_edges.len()
        ),
    )
}

// --- criteria 4 and 5 -----------------------------------------------------

fn mc(model: &GeneratedModel, sum_range: (f64, f64)) -> MonteCarloReport {
    let inits = sample_initializations(
        100,
        3,
        &InitSampling {
            cube_max: 150.0,
            sum_range,
        },
    )
    .unwrap();
    monte_carlo(model, &GroundTruth::default(), &inits, &IntegrationConfig::default(), &GroundTruth::state_names()).unwrap()
}

fn in_range_generalization(report: &MonteCarloReport, secs: f64, training_rmse: f64) -> Outcome {
    let within = report
        .envelopes
        .iter()
        .filter(|e| e.q025.abs() <= 10.0 && e.q975.abs() <= 10.0)
        .count();
    let frac = within as f64 / report.envelopes.len() as f64;
    let med = median(&report.max_abs_errors());
    let pass = frac >= 0.9 && med <= 3.0 * training_rmse && report.failed_runs() == 0 && secs < 60.0;
    outcome(
        pass,
        format!(
            "envelope within 10 at {within}/{} points ({:.1}%), median max_abs_error {med:.4} vs 3 x training rmse {:.4}, {secs:.1}s",
            report.envelopes.len(),
            100.0 * frac,
            3.0 * training_rmse
        ),
    )
}

fn out_of_range_degradation(inside: &MonteCarloReport, outside: &MonteCarloReport) -> Outcome {
    let mut runs = inside.runs.clone();
    runs.extend(outside.runs.iter().cloned());
    let bins = bin_by_initial_sum(&runs, 30.0, 300.0);
    let within: Vec<f64> = bins.iter().filter(|b| b.lo >= 30.0 && b.hi <= 150.0).map(|b| b.median_max_abs_error).collect();
    let above: Vec<f64> = bins.iter().filter(|b| b.lo >= 150.0).map(|b| b.median_max_abs_error).collect();
    let worst_within = within.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let best_above = above.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = !within.is_empty() && !above.is_empty() && best_above > worst_within;
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        pass,
        format!("bin medians within [30,150]: {}; above 150: {}", show(&within), show(&above)),
    )
}

// --- criterion 6 ----------------------------------------------------------

fn normalization_ok(p: &LinkProfile) -> (bool, f64) {
    let n = p.n_states();
    let mut worst: f64 = 0.0;
    for t in 0..p.times.len() {
        for target in 0..n {
            let raw_nonzero = (0..n).any(|s| p.get(s, target).raw[t] != 0.0);
            let total: f64 = (0..n).map(|s| p.get(s, target).normalized[t].abs()).sum();
            if raw_nonzero {
                worst = worst.max((total - 1.0).abs());
            } else if total != 0.0 {
                return (false, f64::INFINITY);
            }
        }
    }
    (worst <= 1e-12, worst)
}

fn link_score_suite(model: &GeneratedModel) -> Outcome {
    let mut pass = true;
    let sum = |s: &[f64]| s[0] + s[1];
    let prod = |s: &[f64]| s[0] * s[1];
    pass &= conditional_delta(sum, &[1.0, 5.0], &[2.0, 9.0], 0) == 1.0;
    pass &= conditional_delta(prod, &[2.0, 3.0], &[4.0, 7.0], 0) == 6.0;
    pass &= conditional_delta(prod, &[2.0, 3.0], &[2.0, 7.0], 0) == 0.0;
    pass &= link_score(1.0, 2.0, 1.0) == 0.5;
    pass &= link_score(-2.0, -2.0, 1.0) == -1.0;
    pass &= link_score(3.0, 4.0, 0.0) == 0.0;
    pass &= link_score(3.0, 0.0, 1.0) == 0.0;
    pass &= fsnn_core::ltm::compose_path(&[1.0, -1.0]).unwrap() == -1.0;
    pass &= fsnn_core::ltm::compose_path(&[0.3, 0.0, 2.0]).unwrap() == 0.0;
    let exact = pass;

    // polarity on random quadratics
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut agree, mut checked) = (0, 0);
    for _ in 0..1000 {
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |s: &[f64]| {
            let mut v = 0.0;
            for i in 0..3 {
                v += a[i] * s[i];
                for j in 0..3 {
                    v += b[3 * i + j] * s[i] * s[j];
                }
            }
            v
        };
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dir: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().zip(&dir).map(|(x, d)| x + 1e-6 * d).collect();
        for j in 0..3 {
            let partial = a[j] + (0..3).map(|k| (b[3 * j + k] + b[3 * k + j]) * x[k]).sum::<f64>();
            if partial.abs() < 1e-2 || dir[j].abs() < 1e-3 {
                continue;
            }
            let ls = link_score(conditional_delta(f, &x, &y, j), f(&y) - f(&x), y[j] - x[j]);
            checked += 1;
            if ls.signum() == partial.signum() {
                agree += 1;
            }
        }
    }
    pass &= agree == checked;

    let init: StateVector = fsnn_core::ground_truth::TRAINING_INIT_1.into();
    let cfg = IntegrationConfig::default();
    let gt = GroundTruth::default();
    let dense = integrate_dense(&gt, &init, &cfg, &GroundTruth::state_names()).unwrap();
    let (gt_ok, gt_worst) = normalization_ok(&link_profile(&gt, &dense).unwrap());
    let dense = integrate_dense(model, &init, &cfg, &GroundTruth::state_names()).unwrap();
    let (m_ok, m_worst) = normalization_ok(&link_profile(model, &dense).unwrap());
    pass &= gt_ok && m_ok;
    outcome(
        pass,
        format!(
            "exact examples {}, polarity {agree}/{checked} quadratic partials, normalization error {:.1e}",
            if exact { "ok" } else { "wrong" },
            gt_worst.max(m_worst)
        ),
    )
}

// --- criterion 7 ----------------------------------------------------------

fn numerical_kernels(model: &GeneratedModel, tmp: &Path) -> Outcome {
    let sys = FnSystem::new(1, |_, s: &[f64]| vec![s[0]]);
    let err = |steps: usize| {
        let dt = 1.0 / steps as f64;
        let mut s = StateVector(vec![1.0]);
        for k in 0..steps {
            s = rk4_step(&sys, &s, k as f64 * dt, dt).unwrap();
        }
        (s[0] - 1f64.exp()).abs()
    };
    let factor = err(8) / err(16);
    let mut pass = (12.0..=20.0).contains(&factor);

    let shape = ModelShape::default_for(3);
    pass &= shape.param_count() == 357;
    let zero = GeneratedModel::zeros(shape.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let s = StateVector((0..3).map(|_| rng.random_range(0.0..150.0)).collect());
        pass &= zero.derivs(&s).unwrap().0.iter().all(|&d| d == 0.0);
    }

    let packed = pack(&shape, &unpack(&shape, &model.params.0).unwrap()).unwrap();
    let pack_ok = packed.0.iter().zip(&model.params.0).all(|(a, b)| a.to_bits() == b.to_bits());
    let path = tmp.join("kernel_model.json");
    io::save_model(&path, model).unwrap();
    let back = io::load_model(&path).unwrap();
    let file_ok = back.shape == model.shape
        && back.params.0.iter().zip(&model.params.0).all(|(a, b)| a.to_bits() == b.to_bits());
    pass &= pack_ok && file_ok && packed.len() == 357;
    outcome(
        pass,
        format!("rk4 halving factor {factor:.3}, param_count {}, pack round-trip {pack_ok}, model file round-trip {file_ok}, zero model derivs 0", shape.param_count()),
    )
}

// --- criterion 8 ----------------------------------------------------------

fn same_tree(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    names == other && names.iter().all(|n| fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap())
}

fn determinism(tmp: &Path, model: &GeneratedModel) -> Outcome {
    let d = tmp.join("determinism");
    fs::create_dir_all(&d).unwrap();
    io::save_model(&d.join("trained.json"), model).unwrap();
    fs::write(d.join("short.toml"), "budget = 300\nseed = 3\n").unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("generate", vec!["generate", "--out", "{}"]),
        (
            "train",
            vec!["train", "--config", "short.toml", "run1_generate/trajectory_1.csv", "run1_generate/trajectory_2.csv", "--out", "{}/model.json"],
        ),
        ("simulate", vec!["simulate", "trained.json", "--init", "29,96,4", "--out", "{}/sim.csv"]),
        ("simulate --dense", vec!["simulate", "--ground-truth", "--init", "22,11,78", "--dense", "--out", "{}/dense.csv"]),
        ("analyze", vec!["analyze", "trained.json", "--init", "29,96,4", "--out", "{}"]),
        ("evaluate", vec!["evaluate", "trained.json", "--seed", "4", "--out", "{}"]),
        ("evaluate out-of-range", vec!["evaluate", "trained.json", "--runs", "20", "--sum-range", "150:300", "--out", "{}"]),
        ("compare", vec!["compare", "gt/link_scores.csv", "run1_analyze/link_scores.csv", "--out", "{}"]),
    ];
    if fsnn(&d, &["analyze", "--ground-truth", "--init", "29,96,4", "--out", "gt"]) != 0 {
        return outcome(false, "ground-truth analyze failed");
    }
    let mut bad = Vec::new();
    for (name, args) in &commands {
        let tag = name.split(' ').next().unwrap();
        let mut dirs = Vec::new();
        for run in 1..=2 {
            let out = format!("run{run}_{}", name.replace(' ', "_"));
            let args: Vec<String> = args.iter().map(|a| a.replace("{}", &out)).collect();
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            fs::create_dir_all(d.join(&out)).unwrap();
            if fsnn(&d, &args) != 0 {
                bad.push(format!("{name} exited nonzero"));
            }
            dirs.push(d.join(out));
        }
        if !same_tree(&dirs[0], &dirs[1]) {
            bad.push(format!("{tag} outputs differ"));
        }
    }
    let pass = bad.is_empty();
    outcome(
        pass,
        if pass {
            format!("{} command invocations repeated with byte-identical outputs", commands.len())
        } else {
            bad.join("; ")
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let mut failures = Vec::new();

    let c1 = benchmark_behavior(tmp);
    report(1, "benchmark behavior", &c1, &mut failures);

    let data = generate_training_data(
        &fsnn_core::ground_truth::training_initializations(),
        &Default::default(),
        &IntegrationConfig::default(),
    )
    .unwrap();
    let shape = ModelShape::default_for(3);
    let (c2, result) = training_fit(&data, &shape);
    report(2, "training fit", &c2, &mut failures);
    let model = GeneratedModel::from_training(shape, &result).unwrap();
    let training_rmse = result.per_state_rmse.iter().cloned().fold(0.0, f64::max);

    report(3, "causal recovery", &causal_recovery(&model), &mut failures);

    let start = Instant::now();
    let inside = mc(&model, (30.0, 150.0));
    let secs = start.elapsed().as_secs_f64();
    report(4, "in-range generalization", &in_range_generalization(&inside, secs, training_rmse), &mut failures);
    let outside = mc(&model, (150.0, 300.0));
    report(5, "out-of-range degradation", &out_of_range_degradation(&inside, &outside), &mut failures);

    report(6, "link-score unit suite", &link_score_suite(&model), &mut failures);
    report(7, "numerical kernels", &numerical_kernels(&model, tmp), &mut failures);
    report(8, "determinism", &determinism(tmp, &model), &mut failures);

    println!("summary: {}/8 criteria passed", 8 - failures.len());
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
