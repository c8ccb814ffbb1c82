use fsnn_core::dynsys::{integrate_dense, IntegrationConfig, StateVector};
use fsnn_core::evaluation::{median, monte_carlo, sample_initializations, structure_recovery, InitSampling};
use fsnn_core::ground_truth::{generate_training_data, training_initializations, GroundTruth, GroundTruthParams};
use fsnn_core::io::{self, Manifest, ManifestEntry, RunConfig};
use fsnn_core::ltm::{classify_edges, link_profile};
use fsnn_core::model::GeneratedModel;
use fsnn_core::training::{payoff, train};

fn short() -> RunConfig {
    RunConfig::from_toml("horizon = 20\nhidden_layers = [3]\nbudget = 300\n").unwrap()
}

#[test]
fn files_feed_training_and_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short();
    let data = generate_training_data(&cfg.initial_states(), &cfg.ground_truth(), &cfg.integration(false)).unwrap();
    let mut entries = Vec::new();
    for (k, d) in data.iter().enumerate() {
        let file = format!("d{k}.csv");
        io::save_trajectory(&dir.path().join(&file), &d.trajectory).unwrap();
        entries.push(ManifestEntry {
            file,
            initialization: d.initialization.0.clone(),
        });
    }
    io::save_manifest(
        dir.path(),
        &Manifest {
            generator: "test".into(),
            config: cfg.clone(),
            datasets: entries,
        },
    )
    .unwrap();

    let loaded: Vec<_> = (0..2).map(|k| io::load_dataset(&dir.path().join(format!("d{k}.csv"))).unwrap()).collect();
    assert_eq!(loaded, data);

    let shape = cfg.model_shape(&GroundTruth::state_names()).unwrap();
    let result = train(&cfg.training(), &loaded, &shape, &[]).unwrap();
    let model = GeneratedModel::from_training(shape, &result).unwrap();
    let again = payoff(&model.params, &model.shape, &loaded, &cfg.integration(false)).unwrap();
    assert_eq!(again, result.payoff);

    let path = dir.path().join("m.json");
    io::save_model(&path, &model).unwrap();
    assert_eq!(io::load_model(&path).unwrap(), model);

    let init: StateVector = training_initializations()[0].clone();
    let dense = integrate_dense(&model, &init, &IntegrationConfig::default(), &GroundTruth::state_names()).unwrap();
    let profile = link_profile(&model, &dense).unwrap();
    let table = dir.path().join("links.csv");
    io::save_link_table(&table, &profile).unwrap();
    let back = io::load_link_table(&table).unwrap();
    let a = classify_edges(&profile, 0.05).unwrap();
    let b = classify_edges(&back, 0.05).unwrap();
    assert_eq!(a, b);
    let cmp = structure_recovery(&a, &b).unwrap();
    assert_eq!((cmp.precision, cmp.recall, cmp.polarity_accuracy), (1.0, 1.0, 1.0));
}

#[test]
fn ground_truth_self_evaluation_is_exact() {
    let gt = GroundTruth::new(GroundTruthParams::default());
    let inits = sample_initializations(25, 3, &InitSampling::default()).unwrap();
    let report = monte_carlo(&gt, &gt, &inits, &IntegrationConfig::default(), &GroundTruth::state_names()).unwrap();
    assert_eq!(report.runs.len(), 25);
    assert_eq!(median(&report.max_abs_errors()), 0.0);
    assert!(report.envelopes.iter().all(|e| e.q025 == 0.0 && e.q50 == 0.0 && e.q975 == 0.0));
}
