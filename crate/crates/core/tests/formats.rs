use anil_lab::experiment::{evaluate, replay, run_experiment, ExperimentConfig, ExperimentKind, Manifest};
use anil_lab::optimizer::RUN_CSV_HEADER;
use anil_lab::probes::SCALING_CSV_HEADER;
use anil_lab::task_model::{content_hash, sample_task_family, TaskFamilyDocument, TaskFamilySpec};
use anil_lab::Error;

fn config_error(json: &str) -> String {
    match ExperimentConfig::from_json(json) {
        Err(Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

const SMALL_SWEEP: &str = r#"{
  "experiment": "sweep",
  "family": { "geometry": "strongly_convex", "mu": 1.0, "smoothness_l": 2.0, "n_w": 2, "n_phi": 2, "seed": 4 },
  "outer": { "beta_w": 0.1, "beta_phi": 0.1, "batch_size": 4, "max_outer_iters": 40,
             "inner": { "alpha": 0.25, "num_steps": 1 }, "seed": 4 },
  "n_sweep": [1, 2, 3],
  "epsilon_target": 1e-3,
  "eval_pool_size": 16,
  "sweep_checks": ["iterations_non_increasing"]
}"#;

#[test]
fn infeasible_family_names_the_field() {
    let msg = config_error(
        r#"{"experiment":"gradcheck","family":{"geometry":"strongly_convex","mu":3,"smoothness_l":2,"n_w":2,"n_phi":2}}"#,
    );
    assert!(msg.starts_with("family:"), "{msg}");
    assert!(msg.contains("mu exceeds smoothness_L"), "{msg}");
}

#[test]
fn unknown_and_mistyped_fields_report_their_path() {
    let msg = config_error(
        r#"{"experiment":"gradcheck","family":{"geometry":"strongly_convex","mu":1,"smoothness_l":2,"n_w":2,"n_phi":2,"colour":1}}"#,
    );
    assert!(msg.contains("family"), "{msg}");
    assert!(msg.contains("colour"), "{msg}");
    let msg = config_error(
        r#"{"experiment":"sweep","family":{"geometry":"strongly_convex","mu":1,"smoothness_l":2,"n_w":2,"n_phi":2},
            "outer":{"batch_size":"four","max_outer_iters":1,"inner":{"alpha":0.1,"num_steps":1}}}"#,
    );
    assert!(msg.contains("outer.batch_size"), "{msg}");
}

#[test]
fn sweep_requires_outer_and_epsilon() {
    let msg = config_error(
        r#"{"experiment":"sweep","n_sweep":[1,2],
            "family":{"geometry":"strongly_convex","mu":1,"smoothness_l":2,"n_w":2,"n_phi":2}}"#,
    );
    assert!(msg.starts_with("outer"), "{msg}");
}

#[test]
fn csv_headers_are_stable() {
    assert_eq!(
        RUN_CSV_HEADER,
        "iter,grad_w_sq,grad_phi_sq,pop_grad_w_sq,pop_grad_phi_sq,grad_entries,second_order_entries,elapsed_ms"
    );
    assert_eq!(SCALING_CSV_HEADER, "block,N,estimate,theory_bound,pass");
    let out = evaluate(&ExperimentConfig::from_json(SMALL_SWEEP).unwrap()).unwrap();
    assert_eq!(
        out.results_csv.lines().next().unwrap(),
        "N,alpha,beta_w,beta_phi,status,iters_to_epsilon,grad_entries_to_epsilon,\
         second_order_entries_to_epsilon,final_pop_grad_w_sq,final_pop_grad_phi_sq"
    );
    assert_eq!(out.extra_files.len(), 3);
    assert!(out.extra_files.iter().all(|(_, csv)| csv.starts_with(RUN_CSV_HEADER)));
}

#[test]
fn family_document_round_trips_bit_exactly() {
    let spec = TaskFamilySpec::nonconvex(4.0, 2.0, 1.0, 3, 2, 17);
    let tasks = sample_task_family(&spec, 5).unwrap();
    let doc = TaskFamilyDocument::new(spec, tasks.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("family.json");
    doc.save(&path).unwrap();
    let back = TaskFamilyDocument::load(&path).unwrap();
    assert_eq!(back.tasks, tasks);
    assert_eq!(content_hash(&back.tasks).unwrap(), content_hash(&tasks).unwrap());
}

#[test]
fn sampling_is_seed_deterministic() {
    let spec = TaskFamilySpec::strongly_convex(1.0, 2.0, 3, 3, 99);
    let a = content_hash(&sample_task_family(&spec, 8).unwrap()).unwrap();
    let b = content_hash(&sample_task_family(&spec, 8).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = TaskFamilySpec::strongly_convex(1.0, 2.0, 3, 3, 100);
    assert_ne!(a, content_hash(&sample_task_family(&other, 8).unwrap()).unwrap());
}

#[test]
fn manifest_records_resolved_config_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(SMALL_SWEEP).unwrap();
    cfg.output_dir = dir.path().join("run");
    run_experiment(&cfg).unwrap();
    let manifest = Manifest::load(&cfg.output_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.experiment, ExperimentKind::ConvergenceSweep);
    assert!(manifest.config.inner_rule.is_some());
    assert!(manifest.pool_hash.is_some());
    assert!(manifest.files.contains(&"runs/N2.csv".to_string()));
    let text = std::fs::read_to_string(cfg.output_dir.join("manifest.json")).unwrap();
    assert!(!text.contains("timestamp") && !text.contains("created"));

    let report = replay(&cfg.output_dir.join("manifest.json"), &dir.path().join("again")).unwrap();
    assert!(report.identical(), "{:?}", report.mismatched);

    std::fs::write(cfg.output_dir.join("results.csv"), "tampered\n").unwrap();
    let report = replay(&cfg.output_dir.join("manifest.json"), &dir.path().join("third")).unwrap();
    assert_eq!(report.mismatched, vec!["results.csv".to_string()]);
}
