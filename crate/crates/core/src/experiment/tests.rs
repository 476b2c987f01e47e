use super::*;
use crate::flow::NetConfig;

fn tiny_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig::Synthetic(SyntheticSpec {
            family: GraphonFamily::TwoBlock {
                p_in: 0.8,
                p_out: 0.1,
                split: 0.5,
            },
            n_graphs: 24,
            n_nodes: 8,
            resolution: 8,
        }),
        rate: 0.3,
        prior: PriorConfig {
            kind: PriorKind::Graphon,
            graphon_resolution: 4,
            ..Default::default()
        },
        flow: FlowConfig {
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            net: NetConfig {
                hidden_dim: 6,
                num_layers: 2,
                c_hid: 3,
                c_final: 2,
                head_dim: 4,
                time_dim: 8,
                final_hidden: 8,
                dropout: 0.0,
                ..Default::default()
            },
            ..Default::default()
        },
        seed,
        samples_per_graph: 2,
        split: Some(SplitCounts {
            train: 16,
            val: 2,
            test: 6,
        }),
        ..Default::default()
    }
}

#[test]
fn config_json_defaults_and_round_trip() {
    let cfg = ExperimentConfig::from_json("{}").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.threshold, 0.5);
    let text = serde_json::to_string(&tiny_config(3)).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), tiny_config(3));

    let tu: ExperimentConfig =
        ExperimentConfig::from_json(r#"{"dataset": {"source": "tu", "path": "/data/ENZYMES"}, "prior": {"kind": "sage"}}"#)
            .unwrap();
    assert_eq!(tu.prior.kind, PriorKind::Sage);
    assert!(matches!(tu.dataset, DatasetConfig::Tu { .. }));
    assert!(ExperimentConfig::from_json(r#"{"task": "nonsense"}"#).is_err());
}

#[test]
fn gaussian_baseline_forces_unit_noise() {
    let mut cfg = tiny_config(0);
    cfg.prior.kind = PriorKind::Gaussian;
    let r = cfg.resolved();
    assert_eq!(r.flow.sigma_s_train, 1.0);
    assert_eq!(r.flow.sigma_s_sample, 1.0);
    cfg.prior.kind = PriorKind::Graphon;
    assert_eq!(cfg.resolved(), cfg);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny_config(0);
    cfg.rate = 1.5;
    assert!(matches!(run_experiment(&cfg, None), Err(PifmError::Config(_))));
    let mut cfg = tiny_config(0);
    cfg.samples_per_graph = 0;
    assert!(run_experiment(&cfg, None).is_err());
}

#[test]
fn composite_takes_observed_entries_and_thresholds_hidden_ones() {
    let a_obs = AdjacencyState::from_edges(3, &[(0, 1)]).unwrap();
    let xi = ObservationMask::from_hidden_pairs(3, &[(0, 2), (1, 2)]).unwrap();
    let mut m = Matrix::zeros(3, 3);
    for (i, j, v) in [(0, 1, 0.1), (0, 2, 0.7), (1, 2, 0.2)] {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    let pred = AdjacencyState::from_matrix(m).unwrap();
    let c = composite_graph(&pred, &a_obs, &xi, 0.5).unwrap();
    assert_eq!(c.edges(), vec![(0, 1), (0, 2)]);
}

#[test]
fn experiment_is_reproducible_byte_for_byte() {
    let cfg = tiny_config(5);
    let a = run_experiment(&cfg, None).unwrap();
    let b = run_experiment(&cfg, None).unwrap();
    assert_eq!(a.to_report().metrics_json().unwrap(), b.to_report().metrics_json().unwrap());
    assert_eq!(a.per_graph.len(), 6);
    assert_eq!(a.flow_metrics.graphs, 12);
    assert!(a.flow_metrics.mmd2.is_some());
    let c = run_experiment(&tiny_config(6), None).unwrap();
    assert_ne!(a.to_report().metrics_json().unwrap(), c.to_report().metrics_json().unwrap());
}

#[test]
fn gaussian_baseline_runs() {
    let mut cfg = tiny_config(1);
    cfg.prior.kind = PriorKind::Gaussian;
    let r = run_experiment(&cfg, None).unwrap();
    assert_eq!(r.provenance.config["flow"]["sigma_s_train"], 1.0);
    for rec in &r.reconstructions {
        for (i, j) in rec.xi.hidden_pairs() {
            assert_eq!(rec.prior_probs.get(i, j), 0.5);
        }
    }
}

#[test]
fn stage_failures_name_the_stage_and_keep_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(0);
    cfg.dataset = DatasetConfig::Tu {
        path: dir.path().join("missing"),
    };
    match run_experiment(&cfg, None).unwrap_err() {
        PifmError::Stage { stage, .. } => assert_eq!(stage, "ingest"),
        e => panic!("unexpected {e}"),
    }

    let mut cfg = tiny_config(0);
    cfg.split = Some(SplitCounts {
        train: 20,
        val: 2,
        test: 6,
    });
    let out = dir.path().join("run");
    match run_experiment(&cfg, Some(&out)).unwrap_err() {
        PifmError::Stage { stage, .. } => assert_eq!(stage, "split"),
        e => panic!("unexpected {e}"),
    }
    assert!(out.join("dataset/DATA_A.txt").exists());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"][0]["stage"], "ingest");
    assert_eq!(manifest["provenance"]["seed"], 0);
}

#[test]
fn artifacts_embed_provenance_and_checkpoints_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(2);
    let first = run_experiment(&cfg, Some(dir.path())).unwrap();
    for f in ["prior.ckpt", "flow.ckpt", "training.csv", "split.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("training.csv")).unwrap();
    assert!(csv.starts_with("# pifm") && csv.contains("seed=2") && csv.contains("\"samples_per_graph\":2"));
    let pred = fs::read_dir(dir.path().join("predictions")).unwrap().count();
    assert_eq!(pred, 12);

    let pipe = Pipeline::new(&cfg, Some(dir.path())).unwrap().reuse_checkpoints(true);
    let again = run_pipeline(pipe).unwrap();
    assert_eq!(again.flow_metrics, first.flow_metrics);
    assert!(again.training.is_empty());
}

#[test]
fn single_k_sweep_matches_the_experiment() {
    let cfg = tiny_config(4);
    let exp = run_experiment(&cfg, None).unwrap();
    let sweep = SweepSpec {
        ks: vec![cfg.flow.k],
        sigmas: vec![],
        samples_per_graph: cfg.samples_per_graph,
    };
    let s = run_sweep(&cfg, &sweep, None).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.rows[0].metrics, exp.flow_metrics);
    assert_eq!(s.prior_metrics, exp.prior_metrics);
    let report = s.to_report();
    let names: Vec<&str> = report.tables.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["sweep", "auc_vs_k", "mmd2_vs_k"]);
    assert!(run_sweep(&cfg, &SweepSpec { ks: vec![], ..sweep }, None).is_err());
}

#[test]
fn checks_compare_flow_with_prior() {
    let prior = MetricsReport {
        auc: 60.0,
        ..Default::default()
    };
    let flow = MetricsReport {
        auc: 63.0,
        mse: 0.1,
        ..Default::default()
    };
    assert!(Check::BeatsPrior { margin: 2.0 }.evaluate(&prior, &flow).passed);
    assert!(!Check::BeatsPrior { margin: 4.0 }.evaluate(&prior, &flow).passed);
    assert!(Check::MinAuc { value: 63.0 }.evaluate(&prior, &flow).passed);
    assert!(!Check::MaxMse { value: 0.05 }.evaluate(&prior, &flow).passed);
}

fn provenance() -> Provenance {
    Provenance::new(&tiny_config(0), 0).unwrap()
}

#[test]
fn empty_report_has_zero_rows_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = emit_report(&Report::empty(provenance()), dir.path().join("r"), EmitOptions::default()).unwrap();
    assert!(out.ok);
    let summary = fs::read_to_string(dir.path().join("r/summary.txt")).unwrap();
    assert!(summary.contains("0 metric rows"), "{summary}");
}

#[test]
fn nan_metrics_are_flagged_and_fail_in_strict_mode() {
    let mut report = Report::empty(provenance());
    report.metrics.push((
        "pifm".into(),
        MetricsReport {
            auc: f64::NAN,
            ..Default::default()
        },
    ));
    let dir = tempfile::tempdir().unwrap();
    let lax = emit_report(&report, dir.path().join("a"), EmitOptions::default()).unwrap();
    assert!(lax.ok);
    assert_eq!(lax.flagged, vec!["pifm.auc".to_string()]);
    let strict = emit_report(
        &report,
        dir.path().join("b"),
        EmitOptions {
            strict: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!strict.ok);
    assert!(fs::read_to_string(dir.path().join("b/summary.txt")).unwrap().contains("FLAGGED"));
}

#[test]
fn failed_checks_make_the_outcome_fail() {
    let mut report = Report::empty(provenance());
    report.checks.push(CheckOutcome {
        name: "min_auc(90)".into(),
        passed: false,
        detail: String::new(),
    });
    let dir = tempfile::tempdir().unwrap();
    let out = emit_report(&report, dir.path(), EmitOptions::default()).unwrap();
    assert!(!out.ok);
    assert_eq!(out.failed_checks, vec!["min_auc(90)".to_string()]);
}

#[test]
fn re_emission_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let report = Report::empty(provenance());
    emit_report(&report, dir.path(), EmitOptions::default()).unwrap();
    let err = emit_report(&report, dir.path(), EmitOptions::default()).unwrap_err();
    assert!(err.to_string().contains("--force"), "{err}");
    let forced = EmitOptions {
        force: true,
        ..Default::default()
    };
    assert!(emit_report(&report, dir.path(), forced).is_ok());
}

#[test]
fn toy_rejects_degenerate_settings() {
    let cfg = ToyConfig {
        p_both: 1.0,
        ..Default::default()
    };
    assert!(matches!(run_toy(&cfg), Err(PifmError::Config(_))));
}

#[test]
fn toy_baseline_oracle_is_the_bernoulli_product() {
    let cfg = ToyConfig {
        instances: 10,
        samples: 20,
        flow: FlowConfig {
            epochs: 1,
            k: 2,
            ..ToyConfig::default().flow
        },
        ..Default::default()
    };
    let r = run_toy(&cfg).unwrap();
    let [p0, p1] = r.prior_probs;
    assert!((r.prior_invalid_expected - (p0 * (1.0 - p1) + (1.0 - p0) * p1)).abs() < 1e-15);
    // Balanced head on identical instances recovers the mode frequency.
    assert!((p0 - 0.6).abs() < 0.05 && (p1 - 0.6).abs() < 0.05, "{p0} {p1}");
    assert_eq!(r.flow_modes.iter().sum::<usize>(), 20);
    assert_eq!(r.prior_modes.iter().sum::<usize>(), 20);
}
