mod common;

use std::fs;

use common::*;
use ensemble_var::detection::{design_fir_bandpass, DetectionConfig, RefPolicy};
use ensemble_var::estimation::{fit_var, FitOptions};
use ensemble_var::experiment::{run_experiment, ExperimentConfig, RunReport};
use ensemble_var::io;
use ensemble_var::order_selection::{select_order, CriterionConfig};
use ensemble_var::panel::{panel_stats, PeriEventWindow, RefSource, ReferencePointList, TimeSeries};
use ensemble_var::Error;

#[test]
fn panel_binary_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let panel = normal_panel(7, 9, 3, 1).with_provenance(vec![10, 20, 30, 40, 50, 60, 70], 2);
    let path = dir.path().join("sub/panel.json");
    io::write_panel(&path, &panel).unwrap();
    assert_eq!(fs::metadata(dir.path().join("sub/panel.bin")).unwrap().len(), 7 * 9 * 3 * 8);
    assert_eq!(io::read_panel(&path).unwrap(), panel);
}

#[test]
fn panel_csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let panel = normal_panel(4, 6, 2, 2);
    let path = dir.path().join("panel.csv");
    io::write_panel_csv(&path, &panel).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("trial,time,ch0,ch1\n"));
    let back = io::read_panel_csv(&path, 1000.0, None).unwrap();
    assert_eq!(back.data(), panel.data());
    assert_eq!((back.n_trials(), back.n_times(), back.channels()), (4, 6, 2));
}

#[test]
fn series_and_refs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 1e3 + 1e-9).collect();
    let series = TimeSeries::new(data, 2, 512.0, vec!["a".into(), "b".into()]).unwrap();
    let p = dir.path().join("s.json");
    io::write_series(&p, &series, serde_json::json!({"seed": 3})).unwrap();
    assert_eq!(io::read_series(&p, None).unwrap(), series);
    let c = dir.path().join("s.csv");
    io::write_series(&c, &series, serde_json::Value::Null).unwrap();
    assert_eq!(io::read_series(&c, Some(512.0)).unwrap(), series);

    let refs = ReferencePointList::new(vec![3, 8, 15], RefSource::Channel(1)).unwrap();
    let r = dir.path().join("refs.csv");
    io::write_refs_csv(&r, &refs, 512.0).unwrap();
    assert_eq!(fs::read_to_string(&r).unwrap().lines().next(), Some("sample_index,time_s"));
    assert_eq!(io::read_refs_csv(&r, RefSource::Channel(1)).unwrap(), refs);
}

#[test]
fn model_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let panel = normal_panel(30, 10, 2, 3);
    let (model, summary) = fit_var(&panel, 3, 3..10, FitOptions::default()).unwrap();
    let p = dir.path().join("model.json");
    io::write_model(&p, &model).unwrap();
    let back = io::read_model(&p).unwrap();
    assert_eq!(back.coefficients, model.coefficients);
    assert_eq!(back.innovation_means, model.innovation_means);
    assert_eq!(back.innovation_covariances, model.innovation_covariances);
    assert_eq!(back.eval_range, 3..10);

    let f = dir.path().join("fit.csv");
    io::write_fit_summary_csv(&f, &summary).unwrap();
    let text = fs::read_to_string(&f).unwrap();
    assert_eq!(text.lines().count(), 1 + 7);
    assert!(text.starts_with("t,log_det_sigma,log_det_sigma_xp\n3,"));
}

#[test]
fn curve_stats_and_filter_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let panel = normal_panel(60, 12, 2, 4);
    let curve = select_order(&panel, &CriterionConfig { p_max: 4, ..CriterionConfig::default() }).unwrap();
    let c = dir.path().join("bic.csv");
    io::write_bic_curve_csv(&c, &curve).unwrap();
    let text = fs::read_to_string(&c).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "p,loglik,penalty_approx,score_approx,score_full,score_aic,selected_approx,selected_full,selected"
    );
    assert_eq!(lines.count(), 4);

    let s = dir.path().join("stats.csv");
    io::write_panel_stats_csv(&s, &panel_stats(&panel), &panel).unwrap();
    let text = fs::read_to_string(&s).unwrap();
    assert!(text.starts_with("t,offset,mean_ch0,mean_ch1,var_ch0,var_ch1\n0,-6,"));

    let f = dir.path().join("filter.csv");
    io::write_filter_csv(&f, &design_fir_bandpass(49, 50.0, 70.0, 1000.0).unwrap()).unwrap();
    assert_eq!(fs::read_to_string(&f).unwrap().lines().count(), 51);
}

#[test]
fn bad_sidecar_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    fs::write(&p, "{\"format\": \"something-else\"}").unwrap();
    assert!(matches!(io::read_panel(&p), Err(Error::Format { .. })));
}

fn small_experiment(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.schedule.n_events = 150;
    cfg.scenario.seed = 12;
    cfg.criterion.p_max = 6;
    cfg.output_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn experiment_writes_traceable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_experiment(dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.branches.len(), 3);
    assert_eq!(report.n_events, 150);
    for b in &report.branches {
        for f in &b.files {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let json: ensemble_var::order_selection::BicCurve =
            io::read_json(&dir.path().join(format!("bic_{}.json", b.alignment))).unwrap();
        assert_eq!(json, b.curve);
    }
    assert!(report.branch("ground_truth").unwrap().detection.is_none());
    assert_eq!(report.branch("cause").unwrap().detection.as_ref().unwrap().channel, 1);
    assert_eq!(report.branch("effect").unwrap().detection.as_ref().unwrap().channel, 0);
    let stored: RunReport = io::read_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(stored, report);

    // replay from the echoed config alone
    let first = fs::read(dir.path().join("series.bin")).unwrap();
    let replay = run_experiment(&stored.config).unwrap();
    assert_eq!(replay, report);
    assert_eq!(fs::read(dir.path().join("series.bin")).unwrap(), first);
}

#[test]
fn experiment_in_memory_touches_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_experiment(dir.path());
    cfg.output_dir = None;
    let report = run_experiment(&cfg).unwrap();
    assert!(report.branches.iter().all(|b| b.files.is_empty()));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn experiment_failure_names_stage_and_completed_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_experiment(dir.path());
    // an order range too large for the panel fails at selection
    cfg.criterion.p_max = 200;
    cfg.cause_detection.ref_policy = RefPolicy::SegmentOnset;
    let err = run_experiment(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, completed, .. } => {
            assert_eq!(stage, "align/select");
            assert!(completed.iter().any(|p| p.ends_with("series.json")));
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.kind(), ensemble_var::ErrorKind::Config);

    let mut cfg = small_experiment(dir.path());
    cfg.effect_detection = DetectionConfig {
        band_hi: 600.0,
        ..DetectionConfig::default()
    };
    match run_experiment(&cfg).unwrap_err() {
        Error::Stage { stage, completed, .. } => {
            assert_eq!(stage, "config");
            assert!(completed.is_empty());
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn experiment_config_json_uses_defaults_for_missing_fields() {
    let cfg: ExperimentConfig = serde_json::from_str(r#"{"scenario": {"seed": 4}, "window": {"start_offset": -50, "end_offset": 50}}"#).unwrap();
    assert_eq!(cfg.scenario.seed, 4);
    assert_eq!(cfg.scenario.schedule.n_events, 5000);
    assert_eq!(cfg.window, PeriEventWindow::new(-50, 50).unwrap());
    assert_eq!(cfg.cause_detection.channel, 1);
    assert_eq!(cfg.effect_detection.channel, 0);
}
