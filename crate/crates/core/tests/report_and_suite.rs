//! Report rendering against a golden file, and suite-level invariants of the
//! evaluation harness on seeded scenes.

use std::path::Path;

use micfuse::harness::{parse_report_csv, render_csv, render_report, render_text};
use micfuse::scene::reference_model;
use micfuse::{
    cmvn, make_scene, run_experiment, synth_clean, train_gmm, CleanKind, EmConfig, ExperimentConfig, FeatureMatrix,
    Method, MethodSummary, MetricReport, MetricRow, Models, NormState, Scene, SceneSpec,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixed_report() -> MetricReport {
    let row = |scene: &str, method, chosen: Option<usize>, distance: f64, loglik: f64, weights: Vec<f64>| MetricRow {
        scene: scene.to_string(),
        method,
        chosen,
        accuracy: chosen.map(|c| if c == 1 { 1.0 } else { 0.0 }),
        distance,
        loglik,
        weights,
        status: "ok".to_string(),
    };
    MetricReport {
        rows: vec![
            row("a", Method::SelectMl, Some(1), 0.123456789, -61.25, vec![1.0, 0.0, 0.0]),
            row("a", Method::WeightJacobian, None, 0.1, -58.0, vec![0.7, 0.2, 0.1]),
            row("b", Method::SelectMl, Some(3), 1.0 / 3.0, -70.5, vec![0.0, 0.0, 1.0]),
            row("b", Method::WeightJacobian, None, 0.25, -66.125, vec![0.25, 0.25, 0.5]),
        ],
        summary: vec![
            MethodSummary {
                method: Method::SelectMl,
                scenes: 2,
                failures: 0,
                accuracy: Some(0.5),
                distance: (0.123456789 + 1.0 / 3.0) / 2.0,
                loglik: -65.875,
                weights: vec![0.5, 0.0, 0.5],
            },
            MethodSummary {
                method: Method::WeightJacobian,
                scenes: 2,
                failures: 0,
                accuracy: None,
                distance: 0.175,
                loglik: -62.0625,
                weights: vec![0.475, 0.225, 0.3],
            },
        ],
        eval_norm: NormState::Cmn,
    }
}

#[test]
fn text_table_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.txt");
    let text = render_text(&fixed_report());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(&golden).unwrap());
}

#[test]
fn render_report_writes_csv_that_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let report = fixed_report();
    let text = render_report(&report, &path).unwrap();
    assert_eq!(text, render_text(&report));
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv, render_csv(&report).unwrap());
    assert_eq!(parse_report_csv(&csv).unwrap(), report);
}

#[test]
fn render_report_fails_on_unwritable_path() {
    let dir = tempfile::tempdir().unwrap();
    assert!(render_report(&fixed_report(), &dir.path().join("missing/r.csv")).is_err());
}

/// A smaller version of the acceptance suite: noise ladder 0.5·2.2^k over
/// five channels, channel 2 ten times noisier than the worst of them.
fn suite(n: u64, kind: &CleanKind) -> Vec<Scene> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let mut ladder: Vec<f64> = (0..5).map(|k| 0.5 * 2.2f64.powi(k)).collect();
            ladder.shuffle(&mut rng);
            let mut noise = vec![ladder[0], 0.5 * 2.2f64.powi(4)];
            noise.extend_from_slice(&ladder[1..]);
            let spec = SceneSpec {
                gains: (0..6).map(|_| rng.random_range(0.8..1.25)).collect(),
                noise,
                degraded: Some(2),
                seed: i,
                length_secs: 2.0,
                ..SceneSpec::default()
            };
            let clean = synth_clean(i + 1, 2.0, kind).unwrap();
            let (utt, meta) = make_scene(&clean, &spec).unwrap();
            Scene {
                id: format!("s{i:03}"),
                utt,
                meta,
            }
        })
        .collect()
}

#[test]
fn suite_invariants_hold() {
    let kind = CleanKind::GmmSamples {
        model: reference_model(2015, 40, 8).unwrap(),
        switch_prob: 0.1,
    };
    let corpus: Vec<FeatureMatrix> = (0..12)
        .map(|i| match synth_clean(20_000 + i, 3.0, &kind).unwrap() {
            micfuse::CleanInput::Features(f) => cmvn(&f),
            micfuse::CleanInput::Audio(_) => unreachable!(),
        })
        .collect();
    let refs: Vec<&FeatureMatrix> = corpus.iter().collect();
    let (gmm, _) = train_gmm(&refs, 16, &EmConfig::default()).unwrap();
    let scenes = suite(40, &kind);
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| *m != Method::SelectAe).collect();
    let cfg = ExperimentConfig {
        methods,
        threads: 4,
        ..Default::default()
    };
    let report = run_experiment(&scenes, &Models { gmm: Some(gmm), ae: None }, &cfg).unwrap();
    assert!(report.rows.iter().all(|r| !r.failed()));

    for scene in &scenes {
        let best = report
            .rows
            .iter()
            .find(|r| r.scene == scene.id && r.method == Method::ChBest)
            .unwrap()
            .distance;
        for r in report.rows.iter().filter(|r| r.scene == scene.id && r.method.is_selection()) {
            assert!(best <= r.distance, "{}: ch_best {best} > {} {}", scene.id, r.method.name(), r.distance);
        }
    }
    let dist = |m| report.summary_for(m).unwrap().distance;
    assert!(dist(Method::WeightJacobian) <= dist(Method::WeightRaw));
    for s in &report.summary {
        assert!(s.distance >= 0.0);
        if let Some(a) = s.accuracy {
            assert!((0.0..=1.0).contains(&a));
        }
    }
}
