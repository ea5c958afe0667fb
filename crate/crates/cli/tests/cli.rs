//! End-to-end behaviour of the `micfuse` binary: exit codes, output shapes,
//! config precedence.

use std::path::Path;
use std::process::{Command, Output};

use micfuse::io::{load_features, load_gmm, write_wav};
use micfuse::AudioBuffer;

const MANIFEST: &str = "\
5 3 1,1,1 0.3,0.9,2.7 2 1.0 feature
6 3 1,1,1 2.7,0.3,0.9 3 1.0 feature
";

fn micfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micfuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn micfuse")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = micfuse(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    micfuse(dir, args).status.code().unwrap()
}

/// Two scenes, a trained GMM and autoencoder.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("m.txt"), MANIFEST).unwrap();
    ok(dir, &["simulate", "m.txt", "--train", "3", "--out", "sc"]);
    ok(dir, &["train-gmm", "sc/train", "--mixtures", "4", "--out", "g.cgm"]);
    ok(dir, &["train-ae", "sc/train", "--hidden", "8", "--epochs", "2", "--out", "a.cae"]);
    tmp
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert_eq!(code(dir.path(), &["--version"]), 0);
    assert_eq!(code(dir.path(), &["evaluate", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = workspace();
    let dir = tmp.path();
    assert_eq!(code(dir, &[]), 1);
    assert_eq!(code(dir, &["frobnicate"]), 1);
    assert_eq!(code(dir, &["select", "sc"]), 1, "ml selection without a GMM");
    assert_eq!(code(dir, &["weight", "sc", "--gmm", "g.cgm"]), 1, "missing --out");
    assert_eq!(code(dir, &["weight", "sc", "--gmm", "g.cgm", "--kind", "median", "--out", "f"]), 1);
    assert_eq!(code(dir, &["evaluate", "sc", "--methods", "ch_best,nope", "--out", "r.csv"]), 1);
    assert_eq!(code(dir, &["--threads", "0", "report", "r.csv"]), 1);
    std::fs::write(dir.join("bad.cfg"), "mixtures = 4\ncolour = blue\n").unwrap();
    assert_eq!(code(dir, &["--config", "bad.cfg", "train-gmm", "sc/train", "--out", "x.cgm"]), 1);
    std::fs::write(dir.join("bad2.cfg"), "mixtures = many\n").unwrap();
    assert_eq!(code(dir, &["--config", "bad2.cfg", "train-gmm", "sc/train", "--out", "x.cgm"]), 1);
}

#[test]
fn data_errors_exit_two() {
    let tmp = workspace();
    let dir = tmp.path();
    assert_eq!(code(dir, &["report", "missing.csv"]), 2);
    assert_eq!(code(dir, &["select", "nowhere", "--method", "oracle"]), 2);
    std::fs::write(dir.join("junk.cgm"), b"CGM1 but not really").unwrap();
    assert_eq!(code(dir, &["select", "sc", "--gmm", "junk.cgm"]), 2);
    std::fs::write(dir.join("bad.txt"), "1 3 1 0.1\n").unwrap();
    assert_eq!(code(dir, &["simulate", "bad.txt", "--out", "x"]), 2);
    let stereo = micfuse::io::WAV_SAMPLE_RATE;
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: stereo,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(dir.join("st.wav"), spec).unwrap();
    for _ in 0..800 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(code(dir, &["features", "st.wav", "--out", "st.cfb"]), 2);
    std::fs::write(dir.join("r.csv"), "not,a,report\n").unwrap();
    assert_eq!(code(dir, &["report", "r.csv"]), 2);
}

#[test]
fn features_writes_forty_dimensional_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let samples = (0..16_000).map(|i| (i as f64 * 0.07).sin() * 0.2).collect();
    write_wav(&dir.join("tone.wav"), &AudioBuffer::new(samples, 16_000).unwrap()).unwrap();
    ok(dir, &["features", "tone.wav", "--norm", "cmn+cvn", "--out", "tone.cfb"]);
    let f = load_features(&dir.join("tone.cfb")).unwrap();
    assert_eq!(f.dim(), 40);
    assert_eq!(f.state(), micfuse::NormState::CmnCvn);
    ok(dir, &["features", "tone.wav", "tone.wav", "--out", "many"]);
    assert!(dir.join("many/tone.cfb").is_file());
}

#[test]
fn select_prints_one_line_per_scene() {
    let tmp = workspace();
    let dir = tmp.path();
    for (method, extra) in [("ml", ["--gmm", "g.cgm"]), ("ae", ["--ae", "a.cae"]), ("oracle", ["--gmm", "g.cgm"])] {
        let mut args = vec!["select", "sc", "--method", method];
        args.extend(extra);
        let text = ok(dir, &args);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for (line, id) in lines.iter().zip(["scene0000", "scene0001"]) {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields[0], id);
            assert_eq!(fields.len(), 3 + 3, "{line}");
            let chosen: usize = fields[2].parse().unwrap();
            assert!((1..=3).contains(&chosen));
            assert!(fields[3..].iter().all(|s| s.parse::<f64>().is_ok()));
        }
    }
    let oracle = ok(dir, &["select", "sc", "--method", "oracle"]);
    let picks: Vec<&str> = oracle.lines().map(|l| l.split('\t').nth(2).unwrap()).collect();
    assert_eq!(picks, ["1", "2"]);
}

#[test]
fn weight_writes_fused_features_and_simplex_softmax() {
    let tmp = workspace();
    let dir = tmp.path();
    let text = ok(dir, &["weight", "sc", "--kind", "softmax", "--gmm", "g.cgm", "--out", "fused"]);
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields[1], "softmax");
        let w: Vec<f64> = fields[2..5].iter().map(|s| s.parse().unwrap()).collect();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(fields[5].parse::<f64>().unwrap().is_finite());
        let fused = load_features(&dir.join(format!("fused/{}.cfb", fields[0]))).unwrap();
        assert_eq!(fused.dim(), 40);
        assert_eq!(fused.frames(), 100);
    }
    ok(dir, &["weight", "sc", "--kind", "raw_ml", "--gmm", "g.cgm", "--out", "fused_raw"]);
    ok(dir, &["weight", "sc", "--kind", "jacobian", "--beta", "0.5", "--gmm", "g.cgm", "--out", "fused_jac"]);
}

#[test]
fn report_rerenders_the_evaluate_table() {
    let tmp = workspace();
    let dir = tmp.path();
    let shown = ok(dir, &["evaluate", "sc", "--gmm", "g.cgm", "--ae", "a.cae", "--out", "r.csv"]);
    assert!(shown.starts_with("# proxy metrics"));
    assert_eq!(ok(dir, &["report", "r.csv"]), shown);
    ok(dir, &["report", "r.csv", "--out", "table.txt"]);
    assert_eq!(std::fs::read_to_string(dir.join("table.txt")).unwrap(), shown);
    let csv = std::fs::read_to_string(dir.join("r.csv")).unwrap();
    // header, 2 scenes x 7 methods, 7 aggregate rows
    assert_eq!(csv.lines().count(), 1 + 14 + 7);
}

#[test]
fn evaluate_subset_needs_no_models() {
    let tmp = workspace();
    let dir = tmp.path();
    ok(dir, &["evaluate", "sc", "--methods", "ch_best,oracle", "--out", "r.csv"]);
    let csv = std::fs::read_to_string(dir.join("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 2);
}

#[test]
fn command_line_beats_config_file() {
    let tmp = workspace();
    let dir = tmp.path();
    std::fs::write(dir.join("c.cfg"), "# defaults\nmixtures = 2\nseed = 9\n").unwrap();
    ok(dir, &["--config", "c.cfg", "train-gmm", "sc/train", "--out", "two.cgm"]);
    ok(dir, &["--config", "c.cfg", "train-gmm", "sc/train", "--mixtures", "3", "--out", "three.cgm"]);
    assert_eq!(load_gmm(&dir.join("two.cgm")).unwrap().mixtures(), 2);
    assert_eq!(load_gmm(&dir.join("three.cgm")).unwrap().mixtures(), 3);
}

#[test]
fn seed_changes_simulated_training_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("m.txt"), MANIFEST).unwrap();
    ok(dir, &["--seed", "1", "simulate", "m.txt", "--train", "1", "--out", "a"]);
    ok(dir, &["--seed", "2", "simulate", "m.txt", "--train", "1", "--out", "b"]);
    let read = |p: &str| std::fs::read(dir.join(p)).unwrap();
    assert_ne!(read("a/train/clean0000.cfb"), read("b/train/clean0000.cfb"));
}
