//! Batch evaluation of selection and weighting methods on synthetic scenes.
//!
//! Channels enter every method CMN+CVN normalized, and the clean reference is
//! CMN+CVN normalized too. Method outputs, a chosen channel or a fused
//! feature stream, get utterance-wise CMN by default, as a recognizer front
//! end would apply, so a fused stream whose variance has shrunk is scored as
//! such. Setting [`ExperimentConfig::eval_norm`] to CMN+CVN scores shape only.
//!
//! Two proxy metrics stand in for recognition accuracy:
//!
//! * distance: Frobenius distance to the clean reference over `sqrt(T·D)`;
//! * loglik: mean per-frame log-likelihood under the clean GMM.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autoencoder::AutoencoderModel;
use crate::error::{Error, Result};
use crate::features::{cmn, cmvn, normalize, FeatureMatrix, NormState};
use crate::gmm::GmmModel;
use crate::io::read_scene;
use crate::optim::LbfgsConfig;
use crate::scene::SceneMeta;
use crate::select::{select_ae, select_ml, MultichannelUtterance};
use crate::weight::{apply_weights, estimate_weights_jacobian, estimate_weights_ml, softmax_constrain, JacobianConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// The channel closest to the clean reference.
    ChBest,
    SelectMl,
    SelectAe,
    WeightRaw,
    WeightSoftmax,
    WeightJacobian,
    /// The channel with the highest true SNR.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ChBest,
        Method::SelectMl,
        Method::SelectAe,
        Method::WeightRaw,
        Method::WeightSoftmax,
        Method::WeightJacobian,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ChBest => "ch_best",
            Method::SelectMl => "select_ml",
            Method::SelectAe => "select_ae",
            Method::WeightRaw => "weight_raw",
            Method::WeightSoftmax => "weight_softmax",
            Method::WeightJacobian => "weight_jacobian",
            Method::Oracle => "oracle",
        }
    }

    /// Whether the method picks a single channel.
    pub fn is_selection(self) -> bool {
        matches!(self, Method::ChBest | Method::SelectMl | Method::SelectAe | Method::Oracle)
    }

    fn needs_gmm(self) -> bool {
        matches!(self, Method::SelectMl | Method::WeightRaw | Method::WeightSoftmax | Method::WeightJacobian)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Parse a comma-separated method list; `all` selects every method.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out: Vec<Method> = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let m = name.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("no methods given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Models {
    pub gmm: Option<GmmModel>,
    pub ae: Option<AutoencoderModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub utt: MultichannelUtterance,
    pub meta: SceneMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Worker threads; results do not depend on this.
    pub threads: usize,
    pub weighting: JacobianConfig,
    pub lbfgs: LbfgsConfig,
    /// Normalization applied to every method output before scoring.
    pub eval_norm: NormState,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            threads: 1,
            weighting: JacobianConfig::default(),
            lbfgs: LbfgsConfig::default(),
            eval_norm: NormState::Cmn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scene: String,
    pub method: Method,
    /// 1-based channel id for selection methods.
    pub chosen: Option<usize>,
    /// 1 when a selection method matches the SNR oracle, else 0.
    pub accuracy: Option<f64>,
    pub distance: f64,
    pub loglik: f64,
    pub weights: Vec<f64>,
    /// `ok`, `warning: ...`, or `error: ...`.
    pub status: String,
}

impl MetricRow {
    pub fn failed(&self) -> bool {
        self.status.starts_with("error")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub scenes: usize,
    pub failures: usize,
    pub accuracy: Option<f64>,
    pub distance: f64,
    pub loglik: f64,
    /// Mean weight vector, empty when channel counts differ across scenes.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<MethodSummary>,
    /// Normalization applied to method outputs before scoring.
    pub eval_norm: NormState,
}

impl MetricReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// `||a - b||_F / sqrt(T·D)`.
pub fn feature_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.frames() != b.frames() || a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.frames() * a.dim(),
            got: b.frames() * b.dim(),
        });
    }
    let sum: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.as_slice().len() as f64).sqrt())
}

/// Everything needed to score one scene, computed once.
struct Prepared<'a> {
    scene: &'a Scene,
    /// CMN+CVN channels: the input to ML selection and weighting.
    normalized: MultichannelUtterance,
    reference: FeatureMatrix,
    /// Evaluation-domain distance of each channel.
    channel_distance: Vec<f64>,
}

fn one_hot(c: usize, chosen: usize) -> Vec<f64> {
    (1..=c).map(|i| if i == chosen { 1.0 } else { 0.0 }).collect()
}

fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best + 1
}

struct Outcome {
    chosen: Option<usize>,
    weights: Vec<f64>,
    fused: Option<FeatureMatrix>,
    warning: Option<String>,
}

fn run_method(method: Method, p: &Prepared, models: &Models, cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = p.normalized.num_channels();
    let gmm = || models.gmm.as_ref().ok_or_else(|| Error::InvalidConfig("method needs a GMM".into()));
    let select = |chosen: usize| Outcome {
        chosen: Some(chosen),
        weights: one_hot(c, chosen),
        fused: None,
        warning: None,
    };
    let weigh = |w: Vec<f64>, warning: Option<String>| -> Result<Outcome> {
        Ok(Outcome {
            fused: Some(apply_weights(&p.normalized, &w)?),
            chosen: None,
            weights: w,
            warning,
        })
    };
    match method {
        Method::ChBest => Ok(select(argmin_lowest(&p.channel_distance))),
        Method::Oracle => Ok(select(p.scene.meta.oracle)),
        Method::SelectMl => Ok(select(select_ml(gmm()?, &p.normalized)?.chosen)),
        Method::SelectAe => {
            let ae = models
                .ae
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("method needs an autoencoder".into()))?;
            let centred = p.scene.utt.map_channels(cmn);
            Ok(select(select_ae(ae, &centred)?.chosen))
        }
        Method::WeightRaw | Method::WeightSoftmax => {
            let est = estimate_weights_ml(gmm()?, &p.normalized, &cfg.weighting)?;
            let w = match method {
                Method::WeightSoftmax => softmax_constrain(&est.weights),
                _ => est.weights,
            };
            weigh(w.values, est.warning)
        }
        Method::WeightJacobian => {
            let est = estimate_weights_jacobian(gmm()?, &p.normalized, &cfg.weighting, &cfg.lbfgs)?;
            weigh(est.weights.values, est.warning)
        }
    }
}

fn evaluate_scene(scene: &Scene, models: &Models, cfg: &ExperimentConfig) -> Vec<MetricRow> {
    let error_rows = |msg: String| -> Vec<MetricRow> {
        cfg.methods
            .iter()
            .map(|&method| MetricRow {
                scene: scene.id.clone(),
                method,
                chosen: None,
                accuracy: None,
                distance: f64::NAN,
                loglik: f64::NAN,
                weights: Vec::new(),
                status: format!("error: {msg}"),
            })
            .collect()
    };
    let reference = cmvn(&scene.meta.clean);
    let normalized = scene.utt.map_channels(cmvn);
    let channel_distance = match normalized
        .channels()
        .iter()
        .map(|ch| feature_distance(&normalize(ch, cfg.eval_norm), &reference))
        .collect::<Result<Vec<_>>>()
    {
        Ok(d) => d,
        Err(e) => return error_rows(e.to_string()),
    };
    let p = Prepared {
        scene,
        normalized,
        reference,
        channel_distance,
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = MetricRow {
                scene: scene.id.clone(),
                method,
                chosen: None,
                accuracy: None,
                distance: f64::NAN,
                loglik: f64::NAN,
                weights: Vec::new(),
                status: "ok".to_string(),
            };
            match run_method(method, &p, models, cfg) {
                Ok(out) => {
                    let output = match (&out.fused, out.chosen) {
                        (Some(f), _) => normalize(f, cfg.eval_norm),
                        (None, Some(c)) => normalize(p.normalized.channel(c), cfg.eval_norm),
                        (None, None) => unreachable!("method produced no output"),
                    };
                    row.distance = match out.chosen {
                        Some(c) => p.channel_distance[c - 1],
                        None => feature_distance(&output, &p.reference).unwrap_or(f64::NAN),
                    };
                    if let Some(g) = &models.gmm {
                        row.loglik = g.utterance_score(&output).unwrap_or(f64::NAN);
                    }
                    row.accuracy = out.chosen.map(|c| if c == scene.meta.oracle { 1.0 } else { 0.0 });
                    row.chosen = out.chosen;
                    row.weights = out.weights;
                    if let Some(w) = out.warning {
                        row.status = format!("warning: {w}");
                    }
                }
                Err(e) => {
                    log::warn!("scene {}: {} failed: {e}", scene.id, method.name());
                    row.status = format!("error: {e}");
                }
            }
            row
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize(rows: &[MetricRow], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let all: Vec<&MetricRow> = rows.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&MetricRow> = all.iter().copied().filter(|r| !r.failed()).collect();
            let c = ok.first().map_or(0, |r| r.weights.len());
            let weights = if ok.iter().all(|r| r.weights.len() == c) {
                (0..c).map(|i| mean(ok.iter().map(|r| r.weights[i]))).collect()
            } else {
                Vec::new()
            };
            MethodSummary {
                method,
                scenes: all.len(),
                failures: all.len() - ok.len(),
                accuracy: method.is_selection().then(|| mean(ok.iter().filter_map(|r| r.accuracy))),
                distance: mean(ok.iter().map(|r| r.distance)),
                loglik: mean(ok.iter().map(|r| r.loglik)),
                weights,
            }
        })
        .collect()
}

/// Evaluate every method on every scene. Per-scene failures are recorded in
/// the rows; the report is independent of thread count and completion order.
pub fn run_experiment(scenes: &[Scene], models: &Models, cfg: &ExperimentConfig) -> Result<MetricReport> {
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    if cfg.methods.iter().any(|m| m.needs_gmm()) && models.gmm.is_none() {
        return Err(Error::InvalidConfig("requested methods need a GMM".into()));
    }
    if cfg.methods.contains(&Method::SelectAe) && models.ae.is_none() {
        return Err(Error::InvalidConfig("select_ae needs an autoencoder".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut per_scene: Vec<Vec<MetricRow>> =
        pool.install(|| scenes.par_iter().map(|s| evaluate_scene(s, models, cfg)).collect());
    per_scene.sort_by(|a, b| a[0].scene.cmp(&b[0].scene));
    let rows: Vec<MetricRow> = per_scene.into_iter().flatten().collect();
    let summary = summarize(&rows, &cfg.methods);
    Ok(MetricReport {
        rows,
        summary,
        eval_norm: cfg.eval_norm,
    })
}

/// Load every scene directory (one holding `meta.txt`) under `root`, ordered
/// by directory name.
pub fn load_scene_set(root: &Path) -> Result<Vec<Scene>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.join("meta.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Empty("scene set"));
    }
    dirs.iter()
        .map(|d| {
            let (utt, meta) = read_scene(d)?;
            let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(Scene { id, utt, meta })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 8] = [
    "scene",
    "method",
    "chosen",
    "accuracy",
    "distance_proxy",
    "loglik_proxy",
    "weights",
    "status",
];

/// Scene id used for aggregate CSV rows.
pub const AGGREGATE_ID: &str = "mean";

/// Six significant digits.
fn sig6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5e}")
    } else {
        v.to_string()
    }
}

fn join_weights(w: &[f64], fmt: impl Fn(f64) -> String) -> String {
    w.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";")
}

/// Aligned per-method table with six significant digits.
pub fn render_text(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("# proxy metrics (no ASR): distance = normalized Frobenius distance to the clean reference,\n");
    let _ = writeln!(
        out,
        "# loglik = mean per-frame log-likelihood under the clean GMM; outputs scored after {}",
        report.eval_norm.name()
    );
    let header = ["method", "scenes", "failed", "accuracy", "distance_proxy", "loglik_proxy", "mean_weights"];
    let body: Vec<[String; 7]> = report
        .summary
        .iter()
        .map(|s| {
            [
                s.method.name().to_string(),
                s.scenes.to_string(),
                s.failures.to_string(),
                s.accuracy.map_or("-".to_string(), sig6),
                sig6(s.distance),
                sig6(s.loglik),
                join_weights(&s.weights, sig6),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..7)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 || i == 6 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for r in &body {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// CSV with one row per (scene, method) and one aggregate row per method.
/// Numbers use the shortest representation that parses back exactly.
pub fn render_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let num = |v: f64| v.to_string();
    for r in &report.rows {
        w.write_record([
            r.scene.clone(),
            r.method.name().to_string(),
            r.chosen.map_or(String::new(), |c| c.to_string()),
            r.accuracy.map_or(String::new(), num),
            num(r.distance),
            num(r.loglik),
            join_weights(&r.weights, num),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    for s in &report.summary {
        w.write_record([
            AGGREGATE_ID.to_string(),
            s.method.name().to_string(),
            String::new(),
            s.accuracy.map_or(String::new(), num),
            num(s.distance),
            num(s.loglik),
            join_weights(&s.weights, num),
            format!("scenes={} failures={} eval={}", s.scenes, s.failures, report.eval_norm.name()),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("CSV", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::format("CSV", e.to_string()))
}

/// Print the text table to standard output and write the CSV to `csv_path`.
pub fn render_report(report: &MetricReport, csv_path: &Path) -> Result<String> {
    let text = render_text(report);
    fs::write(csv_path, render_csv(report)?)?;
    print!("{text}");
    Ok(text)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::format("CSV", format!("bad number `{s}`")))
}

fn parse_opt<T: FromStr>(s: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::format("CSV", format!("bad value `{s}`")))
}

fn parse_weights(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(parse_f64).collect()
}

/// Inverse of [`render_csv`].
pub fn parse_report_csv(text: &str) -> Result<MetricReport> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::format("CSV", "unexpected header"));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut eval_norm = None;
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let method: Method = rec[1].parse()?;
        if &rec[0] == AGGREGATE_ID {
            let bad = || Error::format("CSV", "bad aggregate status");
            let (scenes, rest) = rec[7]
                .strip_prefix("scenes=")
                .and_then(|s| s.split_once(" failures="))
                .ok_or_else(bad)?;
            let (failures, norm) = rest.split_once(" eval=").ok_or_else(bad)?;
            let norm: NormState = norm.parse().map_err(|_| bad())?;
            if eval_norm.replace(norm).is_some_and(|n| n != norm) {
                return Err(Error::format("CSV", "mixed evaluation normalizations"));
            }
            let count = |s: &str| s.parse::<usize>().map_err(|_| Error::format("CSV", "bad count"));
            summary.push(MethodSummary {
                method,
                scenes: count(scenes)?,
                failures: count(failures)?,
                accuracy: parse_opt(&rec[3])?,
                distance: parse_f64(&rec[4])?,
                loglik: parse_f64(&rec[5])?,
                weights: parse_weights(&rec[6])?,
            });
        } else {
            rows.push(MetricRow {
                scene: rec[0].to_string(),
                method,
                chosen: parse_opt(&rec[2])?,
                accuracy: parse_opt(&rec[3])?,
                distance: parse_f64(&rec[4])?,
                loglik: parse_f64(&rec[5])?,
                weights: parse_weights(&rec[6])?,
                status: rec[7].to_string(),
            });
        }
    }
    Ok(MetricReport {
        rows,
        summary,
        eval_norm: eval_norm.ok_or_else(|| Error::format("CSV", "no aggregate rows"))?,
    })
}
