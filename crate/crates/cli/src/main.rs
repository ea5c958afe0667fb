//! `micfuse`: feature extraction, model training, scene simulation, channel
//! selection and weighting, and batch evaluation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use micfuse::harness::{parse_methods, parse_report_csv, render_csv, render_text};
use micfuse::io::{
    load_autoencoder, load_features, load_gmm, parse_key_values, read_scene, read_wav, save_autoencoder,
    save_features, save_gmm, write_scene,
};
use micfuse::optim::LbfgsConfig;
use micfuse::scene::{parse_manifest, reference_model, SceneMode};
use micfuse::{
    apply_weights, cmn, cmvn, estimate_weights_jacobian, estimate_weights_ml, log_mel, normalize, run_experiment,
    select_ae, select_ml, select_oracle, softmax_constrain, synth_clean, train_autoencoder, train_gmm, CleanKind,
    EmConfig, ExperimentConfig, FeatureMatrix, JacobianConfig, MelConfig, Models, NormState, Scene, TrainConfig,
    DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN, DEFAULT_MIXTURES,
};

#[derive(Parser, Debug)]
#[command(name = "micfuse", version, about = "Microphone channel selection and weighting for log-Mel features")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file supplying defaults for any option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for batch evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert 16 kHz mono WAV files to CFB1 log-Mel features.
    Features(FeaturesArgs),
    /// Train the clean-speech GMM on CFB1 files.
    TrainGmm(TrainGmmArgs),
    /// Train the clean-speech autoencoder on CFB1 files.
    TrainAe(TrainAeArgs),
    /// Generate scenes from a manifest.
    Simulate(SimulateArgs),
    /// Pick one channel per scene.
    Select(SelectArgs),
    /// Estimate channel weights and write fused features.
    Weight(WeightArgs),
    /// Run every requested method on a scene set and report proxy metrics.
    Evaluate(EvaluateArgs),
    /// Re-render a report CSV as a text table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// raw, cmn, or cmn+cvn.
    #[arg(long)]
    norm: Option<String>,
}

#[derive(Args, Debug)]
struct TrainGmmArgs {
    /// CFB1 files or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainAeArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    manifest: PathBuf,
    /// Also write this many clean training utterances to `<out>/train`.
    #[arg(long)]
    train: Option<usize>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Scene directories or directories of scenes.
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
    /// ml, ae, or oracle.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    ae: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeightArgs {
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
    /// raw_ml, softmax, or jacobian.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Comma-separated method names, or `all`.
    #[arg(long)]
    methods: Option<String>,
    /// Normalization of method outputs before scoring: cmn or cmn+cvn.
    #[arg(long)]
    eval_norm: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    csv: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(micfuse::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl From<micfuse::Error> for CliError {
    fn from(e: micfuse::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "threads",
    "norm",
    "mixtures",
    "gmm_iters",
    "var_floor",
    "hidden",
    "epochs",
    "learning_rate",
    "batch_size",
    "train",
    "train_length",
    "dim",
    "ref_mixtures",
    "switch_prob",
    "method",
    "kind",
    "methods",
    "eval_norm",
    "beta",
    "cov_reg",
    "weight_iters",
    "gmm",
    "ae",
];

/// Option lookup: command line, then config file, then default.
struct Settings {
    config: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let config = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_key_values(&text).map_err(|e| usage(e.to_string()))?
            }
        };
        if let Some(k) = config.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(usage(format!("unknown config key `{k}`")));
        }
        Ok(Self { config })
    }

    fn get<T: FromStr>(&self, key: &str, cli: Option<T>, default: T) -> CliResult<T> {
        Ok(self.opt(key, cli)?.unwrap_or(default))
    }

    fn opt<T: FromStr>(&self, key: &str, cli: Option<T>) -> CliResult<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.config.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn path(&self, key: &str, cli: Option<PathBuf>) -> Option<PathBuf> {
        cli.or_else(|| self.config.get(key).map(PathBuf::from))
    }
}

fn required_out(out: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    out.ok_or_else(|| usage(format!("--out <path> is required: {what}")))
}

fn parse_norm(s: &str) -> CliResult<NormState> {
    s.parse().map_err(|_| usage(format!("unknown normalization `{s}` (raw, cmn, cmn+cvn)")))
}

/// Expand files and directories into a sorted list of `.cfb` files.
fn feature_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|x| x == "cfb"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(micfuse::Error::Empty("feature file list")));
    }
    Ok(out)
}

/// Expand scene directories and directories of scenes.
fn scene_dirs(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.join("meta.txt").is_file() {
            out.push(p.clone());
        } else if p.is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|d| d.join("meta.txt").is_file())
                .collect();
            dirs.sort();
            out.extend(dirs);
        } else {
            return Err(CliError::Data(micfuse::Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} is not a scene directory", p.display()),
            ))));
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(micfuse::Error::Empty("scene list")));
    }
    Ok(out)
}

fn scene_id(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_scenes(inputs: &[PathBuf]) -> CliResult<Vec<Scene>> {
    scene_dirs(inputs)?
        .iter()
        .map(|d| {
            let (utt, meta) = read_scene(d)?;
            Ok(Scene { id: scene_id(d), utt, meta })
        })
        .collect()
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\t")
}

fn cmd_features(a: FeaturesArgs, s: &Settings, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "output file, or directory for several inputs")?;
    let norm = parse_norm(&s.get("norm", a.norm, "raw".to_string())?)?;
    let cfg = MelConfig::default();
    let extract = |p: &Path| -> CliResult<FeatureMatrix> { Ok(normalize(&log_mel(&read_wav(p)?, &cfg)?, norm)) };
    if a.inputs.len() == 1 && out.extension().is_some_and(|x| x == "cfb") {
        return Ok(save_features(&out, &extract(&a.inputs[0])?)?);
    }
    fs::create_dir_all(&out)?;
    for p in &a.inputs {
        let stem = p.file_stem().ok_or_else(|| usage(format!("bad input path {}", p.display())))?;
        save_features(&out.join(stem).with_extension("cfb"), &extract(p)?)?;
    }
    Ok(())
}

fn cmd_train_gmm(a: TrainGmmArgs, s: &Settings, seed: u64, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "model file")?;
    let mixtures = s.get("mixtures", a.mixtures, DEFAULT_MIXTURES)?;
    let defaults = EmConfig::default();
    let cfg = EmConfig {
        max_iters: s.get("gmm_iters", a.iters, defaults.max_iters)?,
        var_floor: s.get("var_floor", None, defaults.var_floor)?,
        seed,
        ..defaults
    };
    let corpus = feature_files(&a.inputs)?
        .iter()
        .map(|p| Ok(cmvn(&load_features(p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&FeatureMatrix> = corpus.iter().collect();
    let (model, trace) = train_gmm(&refs, mixtures, &cfg)?;
    log::info!("GMM trained: {} iterations, final mean log-likelihood {:?}", trace.log_likelihood.len(), trace.log_likelihood.last());
    save_gmm(&out, &model)?;
    Ok(())
}

fn cmd_train_ae(a: TrainAeArgs, s: &Settings, seed: u64, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "model file")?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        hidden: s.get("hidden", a.hidden, DEFAULT_HIDDEN)?,
        epochs: s.get("epochs", a.epochs, defaults.epochs)?,
        learning_rate: s.get("learning_rate", None, defaults.learning_rate)?,
        batch_size: s.get("batch_size", None, defaults.batch_size)?,
        seed,
    };
    let corpus = feature_files(&a.inputs)?
        .iter()
        .map(|p| Ok(cmn(&load_features(p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&FeatureMatrix> = corpus.iter().collect();
    let (model, trace) = train_autoencoder(&refs, &cfg)?;
    log::info!("autoencoder trained: MSE {:?} -> {:?}", trace.first(), trace.last());
    save_autoencoder(&out, &model)?;
    Ok(())
}

/// Seed of the `i`-th training utterance; far from typical manifest seeds.
fn train_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1 << 40).wrapping_add(i as u64)
}

fn cmd_simulate(a: SimulateArgs, s: &Settings, seed: u64, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "scene output directory")?;
    let text = fs::read_to_string(&a.manifest)?;
    let specs = parse_manifest(&text)?;
    let dim = s.get("dim", None, DEFAULT_FEATURE_DIM)?;
    let reference = reference_model(seed, dim, s.get("ref_mixtures", None, 8usize)?)?;
    let switch_prob = s.get("switch_prob", None, 0.1f64)?;
    let gmm_kind = CleanKind::GmmSamples { model: reference.clone(), switch_prob };
    fs::create_dir_all(&out)?;
    save_gmm(&out.join("reference.cgm"), &reference)?;
    for (i, spec) in specs.iter().enumerate() {
        let kind = match spec.mode {
            SceneMode::Feature => gmm_kind.clone(),
            SceneMode::Signal => CleanKind::TonesNoise { noise_sigma: 0.01 },
        };
        let clean = synth_clean(spec.seed, spec.length_secs, &kind)?;
        let (utt, meta) = micfuse::make_scene(&clean, spec)?;
        write_scene(&out.join(format!("scene{i:04}")), &utt, &meta, Some(spec))?;
    }
    let train = s.get("train", a.train, 0usize)?;
    if train > 0 {
        let length = s.get("train_length", None, 3.0f64)?;
        let dir = out.join("train");
        fs::create_dir_all(&dir)?;
        for i in 0..train {
            let micfuse::CleanInput::Features(f) = synth_clean(train_seed(seed, i), length, &gmm_kind)? else {
                unreachable!("GMM samples are features");
            };
            save_features(&dir.join(format!("clean{i:04}.cfb")), &f)?;
        }
    }
    Ok(())
}

fn cmd_select(a: SelectArgs, s: &Settings, out: Option<PathBuf>) -> CliResult<()> {
    let method = s.get("method", a.method, "ml".to_string())?;
    let gmm = s.path("gmm", a.gmm);
    let ae = s.path("ae", a.ae);
    let (gmm, ae) = match method.as_str() {
        "ml" => (Some(load_gmm(&gmm.ok_or_else(|| usage("--gmm is required for ml selection"))?)?), None),
        "ae" => (None, Some(load_autoencoder(&ae.ok_or_else(|| usage("--ae is required for ae selection"))?)?)),
        "oracle" => (None, None),
        other => return Err(usage(format!("unknown selection method `{other}` (ml, ae, oracle)"))),
    };
    let mut text = String::new();
    for dir in scene_dirs(&a.scenes)? {
        let (utt, meta) = read_scene(&dir)?;
        let result = match (&gmm, &ae) {
            (Some(g), _) => select_ml(g, &utt.map_channels(cmvn))?,
            (_, Some(m)) => select_ae(m, &utt.map_channels(cmn))?,
            _ => select_oracle(&utt.map_channels(cmvn), &cmvn(&meta.clean))?,
        };
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}",
            scene_id(&dir),
            result.method.name(),
            result.chosen,
            join(&result.scores)
        );
    }
    emit(&text, out.as_deref())
}

fn weighting_config(s: &Settings, beta: Option<f64>) -> CliResult<JacobianConfig> {
    let d = JacobianConfig::default();
    Ok(JacobianConfig {
        beta: s.get("beta", beta, d.beta)?,
        cov_reg: s.get("cov_reg", None, d.cov_reg)?,
        em_iters: s.get("weight_iters", None, d.em_iters)?,
        ..d
    })
}

fn cmd_weight(a: WeightArgs, s: &Settings, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "directory for fused features")?;
    let kind = s.get("kind", a.kind, "jacobian".to_string())?;
    if !["raw_ml", "softmax", "jacobian"].contains(&kind.as_str()) {
        return Err(usage(format!("unknown weight kind `{kind}` (raw_ml, softmax, jacobian)")));
    }
    let gmm = load_gmm(&s.path("gmm", a.gmm).ok_or_else(|| usage("--gmm is required"))?)?;
    let cfg = weighting_config(s, a.beta)?;
    fs::create_dir_all(&out)?;
    let mut text = String::new();
    for dir in scene_dirs(&a.scenes)? {
        let (utt, _) = read_scene(&dir)?;
        let u = utt.map_channels(cmvn);
        let (weights, objective, warning) = match kind.as_str() {
            "jacobian" => {
                let est = estimate_weights_jacobian(&gmm, &u, &cfg, &LbfgsConfig::default())?;
                (est.weights.values, est.objective, est.warning)
            }
            _ => {
                let est = estimate_weights_ml(&gmm, &u, &cfg)?;
                if kind == "softmax" {
                    let w = softmax_constrain(&est.weights).values;
                    let ll = gmm.utterance_score(&apply_weights(&u, &w)?)?;
                    (w, ll, est.warning)
                } else {
                    (est.weights.values, est.objective, est.warning)
                }
            }
        };
        let id = scene_id(&dir);
        if let Some(w) = warning {
            log::warn!("{id}: {w}");
        }
        save_features(&out.join(format!("{id}.cfb")), &apply_weights(&u, &weights)?)?;
        let _ = writeln!(text, "{id}\t{kind}\t{}\t{objective}", join(&weights));
    }
    print!("{text}");
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, s: &Settings, threads: usize, out: Option<PathBuf>) -> CliResult<()> {
    let out = required_out(out, "report CSV path")?;
    let methods = parse_methods(&s.get("methods", a.methods, "all".to_string())?).map_err(|e| usage(e.to_string()))?;
    let eval_norm = parse_norm(&s.get("eval_norm", a.eval_norm, "cmn".to_string())?)?;
    let models = Models {
        gmm: s.path("gmm", a.gmm).map(|p| load_gmm(&p)).transpose()?,
        ae: s.path("ae", a.ae).map(|p| load_autoencoder(&p)).transpose()?,
    };
    let cfg = ExperimentConfig {
        methods,
        threads,
        weighting: weighting_config(s, a.beta)?,
        eval_norm,
        ..Default::default()
    };
    if cfg.methods.iter().any(|m| m.name() != "ch_best" && m.name() != "oracle" && m.name() != "select_ae") && models.gmm.is_none() {
        return Err(usage("--gmm is required for the requested methods"));
    }
    if cfg.methods.iter().any(|m| m.name() == "select_ae") && models.ae.is_none() {
        return Err(usage("--ae is required for select_ae"));
    }
    let scenes = load_scenes(&a.scenes)?;
    let report = run_experiment(&scenes, &models, &cfg)?;
    fs::write(&out, render_csv(&report)?)?;
    print!("{}", render_text(&report));
    Ok(())
}

fn cmd_report(a: ReportArgs, out: Option<PathBuf>) -> CliResult<()> {
    let report = parse_report_csv(&fs::read_to_string(&a.csv)?)?;
    emit(&render_text(&report), out.as_deref())
}

fn run(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.get("seed", cli.seed, 0u64)?;
    let threads = settings.get("threads", cli.threads, 1usize)?;
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    match cli.command {
        Command::Features(a) => cmd_features(a, &settings, cli.out),
        Command::TrainGmm(a) => cmd_train_gmm(a, &settings, seed, cli.out),
        Command::TrainAe(a) => cmd_train_ae(a, &settings, seed, cli.out),
        Command::Simulate(a) => cmd_simulate(a, &settings, seed, cli.out),
        Command::Select(a) => cmd_select(a, &settings, cli.out),
        Command::Weight(a) => cmd_weight(a, &settings, cli.out),
        Command::Evaluate(a) => cmd_evaluate(a, &settings, threads, cli.out),
        Command::Report(a) => cmd_report(a, cli.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Data(_) => 2,
            })
        }
    }
}
