//! Synthetic multichannel scenes with known per-channel quality.
//!
//! Channel `c` is `gain_c · clean + n_c`, with white Gaussian noise `n_c`
//! added either to the waveform (signal mode) or directly to the log-Mel
//! features (feature mode). Each channel draws from its own ChaCha stream, so
//! a scene is a pure function of the clean material and the spec.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{AudioBuffer, FeatureMatrix, LogMelExtractor, MelConfig, NormState, FRAME_RATE};
use crate::gmm::GmmModel;
use crate::select::MultichannelUtterance;

pub const DEFAULT_CHANNELS: usize = 6;
pub const DEFAULT_LENGTH_SECS: f64 = 7.0;
pub const SAMPLE_RATE: u32 = 16_000;
/// Noise σ multiplier applied to the degraded channel.
pub const DEGRADED_FACTOR: f64 = 10.0;
/// Period, in samples, of the tones+noise clean signal (160 Hz at 16 kHz).
pub const TONE_PERIOD: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneMode {
    Signal,
    Feature,
}

impl SceneMode {
    pub fn name(self) -> &'static str {
        match self {
            SceneMode::Signal => "signal",
            SceneMode::Feature => "feature",
        }
    }
}

impl FromStr for SceneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" => Ok(SceneMode::Signal),
            "feature" => Ok(SceneMode::Feature),
            other => Err(Error::InvalidConfig(format!("unknown scene mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub gains: Vec<f64>,
    /// Per-channel noise σ, before the degraded-channel multiplier.
    pub noise: Vec<f64>,
    pub mode: SceneMode,
    /// 1-based id of a channel whose σ is multiplied by [`DEGRADED_FACTOR`].
    pub degraded: Option<usize>,
    pub length_secs: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            gains: vec![1.0; DEFAULT_CHANNELS],
            noise: vec![0.0; DEFAULT_CHANNELS],
            mode: SceneMode::Feature,
            degraded: None,
            length_secs: DEFAULT_LENGTH_SECS,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn channels(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gains.len();
        if c == 0 {
            return Err(Error::InvalidConfig("scene needs at least one channel".into()));
        }
        if self.noise.len() != c {
            return Err(Error::InvalidConfig(format!(
                "{} gains but {} noise levels",
                c,
                self.noise.len()
            )));
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidConfig("gains must be positive".into()));
        }
        if self.noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("noise levels must be non-negative".into()));
        }
        if let Some(d) = self.degraded {
            if d == 0 || d > c {
                return Err(Error::InvalidConfig(format!("degraded channel {d} out of range 1..={c}")));
            }
        }
        if !(self.length_secs.is_finite() && self.length_secs > 0.0) {
            return Err(Error::InvalidConfig("scene length must be positive".into()));
        }
        Ok(())
    }

    /// Noise σ actually applied to each channel.
    pub fn effective_noise(&self) -> Vec<f64> {
        self.noise
            .iter()
            .enumerate()
            .map(|(i, s)| if self.degraded == Some(i + 1) { s * DEGRADED_FACTOR } else { *s })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    /// Realized per-channel SNR in dB; `+∞` for a noiseless channel.
    pub snr_db: Vec<f64>,
    /// 1-based id of the highest-SNR channel, lowest id on ties.
    pub oracle: usize,
    pub clean: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CleanInput {
    Audio(AudioBuffer),
    Features(FeatureMatrix),
}

/// Parameters for [`synth_clean`].
#[derive(Debug, Clone, PartialEq)]
pub enum CleanKind {
    /// Frames drawn from `model`. A segment keeps its component until it is
    /// redrawn with probability `switch_prob` per frame; `1.0` gives i.i.d.
    /// frames.
    GmmSamples { model: GmmModel, switch_prob: f64 },
    /// Harmonics of a 160 Hz fundamental plus white noise of std `noise_sigma`.
    TonesNoise { noise_sigma: f64 },
}

fn snr_db(signal: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}

/// Noise stream for 0-based channel `channel`. Stream 0 is left to
/// [`synth_clean`], so a scene may share its seed with its clean material.
fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64 + 1);
    rng
}

/// Add `gain · x + N(0, σ²)` noise, returning the samples and noise energy.
fn corrupt(x: &[f64], gain: f64, sigma: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let mut energy = 0.0;
    let out = x
        .iter()
        .map(|v| {
            if sigma == 0.0 {
                return gain * v;
            }
            let z: f64 = StandardNormal.sample(rng);
            let n = sigma * z;
            energy += n * n;
            gain * v + n
        })
        .collect();
    (out, energy)
}

/// Build a scene from clean material. Signal mode uses the default front-end
/// at 16 kHz; see [`make_scene_with`] to supply another.
pub fn make_scene(clean: &CleanInput, spec: &SceneSpec) -> Result<(MultichannelUtterance, SceneMeta)> {
    let extractor = LogMelExtractor::new(MelConfig::default(), SAMPLE_RATE)?;
    make_scene_with(clean, spec, &extractor)
}

pub fn make_scene_with(
    clean: &CleanInput,
    spec: &SceneSpec,
    extractor: &LogMelExtractor,
) -> Result<(MultichannelUtterance, SceneMeta)> {
    spec.validate()?;
    let sigmas = spec.effective_noise();
    let (channels, clean_feats, snr) = match (clean, spec.mode) {
        (CleanInput::Features(f), SceneMode::Feature) => {
            let means = f.column_means();
            let d = f.dim();
            let centred: f64 = f
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - means[i % d]).powi(2))
                .sum();
            let mut chans = Vec::with_capacity(spec.channels());
            let mut snr = Vec::with_capacity(spec.channels());
            for (c, (g, s)) in spec.gains.iter().zip(&sigmas).enumerate() {
                let (data, noise) = corrupt(f.as_slice(), *g, *s, &mut channel_rng(spec.seed, c));
                chans.push(FeatureMatrix::new(data, f.frames(), d, NormState::Raw)?);
                snr.push(snr_db(g * g * centred, noise));
            }
            (chans, f.clone().with_state(NormState::Raw), snr)
        }
        (CleanInput::Audio(a), SceneMode::Signal) => {
            let energy: f64 = a.samples.iter().map(|v| v * v).sum();
            let mut chans = Vec::with_capacity(spec.channels());
            let mut snr = Vec::with_capacity(spec.channels());
            for (c, (g, s)) in spec.gains.iter().zip(&sigmas).enumerate() {
                let (data, noise) = corrupt(&a.samples, *g, *s, &mut channel_rng(spec.seed, c));
                chans.push(extractor.log_mel(&AudioBuffer::new(data, a.sample_rate)?)?);
                snr.push(snr_db(g * g * energy, noise));
            }
            (chans, extractor.log_mel(a)?, snr)
        }
        (_, mode) => {
            return Err(Error::InvalidConfig(format!(
                "clean material does not match {} mode",
                mode.name()
            )))
        }
    };
    let meta = SceneMeta {
        oracle: argmax_lowest(&snr),
        snr_db: snr,
        clean: clean_feats,
    };
    Ok((MultichannelUtterance::new(channels)?, meta))
}

/// Deterministic clean material of `length_secs` seconds.
pub fn synth_clean(seed: u64, length_secs: f64, kind: &CleanKind) -> Result<CleanInput> {
    if !(length_secs.is_finite() && length_secs > 0.0) {
        return Err(Error::InvalidConfig("clean length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        CleanKind::GmmSamples { model, switch_prob } => {
            if !(0.0..=1.0).contains(switch_prob) {
                return Err(Error::InvalidConfig("switch probability must lie in [0, 1]".into()));
            }
            let frames = ((length_secs * FRAME_RATE).round() as usize).max(1);
            let d = model.dim();
            let mut data = vec![0.0; frames * d];
            let mut comp = model.draw_component(&mut rng);
            for (t, row) in data.chunks_exact_mut(d).enumerate() {
                if t > 0 && rng.random::<f64>() < *switch_prob {
                    comp = model.draw_component(&mut rng);
                }
                model.sample_component_into(&mut rng, comp, row);
            }
            Ok(CleanInput::Features(FeatureMatrix::new(data, frames, d, NormState::Raw)?))
        }
        CleanKind::TonesNoise { noise_sigma } => {
            if !(noise_sigma.is_finite() && *noise_sigma >= 0.0) {
                return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
            }
            let len = ((length_secs * SAMPLE_RATE as f64).round() as usize).max(1);
            let harmonics: Vec<(f64, f64)> = (0..10)
                .map(|_| (rng.random_range(0.05..0.3), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let period: Vec<f64> = (0..TONE_PERIOD)
                .map(|n| {
                    harmonics
                        .iter()
                        .enumerate()
                        .map(|(k, (amp, phase))| {
                            amp * (2.0 * PI * (k + 1) as f64 * n as f64 / TONE_PERIOD as f64 + phase).sin()
                        })
                        .sum()
                })
                .collect();
            let samples = (0..len)
                .map(|i| {
                    let v = period[i % TONE_PERIOD];
                    if *noise_sigma == 0.0 {
                        v
                    } else {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + noise_sigma * z
                    }
                })
                .collect();
            Ok(CleanInput::Audio(AudioBuffer::new(samples, SAMPLE_RATE)?))
        }
    }
}

/// A structured clean-speech stand-in: well separated component means
/// `N(0, 1.5²)` and tight variances `U(0.1, 0.4)`.
pub fn reference_model(seed: u64, dim: usize, mixtures: usize) -> Result<GmmModel> {
    if dim == 0 || mixtures == 0 {
        return Err(Error::InvalidConfig("reference model needs dim and mixtures > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..mixtures).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let means = (0..mixtures * dim)
        .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let vars = (0..mixtures * dim).map(|_| rng.random_range(0.1..0.4)).collect();
    GmmModel::new(raw.iter().map(|w| w / total).collect(), means, vars, dim)
}

fn parse_list(field: &str, channels: usize, what: &str) -> Result<Vec<f64>> {
    let values = field
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    match values.len() {
        1 => Ok(vec![values[0]; channels]),
        n if n == channels => Ok(values),
        n => Err(Error::InvalidConfig(format!("{n} {what} values for {channels} channels"))),
    }
}

/// Parse one manifest line: `seed C gains σs degraded length mode`. Gains and
/// σs are comma-separated per-channel lists or a single broadcast value;
/// `degraded` is a 1-based id or `-`.
pub fn parse_scene_line(line: &str) -> Result<SceneSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let [seed, c, gains, noise, degraded, length, mode] = fields[..] else {
        return Err(Error::InvalidConfig(format!(
            "scene line needs 7 fields, got {}: `{line}`",
            fields.len()
        )));
    };
    let bad = |what: &str, v: &str| Error::InvalidConfig(format!("bad {what} `{v}`"));
    let channels: usize = c.parse().map_err(|_| bad("channel count", c))?;
    if channels == 0 {
        return Err(Error::InvalidConfig("scene needs at least one channel".into()));
    }
    let spec = SceneSpec {
        seed: seed.parse().map_err(|_| bad("seed", seed))?,
        gains: parse_list(gains, channels, "gain")?,
        noise: parse_list(noise, channels, "noise")?,
        degraded: match degraded {
            "-" => None,
            d => Some(d.parse().map_err(|_| bad("degraded channel", d))?),
        },
        length_secs: length.parse().map_err(|_| bad("length", length))?,
        mode: mode.parse()?,
    };
    spec.validate()?;
    Ok(spec)
}

/// Parse a manifest, skipping blank lines and `#` comments.
pub fn parse_manifest(text: &str) -> Result<Vec<SceneSpec>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_scene_line)
        .collect()
}

/// Render a spec as a manifest line that [`parse_scene_line`] reads back.
pub fn format_scene_line(spec: &SceneSpec) -> String {
    let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "{} {} {} {} {} {} {}",
        spec.seed,
        spec.channels(),
        list(&spec.gains),
        list(&spec.noise),
        spec.degraded.map_or("-".to_string(), |d| d.to_string()),
        spec.length_secs,
        spec.mode.name()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::cmvn;
    use crate::select::select_oracle;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_features(seed: u64, frames: usize, dim: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        FeatureMatrix::new(data, frames, dim, NormState::Raw).unwrap()
    }

    #[test]
    fn noiseless_scene_copies_clean() {
        let clean = unit_features(1, 50, 4);
        let spec = SceneSpec {
            gains: vec![1.0; 3],
            noise: vec![0.0; 3],
            ..Default::default()
        };
        let (u, meta) = make_scene(&CleanInput::Features(clean.clone()), &spec).unwrap();
        for c in u.channels() {
            assert_eq!(c.as_slice(), clean.as_slice());
        }
        assert!(meta.snr_db.iter().all(|s| *s == f64::INFINITY));
        assert_eq!(meta.oracle, 1);
        assert_eq!(meta.clean, clean);
    }

    #[test]
    fn unit_noise_on_unit_features_is_zero_db() {
        let clean = unit_features(2, 1000, 40);
        let spec = SceneSpec {
            gains: vec![1.0; 4],
            noise: vec![1.0; 4],
            ..Default::default()
        };
        let (_, meta) = make_scene(&CleanInput::Features(clean), &spec).unwrap();
        for s in meta.snr_db {
            assert!(s.abs() < 0.5, "{s}");
        }
    }

    #[test]
    fn measured_snr_matches_estimator() {
        let clean = unit_features(3, 400, 10);
        let spec = SceneSpec {
            gains: vec![2.0, 0.5],
            noise: vec![0.3, 0.7],
            seed: 11,
            ..Default::default()
        };
        let (u, meta) = make_scene(&CleanInput::Features(clean.clone()), &spec).unwrap();
        let means = clean.column_means();
        for (c, ch) in u.channels().iter().enumerate() {
            let g = spec.gains[c];
            let mut sig = 0.0;
            let mut noise = 0.0;
            for t in 0..400 {
                for d in 0..10 {
                    sig += (g * (clean.get(t, d) - means[d])).powi(2);
                    noise += (ch.get(t, d) - g * clean.get(t, d)).powi(2);
                }
            }
            assert!((meta.snr_db[c] - 10.0 * (sig / noise).log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn degraded_channel_is_never_oracle() {
        for seed in 0..50 {
            let clean = unit_features(seed, 100, 8);
            let spec = SceneSpec {
                gains: vec![1.0; 6],
                noise: vec![0.5; 6],
                degraded: Some(2),
                seed,
                ..Default::default()
            };
            let (_, meta) = make_scene(&CleanInput::Features(clean), &spec).unwrap();
            assert_ne!(meta.oracle, 2);
            assert!(meta.snr_db[1] < meta.snr_db[0] - 15.0);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let clean = CleanInput::Features(unit_features(1, 10, 2));
        let bad = [
            SceneSpec { gains: vec![], noise: vec![], ..Default::default() },
            SceneSpec { gains: vec![1.0, 0.0], noise: vec![0.1; 2], ..Default::default() },
            SceneSpec { gains: vec![1.0], noise: vec![-0.1], ..Default::default() },
            SceneSpec { gains: vec![1.0], noise: vec![0.1], degraded: Some(2), ..Default::default() },
            SceneSpec { gains: vec![1.0], noise: vec![0.1, 0.2], ..Default::default() },
            SceneSpec { gains: vec![1.0], noise: vec![0.1], mode: SceneMode::Signal, ..Default::default() },
        ];
        for spec in &bad {
            assert!(make_scene(&clean, spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn scenes_are_reproducible() {
        let model = reference_model(5, 6, 4).unwrap();
        let kind = CleanKind::GmmSamples { model, switch_prob: 0.1 };
        let a = synth_clean(9, 1.0, &kind).unwrap();
        let b = synth_clean(9, 1.0, &kind).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_clean(10, 1.0, &kind).unwrap());
        let spec = SceneSpec {
            gains: vec![1.0, 0.9, 1.1],
            noise: vec![0.2, 0.4, 0.8],
            seed: 4,
            ..Default::default()
        };
        assert_eq!(make_scene(&a, &spec).unwrap(), make_scene(&b, &spec).unwrap());
        let tones = CleanKind::TonesNoise { noise_sigma: 0.1 };
        assert_eq!(synth_clean(3, 0.5, &tones).unwrap(), synth_clean(3, 0.5, &tones).unwrap());
    }

    #[test]
    fn noiseless_tones_are_exactly_periodic() {
        let CleanInput::Audio(a) = synth_clean(7, 0.25, &CleanKind::TonesNoise { noise_sigma: 0.0 }).unwrap() else {
            panic!("expected audio");
        };
        assert_eq!(a.len(), 4000);
        for i in TONE_PERIOD..a.len() {
            assert_eq!(a.samples[i], a.samples[i - TONE_PERIOD]);
        }
        assert!(a.samples.iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn signal_mode_scene() {
        let clean = synth_clean(1, 0.5, &CleanKind::TonesNoise { noise_sigma: 0.0 }).unwrap();
        let spec = SceneSpec {
            gains: vec![1.0, 1.0],
            noise: vec![0.01, 0.3],
            mode: SceneMode::Signal,
            seed: 2,
            ..Default::default()
        };
        let (u, meta) = make_scene(&clean, &spec).unwrap();
        assert_eq!(u.dim(), 40);
        assert_eq!(u.frames(), meta.clean.frames());
        assert_eq!(meta.oracle, 1);
        assert!(meta.snr_db[0] > meta.snr_db[1] + 20.0);
    }

    #[test]
    fn gmm_samples_match_expected_log_likelihood() {
        let model = reference_model(21, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut buf = vec![0.0; 5];
        let mut expected = 0.0;
        for _ in 0..n {
            let m = model.draw_component(&mut rng);
            model.sample_component_into(&mut rng, m, &mut buf);
            expected += model.frame_log_likelihood(&buf).unwrap();
        }
        expected /= n as f64;
        let CleanInput::Features(f) =
            synth_clean(5, 20.0, &CleanKind::GmmSamples { model: model.clone(), switch_prob: 1.0 }).unwrap()
        else {
            panic!("expected features");
        };
        let lls: Vec<f64> = f.rows().map(|r| model.frame_log_likelihood(r).unwrap()).collect();
        let mean = model.utterance_score(&f).unwrap();
        let var = lls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lls.len() - 1) as f64;
        let se = (var / lls.len() as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn manifest_round_trip() {
        let text = "# seed C gains sigmas degraded length mode\n\
                    7 3 1.0 0.1,0.2,0.4 2 1.5 feature\n\
                    \n\
                    8 2 0.9,1.1 0 - 7 signal  # trailing comment\n";
        let specs = parse_manifest(text).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].gains, vec![1.0; 3]);
        assert_eq!(specs[0].noise, vec![0.1, 0.2, 0.4]);
        assert_eq!(specs[0].degraded, Some(2));
        assert_eq!(specs[1].mode, SceneMode::Signal);
        assert_eq!(specs[1].noise, vec![0.0, 0.0]);
        for s in &specs {
            assert_eq!(&parse_scene_line(&format_scene_line(s)).unwrap(), s);
        }
        for bad in ["1 2 1 0.1", "1 0 1 0.1 - 7 feature", "1 2 1,1,1 0.1 - 7 feature", "1 2 1 0.1 3 7 feature", "1 2 1 0.1 - 7 wav"] {
            assert!(parse_scene_line(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn frame_count_follows_length() {
        let model = reference_model(1, 3, 2).unwrap();
        let CleanInput::Features(f) =
            synth_clean(1, 2.5, &CleanKind::GmmSamples { model, switch_prob: 0.1 }).unwrap()
        else {
            panic!("expected features");
        };
        assert_eq!(f.frames(), 250);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distance_oracle_agrees_with_snr_when_gaps_are_wide(seed in 0u64..1_000_000, c in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = reference_model(seed, 12, 6).unwrap();
            let clean = synth_clean(seed, 2.0, &CleanKind::GmmSamples { model, switch_prob: 0.1 }).unwrap();
            // σ ratio 2.2 per step keeps neighbouring channels ≈ 6.8 dB apart
            let mut noise: Vec<f64> = (0..c).map(|k| 0.2 * 2.2f64.powi(k as i32)).collect();
            for i in (1..c).rev() {
                noise.swap(i, rng.random_range(0..=i));
            }
            let spec = SceneSpec {
                gains: (0..c).map(|_| rng.random_range(0.95..1.05)).collect(),
                noise,
                seed,
                ..Default::default()
            };
            let (u, meta) = make_scene(&clean, &spec).unwrap();
            let mut snr = meta.snr_db.clone();
            snr.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(snr.windows(2).all(|w| w[0] - w[1] > 6.0));
            prop_assert_eq!(select_oracle(&u, &meta.clean).unwrap().chosen, meta.oracle);
            let normed = u.map_channels(cmvn);
            prop_assert_eq!(select_oracle(&normed, &cmvn(&meta.clean)).unwrap().chosen, meta.oracle);
        }
    }
}
