//! Log-Mel filterbank front-end and per-utterance mean/variance normalization.
//!
//! Frames are cut with a periodic Hann window, zero-padded to `n_fft`, and
//! mapped through HTK-style triangular Mel filters. All statistics use the
//! population (divide by `T`) convention.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default feature dimension: 40 log-Mel filterbank channels.
pub const DEFAULT_FEATURE_DIM: usize = 40;

/// Frames per second at the default 10 ms hop.
pub const FRAME_RATE: f64 = 100.0;

/// Column variance below which CVN leaves a column untouched.
const CONSTANT_COLUMN_VARIANCE: f64 = 1e-20;

/// Mono PCM samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    pub n_fft: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub fmin: f64,
    /// Upper band edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: DEFAULT_FEATURE_DIM,
            n_fft: 512,
            frame_len: 400,
            hop: 160,
            fmin: 0.0,
            fmax: None,
            floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be at least 1".into()));
        }
        if self.frame_len == 0 || self.frame_len > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "frame_len {} must be in 1..=n_fft ({})",
                self.frame_len, self.n_fft
            )));
        }
        if self.hop == 0 {
            return Err(Error::InvalidConfig("hop must be at least 1".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::InvalidConfig("log floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Which per-utterance normalizations have been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormState {
    Raw,
    Cmn,
    CmnCvn,
}

impl NormState {
    pub fn code(self) -> u8 {
        match self {
            NormState::Raw => 0,
            NormState::Cmn => 1,
            NormState::CmnCvn => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NormState::Raw),
            1 => Some(NormState::Cmn),
            2 => Some(NormState::CmnCvn),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormState::Raw => "raw",
            NormState::Cmn => "cmn",
            NormState::CmnCvn => "cmn+cvn",
        }
    }
}

impl std::str::FromStr for NormState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(NormState::Raw),
            "cmn" => Ok(NormState::Cmn),
            "cmn+cvn" | "cmvn" => Ok(NormState::CmnCvn),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization `{other}`"
            ))),
        }
    }
}

/// A `T x D` matrix of feature frames stored row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
    state: NormState,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, frames: usize, dim: usize, state: NormState) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Empty("feature matrix"));
        }
        if data.len() != frames * dim {
            return Err(Error::DimensionMismatch {
                expected: frames * dim,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self {
            data,
            frames,
            dim,
            state,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], state: NormState) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), rows.len(), dim, state)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self) -> NormState {
        self.state
    }

    pub fn with_state(mut self, state: NormState) -> Self {
        self.state = state;
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.dim + d]
    }

    /// Per-column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.frames as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-column population variances (two-pass).
    pub fn column_variances(&self) -> Vec<f64> {
        let mean = self.column_means();
        let mut var = vec![0.0; self.dim];
        for row in self.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let n = self.frames as f64;
        var.iter_mut().for_each(|s| *s /= n);
        var
    }

    /// Concatenate the frames of several matrices with a common dimension.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or(Error::Empty("feature list"))?;
        let mut data = Vec::new();
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::DimensionMismatch {
                    expected: first.dim,
                    got: p.dim,
                });
            }
            data.extend_from_slice(&p.data);
        }
        let frames = data.len() / first.dim;
        Ok(FeatureMatrix {
            data,
            frames,
            dim: first.dim,
            state: first.state,
        })
    }
}

/// Power spectrogram: `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

impl Spectrogram {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filters over the non-negative FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels x bins`, row-major.
    weights: Vec<f64>,
    n_mels: usize,
    bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        let fmax = cfg.fmax.unwrap_or(nyquist).min(nyquist);
        if !(cfg.fmin >= 0.0 && cfg.fmin < fmax) {
            return Err(Error::InvalidConfig(format!(
                "invalid band [{}, {}] Hz",
                cfg.fmin, fmax
            )));
        }
        let bins = cfg.bins();
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0; cfg.n_mels * bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[m * bins + k] = w;
            }
        }
        Ok(Self {
            weights,
            n_mels: cfg.n_mels,
            bins,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.filter(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

/// Reusable front-end: window, FFT plan and filterbank for one configuration.
pub struct LogMelExtractor {
    cfg: MelConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new(cfg: MelConfig, sample_rate: u32) -> Result<Self> {
        let filterbank = MelFilterbank::new(&cfg, sample_rate)?;
        let n = cfg.frame_len;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            sample_rate,
            window,
            fft,
            filterbank,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn check(&self, audio: &AudioBuffer) -> Result<usize> {
        if audio.sample_rate != self.sample_rate {
            return Err(Error::UnsupportedAudio(format!(
                "extractor built for {} Hz, got {} Hz",
                self.sample_rate, audio.sample_rate
            )));
        }
        match self.cfg.frame_count(audio.len()) {
            0 => Err(Error::TooShort {
                len: audio.len(),
                frame_len: self.cfg.frame_len,
            }),
            t => Ok(t),
        }
    }

    pub fn power_spectrogram(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        let frames = self.check(audio)?;
        let bins = self.cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        for t in 0..frames {
            let start = t * self.cfg.hop;
            let chunk = &audio.samples[start..start + self.cfg.frame_len];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for ((b, s), w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                b.re = s * w;
            }
            self.fft.process(&mut buf);
            data.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
        }
        Ok(Spectrogram { data, frames, bins })
    }

    pub fn log_mel(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let spec = self.power_spectrogram(audio)?;
        let n_mels = self.cfg.n_mels;
        let mut data = vec![0.0; spec.frames * n_mels];
        for (t, out) in data.chunks_exact_mut(n_mels).enumerate() {
            self.filterbank.apply(spec.row(t), out);
            for v in out.iter_mut() {
                *v = v.max(self.cfg.floor).ln();
            }
        }
        FeatureMatrix::new(data, spec.frames, n_mels, NormState::Raw)
    }
}

/// Hann-windowed power spectrogram, `T x (n_fft/2 + 1)`.
pub fn stft_power(audio: &AudioBuffer, cfg: &MelConfig) -> Result<Spectrogram> {
    LogMelExtractor::new(cfg.clone(), audio.sample_rate)?.power_spectrogram(audio)
}

/// `log(max(mel * power, floor))` per frame.
pub fn log_mel(audio: &AudioBuffer, cfg: &MelConfig) -> Result<FeatureMatrix> {
    LogMelExtractor::new(cfg.clone(), audio.sample_rate)?.log_mel(audio)
}

/// Per-utterance cepstral mean normalization: every column ends with zero mean.
///
/// Already-normalized input keeps its state, so `cmn` is idempotent.
pub fn cmn(f: &FeatureMatrix) -> FeatureMatrix {
    let mean = f.column_means();
    let mut data = f.data.clone();
    for row in data.chunks_exact_mut(f.dim) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let state = match f.state {
        NormState::Raw => NormState::Cmn,
        s => s,
    };
    FeatureMatrix { data, state, ..*f }
}

/// Variance normalization of mean-normalized features.
///
/// Returns the normalized matrix and the indices of constant columns, which
/// are left unchanged.
pub fn cvn_with_report(f: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<usize>)> {
    if f.state == NormState::Raw {
        return Err(Error::NotMeanNormalized);
    }
    let var = f.column_variances();
    let mut skipped = Vec::new();
    let scale: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(d, &v)| {
            if v < CONSTANT_COLUMN_VARIANCE {
                skipped.push(d);
                1.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    if !skipped.is_empty() {
        log::warn!("cvn: {} constant column(s) left unscaled", skipped.len());
    }
    let mut data = f.data.clone();
    for row in data.chunks_exact_mut(f.dim) {
        for (v, s) in row.iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    let out = FeatureMatrix {
        data,
        state: NormState::CmnCvn,
        ..*f
    };
    Ok((out, skipped))
}

pub fn cvn(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    cvn_with_report(f).map(|(m, _)| m)
}

/// CMN followed by CVN.
pub fn cmvn(f: &FeatureMatrix) -> FeatureMatrix {
    cvn(&cmn(f)).expect("cmn output is mean-normalized")
}

/// Bring features to the requested normalization state from raw.
pub fn normalize(f: &FeatureMatrix, target: NormState) -> FeatureMatrix {
    match target {
        NormState::Raw => f.clone(),
        NormState::Cmn => cmn(f),
        NormState::CmnCvn => cmvn(f),
    }
}
