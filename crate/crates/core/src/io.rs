//! File formats: 16-bit PCM WAV input, CFB1 feature files, CGM1 GMM and CAE1
//! autoencoder models, key=value text, and scene directories.
//!
//! All binary formats are little-endian:
//!
//! ```text
//! CFB1  "CFB1" u32 T, u32 D, u8 norm_state, T·D f32 (row-major)
//! CGM1  "CGM1" u32 M, u32 D, M f64 weights, M·D f64 means, M·D f64 variances
//! CAE1  "CAE1" u32 L, (L+1) u32 layer widths, u8 hidden activation,
//!       then per layer: out·in f64 weights (row-major), out f64 biases
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::autoencoder::{Activation, AutoencoderModel, Layer};
use crate::error::{Error, Result};
use crate::features::{AudioBuffer, FeatureMatrix, NormState};
use crate::gmm::GmmModel;
use crate::scene::{SceneMeta, SceneSpec};
use crate::select::MultichannelUtterance;

pub const FEATURE_MAGIC: &[u8; 4] = b"CFB1";
pub const GMM_MAGIC: &[u8; 4] = b"CGM1";
pub const AE_MAGIC: &[u8; 4] = b"CAE1";
pub const WAV_SAMPLE_RATE: u32 = 16_000;

/// Read a mono 16-bit PCM WAV at 16 kHz, scaled to [-1, 1).
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedAudio(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{}-bit {:?} samples, expected 16-bit PCM",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != WAV_SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "sample rate {} Hz, expected {WAV_SAMPLE_RATE} Hz (no resampling)",
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::UnsupportedAudio(e.to_string()))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Write mono 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedAudio(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in &audio.samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

struct Reader<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::format(self.kind, "truncated file"),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != expected {
            return Err(Error::format(self.kind, format!("bad magic {got:?}")));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn finish(mut self) -> Result<()> {
        let mut extra = [0u8; 1];
        match self.inner.read(&mut extra)? {
            0 => Ok(()),
            _ => Err(Error::format(self.kind, "trailing bytes")),
        }
    }
}

fn u32_field(kind: &'static str, v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::format(kind, format!("{v} does not fit in u32")))
}

fn checked_len(kind: &'static str, a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .filter(|n| *n <= isize::MAX as usize / 8)
        .ok_or_else(|| Error::format(kind, "size overflow"))
}

pub fn write_features<W: Write>(mut w: W, f: &FeatureMatrix) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&u32_field("CFB1", f.frames())?)?;
    w.write_all(&u32_field("CFB1", f.dim())?)?;
    w.write_all(&[f.state().code()])?;
    for v in f.as_slice() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<FeatureMatrix> {
    let mut r = Reader { inner: r, kind: "CFB1" };
    r.magic(FEATURE_MAGIC)?;
    let frames = r.u32()?;
    let dim = r.u32()?;
    let code = r.u8()?;
    let state =
        NormState::from_code(code).ok_or_else(|| Error::format("CFB1", format!("unknown norm state {code}")))?;
    let n = checked_len("CFB1", frames, dim)?;
    let data = (0..n)
        .map(|_| Ok(f32::from_le_bytes(r.bytes()?) as f64))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    FeatureMatrix::new(data, frames, dim, state)
}

pub fn write_gmm<W: Write>(mut w: W, model: &GmmModel) -> Result<()> {
    w.write_all(GMM_MAGIC)?;
    w.write_all(&u32_field("CGM1", model.mixtures())?)?;
    w.write_all(&u32_field("CGM1", model.dim())?)?;
    for v in model.weights().iter().chain(model.means()).chain(model.variances()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gmm<R: Read>(r: R) -> Result<GmmModel> {
    let mut r = Reader { inner: r, kind: "CGM1" };
    r.magic(GMM_MAGIC)?;
    let m = r.u32()?;
    let d = r.u32()?;
    let md = checked_len("CGM1", m, d)?;
    let weights = r.f64s(m)?;
    let means = r.f64s(md)?;
    let vars = r.f64s(md)?;
    r.finish()?;
    GmmModel::new(weights, means, vars, d)
}

pub fn write_autoencoder<W: Write>(mut w: W, model: &AutoencoderModel) -> Result<()> {
    w.write_all(AE_MAGIC)?;
    w.write_all(&u32_field("CAE1", model.layers().len())?)?;
    for d in model.dims() {
        w.write_all(&u32_field("CAE1", d)?)?;
    }
    w.write_all(&[model.hidden_activation().code()])?;
    for layer in model.layers() {
        let wt = &layer.weights;
        for i in 0..wt.nrows() {
            for j in 0..wt.ncols() {
                w.write_all(&wt[(i, j)].to_le_bytes())?;
            }
        }
        for b in layer.bias.iter() {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_autoencoder<R: Read>(r: R) -> Result<AutoencoderModel> {
    let mut r = Reader { inner: r, kind: "CAE1" };
    r.magic(AE_MAGIC)?;
    let count = r.u32()?;
    if count == 0 || count > 64 {
        return Err(Error::format("CAE1", format!("implausible layer count {count}")));
    }
    let dims = (0..=count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let code = r.u8()?;
    let act = Activation::from_code(code)
        .ok_or_else(|| Error::format("CAE1", format!("unknown activation {code}")))?;
    let mut layers = Vec::with_capacity(count);
    for pair in dims.windows(2) {
        let (inp, out) = (pair[0], pair[1]);
        let weights = r.f64s(checked_len("CAE1", inp, out)?)?;
        let bias = r.f64s(out)?;
        layers.push(Layer {
            weights: DMatrix::from_row_slice(out, inp, &weights),
            bias: DVector::from_vec(bias),
        });
    }
    r.finish()?;
    AutoencoderModel::new(layers, act)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn save_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    write_features(create(path)?, f)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    read_features(open(path)?)
}

pub fn save_gmm(path: &Path, model: &GmmModel) -> Result<()> {
    write_gmm(create(path)?, model)
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    read_gmm(open(path)?)
}

pub fn save_autoencoder(path: &Path, model: &AutoencoderModel) -> Result<()> {
    write_autoencoder(create(path)?, model)
}

pub fn load_autoencoder(path: &Path) -> Result<AutoencoderModel> {
    read_autoencoder(open(path)?)
}

/// Parse `key = value` lines; blank lines and `#` comments are skipped and a
/// repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", no + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", no + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("line {}: duplicate key `{key}`", no + 1)));
        }
    }
    Ok(out)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Write `ch{c}.cfb` per channel, `clean.cfb`, and `meta.txt`.
pub fn write_scene(
    dir: &Path,
    u: &MultichannelUtterance,
    meta: &SceneMeta,
    spec: Option<&SceneSpec>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (c, ch) in u.channels().iter().enumerate() {
        save_features(&dir.join(format!("ch{}.cfb", c + 1)), ch)?;
    }
    save_features(&dir.join("clean.cfb"), &meta.clean)?;
    let mut text = format!(
        "channels = {}\nframes = {}\ndim = {}\noracle = {}\nsnr_db = {}\n",
        u.num_channels(),
        u.frames(),
        u.dim(),
        meta.oracle,
        join(&meta.snr_db)
    );
    if let Some(s) = spec {
        text.push_str(&format!(
            "seed = {}\ngains = {}\nnoise = {}\ndegraded = {}\nlength = {}\nmode = {}\n",
            s.seed,
            join(&s.gains),
            join(&s.noise),
            s.degraded.map_or("-".to_string(), |d| d.to_string()),
            s.length_secs,
            s.mode.name()
        ));
    }
    fs::write(dir.join("meta.txt"), text)?;
    Ok(())
}

/// Inverse of [`write_scene`].
pub fn read_scene(dir: &Path) -> Result<(MultichannelUtterance, SceneMeta)> {
    let kv = parse_key_values(&fs::read_to_string(dir.join("meta.txt"))?)?;
    let field = |k: &str| kv.get(k).ok_or_else(|| Error::format("scene meta", format!("missing `{k}`")));
    let channels: usize = field("channels")?
        .parse()
        .map_err(|_| Error::format("scene meta", "bad channel count"))?;
    let oracle: usize = field("oracle")?
        .parse()
        .map_err(|_| Error::format("scene meta", "bad oracle id"))?;
    let snr_db = field("snr_db")?
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::format("scene meta", format!("bad snr `{v}`"))))
        .collect::<Result<Vec<_>>>()?;
    if snr_db.len() != channels || oracle == 0 || oracle > channels {
        return Err(Error::format("scene meta", "inconsistent channel metadata"));
    }
    let chans = (1..=channels)
        .map(|c| load_features(&dir.join(format!("ch{c}.cfb"))))
        .collect::<Result<Vec<_>>>()?;
    let u = MultichannelUtterance::new(chans)?;
    let clean = load_features(&dir.join("clean.cfb"))?;
    if clean.frames() != u.frames() || clean.dim() != u.dim() {
        return Err(Error::format("scene meta", "clean reference shape differs from channels"));
    }
    Ok((u, SceneMeta { snr_db, oracle, clean }))
}
