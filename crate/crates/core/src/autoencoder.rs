//! Clean-speech autoencoder used for reconstruction-error channel selection.
//!
//! The network maps a 9-frame context window of CMN features to the centre
//! frame: `[9·D, h, h, h, D]`, sigmoid hidden units and a linear output.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Frames of context fed to the network (centre frame ± 4).
pub const CONTEXT_FRAMES: usize = 9;

/// Hidden width of the original large-scale network.
pub const FULL_SCALE_HIDDEN: usize = 1024;

/// Desk-scale default hidden width.
pub const DEFAULT_HIDDEN: usize = 64;

pub const HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// Linear hidden units; only used to build exact reference networks.
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, z: &mut DMatrix<f64>) {
        if self == Activation::Sigmoid {
            z.apply(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Sigmoid => a.map(|v| v * (1.0 - v)),
            Activation::Identity => DMatrix::from_element(a.nrows(), a.ncols(), 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    layers: Vec<Layer>,
    hidden_activation: Activation,
}

impl AutoencoderModel {
    pub fn new(layers: Vec<Layer>, hidden_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("autoencoder layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weights.nrows(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && l.weights.ncols() != layers[i - 1].weights.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].weights.nrows(),
                    got: l.weights.ncols(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("autoencoder parameters"));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
        })
    }

    /// Layer sizes for a `dim`-dimensional feature stream.
    pub fn architecture(dim: usize, hidden: usize) -> Vec<usize> {
        let mut dims = vec![CONTEXT_FRAMES * dim];
        dims.extend(std::iter::repeat_n(hidden, HIDDEN_LAYERS));
        dims.push(dim);
        dims
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(n_out, n_in, |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(n_out),
                }
            })
            .collect();
        Self::new(layers, Activation::Sigmoid)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self::new(layers, Activation::Sigmoid)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.ncols()];
        d.extend(self.layers.iter().map(|l| l.weights.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights column-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }

    /// Forward pass over a batch stored one example per column.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.nrows(),
            });
        }
        Ok(self.activations(inputs).pop().unwrap())
    }

    pub fn forward(&self, window: &[f64]) -> Result<Vec<f64>> {
        let x = DMatrix::from_column_slice(window.len(), 1, window);
        Ok(self.forward_batch(&x)?.as_slice().to_vec())
    }

    fn activations(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.clone());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i < last {
                self.hidden_activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error per output element and its gradient (flat layout of
    /// [`to_flat`](Self::to_flat)).
    pub fn loss_and_gradient(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let (loss, grads) = self.backprop(inputs, targets)?;
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (gw, gb) in &grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        Ok((loss, flat))
    }

    fn backprop(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<(f64, Vec<(DMatrix<f64>, DVector<f64>)>)> {
        if inputs.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.nrows(),
            });
        }
        if targets.nrows() != self.output_dim() || targets.ncols() != inputs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: targets.nrows(),
            });
        }
        let acts = self.activations(inputs);
        let out = acts.last().unwrap();
        let scale = 1.0 / (out.len() as f64);
        let diff = out - targets;
        let loss = diff.norm_squared() * scale;
        let mut delta = diff * (2.0 * scale);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a_prev = &acts[i];
            let gw = &delta * a_prev.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let back = self.layers[i].weights.transpose() * &delta;
                let deriv = self.hidden_activation.derivative_from_output(a_prev);
                delta = back.component_mul(&deriv);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

/// Stack `context` frames around every frame: row `t` holds frames
/// `t-4 ..= t+4` (for a context of 9), with edges padded by repetition.
pub fn windowize(f: &FeatureMatrix, context: usize) -> Result<DMatrix<f64>> {
    if context == 0 || context.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "context must be a positive odd frame count, got {context}"
        )));
    }
    let (t_len, d) = (f.frames(), f.dim());
    let half = (context / 2) as isize;
    let mut out = DMatrix::zeros(t_len, context * d);
    for t in 0..t_len {
        for (k, off) in (-half..=half).enumerate() {
            let src = (t as isize + off).clamp(0, t_len as isize - 1) as usize;
            for (j, v) in f.row(src).iter().enumerate() {
                out[(t, k * d + j)] = *v;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            epochs: 50,
            learning_rate: 0.5,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Windows (columns) and centre-frame targets (columns) for a corpus.
fn training_pairs(clean: &[&FeatureMatrix]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = clean.first().ok_or(Error::Empty("autoencoder corpus"))?;
    let d = first.dim();
    let n: usize = clean.iter().map(|f| f.frames()).sum();
    let mut inputs = DMatrix::zeros(CONTEXT_FRAMES * d, n);
    let mut targets = DMatrix::zeros(d, n);
    let mut col = 0;
    for f in clean {
        if f.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: f.dim(),
            });
        }
        let w = windowize(f, CONTEXT_FRAMES)?;
        for t in 0..f.frames() {
            inputs.column_mut(col).copy_from(&w.row(t).transpose());
            targets.column_mut(col).copy_from_slice(f.row(t));
            col += 1;
        }
    }
    Ok((inputs, targets))
}

/// Minibatch SGD on the centre-frame reconstruction loss.
///
/// Returns the model and the full-corpus MSE before training and after every
/// epoch.
pub fn train_autoencoder(
    clean: &[&FeatureMatrix],
    cfg: &TrainConfig,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    if cfg.epochs == 0 || !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidConfig(
            "epochs, learning rate, batch size and hidden width must be positive".into(),
        ));
    }
    let (inputs, targets) = training_pairs(clean)?;
    let d = targets.nrows();
    let n = inputs.ncols();
    let mut model = AutoencoderModel::random(&AutoencoderModel::architecture(d, cfg.hidden), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_edae);
    let mut order: Vec<usize> = (0..n).collect();
    let mse = |m: &AutoencoderModel| -> Result<f64> {
        let out = m.forward_batch(&inputs)?;
        Ok((out - &targets).norm_squared() / (n * d) as f64)
    };
    let mut trace = vec![mse(&model)?];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = inputs.select_columns(batch);
            let yb = targets.select_columns(batch);
            let (_, grads) = model.backprop(&xb, &yb)?;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads) {
                layer.weights.zip_apply(&gw, |w, g| *w -= cfg.learning_rate * g);
                layer.bias.axpy(-cfg.learning_rate, &gb, 1.0);
            }
        }
        let loss = mse(&model)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("autoencoder training loss"));
        }
        trace.push(loss);
    }
    Ok((model, trace))
}

/// `Σ_t ||x(t) - f_AE(window_t)||²` over the utterance.
pub fn reconstruction_error(model: &AutoencoderModel, f: &FeatureMatrix) -> Result<f64> {
    if model.output_dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            got: f.dim(),
        });
    }
    let context = model.input_dim() / f.dim();
    if context * f.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: CONTEXT_FRAMES * f.dim(),
        });
    }
    let windows = windowize(f, context)?.transpose();
    let out = model.forward_batch(&windows)?;
    let mut err = 0.0;
    for t in 0..f.frames() {
        for (j, x) in f.row(t).iter().enumerate() {
            let r = x - out[(j, t)];
            err += r * r;
        }
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{cmn, NormState};
    use crate::optim::finite_diff_grad;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_features(seed: u64, frames: usize, dim: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        cmn(&FeatureMatrix::new(data, frames, dim, NormState::Raw).unwrap())
    }

    /// Hidden layers copy the centre frame through a linear path.
    fn identity_net(dim: usize) -> AutoencoderModel {
        let n_in = CONTEXT_FRAMES * dim;
        let centre = (CONTEXT_FRAMES / 2) * dim;
        let first = DMatrix::from_fn(n_in, n_in, |r, c| if r == c { 1.0 } else { 0.0 });
        let mid = DMatrix::identity(n_in, n_in);
        let last = DMatrix::from_fn(dim, n_in, |r, c| if c == centre + r { 1.0 } else { 0.0 });
        let layer = |w: DMatrix<f64>| Layer { bias: DVector::zeros(w.nrows()), weights: w };
        AutoencoderModel::new(
            vec![layer(first), layer(mid.clone()), layer(mid), layer(last)],
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn architecture_widths() {
        assert_eq!(AutoencoderModel::architecture(40, 64), vec![360, 64, 64, 64, 40]);
        assert_eq!(AutoencoderModel::architecture(40, FULL_SCALE_HIDDEN)[0], 360);
    }

    #[test]
    fn windowize_pads_edges_and_concatenates() {
        let f = random_features(1, 20, 3);
        let w = windowize(&f, CONTEXT_FRAMES).unwrap();
        assert_eq!((w.nrows(), w.ncols()), (20, 27));
        let t = 10;
        let direct: Vec<f64> = (t - 4..=t + 4).flat_map(|s| f.row(s).to_vec()).collect();
        assert_eq!(w.row(t).iter().copied().collect::<Vec<_>>(), direct);
        let edge: Vec<f64> = [0, 0, 0, 0, 0, 1, 2, 3, 4].iter().flat_map(|&s| f.row(s).to_vec()).collect();
        assert_eq!(w.row(0).iter().copied().collect::<Vec<_>>(), edge);

        let one = random_features(2, 1, 40);
        let w1 = windowize(&one, CONTEXT_FRAMES).unwrap();
        assert_eq!(w1.ncols(), 360);
        assert_eq!(w1.row(0).iter().copied().collect::<Vec<_>>(), one.row(0).repeat(9));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = AutoencoderModel::zeros(&AutoencoderModel::architecture(4, 8)).unwrap();
        assert_eq!(m.forward(&[0.3; 36]).unwrap(), vec![0.0; 4]);
        let f = random_features(3, 12, 4);
        let err = reconstruction_error(&m, &f).unwrap();
        let frob: f64 = f.as_slice().iter().map(|v| v * v).sum();
        assert!((err - frob).abs() < 1e-12 * frob);
    }

    #[test]
    fn identity_network_reconstructs_exactly() {
        let m = identity_net(3);
        let f = random_features(4, 15, 3);
        let w = windowize(&f, CONTEXT_FRAMES).unwrap();
        for t in 0..15 {
            let row: Vec<f64> = w.row(t).iter().copied().collect();
            assert_eq!(m.forward(&row).unwrap(), f.row(t));
        }
        assert_eq!(reconstruction_error(&m, &f).unwrap(), 0.0);
    }

    #[test]
    fn forward_matches_hand_rolled_layers() {
        let m = AutoencoderModel::random(&AutoencoderModel::architecture(3, 5), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = x.clone();
        for (i, l) in m.layers().iter().enumerate() {
            let mut next = Vec::new();
            for r in 0..l.weights.nrows() {
                let mut z = l.bias[r];
                for c in 0..l.weights.ncols() {
                    z += l.weights[(r, c)] * a[c];
                }
                next.push(if i + 1 < m.layers().len() { 1.0 / (1.0 + (-z).exp()) } else { z });
            }
            a = next;
        }
        let y = m.forward(&x).unwrap();
        for (p, q) in y.iter().zip(&a) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn input_width_is_checked() {
        let m = AutoencoderModel::zeros(&[6, 2, 2]).unwrap();
        assert!(m.forward(&[1.0; 5]).is_err());
        let f = random_features(1, 5, 3);
        assert!(reconstruction_error(&m, &f).is_err());
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let corpus = [random_features(5, 250, 4), random_features(6, 250, 4)];
        let refs: Vec<&FeatureMatrix> = corpus.iter().collect();
        let cfg = TrainConfig { hidden: 8, epochs: 50, ..TrainConfig::default() };
        let (m1, trace) = train_autoencoder(&refs, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0], "{trace:?}");
        assert!(trace.iter().all(|v| v.is_finite()));
        let (m2, _) = train_autoencoder(&refs, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_autoencoder(&[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn backprop_matches_finite_differences(seed in 0u64..10_000, hidden in 2usize..6) {
            let dim = 2;
            let mut m = AutoencoderModel::random(&AutoencoderModel::architecture(dim, hidden), seed).unwrap();
            // nonzero biases exercise their gradient path too
            let mut flat = m.to_flat();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            flat.iter_mut().for_each(|p| *p += rng.random_range(-0.3..0.3));
            m.set_flat(&flat).unwrap();
            let f = random_features(seed, 6, dim);
            let x = windowize(&f, CONTEXT_FRAMES).unwrap().transpose();
            let y = DMatrix::from_fn(dim, 6, |r, c| f.get(c, r));
            let (_, grad) = m.loss_and_gradient(&x, &y).unwrap();
            let picks: Vec<usize> = (0..20).map(|_| rng.random_range(0..flat.len())).collect();
            for &i in &picks {
                let mut probe = m.clone();
                let fd = finite_diff_grad(|p: &[f64]| {
                    let mut full = flat.clone();
                    full[i] = p[0];
                    probe.set_flat(&full).unwrap();
                    probe.loss_and_gradient(&x, &y).unwrap().0
                }, &[flat[i]], 1e-5).unwrap()[0];
                let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                prop_assert!((fd - grad[i]).abs() / denom < 1e-4, "param {}: fd {} bp {}", i, fd, grad[i]);
            }
        }
    }
}
