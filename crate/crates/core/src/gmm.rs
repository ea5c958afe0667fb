//! Diagonal-covariance Gaussian mixture model.
//!
//! The model is trained by EM on clean features and then used to score
//! channels (mean per-frame log-likelihood) and to provide the per-frame
//! component posteriors that drive channel-weight estimation.

use std::f64::consts::PI;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Mixture count used in the original large-vocabulary setup.
pub const FULL_SCALE_MIXTURES: usize = 512;

/// Desk-scale default mixture count.
pub const DEFAULT_MIXTURES: usize = 64;

/// Components whose soft count falls below this are treated as empty.
const EMPTY_COMPONENT_MASS: f64 = 1e-8;

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `Λ = {ω_m, μ_m, Σ_m}` with diagonal `Σ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    /// `M x D`, row-major.
    means: Vec<f64>,
    /// `M x D`, row-major.
    variances: Vec<f64>,
    dim: usize,
    inv_variances: Vec<f64>,
    /// `log ω_m - ½ Σ_d log(2π σ²_md)`.
    log_norms: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let m = weights.len();
        if m == 0 || dim == 0 {
            return Err(Error::Empty("gmm"));
        }
        for len in [means.len(), variances.len()] {
            if len != m * dim {
                return Err(Error::DimensionMismatch {
                    expected: m * dim,
                    got: len,
                });
            }
        }
        if weights.iter().chain(&means).chain(&variances).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gmm parameters"));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidConfig("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig("variances must be positive".into()));
        }
        let inv_variances = variances.iter().map(|v| 1.0 / v).collect();
        let log_norms = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, var)| {
                w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect();
        Ok(Self {
            weights,
            means,
            variances,
            dim,
            inv_variances,
            log_norms,
        })
    }

    pub fn mixtures(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, m: usize) -> &[f64] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn variance(&self, m: usize) -> &[f64] {
        &self.variances[m * self.dim..(m + 1) * self.dim]
    }

    pub fn inv_variance(&self, m: usize) -> &[f64] {
        &self.inv_variances[m * self.dim..(m + 1) * self.dim]
    }

    /// `log ω_m - ½ Σ_d log(2π σ²_md)`.
    pub fn log_norm(&self, m: usize) -> f64 {
        self.log_norms[m]
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Writes `log ω_m + log N(x; μ_m, Σ_m)` for every component into `out`.
    pub fn weighted_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (m, o) in out.iter_mut().enumerate() {
            let mean = &self.means[m * d..(m + 1) * d];
            let inv = &self.inv_variances[m * d..(m + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let z = x[i] - mean[i];
                q += z * z * inv[i];
            }
            *o = self.log_norms[m] - 0.5 * q;
        }
    }

    /// `log Σ_m ω_m N(x; μ_m, Σ_m)`.
    pub fn frame_log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.mixtures()];
        self.weighted_log_densities(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Component posteriors `γ_m`, computed in the log domain.
    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.mixtures()];
        self.posteriors_into(x, &mut buf);
        Ok(buf)
    }

    /// Fills `out` with posteriors and returns the frame log-likelihood.
    pub(crate) fn posteriors_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.weighted_log_densities(x, out);
        let lse = log_sum_exp(out);
        let mut total = 0.0;
        for v in out.iter_mut() {
            *v = (*v - lse).exp();
            total += *v;
        }
        out.iter_mut().for_each(|v| *v /= total);
        lse
    }

    /// Mean per-frame log-likelihood of an utterance.
    pub fn utterance_score(&self, f: &FeatureMatrix) -> Result<f64> {
        self.check_dim(f.dim())?;
        let mut buf = vec![0.0; self.mixtures()];
        let total: f64 = f
            .rows()
            .map(|x| {
                self.weighted_log_densities(x, &mut buf);
                log_sum_exp(&buf)
            })
            .sum();
        Ok(total / f.frames() as f64)
    }

    /// Draw `n` frames (row-major) from the mixture.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let picker = WeightedIndex::new(&self.weights).expect("weights validated");
        let mut out = vec![0.0; n * self.dim];
        for row in out.chunks_exact_mut(self.dim) {
            let m = picker.sample(rng);
            self.sample_component_into(rng, m, row);
        }
        out
    }

    /// Draw a component index according to the mixture weights.
    pub fn draw_component<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return m;
            }
        }
        self.weights.len() - 1
    }

    /// Draw one frame from component `m` into `out`.
    pub fn sample_component_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, m: usize, out: &mut [f64]) {
        for ((o, mu), var) in out.iter_mut().zip(self.mean(m)).zip(self.variance(m)) {
            let z: f64 = StandardNormal.sample(rng);
            *o = mu + var.sqrt() * z;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    pub var_floor: f64,
    /// Stop once the mean per-frame log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            var_floor: 1e-3,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Per-iteration record of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Mean per-frame log-likelihood before each M-step, plus the final model's.
    pub log_likelihood: Vec<f64>,
    /// How many empty components were re-seeded.
    pub rescued: usize,
    pub converged: bool,
}

/// Train a diagonal GMM with `mixtures` components on the pooled frames.
///
/// Means are seeded from distinct frames chosen by `cfg.seed`, refined by two
/// k-means passes, then EM runs until `cfg.tol` or `cfg.max_iters`.
pub fn train_gmm(
    corpus: &[&FeatureMatrix],
    mixtures: usize,
    cfg: &EmConfig,
) -> Result<(GmmModel, EmTrace)> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if !(cfg.var_floor > 0.0) {
        return Err(Error::InvalidConfig("var_floor must be positive".into()));
    }
    if mixtures == 0 {
        return Err(Error::InvalidConfig("mixture count must be at least 1".into()));
    }
    let data = FeatureMatrix::concat(corpus)?;
    let n = data.frames();
    let d = data.dim();
    if n < mixtures {
        return Err(Error::InsufficientData {
            frames: n,
            mixtures,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = index::sample(&mut rng, n, mixtures).into_vec();
    picks.sort_unstable();
    let mut means: Vec<f64> = picks.iter().flat_map(|&i| data.row(i).to_vec()).collect();
    kmeans_refine(&data, &mut means, mixtures, 2);

    let global_var: Vec<f64> = data
        .column_variances()
        .into_iter()
        .map(|v| v.max(cfg.var_floor))
        .collect();
    let mut model = GmmModel::new(
        vec![1.0 / mixtures as f64; mixtures],
        means,
        global_var.repeat(mixtures),
        d,
    )?;

    let mut trace = EmTrace {
        log_likelihood: Vec::new(),
        rescued: 0,
        converged: false,
    };
    let mut resp = vec![0.0; n * mixtures];
    for iter in 0..=cfg.max_iters {
        let mut total = 0.0;
        for (x, r) in data.rows().zip(resp.chunks_exact_mut(mixtures)) {
            total += model.posteriors_into(x, r);
        }
        let ll = total / n as f64;
        if let Some(&prev) = trace.log_likelihood.last() {
            trace.log_likelihood.push(ll);
            if ll - prev < cfg.tol {
                trace.converged = true;
                break;
            }
        } else {
            trace.log_likelihood.push(ll);
        }
        if iter == cfg.max_iters {
            break;
        }
        let (next, rescued) = m_step(&data, &resp, mixtures, cfg.var_floor)?;
        trace.rescued += rescued;
        model = next;
    }
    Ok((model, trace))
}

fn kmeans_refine(data: &FeatureMatrix, means: &mut [f64], k: usize, passes: usize) {
    let d = data.dim();
    for _ in 0..passes {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for x in data.rows() {
            let best = (0..k)
                .map(|j| {
                    let mu = &means[j * d..(j + 1) * d];
                    let dist: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                    (j, dist)
                })
                .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
                .0;
            counts[best] += 1;
            for (s, v) in sums[best * d..(best + 1) * d].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for i in 0..d {
                    means[j * d + i] = sums[j * d + i] / counts[j] as f64;
                }
            }
        }
    }
}

fn m_step(
    data: &FeatureMatrix,
    resp: &[f64],
    k: usize,
    var_floor: f64,
) -> Result<(GmmModel, usize)> {
    let n = data.frames();
    let d = data.dim();
    let mut mass = vec![0.0; k];
    let mut means = vec![0.0; k * d];
    for (x, r) in data.rows().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            let g = r[j];
            if g == 0.0 {
                continue;
            }
            mass[j] += g;
            for (s, v) in means[j * d..(j + 1) * d].iter_mut().zip(x) {
                *s += g * v;
            }
        }
    }
    for j in 0..k {
        if mass[j] >= EMPTY_COMPONENT_MASS {
            means[j * d..(j + 1) * d].iter_mut().for_each(|s| *s /= mass[j]);
        }
    }
    // second pass keeps the variance update free of cancellation error
    let mut vars = vec![0.0; k * d];
    for (x, r) in data.rows().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            let g = r[j];
            if g == 0.0 {
                continue;
            }
            let mu = &means[j * d..(j + 1) * d];
            for ((s, v), m) in vars[j * d..(j + 1) * d].iter_mut().zip(x).zip(mu) {
                let z = v - m;
                *s += g * z * z;
            }
        }
    }
    for j in 0..k {
        if mass[j] >= EMPTY_COMPONENT_MASS {
            for s in &mut vars[j * d..(j + 1) * d] {
                *s = (*s / mass[j]).max(var_floor);
            }
        }
    }
    let mut weights: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();

    // Re-seed empty components from the live component with the largest
    // total variance, splitting its weight.
    let mut rescued = 0;
    for j in 0..k {
        if mass[j] >= EMPTY_COMPONENT_MASS {
            continue;
        }
        rescued += 1;
        let donor = (0..k)
            .filter(|&i| mass[i] >= EMPTY_COMPONENT_MASS)
            .map(|i| (i, vars[i * d..(i + 1) * d].iter().sum::<f64>()))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, c| {
                if c.1 > acc.1 {
                    c
                } else {
                    acc
                }
            })
            .0;
        for i in 0..d {
            let sd = vars[donor * d + i].sqrt();
            means[j * d + i] = means[donor * d + i] + 0.5 * sd;
            vars[j * d + i] = vars[donor * d + i];
        }
        let half = weights[donor] / 2.0;
        weights[donor] = half;
        weights[j] = half;
        mass[j] = half * n as f64;
    }
    if rescued > 0 {
        log::warn!("gmm: re-seeded {rescued} empty component(s)");
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((GmmModel::new(weights, means, vars, d)?, rescued))
}
