//! Maximum-likelihood channel weighting in the log-Mel domain.
//!
//! Fused features are `o_t = X_t w`, where the `D x C` matrix `X_t` holds the
//! `C` channel vectors of frame `t`. Under a diagonal GMM with posteriors
//! `γ_m(t)` frozen, the per-frame auxiliary function is the quadratic
//! `-½ wᵀA_t w + B_tᵀw + const` with
//!
//! ```text
//! A_t = Σ_m γ_m(t) X_tᵀ Σ_m⁻¹ X_t        (C x C)
//! B_t = Σ_m γ_m(t) X_tᵀ Σ_m⁻¹ μ_m        (C)
//! ```
//!
//! whose maximizer is `A_t⁻¹ B_t`. Three estimators are provided:
//!
//! * raw ML: per-frame solutions averaged over the utterance, refreshed by EM;
//! * softmax: the raw weights mapped onto the probability simplex;
//! * Jacobian: the likelihood plus `β/2 · log|Ĉ|`, where `Ĉ` is the sample
//!   covariance of the fused features, maximized by L-BFGS inside an EM loop.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, NormState};
use crate::gmm::{log_sum_exp, GmmModel};
use crate::optim::{lbfgs_minimize, LbfgsConfig, LbfgsStatus};
use crate::select::MultichannelUtterance;

/// Default ridge added to `A_t` before solving.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Relative Cholesky pivot below which a system counts as singular.
const SINGULAR_PIVOT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    RawMl,
    Softmax,
    Jacobian,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::RawMl => "raw_ml",
            WeightKind::Softmax => "softmax",
            WeightKind::Jacobian => "jacobian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub kind: WeightKind,
}

impl WeightVector {
    pub fn uniform(channels: usize, kind: WeightKind) -> Self {
        Self {
            values: vec![1.0 / channels as f64; channels],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `A_t` and `B_t` for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAccumulators {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStats {
    pub mean: DVector<f64>,
    /// Regularized covariance `Ĉ + εI`.
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianConfig {
    pub beta: f64,
    /// `ε` added to the diagonal of `Ĉ`.
    pub cov_reg: f64,
    pub em_iters: usize,
    pub ridge: f64,
    /// Starting weights; uniform `1/C` when `None`.
    pub initial: Option<Vec<f64>>,
    /// Raw ML only: solve the pooled system instead of averaging frames.
    pub pooled: bool,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            cov_reg: 1e-6,
            em_iters: 3,
            ridge: DEFAULT_RIDGE,
            initial: None,
            pooled: false,
        }
    }
}

impl JacobianConfig {
    fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidConfig("beta must be non-negative".into()));
        }
        if !(self.cov_reg > 0.0) {
            return Err(Error::InvalidConfig("covariance regularizer must be positive".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be non-negative".into()));
        }
        Ok(())
    }

    fn start(&self, channels: usize) -> Result<Vec<f64>> {
        match &self.initial {
            Some(w) if w.len() != channels => Err(Error::DimensionMismatch {
                expected: channels,
                got: w.len(),
            }),
            Some(w) => Ok(w.clone()),
            None => Ok(vec![1.0 / channels as f64; channels]),
        }
    }
}

/// Outcome of a weight estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEstimate {
    pub weights: WeightVector,
    /// Mean fused log-likelihood (raw ML) or the Jacobian objective.
    pub objective: f64,
    /// Objective after each outer EM iteration, starting from the initial weights.
    pub outer_trace: Vec<f64>,
    pub skipped_frames: usize,
    pub warning: Option<String>,
}

fn check_model(model: &GmmModel, u: &MultichannelUtterance) -> Result<()> {
    if model.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: u.dim(),
        });
    }
    Ok(())
}

fn check_weights(u: &MultichannelUtterance, w: &[f64]) -> Result<()> {
    if w.len() != u.num_channels() {
        return Err(Error::DimensionMismatch {
            expected: u.num_channels(),
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weight vector"));
    }
    Ok(())
}

fn fuse_frame(stack: &[&[f64]], w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, wc) in stack.iter().zip(w) {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o += wc * v;
        }
    }
}

/// `Σ_c w_c x_c(t)` for every frame.
pub fn apply_weights(u: &MultichannelUtterance, w: &[f64]) -> Result<FeatureMatrix> {
    check_weights(u, w)?;
    let (t_len, d) = (u.frames(), u.dim());
    let mut data = vec![0.0; t_len * d];
    for (t, out) in data.chunks_exact_mut(d).enumerate() {
        fuse_frame(&u.frame_stack(t), w, out);
    }
    let state = if u.channels().iter().all(|c| c.state() != NormState::Raw) {
        NormState::Cmn
    } else {
        NormState::Raw
    };
    FeatureMatrix::new(data, t_len, d, state)
}

/// Posterior-weighted precisions `P_d = Σ_m γ_m/σ²_md` and precision-weighted
/// means `Q_d = Σ_m γ_m μ_md/σ²_md`.
fn precision_stats(model: &GmmModel, gamma: &[f64], p: &mut [f64], q: &mut [f64]) {
    p.iter_mut().for_each(|v| *v = 0.0);
    q.iter_mut().for_each(|v| *v = 0.0);
    for (m, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for ((pd, qd), (inv, mu)) in p
            .iter_mut()
            .zip(q.iter_mut())
            .zip(model.inv_variance(m).iter().zip(model.mean(m)))
        {
            *pd += g * inv;
            *qd += g * inv * mu;
        }
    }
}

fn accumulate_frame(stack: &[&[f64]], p: &[f64], q: &[f64], a: &mut DMatrix<f64>, b: &mut DVector<f64>, scale: f64) {
    let c = stack.len();
    for i in 0..c {
        let xi = stack[i];
        let mut bi = 0.0;
        for (x, qd) in xi.iter().zip(q) {
            bi += x * qd;
        }
        b[i] += scale * bi;
        for j in i..c {
            let xj = stack[j];
            let mut s = 0.0;
            for ((u, v), pd) in xi.iter().zip(xj.iter()).zip(p) {
                s += u * v * pd;
            }
            a[(i, j)] += scale * s;
            if i != j {
                a[(j, i)] += scale * s;
            }
        }
    }
}

/// `A_t`, `B_t` for one frame given its posteriors, in `O(M·D + D·C²)`.
pub fn frame_accumulators(
    model: &GmmModel,
    stack: &[&[f64]],
    gamma: &[f64],
) -> Result<FrameAccumulators> {
    if gamma.len() != model.mixtures() {
        return Err(Error::DimensionMismatch {
            expected: model.mixtures(),
            got: gamma.len(),
        });
    }
    if let Some(x) = stack.iter().find(|x| x.len() != model.dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let d = model.dim();
    let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
    precision_stats(model, gamma, &mut p, &mut q);
    let c = stack.len();
    let mut acc = FrameAccumulators {
        a: DMatrix::zeros(c, c),
        b: DVector::zeros(c),
    };
    accumulate_frame(stack, &p, &q, &mut acc.a, &mut acc.b, 1.0);
    Ok(acc)
}

fn cholesky_checked(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    (min_pivot > SINGULAR_PIVOT * scale).then_some(chol)
}

/// `(A + ridge·I)⁻¹ B`, the maximizer of `-½ wᵀA w + Bᵀw`.
pub fn solve_frame_weight(acc: &FrameAccumulators, ridge: f64) -> Result<Vec<f64>> {
    let c = acc.b.len();
    let m = &acc.a + DMatrix::identity(c, c) * ridge;
    let chol = cholesky_checked(m).ok_or(Error::DegenerateFrame)?;
    let w = chol.solve(&acc.b);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFrame);
    }
    Ok(w.as_slice().to_vec())
}

/// Mean per-frame log-likelihood of the fused features.
fn fused_log_likelihood(model: &GmmModel, u: &MultichannelUtterance, w: &[f64]) -> f64 {
    let d = u.dim();
    let mut o = vec![0.0; d];
    let mut buf = vec![0.0; model.mixtures()];
    let mut total = 0.0;
    for t in 0..u.frames() {
        fuse_frame(&u.frame_stack(t), w, &mut o);
        model.weighted_log_densities(&o, &mut buf);
        total += log_sum_exp(&buf);
    }
    total / u.frames() as f64
}

/// Maximum-likelihood weights: EM over posteriors of the fused features, with
/// the per-frame solutions averaged over the utterance (or a pooled solve when
/// `cfg.pooled`). Falls back to uniform weights when every frame is degenerate.
pub fn estimate_weights_ml(
    model: &GmmModel,
    u: &MultichannelUtterance,
    cfg: &JacobianConfig,
) -> Result<WeightEstimate> {
    check_model(model, u)?;
    cfg.validate()?;
    let c = u.num_channels();
    let d = u.dim();
    let mut w = cfg.start(c)?;
    let mut o = vec![0.0; d];
    let mut gamma = vec![0.0; model.mixtures()];
    let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
    let mut trace = vec![fused_log_likelihood(model, u, &w)];
    let mut skipped = 0;
    let mut warning = None;

    for _ in 0..cfg.em_iters {
        let mut sum_w = vec![0.0; c];
        let mut used = 0usize;
        let mut pooled_a = DMatrix::zeros(c, c);
        let mut pooled_b = DVector::zeros(c);
        skipped = 0;
        for t in 0..u.frames() {
            let stack = u.frame_stack(t);
            fuse_frame(&stack, &w, &mut o);
            model.posteriors_into(&o, &mut gamma);
            precision_stats(model, &gamma, &mut p, &mut q);
            if cfg.pooled {
                accumulate_frame(&stack, &p, &q, &mut pooled_a, &mut pooled_b, 1.0);
                continue;
            }
            let mut acc = FrameAccumulators {
                a: DMatrix::zeros(c, c),
                b: DVector::zeros(c),
            };
            accumulate_frame(&stack, &p, &q, &mut acc.a, &mut acc.b, 1.0);
            match solve_frame_weight(&acc, cfg.ridge) {
                Ok(wt) => {
                    used += 1;
                    sum_w.iter_mut().zip(&wt).for_each(|(s, v)| *s += v);
                }
                Err(_) => skipped += 1,
            }
        }
        let next = if cfg.pooled {
            let n = u.frames() as f64;
            solve_frame_weight(
                &FrameAccumulators {
                    a: pooled_a / n,
                    b: pooled_b / n,
                },
                cfg.ridge,
            )
            .ok()
        } else if used > 0 {
            Some(sum_w.iter().map(|s| s / used as f64).collect())
        } else {
            None
        };
        match next {
            Some(nw) => w = nw,
            None => {
                w = vec![1.0 / c as f64; c];
                warning = Some("weighting failed, fell back to uniform weights".to_string());
                log::warn!("raw ML weighting: all frames degenerate, using uniform weights");
                trace.push(fused_log_likelihood(model, u, &w));
                break;
            }
        }
        trace.push(fused_log_likelihood(model, u, &w));
    }
    Ok(WeightEstimate {
        objective: *trace.last().unwrap(),
        weights: WeightVector {
            values: w,
            kind: WeightKind::RawMl,
        },
        outer_trace: trace,
        skipped_frames: skipped,
        warning,
    })
}

/// Map weights onto the open simplex: `exp(w_c) / Σ exp(w_k)`.
pub fn softmax_constrain(w: &WeightVector) -> WeightVector {
    let max = w.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    WeightVector {
        values: exps.iter().map(|e| e / total).collect(),
        kind: WeightKind::Softmax,
    }
}

/// Per-channel means and centred cross-covariances
/// `S_cc' = (1/T) Σ_t x̃_c(t) x̃_c'(t)ᵀ`, so that `Ĉ(w) = Σ w_c w_c' S_cc'`.
#[derive(Debug, Clone)]
pub struct ChannelCovariances {
    means: Vec<DVector<f64>>,
    /// Row-major `C x C` grid of `D x D` blocks.
    blocks: Vec<DMatrix<f64>>,
    channels: usize,
    dim: usize,
}

impl ChannelCovariances {
    pub fn new(u: &MultichannelUtterance) -> Result<Self> {
        let (t_len, d, c) = (u.frames(), u.dim(), u.num_channels());
        if t_len < 2 {
            return Err(Error::InsufficientData {
                frames: t_len,
                mixtures: 2,
            });
        }
        let mut means = Vec::with_capacity(c);
        let mut centred = Vec::with_capacity(c);
        for ch in u.channels() {
            let mean = DVector::from_vec(ch.column_means());
            let y = DMatrix::from_fn(d, t_len, |i, t| ch.get(t, i) - mean[i]);
            means.push(mean);
            centred.push(y);
        }
        let mut blocks = vec![DMatrix::zeros(0, 0); c * c];
        for i in 0..c {
            for j in i..c {
                let s = (&centred[i] * centred[j].transpose()) / t_len as f64;
                if i != j {
                    blocks[j * c + i] = s.transpose();
                }
                blocks[i * c + j] = s;
            }
        }
        Ok(Self {
            means,
            blocks,
            channels: c,
            dim: d,
        })
    }

    fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i * self.channels + j]
    }

    pub fn weighted_stats(&self, w: &[f64], eps: f64) -> WeightedStats {
        let mut mean = DVector::zeros(self.dim);
        for (m, wc) in self.means.iter().zip(w) {
            mean.axpy(*wc, m, 1.0);
        }
        let mut cov = DMatrix::identity(self.dim, self.dim) * eps;
        for i in 0..self.channels {
            for j in 0..self.channels {
                let s = w[i] * w[j];
                cov.zip_apply(self.block(i, j), |a, b| *a += s * b);
            }
        }
        WeightedStats { mean, cov }
    }

    /// `log|Ĉ(w)|` and, when requested, its gradient with respect to `w`.
    fn log_det(&self, w: &[f64], eps: f64, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let stats = self.weighted_stats(w, eps);
        let chol = Cholesky::new(stats.cov).ok_or(Error::Factorization("weighted covariance"))?;
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !with_grad {
            return Ok((log_det, Vec::new()));
        }
        let inv = chol.inverse();
        // ∂log|Ĉ|/∂w_c = Tr(Ĉ⁻¹(D_c + D_cᵀ)) = 2 Σ_k w_k Tr(Ĉ⁻¹ S_kc)
        let grad = (0..self.channels)
            .map(|c| {
                2.0 * (0..self.channels)
                    .map(|k| w[k] * inv.dot(self.block(k, c)))
                    .sum::<f64>()
            })
            .collect();
        Ok((log_det, grad))
    }
}

/// Mean and regularized covariance of the fused features.
pub fn weighted_stats(u: &MultichannelUtterance, w: &[f64], eps: f64) -> Result<WeightedStats> {
    check_weights(u, w)?;
    Ok(ChannelCovariances::new(u)?.weighted_stats(w, eps))
}

/// `(1/T) Σ_t log p(X_t w | Λ) + β/2 · log|Ĉ(w)|`.
pub fn jacobian_objective(
    model: &GmmModel,
    u: &MultichannelUtterance,
    w: &[f64],
    cfg: &JacobianConfig,
) -> Result<f64> {
    check_model(model, u)?;
    check_weights(u, w)?;
    cfg.validate()?;
    let covs = ChannelCovariances::new(u)?;
    objective_with(model, u, &covs, w, cfg)
}

fn objective_with(
    model: &GmmModel,
    u: &MultichannelUtterance,
    covs: &ChannelCovariances,
    w: &[f64],
    cfg: &JacobianConfig,
) -> Result<f64> {
    let ll = fused_log_likelihood(model, u, w);
    if cfg.beta == 0.0 {
        return Ok(ll);
    }
    let (log_det, _) = covs.log_det(w, cfg.cov_reg, false)?;
    Ok(ll + 0.5 * cfg.beta * log_det)
}

/// Gradient of [`jacobian_objective`].
///
/// The likelihood term uses `(1/T) Σ_t (B_t - A_t w)` with posteriors taken
/// at `w`, which equals the exact gradient of the mixture log-likelihood.
pub fn jacobian_gradient(
    model: &GmmModel,
    u: &MultichannelUtterance,
    w: &[f64],
    cfg: &JacobianConfig,
) -> Result<Vec<f64>> {
    check_model(model, u)?;
    check_weights(u, w)?;
    cfg.validate()?;
    let covs = ChannelCovariances::new(u)?;
    let (t_len, d, c) = (u.frames(), u.dim(), u.num_channels());
    let mut o = vec![0.0; d];
    let mut gamma = vec![0.0; model.mixtures()];
    let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
    let mut grad = vec![0.0; c];
    for t in 0..t_len {
        let stack = u.frame_stack(t);
        fuse_frame(&stack, w, &mut o);
        model.posteriors_into(&o, &mut gamma);
        precision_stats(model, &gamma, &mut p, &mut q);
        for (g, x) in grad.iter_mut().zip(&stack) {
            let mut s = 0.0;
            for i in 0..d {
                s += x[i] * (q[i] - p[i] * o[i]);
            }
            *g += s;
        }
    }
    grad.iter_mut().for_each(|g| *g /= t_len as f64);
    if cfg.beta != 0.0 {
        let (_, ld) = covs.log_det(w, cfg.cov_reg, true)?;
        for (g, l) in grad.iter_mut().zip(ld) {
            *g += 0.5 * cfg.beta * l;
        }
    }
    Ok(grad)
}

/// The Jacobian objective with posteriors frozen at a reference weight `w̄`:
///
/// `-½ wᵀĀw + B̄ᵀw + κ + β/2 · log|Ĉ(w)|`
///
/// where `Ā`, `B̄` are frame-averaged accumulators and `κ` holds the
/// `w`-independent terms, including the posterior entropy, so the value at
/// `w̄` equals the true objective there and lower-bounds it elsewhere.
pub struct FrozenObjective<'a> {
    a: DMatrix<f64>,
    b: DVector<f64>,
    constant: f64,
    covs: &'a ChannelCovariances,
    beta: f64,
    eps: f64,
}

impl<'a> FrozenObjective<'a> {
    pub fn new(
        model: &GmmModel,
        u: &MultichannelUtterance,
        w_ref: &[f64],
        covs: &'a ChannelCovariances,
        cfg: &JacobianConfig,
    ) -> Result<Self> {
        check_model(model, u)?;
        check_weights(u, w_ref)?;
        let (t_len, d, c) = (u.frames(), u.dim(), u.num_channels());
        let mix = model.mixtures();
        // w-independent part of log(ω_m N(o; m)) for each component
        let comp_const: Vec<f64> = (0..mix)
            .map(|m| {
                let quad: f64 = model
                    .mean(m)
                    .iter()
                    .zip(model.inv_variance(m))
                    .map(|(mu, inv)| mu * mu * inv)
                    .sum();
                model.log_norm(m) - 0.5 * quad
            })
            .collect();
        let mut a = DMatrix::zeros(c, c);
        let mut b = DVector::zeros(c);
        let mut constant = 0.0;
        let mut o = vec![0.0; d];
        let mut gamma = vec![0.0; mix];
        let (mut p, mut q) = (vec![0.0; d], vec![0.0; d]);
        let scale = 1.0 / t_len as f64;
        for t in 0..t_len {
            let stack = u.frame_stack(t);
            fuse_frame(&stack, w_ref, &mut o);
            model.posteriors_into(&o, &mut gamma);
            precision_stats(model, &gamma, &mut p, &mut q);
            accumulate_frame(&stack, &p, &q, &mut a, &mut b, scale);
            for (g, k) in gamma.iter().zip(&comp_const) {
                if *g > 0.0 {
                    constant += scale * g * (k - g.ln());
                }
            }
        }
        Ok(Self {
            a,
            b,
            constant,
            covs,
            beta: cfg.beta,
            eps: cfg.cov_reg,
        })
    }

    /// Frame-averaged `Ā = (1/T) Σ A_t`.
    pub fn pooled_a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Frame-averaged `B̄ = (1/T) Σ B_t`.
    pub fn pooled_b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let wv = DVector::from_column_slice(w);
        let quad = -0.5 * wv.dot(&(&self.a * &wv)) + self.b.dot(&wv) + self.constant;
        if self.beta == 0.0 {
            return Ok(quad);
        }
        let (log_det, _) = self.covs.log_det(w, self.eps, false)?;
        Ok(quad + 0.5 * self.beta * log_det)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let wv = DVector::from_column_slice(w);
        let mut g = &self.b - &self.a * &wv;
        if self.beta != 0.0 {
            let (_, ld) = self.covs.log_det(w, self.eps, true)?;
            for (gi, l) in g.iter_mut().zip(ld) {
                *gi += 0.5 * self.beta * l;
            }
        }
        Ok(g.as_slice().to_vec())
    }
}

/// Jacobian-constrained weights: each outer iteration freezes the posteriors
/// at the current weights and maximizes the frozen objective with L-BFGS.
///
/// Utterances shorter than two frames fall back to uniform weights with a
/// warning; an optimizer failure keeps its best iterate and sets the warning.
pub fn estimate_weights_jacobian(
    model: &GmmModel,
    u: &MultichannelUtterance,
    cfg: &JacobianConfig,
    lbfgs: &LbfgsConfig,
) -> Result<WeightEstimate> {
    check_model(model, u)?;
    cfg.validate()?;
    let c = u.num_channels();
    let mut w = cfg.start(c)?;
    if u.frames() < 2 {
        let w = vec![1.0 / c as f64; c];
        let ll = fused_log_likelihood(model, u, &w);
        return Ok(WeightEstimate {
            weights: WeightVector {
                values: w,
                kind: WeightKind::Jacobian,
            },
            objective: ll,
            outer_trace: vec![ll],
            skipped_frames: 0,
            warning: Some("utterance too short for covariance, fell back to uniform weights".into()),
        });
    }
    let covs = ChannelCovariances::new(u)?;
    let mut trace = vec![objective_with(model, u, &covs, &w, cfg)?];
    let mut warning = None;
    for _ in 0..cfg.em_iters {
        let frozen = FrozenObjective::new(model, u, &w, &covs, cfg)?;
        let result = lbfgs_minimize(
            |v: &[f64]| frozen.value(v).map(|f| -f).unwrap_or(f64::INFINITY),
            |v: &[f64]| {
                frozen
                    .gradient(v)
                    .map(|g| g.into_iter().map(|x| -x).collect())
                    .unwrap_or_else(|_| vec![f64::NAN; v.len()])
            },
            &w,
            lbfgs,
        )?;
        if result.status == LbfgsStatus::LineSearchFailed && result.grad_norm > lbfgs.grad_tol * 1e3 {
            warning = Some(format!(
                "L-BFGS line search failed (|g| = {:.3e}); kept best iterate",
                result.grad_norm
            ));
            log::warn!("jacobian weighting: line search failed at |g| = {:.3e}", result.grad_norm);
        }
        w = result.x;
        trace.push(objective_with(model, u, &covs, &w, cfg)?);
    }
    Ok(WeightEstimate {
        objective: *trace.last().unwrap(),
        weights: WeightVector {
            values: w,
            kind: WeightKind::Jacobian,
        },
        outer_trace: trace,
        skipped_frames: 0,
        warning,
    })
}
