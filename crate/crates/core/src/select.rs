//! Per-utterance channel selection: maximum GMM likelihood, minimum
//! autoencoder reconstruction error, or distance to a clean reference.

use crate::autoencoder::{reconstruction_error, AutoencoderModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::GmmModel;

/// `C` time-aligned channels sharing `(T, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelUtterance {
    channels: Vec<FeatureMatrix>,
}

impl MultichannelUtterance {
    pub fn new(channels: Vec<FeatureMatrix>) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel list"))?;
        let (t, d) = (first.frames(), first.dim());
        for c in &channels[1..] {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
            if c.frames() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    got: c.frames(),
                });
            }
        }
        Ok(Self { channels })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn frames(&self) -> usize {
        self.channels[0].frames()
    }

    pub fn dim(&self) -> usize {
        self.channels[0].dim()
    }

    pub fn channels(&self) -> &[FeatureMatrix] {
        &self.channels
    }

    /// Channel by 1-based id.
    pub fn channel(&self, id: usize) -> &FeatureMatrix {
        &self.channels[id - 1]
    }

    pub fn into_channels(self) -> Vec<FeatureMatrix> {
        self.channels
    }

    /// The `C` feature vectors of frame `t` (the columns of `X_t`).
    pub fn frame_stack(&self, t: usize) -> Vec<&[f64]> {
        self.channels.iter().map(|c| c.row(t)).collect()
    }

    /// Apply the same transform to every channel.
    pub fn map_channels(&self, f: impl Fn(&FeatureMatrix) -> FeatureMatrix) -> Self {
        Self {
            channels: self.channels.iter().map(f).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMethod {
    MaxLikelihood,
    Autoencoder,
    Oracle,
}

impl SelectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::MaxLikelihood => "ml",
            SelectionMethod::Autoencoder => "ae",
            SelectionMethod::Oracle => "oracle",
        }
    }

    /// Whether larger scores are better.
    pub fn maximizes(self) -> bool {
        matches!(self, SelectionMethod::MaxLikelihood)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// 1-based channel id.
    pub chosen: usize,
    pub scores: Vec<f64>,
    pub method: SelectionMethod,
}

/// Index of the best score; the lowest id wins ties.
fn best_channel(scores: &[f64], maximize: bool) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let better = if maximize { s > scores[best] } else { s < scores[best] };
        if better {
            best = i;
        }
    }
    best + 1
}

fn finish(scores: Vec<f64>, method: SelectionMethod) -> SelectionResult {
    SelectionResult {
        chosen: best_channel(&scores, method.maximizes()),
        scores,
        method,
    }
}

/// Pick the channel whose features are most likely under the clean GMM.
/// Channels are expected to be CMN+CVN normalized.
pub fn select_ml(model: &GmmModel, u: &MultichannelUtterance) -> Result<SelectionResult> {
    let scores = u
        .channels
        .iter()
        .map(|c| model.utterance_score(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(scores, SelectionMethod::MaxLikelihood))
}

/// Pick the channel the clean autoencoder reconstructs best. Channels are
/// expected to be CMN normalized.
pub fn select_ae(model: &AutoencoderModel, u: &MultichannelUtterance) -> Result<SelectionResult> {
    let scores = u
        .channels
        .iter()
        .map(|c| reconstruction_error(model, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(scores, SelectionMethod::Autoencoder))
}

/// Pick the channel closest (Frobenius) to the clean reference.
pub fn select_oracle(u: &MultichannelUtterance, clean: &FeatureMatrix) -> Result<SelectionResult> {
    if clean.frames() != u.frames() || clean.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.frames() * u.dim(),
            got: clean.frames() * clean.dim(),
        });
    }
    let scores = u
        .channels
        .iter()
        .map(|c| {
            c.as_slice()
                .iter()
                .zip(clean.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(finish(scores, SelectionMethod::Oracle))
}
