//! Microphone channel selection and channel weighting for multichannel
//! log-Mel features.
//!
//! Channels of one utterance are either ranked (by likelihood under a clean
//! GMM, or by reconstruction error of a clean-trained autoencoder) or fused
//! by a weight vector estimated by maximum likelihood, optionally constrained
//! to the simplex or regularized by the log-determinant of the fused-feature
//! covariance. A synthetic scene generator and an evaluation harness provide
//! ground truth without an ASR back-end.

pub mod autoencoder;
pub mod error;
pub mod features;
pub mod gmm;
pub mod harness;
pub mod io;
pub mod optim;
pub mod scene;
pub mod select;
pub mod weight;

pub use autoencoder::{
    reconstruction_error, train_autoencoder, windowize, Activation, AutoencoderModel, TrainConfig,
    CONTEXT_FRAMES, DEFAULT_HIDDEN,
};
pub use error::{Error, Result};
pub use features::{
    cmn, cmvn, cvn, log_mel, normalize, AudioBuffer, FeatureMatrix, LogMelExtractor, MelConfig,
    NormState, DEFAULT_FEATURE_DIM,
};
pub use gmm::{train_gmm, EmConfig, EmTrace, GmmModel, DEFAULT_MIXTURES, FULL_SCALE_MIXTURES};
pub use harness::{
    feature_distance, run_experiment, ExperimentConfig, Method, MethodSummary, MetricReport,
    MetricRow, Models, Scene,
};
pub use optim::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsStatus};
pub use scene::{make_scene, synth_clean, CleanInput, CleanKind, SceneMeta, SceneMode, SceneSpec};
pub use select::{
    select_ae, select_ml, select_oracle, MultichannelUtterance, SelectionMethod, SelectionResult,
};
pub use weight::{
    apply_weights, estimate_weights_jacobian, estimate_weights_ml, frame_accumulators,
    jacobian_gradient, jacobian_objective, softmax_constrain, solve_frame_weight, weighted_stats,
    FrameAccumulators, JacobianConfig, WeightEstimate, WeightKind, WeightVector,
};
