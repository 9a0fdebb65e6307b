//! Variational sequence autoencoder over HVO patterns.
//!
//! The encoder embeds each step's hits/velocities/offsets into a token, adds
//! sinusoidal positions, runs pre-norm self-attention blocks and mean-pools
//! into the posterior mean and log-variance. The decoder broadcasts a latent
//! vector to every step, adds learned positions and mirrors the encoder
//! before projecting back to the three output grids. Forward and backward
//! passes are written out by hand and are generic over [`Scalar`].
//!
//! [`Scalar`]: crate::scalar::Scalar

mod config;
mod corpus;
mod gradcheck;
mod io;
mod loss;
mod net;
mod ops;
mod params;
mod train;
mod vae;

pub use config::{Hyperparams, TrainConfig};
pub use corpus::synth_corpus;
pub use gradcheck::{grad_check, random_samples, GradCheckConfig, GradCheckReport};
pub use io::{
    load_weights, read_weights, save_weights, weights_checksum, write_weights, WeightsHeader,
    WEIGHTS_FORMAT, WEIGHTS_VERSION,
};
pub use loss::{kl_divergence, loss, loss_and_grad, LossParts, Sample};
pub use net::{LOG_VAR_MAX, LOG_VAR_MIN};
pub use params::{Layout, ModelWeights, ParamSpec};
pub use train::{
    evaluate, split_corpus, train, train_with_progress, Adam, EpochMetrics, EvalMetrics,
    TrainReport,
};
pub use vae::{
    decode_logits, encode, extract_pattern, reparameterize, DecodedGrids, DensityMap,
    LatentGaussian, LatentVec,
};
