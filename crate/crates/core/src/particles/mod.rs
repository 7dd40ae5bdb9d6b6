//! Particle approximations of the iterated posteriors.
//!
//! Ensembles are immutable; every update returns a new ensemble one generation later.
//! All randomness comes from [`RngSpec`] substreams keyed by particle index, so results
//! do not depend on how work is scheduled across threads.

mod diagnostics;
mod ensemble;
mod noise;
mod rng;
mod updates;

pub use diagnostics::{
    effective_sample_size, empirical_operator_distance, ensemble_moments, kl_divergence,
    kl_divergence_delta, likelihood_record, Estimate, GridMeasure1D, LikelihoodRecord,
    TestFunction,
};
pub use ensemble::{
    log_sum_exp, normalize_log_weights, ModelErrorSample, ParticleEnsemble, WEIGHT_SUM_TOL,
};
pub use noise::{BoundedNoiseDensity, NoiseMode};
pub use rng::{standard_normal_vector, Purpose, RngSpec};
pub use updates::{
    importance_update, importance_update_with, mixture_mean, mixture_update, model_error_sample,
    resample_draw_update, sample_prior, systematic_resample, GaussianConditional, IndexRule,
    InnerSampler, PriorRejectionSampler, MAX_PROPOSALS,
};
