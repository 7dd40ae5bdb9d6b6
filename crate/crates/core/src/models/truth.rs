use nalgebra::{DMatrix, DVector};

use super::ForwardModelPair;
use crate::error::{Error, Result};
use crate::gaussian::GaussianMeasure;
use crate::linalg;
use crate::particles::{standard_normal_vector, Purpose, RngSpec};

/// A draw from `prior` on the truth stream.
pub fn draw_truth(prior: &GaussianMeasure, rng: &RngSpec) -> Result<DVector<f64>> {
    let root = prior.root()?;
    let mut stream = rng.stream(Purpose::Truth, 0, 0);
    let white = standard_normal_vector(&mut stream, prior.dim());
    Ok(prior.mean() + root.apply(&white))
}

/// A draw from `N(0, gamma)` on the noise stream. Zero covariance gives zero noise.
pub fn draw_noise(gamma: &DMatrix<f64>, rng: &RngSpec) -> Result<DVector<f64>> {
    let root = linalg::psd_root(gamma, "noise covariance")?;
    let mut stream = rng.stream(Purpose::Noise, 0, 0);
    let white = standard_normal_vector(&mut stream, gamma.nrows());
    Ok(root * white)
}

/// `accurate(truth) + η`, `η ~ N(0, gamma)`. The approximate map is never evaluated.
pub fn synthesize_data<P: ForwardModelPair + ?Sized>(
    pair: &P,
    truth: &DVector<f64>,
    gamma: &DMatrix<f64>,
    rng: &RngSpec,
) -> Result<DVector<f64>> {
    if gamma.nrows() != pair.data_dim() || gamma.ncols() != pair.data_dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise covariance is {}x{}, data dimension is {}",
            gamma.nrows(),
            gamma.ncols(),
            pair.data_dim()
        )));
    }
    Ok(pair.accurate(truth)? + draw_noise(gamma, rng)?)
}

/// Truth drawn from the prior and data synthesized from it.
pub fn truth_and_data<P: ForwardModelPair + ?Sized>(
    pair: &P,
    prior: &GaussianMeasure,
    gamma: &DMatrix<f64>,
    rng: &RngSpec,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if prior.dim() != pair.param_dim() {
        return Err(Error::DimensionMismatch(format!(
            "prior dimension {} differs from parameter dimension {}",
            prior.dim(),
            pair.param_dim()
        )));
    }
    let truth = draw_truth(prior, rng)?;
    let data = synthesize_data(pair, &truth, gamma, rng)?;
    Ok((truth, data))
}
