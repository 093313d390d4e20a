//! Analytic test bed: a curved ground truth on `[0, 1]` observed through
//! affine and quadratic computational models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ForwardModel, InputPoint, ParamSpec, ParameterSpace, Prior};

/// Upper edge of the optimizer box for every illustrative coefficient.
pub const COEFF_UPPER: f64 = 10.0;

/// Ground truth `xi + sin(pi xi) / 3`.
pub fn truth(xi: f64) -> f64 {
    xi + (std::f64::consts::PI * xi).sin() / 3.0
}

pub fn predict_affine(xi: f64, a: f64, b: f64) -> f64 {
    a * xi + b
}

pub fn predict_quadratic(xi: f64, a: f64, b: f64, c: f64) -> f64 {
    a * xi + b + c * xi * xi
}

fn xi_of(input: &InputPoint) -> Result<f64> {
    input
        .features
        .first()
        .copied()
        .ok_or_else(|| Error::invalid("illustrative inputs need one covariate xi"))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AffineModel;

impl ForwardModel for AffineModel {
    fn n_params(&self) -> usize {
        2
    }

    fn predict(&self, input: &InputPoint, theta: &[f64]) -> Result<f64> {
        Ok(predict_affine(xi_of(input)?, theta[0], theta[1]))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct QuadraticModel;

impl ForwardModel for QuadraticModel {
    fn n_params(&self) -> usize {
        3
    }

    fn predict(&self, input: &InputPoint, theta: &[f64]) -> Result<f64> {
        Ok(predict_quadratic(xi_of(input)?, theta[0], theta[1], theta[2]))
    }
}

/// Domain of the quadratic coefficient `c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureDomain {
    /// `c` in `[-10, 10]` with a standard Gaussian prior.
    #[default]
    Real,
    /// `c` in `[0, 10]` with a truncated standard Gaussian, like `a` and `b`.
    NonNegative,
}

fn half_gaussian(name: &str) -> ParamSpec {
    ParamSpec::new(name, 0.0, COEFF_UPPER, Prior::Gaussian { mean: 0.0, sd: 1.0 })
}

/// `(a, b)` on `[0, 10]^2`, independent truncated standard Gaussian priors.
pub fn affine_space() -> ParameterSpace {
    ParameterSpace::new(vec![half_gaussian("slope"), half_gaussian("intercept")])
        .expect("static parameter space")
}

pub fn quadratic_space(curvature: CurvatureDomain) -> ParameterSpace {
    let c = match curvature {
        CurvatureDomain::Real => {
            ParamSpec::new("curvature", -COEFF_UPPER, COEFF_UPPER, Prior::Gaussian { mean: 0.0, sd: 1.0 })
        }
        CurvatureDomain::NonNegative => half_gaussian("curvature"),
    };
    ParameterSpace::new(vec![half_gaussian("slope"), half_gaussian("intercept"), c])
        .expect("static parameter space")
}

/// `n` readings at `xi ~ U[0,1]` of the ground truth plus `N(0, sigma^2)` noise.
/// `sigma = 0` gives exact truth values (the dataset then records `sigma` as
/// 1e-12 to keep the noise scales positive).
pub fn generate_illustrative_data(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut inputs = Vec::with_capacity(n);
    let mut readings = Vec::with_capacity(n);
    for i in 0..n {
        let xi: f64 = rng.random();
        let eps: f64 = noise.sample(&mut rng);
        inputs.push(InputPoint::scalar(i, xi));
        readings.push(truth(xi) + sigma * eps);
    }
    let sd = if sigma > 0.0 { sigma } else { 1e-12 };
    Dataset::new(inputs, readings, vec![sd; n])
}
