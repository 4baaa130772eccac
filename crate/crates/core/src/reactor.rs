//! Stirred chemical reactor with heat exchanger: the reference case study.

use nalgebra::{DMatrix, DVector};

use crate::lti::LtiSystem;
use crate::quantization::RectQuantizer;
use crate::signal::InputSignal;

pub const SENSOR_LEVELS: [f64; 8] = [18.38, 19.04, 19.71, 20.37, 21.04, 21.70, 22.36, 23.03];
pub const SENSOR_CUTS: [f64; 7] = [18.71, 19.38, 20.04, 20.70, 21.37, 22.03, 22.70];
pub const PRIVATE_LEVELS: [f64; 2] = [6.20, 7.68];
pub const PRIVATE_CUTS: [f64; 1] = [6.94];
pub const NOISE_ALPHABET: usize = 5;
pub const HORIZON: usize = 3;
pub const EPSILONS: [f64; 3] = [f64::INFINITY, 7.0, 2.0];
pub const LAST_WINDOW: usize = 25;

pub fn system() -> LtiSystem {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.8353, 0.0,    0.0,    0.0,
        0.0,    0.8324, 0.0,    0.0031,
        0.0,    0.0001, 0.1633, 0.0,
        0.0,    0.0001, 0.1633, 0.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 3, &[
        0.0458, 0.0,    0.0,
        0.0,    0.0457, 0.0,
        0.0,    0.0,    0.0231,
        0.0,    0.0007, 0.0006,
    ]);
    let c = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, 0.0]);
    let d = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
    let sigma_m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]));
    let sigma_w = DMatrix::from_element(1, 1, 0.1);
    let mu = DVector::from_vec(vec![6.94, 13.76, 1.0, 1.0]);
    LtiSystem::new(a, b, c, d, sigma_m, sigma_w, mu, DMatrix::identity(4, 4))
        .expect("reactor constants are valid")
}

pub fn input() -> InputSignal {
    InputSignal::Reactor
}

pub fn input_sequence(len: usize) -> Vec<DVector<f64>> {
    input().sequence(len)
}

/// 3-bit quantizer for the product temperature output.
pub fn sensor_quantizer() -> RectQuantizer {
    RectQuantizer::scalar(SENSOR_CUTS.to_vec(), SENSOR_LEVELS.to_vec())
        .expect("reactor sensor quantizer is valid")
}

/// Binary quantizer for the product concentration.
pub fn private_quantizer() -> RectQuantizer {
    RectQuantizer::scalar(PRIVATE_CUTS.to_vec(), PRIVATE_LEVELS.to_vec())
        .expect("reactor private quantizer is valid")
}
