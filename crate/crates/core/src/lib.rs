//! Optimal additive-noise privacy mappings for quantized linear Gaussian systems.

pub mod cache;
pub mod error;
pub mod horizon;
pub mod info;
pub mod io;
pub mod lti;
pub mod mvn;
pub mod pmf;
pub mod quantization;
pub mod reactor;
pub mod signal;
pub mod solver;

pub use error::{Error, Result};
pub use lti::{GaussianDist, LiftMatrices, LtiSystem, SystemSpec};
pub use mvn::{HyperRect, IntegrationConfig, MvnIntegrator, RectProb};
pub use pmf::{CondPmf, Pmf, ShiftTable};
pub use quantization::{NoiseAlphabet, QuantizerSpec, RectQuantizer};
pub use signal::InputSignal;
pub use info::{mi_gradient, mi_of_noise, mutual_information, CostData};
pub use solver::{DistortionBudget, ProgramInstance, Solution, SolverConfig};
pub use cache::WindowCache;
pub use horizon::{Pipeline, Step, Trajectory, WindowData, WindowResult};
