//! mrfkit: magnetic resonance fingerprinting simulation and reconstruction.
//!
//! The crate covers the full retrospective MRF pipeline: EPG fingerprint
//! simulation, SVD temporal subspace compression, undersampled cartesian
//! k-space acquisition operators (rotating spiral / shifting EPI), synthetic
//! brain phantoms, classical dictionary matching, and network-based
//! reconstruction trained with measurement-consistency and equivariance
//! losses on undersampled data alone.
//!
//! Core numerics are generic over the scalar type (`scalar::Real`, i.e. f32
//! or f64); the pipeline modules and the type aliases at the crate root pin
//! f64, which keeps gradient checks and adjoint identities tight.

pub mod acquisition;
pub mod autodiff;
pub mod dataset;
pub mod dictionary;
pub mod epg;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod linalg;
pub mod masks;
pub mod matching;
pub mod metrics;
pub mod opt;
pub mod params;
pub mod phantom;
pub mod scalar;
pub mod subspace;
pub mod surrogate;
pub mod train;
pub mod transforms;
pub mod unet;
pub mod util;

pub use error::{Error, Result};

/// Concrete f64 instantiations used by the pipeline modules.
pub type Graph = autodiff::Graph<f64>;
pub type LinearOperator = autodiff::LinearOperator<f64>;
pub type Fingerprint = epg::Fingerprint<f64>;
pub type Dictionary = dictionary::Dictionary<f64>;
pub type TemporalBasis = subspace::TemporalBasis<f64>;
pub type AcquisitionOperator = acquisition::AcquisitionOperator<f64>;
pub type Complex64 = num_complex::Complex<f64>;
