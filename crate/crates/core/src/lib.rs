//! Replica analysis and approximate decoding for random linear channels whose matrix ensemble
//! is specified through the eigenvalue spectrum of HᵀH.
//!
//! The analytic modules are generic over [`scalar::Real`] and default to `f64`; the `*32`
//! aliases name the single-precision instances. Simulation (ensemble, decoder, harness) is f64.
// Range checks are written as `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod quad;
pub mod roots;
pub mod scalar;
pub mod spectra;
pub mod rmt_formula;
pub mod special;
pub mod priors_channels;
pub mod replica_rs;
pub mod ensemble;
pub mod decoder;
pub mod harness;

pub use error::{Error, Result};
pub use priors_channels::{ChannelModel, Prior};
pub use replica_rs::{AnnealedSaddle, RSFixedPoint, RSPrediction};
pub use rmt_formula::{FResult, SaddlePair};
pub use spectra::Spectrum;

pub type Spectrum32 = Spectrum<f32>;
pub type FResult32 = FResult<f32>;
pub type Prior32 = Prior<f32>;
pub type ChannelModel32 = ChannelModel<f32>;
pub type RSFixedPoint32 = RSFixedPoint<f32>;
pub type RSPrediction32 = RSPrediction<f32>;
