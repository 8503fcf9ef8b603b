//! Spectral-fidelity toolkit for image generation.
//!
//! Measures how distinguishable generated images are from real ones in the
//! frequency domain, demonstrates numerically why zero-insertion up-sampling
//! creates spectral replicas, and trains small adversarial models with an
//! optional 1D spectral discriminator that removes those artifacts.
//!
//! The pipeline: images ([`imagecore`]) are transformed into radial power
//! profiles ([`spectrum`]), which feed shallow learners ([`linmodels`]) and
//! the evaluation metrics ([`fidelity`]). The [`resample`] module verifies
//! the up-sampling replica identity, and [`ganlab`] trains toy generators
//! against spatial and spectral discriminators on top of the reverse-mode
//! engine in [`autodiff`].

pub mod autodiff;
pub mod fidelity;
pub mod ganlab;
pub mod imagecore;
pub mod linmodels;
pub mod resample;
pub mod spectrum;
