//! Optical turbulence profiling from balloon soundings.
//!
//! The crate turns radiosonde pressure/temperature ascents into vertical
//! profiles of the refractive-index structure parameter Cn²(z):
//!
//! 1. [`sounding`] parses soundings and thermosonde C_T² records.
//! 2. [`prep`] resamples onto a uniform grid, computes the optical index and
//!    strips the local mean with a sliding window.
//! 3. [`estimator`] turns fluctuations into Cn² via a three-point structure
//!    function estimate, and averages or bins profiles.
//! 4. [`synth`] generates von Kármán fluctuations with known Cn² to study the
//!    estimator bias (the scale factor).
//! 5. [`models`] evaluates Hufnagel-Valley style profiles, calibrates scale
//!    factors and fits the generalized model.

pub mod error;
pub mod estimator;
pub mod models;
pub mod optimize;
pub mod prep;
pub mod quadrature;
pub mod sounding;
pub mod synth;

pub use error::{Error, Result};
pub use estimator::{
    average_profiles, bin_average, bin_average_with_origin, empirical_structure_function,
    estimate_cn2, estimate_from_sounding, estimate_from_uniform, AveragedProfile, Cn2Profile, EstimatorConfig,
};
pub use models::{
    calibrate_scale_factor, fit_generalized_hv, generalized_hv_cn2, hv_cn2, Calibration,
    CalibrationBand, FitMask, FitOptions, FitReport, GaussianLayer, GeneralizedHVParams, HVParams,
};
pub use prep::{
    extract_fluctuations, refractive_index, resample_levels, resample_profile, window_mean,
    FluctuationProfile, UniformProfile,
};
pub use sounding::{
    ct2_to_cn2, parse_sounding, parse_thermosonde, AltitudeReference, LevelRecord, SoundingFormat,
    SoundingMetadata, SoundingProfile, ThermosondeProfile,
};
pub use synth::{
    phi_n, scale_factor_study, subgrid_variance, synthesize_fluctuations, theoretical_structure_function,
    v_n,
    SpectrumParams, StudyConfig, StudyRow, SyntheticField,
};
