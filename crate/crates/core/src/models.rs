//! Hufnagel-Valley profiles, scale-factor calibration and generalized fits.
//!
//! Altitudes passed to the analytic models are what the caller says they
//! are. Hufnagel-Valley is defined above sea level while estimated profiles
//! are above ground, so the calibration and fit entry points take an
//! explicit `altitude_offset` (station elevation) that is added to profile
//! altitudes before the model is evaluated. A zero offset compares
//! above-ground profiles to the model directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Cn2Profile;
use crate::optimize::{nelder_mead_restarted, NelderMeadOptions};

/// Two-parameter Hufnagel-Valley profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HVParams {
    /// rms high-altitude wind speed w, m/s
    pub wind_speed: f64,
    /// near-ground Cn² A, m^(-2/3)
    pub ground_cn2: f64,
}

impl HVParams {
    /// HV-5/7: w = 21 m/s, A = 1.7e-14 m^(-2/3).
    pub const HV57: HVParams = HVParams {
        wind_speed: 21.0,
        ground_cn2: 1.7e-14,
    };

    pub fn new(wind_speed: f64, ground_cn2: f64) -> Result<Self> {
        if !(wind_speed > 0.0 && ground_cn2 > 0.0) {
            return Err(Error::Config(format!(
                "HV parameters must be positive, got w = {wind_speed}, A = {ground_cn2}"
            )));
        }
        Ok(HVParams {
            wind_speed,
            ground_cn2,
        })
    }
}

/// HV troposphere term coefficient, m^(-2/3).
pub const HV_TROPOSPHERE_CN2: f64 = 2.7e-16;

pub fn hv_cn2(z: f64, params: &HVParams) -> f64 {
    let w = params.wind_speed / 27.0;
    0.00594 * w * w * (z / 1e5).powi(10) * (-z / 1000.0).exp()
        + HV_TROPOSPHERE_CN2 * (-z / 1500.0).exp()
        + params.ground_cn2 * (-z / 100.0).exp()
}

/// An isolated turbulent layer with a Gaussian shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLayer {
    #[serde(rename = "E")]
    pub magnitude: f64,
    #[serde(rename = "H_E")]
    pub altitude: f64,
    #[serde(rename = "e")]
    pub thickness: f64,
}

impl GaussianLayer {
    fn eval(&self, z: f64) -> f64 {
        let u = (z - self.altitude) / self.thickness;
        self.magnitude * (-0.5 * u * u).exp()
    }
}

/// Generalized Hufnagel-Valley coefficients, serialized with their usual
/// symbols (`A`, `H_A`, ... `d`, layers as `E`, `H_E`, `e`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedHVParams {
    #[serde(rename = "A")]
    pub surface_cn2: f64,
    #[serde(rename = "H_A")]
    pub surface_scale: f64,
    #[serde(rename = "B")]
    pub troposphere_cn2: f64,
    #[serde(rename = "H_B")]
    pub troposphere_scale: f64,
    #[serde(rename = "C")]
    pub tropopause_cn2: f64,
    #[serde(rename = "H_C")]
    pub tropopause_scale: f64,
    #[serde(rename = "D")]
    pub layer_cn2: f64,
    #[serde(rename = "H_D")]
    pub layer_altitude: f64,
    #[serde(rename = "d")]
    pub layer_thickness: f64,
    #[serde(default)]
    pub extra_layers: Vec<GaussianLayer>,
}

impl GeneralizedHVParams {
    /// Fitted coefficients reported for Trappes (2020, dz = 200 m).
    pub fn trappes() -> Self {
        GeneralizedHVParams {
            surface_cn2: 1.32e-13,
            surface_scale: 100.0,
            troposphere_cn2: 2.7e-16,
            troposphere_scale: 1645.0,
            tropopause_cn2: 2.07e-4,
            tropopause_scale: 1200.0,
            layer_cn2: 1.37e-17,
            layer_altitude: 12_000.0,
            layer_thickness: 1200.0,
            extra_layers: Vec::new(),
        }
    }

    /// Fitted coefficients reported for Hilo, including the 2.2 km layer.
    pub fn hilo() -> Self {
        GeneralizedHVParams {
            surface_cn2: 4.66e-14,
            surface_scale: 100.0,
            troposphere_cn2: 2.7e-16,
            troposphere_scale: 2006.0,
            tropopause_cn2: 2.96e-5,
            tropopause_scale: 1340.0,
            layer_cn2: 4.67e-18,
            layer_altitude: 17_000.0,
            layer_thickness: 1700.0,
            extra_layers: vec![GaussianLayer {
                magnitude: 1.59e-16,
                altitude: 2200.0,
                thickness: 300.0,
            }],
        }
    }

    /// HV-equivalent coefficients without the Gaussian layer.
    pub fn from_hv(hv: &HVParams) -> Self {
        let w = hv.wind_speed / 27.0;
        GeneralizedHVParams {
            surface_cn2: hv.ground_cn2,
            surface_scale: 100.0,
            troposphere_cn2: HV_TROPOSPHERE_CN2,
            troposphere_scale: 1500.0,
            tropopause_cn2: 0.00594 * w * w,
            tropopause_scale: 1000.0,
            layer_cn2: 0.0,
            layer_altitude: 12_000.0,
            layer_thickness: 1000.0,
            extra_layers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        for (name, value) in self.param_names().iter().zip(&v) {
            if !value.is_finite() || *value < 0.0 {
                return Err(Error::Config(format!("{name} = {value} must be non-negative")));
            }
            if !is_magnitude(name) && *value <= 0.0 {
                return Err(Error::Config(format!("{name} = {value} must be positive")));
            }
        }
        Ok(())
    }

    /// Parameter symbols in vector order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["A", "H_A", "B", "H_B", "C", "H_C", "D", "H_D", "d"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let k = self.extra_layers.len();
        for i in 0..k {
            let suffix = if k == 1 { String::new() } else { (i + 1).to_string() };
            names.push(format!("E{suffix}"));
            names.push(format!("H_E{suffix}"));
            names.push(format!("e{suffix}"));
        }
        names
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.surface_cn2,
            self.surface_scale,
            self.troposphere_cn2,
            self.troposphere_scale,
            self.tropopause_cn2,
            self.tropopause_scale,
            self.layer_cn2,
            self.layer_altitude,
            self.layer_thickness,
        ];
        for l in &self.extra_layers {
            v.extend([l.magnitude, l.altitude, l.thickness]);
        }
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec) for the same layer count.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), 9 + 3 * self.extra_layers.len());
        GeneralizedHVParams {
            surface_cn2: v[0],
            surface_scale: v[1],
            troposphere_cn2: v[2],
            troposphere_scale: v[3],
            tropopause_cn2: v[4],
            tropopause_scale: v[5],
            layer_cn2: v[6],
            layer_altitude: v[7],
            layer_thickness: v[8],
            extra_layers: v[9..]
                .chunks(3)
                .map(|c| GaussianLayer {
                    magnitude: c[0],
                    altitude: c[1],
                    thickness: c[2],
                })
                .collect(),
        }
    }
}

fn is_magnitude(name: &str) -> bool {
    matches!(name.chars().next(), Some('A' | 'B' | 'C' | 'D' | 'E'))
}

/// `A e^(-z/H_A) + B e^(-z/H_B) + C (z/1e5)^10 e^(-z/H_C) + D e^(-(z-H_D)²/2d²) + Σ layers`.
pub fn generalized_hv_cn2(z: f64, params: &GeneralizedHVParams) -> f64 {
    let u = (z - params.layer_altitude) / params.layer_thickness;
    params.surface_cn2 * (-z / params.surface_scale).exp()
        + params.troposphere_cn2 * (-z / params.troposphere_scale).exp()
        + params.tropopause_cn2 * (z / 1e5).powi(10) * (-z / params.tropopause_scale).exp()
        + params.layer_cn2 * (-0.5 * u * u).exp()
        + params.extra_layers.iter().map(|l| l.eval(z)).sum::<f64>()
}

/// Altitude band used to match a profile to a reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBand {
    pub z_low: f64,
    pub z_high: f64,
}

impl Default for CalibrationBand {
    fn default() -> Self {
        CalibrationBand {
            z_low: 1000.0,
            z_high: 4000.0,
        }
    }
}

impl CalibrationBand {
    pub fn new(z_low: f64, z_high: f64) -> Result<Self> {
        if !(z_low >= 0.0 && z_high > z_low) {
            return Err(Error::Config(format!(
                "band requires 0 <= z_low < z_high, got [{z_low}, {z_high}]"
            )));
        }
        Ok(CalibrationBand { z_low, z_high })
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_low && z <= self.z_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Multiplier bringing the profile onto the reference.
    pub factor: f64,
    /// rms of log10(reference) - log10(factor · profile) over the band.
    pub rms_log10: f64,
    pub used_levels: usize,
    pub excluded_nonpositive: usize,
}

/// Minimum number of usable levels inside the band.
pub const MIN_BAND_LEVELS: usize = 3;

/// Log-space least-squares multiplier of `profile` onto `reference` over
/// `band`: `c = 10^mean(log10 ref - log10 profile)`. Non-positive profile
/// values are skipped and counted.
pub fn calibrate_scale_factor<F: Fn(f64) -> f64>(
    profile: &Cn2Profile,
    reference: F,
    band: &CalibrationBand,
    altitude_offset: f64,
) -> Result<Calibration> {
    let mut diffs = Vec::new();
    let mut in_band = 0;
    let mut excluded = 0;
    for (&z, &v) in profile.altitudes.iter().zip(&profile.cn2) {
        if !band.contains(z) {
            continue;
        }
        in_band += 1;
        if !(v > 0.0 && v.is_finite()) {
            excluded += 1;
            continue;
        }
        let r = reference(z + altitude_offset);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Numerical(format!(
                "reference model is not positive at {} m",
                z + altitude_offset
            )));
        }
        diffs.push(r.log10() - v.log10());
    }
    if in_band == 0 {
        return Err(Error::InsufficientData(format!(
            "no profile levels in band [{}, {}] m",
            band.z_low, band.z_high
        )));
    }
    if diffs.len() < MIN_BAND_LEVELS {
        return Err(Error::InsufficientData(format!(
            "{} usable levels in band ({excluded} non-positive excluded), {MIN_BAND_LEVELS} required",
            diffs.len()
        )));
    }
    let k = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let rms = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(Calibration {
        factor: 10f64.powf(mean),
        rms_log10: rms,
        used_levels: diffs.len(),
        excluded_nonpositive: excluded,
    })
}

/// Which generalized-HV parameters are held fixed during a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMask {
    pub fixed: Vec<bool>,
}

impl FitMask {
    pub fn all_free(params: &GeneralizedHVParams) -> Self {
        FitMask {
            fixed: vec![false; params.param_names().len()],
        }
    }

    /// Fixes the named parameters (`"B"`, `"H_A"`, ...).
    pub fn with_fixed(params: &GeneralizedHVParams, names: &[&str]) -> Result<Self> {
        let all = params.param_names();
        let mut fixed = vec![false; all.len()];
        for name in names {
            let i = all
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
            fixed[i] = true;
        }
        Ok(FitMask { fixed })
    }

    /// B, H_A, H_D, d and every extra layer's altitude and thickness fixed;
    /// magnitudes and the remaining scale heights free.
    pub fn standard(params: &GeneralizedHVParams) -> Self {
        let fixed = params
            .param_names()
            .iter()
            .map(|n| {
                n == "B" || n == "H_A" || n == "H_D" || n == "d" || n.starts_with("H_E")
                    || n.starts_with('e')
            })
            .collect();
        FitMask { fixed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of starts; the first is the initial guess itself.
    pub starts: usize,
    pub seed: u64,
    /// Free magnitudes may move this many decades either way of the guess.
    pub magnitude_decades: f64,
    /// Free heights/thicknesses may move by this factor either way.
    pub scale_factor_range: f64,
    /// Altitude added to profile levels before evaluating the model.
    pub altitude_offset: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 8,
            seed: 0,
            magnitude_decades: 2.0,
            scale_factor_range: 3.0,
            altitude_offset: 0.0,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResult {
    pub index: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: GeneralizedHVParams,
    pub free: Vec<String>,
    pub fixed: Vec<String>,
    /// Sum of squared log10 residuals at the initial guess.
    pub initial_residual: f64,
    /// Sum of squared log10 residuals at the solution.
    pub residual: f64,
    pub rms_log10: f64,
    pub levels_used: usize,
    pub excluded_nonpositive: usize,
    pub iterations: usize,
    pub best_start: usize,
    pub starts: Vec<StartResult>,
}

fn log_residual(params: &GeneralizedHVParams, points: &[(f64, f64)], offset: f64) -> f64 {
    points
        .iter()
        .map(|&(z, log_v)| {
            let m = generalized_hv_cn2(z + offset, params).max(1e-300);
            (m.log10() - log_v).powi(2)
        })
        .sum()
}

/// Least-squares fit of the generalized HV model in log10(Cn²).
///
/// Free parameters are optimized as log10 values inside a box around the
/// initial guess (see [`FitOptions`]) by restarted Nelder–Mead from
/// `starts` points; the first start is the guess, the others are drawn
/// uniformly in the box from `seed`. Starts run in parallel and the best
/// residual wins, ties going to the lower start index.
pub fn fit_generalized_hv(
    profile: &Cn2Profile,
    init: &GeneralizedHVParams,
    mask: &FitMask,
    opts: &FitOptions,
) -> Result<FitReport> {
    fit_generalized_hv_points(&profile.altitudes, &profile.cn2, init, mask, opts)
}

pub fn fit_generalized_hv_points(
    altitudes: &[f64],
    values: &[f64],
    init: &GeneralizedHVParams,
    mask: &FitMask,
    opts: &FitOptions,
) -> Result<FitReport> {
    init.validate()?;
    let names = init.param_names();
    if mask.fixed.len() != names.len() {
        return Err(Error::Config(format!(
            "mask has {} entries, model has {} parameters",
            mask.fixed.len(),
            names.len()
        )));
    }
    if altitudes.len() != values.len() {
        return Err(Error::Config("altitude and value lengths differ".into()));
    }
    if opts.starts == 0 {
        return Err(Error::Config("at least one start required".into()));
    }
    let points: Vec<(f64, f64)> = altitudes
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(&z, &v)| (z, v.log10()))
        .collect();
    let excluded = values.len() - points.len();
    let base = init.to_vec();
    let free: Vec<usize> = (0..names.len()).filter(|&i| !mask.fixed[i]).collect();
    if points.len() <= free.len() {
        return Err(Error::InsufficientData(format!(
            "{} positive levels for {} free parameters",
            points.len(),
            free.len()
        )));
    }
    for &i in &free {
        if base[i] <= 0.0 {
            return Err(Error::Config(format!(
                "free parameter {} needs a positive initial value",
                names[i]
            )));
        }
    }

    let center: Vec<f64> = free.iter().map(|&i| base[i].log10()).collect();
    let half: Vec<f64> = free
        .iter()
        .map(|&i| {
            if is_magnitude(&names[i]) {
                opts.magnitude_decades
            } else {
                opts.scale_factor_range.log10()
            }
        })
        .collect();
    let lower: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c - h).collect();
    let upper: Vec<f64> = center.iter().zip(&half).map(|(c, h)| c + h).collect();

    let build = |x: &[f64]| -> GeneralizedHVParams {
        let mut v = base.clone();
        for (&i, &lx) in free.iter().zip(x) {
            v[i] = 10f64.powf(lx);
        }
        init.with_vec(&v)
    };
    let objective = |x: &[f64]| log_residual(&build(x), &points, opts.altitude_offset);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.starts)
        .map(|s| {
            if s == 0 {
                center.clone()
            } else {
                lower
                    .iter()
                    .zip(&upper)
                    .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                    .collect()
            }
        })
        .collect();

    let nm = NelderMeadOptions {
        max_iter: opts.max_iter,
        ..Default::default()
    };
    let results: Vec<StartResult> = starts
        .par_iter()
        .enumerate()
        .map(|(index, x0)| {
            let m = nelder_mead_restarted(objective, x0, &lower, &upper, &nm, 10);
            StartResult {
                index,
                start: x0.iter().map(|v| 10f64.powf(*v)).collect(),
                end: m.x.iter().map(|v| 10f64.powf(*v)).collect(),
                residual: m.f,
                iterations: m.iterations,
                converged: m.converged,
            }
        })
        .collect();

    let best = results
        .iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual).then(a.index.cmp(&b.index)))
        .expect("at least one start");
    let best_x: Vec<f64> = best.end.iter().map(|v| v.log10()).collect();
    let params = build(&best_x);
    let residual = log_residual(&params, &points, opts.altitude_offset);
    let report = FitReport {
        params,
        free: free.iter().map(|&i| names[i].clone()).collect(),
        fixed: (0..names.len())
            .filter(|&i| mask.fixed[i])
            .map(|i| names[i].clone())
            .collect(),
        initial_residual: log_residual(init, &points, opts.altitude_offset),
        residual,
        rms_log10: (residual / points.len() as f64).sqrt(),
        levels_used: points.len(),
        excluded_nonpositive: excluded,
        iterations: best.iterations,
        best_start: best.index,
        starts: results.clone(),
    };
    if !results.iter().any(|r| r.converged) {
        return Err(Error::FitNotConverged {
            starts: results.len(),
            best_residual: report.residual,
            best: Box::new(report),
        });
    }
    Ok(report)
}

/// Evaluates a model on a grid and writes `altitude_m,cn2_m_23`.
pub fn write_model_csv<W: std::io::Write, F: Fn(f64) -> f64>(
    writer: W,
    altitudes: &[f64],
    model: F,
) -> Result<()> {
    crate::estimator::write_pairs_csv(writer, altitudes.iter().map(|&z| (z, model(z))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimatorConfig;

    fn profile(altitudes: Vec<f64>, cn2: Vec<f64>) -> Cn2Profile {
        Cn2Profile {
            altitudes,
            cn2,
            config: EstimatorConfig::default(),
            provenance: String::new(),
        }
    }

    #[test]
    fn hv57_spot_values() {
        // 2.7e-16 + 1.7e-14 at the ground
        assert!((hv_cn2(0.0, &HVParams::HV57) / 1.727e-14 - 1.0).abs() < 1e-3);
        // 0.00594 (21/27)^2 1e-10 e^-10 + 2.7e-16 e^(-20/3) + 1.7e-14 e^-100
        assert!((hv_cn2(10_000.0, &HVParams::HV57) / 1.666e-17 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn hv_band_term_independent_of_w_and_a() {
        let other = HVParams::new(40.0, 5e-13).unwrap();
        for z in [1000.0f64, 2500.0, 4000.0] {
            let shared = HV_TROPOSPHERE_CN2 * (-z / 1500.0).exp();
            let a = hv_cn2(z, &HVParams::HV57);
            let b = hv_cn2(z, &other);
            let w = |p: &HVParams| 0.00594 * (p.wind_speed / 27.0).powi(2) * (z / 1e5).powi(10) * (-z / 1000.0).exp();
            let g = |p: &HVParams| p.ground_cn2 * (-z / 100.0).exp();
            assert!((a - w(&HVParams::HV57) - g(&HVParams::HV57) - shared).abs() < 1e-30);
            assert!((b - w(&other) - g(&other) - shared).abs() < 1e-30);
        }
    }

    #[test]
    fn generalized_reduces_to_hv() {
        let g = GeneralizedHVParams::from_hv(&HVParams::HV57);
        for z in [0.0, 500.0, 3000.0, 10_000.0, 20_000.0] {
            let a = generalized_hv_cn2(z, &g);
            let b = hv_cn2(z, &HVParams::HV57);
            assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_peak_equals_magnitude() {
        let t = GeneralizedHVParams::trappes();
        let only_layer = GeneralizedHVParams {
            surface_cn2: 0.0,
            troposphere_cn2: 0.0,
            tropopause_cn2: 0.0,
            ..t.clone()
        };
        assert_eq!(generalized_hv_cn2(12_000.0, &only_layer), 1.37e-17);
        let h = GeneralizedHVParams::hilo();
        assert_eq!(h.extra_layers[0].magnitude, 1.59e-16);
        assert_eq!(h.param_names()[9..], ["E", "H_E", "e"]);
        let zero = t.with_vec(&t.to_vec().iter().enumerate().map(|(i, v)| if [0, 2, 4, 6].contains(&i) { 0.0 } else { *v }).collect::<Vec<_>>());
        assert_eq!(generalized_hv_cn2(5000.0, &zero), 0.0);
    }

    #[test]
    fn positive_for_positive_magnitudes() {
        for p in [GeneralizedHVParams::trappes(), GeneralizedHVParams::hilo()] {
            for i in 0..=400 {
                assert!(generalized_hv_cn2(i as f64 * 100.0, &p) > 0.0);
            }
        }
        for i in 0..=300 {
            assert!(hv_cn2(i as f64 * 100.0, &HVParams::HV57) > 0.0);
        }
    }

    #[test]
    fn params_json_uses_symbols() {
        let json = serde_json::to_string(&GeneralizedHVParams::hilo()).unwrap();
        assert!(json.contains("\"H_A\":100.0"));
        assert!(json.contains("\"H_E\":2200.0"));
        let back: GeneralizedHVParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, GeneralizedHVParams::hilo());
    }

    #[test]
    fn masks() {
        let t = GeneralizedHVParams::trappes();
        let m = FitMask::standard(&t);
        let fixed: Vec<_> = t
            .param_names()
            .into_iter()
            .zip(&m.fixed)
            .filter(|(_, f)| **f)
            .map(|(n, _)| n)
            .collect();
        assert_eq!(fixed, ["H_A", "B", "H_D", "d"]);
        let h = GeneralizedHVParams::hilo();
        assert_eq!(FitMask::standard(&h).fixed.iter().filter(|f| **f).count(), 6);
        assert!(FitMask::with_fixed(&t, &["Q"]).is_err());
    }

    fn grid() -> Vec<f64> {
        (0..=300).map(|i| i as f64 * 100.0).collect()
    }

    #[test]
    fn calibration_translation_and_identity() {
        let z = grid();
        let reference = |z: f64| hv_cn2(z, &HVParams::HV57);
        let tenth = profile(z.clone(), z.iter().map(|&z| reference(z) / 10.0).collect());
        let c = calibrate_scale_factor(&tenth, reference, &CalibrationBand::default(), 0.0).unwrap();
        assert!((c.factor - 10.0).abs() < 1e-12);
        assert!(c.rms_log10 < 1e-12);
        assert_eq!(c.used_levels, 31);
        let same = profile(z.clone(), z.iter().map(|&z| reference(z)).collect());
        let c = calibrate_scale_factor(&same, reference, &CalibrationBand::default(), 0.0).unwrap();
        assert!((c.factor - 1.0).abs() < 1e-14);
        assert_eq!(c.rms_log10, 0.0);
    }

    #[test]
    fn calibration_offset_and_errors() {
        let z = grid();
        let reference = |z: f64| hv_cn2(z, &HVParams::HV57);
        let shifted = profile(z.clone(), z.iter().map(|&z| reference(z + 168.0)).collect());
        let c = calibrate_scale_factor(&shifted, reference, &CalibrationBand::default(), 168.0).unwrap();
        assert!((c.factor - 1.0).abs() < 1e-12);

        let high = profile(vec![5000.0, 6000.0], vec![1e-17, 1e-17]);
        assert!(matches!(
            calibrate_scale_factor(&high, reference, &CalibrationBand::default(), 0.0),
            Err(Error::InsufficientData(_))
        ));
        let mut vals: Vec<f64> = z.iter().map(|&z| reference(z)).collect();
        for v in vals.iter_mut().skip(10).take(31) {
            *v = 0.0;
        }
        let zeros = profile(z.clone(), vals);
        assert!(matches!(
            calibrate_scale_factor(&zeros, reference, &CalibrationBand::default(), 0.0),
            Err(Error::InsufficientData(_))
        ));
        let mut vals: Vec<f64> = z.iter().map(|&z| reference(z)).collect();
        vals[15] = -1.0;
        let c = calibrate_scale_factor(&profile(z, vals), reference, &CalibrationBand::default(), 0.0).unwrap();
        assert_eq!(c.excluded_nonpositive, 1);
        assert!(CalibrationBand::new(4000.0, 1000.0).is_err());
    }

    #[test]
    fn fit_improves_on_initial_guess() {
        let truth = GeneralizedHVParams::trappes();
        let z = grid();
        let data = profile(z.clone(), z.iter().map(|&z| generalized_hv_cn2(z, &truth)).collect());
        let guess = GeneralizedHVParams::from_hv(&HVParams::HV57);
        let guess = GeneralizedHVParams {
            layer_cn2: 1e-17,
            layer_altitude: 12_000.0,
            layer_thickness: 1200.0,
            ..guess
        };
        let mask = FitMask::standard(&guess);
        let report = fit_generalized_hv(&data, &guess, &mask, &FitOptions::default()).unwrap();
        assert!(report.residual <= report.initial_residual);
        assert_eq!(report.starts.len(), 8);
        assert_eq!(report.free, ["A", "H_B", "C", "H_C", "D"]);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let t = GeneralizedHVParams::trappes();
        let data = profile(vec![0.0, 100.0], vec![1e-14, 1e-15]);
        assert!(matches!(
            fit_generalized_hv(&data, &t, &FitMask::standard(&t), &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
        let data = profile(grid(), vec![1e-16; 301]);
        let bad_mask = FitMask { fixed: vec![false; 3] };
        assert!(fit_generalized_hv(&data, &t, &bad_mask, &FitOptions::default()).is_err());
        let zero_free = GeneralizedHVParams { layer_cn2: 0.0, ..t.clone() };
        assert!(matches!(
            fit_generalized_hv(&data, &zero_free, &FitMask::standard(&zero_free), &FitOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_convergence_returns_best_so_far() {
        let t = GeneralizedHVParams::trappes();
        let data = profile(grid(), grid().iter().map(|&z| generalized_hv_cn2(z, &t) * 1.5).collect());
        let opts = FitOptions {
            max_iter: 2,
            starts: 8,
            ..Default::default()
        };
        match fit_generalized_hv(&data, &t, &FitMask::standard(&t), &opts) {
            Err(Error::FitNotConverged { starts, best, .. }) => {
                assert_eq!(starts, 8);
                assert!(best.residual <= best.initial_residual);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
    fn perturbed_guess(truth: &GeneralizedHVParams, mask: &FitMask) -> GeneralizedHVParams {
        let factors = [1.6, 0.7, 2.0, 0.75, 0.5];
        let mut v = truth.to_vec();
        let mut k = 0;
        for (x, fixed) in v.iter_mut().zip(&mask.fixed) {
            if !fixed {
                *x *= factors[k % factors.len()];
                k += 1;
            }
        }
        truth.with_vec(&v)
    }

    fn free_relative_errors(report: &FitReport, truth: &GeneralizedHVParams, mask: &FitMask) -> Vec<(String, f64)> {
        let names = truth.param_names();
        truth
            .to_vec()
            .iter()
            .zip(report.params.to_vec())
            .enumerate()
            .filter(|(i, _)| !mask.fixed[*i])
            .map(|(i, (t, f))| (names[i].clone(), (f / t - 1.0).abs()))
            .collect()
    }

    #[test]
    fn noiseless_round_trip_recovers_free_params() {
        let truth = GeneralizedHVParams::trappes();
        let z = grid();
        let data = profile(z.clone(), z.iter().map(|&z| generalized_hv_cn2(z, &truth)).collect());
        let mask = FitMask::standard(&truth);
        let guess = perturbed_guess(&truth, &mask);
        let report = fit_generalized_hv(&data, &guess, &mask, &FitOptions::default()).unwrap();
        for (name, err) in free_relative_errors(&report, &truth, &mask) {
            assert!(err < 0.01, "{name}: {err}");
        }
    }

    #[test]
    fn noisy_round_trip_recovers_free_params() {
        use rand_distr::{Distribution, Normal};
        let truth = GeneralizedHVParams::trappes();
        let z = grid();
        let noise: Normal<f64> = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = z
            .iter()
            .map(|&z| generalized_hv_cn2(z, &truth) * noise.sample(&mut rng).exp())
            .collect();
        let data = profile(z, values);
        let mask = FitMask::standard(&truth);
        let guess = perturbed_guess(&truth, &mask);
        let report = fit_generalized_hv(&data, &guess, &mask, &FitOptions::default()).unwrap();
        for (name, err) in free_relative_errors(&report, &truth, &mask) {
            assert!(err < 0.1, "{name}: {err}");
        }
    }

    proptest::proptest! {
        #[test]
        fn calibration_is_multiplicative_equivariant(log_k in -1.5f64..1.5, log_s in -1.5f64..1.5) {
            let k = 10f64.powf(log_k);
            let s = 10f64.powf(log_s);
            let z = grid();
            let reference = |z: f64| hv_cn2(z, &HVParams::HV57);
            let base: Vec<f64> = z.iter().map(|&z| reference(z) * (1.0 + 0.3 * (z / 700.0).sin())).collect();
            let band = CalibrationBand::default();
            let c0 = calibrate_scale_factor(&profile(z.clone(), base.clone()), reference, &band, 0.0).unwrap();
            let scaled = profile(z.clone(), base.iter().map(|v| v * k).collect());
            let ck = calibrate_scale_factor(&scaled, reference, &band, 0.0).unwrap();
            proptest::prop_assert!((ck.factor * k / c0.factor - 1.0).abs() < 1e-12);
            let both = profile(z.clone(), base.iter().map(|v| v * s).collect());
            let cs = calibrate_scale_factor(&both, |z| reference(z) * s, &band, 0.0).unwrap();
            proptest::prop_assert!((cs.factor / c0.factor - 1.0).abs() < 1e-12);
            proptest::prop_assert!((cs.rms_log10 - c0.rms_log10).abs() < 1e-12);
        }
    }
}
