//! Synthetic von Kármán fluctuations and the estimator bias study.
//!
//! # Discretisation
//!
//! A field of `N` samples spaced `dz` is produced by coloring Gaussian white
//! noise `w_j` in the Fourier domain:
//!
//! ```text
//! x_j = (1/N) Σ_k A_k W_k exp(2πi jk/N),   W = DFT(w),   A_k = sqrt(2π V_n(κ_k) / dz)
//! ```
//!
//! with `κ_k = 2π min(k, N-k) / (N dz)`. Since `E|W_k|² = N`, the expected
//! periodogram of `x` equals `V_n` on the resolved band `|κ| ≤ π/dz` and the
//! expected variance is `Σ_k V_n(κ_k) dκ` with `dκ = 2π/(N dz)`
//! ([`resolved_variance`]). The `κ = 0` bin uses `V_n(0)`, finite for the
//! von Kármán spectrum. `A_k = A_{N-k}` keeps the output real.
//!
//! The field is periodic with period `N·dz`, so lags close to half the
//! record are correlated with the wrap-around. Statistics should skip a
//! guard band ([`DEFAULT_GUARD_FRACTION`] at each end) and use `N·dz` much
//! larger than the outer scale.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_from_uniform, EstimatorConfig};
use crate::prep::{FluctuationProfile, UniformProfile};
use crate::quadrature::{integrate, QuadOptions, QuadResult};

/// Kolmogorov spectral constant.
pub const KOLMOGOROV_CONST: f64 = 0.033;

/// `(6π/5)·0.033`, prefactor of the closed-form 1-D von Kármán spectrum.
pub const V_N_COEFF: f64 = 6.0 * PI / 5.0 * KOLMOGOROV_CONST;

pub const DEFAULT_GUARD_FRACTION: f64 = 0.1;

/// Constant index added to synthetic fluctuations, typical near the ground.
pub const DEFAULT_N0: f64 = 1.0003;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    /// m^(-2/3)
    pub cn2: f64,
    /// Outer scale L0, metres.
    pub outer_scale: f64,
    /// Inner scale l0, metres. Informational: the spectrum ignores it.
    pub inner_scale: f64,
}

impl SpectrumParams {
    pub fn new(cn2: f64, outer_scale: f64, inner_scale: f64) -> Result<Self> {
        if !(cn2.is_finite() && cn2 > 0.0) {
            return Err(Error::Config(format!("cn2 must be positive, got {cn2}")));
        }
        if !(inner_scale > 0.0 && outer_scale > inner_scale && outer_scale.is_finite()) {
            return Err(Error::Config(format!(
                "scales must satisfy L0 > l0 > 0, got L0 = {outer_scale}, l0 = {inner_scale}"
            )));
        }
        Ok(SpectrumParams {
            cn2,
            outer_scale,
            inner_scale,
        })
    }

    /// κ0 = 1/L0 in rad/m.
    pub fn kappa0(&self) -> f64 {
        1.0 / self.outer_scale
    }
}

/// von Kármán 3-D spectrum `0.033 Cn² (κ² + κ0²)^(-11/6)`.
pub fn phi_n(kappa: f64, params: &SpectrumParams) -> f64 {
    let k0 = params.kappa0();
    KOLMOGOROV_CONST * params.cn2 * (kappa * kappa + k0 * k0).powf(-11.0 / 6.0)
}

/// Pure Kolmogorov spectrum `0.033 Cn² κ^(-11/3)`.
pub fn kolmogorov_phi(kappa: f64, cn2: f64) -> f64 {
    KOLMOGOROV_CONST * cn2 * kappa.powf(-11.0 / 3.0)
}

/// 1-D spectrum along a line, `2π ∫_κ^∞ κ' Φn(κ') dκ'`, in closed form.
pub fn v_n(kappa: f64, params: &SpectrumParams) -> f64 {
    let k0 = params.kappa0();
    V_N_COEFF * params.cn2 * (kappa * kappa + k0 * k0).powf(-5.0 / 6.0)
}

/// Number of sinc periods integrated explicitly before the tail.
const HEAD_PERIODS: f64 = 200.0;

/// `D(ρ) = 8π ∫₀^∞ κ² Φn(κ) (1 - sin(κρ)/(κρ)) dκ` for an isotropic spectrum.
///
/// The integral is split at `K = 2π·200/ρ`. Below `K` it is evaluated by
/// adaptive Gauss–Kronrod on log-spaced panels from 0 (relative tolerance
/// 1e-4). Above `K` the non-oscillatory part `∫ κ²Φn` is integrated in
/// `ln κ` out to `K·e^80`, and the sinc part is replaced by its leading
/// integration-by-parts term `KΦn(K) cos(Kρ)/ρ²`; for spectra decaying at
/// least like κ^(-11/3) the neglected remainder is below 1e-6 relative.
pub fn theoretical_structure_function<F: Fn(f64) -> f64>(rho: f64, spectrum: F) -> Result<f64> {
    structure_function_quadrature(rho, spectrum).map(|(d, _, _)| d)
}

/// [`theoretical_structure_function`] with the head and tail quadrature
/// diagnostics.
pub fn structure_function_quadrature<F: Fn(f64) -> f64>(
    rho: f64,
    spectrum: F,
) -> Result<(f64, QuadResult, QuadResult)> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Numerical(format!("separation must be positive, got {rho}")));
    }
    let k_hi = 2.0 * PI * HEAD_PERIODS / rho;
    let k_lo = 1e-6 / rho;
    let per_decade = 6.0;
    let panels = ((k_hi / k_lo).log10() * per_decade).ceil() as usize;
    let ratio = (k_hi / k_lo).powf(1.0 / panels as f64);
    let mut breaks = Vec::with_capacity(panels + 2);
    breaks.push(0.0);
    let mut k = k_lo;
    for _ in 0..panels {
        breaks.push(k);
        k *= ratio;
    }
    breaks.push(k_hi);

    let integrand = |k: f64| {
        if k == 0.0 {
            return 0.0;
        }
        let x = k * rho;
        // 1 - sin(x)/x loses precision for small x
        let one_minus_sinc = if x < 1e-3 {
            x * x / 6.0 - x.powi(4) / 120.0
        } else {
            1.0 - x.sin() / x
        };
        k * k * spectrum(k) * one_minus_sinc
    };
    let head = integrate(integrand, &breaks, QuadOptions::default())
        .map_err(|e| Error::Numerical(format!("structure function at rho = {rho} m: {e}")))?;

    let tail_breaks: Vec<f64> = (0..=40).map(|i| 2.0 * i as f64).collect();
    let tail = integrate(
        |t: f64| {
            let k = k_hi * t.exp();
            k * k * k * spectrum(k)
        },
        &tail_breaks,
        QuadOptions {
            rel_tol: 1e-6,
            ..Default::default()
        },
    )
    .map_err(|e| Error::Numerical(format!("structure function tail at rho = {rho} m: {e}")))?;
    let boundary = k_hi * spectrum(k_hi) * (k_hi * rho).cos() / (rho * rho);

    Ok((8.0 * PI * (head.value + tail.value - boundary), head, tail))
}

/// Deterministic sub-seed for stream `(a, b)` of a master seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(master) ^ a) ^ b.rotate_left(32))
}

/// A synthetic fluctuation record.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticField {
    pub dz: f64,
    pub n1: Vec<f64>,
    pub n0: f64,
    pub params: SpectrumParams,
    pub seed: u64,
}

impl SyntheticField {
    pub fn len(&self) -> usize {
        self.n1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n1.is_empty()
    }

    /// Total refractive index `n0 + n1`.
    pub fn index(&self) -> Vec<f64> {
        self.n1.iter().map(|v| self.n0 + v).collect()
    }

    /// Samples with `guard_fraction` of the record dropped at each end.
    pub fn interior(&self, guard_fraction: f64) -> &[f64] {
        let guard = (self.n1.len() as f64 * guard_fraction).floor() as usize;
        &self.n1[guard..self.n1.len() - guard]
    }

    /// Raw fluctuations (no mean removal) over the guarded interior.
    pub fn as_fluctuations(&self, guard_fraction: f64) -> FluctuationProfile {
        FluctuationProfile::from_raw(0.0, self.dz, self.interior(guard_fraction).to_vec())
    }

    pub fn sample_variance(&self) -> f64 {
        let n = self.n1.len() as f64;
        let mean = self.n1.iter().sum::<f64>() / n;
        self.n1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    /// Dump as `z_m,n1`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["z_m", "n1"])?;
        for (i, v) in self.n1.iter().enumerate() {
            w.write_record([(i as f64 * self.dz).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn filter_amplitudes(n: usize, dz: f64, params: &SpectrumParams) -> Vec<f64> {
    let dk = 2.0 * PI / (n as f64 * dz);
    (0..n)
        .map(|k| {
            let kappa = k.min(n - k) as f64 * dk;
            (2.0 * PI * v_n(kappa, params) / dz).sqrt()
        })
        .collect()
}

/// Expected variance of a synthesized field: `Σ_k V_n(κ_k) dκ`.
pub fn resolved_variance(n: usize, dz: f64, params: &SpectrumParams) -> f64 {
    let dk = 2.0 * PI / (n as f64 * dz);
    (0..n)
        .map(|k| v_n(k.min(n - k) as f64 * dk, params) * dk)
        .sum()
}

/// Colors `n` seeded white-noise samples with `H(κ) = sqrt(V_n(κ))` and adds
/// [`DEFAULT_N0`]. Bit-identical for equal `(n, dz, params, seed)`.
pub fn synthesize_fluctuations(
    n: usize,
    dz: f64,
    params: &SpectrumParams,
    seed: u64,
) -> Result<SyntheticField> {
    synthesize_with_mean(n, dz, params, seed, DEFAULT_N0)
}

pub fn synthesize_with_mean(
    n: usize,
    dz: f64,
    params: &SpectrumParams,
    seed: u64,
    n0: f64,
) -> Result<SyntheticField> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Size(format!("sample count {n} is not a power of two")));
    }
    if !(dz.is_finite() && dz > 0.0) {
        return Err(Error::Config(format!("dz must be positive, got {dz}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let amps = filter_amplitudes(n, dz, params);
    let norm = 1.0 / n as f64;
    for (c, a) in buf.iter_mut().zip(&amps) {
        *c *= a * norm;
    }
    planner.plan_fft_inverse(n).process(&mut buf);

    Ok(SyntheticField {
        dz,
        n1: buf.into_iter().map(|c| c.re).collect(),
        n0,
        params: *params,
        seed,
    })
}

/// Parameters of the scale-factor study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dz_list: Vec<f64>,
    pub outer_scales: Vec<f64>,
    pub omegas: Vec<usize>,
    pub ms: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub cn2: f64,
    pub inner_scale: f64,
    /// Fine samples per synthesized trial (power of two).
    pub samples: usize,
    /// Fine synthesis steps per estimator step `dz`.
    pub oversample: usize,
    pub guard_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            dz_list: vec![1.0, 10.0, 100.0, 300.0, 1000.0],
            outer_scales: vec![100.0],
            omegas: vec![1, 2, 3],
            ms: vec![1],
            trials: 8,
            seed: 0,
            cn2: 1e-16,
            inner_scale: 1e-3,
            samples: 1 << 16,
            oversample: 8,
            guard_fraction: DEFAULT_GUARD_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dz: f64,
    pub outer_scale: f64,
    pub omega: usize,
    pub m: usize,
    pub trials: usize,
    pub ratio_mean: f64,
    pub ratio_std: f64,
}

/// Variance of the line field above `kappa_max`, `2 ∫_{κmax}^∞ V_n dκ`.
///
/// This is the part a grid with Nyquist frequency `kappa_max` cannot hold.
pub fn subgrid_variance(kappa_max: f64, params: &SpectrumParams) -> Result<f64> {
    if !(kappa_max.is_finite() && kappa_max > 0.0) {
        return Err(Error::Numerical(format!("cutoff must be positive, got {kappa_max}")));
    }
    // κ = K/t³ turns the κ^(-5/3) tail into a smooth integrand on (0, 1]
    let f = |t: f64| {
        if t <= 0.0 {
            return 0.0;
        }
        let k = kappa_max / (t * t * t);
        v_n(k, params) * 3.0 * kappa_max / (t * t * t * t)
    };
    let r = integrate(f, &[0.0, 0.25, 0.5, 1.0], QuadOptions { rel_tol: 1e-8, ..QuadOptions::default() })?;
    Ok(2.0 * r.value)
}

/// Ratio of estimated to true Cn² for every `(dz, L0, ω, m)` combination.
///
/// Each trial synthesizes `samples` points at `h = dz / oversample`, drops the
/// guard band, keeps every `oversample`-th point (resampling onto the `dz`
/// grid), then runs window mean → fluctuations → estimator with `c = 1`.
/// The variance the fine grid cannot resolve ([`subgrid_variance`] above
/// `π/h`) is added back as independent Gaussian noise on the kept points;
/// it decorrelates within one fine step. Without it the ratio is biased low
/// whenever `h` approaches `L0`.
/// All `(ω, m)` pairs of a trial share one field. Trials run in parallel on
/// independent sub-seeds; results do not depend on scheduling.
pub fn scale_factor_study(config: &StudyConfig) -> Result<Vec<StudyRow>> {
    if config.dz_list.is_empty()
        || config.outer_scales.is_empty()
        || config.omegas.is_empty()
        || config.ms.is_empty()
        || config.trials == 0
    {
        return Err(Error::Config("study parameter lists must be non-empty".into()));
    }
    if config.oversample == 0 {
        return Err(Error::Config("oversample must be positive".into()));
    }
    let cells: Vec<(usize, f64, usize, f64)> = config
        .dz_list
        .iter()
        .enumerate()
        .flat_map(|(i, &dz)| {
            config
                .outer_scales
                .iter()
                .enumerate()
                .map(move |(j, &l0)| (i, dz, j, l0))
        })
        .collect();
    let pairs: Vec<(usize, usize)> = config
        .omegas
        .iter()
        .flat_map(|&w| config.ms.iter().map(move |&m| (w, m)))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();
    let ratios: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (i, dz, j, l0) = cells[c];
            let params = SpectrumParams::new(config.cn2, l0, config.inner_scale)?;
            let seed = derive_seed(config.seed, ((i as u64) << 32) | j as u64, t as u64);
            let h = dz / config.oversample as f64;
            let fine = synthesize_fluctuations(config.samples, h, &params, seed)?;
            let sigma = subgrid_variance(PI / h, &params)?.sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
            let n: Vec<f64> = fine
                .interior(config.guard_fraction)
                .iter()
                .step_by(config.oversample)
                .map(|v| {
                    let e: f64 = rng.sample(StandardNormal);
                    fine.n0 + v + sigma * e
                })
                .collect();
            let uniform = UniformProfile::new(0.0, dz, n)?;
            pairs
                .iter()
                .map(|&(omega, m)| {
                    let est = estimate_from_uniform(&uniform, &EstimatorConfig::new(dz, omega, m, 1.0)?)?;
                    Ok(est.mean_cn2() / config.cn2)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len() * pairs.len());
    for (c, &(_, dz, _, l0)) in cells.iter().enumerate() {
        let trials = &ratios[c * config.trials..(c + 1) * config.trials];
        for (p, &(omega, m)) in pairs.iter().enumerate() {
            let values: Vec<f64> = trials.iter().map(|r| r[p]).collect();
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(StudyRow {
                dz,
                outer_scale: l0,
                omega,
                m,
                trials: config.trials,
                ratio_mean: mean,
                ratio_std: std,
            });
        }
    }
    Ok(rows)
}

/// Writes `dz_m,L0_m,omega,m,trials,ratio_mean,ratio_std`.
pub fn write_study_csv<W: Write>(writer: W, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dz_m", "L0_m", "omega", "m", "trials", "ratio_mean", "ratio_std"])?;
    for r in rows {
        w.write_record([
            r.dz.to_string(),
            r.outer_scale.to_string(),
            r.omega.to_string(),
            r.m.to_string(),
            r.trials.to_string(),
            r.ratio_mean.to_string(),
            r.ratio_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vk(cn2: f64, l0: f64) -> SpectrumParams {
        SpectrumParams::new(cn2, l0, 1e-3).unwrap()
    }

    #[test]
    fn subgrid_variance_limits() {
        let p = vk(1e-16, 100.0);
        // whole line: κ0^(-2/3) Γ(1/2)Γ(1/3)/Γ(5/6)
        let total = V_N_COEFF * 1e-16 * 100f64.powf(2.0 / 3.0) * 4.206546;
        let low = subgrid_variance(1e-9, &p).unwrap();
        assert!((low / total - 1.0).abs() < 1e-5, "{low} {total}");
        // far above κ0 the tail is Kolmogorov: 3 K^(-2/3)
        let k = 1e4;
        let high = subgrid_variance(k, &p).unwrap();
        let kolmo = 3.0 * V_N_COEFF * 1e-16 * k.powf(-2.0 / 3.0);
        assert!((high / kolmo - 1.0).abs() < 1e-6, "{high} {kolmo}");
        assert!(subgrid_variance(0.0, &p).is_err());
    }

    #[test]
    fn phi_examples() {
        let p = vk(1e-16, 100.0);
        let at_zero = phi_n(0.0, &p);
        assert!((at_zero / (0.033 * 1e-16 * 100f64.powf(11.0 / 3.0)) - 1.0).abs() < 1e-12);
        let k = 1e4;
        assert!((phi_n(k, &p) / kolmogorov_phi(k, 1e-16) - 1.0).abs() < 1e-9);
        let p2 = vk(2e-16, 100.0);
        for k in [0.0, 0.01, 1.0, 50.0] {
            assert!((phi_n(k, &p2) / phi_n(k, &p) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn v_n_at_zero_matches_quadrature_of_definition() {
        for l0 in [1.0, 100.0] {
            let p = vk(1e-16, l0);
            let closed = v_n(0.0, &p);
            assert!((closed / (0.12441 * 1e-16 * l0.powf(5.0 / 3.0)) - 1.0).abs() < 1e-4);
            // 2π ∫_0^∞ κ Φn dκ in ln κ
            let k0 = 1.0 / l0;
            let breaks: Vec<f64> = (0..=60).map(|i| (k0 * 1e-8).ln() + i as f64 * 0.5).collect();
            let r = integrate(
                |t: f64| {
                    let k = t.exp();
                    k * k * phi_n(k, &p)
                },
                &breaks,
                QuadOptions {
                    rel_tol: 1e-10,
                    ..Default::default()
                },
            )
            .unwrap();
            let numeric = 2.0 * PI * r.value;
            assert!((numeric / closed - 1.0).abs() < 1e-6, "{numeric:e} vs {closed:e}");
        }
    }

    #[test]
    fn v_n_decreasing() {
        let p = vk(1e-16, 10.0);
        let mut prev = v_n(0.0, &p);
        for i in 1..200 {
            let v = v_n(i as f64 * 0.05, &p);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn kolmogorov_quadrature_reproduces_two_thirds_law() {
        for rho in [0.1, 1.0, 10.0] {
            let d = theoretical_structure_function(rho, |k| kolmogorov_phi(k, 1e-16)).unwrap();
            let expected = 1e-16 * rho.powf(2.0 / 3.0);
            assert!((d / expected - 1.0).abs() < 0.01, "rho {rho}: {d:e}");
        }
    }

    /// Independent route: D(ρ) = 4 ∫₀^∞ V_n(κ)(1 - cos κρ) dκ along the line.
    #[test]
    fn three_d_and_one_d_routes_agree() {
        let p = vk(1e-16, 100.0);
        for rho in [1.0, 50.0, 1000.0] {
            let d3 = theoretical_structure_function(rho, |k| phi_n(k, &p)).unwrap();
            let period = 2.0 * PI / rho;
            let breaks: Vec<f64> = (0..=2000).map(|i| i as f64 * period / 4.0).collect();
            let last = *breaks.last().unwrap();
            let head = integrate(
                |k| v_n(k, &p) * (1.0 - (k * rho).cos()),
                &breaks,
                QuadOptions {
                    rel_tol: 1e-7,
                    ..Default::default()
                },
            )
            .unwrap()
            .value;
            // tail beyond last break: V ~ C κ^(-5/3), mean of (1 - cos) is 1
            let k_end = last;
            let tail = V_N_COEFF * 1e-16 * 1.5 * k_end.powf(-2.0 / 3.0);
            let d1 = 4.0 * (head + tail);
            assert!((d3 / d1 - 1.0).abs() < 2e-3, "rho {rho}: {d3:e} vs {d1:e}");
        }
    }

    #[test]
    fn von_karman_saturates_and_is_monotone() {
        let p = vk(1e-16, 100.0);
        let rhos = [0.1, 1.0, 10.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0];
        let d: Vec<f64> = rhos
            .iter()
            .map(|&r| theoretical_structure_function(r, |k| phi_n(k, &p)).unwrap())
            .collect();
        assert!(d.windows(2).all(|w| w[1] >= w[0]));
        let variance = resolved_variance(1 << 22, 0.01, &p);
        assert!((d[7] / (2.0 * variance) - 1.0).abs() < 0.02, "{:e} {:e}", d[7], variance);
        let slope = (d[7] / d[6]).ln() / (rhos[7] / rhos[6]).ln();
        assert!(slope < 0.05);
    }

    #[test]
    fn rejects_bad_sizes_and_params() {
        let p = vk(1e-16, 100.0);
        assert!(matches!(
            synthesize_fluctuations(1000, 0.1, &p, 1),
            Err(Error::Size(_))
        ));
        assert!(SpectrumParams::new(1e-16, 1e-3, 1e-3).is_err());
        assert!(SpectrumParams::new(0.0, 10.0, 1e-3).is_err());
    }

    #[test]
    fn deterministic_and_linear_in_cn2() {
        let p = vk(1e-16, 10.0);
        let a = synthesize_fluctuations(1 << 12, 0.5, &p, 42).unwrap();
        let b = synthesize_fluctuations(1 << 12, 0.5, &p, 42).unwrap();
        assert_eq!(a, b);
        let c = synthesize_fluctuations(1 << 12, 0.5, &p, 43).unwrap();
        assert_ne!(a.n1, c.n1);
        let p4 = vk(4e-16, 10.0);
        let d = synthesize_fluctuations(1 << 12, 0.5, &p4, 42).unwrap();
        let ratio = d.sample_variance() / a.sample_variance();
        assert!((ratio - 4.0).abs() < 1e-9);
    }

    #[test]
    fn sample_variance_matches_resolved_band() {
        let p = vk(1e-16, 1.0);
        let (n, dz) = (1 << 18, 0.05);
        let expected = resolved_variance(n, dz, &p);
        let amps = filter_amplitudes(n, dz, &p);
        let from_filter = amps.iter().map(|a| a * a).sum::<f64>() / n as f64;
        assert!((from_filter / expected - 1.0).abs() < 1e-12);
        let f = synthesize_fluctuations(n, dz, &p, 7).unwrap();
        assert!((f.sample_variance() / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_marginal() {
        let p = vk(1e-16, 1.0);
        let f = synthesize_fluctuations(1 << 20, 0.1, &p, 3).unwrap();
        let n = f.len() as f64;
        let mean = f.n1.iter().sum::<f64>() / n;
        let m2 = f.n1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = f.n1.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let excess = m4 / (m2 * m2) - 3.0;
        assert!(excess.abs() < 0.1, "{excess}");
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..4)
            .flat_map(|a| (0..4).map(move |b| derive_seed(1, a, b)))
            .collect();
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
    }

    #[test]
    fn study_shape_and_determinism() {
        let cfg = StudyConfig {
            dz_list: vec![1.0, 400.0],
            outer_scales: vec![100.0],
            omegas: vec![1, 2],
            ms: vec![1, 2],
            trials: 2,
            samples: 1 << 12,
            ..Default::default()
        };
        let a = scale_factor_study(&cfg).unwrap();
        assert_eq!(a.len(), 2 * 2 * 2);
        let b = scale_factor_study(&cfg).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_study_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dz_m,L0_m,omega,m,trials,ratio_mean,ratio_std\n"));
        assert_eq!(text.lines().count(), 9);
        assert!(scale_factor_study(&StudyConfig {
            omegas: vec![],
            ..cfg
        })
        .is_err());
    }
}
