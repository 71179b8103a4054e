//! Cn² estimation from refractive-index fluctuations.
//!
//! The ensemble average of the structure function is replaced by a local
//! three-point average. Around grid index `i` the points `i-m`, `i`, `i+m`
//! give three squared differences; each is divided by its separation to the
//! 2/3 power (`δ` for the two adjacent pairs, `2δ` for the outer pair), the
//! three are averaged and multiplied by the scale factor `c`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prep::{extract_fluctuations, resample_profile, FluctuationProfile, UniformProfile};
use crate::sounding::SoundingProfile;

/// Tunables of the estimation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Resampling step, metres.
    pub dz: f64,
    /// Window half-width of the local mean (window is `2ω+1` samples).
    pub omega: usize,
    /// Pair separation in grid steps, `δ = m·dz`.
    pub m: usize,
    pub scale_factor: f64,
    /// Optical wavelength in µm; `None` uses the approximate index.
    pub wavelength: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            dz: 100.0,
            omega: 2,
            m: 1,
            scale_factor: 1.0,
            wavelength: None,
        }
    }
}

impl EstimatorConfig {
    pub fn new(dz: f64, omega: usize, m: usize, scale_factor: f64) -> Result<Self> {
        let cfg = EstimatorConfig {
            dz,
            omega,
            m,
            scale_factor,
            wavelength: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_wavelength(mut self, wavelength_um: Option<f64>) -> Self {
        self.wavelength = wavelength_um;
        self
    }

    pub fn delta(&self) -> f64 {
        self.m as f64 * self.dz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dz.is_finite() && self.dz > 0.0) {
            return Err(Error::Config(format!("dz must be positive, got {}", self.dz)));
        }
        if self.omega == 0 || self.m == 0 {
            return Err(Error::Config("omega and m must be positive integers".into()));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::Config(format!(
                "scale factor must be positive, got {}",
                self.scale_factor
            )));
        }
        if let Some(l) = self.wavelength {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("wavelength must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// A Cn² profile on a uniform altitude grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cn2Profile {
    pub altitudes: Vec<f64>,
    pub cn2: Vec<f64>,
    pub config: EstimatorConfig,
    pub provenance: String,
}

impl Cn2Profile {
    pub fn len(&self) -> usize {
        self.altitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.altitudes.is_empty()
    }

    pub fn mean_cn2(&self) -> f64 {
        self.cn2.iter().sum::<f64>() / self.cn2.len() as f64
    }

    /// Multiplies every value by `factor`, recording it in the config.
    pub fn scaled(&self, factor: f64) -> Cn2Profile {
        let mut out = self.clone();
        out.cn2.iter_mut().for_each(|v| *v *= factor);
        out.config.scale_factor *= factor;
        out
    }

    /// Writes `altitude_m,cn2_m_23`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_pairs_csv(writer, self.altitudes.iter().copied().zip(self.cn2.iter().copied()))
    }

    /// Reads `altitude_m,cn2_m_23`; config and provenance come from the caller.
    pub fn read_csv<R: Read>(reader: R, config: EstimatorConfig, provenance: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("altitude_m") || headers.get(1) != Some("cn2_m_23") {
            return Err(Error::Format(format!(
                "expected header altitude_m,cn2_m_23, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut altitudes = Vec::new();
        let mut cn2 = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {line}: bad number")))
            };
            altitudes.push(num(0)?);
            cn2.push(num(1)?);
        }
        Ok(Cn2Profile {
            altitudes,
            cn2,
            config,
            provenance: provenance.to_string(),
        })
    }
}

pub(crate) fn write_pairs_csv<W: Write>(
    writer: W,
    rows: impl Iterator<Item = (f64, f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["altitude_m", "cn2_m_23"])?;
    for (z, v) in rows {
        w.write_record([z.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves a separation in metres to an integer lag on the `dz` grid.
fn lag_of(separation: f64, dz: f64) -> Result<usize> {
    let k = separation / dz;
    let rounded = k.round();
    if !(separation > 0.0) || rounded < 1.0 || (k - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::Alignment { separation, dz });
    }
    Ok(rounded as usize)
}

/// Spatial-average structure function `D(ρ) = <(n1(z+ρ) - n1(z))²>`.
pub fn empirical_structure_function(
    fluct: &FluctuationProfile,
    separations: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let values = fluct.valid_values();
    separations
        .iter()
        .map(|&rho| {
            let lag = lag_of(rho, fluct.dz)?;
            if lag >= values.len() {
                return Err(Error::Alignment {
                    separation: rho,
                    dz: fluct.dz,
                });
            }
            let count = values.len() - lag;
            let sum: f64 = values
                .iter()
                .zip(&values[lag..])
                .map(|(a, b)| (b - a) * (b - a))
                .sum();
            Ok((rho, sum / count as f64))
        })
        .collect()
}

/// Three-point Cn² estimate at every centre whose `±m` neighbours are valid.
///
/// The first output altitude is `z0 + (ω + m)·dz`, i.e. `δ + ω·dz` above the
/// first resampled point.
pub fn estimate_cn2(fluct: &FluctuationProfile, config: &EstimatorConfig) -> Result<Cn2Profile> {
    config.validate()?;
    if (fluct.dz - config.dz).abs() > 1e-9 * config.dz {
        return Err(Error::Config(format!(
            "fluctuation grid dz {} differs from configured dz {}",
            fluct.dz, config.dz
        )));
    }
    if let Some(omega) = fluct.omega {
        if omega != config.omega {
            return Err(Error::Config(format!(
                "fluctuations extracted with omega {omega}, config has {}",
                config.omega
            )));
        }
    }
    let m = config.m;
    let valid = fluct.valid.clone();
    if valid.len() < 2 * m + 1 {
        return Err(Error::InsufficientData(format!(
            "{} valid fluctuation points, at least {} required",
            valid.len(),
            2 * m + 1
        )));
    }
    let delta = config.delta();
    let near = delta.powf(2.0 / 3.0);
    let far = (2.0 * delta).powf(2.0 / 3.0);
    let c = config.scale_factor;
    let n1 = &fluct.n1;

    let centers = valid.start + m..valid.end - m;
    let mut altitudes = Vec::with_capacity(centers.len());
    let mut cn2 = Vec::with_capacity(centers.len());
    for i in centers {
        let (lo, mid, hi) = (n1[i - m], n1[i], n1[i + m]);
        let d_lo = (mid - lo) * (mid - lo) / near;
        let d_hi = (hi - mid) * (hi - mid) / near;
        let d_out = (hi - lo) * (hi - lo) / far;
        altitudes.push(fluct.altitude(i));
        cn2.push(c * (d_lo + d_hi + d_out) / 3.0);
    }
    Ok(Cn2Profile {
        altitudes,
        cn2,
        config: *config,
        provenance: String::new(),
    })
}

/// Full chain for an already-resampled index profile.
pub fn estimate_from_uniform(profile: &UniformProfile, config: &EstimatorConfig) -> Result<Cn2Profile> {
    let fluct = extract_fluctuations(profile, config.omega)?;
    estimate_cn2(&fluct, config)
}

/// Full chain: resample → index → window mean → fluctuations → Cn².
pub fn estimate_from_sounding(
    sounding: &SoundingProfile,
    config: &EstimatorConfig,
) -> Result<Cn2Profile> {
    config.validate()?;
    let uniform = resample_profile(sounding, config.dz, None, config.wavelength)?;
    let mut out = estimate_from_uniform(&uniform, config)?;
    out.provenance = sounding.station_id.clone();
    Ok(out)
}

/// Result of [`average_profiles`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedProfile {
    pub profile: Cn2Profile,
    pub profile_count: usize,
    /// Grid levels discarded because too few profiles covered them.
    pub dropped_levels: usize,
}

/// Default fraction of profiles that must cover a level for it to be kept.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.8;

/// Per-level arithmetic mean of profiles sharing a grid and configuration.
///
/// Profiles may differ in extent but must share `dz`, configuration and
/// grid phase; levels covered by fewer than `min_coverage` of the profiles
/// are dropped.
pub fn average_profiles(profiles: &[Cn2Profile], min_coverage: f64) -> Result<AveragedProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::InsufficientData("no profiles to average".into()))?;
    if !(0.0..=1.0).contains(&min_coverage) {
        return Err(Error::Config(format!(
            "coverage fraction {min_coverage} outside [0, 1]"
        )));
    }
    let config = first.config;
    let dz = config.dz;
    let origin = first.altitudes.first().copied().unwrap_or(0.0);

    let mut sums: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (pi, p) in profiles.iter().enumerate() {
        if p.config != config {
            return Err(Error::Config(format!(
                "profile {pi} ({}) config {:?} differs from profile 0 config {:?}",
                p.provenance, p.config, config
            )));
        }
        for (&z, &v) in p.altitudes.iter().zip(&p.cn2) {
            let k = (z - origin) / dz;
            let kr = k.round();
            if (k - kr).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "profile {pi} ({}) altitude {z} m is off the common grid",
                    p.provenance
                )));
            }
            if v.is_finite() {
                let e = sums.entry(kr as i64).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    let needed = min_coverage * profiles.len() as f64;
    let mut altitudes = Vec::new();
    let mut cn2 = Vec::new();
    let mut dropped = 0;
    for (k, (sum, count)) in sums {
        if (count as f64) + 1e-9 < needed {
            dropped += 1;
            continue;
        }
        altitudes.push(origin + k as f64 * dz);
        cn2.push(sum / count as f64);
    }
    Ok(AveragedProfile {
        profile: Cn2Profile {
            altitudes,
            cn2,
            config,
            provenance: format!("mean of {} profiles", profiles.len()),
        },
        profile_count: profiles.len(),
        dropped_levels: dropped,
    })
}

/// Averages values in bins `[k·dz, (k+1)·dz)`; returns (bin centre, mean)
/// for non-empty bins in ascending order.
pub fn bin_average(points: &[(f64, f64)], dz: f64) -> Vec<(f64, f64)> {
    bin_average_with_origin(points, dz, 0.0)
}

/// [`bin_average`] with bins `[origin + k·dz, origin + (k+1)·dz)`.
pub fn bin_average_with_origin(points: &[(f64, f64)], dz: f64, origin: f64) -> Vec<(f64, f64)> {
    assert!(dz > 0.0, "bin width must be positive");
    let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for &(z, v) in points {
        let k = ((z - origin) / dz).floor() as i64;
        let e = bins.entry(k).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    bins.into_iter()
        .map(|(k, (sum, n))| (origin + (k as f64 + 0.5) * dz, sum / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(dz: f64, omega: usize, m: usize) -> EstimatorConfig {
        EstimatorConfig::new(dz, omega, m, 1.0).unwrap()
    }

    #[test]
    fn zero_field() {
        let f = FluctuationProfile::from_raw(0.0, 1.0, vec![0.0; 20]);
        let d = empirical_structure_function(&f, &[1.0, 2.0, 5.0]).unwrap();
        assert!(d.iter().all(|(_, v)| *v == 0.0));
        let c = estimate_cn2(&f, &cfg(1.0, 2, 1)).unwrap();
        assert!(c.cn2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn alternating_field() {
        let a = 3e-7;
        let n1: Vec<f64> = (0..31).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        let f = FluctuationProfile::from_raw(0.0, 10.0, n1);
        let d = empirical_structure_function(&f, &[10.0, 20.0]).unwrap();
        assert!((d[0].1 - 4.0 * a * a).abs() < 1e-25);
        assert_eq!(d[1].1, 0.0);
    }

    #[test]
    fn misaligned_separation() {
        let f = FluctuationProfile::from_raw(0.0, 10.0, vec![0.0; 20]);
        for rho in [15.0, 0.0, -10.0, 200.0] {
            assert!(matches!(
                empirical_structure_function(&f, &[rho]),
                Err(Error::Alignment { .. })
            ));
        }
    }

    #[test]
    fn output_grid_starts_after_window_and_delta() {
        let n: Vec<f64> = (0..40).map(|i| 1.0003 + 1e-8 * ((i * 7) % 5) as f64).collect();
        let u = UniformProfile::new(100.0, 25.0, n).unwrap();
        let c = estimate_from_uniform(&u, &cfg(25.0, 2, 2)).unwrap();
        assert_eq!(c.altitudes[0], 100.0 + 2.0 * 25.0 + 2.0 * 25.0);
        assert_eq!(c.len(), 40 - 2 * 2 - 2 * 2);
    }

    #[test]
    fn insufficient_valid_range() {
        let u = UniformProfile::new(0.0, 1.0, vec![1.0002; 6]).unwrap();
        let f = extract_fluctuations(&u, 2).unwrap();
        assert!(matches!(
            estimate_cn2(&f, &cfg(1.0, 2, 1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn config_mismatch() {
        let u = UniformProfile::new(0.0, 1.0, vec![1.0002; 30]).unwrap();
        let f = extract_fluctuations(&u, 2).unwrap();
        assert!(matches!(estimate_cn2(&f, &cfg(1.0, 1, 1)), Err(Error::Config(_))));
        assert!(matches!(estimate_cn2(&f, &cfg(2.0, 2, 1)), Err(Error::Config(_))));
        assert!(EstimatorConfig::new(1.0, 0, 1, 1.0).is_err());
        assert!(EstimatorConfig::new(1.0, 2, 1, 0.0).is_err());
    }

    /// Estimator at c = 1 equals (2 D(δ)/δ^(2/3) + D(2δ)/(2δ)^(2/3)) / 3 up to
    /// the handful of pairs at the ends of the valid range.
    #[test]
    fn mean_estimate_matches_structure_function_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n1: Vec<f64> = (0..4001).map(|_| rng.random_range(-1e-7..1e-7)).collect();
        let f = FluctuationProfile::from_raw(0.0, 5.0, n1.clone());
        for m in [1usize, 2, 3] {
            let config = cfg(5.0, 2, m);
            let delta = config.delta();
            let est = estimate_cn2(&f, &config).unwrap();
            let k = est.len();
            // exact finite-sample identity over the same pair sets
            let pairs = |lag: usize, start: usize| -> f64 {
                (start..start + k).map(|i| (n1[i + lag] - n1[i]).powi(2)).sum::<f64>() / k as f64
            };
            let expected = (pairs(m, 0) / delta.powf(2.0 / 3.0)
                + pairs(m, m) / delta.powf(2.0 / 3.0)
                + pairs(2 * m, 0) / (2.0 * delta).powf(2.0 / 3.0))
                / 3.0;
            assert!((est.mean_cn2() / expected - 1.0).abs() < 1e-12);
            // and to the spatial-average structure function within end effects
            let d = empirical_structure_function(&f, &[delta, 2.0 * delta]).unwrap();
            let combo = (2.0 * d[0].1 / delta.powf(2.0 / 3.0)
                + d[1].1 / (2.0 * delta).powf(2.0 / 3.0))
                / 3.0;
            assert!((est.mean_cn2() / combo - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn averaging_examples() {
        let config = cfg(10.0, 2, 1);
        let p = Cn2Profile {
            altitudes: vec![40.0, 50.0, 60.0],
            cn2: vec![1e-15, 2e-16, 3e-17],
            config,
            provenance: "a".into(),
        };
        let one = average_profiles(std::slice::from_ref(&p), 0.8).unwrap();
        assert_eq!(one.profile.cn2, p.cn2);
        assert_eq!(one.profile.altitudes, p.altitudes);

        let p3 = Cn2Profile {
            cn2: p.cn2.iter().map(|v| 3.0 * v).collect(),
            ..p.clone()
        };
        let two = average_profiles(&[p.clone(), p3], 0.8).unwrap();
        for (a, b) in two.profile.cn2.iter().zip(&p.cn2) {
            assert!((a / (2.0 * b) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_coverage_and_mismatch() {
        let config = cfg(10.0, 2, 1);
        let short = Cn2Profile {
            altitudes: vec![40.0, 50.0],
            cn2: vec![1.0, 1.0],
            config,
            provenance: "s".into(),
        };
        let long = Cn2Profile {
            altitudes: vec![40.0, 50.0, 60.0, 70.0],
            cn2: vec![3.0; 4],
            config,
            provenance: "l".into(),
        };
        let avg = average_profiles(&[short.clone(), long.clone(), long.clone()], 0.8).unwrap();
        assert_eq!(avg.profile.altitudes, vec![40.0, 50.0]);
        assert_eq!(avg.dropped_levels, 2);
        let avg = average_profiles(&[short.clone(), long.clone(), long.clone()], 0.5).unwrap();
        assert_eq!(avg.profile.altitudes.len(), 4);

        let off_grid = Cn2Profile {
            altitudes: vec![45.0, 55.0],
            ..short.clone()
        };
        assert!(matches!(
            average_profiles(&[short.clone(), off_grid], 0.8),
            Err(Error::Config(_))
        ));
        let other = Cn2Profile {
            config: cfg(20.0, 2, 1),
            ..short.clone()
        };
        assert!(matches!(average_profiles(&[short, other], 0.8), Err(Error::Config(_))));
        assert!(average_profiles(&[], 0.8).is_err());
    }

    #[test]
    fn binning() {
        assert_eq!(bin_average(&[(130.0, 5.0)], 200.0), vec![(100.0, 5.0)]);
        assert_eq!(
            bin_average(&[(10.0, 1.0), (190.0, 3.0), (650.0, 8.0)], 200.0),
            vec![(100.0, 2.0), (700.0, 8.0)]
        );
        // bins centred on multiples of dz
        assert_eq!(
            bin_average_with_origin(&[(150.0, 1.0), (240.0, 3.0)], 200.0, -100.0),
            vec![(200.0, 2.0)]
        );
    }

    #[test]
    fn csv_round_trip() {
        let p = Cn2Profile {
            altitudes: vec![300.0, 400.0],
            cn2: vec![1.234e-16, 5.6e-17],
            config: cfg(100.0, 2, 1),
            provenance: "x".into(),
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("altitude_m,cn2_m_23\n"));
        let back = Cn2Profile::read_csv(buf.as_slice(), p.config, "x").unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn nonnegative_and_quadratic(
            vals in prop::collection::vec(-1e-6f64..1e-6, 10..120),
            s in 0.01f64..100.0,
            k in 0.1f64..1000.0,
            m in 1usize..3,
        ) {
            let f = FluctuationProfile::from_raw(0.0, 10.0, vals.clone());
            prop_assume!(vals.len() > 2 * m);
            let base = estimate_cn2(&f, &cfg(10.0, 2, m)).unwrap();
            prop_assert!(base.cn2.iter().all(|v| *v >= 0.0));

            let scaled = FluctuationProfile::from_raw(0.0, 10.0, vals.iter().map(|v| v * s).collect());
            let e = estimate_cn2(&scaled, &cfg(10.0, 2, m)).unwrap();
            for (a, b) in e.cn2.iter().zip(&base.cn2) {
                prop_assert!((a - s * s * b).abs() <= 1e-12 * (s * s * b).abs() + 1e-300);
            }
            let ck = EstimatorConfig::new(10.0, 2, m, k).unwrap();
            let e = estimate_cn2(&f, &ck).unwrap();
            for (a, b) in e.cn2.iter().zip(&base.cn2) {
                prop_assert!((a - k * b).abs() <= 1e-12 * (k * b).abs() + 1e-300);
            }
        }
    }
}
