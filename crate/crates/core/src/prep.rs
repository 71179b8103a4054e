//! Uniform resampling, optical refractive index and fluctuation extraction.

use std::io::Write;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::sounding::{LevelRecord, SoundingProfile};

/// Approximate optical index `n = 1 + 79e-6 p/T` (p in hPa, T in K), or the
/// wavelength-dependent form `1 + 77.6e-6 (1 + 7.52e-3 λ⁻²) p/T` when a
/// wavelength in µm is supplied.
pub fn refractive_index(p: f64, t: f64, wavelength_um: Option<f64>) -> f64 {
    debug_assert!(p >= 0.0 && t > 0.0);
    let coeff = match wavelength_um {
        Some(lambda) => {
            debug_assert!(lambda > 0.0);
            77.6e-6 * (1.0 + 7.52e-3 / (lambda * lambda))
        }
        None => 79e-6,
    };
    1.0 + coeff * p / t
}

/// Refractive index on an equispaced altitude grid `z0 + i·dz`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformProfile {
    pub z0: f64,
    pub dz: f64,
    pub n: Vec<f64>,
    pub pressure: Option<Vec<f64>>,
    pub temperature: Option<Vec<f64>>,
}

impl UniformProfile {
    /// Wraps a precomputed index series. Every value must lie in (1, 1.001).
    pub fn new(z0: f64, dz: f64, n: Vec<f64>) -> Result<Self> {
        if !(dz.is_finite() && dz > 0.0) {
            return Err(Error::Config(format!("dz must be positive, got {dz}")));
        }
        if let Some(i) = n.iter().position(|&v| !(v > 1.0 && v < 1.001)) {
            return Err(Error::validation(
                format!("grid index {i}"),
                format!("refractive index {} outside (1, 1.001)", n[i]),
            ));
        }
        Ok(UniformProfile {
            z0,
            dz,
            n,
            pressure: None,
            temperature: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn altitude(&self, i: usize) -> f64 {
        self.z0 + i as f64 * self.dz
    }

    pub fn altitudes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.altitude(i)).collect()
    }

    /// Grid levels as sounding records, when pressure and temperature were kept.
    pub fn to_levels(&self) -> Option<Vec<LevelRecord>> {
        let (p, t) = (self.pressure.as_ref()?, self.temperature.as_ref()?);
        Some(
            (0..self.len())
                .map(|i| LevelRecord {
                    altitude: self.altitude(i),
                    pressure: p[i],
                    temperature: t[i],
                })
                .collect(),
        )
    }

    /// Debug dump as `z_m,n`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["z_m", "n"])?;
        for (i, n) in self.n.iter().enumerate() {
            w.write_record([self.altitude(i).to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear interpolation of (p, T) at `z`, or `None` outside the level range.
/// Returns node values untouched when `z` hits a level exactly.
pub(crate) fn interpolate_level(levels: &[LevelRecord], z: f64) -> Option<(f64, f64)> {
    let first = levels.first()?;
    let last = levels.last()?;
    if z < first.altitude || z > last.altitude {
        return None;
    }
    // index of the first level with altitude > z
    let hi = levels.partition_point(|l| l.altitude <= z);
    if hi == 0 {
        return None;
    }
    let lo = &levels[hi - 1];
    if lo.altitude == z || hi == levels.len() {
        return Some((lo.pressure, lo.temperature));
    }
    let up = &levels[hi];
    let w = (z - lo.altitude) / (up.altitude - lo.altitude);
    Some((
        lo.pressure + w * (up.pressure - lo.pressure),
        lo.temperature + w * (up.temperature - lo.temperature),
    ))
}

/// Resamples strictly increasing levels onto `z_start + i·dz`.
///
/// Pressure and temperature are interpolated linearly and independently; the
/// index is computed afterwards. `z_start` defaults to the first altitude
/// rounded up to a multiple of `dz`. The grid stops at the last measured
/// altitude.
pub fn resample_levels(
    levels: &[LevelRecord],
    dz: f64,
    z_start: Option<f64>,
    wavelength_um: Option<f64>,
) -> Result<UniformProfile> {
    if !(dz.is_finite() && dz > 0.0) {
        return Err(Error::Config(format!("dz must be positive, got {dz}")));
    }
    if levels.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} levels, at least 2 required",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| w[1].altitude <= w[0].altitude) {
        return Err(Error::validation(
            "levels",
            "altitudes must be strictly increasing",
        ));
    }
    let first = levels[0].altitude;
    let last = levels[levels.len() - 1].altitude;
    let z0 = match z_start {
        Some(z) if z < first => {
            return Err(Error::Config(format!(
                "z_start {z} m below the first measured altitude {first} m"
            )))
        }
        Some(z) => z,
        None => (first / dz).ceil() * dz,
    };
    let span = last - z0;
    // relative slack absorbs rounding when re-gridding an existing grid
    let count = ((span / dz) * (1.0 + 1e-12)).floor() as usize + 1;
    if span < 0.0 || count < 3 {
        return Err(Error::InsufficientSpan { span, dz });
    }
    let mut p = Vec::with_capacity(count);
    let mut t = Vec::with_capacity(count);
    let mut n = Vec::with_capacity(count);
    for i in 0..count {
        let z = (z0 + i as f64 * dz).min(last);
        let (pi, ti) = interpolate_level(levels, z).expect("grid inside measured range");
        p.push(pi);
        t.push(ti);
        n.push(refractive_index(pi, ti, wavelength_um));
    }
    Ok(UniformProfile {
        z0,
        dz,
        n,
        pressure: Some(p),
        temperature: Some(t),
    })
}

pub fn resample_profile(
    profile: &SoundingProfile,
    dz: f64,
    z_start: Option<f64>,
    wavelength_um: Option<f64>,
) -> Result<UniformProfile> {
    resample_levels(&profile.levels, dz, z_start, wavelength_um)
}

/// Centered moving average over `2ω+1` samples. The first and last `ω`
/// entries are `None`: windows are never shrunk or mirrored at the edges.
pub fn window_mean(series: &[f64], omega: usize) -> Result<Vec<Option<f64>>> {
    if omega == 0 {
        return Err(Error::Config("window half-width must be positive".into()));
    }
    let width = 2 * omega + 1;
    if series.len() < width {
        return Err(Error::InsufficientData(format!(
            "series of {} samples shorter than window {width}",
            series.len()
        )));
    }
    let mut out = vec![None; series.len()];
    for (i, w) in series.windows(width).enumerate() {
        out[i + omega] = Some(w.iter().sum::<f64>() / width as f64);
    }
    Ok(out)
}

/// Refractive-index fluctuations `n1 = n - <n>_ω` on a uniform grid.
///
/// Entries of `n1` outside `valid` are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationProfile {
    pub z0: f64,
    pub dz: f64,
    pub n1: Vec<f64>,
    pub valid: Range<usize>,
    /// Window half-width used to extract the mean; `None` for raw fields.
    pub omega: Option<usize>,
}

impl FluctuationProfile {
    /// Treats `n1` as fluctuations already (no mean removal), all valid.
    pub fn from_raw(z0: f64, dz: f64, n1: Vec<f64>) -> Self {
        let valid = 0..n1.len();
        FluctuationProfile {
            z0,
            dz,
            n1,
            valid,
            omega: None,
        }
    }

    pub fn valid_values(&self) -> &[f64] {
        &self.n1[self.valid.clone()]
    }

    pub fn altitude(&self, i: usize) -> f64 {
        self.z0 + i as f64 * self.dz
    }
}

pub fn extract_fluctuations(profile: &UniformProfile, omega: usize) -> Result<FluctuationProfile> {
    let mean = window_mean(&profile.n, omega)?;
    let n1 = profile
        .n
        .iter()
        .zip(&mean)
        .map(|(&n, m)| m.map_or(f64::NAN, |m| n - m))
        .collect();
    Ok(FluctuationProfile {
        z0: profile.z0,
        dz: profile.dz,
        n1,
        valid: omega..profile.len() - omega,
        omega: Some(omega),
    })
}
