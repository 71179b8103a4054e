//! Radiosonde and thermosonde ingestion.
//!
//! Two sounding layouts are understood:
//!
//! * **CSV** with one header line naming `altitude_m`, `pressure_hPa` and
//!   exactly one of `temperature_K` / `temperature_C`. Optional columns
//!   (`rh_pct`, `wind_ms`, `wind_deg`, anything else) are accepted and
//!   ignored. Altitudes are metres above ground.
//! * **Fixed width**, the plain-text listing served by the University of
//!   Wyoming sounding archive. Columns are 7 characters wide and the first
//!   three are `PRES` (hPa), `HGHT` (m above sea level) and `TEMP` (°C):
//!
//! ```text
//! -----------------------------------------------------------------------------
//!    PRES   HGHT   TEMP   DWPT   RELH   MIXR   DRCT   SKNT   THTA   THTE   THTV
//!     hPa     m      C      C      %    g/kg    deg   knot     K      K      K
//! -----------------------------------------------------------------------------
//!  1000.0    168   13.6    9.6     77   7.56    230      8  286.7  308.1  288.0
//! ```
//!
//!   Data rows follow the second dashed rule and end at the first blank or
//!   non-numeric line. Heights are converted to above-ground using the
//!   station elevation from the format descriptor, or the first valid level
//!   when none is given.
//!
//! The temperature unit is taken from the header only.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of valid levels for a usable sounding.
pub const MIN_LEVELS: usize = 10;

/// Upper bound on plausible atmospheric temperatures.
pub const MAX_TEMPERATURE_K: f64 = 400.0;

/// Default altitude an ascent must reach to be kept in campaign averages.
pub const DEFAULT_CEILING_M: f64 = 30_000.0;

const KELVIN_OFFSET: f64 = 273.15;

/// Coefficient of the approximate optical index, K/hPa.
const OPTICAL_INDEX_COEFF: f64 = 79e-6;

/// One measured level of an ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// metres
    pub altitude: f64,
    /// hPa
    pub pressure: f64,
    /// K
    pub temperature: f64,
}

impl LevelRecord {
    pub fn new(altitude: f64, pressure: f64, temperature: f64) -> Result<Self> {
        let level = LevelRecord {
            altitude,
            pressure,
            temperature,
        };
        level.check().map_err(|m| Error::validation("level", m))?;
        Ok(level)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !(self.altitude.is_finite() && self.altitude >= 0.0) {
            return Err(format!("altitude {} m must be non-negative", self.altitude));
        }
        if !(self.pressure.is_finite() && self.pressure > 0.0) {
            return Err(format!("pressure {} hPa must be positive", self.pressure));
        }
        if !(self.temperature.is_finite()
            && self.temperature > 0.0
            && self.temperature <= MAX_TEMPERATURE_K)
        {
            return Err(format!(
                "temperature {} K outside (0, {MAX_TEMPERATURE_K}] K",
                self.temperature
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltitudeReference {
    AboveGround,
    AboveSeaLevel,
}

/// Input layout of a sounding file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SoundingFormat {
    Csv,
    FixedWidth { station_elevation_m: Option<f64> },
}

/// Station sidecar: `{"station_id", "lat", "lon", "elevation_m", "launch_time"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundingMetadata {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub elevation_m: f64,
    pub launch_time: DateTime<Utc>,
}

impl SoundingMetadata {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// A normalized ascent: levels strictly increasing in altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundingProfile {
    pub station_id: String,
    pub launch_time: Option<DateTime<Utc>>,
    pub altitude_reference: AltitudeReference,
    pub station_elevation_m: f64,
    pub levels: Vec<LevelRecord>,
    /// Rows dropped because a mandatory field was missing.
    pub dropped_rows: usize,
    /// Rows folded into a neighbour sharing the same altitude.
    pub merged_duplicates: usize,
}

impl SoundingProfile {
    /// Builds a profile from raw levels, sorting and merging duplicates.
    pub fn from_levels(levels: Vec<LevelRecord>) -> Result<Self> {
        for (i, level) in levels.iter().enumerate() {
            level
                .check()
                .map_err(|m| Error::validation(format!("level {i}"), m))?;
        }
        let (levels, merged_duplicates) = normalize_levels(levels);
        Ok(SoundingProfile {
            station_id: String::new(),
            launch_time: None,
            altitude_reference: AltitudeReference::AboveGround,
            station_elevation_m: 0.0,
            levels,
            dropped_rows: 0,
            merged_duplicates,
        })
    }

    pub fn with_metadata(mut self, meta: &SoundingMetadata) -> Self {
        self.station_id = meta.station_id.clone();
        self.launch_time = Some(meta.launch_time);
        self.station_elevation_m = meta.elevation_m;
        self
    }

    pub fn max_altitude(&self) -> f64 {
        self.levels.last().map_or(0.0, |l| l.altitude)
    }

    /// Whether the ascent reached `ceiling_m`.
    pub fn reaches_ceiling(&self, ceiling_m: f64) -> bool {
        self.max_altitude() >= ceiling_m
    }

    /// Returns the profile with altitudes referred to the ground.
    pub fn to_above_ground(&self) -> Result<SoundingProfile> {
        if self.altitude_reference == AltitudeReference::AboveGround {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.altitude_reference = AltitudeReference::AboveGround;
        out.levels = self
            .levels
            .iter()
            .filter_map(|l| {
                let altitude = l.altitude - self.station_elevation_m;
                (altitude >= 0.0).then_some(LevelRecord { altitude, ..*l })
            })
            .collect();
        Ok(out)
    }

    /// Canonical CSV writer (`altitude_m,pressure_hPa,temperature_K`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["altitude_m", "pressure_hPa", "temperature_K"])?;
        for l in &self.levels {
            w.write_record([
                l.altitude.to_string(),
                l.pressure.to_string(),
                l.temperature.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sorts by altitude and averages rows sharing an identical altitude.
fn normalize_levels(mut levels: Vec<LevelRecord>) -> (Vec<LevelRecord>, usize) {
    levels.sort_by(|a, b| a.altitude.total_cmp(&b.altitude));
    let mut out: Vec<LevelRecord> = Vec::with_capacity(levels.len());
    let mut merged = 0;
    let mut i = 0;
    while i < levels.len() {
        let mut j = i + 1;
        while j < levels.len() && levels[j].altitude == levels[i].altitude {
            j += 1;
        }
        let group = &levels[i..j];
        if group.len() == 1 {
            out.push(group[0]);
        } else {
            let k = group.len() as f64;
            out.push(LevelRecord {
                altitude: group[0].altitude,
                pressure: group.iter().map(|l| l.pressure).sum::<f64>() / k,
                temperature: group.iter().map(|l| l.temperature).sum::<f64>() / k,
            });
            merged += group.len() - 1;
        }
        i = j;
    }
    (out, merged)
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "-" | "null"
    )
}

/// Parses an optional numeric field; `Ok(None)` means missing.
fn parse_field(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if is_missing(field) {
        return Ok(None);
    }
    field
        .trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Format(format!("line {line}: {name} value {field:?} is not a number")))
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Parses a sounding file into a normalized [`SoundingProfile`].
pub fn parse_sounding<R: Read>(reader: R, format: SoundingFormat) -> Result<SoundingProfile> {
    match format {
        SoundingFormat::Csv => parse_sounding_csv(reader),
        SoundingFormat::FixedWidth {
            station_elevation_m,
        } => parse_sounding_fixed(reader, station_elevation_m),
    }
}

fn parse_sounding_csv<R: Read>(reader: R) -> Result<SoundingProfile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let alt_col = column(&headers, "altitude_m")
        .ok_or_else(|| Error::Format("missing header altitude_m".into()))?;
    let p_col = column(&headers, "pressure_hPa")
        .ok_or_else(|| Error::Format("missing header pressure_hPa".into()))?;
    let (t_col, celsius) = match (
        column(&headers, "temperature_K"),
        column(&headers, "temperature_C"),
    ) {
        (Some(c), None) => (c, false),
        (None, Some(c)) => (c, true),
        (Some(_), Some(_)) => {
            return Err(Error::Format(
                "both temperature_K and temperature_C present".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Format(
                "missing header temperature_K or temperature_C".into(),
            ))
        }
    };

    let mut raw = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let get = |col: usize, name: &str| parse_field(record.get(col).unwrap_or(""), name, line);
        let (z, p, t) = (
            get(alt_col, "altitude_m")?,
            get(p_col, "pressure")?,
            get(t_col, "temperature")?,
        );
        let (Some(z), Some(p), Some(t)) = (z, p, t) else {
            dropped += 1;
            continue;
        };
        let t = if celsius { t + KELVIN_OFFSET } else { t };
        let level = LevelRecord {
            altitude: z,
            pressure: p,
            temperature: t,
        };
        level
            .check()
            .map_err(|m| Error::validation(format!("line {line}"), m))?;
        raw.push(level);
    }
    finish_profile(raw, dropped, AltitudeReference::AboveGround, 0.0)
}

fn finish_profile(
    raw: Vec<LevelRecord>,
    dropped: usize,
    reference: AltitudeReference,
    elevation: f64,
) -> Result<SoundingProfile> {
    let (levels, merged_duplicates) = normalize_levels(raw);
    if levels.len() < MIN_LEVELS {
        return Err(Error::InsufficientData(format!(
            "{} valid levels, at least {MIN_LEVELS} required",
            levels.len()
        )));
    }
    Ok(SoundingProfile {
        station_id: String::new(),
        launch_time: None,
        altitude_reference: reference,
        station_elevation_m: elevation,
        levels,
        dropped_rows: dropped,
        merged_duplicates,
    })
}

const FIXED_WIDTH: usize = 7;

fn fixed_field(line: &str, index: usize) -> &str {
    let start = index * FIXED_WIDTH;
    let end = (start + FIXED_WIDTH).min(line.len());
    line.get(start.min(line.len())..end).unwrap_or("")
}

fn parse_sounding_fixed<R: Read>(reader: R, elevation: Option<f64>) -> Result<SoundingProfile> {
    let lines: Vec<String> = BufReader::new(reader).lines().collect::<std::io::Result<_>>()?;
    let header = lines
        .iter()
        .position(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            cols.len() >= 3 && cols[..3] == ["PRES", "HGHT", "TEMP"]
        })
        .ok_or_else(|| Error::Format("no PRES/HGHT/TEMP header line found".into()))?;
    let is_rule = |l: &str| l.trim().len() > 10 && l.trim().chars().all(|c| c == '-');
    let start = lines[header..]
        .iter()
        .position(|l| is_rule(l))
        .map(|p| header + p + 1)
        .ok_or_else(|| Error::Format("missing rule after column header".into()))?;

    let mut raw = Vec::new();
    let mut dropped = 0;
    for (i, line) in lines.iter().enumerate().skip(start) {
        let line_no = (i + 1) as u64;
        if line.trim().is_empty() {
            break;
        }
        // any non-numeric token ends the table (station info block etc.)
        if line
            .split_whitespace()
            .any(|tok| tok.parse::<f64>().is_err())
        {
            break;
        }
        let p = parse_field(fixed_field(line, 0), "PRES", line_no)?;
        let z = parse_field(fixed_field(line, 1), "HGHT", line_no)?;
        let t = parse_field(fixed_field(line, 2), "TEMP", line_no)?;
        let (Some(p), Some(z), Some(t)) = (p, z, t) else {
            dropped += 1;
            continue;
        };
        let level = LevelRecord {
            altitude: z,
            pressure: p,
            temperature: t + KELVIN_OFFSET,
        };
        level
            .check()
            .map_err(|m| Error::validation(format!("line {line_no}"), m))?;
        raw.push(level);
    }
    let ground = match elevation {
        Some(e) => e,
        None => raw
            .iter()
            .map(|l| l.altitude)
            .min_by(f64::total_cmp)
            .unwrap_or(0.0),
    };
    let asl = finish_profile(raw, dropped, AltitudeReference::AboveSeaLevel, ground)?;
    let agl = asl.to_above_ground()?;
    if agl.levels.len() < MIN_LEVELS {
        return Err(Error::InsufficientData(format!(
            "{} levels above ground, at least {MIN_LEVELS} required",
            agl.levels.len()
        )));
    }
    Ok(agl)
}

/// One thermosonde level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoLevel {
    /// metres
    pub altitude: f64,
    /// K² m^(-2/3)
    pub ct2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermosondeProfile {
    pub levels: Vec<ThermoLevel>,
    /// Probe separation in metres.
    pub sensor_spacing: f64,
    /// Rows found out of altitude order before sorting.
    pub unsorted_rows: usize,
    pub merged_duplicates: usize,
}

/// T-REX thermosondes carry their two probes 1 m apart.
pub const DEFAULT_SENSOR_SPACING_M: f64 = 1.0;

/// Parses `altitude_m,ct2_K2m23` CSV.
pub fn parse_thermosonde<R: Read>(reader: R) -> Result<ThermosondeProfile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::InsufficientData("empty thermosonde file".into()));
    }
    let alt_col = column(&headers, "altitude_m")
        .ok_or_else(|| Error::Format("missing header altitude_m".into()))?;
    let ct2_col = column(&headers, "ct2_K2m23")
        .ok_or_else(|| Error::Format("missing header ct2_K2m23".into()))?;

    let mut levels = Vec::new();
    let mut unsorted_rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let z = parse_field(record.get(alt_col).unwrap_or(""), "altitude_m", line)?;
        let ct2 = parse_field(record.get(ct2_col).unwrap_or(""), "ct2", line)?;
        let (Some(altitude), Some(ct2)) = (z, ct2) else {
            continue;
        };
        if !(ct2.is_finite() && ct2 >= 0.0) {
            return Err(Error::validation(
                format!("line {line}"),
                format!("C_T^2 {ct2} must be non-negative"),
            ));
        }
        if !altitude.is_finite() {
            return Err(Error::validation(format!("line {line}"), "altitude is not finite"));
        }
        if levels
            .last()
            .is_some_and(|prev: &ThermoLevel| altitude < prev.altitude)
        {
            unsorted_rows += 1;
        }
        levels.push(ThermoLevel { altitude, ct2 });
    }
    if levels.is_empty() {
        return Err(Error::InsufficientData("no thermosonde levels".into()));
    }
    if unsorted_rows > 0 {
        warn!("thermosonde: {unsorted_rows} rows out of altitude order, sorted");
    }
    levels.sort_by(|a, b| a.altitude.total_cmp(&b.altitude));

    let mut merged: Vec<ThermoLevel> = Vec::with_capacity(levels.len());
    let mut counts: Vec<usize> = Vec::with_capacity(levels.len());
    let mut merged_duplicates = 0;
    for l in levels {
        match merged.last_mut() {
            Some(last) if last.altitude == l.altitude => {
                last.ct2 += l.ct2;
                *counts.last_mut().unwrap() += 1;
                merged_duplicates += 1;
            }
            _ => {
                merged.push(l);
                counts.push(1);
            }
        }
    }
    for (l, &k) in merged.iter_mut().zip(&counts) {
        l.ct2 /= k as f64;
    }
    if merged_duplicates > 0 {
        warn!("thermosonde: {merged_duplicates} duplicate altitudes averaged");
    }
    Ok(ThermosondeProfile {
        levels: merged,
        sensor_spacing: DEFAULT_SENSOR_SPACING_M,
        unsorted_rows,
        merged_duplicates,
    })
}

/// Converts a temperature structure parameter to Cn² through ∂n/∂T of the
/// approximate optical index: `(79e-6 p / T²)² · C_T²`.
///
/// `p` in hPa, `t` in K. Inputs must satisfy `ct2 >= 0`, `p > 0`, `t > 0`.
pub fn ct2_to_cn2(ct2: f64, p: f64, t: f64) -> f64 {
    debug_assert!(ct2 >= 0.0 && p > 0.0 && t > 0.0);
    let dn_dt = OPTICAL_INDEX_COEFF * p / (t * t);
    dn_dt * dn_dt * ct2
}

impl ThermosondeProfile {
    /// Converts every level inside the sounding's altitude range to Cn²,
    /// using pressure and temperature interpolated from `sounding`.
    pub fn to_cn2(&self, sounding: &SoundingProfile) -> Result<Vec<(f64, f64)>> {
        let levels = &sounding.levels;
        if levels.len() < 2 {
            return Err(Error::InsufficientData(
                "sounding needs at least two levels".into(),
            ));
        }
        let out: Vec<(f64, f64)> = self
            .levels
            .iter()
            .filter_map(|tl| {
                crate::prep::interpolate_level(levels, tl.altitude)
                    .map(|(p, t)| (tl.altitude, ct2_to_cn2(tl.ct2, p, t)))
            })
            .collect();
        if out.is_empty() {
            return Err(Error::InsufficientData(
                "no thermosonde level within the sounding altitude range".into(),
            ));
        }
        Ok(out)
    }
}
