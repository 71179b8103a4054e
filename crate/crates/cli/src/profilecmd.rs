use std::fs::File;
use std::path::{Path, PathBuf};

use cn2_core::estimator::DEFAULT_MIN_COVERAGE;
use cn2_core::sounding::DEFAULT_CEILING_M;
use cn2_core::{
    average_profiles, estimate_from_sounding, parse_sounding, Cn2Profile, EstimatorConfig,
    SoundingFormat, SoundingMetadata, SoundingProfile,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, sidecar, stem, write_atomic, write_json};
use crate::settings::Settings;

pub fn estimator_config(s: &Settings) -> CliResult<EstimatorConfig> {
    let cfg = EstimatorConfig::new(
        s.get_or("dz", 100.0)?,
        s.get_or("omega", 2)?,
        s.get_or("m", 1)?,
        s.get_or("scale_factor", 1.0)?,
    )
    .map_err(|e| CliError::usage(e.to_string()))?
    .with_wavelength(s.get("wavelength")?);
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

pub fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn check_exist(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::io(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

/// Reads a `altitude_m,cn2_m_23` profile. The estimator configuration comes
/// from its JSON sidecar when present, else from `fallback`.
pub fn read_profile(path: &Path, fallback: &EstimatorConfig) -> CliResult<Cn2Profile> {
    let side = sidecar(path);
    let (config, provenance) = if side.is_file() {
        let v: serde_json::Value = serde_json::from_reader(open(&side)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", side.display())))?;
        let config = match v.get("config") {
            Some(c) => serde_json::from_value(c.clone())
                .map_err(|e| CliError::validation(format!("{}: config: {e}", side.display())))?,
            None => *fallback,
        };
        let provenance = v
            .get("station_id")
            .and_then(|s| s.as_str())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| stem(path));
        (config, provenance)
    } else {
        (*fallback, stem(path))
    };
    Cn2Profile::read_csv(open(path)?, config, &provenance)
        .map_err(|e| CliError::from(e).context(path.display()))
}

/// `x.cn2.csv` → `x`.
pub fn base_name(path: &Path) -> String {
    let s = stem(path);
    s.strip_suffix(".cn2").map(str::to_string).unwrap_or(s)
}

pub fn write_profile(dir: &Path, name: &str, profile: &Cn2Profile, meta: serde_json::Value) -> CliResult<PathBuf> {
    let csv = dir.join(format!("{name}.cn2.csv"));
    write_atomic(&csv, |w| Ok(profile.write_csv(w)?))?;
    let mut meta = meta;
    meta["config"] = serde_json::to_value(profile.config)?;
    meta["levels"] = json!(profile.len());
    meta["version"] = json!(env!("CARGO_PKG_VERSION"));
    write_json(&sidecar(&csv), &meta)?;
    Ok(csv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Auto,
    Csv,
    Uwyo,
}

fn parse_format(s: &Settings) -> CliResult<Format> {
    match s.raw("format").unwrap_or("auto") {
        "auto" => Ok(Format::Auto),
        "csv" => Ok(Format::Csv),
        "uwyo" | "fixed" => Ok(Format::Uwyo),
        other => Err(CliError::usage(format!("unknown format `{other}` (csv, uwyo, auto)"))),
    }
}

/// Parses a sounding, attaching the station sidecar `<stem>.json` if present.
pub fn load_sounding(path: &Path, s: &Settings) -> CliResult<SoundingProfile> {
    let side = sidecar(path);
    let meta = if side.is_file() && side != path {
        Some(
            SoundingMetadata::from_reader(open(&side)?)
                .map_err(|e| CliError::from(e).context(side.display()))?,
        )
    } else {
        None
    };
    let format = match parse_format(s)? {
        Format::Auto => {
            let is_csv = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                Format::Csv
            } else {
                Format::Uwyo
            }
        }
        f => f,
    };
    let format = match format {
        Format::Csv => SoundingFormat::Csv,
        _ => SoundingFormat::FixedWidth {
            station_elevation_m: s
                .get("station_elevation")?
                .or(meta.as_ref().map(|m| m.elevation_m)),
        },
    };
    let profile = parse_sounding(open(path)?, format)
        .map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(match &meta {
        Some(m) => profile.with_metadata(m),
        None => profile,
    })
}

#[derive(Debug, Serialize)]
struct FileOutcome {
    input: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip)]
    code: u8,
}

pub fn compute(s: &Settings, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let config = estimator_config(s)?;
    let ceiling: f64 = s.get_or("ceiling", DEFAULT_CEILING_M)?;
    parse_format(s)?;
    check_exist(inputs)?;
    ensure_dir(out)?;

    let outcomes: Vec<FileOutcome> = inputs
        .par_iter()
        .map(|path| {
            let input = path.display().to_string();
            let fail = |status, e: CliError| FileOutcome {
                input: input.clone(),
                status,
                output: None,
                message: Some(e.message.clone()),
                code: e.code,
            };
            let sounding = match load_sounding(path, s) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("{e}");
                    return fail("failed_parse", e);
                }
            };
            if !sounding.reaches_ceiling(ceiling) {
                log::info!(
                    "{input}: tops out at {} m, below the {ceiling} m ceiling",
                    sounding.max_altitude()
                );
                return FileOutcome {
                    input,
                    status: "skipped_ceiling",
                    output: None,
                    message: Some(format!("max altitude {} m", sounding.max_altitude())),
                    code: 0,
                };
            }
            let result = estimate_from_sounding(&sounding, &config)
                .map_err(|e| CliError::from(e).context(path.display()))
                .and_then(|mut profile| {
                    if profile.provenance.is_empty() {
                        profile.provenance = stem(path);
                    }
                    let meta = json!({
                        "command": "compute",
                        "source": input,
                        "station_id": profile.provenance,
                        "launch_time": sounding.launch_time,
                        "station_elevation_m": sounding.station_elevation_m,
                        "input_levels": sounding.levels.len(),
                        "dropped_rows": sounding.dropped_rows,
                        "merged_duplicates": sounding.merged_duplicates,
                        "max_altitude_m": sounding.max_altitude(),
                    });
                    write_profile(out, &stem(path), &profile, meta)
                });
            match result {
                Ok(csv) => FileOutcome {
                    input,
                    status: "processed",
                    output: Some(csv.display().to_string()),
                    message: None,
                    code: 0,
                },
                Err(e) => {
                    log::warn!("{e}");
                    fail("failed", e)
                }
            }
        })
        .collect();

    let count = |status| outcomes.iter().filter(|o| o.status == status).count();
    let processed = count("processed");
    let summary = json!({
        "command": "compute",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "ceiling_m": ceiling,
        "format": s.raw("format").unwrap_or("auto"),
        "station_elevation_m": s.get::<f64>("station_elevation")?,
        "processed": processed,
        "skipped_ceiling": count("skipped_ceiling"),
        "failed_parse": count("failed_parse"),
        "failed": count("failed"),
        "files": outcomes,
    });
    write_json(&out.join("summary.json"), &summary)?;

    if processed == 0 {
        return Err(CliError::empty(format!(
            "no profile produced from {} input(s)",
            inputs.len()
        )));
    }
    if let Some(bad) = outcomes.iter().find(|o| o.code != 0) {
        return Err(CliError {
            code: bad.code,
            message: format!(
                "{processed} of {} input(s) processed; first failure: {}",
                inputs.len(),
                bad.message.as_deref().unwrap_or("")
            ),
        });
    }
    Ok(())
}

fn describe(c: &EstimatorConfig) -> String {
    format!(
        "dz={} omega={} m={} scale_factor={} wavelength={}",
        c.dz,
        c.omega,
        c.m,
        c.scale_factor,
        c.wavelength.map_or("none".into(), |w| w.to_string())
    )
}

pub fn average(s: &Settings, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let fallback = estimator_config(s)?;
    let min_coverage: f64 = s.get_or("min_coverage", DEFAULT_MIN_COVERAGE)?;
    check_exist(inputs)?;
    let profiles = inputs
        .iter()
        .map(|p| read_profile(p, &fallback))
        .collect::<CliResult<Vec<_>>>()?;

    let first = &profiles[0].config;
    let mismatched: Vec<String> = inputs
        .iter()
        .zip(&profiles)
        .filter(|(_, p)| p.config != *first)
        .map(|(path, p)| format!("  {}: {}", path.display(), describe(&p.config)))
        .collect();
    if !mismatched.is_empty() {
        return Err(CliError::validation(format!(
            "configuration mismatch; {} uses {}, but:\n{}",
            inputs[0].display(),
            describe(first),
            mismatched.join("\n")
        )));
    }

    let avg = average_profiles(&profiles, min_coverage)?;
    if avg.profile.is_empty() {
        return Err(CliError::empty("no level is covered by enough profiles"));
    }
    ensure_dir(out)?;
    let meta = json!({
        "command": "average",
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "min_coverage": min_coverage,
        "profile_count": avg.profile_count,
        "dropped_levels": avg.dropped_levels,
    });
    write_profile(out, "average", &avg.profile, meta)?;
    Ok(())
}
