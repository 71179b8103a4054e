use std::path::Path;

use cn2_core::synth::{resolved_variance, synthesize_with_mean, write_study_csv, DEFAULT_N0};
use cn2_core::{scale_factor_study, SpectrumParams, StudyConfig};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_atomic, write_json};
use crate::settings::Settings;

fn spectrum(s: &Settings) -> CliResult<SpectrumParams> {
    SpectrumParams::new(
        s.get_or("cn2", 1e-16)?,
        s.get_or("outer_scale", 100.0)?,
        s.get_or("inner_scale", 1e-3)?,
    )
    .map_err(|e| CliError::usage(e.to_string()))
}

pub fn synth(s: &Settings, out: &Path) -> CliResult<()> {
    let params = spectrum(s)?;
    let samples: usize = s.get_or("samples", 1 << 16)?;
    let dz: f64 = s.get_or("dz", 1.0)?;
    let n0: f64 = s.get_or("n0", DEFAULT_N0)?;
    let seed: u64 = s.get_or("seed", 0)?;
    let field = synthesize_with_mean(samples, dz, &params, seed, n0)
        .map_err(|e| CliError::usage(e.to_string()))?;
    ensure_dir(out)?;
    write_atomic(&out.join("synth.csv"), |w| Ok(field.write_csv(w)?))?;
    write_json(
        &out.join("synth.json"),
        &json!({
            "command": "synth",
            "version": env!("CARGO_PKG_VERSION"),
            "samples": samples,
            "dz_m": dz,
            "n0": n0,
            "seed": seed,
            "params": params,
            "sample_variance": field.sample_variance(),
            "expected_variance": resolved_variance(samples, dz, &params),
        }),
    )
}

pub fn study(s: &Settings, out: &Path) -> CliResult<()> {
    let d = StudyConfig::default();
    let config = StudyConfig {
        dz_list: s.list_or("dz_list", d.dz_list)?,
        outer_scales: s.list_or("outer_scales", d.outer_scales)?,
        omegas: s.list_or("omegas", d.omegas)?,
        ms: s.list_or("ms", d.ms)?,
        trials: s.get_or("trials", d.trials)?,
        seed: s.get_or("seed", d.seed)?,
        cn2: s.get_or("cn2", d.cn2)?,
        inner_scale: s.get_or("inner_scale", d.inner_scale)?,
        samples: s.get_or("samples", d.samples)?,
        oversample: s.get_or("oversample", d.oversample)?,
        guard_fraction: s.get_or("guard_fraction", d.guard_fraction)?,
    };
    let rows = scale_factor_study(&config).map_err(|e| match e {
        cn2_core::Error::Numerical(_) => CliError::from(e),
        other => CliError::usage(other.to_string()),
    })?;
    ensure_dir(out)?;
    write_atomic(&out.join("study.csv"), |w| Ok(write_study_csv(w, &rows)?))?;
    write_json(
        &out.join("study.json"),
        &json!({
            "command": "study",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "rows": rows,
        }),
    )
}
