use std::path::{Path, PathBuf};

use cn2_core::bin_average_with_origin;
use cn2_core::models::write_model_csv;
use cn2_core::{
    calibrate_scale_factor, fit_generalized_hv, generalized_hv_cn2, hv_cn2, parse_thermosonde,
    CalibrationBand, Cn2Profile, FitMask, FitOptions, GeneralizedHVParams, HVParams,
};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult, EXIT_NUMERICAL};
use crate::output::{ensure_dir, write_atomic, write_json};
use crate::profilecmd::{
    base_name, check_exist, estimator_config, load_sounding, open, read_profile, write_profile,
};
use crate::settings::Settings;

/// Analytic reference profile selected on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Hv(HVParams),
    Generalized(GeneralizedHVParams),
}

impl Model {
    /// `hv57`, `hv:W,A`, `trappes`, `hilo`, or a JSON file of generalized
    /// parameters.
    pub fn parse(arg: &str) -> CliResult<Model> {
        match arg {
            "hv57" | "hv-5/7" => return Ok(Model::Hv(HVParams::HV57)),
            "trappes" => return Ok(Model::Generalized(GeneralizedHVParams::trappes())),
            "hilo" => return Ok(Model::Generalized(GeneralizedHVParams::hilo())),
            _ => {}
        }
        if let Some(rest) = arg.strip_prefix("hv:") {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::usage(format!("model `{arg}`: {e}")))?;
            let [w, a] = parts[..] else {
                return Err(CliError::usage(format!("model `{arg}`: expected hv:W,A")));
            };
            return HVParams::new(w, a)
                .map(Model::Hv)
                .map_err(|e| CliError::usage(e.to_string()));
        }
        let path = Path::new(arg);
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "unknown model `{arg}` (hv57, hv:W,A, trappes, hilo or a JSON file)"
            )));
        }
        let params: GeneralizedHVParams = serde_json::from_reader(open(path)?)
            .map_err(|e| CliError::validation(format!("{arg}: {e}")))?;
        params.validate().map_err(|e| CliError::validation(format!("{arg}: {e}")))?;
        Ok(Model::Generalized(params))
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            Model::Hv(p) => hv_cn2(z, p),
            Model::Generalized(p) => generalized_hv_cn2(z, p),
        }
    }

    fn generalized(&self) -> GeneralizedHVParams {
        match self {
            Model::Hv(p) => GeneralizedHVParams::from_hv(p),
            Model::Generalized(p) => p.clone(),
        }
    }
}

fn station_offset(s: &Settings) -> CliResult<f64> {
    let offset = s.get("station_elevation")?;
    if offset.is_none() {
        log::warn!("no station elevation given; model altitudes are taken as above ground");
    }
    Ok(offset.unwrap_or(0.0))
}

fn parse_band(s: &Settings) -> CliResult<CalibrationBand> {
    let Some(v) = s.list::<f64>("band")? else {
        return Ok(CalibrationBand::default());
    };
    let [lo, hi] = v[..] else {
        return Err(CliError::usage("band must be `low,high`"));
    };
    CalibrationBand::new(lo, hi).map_err(|e| CliError::usage(e.to_string()))
}

pub fn calibrate(s: &Settings, inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    let fallback = estimator_config(s)?;
    let band = parse_band(s)?;
    let reference_arg = s.raw("reference").unwrap_or("hv57").to_string();
    let reference = Model::parse(&reference_arg)?;
    let offset = station_offset(s)?;
    check_exist(inputs)?;
    ensure_dir(out)?;

    let mut results = Vec::new();
    for path in inputs {
        let profile = read_profile(path, &fallback)?;
        let cal = calibrate_scale_factor(&profile, |z| reference.eval(z), &band, offset)
            .map_err(|e| CliError::from(e).context(path.display()))?;
        let scaled = profile.scaled(cal.factor);
        let name = format!("{}.calibrated", base_name(path));
        let csv = write_profile(
            out,
            &name,
            &scaled,
            json!({
                "command": "calibrate",
                "source": path.display().to_string(),
                "station_id": scaled.provenance,
                "calibration": cal,
            }),
        )?;
        log::info!("{}: c = {:.4}", path.display(), cal.factor);
        results.push(json!({
            "input": path.display().to_string(),
            "output": csv.display().to_string(),
            "input_config": profile.config,
            "factor": cal.factor,
            "rms_log10": cal.rms_log10,
            "used_levels": cal.used_levels,
            "excluded_nonpositive": cal.excluded_nonpositive,
        }));
    }
    write_json(
        &out.join("calibration.json"),
        &json!({
            "command": "calibrate",
            "version": env!("CARGO_PKG_VERSION"),
            "reference": reference_arg,
            "reference_params": reference,
            "band": band,
            "station_elevation_m": offset,
            "results": results,
        }),
    )
}

fn fit_mask(s: &Settings, init: &GeneralizedHVParams) -> CliResult<FitMask> {
    match s.raw("fix").unwrap_or("standard") {
        "standard" => Ok(FitMask::standard(init)),
        "none" => Ok(FitMask::all_free(init)),
        list => {
            let names: Vec<&str> = list.split(',').map(str::trim).filter(|n| !n.is_empty()).collect();
            FitMask::with_fixed(init, &names).map_err(|e| CliError::usage(e.to_string()))
        }
    }
}

pub fn fit(s: &Settings, input: &Path, out: &Path) -> CliResult<()> {
    let fallback = estimator_config(s)?;
    let init_arg = s.raw("init").unwrap_or("trappes").to_string();
    let init = Model::parse(&init_arg)?.generalized();
    let mask = fit_mask(s, &init)?;
    let d = FitOptions::default();
    let opts = FitOptions {
        starts: s.get_or("starts", d.starts)?,
        seed: s.get_or("seed", d.seed)?,
        magnitude_decades: s.get_or("magnitude_decades", d.magnitude_decades)?,
        scale_factor_range: s.get_or("scale_range", d.scale_factor_range)?,
        altitude_offset: station_offset(s)?,
        max_iter: d.max_iter,
    };
    check_exist(&[input.to_path_buf()])?;
    let profile = read_profile(input, &fallback)?;
    ensure_dir(out)?;

    let (report, converged, failure) = match fit_generalized_hv(&profile, &init, &mask, &opts) {
        Ok(r) => (r, true, None),
        Err(cn2_core::Error::FitNotConverged { best, starts, .. }) => {
            let msg = format!("fit did not converge from any of {starts} starts; best-so-far written");
            (*best, false, Some(msg))
        }
        Err(e) => return Err(CliError::from(e).context(input.display())),
    };
    write_json(
        &out.join("fit.json"),
        &json!({
            "command": "fit",
            "version": env!("CARGO_PKG_VERSION"),
            "input": input.display().to_string(),
            "init": init_arg,
            "initial_params": init,
            "options": opts,
            "converged": converged,
            "report": report,
        }),
    )?;
    let offset = opts.altitude_offset;
    write_atomic(&out.join("fit_model.csv"), |w| {
        Ok(write_model_csv(w, &profile.altitudes, |z| {
            generalized_hv_cn2(z + offset, &report.params)
        })?)
    })?;
    match failure {
        None => Ok(()),
        Some(message) => Err(CliError {
            code: EXIT_NUMERICAL,
            message,
        }),
    }
}

pub fn thermo(s: &Settings, input: &Path, sounding_path: &Path, out: &Path) -> CliResult<()> {
    let dz: f64 = s.get_or("dz", 100.0)?;
    if !(dz.is_finite() && dz > 0.0) {
        return Err(CliError::usage(format!("bin width must be positive, got {dz}")));
    }
    let model_arg = s.raw("model").unwrap_or("hv57").to_string();
    let model = Model::parse(&model_arg)?;
    let offset = station_offset(s)?;
    check_exist(&[input.to_path_buf(), sounding_path.to_path_buf()])?;
    let thermo = parse_thermosonde(open(input)?)
        .map_err(|e| CliError::from(e).context(input.display()))?;
    let sounding = load_sounding(sounding_path, s)?;
    let points = thermo
        .to_cn2(&sounding)
        .map_err(|e| CliError::from(e).context(input.display()))?;
    // bins centred on multiples of dz
    let binned = bin_average_with_origin(&points, dz, -0.5 * dz);
    if binned.is_empty() {
        return Err(CliError::empty("no thermosonde level inside the sounding range"));
    }
    ensure_dir(out)?;
    write_atomic(&out.join("thermo.csv"), |w| {
        writeln!(w, "altitude_m,model_cn2_m_23,thermo_cn2_m_23")?;
        for (z, v) in &binned {
            writeln!(w, "{z},{},{v}", model.eval(z + offset))?;
        }
        Ok(())
    })?;
    write_json(
        &out.join("thermo.json"),
        &json!({
            "command": "thermo",
            "version": env!("CARGO_PKG_VERSION"),
            "input": input.display().to_string(),
            "sounding": sounding_path.display().to_string(),
            "bin_m": dz,
            "model": model_arg,
            "model_params": model,
            "station_elevation_m": offset,
            "thermosonde_levels": thermo.levels.len(),
            "converted_levels": points.len(),
            "bins": binned.len(),
        }),
    )
}

enum Reference {
    Model(Model),
    Profile(Cn2Profile),
}

pub fn compare(s: &Settings, input: &Path, out: &Path) -> CliResult<()> {
    let fallback = estimator_config(s)?;
    let arg = s.raw("reference").unwrap_or("hv57").to_string();
    let is_profile = Path::new(&arg)
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    check_exist(&[input.to_path_buf()])?;
    let reference = if is_profile {
        check_exist(&[PathBuf::from(&arg)])?;
        Reference::Profile(read_profile(Path::new(&arg), &fallback)?)
    } else {
        Reference::Model(Model::parse(&arg)?)
    };
    let offset = match reference {
        Reference::Model(_) => station_offset(s)?,
        Reference::Profile(_) => 0.0,
    };
    let profile = read_profile(input, &fallback)?;

    let rows: Vec<(f64, f64, f64)> = match &reference {
        Reference::Model(m) => profile
            .altitudes
            .iter()
            .zip(&profile.cn2)
            .map(|(&z, &v)| (z, v, m.eval(z + offset)))
            .collect(),
        Reference::Profile(r) => {
            let tol = 1e-6 * profile.config.dz.min(r.config.dz);
            profile
                .altitudes
                .iter()
                .zip(&profile.cn2)
                .filter_map(|(&z, &v)| {
                    let j = r.altitudes.partition_point(|&a| a < z - tol);
                    r.altitudes
                        .get(j)
                        .filter(|a| (**a - z).abs() <= tol)
                        .map(|_| (z, v, r.cn2[j]))
                })
                .collect()
        }
    };
    if rows.is_empty() {
        return Err(CliError::empty("profile and reference share no altitude"));
    }
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|(_, v, r)| *v > 0.0 && *r > 0.0)
        .map(|(_, v, r)| (v / r).log10())
        .collect();
    let k = ratios.len() as f64;
    let mean = (k > 0.0).then(|| ratios.iter().sum::<f64>() / k);
    let rms = (k > 0.0).then(|| (ratios.iter().map(|x| x * x).sum::<f64>() / k).sqrt());

    ensure_dir(out)?;
    write_atomic(&out.join("compare.csv"), |w| {
        writeln!(w, "altitude_m,cn2_m_23,reference_cn2_m_23,log10_ratio")?;
        for (z, v, r) in &rows {
            if *v > 0.0 && *r > 0.0 {
                writeln!(w, "{z},{v},{r},{}", (v / r).log10())?;
            } else {
                writeln!(w, "{z},{v},{r},")?;
            }
        }
        Ok(())
    })?;
    write_json(
        &out.join("compare.json"),
        &json!({
            "command": "compare",
            "version": env!("CARGO_PKG_VERSION"),
            "input": input.display().to_string(),
            "reference": arg,
            "station_elevation_m": offset,
            "levels": rows.len(),
            "compared_levels": ratios.len(),
            "mean_log10_ratio": mean,
            "rms_log10_ratio": rms,
        }),
    )?;
    if ratios.is_empty() {
        return Err(CliError::empty("no level with positive values on both sides"));
    }
    Ok(())
}
