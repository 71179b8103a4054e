//! `cn2-profiler`: batch Cn² profiling from radiosonde soundings.

mod error;
mod modelcmd;
mod output;
mod profilecmd;
mod settings;
mod synthcmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::error::{CliError, CliResult, EXIT_USAGE};
use crate::settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "cn2-profiler", version, about = "Optical turbulence (Cn²) profiles from balloon soundings")]
struct Cli {
    /// Key-value config file; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (created if missing)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// More logging (-v info, -vv debug)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct EstimatorFlags {
    /// Vertical grid step, m
    #[arg(long)]
    dz: Option<f64>,
    /// Window half-width for the mean, in grid steps
    #[arg(long)]
    omega: Option<usize>,
    /// Estimator separation in grid steps
    #[arg(long)]
    m: Option<usize>,
    /// Scale factor c applied to the estimate
    #[arg(long)]
    scale_factor: Option<f64>,
    /// Optical wavelength, µm (default: wavelength-free index formula)
    #[arg(long)]
    wavelength: Option<f64>,
}

impl EstimatorFlags {
    fn apply(&self, s: &mut Settings) {
        s.set("dz", self.dz);
        s.set("omega", self.omega);
        s.set("m", self.m);
        s.set("scale_factor", self.scale_factor);
        s.set("wavelength", self.wavelength);
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a Cn² profile from each sounding file
    Compute {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        estimator: EstimatorFlags,
        /// Soundings topping out below this altitude are skipped, m
        #[arg(long)]
        ceiling: Option<f64>,
        /// csv, uwyo or auto (by extension)
        #[arg(long)]
        format: Option<String>,
        /// Station elevation for fixed-width soundings without a sidecar, m
        #[arg(long)]
        station_elevation: Option<f64>,
    },
    /// Average Cn² profiles computed with the same configuration
    Average {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        estimator: EstimatorFlags,
        /// Fraction of profiles that must cover a level to keep it
        #[arg(long)]
        min_coverage: Option<f64>,
    },
    /// Synthesize von Kármán refractive-index fluctuations
    Synth {
        /// Number of samples (power of two)
        #[arg(long)]
        samples: Option<usize>,
        /// Sample spacing, m
        #[arg(long)]
        dz: Option<f64>,
        #[arg(long)]
        cn2: Option<f64>,
        /// Outer scale L0, m
        #[arg(long)]
        outer_scale: Option<f64>,
        /// Inner scale l0, m
        #[arg(long)]
        inner_scale: Option<f64>,
        /// Constant mean index added to the fluctuations
        #[arg(long)]
        n0: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimated-to-true Cn² ratio on synthetic fields
    Study {
        /// Comma-separated grid steps, m
        #[arg(long)]
        dz_list: Option<String>,
        /// Comma-separated outer scales, m
        #[arg(long)]
        outer_scales: Option<String>,
        /// Comma-separated window half-widths
        #[arg(long)]
        omegas: Option<String>,
        /// Comma-separated estimator separations
        #[arg(long)]
        ms: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Fine samples per trial (power of two)
        #[arg(long)]
        samples: Option<usize>,
        /// Fine synthesis steps per grid step
        #[arg(long)]
        oversample: Option<usize>,
        #[arg(long)]
        cn2: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Scale factor bringing each profile onto a reference model in a band
    Calibrate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        estimator: EstimatorFlags,
        /// Altitude band `low,high`, m
        #[arg(long)]
        band: Option<String>,
        /// hv57, hv:W,A, trappes, hilo or a JSON parameter file
        #[arg(long)]
        reference: Option<String>,
        /// Added to profile altitudes before evaluating the model, m
        #[arg(long)]
        station_elevation: Option<f64>,
    },
    /// Fit the generalized Hufnagel-Valley model to a profile
    Fit {
        input: PathBuf,
        #[command(flatten)]
        estimator: EstimatorFlags,
        /// Initial parameters: trappes, hilo, hv57, hv:W,A or a JSON file
        #[arg(long)]
        init: Option<String>,
        /// Comma-separated fixed parameters, `none`, or `standard`
        #[arg(long)]
        fix: Option<String>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        station_elevation: Option<f64>,
    },
    /// Thermosonde Cn² binned against a model
    Thermo {
        /// Thermosonde CSV (`altitude_m,ct2_K2m23`)
        input: PathBuf,
        /// Companion sounding providing pressure and temperature
        #[arg(long)]
        sounding: PathBuf,
        /// Bin width, m
        #[arg(long)]
        dz: Option<f64>,
        /// hv57, hv:W,A, trappes, hilo or a JSON parameter file
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        station_elevation: Option<f64>,
    },
    /// Compare a profile with a model or another profile
    Compare {
        input: PathBuf,
        #[command(flatten)]
        estimator: EstimatorFlags,
        /// Model (hv57, hv:W,A, trappes, hilo, JSON file) or profile CSV
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        station_elevation: Option<f64>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CN2_PROFILER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("CN2_PROFILER_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let mut s = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    s.set("out", cli.out.as_ref().map(|p| p.display().to_string()));
    let out = PathBuf::from(s.raw("out").unwrap_or("."));

    match cli.command {
        Command::Compute {
            inputs,
            estimator,
            ceiling,
            format,
            station_elevation,
        } => {
            estimator.apply(&mut s);
            s.set("ceiling", ceiling);
            s.set("format", format);
            s.set("station_elevation", station_elevation);
            profilecmd::compute(&s, &inputs, &out)
        }
        Command::Average {
            inputs,
            estimator,
            min_coverage,
        } => {
            estimator.apply(&mut s);
            s.set("min_coverage", min_coverage);
            profilecmd::average(&s, &inputs, &out)
        }
        Command::Synth {
            samples,
            dz,
            cn2,
            outer_scale,
            inner_scale,
            n0,
            seed,
        } => {
            s.set("samples", samples);
            s.set("dz", dz);
            s.set("cn2", cn2);
            s.set("outer_scale", outer_scale);
            s.set("inner_scale", inner_scale);
            s.set("n0", n0);
            s.set("seed", seed);
            synthcmd::synth(&s, &out)
        }
        Command::Study {
            dz_list,
            outer_scales,
            omegas,
            ms,
            trials,
            samples,
            oversample,
            cn2,
            seed,
        } => {
            s.set("dz_list", dz_list);
            s.set("outer_scales", outer_scales);
            s.set("omegas", omegas);
            s.set("ms", ms);
            s.set("trials", trials);
            s.set("samples", samples);
            s.set("oversample", oversample);
            s.set("cn2", cn2);
            s.set("seed", seed);
            synthcmd::study(&s, &out)
        }
        Command::Calibrate {
            inputs,
            estimator,
            band,
            reference,
            station_elevation,
        } => {
            estimator.apply(&mut s);
            s.set("band", band);
            s.set("reference", reference);
            s.set("station_elevation", station_elevation);
            modelcmd::calibrate(&s, &inputs, &out)
        }
        Command::Fit {
            input,
            estimator,
            init,
            fix,
            starts,
            seed,
            station_elevation,
        } => {
            estimator.apply(&mut s);
            s.set("init", init);
            s.set("fix", fix);
            s.set("starts", starts);
            s.set("seed", seed);
            s.set("station_elevation", station_elevation);
            modelcmd::fit(&s, &input, &out)
        }
        Command::Thermo {
            input,
            sounding,
            dz,
            model,
            format,
            station_elevation,
        } => {
            s.set("dz", dz);
            s.set("model", model);
            s.set("format", format);
            s.set("station_elevation", station_elevation);
            modelcmd::thermo(&s, &input, &sounding, &out)
        }
        Command::Compare {
            input,
            estimator,
            reference,
            station_elevation,
        } => {
            estimator.apply(&mut s);
            s.set("reference", reference);
            s.set("station_elevation", station_elevation);
            modelcmd::compare(&s, &input, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
