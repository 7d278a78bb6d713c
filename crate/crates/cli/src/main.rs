//! `greygp`: generate benchmark data, fit the grey-box model family, run
//! coverage/emissions sweeps, and convert runtimes into CO2e estimates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use greygp::carbon::{estimate, timed, EmissionsEstimate};
use greygp::config::{DataSourceKind, RunConfig};
use greygp::dataset::{load_csv, sample_coverage, write_csv, Coverage, Dataset, EvalGrid};
use greygp::error::Error;
use greygp::gp::{nmse, GpPosterior};
use greygp::report::{summary_table, write_curves_csv, write_report_json, write_summary_csv};
use greygp::sweep::{full_sweep, Mode, SweepOptions};
use greygp::training::{
    fit, start_point_from_quantiles, start_quantiles, subseed, DataStats, FitResult,
};

#[derive(Parser)]
#[command(
    name = "greygp",
    version,
    about = "Gaussian-process regression with configurable physics greyness, \
             with a data-coverage and emissions benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a coverage-banded training dataset as CSV.
    GenData {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Coverage band, a multiple of 10 in [10, 100].
        #[arg(long)]
        coverage: u32,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one preset on one dataset and print the fit summary.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Preset name (black-1, grey-1, grey-2, or a custom preset).
        #[arg(long)]
        preset: String,
        /// Train on this CSV instead of generated data.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Coverage band for generated data.
        #[arg(long, default_value_t = 100)]
        coverage: u32,
        /// Output directory for fit.json (defaults to the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the optimization trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full (model x coverage) study and write reports.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for report.json, summary.csv, curves.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured mode (measured or fast).
        #[arg(long)]
        mode: Option<String>,
        /// Override the configured NMSE threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a runtime in seconds into an emissions estimate.
    Emissions {
        #[arg(long)]
        config: PathBuf,
        /// Runtime to convert, seconds.
        #[arg(long = "runtime-s")]
        runtime_s: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are successes, everything else is
            // a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 usage/config, 2 numerical failure, 3 i/o.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::NumericalFailure { .. } | Error::DivergedRun { .. } | Error::DegenerateTargets => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            config,
            coverage,
            out,
            seed,
        } => cmd_gen_data(&config, coverage, &out, seed),
        Command::Fit {
            config,
            preset,
            data,
            coverage,
            out,
            trace,
            seed,
        } => cmd_fit(&config, &preset, data.as_deref(), coverage, out, trace, seed),
        Command::Sweep {
            config,
            out,
            mode,
            threshold,
            seed,
        } => cmd_sweep(&config, out, mode, threshold, seed),
        Command::Emissions { config, runtime_s } => cmd_emissions(&config, runtime_s),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.override_seed(s);
    }
    Ok(config)
}

fn cmd_gen_data(
    config_path: &Path,
    coverage: u32,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), Error> {
    let config = load_config(config_path, seed)?;
    println!("config hash: {}", config.config_hash());
    let data = sample_coverage(
        &config.domain,
        coverage,
        subseed(config.seed, "data", &[coverage as u64, 0]),
    )?;
    write_csv(out, &data)?;
    let band_hi = config.domain.band_hi(coverage);
    println!(
        "wrote {} rows to {} (coverage {coverage}%, x1 in [{:.4}, {:.4}], x2 in [{:.4}, {:.4}])",
        data.len(),
        out.display(),
        config.domain.x1_range[0],
        band_hi,
        config.domain.x2_range[0],
        config.domain.x2_range[1],
    );
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    preset: String,
    free_param_count: usize,
    params: BTreeMap<String, f64>,
    final_lml: f64,
    #[serde(serialize_with = "greygp::training::serialize_nmse")]
    nmse: f64,
    runtime_s: f64,
    n_train: usize,
    jittered_iterations: usize,
    seed: u64,
    config_hash: String,
    emissions: Option<EmissionsEstimate>,
}

fn cmd_fit(
    config_path: &Path,
    preset: &str,
    data_path: Option<&Path>,
    coverage: u32,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let config = load_config(config_path, seed)?;
    println!("config hash: {}", config.config_hash());
    let template = config.resolve_preset(preset)?;

    let (train_data, eval): (Dataset, EvalGrid) = match data_path {
        Some(p) => {
            let data = load_csv(p)?;
            let eval = EvalGrid {
                inputs: data.inputs.clone(),
                truths: data.targets.clone(),
            };
            (data, eval)
        }
        None => {
            let data = sample_coverage(
                &config.domain,
                coverage,
                subseed(config.seed, "data", &[coverage as u64, 0]),
            )?;
            (data, greygp::dataset::evaluation_grid(&config.domain)?)
        }
    };

    let stats = DataStats::from_dataset(&train_data);
    let quantiles = start_quantiles(config.seed, 0, template.param_count());
    let start = start_point_from_quantiles(&template, &stats, &quantiles)?;

    let (outcome, runtime_s) = timed(|| fit(&template, &train_data, &start, &config.train));
    let FitResult { model, trace: fit_trace } = outcome?;

    let posterior = GpPosterior::new(&model, &train_data)?;
    let (mean, _) = posterior.predict(eval.inputs.view())?;
    let nmse_value = nmse(
        mean.as_slice().expect("contiguous"),
        eval.truths.as_slice().expect("contiguous"),
    )?;

    let emissions = config
        .power
        .as_ref()
        .map(|p| estimate(runtime_s, p))
        .transpose()?;

    let summary = FitSummary {
        preset: template.name.clone(),
        free_param_count: template.free_param_count(),
        params: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .collect(),
        final_lml: fit_trace.final_lml,
        nmse: nmse_value,
        runtime_s,
        n_train: train_data.len(),
        jittered_iterations: fit_trace.jittered_iterations,
        seed: config.seed,
        config_hash: config.config_hash(),
        emissions,
    };

    println!(
        "{} ({} free hyperparameters), N = {}, coverage {}",
        summary.preset,
        summary.free_param_count,
        summary.n_train,
        match train_data.coverage {
            Coverage::Percent(p) => format!("{p}%"),
            Coverage::External => "external".to_string(),
        }
    );
    for (name, value) in &summary.params {
        println!("  {name:<22} {value:.6}");
    }
    println!("  {:<22} {:.6}", "final LML", summary.final_lml);
    println!("  {:<22} {:.4}", "NMSE", summary.nmse);
    println!("  {:<22} {:.3} s", "runtime", summary.runtime_s);
    if let Some(e) = &summary.emissions {
        println!("  {:<22} {:.6} g ({:.6} kWh)", "emissions", e.gco2e, e.energy_kwh);
    }

    let out_dir = out.unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let json_path = out_dir.join("fit.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&json_path, json + "\n")
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    println!("wrote {}", json_path.display());

    if let Some(trace_path) = trace {
        fit_trace.write_csv(&trace_path)?;
        println!("wrote {}", trace_path.display());
    }
    Ok(())
}

fn cmd_sweep(
    config_path: &Path,
    out: Option<PathBuf>,
    mode: Option<String>,
    threshold: Option<f64>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let mut config = load_config(config_path, seed)?;
    if let Some(m) = mode {
        config.mode = match m.to_ascii_lowercase().as_str() {
            "measured" => Mode::Measured,
            "fast" => Mode::Fast,
            other => {
                return Err(Error::Config(format!(
                    "unknown mode `{other}`; expected measured or fast"
                )))
            }
        };
    }
    if let Some(t) = threshold {
        config.nmse_threshold = t;
    }
    config.validate()?;
    let hash = config.config_hash();
    println!("config hash: {hash}");

    if config.mode == Mode::Measured && config.power.is_none() {
        eprintln!("note: measured mode without a [power] section; emissions will be omitted");
    }

    let templates = config.resolve_presets()?;
    let data = config.sweep_data()?;
    let opts = SweepOptions {
        threshold: config.nmse_threshold,
        mode: config.mode,
        nmse_region: config.nmse_region,
        config_hash: Some(hash),
    };
    let report = full_sweep(
        &templates,
        &data,
        &config.train,
        &opts,
        config.power.as_ref(),
    )?;

    let out_dir = out.unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_report_json(&report, out_dir.join("report.json"))?;
    write_summary_csv(&report, out_dir.join("summary.csv"))?;
    write_curves_csv(&report, out_dir.join("curves.csv"))?;

    print!("{}", summary_table(&report));
    println!(
        "wrote report.json, summary.csv, curves.csv to {}",
        out_dir.display()
    );
    Ok(())
}

fn cmd_emissions(config_path: &Path, runtime_s: f64) -> Result<(), Error> {
    let config = load_config(config_path, None)?;
    println!("config hash: {}", config.config_hash());
    let power = config.power.as_ref().ok_or_else(|| {
        Error::Config("a [power] section is required for emissions estimates".to_string())
    })?;
    let e = estimate(runtime_s, power)?;
    let json = serde_json::to_string_pretty(&e).expect("estimate serializes");
    println!("{json}");
    Ok(())
}
