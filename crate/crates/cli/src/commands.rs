//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nmr_grape::grape::{design, GrapeProblem, ScaleProbe, SeedOutcome};
use nmr_grape::propagation::propagate;
use nmr_grape::pulse_file::PulseFile;
use nmr_grape::sensitivity::{scan, DeviationSpec};
use nmr_grape::spectro::{integrate_lines, observe, pulse_spectrum, Component, LinePolarization};
use nmr_grape::spin::thermal_deviation_state;
use nmr_grape::ControlPulse;

use crate::config::Config;
use crate::{read_pulse_file, write_atomically, CliError};

#[derive(Debug, Parser)]
#[command(name = "nmrgrape", version, about = "Shaped-pulse design and verification for coupled spin-1/2 systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a pulse from several random starts and keep the most robust.
    Design(DesignArgs),
    /// Print the fidelity of a pulse on the configured problem.
    Evaluate(EvaluateArgs),
    /// Fidelity of a pulse under single-parameter deviations, as CSV.
    Sensitivity(SensitivityArgs),
    /// Simulate readout spectra and line polarizations.
    Spectrum(SpectrumArgs),
    /// Fourier transform of one pulse component, as CSV.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Nominal fidelity the selected pulse must reach for exit status 0.
    #[arg(long, default_value_t = 0.99)]
    pub min_fidelity: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub config: PathBuf,
    pub pulse: PathBuf,
    /// RF scale applied to every channel.
    #[arg(long, default_value_t = 1.0)]
    pub rf_scale: f64,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    pub config: PathBuf,
    pub pulse: PathBuf,
    /// JSON array of deviations.
    pub specs: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    pub config: PathBuf,
    /// Pulse applied to the thermal state before readout; omit for the
    /// reference spectrum.
    pub pulse: Option<PathBuf>,
    #[arg(long)]
    pub readout: String,
    /// Output prefix for `_fid.csv`, `_spectrum.csv` and `_polarization.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub rf_scale: f64,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub pulse: PathBuf,
    /// Channel to transform; defaults to the first one in the file.
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long, value_enum, default_value = "x")]
    pub component: ComponentArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ComponentArg {
    X,
    Y,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Design(a) => run_design(&a, out),
        Command::Evaluate(a) => run_evaluate(&a, out),
        Command::Sensitivity(a) => run_sensitivity(&a, out),
        Command::Spectrum(a) => run_spectrum(&a, out),
        Command::Convert(a) => run_convert(&a, out),
    }
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write output: {e}")))
}

fn load(config: &Path) -> Result<(Config, GrapeProblem), CliError> {
    let c = Config::load(config)?;
    let p = c.build_problem()?;
    Ok((c, p))
}

fn load_pulse_for(problem: &GrapeProblem, path: &Path) -> Result<ControlPulse, CliError> {
    let file = read_pulse_file(path)?;
    problem
        .check_pulse(&file.pulse)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(file.pulse)
}

fn joint_scale(problem: &GrapeProblem, s: f64) -> Result<Vec<f64>, CliError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(CliError::Validation(format!("--rf-scale must be positive, got {s}")));
    }
    Ok(vec![s; problem.controls().len()])
}

#[derive(Serialize)]
struct DesignReport<'a> {
    selected_seed: u64,
    nominal_fidelity: f64,
    worst_case_fidelity: f64,
    member_fidelities: &'a [f64],
    probes: &'a [ScaleProbe],
    min_fidelity: f64,
    target_reached: bool,
    seeds: &'a [SeedOutcome],
}

fn run_design(args: &DesignArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (config, problem) = load(&args.config)?;
    let outcome = design(&problem, &config.optimizer, &args.seeds)?;
    let best = outcome.best_outcome();
    let reached = best.nominal_fidelity >= args.min_fidelity;
    let report = DesignReport {
        selected_seed: best.seed,
        nominal_fidelity: best.nominal_fidelity,
        worst_case_fidelity: best.worst_case,
        member_fidelities: &best.member_fidelities,
        probes: &best.probes,
        min_fidelity: args.min_fidelity,
        target_reached: reached,
        seeds: &outcome.outcomes,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let pulse_text = PulseFile::new(outcome.pulse.clone(), problem.max_rf())?.to_text();
    write_atomically(&[(args.out.clone(), pulse_text), (args.report.clone(), json)])?;

    let mut text = String::new();
    for o in &outcome.outcomes {
        let iters: usize = o.reports().map(|r| r.iterations).sum();
        let _ = writeln!(
            text,
            "seed {}: nominal {:.6}, worst-case {:.6}, {} iterations",
            o.seed, o.nominal_fidelity, o.worst_case, iters
        );
    }
    let _ = writeln!(text, "selected seed {} with nominal fidelity {:.6}", best.seed, best.nominal_fidelity);
    emit(out, &text)?;
    if reached {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "nominal fidelity {:.6} below {}",
            best.nominal_fidelity, args.min_fidelity
        )))
    }
}

fn run_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, problem) = load(&args.config)?;
    let pulse = load_pulse_for(&problem, &args.pulse)?;
    let f = problem.fidelity_at(&pulse, &joint_scale(&problem, args.rf_scale)?)?;
    emit(out, &format!("{f:.6}\n"))
}

fn run_sensitivity(args: &SensitivityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (_, problem) = load(&args.config)?;
    let pulse = load_pulse_for(&problem, &args.pulse)?;
    let text = std::fs::read_to_string(&args.specs)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", args.specs.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let specs: Vec<DeviationSpec> = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Validation(format!("{}: key `{}`: {}", args.specs.display(), e.path(), e.inner())))?;
    let csv = scan(&pulse, &problem, &specs)?.to_csv();
    match &args.out {
        Some(path) => write_atomically(&[(path.clone(), csv)]),
        None => emit(out, &csv),
    }
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn polarization_table(lines: &[LinePolarization]) -> String {
    let mut text = String::from("spin,integral,reference_integral,polarization\n");
    for l in lines {
        let _ = writeln!(text, "{},{},{},{:.6}", l.label, l.integral, l.reference_integral, l.polarization);
    }
    text
}

fn run_spectrum(args: &SpectrumArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (config, problem) = load(&args.config)?;
    let system = problem.system();
    let thermal = thermal_deviation_state(system)?;
    let state = match &args.pulse {
        None => thermal.clone(),
        Some(path) => {
            let pulse = load_pulse_for(&problem, path)?;
            let scale = joint_scale(&problem, args.rf_scale)?;
            propagate(&thermal, &pulse, problem.drift(), problem.controls(), &scale)?.final_state()
        }
    };
    let acq = &config.acquisition;
    let (fid, spectrum) = observe(&state, system, &args.readout, acq)?;
    let (_, reference) = observe(&thermal, system, &args.readout, acq)?;
    let lines = integrate_lines(&spectrum, &reference, &spectrum.windows)?;

    let mut fid_csv = String::from("t_s,real,imag\n");
    for (t, s) in fid.times().zip(&fid.samples) {
        let _ = writeln!(fid_csv, "{t},{},{}", s.re, s.im);
    }
    let mut spec_csv = String::from("f_hz,real,imag\n");
    for (f, v) in spectrum.frequencies.iter().zip(&spectrum.values) {
        let _ = writeln!(spec_csv, "{f},{},{}", v.re, v.im);
    }
    let table = polarization_table(&lines);
    write_atomically(&[
        (prefixed(&args.out, "_fid.csv"), fid_csv),
        (prefixed(&args.out, "_spectrum.csv"), spec_csv),
        (prefixed(&args.out, "_polarization.csv"), table.clone()),
    ])?;
    emit(out, &table)
}

fn run_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = read_pulse_file(&args.pulse)?;
    let channel = match &args.channel {
        Some(c) => c.clone(),
        None => file.pulse.channels()[0].clone(),
    };
    let component = match args.component {
        ComponentArg::X => Component::X,
        ComponentArg::Y => Component::Y,
    };
    let spectrum = pulse_spectrum(&file.pulse, &channel, component)?;
    let mut csv = String::from("f_hz,real,imag\n");
    for (f, v) in spectrum.frequencies.iter().zip(&spectrum.values) {
        let _ = writeln!(csv, "{f},{},{}", v.re, v.im);
    }
    match &args.out {
        Some(path) => write_atomically(&[(path.clone(), csv)]),
        None => emit(out, &csv),
    }
}
