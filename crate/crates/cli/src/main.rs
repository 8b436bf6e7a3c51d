use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cvqdc_core::analytics::{best_attack, default_sigma2_grid, max_qdc_length, max_qdc_systems, survival_prob};
use cvqdc_core::harness::{
    self, channel_for, reproduce_figures, run_plan, run_sessions_at, security_curves, trace_session, write_ber_csv,
    write_curve_csv, write_pn_csv, BerRow, ExperimentPlan, Output, PointReport, FIGURE_SIGMA2, FULL_PRECISION,
};
use cvqdc_core::lattice::intrinsic_error;
use cvqdc_core::protocol::{ProtocolConfig, SessionResult};
use cvqdc_core::rep_code::{critical_point, uncorrectable_prob};
use cvqdc_core::{RepCode, Variance};

mod config;
mod error;

use config::{effective_seed, Preset, Resolved, RunConfigFile};
use error::CliError;

/// Simulator and security analyzer for lattice-coded quantum direct
/// communication with coherent states.
#[derive(Parser)]
#[command(name = "cvqdc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Intrinsic per-bit decoding error ε(Ω, Δ).
    #[command(allow_negative_numbers = true)]
    Epsilon {
        #[arg(long)]
        omega: f64,
        /// Per-quadrature noise variance.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Probability P_n(p) that majority voting over n copies fails.
    #[command(allow_negative_numbers = true)]
    Pn {
        #[arg(long)]
        n: u32,
        #[arg(long, conflicts_with_all = ["sweep", "target"])]
        p: Option<f64>,
        /// Print a CSV table over p = 0, step, ..., 1.
        #[arg(long, conflicts_with = "target")]
        sweep: bool,
        #[arg(long, default_value_t = 0.005, requires = "sweep")]
        step: f64,
        /// Print the physical error p̃ at which P_n reaches this value.
        #[arg(long)]
        target: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Survival-vs-stolen-information curves and the best attack.
    Curve {
        #[command(flatten)]
        source: ConfigArgs,
        /// Comma-separated cloner noises [default: 0.01,0.05,0.1,0.3,1].
        #[arg(long, value_delimiter = ',')]
        sigma2: Vec<f64>,
        /// Survival probability at which Eve counts as detected.
        #[arg(long, default_value_t = 0.01)]
        cutoff: f64,
        /// Curve points per noise value.
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the Monte Carlo experiment described by a config file.
    Simulate {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        preset: Preset,
        /// JSON results document.
        #[arg(long)]
        out: PathBuf,
        /// Full protocol sessions per noise value.
        #[arg(long, default_value_t = 10)]
        sessions: u64,
        /// JSON-lines transcript of the first session at each noise value.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo bit error rates of Bob and Eve.
    Ber {
        #[command(flatten)]
        source: ConfigArgs,
        /// Comma-separated cloner noises; 0 is the identity channel.
        #[arg(long, value_delimiter = ',')]
        sigma2: Vec<f64>,
        /// Message bits per noise value.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report error rates of decoded logical bits instead of physical ones.
        #[arg(long)]
        logical: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write fig4a.csv, fig4b.csv and fig5.csv.
    Figures {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = FULL_PRECISION, value_parser = parse_digits)]
        digits: usize,
    },
    /// Upper bound on the message length of one session.
    Maxlen {
        #[command(flatten)]
        source: ConfigArgs,
    },
    /// Validate a config file and print it back in normalized form.
    Config {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        preset: Preset,
    },
    /// Probability Π_M that an attack survives M control modes.
    #[command(allow_negative_numbers = true)]
    Survival {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        sigma2: f64,
        #[command(flatten)]
        source: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; absent keys come from the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    preset: Preset,
}

impl ConfigArgs {
    fn load(&self) -> Result<Resolved, CliError> {
        let file = match &self.config {
            Some(path) => RunConfigFile::load(path)?,
            None => RunConfigFile::default(),
        };
        file.resolve(self.preset)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Significant digits of every float in the CSV.
    #[arg(long, default_value_t = FULL_PRECISION, value_parser = parse_digits)]
    digits: usize,
}

impl OutputArgs {
    fn write(&self, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
        match &self.out {
            Some(path) => write_file(path, body),
            None => write_stdout(body),
        }
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_stdout(body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io("<stdout>", e))
}

fn println_value(line: String) -> Result<(), CliError> {
    write_stdout(|w| writeln!(w, "{line}"))
}

fn parse_digits(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d) if (1..=FULL_PRECISION).contains(&d) => Ok(d),
        _ => Err(format!("expected an integer between 1 and {FULL_PRECISION}")),
    }
}

/// `x` with `sig` significant digits, positional for moderate magnitudes.
fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (sig as i32 - 1 - exp).max(0) as usize, x)
    } else {
        format!("{:.*e}", sig - 1, x)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Epsilon { omega, delta } => {
            let eps = intrinsic_error(omega, Variance::new(delta)?)?;
            println_value(fmt_sig(eps, 6))
        }
        Command::Pn {
            n,
            p,
            sweep,
            step,
            target,
            output,
        } => {
            let code = RepCode::new(n)?;
            if sweep {
                if !(step > 0.0 && step <= 1.0) {
                    return Err(CliError::Usage(format!("step must lie in (0, 1], got {step}")));
                }
                let count = (1.0 / step).round() as u64;
                let rows = (0..=count)
                    .map(|k| {
                        let p = (k as f64 * step).min(1.0);
                        Ok((n, p, uncorrectable_prob(code, p)?))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                output.write(|w| write_pn_csv(w, &rows, output.digits))
            } else if let Some(t) = target {
                println_value(fmt_sig(critical_point(code, t)?, 6))
            } else if let Some(p) = p {
                println_value(fmt_sig(uncorrectable_prob(code, p)?, 6))
            } else {
                Err(CliError::Usage("pn needs one of --p, --sweep or --target".into()))
            }
        }
        Command::Curve {
            source,
            sigma2,
            cutoff,
            points,
            output,
        } => {
            let resolved = source.load()?;
            let sigma2 = if sigma2.is_empty() {
                FIGURE_SIGMA2.to_vec()
            } else {
                sigma2
            };
            if points < 2 {
                return Err(CliError::Usage("a curve needs at least 2 points".into()));
            }
            let curves = security_curves(&resolved.protocol, &sigma2, points)?;
            let best = best_attack(&resolved.protocol, cutoff, &default_sigma2_grid())?;
            output.write(|w| write_curve_csv(w, &curves, output.digits))?;
            let summary = format!(
                "best sigma2={}, I_at_cutoff={}",
                fmt_sig(best.sigma2, 6),
                fmt_sig(best.stolen_bits, 6)
            );
            if output.out.is_some() {
                println_value(summary)
            } else {
                eprintln!("{summary}");
                Ok(())
            }
        }
        Command::Simulate {
            config,
            preset,
            out,
            sessions,
            transcript,
            seed,
        } => {
            let file = RunConfigFile::load(&config)?;
            let resolved = file.resolve(preset)?;
            let seed = effective_seed(seed, resolved.seed)?;
            simulate(&resolved, seed, sessions, &out, transcript.as_deref())
        }
        Command::Ber {
            source,
            sigma2,
            trials,
            seed,
            logical,
            output,
        } => {
            let resolved = source.load()?;
            let seed = effective_seed(seed, resolved.seed)?;
            let sigma2 = if !sigma2.is_empty() {
                sigma2
            } else if source.config.is_some() {
                resolved.sigma2.clone()
            } else {
                vec![0.0, 0.05, 0.1, 0.3, 1.0]
            };
            let bits = trials.unwrap_or(resolved.trials);
            let pairs = bits.div_ceil(2);
            let mut rows = Vec::with_capacity(sigma2.len());
            for (j, &s) in sigma2.iter().enumerate() {
                let attack = channel_for(s)?;
                let mut estimate = harness::estimate_ber_range(
                    &resolved.protocol,
                    attack.as_ref(),
                    0..pairs.max(harness::MIN_TRIALS),
                    seed,
                    j as u64,
                )?;
                if logical {
                    estimate.bob = estimate.bob_logical;
                    estimate.eve = estimate.eve_logical;
                }
                rows.push(BerRow {
                    channel: attack.label(),
                    sigma2: s,
                    estimate,
                });
            }
            output.write(|w| write_ber_csv(w, &rows, output.digits))
        }
        Command::Figures { out_dir, digits } => {
            for path in reproduce_figures(&out_dir, digits)? {
                println_value(path.display().to_string())?;
            }
            Ok(())
        }
        Command::Maxlen { source } => {
            let cfg = source.load()?.protocol;
            println_value(format!(
                "max_bits={}, max_systems={}",
                fmt_sig(max_qdc_length(&cfg), 6),
                fmt_sig(max_qdc_systems(&cfg), 6)
            ))
        }
        Command::Config { config, preset } => {
            let file = RunConfigFile::load(&config)?;
            file.resolve(preset)?;
            write_stdout(|w| w.write_all(file.to_toml().as_bytes()))
        }
        Command::Survival { m, sigma2, source } => {
            let cfg = source.load()?.protocol;
            println_value(fmt_sig(survival_prob(m, sigma2, cfg.significance)?, 6))
        }
    }
}

/// Control-mode counts at which the simulate command estimates survival.
const SURVIVAL_MODES: [u64; 3] = [1, 10, 100];
/// Session streams sit above the plan's grid points.
const SESSION_POINT_BASE: u64 = 1 << 20;

#[derive(Serialize)]
struct SimulationReport<'a> {
    seed: u64,
    config: &'a Resolved,
    message_bits: u64,
    sessions_per_point: u64,
    points: Vec<PointResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transcript: Option<String>,
}

#[derive(Serialize)]
struct PointResult {
    #[serde(flatten)]
    report: PointReport,
    sessions: SessionSummary,
}

#[derive(Serialize)]
struct SessionSummary {
    count: u64,
    aborted: bool,
    aborted_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    median_abort_run: Option<u64>,
    runs_executed: u64,
    message_bits_delivered: u64,
    bob_logical_errors: u64,
    efficiency: f64,
    results: Vec<SessionLine>,
}

#[derive(Serialize)]
struct SessionLine {
    aborted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    abort_run_index: Option<u64>,
    runs_executed: u64,
    control_modes: u64,
    message_bits_sent: u64,
    bob_logical_errors: u64,
    eve_logical_errors: u64,
    final_statistic: f64,
}

fn summarize(results: &[SessionResult]) -> SessionSummary {
    let mut aborts: Vec<u64> = results.iter().filter_map(|r| r.abort_run_index).collect();
    aborts.sort_unstable();
    let runs: u64 = results.iter().map(|r| r.runs_executed).sum();
    let delivered: u64 = results.iter().map(|r| r.message_bits_sent).sum();
    SessionSummary {
        count: results.len() as u64,
        aborted: !aborts.is_empty(),
        aborted_count: aborts.len() as u64,
        median_abort_run: aborts.get(aborts.len() / 2).copied(),
        runs_executed: runs,
        message_bits_delivered: delivered,
        bob_logical_errors: results.iter().map(SessionResult::bob_logical_errors).sum(),
        efficiency: if runs == 0 { 0.0 } else { delivered as f64 / runs as f64 },
        results: results
            .iter()
            .map(|r| SessionLine {
                aborted: r.aborted,
                abort_run_index: r.abort_run_index,
                runs_executed: r.runs_executed,
                control_modes: r.control_modes,
                message_bits_sent: r.message_bits_sent,
                bob_logical_errors: r.bob_logical_errors(),
                eve_logical_errors: r.eve_logical_errors(),
                final_statistic: r.final_statistic,
            })
            .collect(),
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    sigma2: f64,
    session: u64,
    #[serde(flatten)]
    entry: &'a cvqdc_core::protocol::TranscriptEntry,
}

fn simulate(
    resolved: &Resolved,
    seed: u64,
    sessions: u64,
    out: &Path,
    transcript: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: ProtocolConfig = resolved.protocol;
    let message_bits = resolved.trials.next_multiple_of(2);
    let plan = ExperimentPlan {
        configs: vec![cfg],
        sigma2: resolved.sigma2.clone(),
        trials: message_bits / 2,
        master_seed: seed,
        outputs: vec![Output::Ber, Output::Survival, Output::Curves],
        survival_modes: SURVIVAL_MODES.to_vec(),
        cutoff: 0.01,
    };
    let reports = run_plan(&plan)?;
    let mut points = Vec::with_capacity(reports.len());
    for (j, report) in reports.into_iter().enumerate() {
        let attack = channel_for(report.sigma2)?;
        let results = run_sessions_at(
            &cfg,
            attack.as_ref(),
            sessions,
            message_bits as usize,
            seed,
            SESSION_POINT_BASE + j as u64,
        )?;
        points.push(PointResult {
            report,
            sessions: summarize(&results),
        });
    }

    if let Some(path) = transcript {
        write_file(path, |w| {
            for (j, &s) in resolved.sigma2.iter().enumerate() {
                if sessions == 0 {
                    break;
                }
                let attack = channel_for(s).map_err(io::Error::other)?;
                let mut failed = None;
                trace_session(
                    &cfg,
                    attack.as_ref(),
                    message_bits as usize,
                    seed,
                    SESSION_POINT_BASE + j as u64,
                    0,
                    |entry| {
                        if failed.is_none() {
                            let line = TranscriptLine {
                                sigma2: s,
                                session: 0,
                                entry: &entry,
                            };
                            if let Err(e) = serde_json::to_writer(&mut *w, &line)
                                .map_err(io::Error::from)
                                .and_then(|_| writeln!(w))
                            {
                                failed = Some(e);
                            }
                        }
                    },
                )
                .map_err(io::Error::other)?;
                if let Some(e) = failed {
                    return Err(e);
                }
            }
            Ok(())
        })?;
    }

    let report = SimulationReport {
        seed,
        config: resolved,
        message_bits,
        sessions_per_point: sessions,
        points,
        transcript: transcript.map(|p| p.display().to_string()),
    };
    write_file(out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.010170197, 6), "0.0101702");
        assert_eq!(fmt_sig(0.5, 6), "0.500000");
        assert_eq!(fmt_sig(80.851179, 6), "80.8512");
        assert_eq!(fmt_sig(115942.03, 6), "115942");
        assert_eq!(fmt_sig(1.2345678e-20, 6), "1.23457e-20");
        assert_eq!(fmt_sig(0.0, 6), "0");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
