use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use circsim_core::io::csv::metrics_csv_bytes;
use circsim_core::io::touchstone::read_touchstone;
use circsim_core::io::{read_netlist, read_sidebands_csv, write_metrics_csv, write_sidebands_csv, write_touchstone, Netlist};
use circsim_core::network::{embed_matching_sweep, input_impedance};
use circsim_core::transient::{compare_oracle, OracleSettings, TransientOptions};
use circsim_core::{
    l_match, metrics, optimize_match, sweep, CirculatorMetrics, Error, LptvSolver, MatchObjective, ModShape, PortRoles,
    SweepResult, VERSION,
};

/// Harmonic S-parameter simulator for modulated resonator circulators.
#[derive(Parser)]
#[command(name = "circsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep a netlist and write Touchstone, sideband CSV and metrics files.
    Sim {
        netlist: PathBuf,
        /// Hold the varactors at their bias point.
        #[arg(long)]
        no_modulation: bool,
        /// Output path prefix (defaults to the netlist path without extension).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave the generation time out of file headers.
        #[arg(long)]
        no_timestamp: bool,
        /// Isolation level for the bandwidth column, dB.
        #[arg(long, default_value_t = 40.0)]
        level: f64,
    },
    /// Design an L-section matching network at one frequency.
    Match {
        netlist: PathBuf,
        /// Design frequency, Hz.
        #[arg(long)]
        freq: f64,
        /// Refine the closed-form design by direct search on the modulated device.
        #[arg(long)]
        optimize: bool,
        #[arg(long, value_enum, default_value_t = Objective::Isolation)]
        objective: Objective,
    },
    /// Cross-check the harmonic solver against time-domain simulation.
    Validate {
        netlist: PathBuf,
        /// Comma-separated frequencies, Hz, each commensurate with the modulation frequency.
        #[arg(long, value_delimiter = ',')]
        freqs: Vec<f64>,
        /// Harmonic order of the conversion-matrix solve.
        #[arg(long, default_value_t = 64)]
        harmonics: usize,
        /// Transient steps per carrier cycle.
        #[arg(long, default_value_t = 256)]
        steps: usize,
        /// Magnitude threshold, dB.
        #[arg(long, default_value_t = 0.1)]
        max_db: f64,
        /// Phase threshold, degrees.
        #[arg(long, default_value_t = 1.0)]
        max_phase: f64,
        /// Sidebands compared, |k| <= this.
        #[arg(long, default_value_t = 1)]
        sidebands: usize,
    },
    /// Circulator metrics from a sideband CSV or Touchstone file.
    Metrics {
        file: PathBuf,
        /// Isolation level for the bandwidth, dB.
        #[arg(long, default_value_t = 40.0)]
        level: f64,
        #[arg(long, default_value_t = 1)]
        drive: usize,
        #[arg(long, default_value_t = 2)]
        through: usize,
        #[arg(long, default_value_t = 3)]
        isolated: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Isolation,
    ReturnLoss,
}

enum Failure {
    Core(Error),
    Mismatch(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Circuit(_) | Error::Parse(_) | Error::Io { .. } | Error::Contract(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Sim { netlist, no_modulation, out, no_timestamp, level } => {
            sim(&netlist, no_modulation, out, no_timestamp, level)
        }
        Command::Match { netlist, freq, optimize, objective } => match_cmd(&netlist, freq, optimize, objective),
        Command::Validate { netlist, freqs, harmonics, steps, max_db, max_phase, sidebands } => {
            let settings = OracleSettings {
                max_db,
                max_phase_deg: max_phase,
                compare_sidebands: sidebands,
                transient: TransientOptions { steps_per_cycle: steps, sidebands, ..TransientOptions::default() },
                ..OracleSettings::default()
            };
            validate(&netlist, freqs, harmonics, &settings)
        }
        Command::Metrics { file, level, drive, through, isolated } => {
            metrics_cmd(&file, level, PortRoles { drive, through, isolated })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Mismatch(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn load(path: &Path) -> Result<Netlist, Error> {
    let n = read_netlist(path)?;
    for line in n.provenance() {
        eprintln!("default: {line}");
    }
    for note in &n.notes {
        eprintln!("note: {note}");
    }
    Ok(n)
}

fn header(n: &Netlist, modulation: bool, matching: Option<String>, timestamp: bool) -> Vec<String> {
    let d = &n.branch.drive;
    let mut h = vec![format!("circsim {VERSION}"), format!("harmonics_k = {}", n.sweep.harmonics)];
    if modulation && d.shape != ModShape::Off {
        h.push(format!(
            "modulation: {} {} Hz, {} Vpp, dc {} V, duty {}, rise {}, phases {} {} {} deg",
            d.shape, d.freq, d.amplitude_pp, d.dc_bias, d.duty, d.rise_fraction, n.phases[0], n.phases[1], n.phases[2]
        ));
    } else {
        h.push("modulation: off".into());
    }
    if let Some(m) = matching {
        h.push(m);
    }
    if timestamp {
        h.push(format!("generated {}", chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    }
    h
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_metrics(label: &str, m: &CirculatorMetrics) {
    let bw = m.bandwidth_hz.map_or("n/a".to_string(), |b| format!("{:.4} MHz", b / 1e6));
    println!(
        "{label}: notch {:.4} MHz, isolation {:.2} dB, IL {:.2} dB, RL {:.2} dB, bw@{} dB {bw}, intermod {:.2}%",
        m.f_notch_hz / 1e6,
        m.isolation_db,
        m.insertion_loss_db,
        m.return_loss_db,
        m.level_db,
        100.0 * m.intermod_fraction
    );
}

fn write_set(prefix: &Path, s: &SweepResult, comments: &[String], level: f64, label: &str) -> Result<(), Error> {
    let ports = s.ports();
    write_touchstone(s, &with_suffix(prefix, &format!(".s{ports}p")), comments)?;
    write_sidebands_csv(s, &with_suffix(prefix, ".csv"))?;
    if ports >= 3 {
        let m = metrics(s, PortRoles::default(), level)?;
        write_metrics_csv(&m, &with_suffix(prefix, "_metrics.csv"))?;
        print_metrics(label, &m);
    }
    Ok(())
}

fn sim(path: &Path, no_modulation: bool, out: Option<PathBuf>, no_timestamp: bool, level: f64) -> Result<(), Failure> {
    let n = load(path)?;
    let circuit = if no_modulation { n.circuit_without_modulation()? } else { n.circuit.clone() };
    let modulated = !no_modulation && n.modulation_active();
    let order = if modulated { n.sweep.harmonics } else { 0 };
    let s = sweep(&circuit, n.sweep.f_start, n.sweep.f_stop, n.sweep.points, n.omega_m(), order)?;
    let prefix = out.unwrap_or_else(|| path.with_extension(""));
    write_set(&prefix, &s, &header(&n, modulated, None, !no_timestamp), level, "device")?;
    if let Some(m) = n.matching {
        let matched = embed_matching_sweep(&s, &vec![m; s.ports()])?;
        let note = format!("matching: l_series {} H, c_shunt {} F", m.l_series, m.c_shunt);
        write_set(
            &with_suffix(&prefix, "_matched"),
            &matched,
            &header(&n, modulated, Some(note), !no_timestamp),
            level,
            "matched",
        )?;
    }
    Ok(())
}

fn match_cmd(path: &Path, freq: f64, optimize: bool, objective: Objective) -> Result<(), Failure> {
    let n = load(path)?;
    let solver = LptvSolver::new(&n.circuit, n.omega_m(), n.sweep.harmonics)?;
    let device = solver.solve(2.0 * PI * freq)?;
    let z = input_impedance(&device, 1);
    println!("input impedance at {:.6} MHz: {:.4} {:+.4}j ohm", freq / 1e6, z.re, z.im);
    let closed = l_match(z, freq, device.z0[0]);
    match &closed {
        Ok(m) => println!("l-section: l_series_h = {:e}, c_shunt_f = {:e}", m.l_series, m.c_shunt),
        Err(e) => println!("l-section: {e}"),
    }
    if !optimize {
        return closed.map(|_| ()).map_err(Failure::from);
    }
    let objective = match objective {
        Objective::Isolation => MatchObjective::MaxIsolation,
        Objective::ReturnLoss => MatchObjective::MinReturnLoss,
    };
    let o = optimize_match(&solver, freq, objective, PortRoles::default())?;
    if o.fallback_start {
        println!("search started from the identity network");
    }
    println!(
        "optimized: l_series_h = {:e}, c_shunt_f = {:e}, objective {:.2} dB (start {:.2} dB)",
        o.network.l_series, o.network.c_shunt, o.objective_db, o.start_db
    );
    Ok(())
}

fn default_freqs(n: &Netlist) -> Vec<f64> {
    let fm = n.branch.drive.freq;
    let span = n.sweep.f_stop - n.sweep.f_start;
    let mut out: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|x| ((n.sweep.f_start + x * span) / fm).round() * fm).collect();
    out.dedup();
    out
}

fn validate(path: &Path, freqs: Vec<f64>, harmonics: usize, settings: &OracleSettings) -> Result<(), Failure> {
    let n = load(path)?;
    let freqs = if freqs.is_empty() { default_freqs(&n) } else { freqs };
    let report = compare_oracle(&n.circuit, &freqs, n.omega_m(), harmonics, settings)?;
    println!("f_hz,i,j,k,harmonic_db,transient_db,db_delta,phase_delta_deg,status");
    for e in &report.entries {
        let status = if !e.judged { "floor" } else if e.pass { "ok" } else { "FAIL" };
        println!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.3},{status}",
            e.f_hz,
            e.i,
            e.j,
            e.k,
            20.0 * e.harmonic.norm().log10(),
            20.0 * e.transient.norm().log10(),
            e.db_delta,
            e.phase_delta_deg
        );
    }
    for (f, why) in &report.failures {
        println!("{f},transient failed: {why}");
    }
    println!("max delta {:.4} dB, {:.3} deg", report.max_db_delta(), report.max_phase_delta());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Mismatch(format!("{} comparisons exceed the thresholds", report.exceedances())))
    }
}

fn metrics_cmd(path: &Path, level: f64, roles: PortRoles) -> Result<(), Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let s = if ext == "csv" { read_sidebands_csv(path, 0.0)? } else { read_touchstone(path)?.to_sweep() };
    let m = metrics(&s, roles, level)?;
    print!("{}", String::from_utf8_lossy(&metrics_csv_bytes(&m)));
    Ok(())
}
