use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use bondwire_core::config::RunConfig;
use bondwire_core::coupling::{fixed_point, require_converged};
use bondwire_core::data_io::{capacity_curve, histogram_filter, load_events};
use bondwire_core::model::{Drive, ModelConfig, WireInitial};
use bondwire_core::optimizer::{
    optimize, CoupledModel, ErrorTable, FusingDataset, HessianMode, ParameterVector, VariationTable, WireId,
};
use bondwire_core::verify::{verify_compound, verify_wire, Check};
use bondwire_core::wire::WireSolution;
use bondwire_core::Error;

#[derive(Parser)]
#[command(name = "bondwire", version, about = "Electro-thermal bondwire simulation and model fitting")]
struct Cli {
    /// Omit the timestamp so repeated runs produce identical files.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Start the wire at ambient instead of the linear chip-to-lead profile.
    #[arg(long, global = true)]
    ambient_start: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wire temperature for one current pulse.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// A
        #[arg(long)]
        current: f64,
        /// s
        #[arg(long)]
        duration: f64,
        /// Single point `y,t` (m, s), reported as JSON.
        #[arg(long, value_parser = parse_probe, conflicts_with = "grid")]
        probe: Option<(f64, f64)>,
        /// Full space-time grid as CSV instead of the final profile.
        #[arg(long)]
        grid: bool,
    },
    /// Midpoint temperature against current after a fixed hold time.
    Capacity {
        #[arg(long)]
        config: PathBuf,
        /// Hold time, s.
        #[arg(long)]
        hold: f64,
        #[arg(long)]
        imin: f64,
        #[arg(long)]
        imax: f64,
        /// Number of grid points.
        #[arg(long)]
        steps: usize,
    },
    /// Effective-constant fixed point for one pulse.
    Couple {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        current: f64,
        #[arg(long)]
        duration: f64,
        /// Write the iteration trace as CSV (defaults to `<out>.trace.csv`
        /// when `--out` is given).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fit the wire parameters to fusing events.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Histogram bins over the current (Freedman-Diaconis when omitted).
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, value_enum)]
        hessian: Option<HessianArg>,
        #[arg(long)]
        svd_threshold: Option<f64>,
        /// Only use rows with this wire id.
        #[arg(long)]
        wire_id: Option<String>,
        /// Only use rows at this package position.
        #[arg(long)]
        position: Option<u32>,
    },
    /// Compare the series solutions with the finite-difference oracles.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 3.7)]
        current: f64,
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianArg {
    Gn,
    Full,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Suite {
    Wire,
    Compound,
    All,
}

fn parse_probe(s: &str) -> Result<(f64, f64), String> {
    let (y, t) = s.split_once(',').ok_or("expected `y,t`")?;
    let y = y.trim().parse().map_err(|_| format!("bad y `{y}`"))?;
    let t = t.trim().parse().map_err(|_| format!("bad t `{t}`"))?;
    Ok((y, t))
}

/// Failure with its exit status.
enum Failure {
    Model(Error),
    Breach(String),
    Unconverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Model(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged { .. }
        | Error::ConvergenceFailure { .. }
        | Error::NewtonDivergence { .. }
        | Error::NoRoot { .. }
        | Error::SolverFailure(_)
        | Error::DegenerateHessian
        | Error::SingularReducedSystem
        | Error::OutOfRange(_)
        | Error::NonPhysicalResult(_) => 3,
        _ => 2,
    }
}

struct Output {
    timestamp: Option<String>,
    path: Option<PathBuf>,
    ambient_start: bool,
}

impl Output {
    fn emit(&self, body: &str) -> std::io::Result<()> {
        match &self.path {
            Some(p) => std::fs::write(p, body),
            None => std::io::stdout().write_all(body.as_bytes()),
        }
    }

    fn csv_header(&self) -> String {
        match &self.timestamp {
            Some(ts) => format!("# bondwire {} {ts}\n", env!("CARGO_PKG_VERSION")),
            None => String::new(),
        }
    }

    fn json(&self, mut v: Value) -> std::io::Result<()> {
        if let (Some(ts), Some(obj)) = (&self.timestamp, v.as_object_mut()) {
            obj.insert("generated".into(), json!(ts));
        }
        let mut s = serde_json::to_string_pretty(&v).map_err(std::io::Error::other)?;
        s.push('\n');
        self.emit(&s)
    }
}

fn load(out: &Output, path: &PathBuf) -> Result<(RunConfig, ModelConfig), Failure> {
    let run = RunConfig::load(path)?;
    let mut model = run.model()?;
    if out.ambient_start {
        model.wire_initial = WireInitial::Ambient;
    }
    Ok((run, model))
}

fn simulate(
    out: &Output,
    config: &PathBuf,
    current: f64,
    duration: f64,
    probe: Option<(f64, f64)>,
    grid: bool,
) -> Result<(), Failure> {
    let (run, model) = load(out, config)?;
    let drive = Drive::new(current, duration)?;
    let coupled = require_converged(fixed_point(&model, &drive, &run.coupling_options()?)?)?;
    let sol = WireSolution::new(&model, &drive, &coupled.state)?;
    let length = model.wire.length;
    if let Some((y, t)) = probe {
        if !(0.0..=length).contains(&y) || !(0.0..=duration).contains(&t) {
            return Err(Error::InvalidParameter {
                name: "probe",
                reason: format!("({y}, {t}) outside [0, {length}] x [0, {duration}]"),
            }
            .into());
        }
        return Ok(out.json(json!({
            "y_m": y,
            "t_s": t,
            "temperature_K": sol.temperature(y, t)?,
            "t_we_K": coupled.state.t_we,
            "chi_w_K3": coupled.state.chi_w,
        }))?);
    }
    let mut body = out.csv_header();
    let ny = 101;
    if grid {
        body.push_str("t_s,y_m,T_K\n");
        for n in 0..=50 {
            let t = duration * n as f64 / 50.0;
            for k in 0..ny {
                let y = length * k as f64 / (ny - 1) as f64;
                body.push_str(&format!("{t:e},{y:e},{:.6}\n", sol.temperature(y, t)?));
            }
        }
    } else {
        body.push_str("y_m,T_K\n");
        for k in 0..ny {
            let y = length * k as f64 / (ny - 1) as f64;
            body.push_str(&format!("{y:e},{:.6}\n", sol.temperature(y, duration)?));
        }
    }
    Ok(out.emit(&body)?)
}

fn capacity(out: &Output, config: &PathBuf, hold: f64, imin: f64, imax: f64, steps: usize) -> Result<(), Failure> {
    let (run, model) = load(out, config)?;
    if steps < 2 || !(imin >= 0.0 && imax > imin) {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "need steps >= 2 and 0 <= imin < imax".into(),
        }
        .into());
    }
    let grid: Vec<f64> = (0..steps).map(|k| imin + (imax - imin) * k as f64 / (steps - 1) as f64).collect();
    let curve = capacity_curve(&model, &run.coupling_options()?, run.melting_temperature()?, hold, &grid)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    let mut body = out.csv_header();
    body.push_str(&String::from_utf8_lossy(&buf));
    match curve.crossing {
        Some(i) => body.push_str(&format!("# melting_crossing_A,{i:.6}\n")),
        None => body.push_str("# melting_crossing_A,none\n"),
    }
    Ok(out.emit(&body)?)
}

fn couple(out: &Output, config: &PathBuf, current: f64, duration: f64, trace: Option<PathBuf>) -> Result<(), Failure> {
    let (run, model) = load(out, config)?;
    let drive = Drive::new(current, duration)?;
    let r = fixed_point(&model, &drive, &run.coupling_options()?)?;
    let trace = trace.or_else(|| out.path.as_ref().map(|p| p.with_extension("trace.csv")));
    if let Some(p) = trace {
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf)?;
        let mut body = out.csv_header();
        body.push_str(&String::from_utf8_lossy(&buf));
        std::fs::write(p, body)?;
    }
    out.json(json!({ "current_A": current, "duration_s": duration, "result": r }))?;
    if r.converged {
        Ok(())
    } else {
        Err(Failure::Unconverged(format!(
            "fixed point not converged after {} iterations",
            r.iterations
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn fit(
    out: &Output,
    config: &PathBuf,
    events: &PathBuf,
    bins: Option<usize>,
    hessian: Option<HessianArg>,
    svd_threshold: Option<f64>,
    wire_id: Option<String>,
    position: Option<u32>,
) -> Result<(), Failure> {
    let (run, model) = load(out, config)?;
    let file = load_events(events)?;
    let rows = file.select(wire_id.as_deref(), position);
    let material = run.wire.material;
    let skipped = rows.iter().filter(|e| e.material != material).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} events for other materials");
    }
    let raw: Vec<_> = rows
        .iter()
        .filter(|e| e.material == material)
        .map(|e| bondwire_core::optimizer::FusingEvent {
            current: e.current,
            duration: e.duration,
        })
        .collect();
    if raw.is_empty() {
        return Err(Error::InvalidParameter {
            name: "events",
            reason: format!("no {} events selected", material.name()),
        }
        .into());
    }
    let filtered = histogram_filter(&raw, bins)?;
    let wire = WireId {
        material,
        diameter: model.wire.diameter,
        position,
    };
    let mut data = FusingDataset::new(wire.clone(), filtered.events.clone())?;
    data.fusing_temperature = run.melting_temperature()?;

    let mut opts = run.optimize_options()?;
    if let Some(h) = hessian {
        opts.hessian = match h {
            HessianArg::Gn => HessianMode::GaussNewton,
            HessianArg::Full => HessianMode::Full,
        };
    }
    if let Some(t) = svd_threshold {
        if !(0.0..1.0).contains(&t) {
            return Err(Error::InvalidParameter {
                name: "svd_threshold",
                reason: "must lie in [0, 1)".into(),
            }
            .into());
        }
        opts.threshold = t;
    }
    let fm = if run.optimizer.reduced_model {
        let mut m = CoupledModel::reduced(model.clone());
        m.coupling.interface_offset = run.coupling.interface_offset;
        m
    } else {
        CoupledModel::new(model.clone(), run.coupling_options()?)
    };
    let p0 = ParameterVector::from_config(&model);
    let outcome = optimize(&p0, &data, &fm, &opts)?;
    let report = &outcome.report;
    let table3 = VariationTable::new(&[(wire.kind(), outcome.params.clone())])?;
    let table4 = ErrorTable::new(&[(wire.kind(), report.error_before, report.error_after)]);
    out.json(json!({
        "events_file": events.display().to_string(),
        "raw_events": raw.len(),
        "filter": filtered,
        "report": report,
        "variation_table": table3,
        "variation_table_text": table3.render(),
        "error_table_text": table4.render(),
    }))?;
    if report.converged {
        Ok(())
    } else {
        Err(Failure::Unconverged(report.stop_reason.clone()))
    }
}

fn verify(out: &Output, config: &PathBuf, suite: Suite, current: f64, duration: f64) -> Result<(), Failure> {
    let (run, model) = load(out, config)?;
    let mut checks: Vec<Check> = Vec::new();
    let mut report = serde_json::Map::new();
    if suite != Suite::Compound {
        let drive = Drive::new(current, duration)?;
        let w = verify_wire(&model, &drive, &run.coupling_options()?)?;
        report.insert("coupling_state".into(), json!(w.state));
        checks.extend(w.checks);
    }
    if suite != Suite::Wire {
        checks.extend(verify_compound(&model)?);
    }
    for c in &checks {
        log::info!("{}: {:.3e} (tol {:.1e}) {}", c.name, c.value, c.tolerance, if c.passed { "pass" } else { "FAIL" });
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    report.insert("passed".into(), json!(failed.is_empty()));
    report.insert("checks".into(), json!(checks));
    out.json(Value::Object(report))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Breach(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    let out = Output {
        timestamp: (!cli.no_timestamp).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        path: cli.out.clone(),
        ambient_start: cli.ambient_start,
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            current,
            duration,
            probe,
            grid,
        } => simulate(&out, &config, current, duration, probe, grid),
        Command::Capacity {
            config,
            hold,
            imin,
            imax,
            steps,
        } => capacity(&out, &config, hold, imin, imax, steps),
        Command::Couple {
            config,
            current,
            duration,
            trace,
        } => couple(&out, &config, current, duration, trace),
        Command::Optimize {
            config,
            events,
            bins,
            hessian,
            svd_threshold,
            wire_id,
            position,
        } => fit(&out, &config, &events, bins, hessian, svd_threshold, wire_id, position),
        Command::Verify {
            config,
            suite,
            current,
            duration,
        } => verify(&out, &config, suite, current, duration),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Unconverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Breach(names)) => {
            eprintln!("tolerance breach: {names}");
            ExitCode::from(4)
        }
    }
}
