//! `rftransfer`: run scenario files and regenerate their result bundles.
//!
//! Exit codes:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success (also an empty sweep)                       |
//! | 1    | unexpected internal error                           |
//! | 2    | bad command line                                    |
//! | 3    | scenario or parameter validation failed             |
//! | 4    | loop instability                                    |
//! | 5    | power budget failure (SBS ceiling or detector margin) |
//! | 6    | output directory not empty and `--force` not given  |
//! | 7    | file I/O error                                      |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use rftransfer_core::laser_spectrum::{detected_rf, sideband_amplitudes};
use rftransfer_core::link_topology::{power_budget, scaling_forecast, total_differential_delay, ForecastReference};
use rftransfer_core::scenario::{
    analyze, fiber_to_detection_ratio, read_samples, run_scenario, write_allan, write_bundle, write_psd, Scenario,
};
use rftransfer_core::Error;

const EXIT_INTERNAL: u8 = 1;
const EXIT_VALIDATION: u8 = 3;
const EXIT_INSTABILITY: u8 = 4;
const EXIT_BUDGET: u8 = 5;
const EXIT_EXISTS: u8 = 6;
const EXIT_IO: u8 = 7;

const DEFAULT_EXTRA_TAUS: [f64; 5] = [10.0, 100.0, 1000.0, 10000.0, 86400.0];
const DEFAULT_PSD_SEGMENT: usize = 16384;

#[derive(Parser)]
#[command(name = "rftransfer", version, about = "Round-trip compensated RF transfer over fibre: simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<scenario name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write samples.csv, allan.csv, psd.csv, budget.txt, meta.txt.
    Run(Common),
    /// Run the scenario once per value of a numeric key, concurrently.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key to vary, as section.key (e.g. modulation.forward_rf_hz).
        #[arg(long)]
        param: String,
        /// Comma-separated values; an empty list does nothing.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Recompute allan.csv and psd.csv from an existing samples.csv.
    Analyze {
        /// samples.csv written by `run`.
        #[arg(long)]
        samples: PathBuf,
        /// Output directory (default: next to the samples).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Power budget only.
    Budget {
        #[command(flatten)]
        common: Common,
        /// Also print the scaling forecast for a link of this length.
        #[arg(long)]
        forecast_km: Option<f64>,
    },
    /// Sideband amplitude tables and the detected RF for the scenario lasers.
    Spectrum(Common),
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::LoopInstability { .. } => EXIT_INSTABILITY,
            Error::SbsCeiling { .. } | Error::BudgetFailure { .. } => EXIT_BUDGET,
            Error::Io(_) => EXIT_IO,
            Error::InvalidParameter { .. }
            | Error::Config { .. }
            | Error::GridMismatch
            | Error::UnitMismatch { .. } => EXIT_VALIDATION,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_IO, message: e.to_string() }
    }
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Sweep { common, param, values, jobs } => cmd_sweep(&common, &param, &values, jobs),
        Command::Analyze { samples, out, force } => cmd_analyze(&samples, out.as_deref(), force),
        Command::Budget { common, forecast_km } => cmd_budget(&common, forecast_km),
        Command::Spectrum(c) => cmd_spectrum(&c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rftransfer: {}", f.message);
            ExitCode::from(if f.code == 0 { EXIT_INTERNAL } else { f.code })
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let s = Scenario::from_file(&common.scenario).map_err(|e| match e {
        Error::Io(io) => fail(EXIT_IO, format!("{}: {io}", common.scenario.display())),
        other => Failure::from(other),
    })?;
    Ok(match common.seed {
        Some(seed) => s.with_seed(seed)?,
        None => s,
    })
}

fn out_dir(common: &Common, scenario: &Scenario) -> PathBuf {
    common.out.clone().unwrap_or_else(|| Path::new("runs").join(&scenario.name))
}

/// Refuses a non-empty directory unless forced.
fn claim(dir: &Path, force: bool) -> Outcome {
    if !force && dir.is_dir() && fs::read_dir(dir)?.next().is_some() {
        return Err(fail(EXIT_EXISTS, format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    Ok(())
}

fn cmd_run(common: &Common) -> Outcome {
    let scenario = load(common)?;
    let dir = out_dir(common, &scenario);
    claim(&dir, common.force)?;
    let out = run_scenario(&scenario)?;
    write_bundle(&out, &scenario, &dir)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |s| format!("{s:.3e}"));
    println!("{}: sigma_y(1 s) = {}, sigma_y(1 day) = {}", scenario.name, fmt(out.sigma_at(1.0)), fmt(out.sigma_at(86400.0)));
    if !out.result.compliant() {
        println!("warning: actuator saturation during the run (see meta.txt)");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

struct SweepRow {
    value: String,
    status: String,
    code: u8,
    sigma_1s: Option<f64>,
    sigma_1day: Option<f64>,
    ratio: Option<f64>,
    compliant: Option<bool>,
    hash: String,
}

fn sweep_item(base: &Scenario, param: &str, value: &str, dir: &Path) -> SweepRow {
    let mut row = SweepRow {
        value: value.to_string(),
        status: "ok".into(),
        code: 0,
        sigma_1s: None,
        sigma_1day: None,
        ratio: None,
        compliant: None,
        hash: String::new(),
    };
    let result = base.with_override(param, value).map_err(Failure::from).and_then(|s| {
        row.hash = s.config_hash();
        let out = run_scenario(&s)?;
        write_bundle(&out, &s, dir)?;
        Ok((out, s))
    });
    match result {
        Ok((out, s)) => {
            row.sigma_1s = out.sigma_at(1.0);
            row.sigma_1day = out.sigma_at(86400.0);
            row.ratio = Some(fiber_to_detection_ratio(&out, &s));
            row.compliant = Some(out.result.compliant());
        }
        Err(f) => {
            row.status = f.message.replace(',', ";");
            row.code = f.code;
        }
    }
    row
}

fn cmd_sweep(common: &Common, param: &str, values: &str, jobs: Option<usize>) -> Outcome {
    let base = load(common)?;
    if !base.raw().is_numeric(param) {
        return Err(fail(EXIT_VALIDATION, format!("`{param}` does not hold a single numeric value")));
    }
    let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        println!("empty value list: nothing to do");
        return Ok(());
    }
    if let Some(bad) = values.iter().find(|v| v.parse::<f64>().is_err()) {
        return Err(fail(EXIT_VALIDATION, format!("sweep value `{bad}` is not a number")));
    }
    let root = out_dir(common, &base);
    claim(&root, common.force)?;
    fs::create_dir_all(&root)?;

    let workers = jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, values.len());
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new((0..values.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(value) = values.get(i) else { break };
                let dir = root.join(format!("{param}={value}"));
                let row = sweep_item(&base, param, value, &dir);
                rows.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_inner().unwrap_or_else(|e| e.into_inner()).into_iter().flatten().collect();

    let mut summary = Vec::new();
    writeln!(summary, "{param},status,sigma_y_1s,sigma_y_1day,fiber_to_detection_ratio,compliant,config_hash")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for r in &rows {
        writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            r.value,
            r.status,
            opt(r.sigma_1s),
            opt(r.sigma_1day),
            opt(r.ratio),
            r.compliant.map_or(String::new(), |c| c.to_string()),
            r.hash
        )?;
    }
    fs::write(root.join("summary.csv"), summary)?;
    println!("wrote {} runs and {}", rows.len(), root.join("summary.csv").display());
    match rows.iter().find(|r| r.code != 0) {
        Some(r) => Err(fail(r.code, format!("sweep value {} failed: {}", r.value, r.status))),
        None => Ok(()),
    }
}

fn cmd_analyze(samples: &Path, out: Option<&Path>, force: bool) -> Outcome {
    let text = fs::read_to_string(samples).map_err(|e| fail(EXIT_IO, format!("{}: {e}", samples.display())))?;
    let series = read_samples(&text)?;
    let (hash, seed) = provenance(&text);
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| samples.parent().unwrap_or(Path::new(".")).to_path_buf());
    let targets = [dir.join("allan.csv"), dir.join("psd.csv")];
    if !force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(fail(EXIT_EXISTS, format!("{} exists; pass --force to overwrite", existing.display())));
        }
    }
    let (allan, psd) = analyze(&series, &DEFAULT_EXTRA_TAUS, DEFAULT_PSD_SEGMENT)?;
    fs::create_dir_all(&dir)?;
    let mut buf = Vec::new();
    write_allan(&allan, &hash, seed, &mut buf)?;
    fs::write(&targets[0], &buf)?;
    buf.clear();
    write_psd(&psd, &hash, seed, &mut buf)?;
    fs::write(&targets[1], &buf)?;
    if let Some(s) = allan.at(1.0) {
        println!("sigma_y(1 s) = {s:.3e}");
    }
    println!("wrote {} and {}", targets[0].display(), targets[1].display());
    Ok(())
}

/// `config_hash` and `seed` from the provenance comment, if present.
fn provenance(samples: &str) -> (String, u64) {
    let header = samples.lines().next().unwrap_or("");
    let field = |name: &str| {
        header.split_whitespace().find_map(|t| t.strip_prefix(name).map(str::to_string))
    };
    let hash = field("config_hash=").unwrap_or_else(|| "unknown".into());
    let seed = field("seed=").and_then(|s| s.parse().ok()).unwrap_or(0);
    (hash, seed)
}

fn cmd_budget(common: &Common, forecast_km: Option<f64>) -> Outcome {
    let scenario = load(common)?;
    let report = power_budget(&scenario.topology)?;
    let mut text = Vec::new();
    report.write_text(&mut text)?;
    if let Some(length) = forecast_km {
        let section = scenario.topology.sections[0];
        scaling_forecast(length, &section, &ForecastReference::default())?.write_text(&mut text)?;
    }
    std::io::stdout().write_all(&text)?;
    if let Some(dir) = &common.out {
        claim(dir, common.force)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("budget.txt"), &text)?;
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        fs::write(dir.join("budget.csv"), csv)?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(fail(EXIT_BUDGET, "power budget fails"))
    }
}

fn cmd_spectrum(common: &Common) -> Outcome {
    let scenario = load(common)?;
    let topo = &scenario.topology;
    let mut text = Vec::new();
    let mut tables = Vec::new();
    for (label, laser, f_rf) in [
        ("forward", &topo.laser_fwd, topo.modulation.forward_rf_hz),
        ("backward", &topo.laser_bwd, topo.modulation.backward_rf_hz),
    ] {
        let omega = 2.0 * std::f64::consts::PI * f_rf;
        let coeffs = sideband_amplitudes(laser.frequency_mod_index, laser.amplitude_mod_index, 1)?;
        let dtd = total_differential_delay(topo, laser, omega)?;
        let rf = detected_rf(&coeffs, dtd, omega, topo.one_way_delay(), laser.angular_frequency())?;
        writeln!(text, "{label}: RF {f_rf:e} Hz, truncation order {}", coeffs.truncation_order)?;
        writeln!(text, "  differential delay  {:.4} ps", dtd * 1e12)?;
        writeln!(text, "  detected amplitude  {:.6} (in-phase {:.6}, quadrature {:.6})", rf.total_amplitude, rf.inphase_amplitude, rf.quadrature_amplitude)?;
        writeln!(text, "  detected phase      {:.6} rad", rf.effective_phase)?;
        let mut csv = Vec::new();
        coeffs.write_csv(&mut csv)?;
        tables.push((format!("spectrum_{label}.csv"), csv));
    }
    std::io::stdout().write_all(&text)?;
    if let Some(dir) = &common.out {
        claim(dir, common.force)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("spectrum.txt"), &text)?;
        for (name, csv) in tables {
            fs::write(dir.join(name), csv)?;
        }
    }
    Ok(())
}
