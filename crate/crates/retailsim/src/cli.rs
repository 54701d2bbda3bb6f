//! Command-line driver: case validation, scenario runs, and the
//! technology / elasticity sweeps.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::dg_cost::TechnologyCatalog;
use crate::equilibrium::{solve_day, DailyResults};
use crate::network::{load_case_with_catalog, validate_radial, CaseError, NetworkCase};
use crate::report::{export_results, export_trace, report_failures};
use crate::scenario::{load_scenario, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Parser)]
#[command(
    name = "retailsim",
    version,
    about = "Retail electricity market simulator for radial feeders with DG"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a case file and print a short summary.
    Validate { case: PathBuf },
    /// Solve the 24-hour scenario and write hourly.csv / summary.csv.
    Run {
        case: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.csv with the per-iteration price trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the scenario once per catalog technology and compare profits.
    SweepTech {
        case: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario over a grid of elasticities.
    SweepBeta {
        case: PathBuf,
        scenario: PathBuf,
        /// Grid as start:end:points, e.g. -0.25:-0.01:9.
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the scenario with every DG unit removed.
    NoDg {
        case: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

pub enum CliError {
    Validation(String),
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<CaseError> for CliError {
    fn from(e: CaseError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(format!("output error: {e}"))
    }
}

/// Parse and execute; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<i32, CliError> {
    let catalog = TechnologyCatalog::default_catalog();
    match command {
        Command::Validate { case } => {
            let case = load_case_with_catalog(&case, &catalog)?;
            let order = validate_radial(&case).map_err(CaseError::NotRadial)?;
            println!(
                "{}: {} buses, {} branches, {} loads in {} classes, {} DG units; radial order ok ({} branches from slack {})",
                case.name,
                case.buses.len(),
                case.branches.len(),
                case.loads.len(),
                case.classes.len(),
                case.dg_units.len(),
                order.len(),
                case.slack_bus(),
            );
            Ok(EXIT_OK)
        }
        Command::Run {
            case,
            scenario,
            out,
            trace,
        } => {
            let (case, scenario) = load_pair(&case, &scenario, &catalog)?;
            let results = run_scenario(&case, &scenario)?;
            export_results(&results, &case, &out)?;
            if trace {
                export_trace(&results, &case, &out)?;
            }
            finish(&results)
        }
        Command::NoDg { case, scenario, out } => {
            let (case, scenario) = load_pair(&case, &scenario, &catalog)?;
            let case = case.without_dg();
            let results = run_scenario(&case, &scenario)?;
            export_results(&results, &case, &out)?;
            finish(&results)
        }
        Command::SweepTech { case, scenario, out } => {
            let (case, scenario) = load_pair(&case, &scenario, &catalog)?;
            let mut rows = Vec::new();
            for tag in catalog.tags() {
                let variant = case.with_technology(tag, &catalog)?;
                let results = run_scenario(&variant, &scenario)?;
                report_failures(&results);
                rows.push((tag.to_string(), results.aggregates.daily_profit.clone()));
            }
            print_sweep_table("technology", &case.classes, &rows);
            if let Some(dir) = out {
                write_sweep_csv(&dir, "tech_sweep.csv", "technology", &case.classes, &rows)?;
            }
            Ok(EXIT_OK)
        }
        Command::SweepBeta {
            case,
            scenario,
            range,
            out,
        } => {
            let (case, scenario) = load_pair(&case, &scenario, &catalog)?;
            let grid = parse_range(&range)
                .ok_or_else(|| CliError::Validation(format!("bad --range {range:?}; expected start:end:points")))?;
            let mut rows = Vec::new();
            for beta in grid {
                let mut variant = scenario.clone();
                variant.beta = crate::scenario::PerClass::Uniform(beta);
                let results = run_scenario(&case, &variant)?;
                report_failures(&results);
                rows.push((format!("{beta:.6}"), results.aggregates.daily_profit.clone()));
            }
            print_sweep_table("beta", &case.classes, &rows);
            if let Some(dir) = out {
                write_sweep_csv(&dir, "beta_sweep.csv", "beta", &case.classes, &rows)?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn load_pair(
    case_path: &Path,
    scenario_path: &Path,
    catalog: &TechnologyCatalog,
) -> Result<(NetworkCase, Scenario), CliError> {
    let case = load_case_with_catalog(case_path, catalog)?;
    let scenario = load_scenario(scenario_path)?;
    let case = scenario.apply_technology(&case, catalog)?;
    Ok((case, scenario))
}

/// Solve a full scenario day against a prepared case.
pub fn run_scenario(case: &NetworkCase, scenario: &Scenario) -> Result<DailyResults, CliError> {
    let betas = scenario.betas(case)?;
    let hours = scenario.hour_inputs(case)?;
    let cfg = scenario.options.equilibrium_config();
    Ok(solve_day(case, &betas, &hours, &cfg))
}

fn finish(results: &DailyResults) -> Result<i32, CliError> {
    let failures = report_failures(results);
    if failures > 0 {
        eprintln!("{failures} hour(s) failed to solve");
        return Ok(EXIT_SOLVER);
    }
    Ok(EXIT_OK)
}

/// start:end:points with points >= 2, endpoints included.
fn parse_range(range: &str) -> Option<Vec<f64>> {
    let mut parts = range.split(':');
    let start: f64 = parts.next()?.parse().ok()?;
    let end: f64 = parts.next()?.parse().ok()?;
    let points: usize = parts.next()?.parse().ok()?;
    if parts.next().is_some() || points < 2 {
        return None;
    }
    let step = (end - start) / (points - 1) as f64;
    Some((0..points).map(|i| start + step * i as f64).collect())
}

fn print_sweep_table(key: &str, classes: &[String], rows: &[(String, Vec<f64>)]) {
    let mut header = vec![key.to_string()];
    header.extend(classes.iter().map(|c| format!("profit_{c}")));
    header.push("profit_total".to_string());
    println!("{}", header.join(","));
    for (label, profits) in rows {
        let total: f64 = profits.iter().sum();
        let mut row = vec![label.clone()];
        row.extend(profits.iter().map(|p| format!("{p:.6}")));
        row.push(format!("{total:.6}"));
        println!("{}", row.join(","));
    }
}

fn write_sweep_csv(
    dir: &Path,
    file: &str,
    key: &str,
    classes: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join(file)).map_err(|e| {
        CliError::Solver(format!("output error: {e}"))
    })?;
    let mut header = vec![key.to_string()];
    header.extend(classes.iter().map(|c| format!("profit_{c}")));
    header.push("profit_total".to_string());
    writer.write_record(&header).map_err(io_err)?;
    for (label, profits) in rows {
        let total: f64 = profits.iter().sum();
        let mut row = vec![label.clone()];
        row.extend(profits.iter().map(|p| format!("{p:.6}")));
        row.push(format!("{total:.6}"));
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Solver(format!("output error: {e}"))
}
