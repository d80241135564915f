//! Command-line front end: scenario runs, matrix sweeps, input validation,
//! the DP oracle cross-check, and synthetic data generation.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hubsim_core::config::{self, ScenarioConfig};
use hubsim_core::harness::{FlexKind, PolicyKind};
use hubsim_core::ocp;
use hubsim_core::report;
use hubsim_core::solver;
use hubsim_core::synth;
use hubsim_core::timeseries::{self, ScenarioData};
use hubsim_core::{dp, run_matrix, run_scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Parser)]
#[command(name = "hubsim", version, about = "Residential energy-hub simulator and two-stage market controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpts {
    /// Scenario config (TOML); defaults to the winter standard scenario.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigOpts {
    fn load(&self) -> Result<ScenarioConfig, CliError> {
        match &self.config {
            Some(p) => config::load_config_file(p).map_err(CliError::Config),
            None => Ok(ScenarioConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its reports.
    Run {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Directory with prices.csv and series.csv; omitted = synthesize
        /// from the config's season and seed.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Override the config's policy.
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Override the config's flexibility setup.
        #[arg(long)]
        flex: Option<FlexKind>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write a plain-text dump of the first planner NLP at its solution.
        #[arg(long)]
        dump_ocp: Option<PathBuf>,
        /// Write the first planner solve's iteration log.
        #[arg(long)]
        iteration_log: Option<PathBuf>,
    },
    /// Run a policy x flexibility sweep.
    Matrix {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated policies or `all`.
        #[arg(long, default_value = "all")]
        policies: String,
        /// Comma-separated flexibility setups or `all`.
        #[arg(long, default_value = "all")]
        flexes: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config and/or data directory without running anything.
    Validate {
        #[command(flatten)]
        cfg: ConfigOpts,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solve the reduced instance with the exhaustive DP and the NLP and
    /// compare their objectives.
    Oracle {
        #[arg(long, default_value_t = 51)]
        soc_levels: usize,
        #[arg(long, default_value_t = 11)]
        power_levels: usize,
    },
    /// Generate the synthetic standard-week CSVs.
    Synth {
        #[command(flatten)]
        cfg: ConfigOpts,
        /// Override the config's season.
        #[arg(long)]
        season: Option<String>,
        #[arg(long, default_value = "data/synth")]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Config(config::ConfigError),
    Data(anyhow::Error),
    Solver(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

fn load_data(dir: &Option<PathBuf>, cfg: &ScenarioConfig) -> Result<ScenarioData, CliError> {
    match dir {
        Some(d) => {
            let data = timeseries::load_timeseries(d, &cfg.market)
                .map_err(|e| CliError::Data(anyhow::anyhow!(e)))?;
            for w in &data.warnings {
                eprintln!("warning: {w}");
            }
            Ok(data)
        }
        None => {
            eprintln!(
                "note: no --data given, synthesizing {} data with seed {}",
                cfg.season, cfg.seed
            );
            let raw = synth::generate(cfg);
            ScenarioData::build(&raw, &cfg.market).map_err(|e| CliError::Data(anyhow::anyhow!(e)))
        }
    }
}

fn parse_policies(s: &str) -> Result<Vec<PolicyKind>> {
    if s == "all" {
        return Ok(PolicyKind::ALL.to_vec());
    }
    s.split(',')
        .map(|p| p.trim().parse::<PolicyKind>().map_err(|e| anyhow::anyhow!(e)))
        .collect()
}

fn parse_flexes(s: &str) -> Result<Vec<FlexKind>> {
    if s == "all" {
        return Ok(FlexKind::ALL.to_vec());
    }
    s.split(',')
        .map(|p| p.trim().parse::<FlexKind>().map_err(|e| anyhow::anyhow!(e)))
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            cfg,
            data,
            policy,
            flex,
            out,
            dump_ocp,
            iteration_log,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(f) = flex {
                cfg.flex = f;
            }
            let data = load_data(&data, &cfg)?;

            if dump_ocp.is_some() || iteration_log.is_some() {
                let assets = config::HubAssets::resolve(&cfg).map_err(CliError::Config)?;
                let state = cfg.initial_state(&assets);
                let frames = data
                    .da_window(cfg.time.start_s, cfg.time.da_horizon_hours)
                    .context("data does not cover the planner horizon")
                    .map_err(CliError::Data)?;
                let problem = ocp::build_da(
                    &state,
                    frames,
                    cfg.policy,
                    cfg.flex,
                    &cfg,
                    &assets,
                    cfg.time.start_s,
                )
                .map_err(|e| CliError::Solver(anyhow::anyhow!(e)))?;
                let mut settings = cfg.solver.clone();
                settings.record_iterations = iteration_log.is_some();
                let sol = ocp::solve(&problem, &settings, None);
                if let Some(path) = dump_ocp {
                    std::fs::write(&path, problem.dump(&sol.x))
                        .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
                    println!("wrote NLP dump to {}", path.display());
                }
                if let Some(path) = iteration_log {
                    std::fs::write(&path, solver::iteration_log(&sol.iterations))
                        .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
                    println!("wrote iteration log to {}", path.display());
                }
            }

            let ledger = run_scenario(&cfg, &data, None, cfg.policy, cfg.flex)
                .map_err(|e| CliError::Solver(anyhow::anyhow!(e)))?;
            let bundle = report::emit_reports(std::slice::from_ref(&ledger), &out)
                .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
            println!(
                "{}: C_grid {:.3} EUR (DA {:.3}, intra-day {:.3}), C_loss {:.3}, penalties {:.3}",
                ledger.key.label(),
                ledger.totals.c_grid_eur,
                ledger.totals.c_da_eur,
                ledger.totals.c_dev_eur,
                ledger.totals.c_loss_eur,
                ledger.totals.p_soc_dep_eur + ledger.totals.p_comfort_eur,
            );
            println!("reports in {}", bundle.outdir.display());
            Ok(())
        }
        Command::Matrix {
            cfg,
            data,
            policies,
            flexes,
            out,
        } => {
            let cfg = cfg.load()?;
            let data = load_data(&data, &cfg)?;
            let policies = parse_policies(&policies)?;
            let flexes = parse_flexes(&flexes)?;
            let ledgers = run_matrix(&cfg, &data, &policies, &flexes)
                .map_err(|e| CliError::Solver(anyhow::anyhow!(e)))?;
            let bundle = report::emit_reports(&ledgers, &out)
                .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
            println!(
                "{} scenarios done; summary at {}",
                ledgers.len(),
                bundle.summary_txt.display()
            );
            Ok(())
        }
        Command::Validate { cfg, data } => {
            let cfg = cfg.load()?;
            println!("config ok ({} season, policy {}, flex {})", cfg.season, cfg.policy.label(), cfg.flex.label());
            if let Some(dir) = data {
                let data = timeseries::load_timeseries(&dir, &cfg.market)
                    .map_err(|e| CliError::Data(anyhow::anyhow!(e)))?;
                for w in &data.warnings {
                    println!("warning: {w}");
                }
                println!(
                    "data ok: {} steps of {} s starting {}",
                    data.mpc_grid.count,
                    data.mpc_grid.step_s,
                    timeseries::format_timestamp(data.mpc_grid.start_s)
                );
            }
            Ok(())
        }
        Command::Oracle {
            soc_levels,
            power_levels,
        } => {
            let spec = dp::default_oracle_spec();
            let t0 = std::time::Instant::now();
            let dp_res = dp::solve_dp(&spec, soc_levels, power_levels);
            let dp_ms = t0.elapsed().as_millis();
            let problem = ocp::build_reduced(&spec);
            let sol = ocp::solve(&problem, &solver::SolverSettings::default(), None);
            println!("DP  objective: {:.6} EUR ({} SoC levels x {} actions, {dp_ms} ms)", dp_res.objective_eur, soc_levels, power_levels);
            println!("NLP objective: {:.6} EUR (status {:?}, {} inner iters)", sol.objective, sol.status, sol.inner_iters);
            let gap = (sol.objective - dp_res.objective_eur) / dp_res.objective_eur.abs().max(1e-9);
            println!("gap (NLP - DP)/|DP|: {:.4} %", gap * 100.0);
            if sol.objective > dp_res.objective_eur * 1.02 + 1e-9 {
                return Err(CliError::Solver(anyhow::anyhow!(
                    "NLP objective exceeds the DP reference by more than 2 %"
                )));
            }
            Ok(())
        }
        Command::Synth { cfg, season, out } => {
            let mut cfg = cfg.load()?;
            if let Some(s) = season {
                cfg = match s.as_str() {
                    "winter" => {
                        let mut c = ScenarioConfig::default();
                        c.seed = cfg.seed;
                        c
                    }
                    "summer" => {
                        let mut c = ScenarioConfig::default_summer();
                        c.seed = cfg.seed;
                        c
                    }
                    other => {
                        return Err(CliError::Other(anyhow::anyhow!(
                            "unknown season `{other}`"
                        )))
                    }
                };
            }
            let raw = synth::generate(&cfg);
            timeseries::write_timeseries(&out, &raw)
                .map_err(|e| CliError::Other(anyhow::anyhow!(e)))?;
            println!(
                "wrote {} synthetic days ({}) to {} (seed {})",
                cfg.time.days + 2,
                cfg.season,
                out.display(),
                cfg.seed
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Data(e)) => {
            eprintln!("data error: {e}");
            ExitCode::from(EXIT_DATA)
        }
        Err(CliError::Solver(e)) => {
            eprintln!("solver error: {e}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
