//! `saev` command line: ingest, run, sweep, cost, oracle-check, validate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 model
//! infeasibility, 3 verification mismatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use saev_core::analytics::{compare, emit_reports, summarize, Axis, KpiSummary, SweepSpec};
use saev_core::config::{load_config, LoadedConfig, Resolved};
use saev_core::demand::{estimate_rates, replay_arrivals};
use saev_core::fixtures::oracle_scenario;
use saev_core::milp::MilpInstance;
use saev_core::mpc::{oracle_check, run, run_multiday, DayInput, MpcOptions, RunTrace, Scenario};
use saev_core::par::Execution;
use saev_core::resilience::{break_even_frequency, f_out_table, v2b_cost, CostInputs};
use saev_core::scenario::{build_network, load_nodes, load_trips, validate_scenario, ModelParams, ValidationStatus};
use saev_core::solver::{Backend, SolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "saev", version, about = "SAEV fleet control with vehicle-to-building backup")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a network and demand files from node and trip CSVs.
    Ingest(IngestArgs),
    /// Run the receding-horizon controller on a scenario.
    Run(RunArgs),
    /// Sweep one scenario axis over values and seeds.
    Sweep(SweepArgs),
    /// V2B cost breakdown and break-even against a generator.
    Cost(CostArgs),
    /// Check every MPC iteration against the exhaustive oracle.
    OracleCheck(OracleArgs),
    /// Static scenario checks.
    Validate(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override a scenario key, e.g. `params.fleet_size=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Relative MIP gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Per-iteration time limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub trips: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub speed_kmh: f64,
    #[arg(long, default_value_t = 6.0)]
    pub tau_minutes: f64,
    #[arg(long, default_value_t = 240)]
    pub steps: usize,
    #[arg(long, default_value_t = 30)]
    pub bucket_minutes: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also run without the outage and report the differences and costs.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// passengers, fleet-size, outage-start, outage-node, outage-length or charge-rate.
    #[arg(long)]
    pub axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Concurrent sweep points (1 runs sequentially).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Output directory of a `run --compare` invocation.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Cost input, e.g. `t_relo_minutes=654` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also tabulate annual costs over these outage frequencies.
    #[arg(long, value_delimiter = ',')]
    pub f_out_values: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Scenario file; without it the bundled fixture for `--seed` is used.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Give the bundled fixture an outage.
    #[arg(long)]
    pub outage: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Refuse instances whose nominal branching product exceeds this.
    #[arg(long)]
    pub oracle_limit: Option<f64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Cost(a) => cmd_cost(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a, None),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn load(args: &ScenarioArgs) -> Result<LoadedConfig> {
    let mut loaded = load_config(&args.scenario, &args.overrides)?;
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    Ok(loaded)
}

fn apply_solver(opts: &mut SolveOptions, s: &SolverArgs) {
    if let Some(g) = s.gap {
        opts.rel_gap = g;
    }
    if let Some(t) = s.time_limit {
        opts.time_limit_s = t;
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<i32> {
    let nodes = load_nodes(&a.nodes)?;
    let network = build_network(nodes, a.speed_kmh, a.tau_minutes)?;
    let load = load_trips(&a.trips, &network)?;
    let params = ModelParams { tau_minutes: a.tau_minutes, horizon_l: a.steps, ..Default::default() };
    let arrivals = replay_arrivals(&load.trips, &params, network.len())?;
    let rates = estimate_rates(&load.trips, &params, network.len(), a.bucket_minutes)?;
    create_dir(&a.out)?;
    let mut tt = String::new();
    for row in &network.travel_time {
        let cells: Vec<String> = row.iter().map(u32::to_string).collect();
        let _ = writeln!(tt, "{}", cells.join(","));
    }
    write(&a.out.join("travel_times.csv"), tt)?;
    arrivals.write_csv(a.out.join("arrivals.csv"))?;
    let mut rate_csv = String::from("origin,destination,bucket,lambda\n");
    for i in 0..rates.nodes {
        for j in 0..rates.nodes {
            for b in 0..rates.buckets {
                let l = rates.get(i, j, b);
                if l > 0.0 {
                    let _ = writeln!(rate_csv, "{i},{j},{b},{l}");
                }
            }
        }
    }
    write(&a.out.join("rates.csv"), rate_csv)?;
    let scenario = format!(
        "# generated by `saev ingest`\n\n[network]\ntravel_times = {:?}\n\n[demand]\nkind = \"arrivals\"\narrivals_file = \"arrivals.csv\"\n\n[params]\ntau_minutes = {}\nhorizon_l = {}\n",
        network.travel_time, a.tau_minutes, a.steps
    );
    write(&a.out.join("scenario.toml"), scenario)?;
    println!(
        "nodes {}  trips kept {}  dropped intra-node {}  dropped walk {}  arrivals {}",
        network.len(),
        load.trips.len(),
        load.dropped_intra,
        load.dropped_walk,
        arrivals.total()
    );
    Ok(EXIT_OK)
}

fn execute(resolved: &Resolved, opts: &MpcOptions, with_outage: bool) -> Result<RunTrace> {
    let mut scenario: Scenario = resolved.scenario()?;
    if !with_outage {
        scenario.outages.events.clear();
    }
    let mut trace = if resolved.days.len() > 1 {
        let days: Vec<DayInput> = resolved
            .days
            .iter()
            .enumerate()
            .map(|(d, a)| DayInput {
                arrivals: a.clone(),
                outages: if d == 0 { scenario.outages.clone() } else { Default::default() },
            })
            .collect();
        run_multiday(&scenario, &days, resolved.soc_reset, opts)?
    } else {
        run(&scenario, opts)?
    };
    trace.seed = Some(resolved.seed);
    Ok(trace)
}

fn write_run(dir: &Path, trace: &RunTrace, summary: &KpiSummary) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("trace.json"), trace.to_json())?;
    write(&dir.join("kpis.csv"), trace.kpi_csv())?;
    write(&dir.join("vehicles.csv"), trace.vehicle_csv())?;
    write(&dir.join("timing.csv"), trace.timing_csv())?;
    write(&dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

fn summary_text(s: &KpiSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "steps_completed = {} / {}", s.steps_completed, s.steps_planned);
    let _ = writeln!(out, "infeasible = {}", s.infeasible);
    let _ = writeln!(out, "passengers = {}", s.passengers);
    let _ = writeln!(out, "waiting_min = {}", s.total_waiting_min);
    let _ = writeln!(out, "relocation_min = {}", s.total_relocation_min);
    let _ = writeln!(out, "charge_soc = {}", s.total_charge_soc);
    let _ = writeln!(out, "charge_eur = {}", s.charge_eur);
    let _ = writeln!(out, "discharge_soc = {}", s.total_discharge_soc);
    let _ = writeln!(out, "q_v2b_kwh = {}", s.q_v2b_kwh);
    let _ = writeln!(out, "flagged_iterations = {}", s.flagged_iterations);
    out
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let loaded = load(&a.scenario)?;
    let resolved = loaded.resolve()?;
    let mut opts = resolved.options.clone();
    apply_solver(&mut opts.solve, &a.solver);
    let trace = execute(&resolved, &opts, true)?;
    let summary = summarize(&trace);
    write_run(&a.out, &trace, &summary)?;
    let mut report = format!("[run]\nfingerprint = {}\nseed = {}\n", resolved.fingerprint, resolved.seed);
    report.push_str(&summary_text(&summary));
    let has_outage = !resolved.outages.events.is_empty();
    if a.compare && has_outage && trace.halt.is_none() {
        let normal = execute(&resolved, &opts, false)?;
        let normal_summary = summarize(&normal);
        write_run(&a.out.join("normal"), &normal, &normal_summary)?;
        let delta = compare(&normal_summary, &summary)?;
        let inputs = CostInputs {
            fleet_size: resolved.params.fleet_size,
            sigma: resolved.params.sigma,
            omega: resolved.params.omega,
            battery_kwh: resolved.params.battery_kwh,
            theta_c: resolved.params.theta_c,
            tau_minutes: resolved.params.tau_minutes,
            t_relo_minutes: delta.delta_relocation_min,
            q_v2b_kwh: delta.q_v2b_kwh,
            ..Default::default()
        };
        write(&a.out.join("cost_inputs.json"), serde_json::to_string_pretty(&inputs)?)?;
        let _ = write!(
            report,
            "\n[compare]\ndelta_waiting_min = {}\nt_relo_min = {}\nnegative_relocation = {}\n",
            delta.delta_waiting_min, delta.delta_relocation_min, delta.negative_relocation
        );
        report.push_str(&cost_text(&inputs));
    } else if has_outage {
        let _ = write!(report, "\n[cost]\nq_v2b_kwh = {}\nnote = relocation delta needs --compare\n", summary.q_v2b_kwh);
    }
    write(&a.out.join("report.txt"), &report)?;
    print!("{report}");
    if let Some(h) = &trace.halt {
        eprintln!("infeasible: {}", h.message);
        return Ok(EXIT_INFEASIBLE);
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let loaded = load(&a.scenario)?;
    let resolved = loaded.resolve()?;
    let axis: Axis = a.axis.parse()?;
    let mut opts = resolved.options.clone();
    apply_solver(&mut opts.solve, &a.solver);
    let seeds = if a.seeds.is_empty() { vec![resolved.seed] } else { a.seeds.clone() };
    let spec = SweepSpec { axis, values: a.values.clone(), seeds };
    let exec = if a.workers == 0 { Execution::default() } else { Execution::with_workers(a.workers) };
    let report = saev_core::analytics::sweep(&resolved.sweep_base(), &spec, &opts, exec);
    create_dir(&a.out)?;
    emit_reports(&report, &a.out)?;
    print!("{}", saev_core::analytics::summary_csv(&report));
    Ok(EXIT_OK)
}

const REQUIRED_COST_KEYS: [&str; 2] = ["t_relo_minutes", "q_v2b_kwh"];

fn cost_text(inputs: &CostInputs) -> String {
    let c = v2b_cost(inputs);
    let b = break_even_frequency(&c, inputs.generator_annual);
    let mut out = String::from("\n[cost]\n");
    let _ = writeln!(out, "c_i_eur_per_year = {:.2}", c.c_i);
    let _ = writeln!(out, "c_e_eur_per_outage = {:.2}", c.c_e);
    let _ = writeln!(out, "c_r_eur_per_outage = {:.2}", c.c_r);
    let _ = writeln!(out, "f_out = {}", c.f_out);
    let _ = writeln!(out, "c_v2b_eur_per_year = {:.2}", c.c_v2b);
    let _ = writeln!(out, "generator_eur_per_year = {:.2}", inputs.generator_annual);
    let _ = writeln!(out, "break_even_f_star = {}", b.f_star());
    let _ = writeln!(out, "verdict = {}", b.verdict());
    for w in inputs.check() {
        let _ = writeln!(out, "warning = {w}");
    }
    out
}

pub fn cmd_cost(a: &CostArgs) -> Result<i32> {
    let mut table = toml::Table::new();
    let mut given: Vec<String> = Vec::new();
    if let Some(dir) = &a.run {
        let path = dir.join("cost_inputs.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let inputs: CostInputs = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        table = toml::Table::try_from(&inputs)?;
        given.extend(REQUIRED_COST_KEYS.iter().map(|s| s.to_string()));
    }
    let mut value = toml::Value::Table(table);
    for o in &a.overrides {
        saev_core::config::apply_override(&mut value, o)?;
        if let Some((k, _)) = o.split_once('=') {
            given.push(k.trim().to_string());
        }
    }
    let missing: Vec<&str> = REQUIRED_COST_KEYS.iter().copied().filter(|k| !given.iter().any(|g| g == k)).collect();
    if !missing.is_empty() {
        bail!("missing cost inputs: {} (pass --run DIR or --set KEY=VALUE)", missing.join(", "));
    }
    let inputs: CostInputs = value.try_into().map_err(|e: toml::de::Error| anyhow!("cost inputs: {e}"))?;
    let text = cost_text(&inputs);
    print!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write(&out.join("cost.txt"), &text)?;
        if !a.f_out_values.is_empty() {
            write(&out.join("cost_vs_f_out.csv"), f_out_table(&inputs, &a.f_out_values))?;
        }
    } else if !a.f_out_values.is_empty() {
        print!("{}", f_out_table(&inputs, &a.f_out_values));
    }
    Ok(EXIT_OK)
}

/// `oracle-check`; `mutate` edits every assembled instance (used by tests to
/// corrupt a constraint).
pub fn cmd_oracle_check(a: &OracleArgs, mutate: Option<&dyn Fn(&mut MilpInstance)>) -> Result<i32> {
    let (scenario, mut opts) = match &a.scenario {
        Some(path) => {
            let mut loaded = load_config(path, &a.overrides)?;
            loaded.config.seed = a.seed;
            let r = loaded.resolve()?;
            (r.scenario()?, r.options.clone())
        }
        None => {
            let opts = MpcOptions { solve: SolveOptions { backend: Backend::from_env()?, ..Default::default() }, ..Default::default() };
            (oracle_scenario(a.seed, a.outage), opts)
        }
    };
    apply_solver(&mut opts.solve, &a.solver);
    if opts.solve.backend == Backend::Oracle {
        opts.solve.backend = Backend::Highs;
    }
    if let Some(l) = a.oracle_limit {
        opts.solve.oracle_limit = l;
    }
    let report = oracle_check(&scenario, &opts, mutate)?;
    print!("{}", report.table());
    if report.all_agree() {
        println!("all {} iterations agree", report.rows.len());
        Ok(EXIT_OK)
    } else {
        eprintln!("mismatch between backend and oracle");
        Ok(EXIT_MISMATCH)
    }
}

pub fn cmd_validate(a: &ScenarioArgs) -> Result<i32> {
    let loaded = load(a)?;
    let network = loaded.network()?;
    let c = &loaded.config;
    let report = validate_scenario(&c.params, &network, &c.outage);
    println!("status: {}", report.status);
    for issue in &report.issues {
        println!("  {issue}");
    }
    Ok(match report.status {
        ValidationStatus::Fail => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    })
}
