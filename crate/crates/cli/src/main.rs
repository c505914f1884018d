//! Command-line driver: case/fleet/price ingestion, strategy runs,
//! hosting-capacity sweeps and report emission.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 operational
//! violations present, 4 infeasible or solver failure.

mod output;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evopf_core::fleet::io::{read_fleet, read_matrix, write_fleet, write_matrix};
use evopf_core::fleet::FleetSpec;
use evopf_core::grid::io::{read_case, write_case};
use evopf_core::grid::{BusKind, NetworkCase};
use evopf_core::ipm::IpmOptions;
use evopf_core::pf::{load_ratio, solve_power_flow, PfOptions};
use evopf_core::problem::{DemandSeries, NetworkLimits};
use evopf_core::scenarios::synth::{build_feeder, calibrate_ratings, history_for_case, SynthParams};
use evopf_core::scenarios::{
    disaggregate_baseload, generate_fleet, load_price_series, EvPopulationParams,
};
use evopf_core::strategies::{
    compare, hosting_capacity, run_all_strategies, run_coordinated, run_uncoordinated,
    RunStatus, StrategyKind, StrategyReport, UncoordinatedOptions,
};
use output::Manifest;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "evopf", version, about = "EV charge scheduling studies on distribution grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic radial feeder case bundle.
    Gencase(GencaseArgs),
    /// Generate fleet and demand bundles for a case.
    Generate(GenerateArgs),
    /// Solve one power-flow snapshot and emit voltages and load ratios.
    Pf(PfArgs),
    /// Run one charge-scheduling strategy and emit its report.
    Run(RunArgs),
    /// Run all three strategies and emit the comparison table.
    Compare(CompareArgs),
    /// Sweep EV penetration and report hosting capacity.
    Sweep(SweepArgs),
}

#[derive(Args, Serialize)]
struct GencaseArgs {
    /// Number of buses including the slack.
    #[arg(long, default_value_t = 30)]
    buses: usize,
    #[arg(long, default_value_t = 4)]
    households_per_bus: usize,
    #[arg(long, default_value_t = 1.5)]
    peak_kw_per_household: f64,
    /// Calibrate the trunk so its base-load peak sits at this ratio (%).
    #[arg(long, default_value_t = 89.0)]
    trunk_ratio: f64,
    /// Head-room target for every other branch (%).
    #[arg(long, default_value_t = 60.0)]
    lateral_ratio: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    households: usize,
    #[arg(long)]
    seed: u64,
    /// Number of periods in the horizon.
    #[arg(long, default_value_t = 96)]
    horizon: usize,
    /// Period length in hours.
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    /// Day-ahead price CSV (timestamp,price_nok_mwh) used to validate
    /// horizon coverage and copied beside the bundles.
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    peak_kw_per_household: f64,
    /// Required state of charge at departure.
    #[arg(long, default_value_t = 1.0)]
    required_soc: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PfArgs {
    #[arg(long)]
    case: PathBuf,
    /// Demand bundle directory holding pd.csv and qd.csv.
    #[arg(long)]
    demand: PathBuf,
    /// Period column of the demand matrices to solve.
    #[arg(long, default_value_t = 0)]
    period: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum StrategyArg {
    Dumb,
    Mpopf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum LimitsArg {
    On,
    Off,
}

#[derive(Args, Serialize)]
struct RunArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    fleet: PathBuf,
    #[arg(long)]
    demand: PathBuf,
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    /// Network operational limits (mpopf strategy only).
    #[arg(long, value_enum, default_value = "on")]
    limits: LimitsArg,
    /// Periods to run; defaults to the demand horizon.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    /// Emit the interior-point iteration log.
    #[arg(long)]
    trace: bool,
    /// Emit long-format plot data.
    #[arg(long)]
    emit_plots: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    fleet: PathBuf,
    #[arg(long)]
    demand: PathBuf,
    #[arg(long)]
    prices: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    /// Bound on concurrent strategy jobs (1 = sequential).
    #[arg(long, default_value_t = 3)]
    jobs: usize,
    #[arg(long)]
    emit_plots: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    fleet: PathBuf,
    #[arg(long)]
    demand: PathBuf,
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "on")]
    limits: LimitsArg,
    #[arg(long)]
    ev_step: usize,
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Gencase(args) => cmd_gencase(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Pf(args) => cmd_pf(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn load_case(path: &Path) -> Result<NetworkCase> {
    let (case, warnings) =
        read_case(path).with_context(|| format!("loading case bundle {}", path.display()))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(case)
}

fn load_demand(
    dir: &Path,
    prices_path: &Path,
    horizon: Option<usize>,
    dt: f64,
) -> Result<DemandSeries> {
    let pd = read_matrix(&dir.join("pd.csv"))
        .with_context(|| format!("loading {}", dir.join("pd.csv").display()))?;
    let qd = read_matrix(&dir.join("qd.csv"))
        .with_context(|| format!("loading {}", dir.join("qd.csv").display()))?;
    let t_count = horizon.unwrap_or(pd.ncols());
    if t_count > pd.ncols() {
        bail!(
            "requested horizon {} exceeds the demand series length {}",
            t_count,
            pd.ncols()
        );
    }
    let file = std::fs::File::open(prices_path)
        .with_context(|| format!("price file {}", prices_path.display()))?;
    let prices = load_price_series(file, t_count, dt)
        .with_context(|| format!("price file {}", prices_path.display()))?;
    let truncate = |m: &evopf_core::mat::Mat| {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| m.row(r)[..t_count].to_vec())
            .collect();
        evopf_core::mat::Mat::from_rows(rows).expect("rectangular")
    };
    Ok(DemandSeries {
        pd_mw: truncate(&pd),
        qd_mw: truncate(&qd),
        price_nok_mwh: prices.per_period_nok_mwh,
        dt_h: dt,
    })
}

fn cmd_gencase(args: GencaseArgs) -> Result<u8> {
    let mut manifest = Manifest::new("gencase", Some(args.seed), &args);
    let params = SynthParams {
        n_buses: args.buses,
        households_per_bus: args.households_per_bus,
        peak_kw_per_household: args.peak_kw_per_household,
        ..SynthParams::default()
    };
    let feeder = build_feeder(&params, args.seed);
    let (pd, qd) = disaggregate_baseload(&feeder.history, &feeder.case, 96, 0.25)
        .context("base-load disaggregation")?;
    let case = calibrate_ratings(
        &feeder.case,
        &pd,
        &qd,
        feeder.trunk_branch,
        args.trunk_ratio,
        args.lateral_ratio,
    );
    std::fs::create_dir_all(&args.out)?;
    write_case(&args.out, &case).context("writing case bundle")?;
    // the demand implied by the synthetic history ships with the case
    write_matrix(&args.out.join("pd.csv"), &pd, &[manifest.stamp()])?;
    write_matrix(&args.out.join("qd.csv"), &qd, &[manifest.stamp()])?;
    for name in ["case.json", "bus.csv", "branch.csv", "gen.csv", "pd.csv", "qd.csv"] {
        manifest.record_output(&args.out.join(name))?;
    }
    manifest.write(&args.out)?;
    println!(
        "wrote case `{}` ({} buses, {} branches, trunk rated for {}% base peak) to {}",
        case.name(),
        case.n_buses(),
        case.n_branches(),
        args.trunk_ratio,
        args.out.display()
    );
    Ok(0)
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let mut manifest = Manifest::new("generate", Some(args.seed), &args);
    let case = load_case(&args.case)?;
    manifest.add_input_dir("case", &args.case)?;
    if !args.prices.exists() {
        bail!("price file not found: {}", args.prices.display());
    }
    manifest.add_input_file("prices", &args.prices)?;

    // validate price coverage of the horizon up front
    let file = std::fs::File::open(&args.prices)?;
    load_price_series(file, args.horizon, args.dt)
        .with_context(|| format!("price file {}", args.prices.display()))?;

    // households round-robin over the PQ buses in case order
    let pq_buses: Vec<u32> = case
        .buses()
        .iter()
        .filter(|b| b.kind == BusKind::Pq)
        .map(|b| b.id)
        .collect();
    if pq_buses.is_empty() {
        bail!("case has no PQ buses to attach households to");
    }
    let household_buses: Vec<u32> = (0..args.households)
        .map(|i| pq_buses[i % pq_buses.len()])
        .collect();

    let params = EvPopulationParams {
        required_departure_soc: args.required_soc,
        ..EvPopulationParams::default()
    };
    let (fleet, _events, _samples) = generate_fleet(
        &params,
        &household_buses,
        args.seed,
        args.horizon,
        args.dt,
        case.n_generators(),
    )?;

    let history = history_for_case(
        &case,
        &household_buses,
        args.peak_kw_per_household,
        args.seed,
    );
    let (pd, qd) = disaggregate_baseload(&history, &case, args.horizon, args.dt)?;

    std::fs::create_dir_all(&args.out)?;
    write_fleet(&args.out, &fleet).context("writing fleet bundle")?;
    write_matrix(&args.out.join("pd.csv"), &pd, &[manifest.stamp()])?;
    write_matrix(&args.out.join("qd.csv"), &qd, &[manifest.stamp()])?;
    std::fs::copy(&args.prices, args.out.join("prices.csv"))?;

    for name in [
        "batt.csv", "avbp.csv", "conch.csv", "condi.csv", "avbq.csv", "avg.csv", "soci.csv",
        "socmi.csv", "pd.csv", "qd.csv", "prices.csv",
    ] {
        manifest.record_output(&args.out.join(name))?;
    }
    manifest.write(&args.out)?;
    println!(
        "wrote fleet of {} EVs over {} households and demand series to {}",
        fleet.n_devices(),
        args.households,
        args.out.display()
    );
    Ok(0)
}

fn cmd_pf(args: PfArgs) -> Result<u8> {
    let manifest = {
        let mut m = Manifest::new("pf", None, &args);
        m.add_input_dir("case", &args.case)?;
        m.add_input_dir("demand", &args.demand)?;
        m
    };
    let case = load_case(&args.case)?;
    let pd = read_matrix(&args.demand.join("pd.csv"))?;
    let qd = read_matrix(&args.demand.join("qd.csv"))?;
    if args.period >= pd.ncols() {
        bail!(
            "period {} out of range; demand series has {} periods",
            args.period,
            pd.ncols()
        );
    }
    let sol = solve_power_flow(
        &case,
        &pd.col(args.period),
        &qd.col(args.period),
        &PfOptions::default(),
    )?;
    if !sol.converged {
        bail!(
            "power flow diverged (mismatch {:.3e} after {} iterations)",
            sol.max_mismatch_pu,
            sol.iterations
        );
    }
    std::fs::create_dir_all(&args.out)?;
    let stamp = manifest.stamp();
    output::write_csv(
        &args.out.join("voltages.csv"),
        &stamp,
        &["bus_id", "v_pu", "theta_rad"],
        (0..case.n_buses()).map(|b| {
            vec![
                case.bus_id(b).to_string(),
                format!("{:.6}", sol.v_mag[b]),
                format!("{:.6}", sol.v_ang[b]),
            ]
        }),
    )?;
    let adm = evopf_core::grid::build_admittances(&case)?;
    let ratios = load_ratio(&sol, &adm);
    let n_l = adm.n_lines();
    output::write_csv(
        &args.out.join("load_ratios.csv"),
        &stamp,
        &["branch", "side", "ratio_percent"],
        (0..2 * n_l).map(|k| {
            vec![
                adm.branch_idx[k % n_l].to_string(),
                if k < n_l { "from" } else { "to" }.to_string(),
                ratios[k].map_or("-".into(), |r| format!("{r:.3}")),
            ]
        }),
    )?;
    let mut manifest = manifest;
    manifest.record_output(&args.out.join("voltages.csv"))?;
    manifest.record_output(&args.out.join("load_ratios.csv"))?;
    manifest.write(&args.out)?;
    println!(
        "solved period {} in {} iterations; v in [{:.4}, {:.4}] p.u.",
        args.period,
        sol.iterations,
        sol.v_mag.iter().cloned().fold(f64::INFINITY, f64::min),
        sol.v_mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(0)
}

fn write_run_outputs(
    dir: &Path,
    manifest: &mut Manifest,
    report: &StrategyReport,
    trace: bool,
    plots: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stamp = manifest.stamp();
    let label = report.strategy.label();
    let periods = dir.join(format!("periods_{label}.csv"));
    output::write_period_series(&periods, &stamp, report)?;
    manifest.record_output(&periods)?;
    let viol = dir.join(format!("violations_{label}.csv"));
    output::write_violations(&viol, &stamp, report)?;
    manifest.record_output(&viol)?;
    if trace && report.solver_log.is_some() {
        let t = dir.join(format!("trace_{label}.csv"));
        output::write_trace(&t, &stamp, report)?;
        manifest.record_output(&t)?;
    }
    if plots {
        let p = dir.join(format!("plots_{label}.csv"));
        output::write_plot_series(&p, &stamp, report)?;
        manifest.record_output(&p)?;
    }
    Ok(())
}

fn status_exit_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Clean => 0,
        RunStatus::ViolationsPresent => 3,
        RunStatus::Infeasible | RunStatus::Failed => 4,
    }
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let mut manifest = Manifest::new("run", None, &args);
    manifest.add_input_dir("case", &args.case)?;
    manifest.add_input_dir("fleet", &args.fleet)?;
    manifest.add_input_dir("demand", &args.demand)?;
    manifest.add_input_file("prices", &args.prices)?;

    let case = load_case(&args.case)?;
    let fleet = read_fleet(&args.fleet)
        .with_context(|| format!("loading fleet bundle {}", args.fleet.display()))?;
    let demand = load_demand(&args.demand, &args.prices, args.horizon, args.dt)?;
    let fleet = truncate_fleet(&fleet, demand.horizon())?;

    let report = match args.strategy {
        StrategyArg::Dumb => {
            run_uncoordinated(&case, &fleet, &demand, &UncoordinatedOptions::default())?
        }
        StrategyArg::Mpopf => {
            let limits = match args.limits {
                LimitsArg::On => NetworkLimits::On,
                LimitsArg::Off => NetworkLimits::Off,
            };
            run_coordinated(&case, &fleet, &demand, limits, &IpmOptions::default())?
        }
    };

    write_run_outputs(&args.out, &mut manifest, &report, args.trace, args.emit_plots)?;
    output::write_summary(&args.out, &manifest.stamp(), &report)?;
    manifest.record_output(&args.out.join("summary.csv"))?;
    manifest.record_output(&args.out.join("summary.json"))?;
    manifest.write(&args.out)?;

    println!(
        "{}: status {:?}, energy {:.3} MWh, loss {:.3} MWh, cost {:.1} NOK, {} violation(s)",
        report.strategy.label(),
        report.status,
        report.energy_mwh,
        report.loss_mwh,
        report.cost_nok,
        report.violations.len()
    );
    Ok(status_exit_code(report.status))
}

/// The fleet matrices must match the demand horizon; re-cut them when a
/// shorter horizon was requested.
fn truncate_fleet(fleet: &FleetSpec, t_count: usize) -> Result<FleetSpec> {
    if fleet.horizon() == t_count {
        return Ok(fleet.clone());
    }
    if fleet.horizon() < t_count {
        bail!(
            "fleet bundle covers {} periods, demand horizon is {}",
            fleet.horizon(),
            t_count
        );
    }
    let cut = |m: &evopf_core::mat::Mat| {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| m.row(r)[..t_count].to_vec())
            .collect();
        evopf_core::mat::Mat::from_rows(rows).expect("rectangular")
    };
    Ok(FleetSpec {
        devices: fleet.devices.clone(),
        avbp: cut(&fleet.avbp),
        conch: cut(&fleet.conch),
        condi: cut(&fleet.condi),
        avbq: cut(&fleet.avbq),
        avg: cut(&fleet.avg),
        soci: cut(&fleet.soci),
        socmi: cut(&fleet.socmi),
    })
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let mut manifest = Manifest::new("compare", None, &args);
    manifest.add_input_dir("case", &args.case)?;
    manifest.add_input_dir("fleet", &args.fleet)?;
    manifest.add_input_dir("demand", &args.demand)?;
    manifest.add_input_file("prices", &args.prices)?;

    let case = load_case(&args.case)?;
    let fleet = read_fleet(&args.fleet)?;
    let demand = load_demand(&args.demand, &args.prices, args.horizon, args.dt)?;
    let fleet = truncate_fleet(&fleet, demand.horizon())?;
    let opts = IpmOptions::default();

    let reports: Vec<StrategyReport> = if args.jobs <= 1 {
        vec![
            run_uncoordinated(&case, &fleet, &demand, &UncoordinatedOptions::default())?,
            run_coordinated(&case, &fleet, &demand, NetworkLimits::Off, &opts)?,
            run_coordinated(&case, &fleet, &demand, NetworkLimits::On, &opts)?,
        ]
    } else {
        run_all_strategies(&case, &fleet, &demand, &opts)?.into()
    };

    for report in &reports {
        write_run_outputs(&args.out, &mut manifest, report, false, args.emit_plots)?;
    }
    let table = compare(&reports)?;
    output::write_comparison(&args.out, &manifest.stamp(), &table)?;
    manifest.record_output(&args.out.join("comparison.csv"))?;
    manifest.record_output(&args.out.join("comparison.json"))?;
    manifest.write(&args.out)?;

    for row in &table.rows {
        println!(
            "{:<18} status {:?}: energy {:.3} MWh, loss {:.3} MWh, cost {:.1} NOK, saving {:.1} NOK ({:.3}%)",
            row.strategy.label(),
            row.status,
            row.energy_mwh,
            row.loss_mwh,
            row.cost_nok,
            row.daily_saving_nok,
            row.daily_saving_percent
        );
    }
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let mut manifest = Manifest::new("sweep", None, &args);
    manifest.add_input_dir("case", &args.case)?;
    manifest.add_input_dir("fleet", &args.fleet)?;
    manifest.add_input_dir("demand", &args.demand)?;
    manifest.add_input_file("prices", &args.prices)?;

    let case = load_case(&args.case)?;
    let fleet = read_fleet(&args.fleet)?;
    let demand = load_demand(&args.demand, &args.prices, None, args.dt)?;
    let fleet = truncate_fleet(&fleet, demand.horizon())?;
    if args.ev_step == 0 {
        bail!("--ev-step must be positive");
    }

    let strategy = match (args.strategy, args.limits) {
        (StrategyArg::Dumb, _) => StrategyKind::Uncoordinated,
        (StrategyArg::Mpopf, LimitsArg::Off) => StrategyKind::CoordinatedNoLimits,
        (StrategyArg::Mpopf, LimitsArg::On) => StrategyKind::CoordinatedWithLimits,
    };
    let report = hosting_capacity(
        &case,
        &fleet,
        &demand,
        strategy,
        args.ev_step,
        &IpmOptions::default(),
    )?;
    std::fs::create_dir_all(&args.out)?;
    output::write_hosting(&args.out, &manifest.stamp(), &report)?;
    manifest.record_output(&args.out.join(format!("hosting_{}.csv", strategy.label())))?;
    manifest.write(&args.out)?;
    println!(
        "{}: hosting capacity {} of {} EVs (step {})",
        strategy.label(),
        report.capacity_evs,
        report.fleet_size,
        args.ev_step
    );
    Ok(0)
}
