//! `aclesim`: power flow, time-domain simulation, critical clearing time and
//! CCT sweeps for AC/DC systems with AC-line-emulating HVDC links.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acle_core::scenario::{Scenario, BUNDLED_KUNDUR};
use acle_core::stability::{compute_cct, parse_grid, parse_list, sweep_cct, SimulationProbe, SWEEP_CSV_HEADER};
use acle_core::tds::{run_simulation, DynamicModel, StudyCase, Termination};
use acle_core::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

const EXIT_INPUT: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_LOS: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "aclesim", version, about = "Transient stability of AC grids with AC-line-emulating VSC-HVDC links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the initial operating point.
    Powerflow(Common),
    /// Run a time-domain simulation with the scenario's events.
    Simulate(Common),
    /// Critical clearing time of the scenario's fault.
    Cct(CctArgs),
    /// CCT over a grid of gains and filter time constants.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, default_value = BUNDLED_KUNDUR)]
    scenario: String,
    /// Override a scenario value, e.g. `acle.k=2` or `machines.G1.h_s=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "aclesim_out")]
    out: PathBuf,
    /// Integration step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time (s).
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

#[derive(Args, Debug)]
struct CctArgs {
    #[command(flatten)]
    common: Common,
    /// Replace the emulation controller by constant power at its initial flow.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Filter time constants as start:step:end (s).
    #[arg(long = "t-grid", default_value = "0:0.05:2")]
    t_grid: String,
    /// Emulation gains (pu/rad, converter base).
    #[arg(long = "k-list", default_value = "1,2,4")]
    k_list: String,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_solver_failure() { EXIT_SOLVER } else { EXIT_INPUT },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    input_error(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    argv: Vec<String>,
    scenario: String,
    scenario_sha256: String,
    resolved_scenario_sha256: String,
    overrides: Vec<String>,
    outputs: Vec<String>,
}

/// Scenario with overrides applied, plus what the manifest records about it.
struct Loaded {
    scenario: Scenario,
    source_hash: String,
    resolved_hash: String,
    overrides: Vec<String>,
}

fn sha256(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let text = match acle_core::scenario::bundled(&common.scenario) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(&common.scenario).map_err(|e| input_error(format!("{}: {e}", common.scenario)))?,
    };
    let mut overrides = common.overrides.clone();
    if let Some(dt) = common.dt {
        overrides.push(format!("solver.dt_s={dt:?}"));
    }
    if let Some(t) = common.t_end {
        overrides.push(format!("solver.t_end_s={t:?}"));
    }
    let scenario = Scenario::parse(&text)?.with_overrides(&overrides)?;
    let resolved = scenario.to_toml()?;
    Ok(Loaded {
        scenario,
        source_hash: sha256(&text),
        resolved_hash: sha256(&resolved),
        overrides,
    })
}

struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io_error(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, common: &Common, loaded: &Loaded) -> Result<(), Failure> {
        self.written.push("manifest.json".into());
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            argv: std::env::args().collect(),
            scenario: common.scenario.clone(),
            scenario_sha256: loaded.source_hash.clone(),
            resolved_scenario_sha256: loaded.resolved_hash.clone(),
            overrides: loaded.overrides.clone(),
            outputs: self.written.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join("manifest.json");
        fs::write(&path, json + "\n").map_err(|e| io_error(&path, e))
    }
}

fn converter_mva(case: &StudyCase) -> Vec<f64> {
    case.powerflow
        .hvdc
        .as_ref()
        .map(|h| h.converters.iter().map(|c| c.rating_mva).collect())
        .unwrap_or_default()
}

fn cmd_powerflow(common: &Common) -> Result<u8, Failure> {
    let loaded = load(common)?;
    let case = loaded.scenario.study_case()?;
    let pf = case.solve_operating_point()?;
    let mut out = Output::new(&common.out)?;
    out.write("powerflow.csv", &pf.to_csv(&converter_mva(&case)))?;

    println!("operating point of '{}'", case.name);
    println!("{:>5} {:>9} {:>10}", "bus", "v_pu", "angle_deg");
    for (i, id) in pf.bus_ids.iter().enumerate() {
        println!("{id:>5} {:>9.5} {:>10.4}", pf.v[i].norm(), pf.v[i].arg().to_degrees());
    }
    for g in &pf.generators {
        println!("generator at bus {:>3}: {:>9.2} MW {:>9.2} MVAr", g.bus, g.p_mw, g.q_mvar);
    }
    let mva = converter_mva(&case);
    for (c, s) in pf.converters.iter().zip(&mva) {
        println!(
            "converter {}: p_s {:>9.2} MW, q_s {:>8.2} MVAr, u_dc {:.5} pu",
            c.name,
            c.p_s * s,
            c.q_s * s,
            c.u_dc
        );
    }
    if let Some(b) = &case.acle {
        println!("P_HVDC {:.2} MW", -pf.converters[b.controlled].p_s * mva[b.controlled]);
    }
    for f in &pf.branch_flows {
        println!("line {:>6}: {:>9.2} MW", f.circuit_id, f.p_from_mw);
    }
    out.finish("powerflow", common, &loaded)?;
    Ok(0)
}

fn cmd_simulate(common: &Common) -> Result<u8, Failure> {
    let loaded = load(common)?;
    let case = loaded.scenario.study_case()?;
    let model = DynamicModel::build(&case)?;
    let params = loaded.scenario.sim_params();
    let events = loaded.scenario.events()?;
    let trace = run_simulation(&model, &params, &events)?;
    let mut out = Output::new(&common.out)?;
    out.write("trace.csv", &trace.to_csv())?;
    let summary = serde_json::json!({
        "termination": &trace.termination,
        "steps": trace.steps,
        "max_angle_spread_deg": trace.max_angle_spread.to_degrees(),
        "max_balance_residual": trace.max_balance_residual,
        "max_network_residual": trace.max_network_residual,
    });
    out.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    out.finish("simulate", common, &loaded)?;
    println!(
        "{} after {} steps; largest angle spread {:.2} deg",
        trace.termination.label(),
        trace.steps,
        trace.max_angle_spread.to_degrees()
    );
    Ok(match trace.termination {
        Termination::Completed => 0,
        Termination::LossOfSynchronism { .. } => EXIT_LOS,
        Termination::DcCollapse { .. } | Termination::SolverFailure { .. } => {
            eprintln!("simulation stopped: {:?}", trace.termination);
            EXIT_SOLVER
        }
    })
}

fn cmd_cct(args: &CctArgs) -> Result<u8, Failure> {
    let common = &args.common;
    let loaded = load(common)?;
    let mut case = loaded.scenario.study_case()?;
    let fault = loaded.scenario.fault()?;
    let params = loaded.scenario.sim_params();
    let mut model = DynamicModel::build(&case)?;
    if args.baseline {
        let st = model
            .acle
            .as_ref()
            .ok_or_else(|| input_error("--baseline needs an [acle] section"))?;
        case = case.with_constant_power(st.p_ini);
        model = DynamicModel::build(&case)?;
    }
    let result = compute_cct(&SimulationProbe::new(&model, &params, &fault), &loaded.scenario.cct_settings())?;

    let (label, k, t) = match (&case.acle, args.baseline) {
        (Some(b), false) if b.settings.mode == acle_core::acle::AcleMode::AcLineEmulation => {
            ("ac_line_emulation", b.settings.k.to_string(), b.settings.t.to_string())
        }
        (Some(b), _) => ("constant_p", b.settings.k.to_string(), String::new()),
        (None, _) => ("no_controller", String::new(), String::new()),
    };
    let ms = |x: f64| format!("{:.0}", x * 1000.0);
    let csv = format!(
        "{SWEEP_CSV_HEADER}\n{label},{k},{t},{},{},{},{}\n",
        result.cct.map(ms).unwrap_or_default(),
        ms(result.bracket_lo),
        result.bracket_hi.map(ms).unwrap_or_default(),
        result.status.label()
    );
    let mut runs = String::from("duration_ms,stable,reason\n");
    for (d, o) in &result.runs {
        runs.push_str(&format!("{},{},{}\n", ms(*d), o.stable, o.reason));
    }
    let mut out = Output::new(&common.out)?;
    out.write("cct.csv", &csv)?;
    out.write("cct_runs.csv", &runs)?;
    out.finish("cct", common, &loaded)?;
    match result.cct {
        Some(c) => println!(
            "CCT {} ms (stable at {} ms, unstable at {} ms; {} runs)",
            ms(c),
            ms(result.bracket_lo),
            ms(result.bracket_hi.unwrap()),
            result.run_count()
        ),
        None => println!("CCT > {} ms (stable up to the search cap)", ms(result.bracket_lo)),
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8, Failure> {
    let common = &args.common;
    let t_grid = parse_grid(&args.t_grid).map_err(|e| input_error(format!("--t-grid: {e}")))?;
    let k_list = parse_list(&args.k_list).map_err(|e| input_error(format!("--k-list: {e}")))?;
    if k_list.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
        return Err(input_error("--k-list: gains must be finite and non-negative"));
    }
    if args.jobs == 0 {
        return Err(input_error("--jobs must be at least 1"));
    }
    let loaded = load(common)?;
    let case = loaded.scenario.study_case()?;
    let fault = loaded.scenario.fault()?;
    let params = loaded.scenario.sim_params();
    let settings = loaded.scenario.cct_settings();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| input_error(e.to_string()))?;
    let result = pool.install(|| sweep_cct(&case, &params, &fault, &settings, &k_list, &t_grid))?;

    let mut out = Output::new(&common.out)?;
    out.write("sweep.csv", &result.to_csv())?;
    out.write("baselines.csv", &result.baselines_csv())?;
    for (k, series) in result.plot_series() {
        out.write(&format!("plot/cct_vs_T_K{k}.csv"), &series)?;
    }
    out.finish("sweep", common, &loaded)?;
    let failed = result.cells.iter().chain(&result.baselines).filter(|e| e.result.is_err()).count();
    println!(
        "{} cells and {} baselines written to {}",
        result.cells.len(),
        result.baselines.len(),
        common.out.display()
    );
    if failed > 0 {
        eprintln!("{failed} cells failed; see the status column");
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Powerflow(c) => cmd_powerflow(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Cct(a) => cmd_cct(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
