//! Command-line front end: derive symbolic state-space models from graph
//! files or built-in models, simulate command traces, calibrate parameters
//! with the GA, and validate calibrated models against recorded data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use lgdyn::estimate::{run_ga, Bounds, GaConfig, TrackingProblem};
use lgdyn::graph::{
    fundamental_cutsets, fundamental_loops, select_normal_tree, validate_graph, EquationDisplay,
    LinearGraph,
};
use lgdyn::io;
use lgdyn::models::{
    build_husky_expanded, build_husky_simplified, build_hydromech, build_msd, build_msd_undamped,
    husky_expanded_output_spec, husky_expanded_param_env, husky_output_spec, husky_param_env,
    hydromech_output_spec, msd_output_spec, HuskyGeometry, HuskyParams,
};
use lgdyn::simulate::{simulate_maneuver, ManeuverOptions, SimResult};
use lgdyn::statespace::{
    derive_state_space, elemental_equations, evaluate_model, OutputSpec, StateSpaceModel,
};
use lgdyn::symexpr::ParamEnv;

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "lgdyn",
    about = "Linear-graph modeling: derive, simulate, calibrate, validate",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the symbolic state-space model of a graph and write it as JSON
    Derive(DeriveArgs),
    /// Simulate a robot model driven by a command trace
    Simulate(SimulateArgs),
    /// Calibrate wheel/yaw damping and the voltage coefficient with a GA
    Calibrate(CalibrateArgs),
    /// Simulate with fixed parameters and report trajectory error bounds
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model (msd, msd-undamped, hydromech, husky-simplified,
    /// husky-expanded) or a path to a graph description file
    #[arg(long)]
    model: String,
    /// Robot parameter file (TOML); for graph files a flat symbol map
    #[arg(long)]
    params: Option<PathBuf>,
    /// Chassis geometry file (TOML: r_w, a, b, c)
    #[arg(long)]
    geometry: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Also print the elemental, continuity and compatibility equations
    #[arg(long)]
    equations: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Command trace CSV (t,v_t,v_r[,...])
    #[arg(long)]
    trace: PathBuf,
    /// Integration step [s]
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Resample outputs onto the trace timestamps instead of the dt grid
    #[arg(long)]
    at_trace: bool,
    /// Write an SVG plot of the trajectory and output channels
    #[arg(long)]
    svg: bool,
    /// Also write a full data-trace CSV (commands + simulated measurements)
    #[arg(long)]
    export_trace: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Data trace CSV with reference x,y columns
    #[arg(long)]
    trace: PathBuf,
    /// Integration step [s]
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Population size
    #[arg(long, default_value_t = 100)]
    population: usize,
    /// Maximum number of generations
    #[arg(long, default_value_t = 100)]
    generations: usize,
    /// Crossover fraction
    #[arg(long, default_value_t = 0.5)]
    crossover: f64,
    /// Elite count
    #[arg(long, default_value_t = 2)]
    elite: usize,
    /// Generations without improvement before stopping
    #[arg(long, default_value_t = 25)]
    stall: usize,
    /// Wheel-damping search range, formatted lo:hi
    #[arg(long, default_value = "1:100", value_parser = parse_range)]
    bounds_b: (f64, f64),
    /// Yaw-damping search range, formatted lo:hi
    #[arg(long, default_value = "1:100", value_parser = parse_range)]
    bounds_bh: (f64, f64),
    /// Voltage-coefficient search range, formatted lo:hi
    #[arg(long, default_value = "0.75:1.0", value_parser = parse_range)]
    bounds_c: (f64, f64),
    /// Evaluate objectives serially instead of in parallel
    #[arg(long)]
    serial: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Data trace CSV with reference x,y columns
    #[arg(long)]
    trace: PathBuf,
    /// Integration step [s]
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("`{s}` is not a lo:hi range"))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad upper bound `{hi}`"))?;
    Ok((lo, hi))
}

/// An error carrying its process exit code; always printed as one line.
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn usage_from(e: impl fmt::Display) -> Self {
        CliError::usage(e.to_string())
    }

    fn data(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    fn numeric(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.to_string(),
        }
    }
}

fn main() {
    // Dying quietly on a closed pipe (`lgdyn ... | head`) beats a panic.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let text = e.to_string();
            let first_line = text.lines().next().unwrap_or("bad usage");
            eprintln!("lgdyn: {first_line}");
            std::process::exit(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Derive(args) => cmd_derive(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Validate(args) => cmd_validate(args),
    };
    if let Err(e) = result {
        eprintln!("lgdyn: {}", e.message);
        std::process::exit(e.code);
    }
}

/// A loaded/built model ready for derivation.
struct LoadedModel {
    graph: LinearGraph,
    outputs: OutputSpec,
    /// Numeric bindings for simulation, when parameters are available.
    env: Option<ParamEnv>,
    c_gain: f64,
    is_robot: bool,
}

fn load_model(args: &ModelArgs) -> Result<LoadedModel, CliError> {
    let (params, belt) = match &args.params {
        Some(path) if is_builtin(&args.model) => {
            let (p, b) = io::load_husky_params(path).map_err(CliError::data)?;
            p.validate().map_err(CliError::data)?;
            (p, b)
        }
        _ => (HuskyParams::default(), None),
    };
    let belt = belt.unwrap_or_default();
    let geom = match &args.geometry {
        Some(path) => {
            let g = io::load_geometry(path).map_err(CliError::data)?;
            g.validate().map_err(CliError::data)?;
            g
        }
        None => HuskyGeometry::default(),
    };

    match args.model.as_str() {
        "msd" => Ok(LoadedModel {
            graph: build_msd(),
            outputs: msd_output_spec(),
            env: None,
            c_gain: params.c_gain,
            is_robot: false,
        }),
        "msd-undamped" => Ok(LoadedModel {
            graph: build_msd_undamped(),
            outputs: msd_output_spec(),
            env: None,
            c_gain: params.c_gain,
            is_robot: false,
        }),
        "hydromech" => Ok(LoadedModel {
            graph: build_hydromech(),
            outputs: hydromech_output_spec(),
            env: None,
            c_gain: params.c_gain,
            is_robot: false,
        }),
        "husky-simplified" => Ok(LoadedModel {
            graph: build_husky_simplified(),
            outputs: husky_output_spec(),
            env: Some(husky_param_env(&params, &geom).map_err(CliError::data)?),
            c_gain: params.c_gain,
            is_robot: true,
        }),
        "husky-expanded" => Ok(LoadedModel {
            graph: build_husky_expanded(),
            outputs: husky_expanded_output_spec(),
            env: Some(husky_expanded_param_env(&params, &belt, &geom).map_err(CliError::data)?),
            c_gain: params.c_gain,
            is_robot: true,
        }),
        path => {
            let file = Path::new(path);
            if !file.exists() {
                return Err(CliError::usage(format!(
                    "`{path}` is neither a built-in model nor an existing graph file"
                )));
            }
            let (graph, outputs) = io::load_graph(file).map_err(CliError::data)?;
            let env = match &args.params {
                Some(p) => Some(io::load_param_env(p).map_err(CliError::data)?),
                None => None,
            };
            let c_gain = env.as_ref().and_then(|e| e.get("c")).unwrap_or(1.0);
            Ok(LoadedModel {
                graph,
                outputs,
                env,
                c_gain,
                is_robot: true,
            })
        }
    }
}

fn is_builtin(name: &str) -> bool {
    matches!(
        name,
        "msd" | "msd-undamped" | "hydromech" | "husky-simplified" | "husky-expanded"
    )
}

fn derive_checked(graph: &LinearGraph, outputs: &OutputSpec) -> Result<StateSpaceModel, CliError> {
    let report = validate_graph(graph);
    if !report.is_clean() {
        return Err(CliError::data(format!("invalid graph: {report}")));
    }
    let tree = select_normal_tree(graph).map_err(CliError::numeric)?;
    derive_state_space(graph, &tree, outputs).map_err(CliError::numeric)
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn cmd_derive(args: DeriveArgs) -> Result<(), CliError> {
    let loaded = load_model(&args.model)?;
    if args.equations {
        let tree = select_normal_tree(&loaded.graph).map_err(CliError::numeric)?;
        println!("tree branches: {}", tree.branches.join(", "));
        println!("tree links:    {}", tree.links.join(", "));
        if !tree.dependent_storage.is_empty() {
            println!("dependent storage: {}", tree.dependent_storage.join(", "));
        }
        println!("\nelemental equations:");
        for eq in elemental_equations(&loaded.graph) {
            println!("  {}", eq.display(&loaded.graph));
        }
        println!("\ncontinuity equations:");
        for eq in fundamental_cutsets(&loaded.graph, &tree) {
            println!(
                "  {}",
                EquationDisplay {
                    equation: &eq,
                    graph: &loaded.graph
                }
            );
        }
        println!("\ncompatibility equations:");
        for eq in fundamental_loops(&loaded.graph, &tree) {
            println!(
                "  {}",
                EquationDisplay {
                    equation: &eq,
                    graph: &loaded.graph
                }
            );
        }
        println!();
    }
    let model = derive_checked(&loaded.graph, &loaded.outputs)?;
    println!("{model}");
    ensure_out_dir(&args.out)?;
    let model_path = args.out.join("model.json");
    io::write_model_json(&model_path, &model).map_err(CliError::data)?;
    eprintln!("wrote {}", model_path.display());
    Ok(())
}

/// Derives and evaluates a robot model, then simulates the trace.
fn run_maneuver(
    loaded: &LoadedModel,
    trace_path: &Path,
    dt: f64,
) -> Result<(io::DataTrace, lgdyn::simulate::CommandTrace, SimResult), CliError> {
    if !loaded.is_robot {
        return Err(CliError::usage(
            "this model has no command-trace interface; use a robot model or a graph file",
        ));
    }
    let data = io::load_trace(trace_path).map_err(CliError::data)?;
    let trace = data.command_trace().map_err(CliError::data)?;
    let env = loaded
        .env
        .as_ref()
        .ok_or_else(|| CliError::usage("this model needs --params for simulation"))?;
    let model = derive_checked(&loaded.graph, &loaded.outputs)?;
    if model.num_inputs() != 2 || model.num_outputs() < 4 {
        return Err(CliError::data(
            "robot models need two voltage inputs and four output channels",
        ));
    }
    let numeric = evaluate_model(&model, env).map_err(CliError::data)?;
    let sim = simulate_maneuver(
        &numeric,
        loaded.c_gain,
        &trace,
        dt,
        2,
        3,
        &ManeuverOptions::default(),
    )
    .map_err(CliError::numeric)?;
    Ok((data, trace, sim))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let loaded = load_model(&args.model)?;
    let (data, trace, sim) = run_maneuver(&loaded, &args.trace, args.dt)?;
    ensure_out_dir(&args.out)?;

    let result = if args.at_trace {
        sim.resampled(&trace.times())
    } else {
        sim.clone()
    };
    let result_path = args.out.join("result.csv");
    io::write_result_csv(&result_path, &result).map_err(CliError::data)?;
    eprintln!("wrote {}", result_path.display());

    if args.export_trace {
        let at_trace = sim.resampled(&trace.times());
        let trace_path = args.out.join("trace_sim.csv");
        io::write_data_trace(&trace_path, &trace, &at_trace).map_err(CliError::data)?;
        eprintln!("wrote {}", trace_path.display());
    }
    if args.svg {
        let has_reference = data.x.is_some() || data.v.is_some() || data.omega_l.is_some();
        let svg = io::maneuver_svg(&sim, if has_reference { Some(&data) } else { None });
        let svg_path = args.out.join("plot.svg");
        std::fs::write(&svg_path, svg)
            .map_err(|e| CliError::data(format!("{}: {e}", svg_path.display())))?;
        eprintln!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    if !args.model.model.starts_with("husky") {
        return Err(CliError::usage(
            "calibrate supports the built-in robot models (husky-simplified, husky-expanded)",
        ));
    }
    let loaded = load_model(&args.model)?;
    let data = io::load_trace(&args.trace).map_err(CliError::data)?;
    if !data.has_xy() {
        return Err(CliError::data(format!(
            "{}: calibration needs reference x and y columns",
            args.trace.display()
        )));
    }
    let trace = data.command_trace().map_err(CliError::data)?;
    let model = derive_checked(&loaded.graph, &loaded.outputs)?;
    let problem = TrackingProblem {
        model: &model,
        base_env: loaded.env.clone().unwrap(),
        trace: &trace,
        ref_x: data.x.clone().unwrap(),
        ref_y: data.y.clone().unwrap(),
        dt: args.dt,
        v_channel: 2,
        omega_channel: 3,
    };
    let bounds = Bounds::new(
        vec![args.bounds_b.0, args.bounds_bh.0, args.bounds_c.0],
        vec![args.bounds_b.1, args.bounds_bh.1, args.bounds_c.1],
    )
    .map_err(CliError::usage_from)?;
    let config = GaConfig {
        population_size: args.population,
        max_generations: args.generations,
        crossover_fraction: args.crossover,
        elite_count: args.elite,
        stall_generations: args.stall,
        seed: args.seed,
        parallel_evaluations: !args.serial,
        ..GaConfig::default()
    };
    let result = run_ga(&config, &bounds, |genome| problem.objective(genome))
        .map_err(CliError::usage_from)?;

    println!(
        "best: B_common = {:.6}, B_H = {:.6}, c = {:.6}",
        result.best_params[0], result.best_params[1], result.best_params[2]
    );
    println!(
        "objective = {:.6e} after {} generations (seed {})",
        result.best_objective, result.generations_run, result.seed
    );
    ensure_out_dir(&args.out)?;
    let report = args.out.join("calibration.json");
    let history = args.out.join("ga_history.csv");
    io::write_calibration_report(&report, &history, &result, &bounds).map_err(CliError::data)?;
    eprintln!("wrote {} and {}", report.display(), history.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let loaded = load_model(&args.model)?;
    let data = io::load_trace(&args.trace).map_err(CliError::data)?;
    if !data.has_xy() {
        return Err(CliError::data(format!(
            "{}: validation needs reference x and y columns",
            args.trace.display()
        )));
    }
    let (_, trace, sim) = run_maneuver(&loaded, &args.trace, args.dt)?;
    let at_ref = sim.resampled(&trace.times());
    let sim_xy: Vec<(f64, f64)> = at_ref.poses.iter().map(|p| (p.x, p.y)).collect();
    let bounds =
        io::tracking_error_bounds(&sim_xy, data.x.as_ref().unwrap(), data.y.as_ref().unwrap());
    println!("{bounds}");
    ensure_out_dir(&args.out)?;
    let path = args.out.join("validation.json");
    let json = format!(
        "{{\n  \"max_abs_x\": {},\n  \"max_abs_y\": {}\n}}\n",
        bounds.max_abs_x, bounds.max_abs_y
    );
    std::fs::write(&path, json).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
