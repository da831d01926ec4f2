use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hpomdp_core::executive::{
    build_hierarchical_policy, execute_hierarchical_policy, Budgets, ExecutionRecord, SimulatedEnv,
};
use hpomdp_core::hierarchy::{Bundle, Hierarchy, HierarchyParams};
use hpomdp_core::kb::{parse_general, parse_specific, validate, KnowledgeBase};
use hpomdp_core::navbench::{
    generate_environment, run_experiment, table2, write_runs, write_summary, write_timings, EnvConfig,
    ExperimentParams, InitialBelief, Method,
};
use hpomdp_core::par::Execution;
use hpomdp_core::pomdp::Belief;
use hpomdp_core::seeds::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "hpomdp", version, about = "Knowledge-based hierarchical POMDP planner")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a knowledge base.
    Validate(KbArgs),
    /// Write the knowledge base of a generated navigation environment.
    Generate {
        #[arg(long, default_value = "2,2,2", value_parser = parse_dims)]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory for `general.kb` and `specific.kb`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground the knowledge base, build the hierarchy and save it as a bundle.
    Init {
        #[command(flatten)]
        kb: KbArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulations per abstract action.
        #[arg(long = "simulations", short = 'M')]
        simulations: Option<usize>,
    },
    /// Plan for a goal from a bundle and execute it in simulation.
    Solve {
        #[arg(long)]
        bundle: PathBuf,
        /// Leaf label, e.g. `c3_4`.
        #[arg(long)]
        goal: String,
        /// True start leaf; sampled from the seed when absent.
        #[arg(long)]
        start: Option<String>,
        /// Start from the uniform belief instead of knowing the start.
        #[arg(long)]
        uniform: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append the record to this file instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the navigation benchmark over the configuration table.
    Experiment {
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Master seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Seed of the generated worlds.
        #[arg(long, default_value_t = 7)]
        world_seed: u64,
        /// Experiment sets to run.
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3])]
        sets: Vec<u8>,
        /// Keep only rows with these kernel widths.
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<f64>,
        /// Keep only rows with these dimensions.
        #[arg(long, value_parser = parse_dims)]
        dims: Option<(usize, usize, usize)>,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
        methods: Vec<Method>,
        /// Output directory for `runs.csv`, `summary.csv` and `timings.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct KbArgs {
    #[arg(long)]
    general: PathBuf,
    #[arg(long)]
    specific: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Runtime(m) => m,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> =
        s.split([',', 'x']).map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three dimensions, got `{s}`")),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, text: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn load_kb(args: &KbArgs) -> Result<(String, String, KnowledgeBase), CliError> {
    let general = read(&args.general)?;
    let specific = read(&args.specific)?;
    let g = parse_general(&general)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.general.display())))?;
    let kb = parse_specific(&specific, &g)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.specific.display())))?;
    let report = validate(&kb);
    if !report.is_empty() {
        return Err(CliError::Validation(report.to_string()));
    }
    Ok((general, specific, kb))
}

fn cmd_validate(args: &KbArgs) -> Result<(), CliError> {
    let (_, _, kb) = load_kb(args)?;
    println!(
        "ok: {} variables, {} actions, {} basic modules",
        kb.variables.len(),
        kb.actions().count(),
        kb.basic_modules.len()
    );
    Ok(())
}

fn cmd_generate(dims: (usize, usize, usize), sigma: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let cfg = EnvConfig::new(dims, sigma, InitialBelief::KnownStart, seed);
    let (world, general, specific) =
        generate_environment(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    write(&out.join("general.kb"), general.as_bytes())?;
    write(&out.join("specific.kb"), specific.as_bytes())?;
    println!("{}x{} grid, {} cells, {} doors", world.width, world.height, world.n_cells(), world.doors.len());
    Ok(())
}

fn cmd_init(kb_args: &KbArgs, out: &Path, seed: u64, simulations: Option<usize>, execution: Execution) -> Result<(), CliError> {
    let (general, specific, kb) = load_kb(kb_args)?;
    let mut params = HierarchyParams { seed, execution, ..HierarchyParams::default() };
    if let Some(m) = simulations {
        params.simulations = m;
    }
    let t0 = Instant::now();
    let hierarchy = Hierarchy::from_kb(&kb, &params).map_err(runtime)?;
    let init_seconds = t0.elapsed().as_secs_f64();
    let abstract_levels = hierarchy.depth() - 1;
    write(out, Bundle { general, specific, hierarchy }.to_text().as_bytes())?;
    println!("abstract_levels={abstract_levels}");
    println!("init_seconds={init_seconds:.6}");
    Ok(())
}

/// Hop distance between leaves over the bottom neighbor relation.
fn leaf_distance(h: &Hierarchy, from: usize, to: usize) -> usize {
    let depth = h.depth();
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in h.neighbors.at(depth) {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(x) = queue.pop_front() {
        if x == to {
            return dist[&x];
        }
        for &n in adj.get(&x).into_iter().flatten() {
            if !dist.contains_key(&n) {
                dist.insert(n, dist[&x] + 1);
                queue.push_back(n);
            }
        }
    }
    usize::MAX
}

struct SolveArgs<'a> {
    bundle: &'a Path,
    goal: &'a str,
    start: Option<&'a str>,
    uniform: bool,
    seed: u64,
    out: Option<&'a Path>,
}

fn cmd_solve(args: SolveArgs, execution: Execution) -> Result<(), CliError> {
    let bundle = Bundle::from_text(&read(args.bundle)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.bundle.display())))?;
    let h = &bundle.hierarchy;
    let states = &h.bottom.pomdp.states;
    let leaf_index = |label: &str| {
        states.iter().position(|s| s == label).ok_or_else(|| CliError::Validation(format!("`{label}` is not a leaf")))
    };
    let goal = leaf_index(args.goal)?;
    let start = match args.start {
        Some(s) => leaf_index(s)?,
        None => ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[b"start"])).gen_range(0..states.len()),
    };
    let b0 = if args.uniform { Belief::uniform(states.len()) } else { Belief::delta(states.len(), start) };

    let t0 = Instant::now();
    let solver = h.params.solver.with_seed(derive_seed(args.seed, &[b"hp"]));
    let hp = build_hierarchical_policy(h.sst.leaf(goal), h, &solver, execution).map_err(runtime)?;
    let planning_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut env = SimulatedEnv::new(&h.bottom.pomdp, start, derive_seed(args.seed, &[b"env"]));
    let report =
        execute_hierarchical_policy(&hp, h, &b0, &mut env, Budgets::for_cells(states.len())).map_err(runtime)?;
    let execution_seconds = t1.elapsed().as_secs_f64();
    let fin = env.state();
    if let Some(reason) = &report.aborted {
        eprintln!("aborted: {reason}");
    }
    let record = ExecutionRecord {
        task_id: format!("{}->{}", states[start], states[goal]),
        seed: args.seed,
        success: report.completed && fin == goal,
        concrete_actions: report.concrete_actions,
        planning_seconds,
        execution_seconds,
        final_distance: leaf_distance(h, h.sst.leaf(fin), h.sst.leaf(goal)),
    };
    match args.out {
        Some(path) => {
            let fresh = !path.exists();
            let mut text = String::new();
            if fresh {
                text.push_str(ExecutionRecord::HEADER);
                text.push('\n');
            }
            text.push_str(&record.to_delimited());
            text.push('\n');
            append(path, &text)?;
        }
        None => {
            println!("{}", ExecutionRecord::HEADER);
            println!("{}", record.to_delimited());
        }
    }
    Ok(())
}

fn append(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

struct ExperimentArgs<'a> {
    runs: usize,
    seed: u64,
    world_seed: u64,
    sets: &'a [u8],
    sigma: &'a [f64],
    dims: Option<(usize, usize, usize)>,
    methods: &'a [Method],
    out: &'a Path,
}

fn cmd_experiment(args: ExperimentArgs, execution: Execution) -> Result<(), CliError> {
    let rows: Vec<_> = table2(args.world_seed)
        .into_iter()
        .filter(|r| args.sets.contains(&r.set))
        .filter(|r| args.sigma.is_empty() || args.sigma.iter().any(|s| (s - r.config.kernel_sigma).abs() < 1e-9))
        .filter(|r| args.dims.is_none_or(|d| r.config.dims() == d))
        .collect();
    if rows.is_empty() {
        return Err(CliError::Validation("no configuration matches the filters".into()));
    }
    let params = ExperimentParams { methods: args.methods.to_vec(), execution, ..ExperimentParams::new(args.runs, args.seed) };
    let results = run_experiment(&rows, &params).map_err(runtime)?;

    let mut runs = Vec::new();
    write_runs(&results, &mut runs).map_err(runtime)?;
    let mut summary = Vec::new();
    write_summary(&results, &mut summary).map_err(runtime)?;
    let mut timings = Vec::new();
    write_timings(&results, &mut timings).map_err(runtime)?;
    write(&args.out.join("runs.csv"), &runs)?;
    write(&args.out.join("summary.csv"), &summary)?;
    write(&args.out.join("timings.csv"), &timings)?;
    print!("{}", String::from_utf8_lossy(&summary));
    Ok(())
}

fn configure_jobs(jobs: Option<usize>) -> Result<Execution, CliError> {
    match jobs {
        Some(0) => Err(CliError::Validation("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
            Ok(Execution::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Execution::Sequential),
        None => Ok(Execution::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let execution = configure_jobs(cli.jobs)?;
    match &cli.command {
        Command::Validate(kb) => cmd_validate(kb),
        Command::Generate { dims, sigma, seed, out } => cmd_generate(*dims, *sigma, *seed, out),
        Command::Init { kb, out, seed, simulations } => cmd_init(kb, out, *seed, *simulations, execution),
        Command::Solve { bundle, goal, start, uniform, seed, out } => cmd_solve(
            SolveArgs {
                bundle,
                goal,
                start: start.as_deref(),
                uniform: *uniform,
                seed: *seed,
                out: out.as_deref(),
            },
            execution,
        ),
        Command::Experiment { runs, seed, world_seed, sets, sigma, dims, methods, out } => cmd_experiment(
            ExperimentArgs {
                runs: *runs,
                seed: *seed,
                world_seed: *world_seed,
                sets,
                sigma,
                dims: *dims,
                methods,
                out,
            },
            execution,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
