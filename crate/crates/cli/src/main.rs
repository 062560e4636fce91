use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dualmatch::algorithms::AlgorithmSpec;
use dualmatch::harness::{
    aggregate_table, diagnostics_table, dp_gap_output, recipe_batch_table, recipe_dp_gap, recipe_example41,
    recipe_impossibility, recipe_near_critical_ratio, recipe_shift_robustness, regret_summary_table, regret_table,
    results_table, run_experiment, sweep, BatchTableConfig, Example41Config, ExperimentConfig, Format,
    ImpossibilityConfig, NearCriticalConfig, RecipeName, RecipeOutput, ShiftRobustnessConfig, SweepGrid, Table,
};
use dualmatch::instances::{
    generate_path, load_trace, make_lower_bound_instance, make_uniform_single, save_trace, validate_instance,
    ArrivalGenerator, ArrivalSpec, LowerBound, Trace,
};
use dualmatch::offline::{dp_oracle_single_affiliate, solve_opt, solve_surrogate_primal};
use dualmatch::{Instance, SamplePath};

#[derive(Parser, Debug)]
#[command(name = "dualmatch", version, about = "Online matching with backlogged affiliates")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Number of sample paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Output directory; tables go to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Record per-period duals, backlogs and drift terms.
    #[arg(long, global = true)]
    diagnostics: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an instance file, and sampled traces with --trace.
    Gen(GenArgs),
    /// Run algorithms on an instance over several paths.
    Run(RunArgs),
    /// Run a grid over alpha, gamma, epsilon, T and step-size scalars.
    Sweep(SweepArgs),
    /// Solve the offline optimum or the surrogate primal on a trace.
    Offline(OfflineArgs),
    /// Run a named experiment.
    Recipe(RecipeArgs),
    /// Exact dynamic program for the single-affiliate lower-bound instance.
    Dp(DpArgs),
    /// Check an instance or trace file.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    UniformSingle,
    LbTiedFree,
    LbThreeReward,
    LbDeterministic,
    LbBernoulli,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Start from a built-in instance.
    #[arg(long, value_enum, conflicts_with = "instance")]
    preset: Option<Preset>,
    /// Start from an instance file.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Also write one sampled trace per path.
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct InstanceSource {
    /// Instance JSON file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Trace CSV; replaces the arrival source and sets T to its length.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Capacity ratio of every affiliate; without an instance file it
    /// defaults to 1/(m+1).
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct AlgoArgs {
    /// Algorithm name; repeat for several.
    #[arg(long = "algo", required = true)]
    algos: Vec<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

impl AlgoArgs {
    fn specs(&self) -> Vec<AlgorithmSpec> {
        self.algos
            .iter()
            .map(|name| AlgorithmSpec {
                name: name.clone(),
                eta: self.eta,
                zeta: self.zeta,
                k: self.k,
                replications: self.replications,
                pool_trace: self.pool.clone(),
                batch: self.batch,
                iterations: self.iterations,
            })
            .collect()
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: InstanceSource,
    #[command(flatten)]
    overrides: Overrides,
    #[command(flatten)]
    algos: AlgoArgs,
    /// Also solve the offline optimum on each path and report regret.
    #[arg(long)]
    regret: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    source: InstanceSource,
    /// Algorithm names; defaults to ca-dl.
    #[arg(long = "algo")]
    algos: Vec<String>,
    /// Values as `a..b` (integer steps), `a..b:step` or `x,y,z`.
    #[arg(long = "alpha")]
    alpha_grid: Option<String>,
    #[arg(long = "gamma")]
    gamma_grid: Option<String>,
    #[arg(long = "epsilon")]
    epsilon_grid: Option<String>,
    #[arg(long = "horizon")]
    horizon_grid: Option<String>,
    #[arg(long = "eta-scale")]
    eta_scale: Option<String>,
    #[arg(long = "zeta-scale")]
    zeta_scale: Option<String>,
    #[arg(long)]
    regret: bool,
}

#[derive(Args, Debug)]
struct OfflineArgs {
    #[command(flatten)]
    source: InstanceSource,
    #[command(flatten)]
    overrides: Overrides,
    /// Solve the backlog-free surrogate instead of the full program.
    #[arg(long)]
    surrogate: bool,
}

#[derive(Args, Debug)]
struct RecipeArgs {
    name: String,
    #[arg(long)]
    horizon: Option<usize>,
    /// Comma list of horizons.
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma list of backlog penalties.
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
}

#[derive(Args, Debug)]
struct DpArgs {
    /// Horizons as a list or range.
    #[arg(long, default_value = "100,400")]
    horizon: String,
    #[arg(long, default_value = "1,4")]
    gamma: String,
    /// Also write the per-period acceptance thresholds.
    #[arg(long)]
    thresholds: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Error raised by bad input rather than a failing run.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn is_config(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.downcast_ref::<ConfigError>().is_some()
            || cause.downcast_ref::<dualmatch::Error>().is_some_and(dualmatch::Error::is_config)
    })
}

/// Parses `a..b` (inclusive, unit steps), `a..b:step` or a comma list.
fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    let bad = || config_error(format!("cannot parse value list {text:?}"));
    if let Some((range, step)) = text.split_once("..").map(|(lo, rest)| {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
        ((lo.trim().to_string(), hi.trim().to_string()), step.trim().to_string())
    }) {
        let lo: f64 = range.0.parse().map_err(|_| bad())?;
        let hi: f64 = range.1.parse().map_err(|_| bad())?;
        let step: f64 = step.parse().map_err(|_| bad())?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|k| lo + k as f64 * step).collect());
    }
    text.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect()
}

fn parse_counts(text: &str) -> anyhow::Result<Vec<usize>> {
    parse_values(text)?
        .into_iter()
        .map(|v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(config_error(format!("{v} is not a whole number")))
            }
        })
        .collect()
}

fn read_instance(path: &Path) -> anyhow::Result<Instance> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut instance: Instance = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    if let ArrivalSpec::Trace { trace_path } = &mut instance.arrival {
        if trace_path.is_relative() {
            if let Some(dir) = path.parent() {
                *trace_path = dir.join(&*trace_path);
            }
        }
    }
    Ok(instance)
}

impl InstanceSource {
    fn resolve(&self, overrides: &Overrides) -> anyhow::Result<(Instance, Option<Trace>)> {
        let (mut instance, trace) = match (&self.instance, &self.trace) {
            (None, None) => bail!(config_error("give --instance or --trace")),
            (instance, Some(trace_path)) => {
                let trace = load_trace(trace_path).with_context(|| format!("loading {}", trace_path.display()))?;
                if trace.is_empty() {
                    bail!(config_error("trace has no rows"));
                }
                let mut instance = match instance {
                    Some(p) => read_instance(p)?,
                    None => {
                        let m = trace.arrivals[0].reward.len();
                        let rho = self.rho.unwrap_or(1.0 / (m as f64 + 1.0));
                        Instance::base(trace.len(), &vec![rho; m], 0.0, ArrivalSpec::UniformSingle {})
                    }
                };
                instance.arrival = ArrivalSpec::Trace {
                    trace_path: trace_path.clone(),
                };
                instance.horizon = trace.len();
                (instance, Some(trace))
            }
            (Some(p), None) => (read_instance(p)?, None),
        };
        if let Some(rho) = self.rho {
            instance.rho = dualmatch::Grid::filled(instance.m, instance.l, rho);
        }
        if let Some(a) = overrides.alpha {
            instance.alpha = a;
        }
        if let Some(g) = overrides.gamma {
            instance.gamma = g;
        }
        if let Some(e) = overrides.epsilon {
            instance.epsilon = e;
        }
        let report = validate_instance(&instance);
        if !report.is_ok() {
            bail!(config_error(format!("invalid instance: {}", report.errors.join("; "))));
        }
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        Ok((instance, trace))
    }
}

struct Sink {
    out: Option<PathBuf>,
    format: Format,
}

impl Sink {
    fn table(&self, table: &Table) -> anyhow::Result<()> {
        match &self.out {
            Some(dir) => {
                let path = table.save(dir, self.format)?;
                eprintln!("wrote {}", path.display());
            }
            None => match self.format {
                Format::Csv => {
                    println!("# {}", table.name);
                    table.write_csv(std::io::stdout().lock())?;
                }
                Format::Json => println!("{}", serde_json::to_string_pretty(&table.to_json())?),
            },
        }
        Ok(())
    }

    fn json(&self, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{name}.json"));
                std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
                eprintln!("wrote {}", path.display());
            }
            None => println!("{}", serde_json::to_string_pretty(value)?),
        }
        Ok(())
    }

    fn recipe(&self, output: &RecipeOutput) -> anyhow::Result<()> {
        for t in &output.tables {
            self.table(t)?;
        }
        self.json(&format!("{}_summary", output.name), &output.summary)
    }
}

fn gen(cli: &Cli, args: &GenArgs, sink: &Sink) -> anyhow::Result<()> {
    let horizon = args.horizon.unwrap_or(2000);
    let epsilon = args.epsilon.unwrap_or(0.1);
    let mut instance = match (&args.instance, args.preset) {
        (Some(p), _) => read_instance(p)?,
        (None, Some(Preset::UniformSingle)) | (None, None) => make_uniform_single(horizon, args.rho.unwrap_or(0.5), epsilon)?,
        (None, Some(preset)) => {
            let which = match preset {
                Preset::LbTiedFree => LowerBound::TiedFree,
                Preset::LbThreeReward => LowerBound::ThreeReward,
                Preset::LbDeterministic => LowerBound::AllOnes,
                _ => LowerBound::Bernoulli,
            };
            make_lower_bound_instance(which, horizon, epsilon)?
        }
    };
    if args.instance.is_some() {
        if let Some(t) = args.horizon {
            instance.horizon = t;
        }
        if let Some(e) = args.epsilon {
            instance.epsilon = e;
        }
    }
    if let Some(a) = args.alpha {
        instance.alpha = a;
    }
    if let Some(g) = args.gamma {
        instance.gamma = g;
    }
    let report = validate_instance(&instance);
    if !report.is_ok() {
        bail!(config_error(format!("invalid instance: {}", report.errors.join("; "))));
    }
    sink.json("instance", &serde_json::to_value(&instance)?)?;
    if args.trace {
        let Some(dir) = &sink.out else {
            bail!(config_error("--trace needs --out"));
        };
        let generator = ArrivalGenerator::from_instance(&instance)?;
        for p in 0..cli.paths.unwrap_or(1) as u64 {
            let path = generate_path(&instance, &generator, cli.seed, p)?;
            let file = dir.join(format!("trace_{p}.csv"));
            save_trace(&Trace::from_path(&path), &file)?;
            eprintln!("wrote {}", file.display());
        }
    }
    Ok(())
}

fn run(cli: &Cli, args: &RunArgs, sink: &Sink) -> anyhow::Result<()> {
    let (instance, _) = args.source.resolve(&args.overrides)?;
    let mut config = ExperimentConfig::new(instance, args.algos.specs(), cli.paths.unwrap_or(1), cli.seed);
    config.outputs.diagnostics = cli.diagnostics;
    config.check().map_err(|e| config_error(e.to_string()))?;
    let out = run_experiment(&config, args.regret)?;
    sink.table(&results_table(&out.runs))?;
    if sink.out.is_some() {
        sink.table(&aggregate_table(&out.runs))?;
    }
    if args.regret {
        sink.table(&regret_table(&out.regret))?;
        sink.table(&regret_summary_table(&out.regret))?;
    }
    if cli.diagnostics {
        sink.table(&diagnostics_table(&out.diagnostics))?;
    }
    Ok(())
}

fn do_sweep(cli: &Cli, args: &SweepArgs, sink: &Sink) -> anyhow::Result<()> {
    let (instance, _) = args.source.resolve(&Overrides::default())?;
    let names = if args.algos.is_empty() { vec!["ca-dl".to_string()] } else { args.algos.clone() };
    let specs = names.iter().map(|n| AlgorithmSpec::named(n)).collect();
    let config = ExperimentConfig::new(instance, specs, cli.paths.unwrap_or(1), cli.seed);
    config.check().map_err(|e| config_error(e.to_string()))?;
    let values = |v: &Option<String>| v.as_deref().map(parse_values).transpose().map(Option::unwrap_or_default);
    let grid = SweepGrid {
        alpha: values(&args.alpha_grid)?,
        gamma: values(&args.gamma_grid)?,
        epsilon: values(&args.epsilon_grid)?,
        horizon: args.horizon_grid.as_deref().map(parse_counts).transpose()?.unwrap_or_default(),
        eta_scale: values(&args.eta_scale)?,
        zeta_scale: values(&args.zeta_scale)?,
    };
    sink.table(&sweep(&config, &grid, args.regret)?)
}

fn offline(cli: &Cli, args: &OfflineArgs, sink: &Sink) -> anyhow::Result<()> {
    let (instance, _) = args.source.resolve(&args.overrides)?;
    let generator = ArrivalGenerator::from_instance(&instance)?;
    let path: SamplePath = generate_path(&instance, &generator, cli.seed, 0)?;
    if args.surrogate {
        let solution = solve_surrogate_primal(&instance, &path.arrivals)?;
        return sink.json("surrogate", &serde_json::to_value(&solution)?);
    }
    let solution = solve_opt(&instance, &path)?;
    sink.json(
        "objective",
        &serde_json::json!({
            "objective_value": solution.objective_value,
            "integral": solution.is_integral(1e-6),
            "T": instance.horizon,
            "alpha": instance.alpha,
            "gamma": instance.gamma,
        }),
    )?;
    match &solution.dual_certificate {
        Some(certificate) => sink.json("dual_certificate", &serde_json::to_value(certificate)?)?,
        None => eprintln!("no dual certificate: tied cases exceed a capacity or several resource types"),
    }
    Ok(())
}

fn recipe(cli: &Cli, args: &RecipeArgs, sink: &Sink) -> anyhow::Result<()> {
    let name = RecipeName::parse(&args.name).map_err(|e| config_error(e.to_string()))?;
    let horizons = args.horizons.as_deref().map(parse_counts).transpose()?;
    let gammas = args.gammas.as_deref().map(parse_values).transpose()?;
    let output = match name {
        RecipeName::Example41 => {
            let mut c = Example41Config {
                seed: cli.seed,
                ..Default::default()
            };
            c.horizon = args.horizon.unwrap_or(c.horizon);
            c.num_paths = cli.paths.unwrap_or(c.num_paths);
            c.k = args.k.unwrap_or(c.k);
            recipe_example41(&c)?.output()
        }
        RecipeName::NearCriticalRatio => {
            let mut c = NearCriticalConfig {
                seed: cli.seed,
                ..Default::default()
            };
            c.horizons = horizons.unwrap_or(c.horizons);
            c.num_paths = cli.paths.unwrap_or(c.num_paths);
            recipe_near_critical_ratio(&c)?.output()
        }
        RecipeName::Impossibility => {
            let mut c = ImpossibilityConfig {
                seed: cli.seed,
                ..Default::default()
            };
            c.horizon = args.horizon.unwrap_or(c.horizon);
            c.gamma = args.gamma.unwrap_or(c.gamma);
            c.epsilon = args.epsilon.unwrap_or(c.epsilon);
            c.num_paths = cli.paths.unwrap_or(c.num_paths);
            recipe_impossibility(&c)?.output()
        }
        RecipeName::BatchTable => {
            let mut c = BatchTableConfig {
                seed: cli.seed,
                ..Default::default()
            };
            c.horizon = args.horizon.unwrap_or(c.horizon);
            c.num_paths = cli.paths.unwrap_or(c.num_paths);
            c.batch = args.batch.unwrap_or(c.batch);
            c.iterations = args.iterations.unwrap_or(c.iterations);
            recipe_batch_table(&c)?.output()
        }
        RecipeName::ShiftRobustness => {
            let mut c = ShiftRobustnessConfig {
                seed: cli.seed,
                ..Default::default()
            };
            c.horizon = args.horizon.unwrap_or(c.horizon);
            c.num_paths = cli.paths.unwrap_or(c.num_paths);
            c.replications = args.replications.unwrap_or(c.replications);
            recipe_shift_robustness(&c)?.output()
        }
        RecipeName::DpGap => {
            let horizons = horizons.unwrap_or_else(|| vec![100, 200, 400, 800]);
            let gammas = gammas.unwrap_or_else(|| vec![1.0, 4.0]);
            dp_gap_output(&recipe_dp_gap(&horizons, &gammas)?)
        }
    };
    sink.recipe(&output)
}

fn dp(args: &DpArgs, sink: &Sink) -> anyhow::Result<()> {
    let horizons = parse_counts(&args.horizon)?;
    let gammas = parse_values(&args.gamma)?;
    sink.table(&dp_gap_output(&recipe_dp_gap(&horizons, &gammas)?).tables[0])?;
    if args.thresholds {
        let mut table = Table::new("dp_thresholds", &["T", "gamma", "t", "threshold"]);
        for &horizon in &horizons {
            for &gamma in &gammas {
                let dp = dp_oracle_single_affiliate(horizon, gamma)?;
                for (t, b) in dp.thresholds.iter().enumerate() {
                    table.push(vec![horizon.into(), gamma.into(), (t + 1).into(), (*b).into()]);
                }
            }
        }
        sink.table(&table)?;
    }
    Ok(())
}

fn validate(args: &ValidateArgs, sink: &Sink) -> anyhow::Result<()> {
    let mut errors = Vec::new();
    let mut report = serde_json::Map::new();
    if let Some(p) = &args.instance {
        match read_instance(p) {
            Ok(instance) => {
                let r = validate_instance(&instance);
                errors.extend(r.errors.iter().cloned());
                report.insert("instance".into(), serde_json::to_value(&r)?);
            }
            Err(e) => errors.push(format!("{e:#}")),
        }
    }
    if let Some(p) = &args.trace {
        match load_trace(p) {
            Ok(trace) => {
                report.insert("trace_rows".into(), trace.len().into());
            }
            Err(e) => errors.push(format!("{}: {e}", p.display())),
        }
    }
    if args.instance.is_none() && args.trace.is_none() {
        bail!(config_error("give --instance or --trace"));
    }
    report.insert("errors".into(), serde_json::to_value(&errors)?);
    sink.json("validation", &serde_json::Value::Object(report))?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(config_error(errors.join("\n")))
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let sink = Sink {
        out: cli.out.clone(),
        format: cli.format.into(),
    };
    if cli.paths == Some(0) {
        bail!(config_error("--paths must be at least 1"));
    }
    match &cli.command {
        Command::Gen(a) => gen(cli, a, &sink),
        Command::Run(a) => run(cli, a, &sink),
        Command::Sweep(a) => do_sweep(cli, a, &sink),
        Command::Offline(a) => offline(cli, a, &sink),
        Command::Recipe(a) => recipe(cli, a, &sink),
        Command::Dp(a) => dp(a, &sink),
        Command::Validate(a) => validate(a, &sink),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_config(&err) => {
            eprintln!("configuration error: {err:#}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error (seed {}): {err:#}", cli.seed);
            ExitCode::from(1)
        }
    }
}
