use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;

use commwatch::detect::{Detector, DetectorConfig};
use commwatch::graph::{sample_snapshot, ScenarioFile, StreamRecord};
use commwatch::harness::{
    calibrate_threshold_mc, estimate_delay, freeze_settings, write_rows, CalibrationOptions,
    ExperimentSpec, FrozenSettings, Reproducer, TableOptions,
};
use commwatch::theory::{
    arl_lower_bound, arl_upper_bound, threshold_for_arl, upper_bound_profile, BoundKind,
    TheoryParams,
};
use commwatch::{Error, GraphSnapshot, ScenarioSpec};

const SEED_ENV: &str = "COMMWATCH_SEED";

#[derive(Parser)]
#[command(name = "commwatch", version, about = "Online detection of an emerging community in a graph stream")]
struct Cli {
    /// Worker threads for Monte Carlo work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the leading comment line with version and timestamp from CSV output.
    #[arg(long, global = true)]
    no_banner: bool,
    /// Repeat for more log output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a snapshot stream from a scenario file into JSON Lines.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        steps: u64,
        /// Output file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a detector over a stream file or a simulated scenario.
    Detect(DetectArgs),
    /// Find the threshold giving a target run length by simulation.
    CalibrateMc {
        detector: PathBuf,
        #[arg(long)]
        n_nodes: usize,
        #[arg(long)]
        target_arl: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        initial_trials: usize,
        #[arg(long, default_value_t = 2000)]
        max_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average-run-length bounds, or the threshold for a target run length.
    Theory {
        params: PathBuf,
        /// Invert the chosen bound for this run length instead of evaluating at `b`.
        #[arg(long)]
        target_arl: Option<f64>,
        #[arg(long, value_enum, default_value_t = BoundArg::Lower)]
        bound: BoundArg,
        /// Directory for per-window lower-bound terms and upper-bound integrand samples.
        #[arg(long)]
        dump_profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        profile_points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the detection delay of a detector on a changing scenario.
    Delay {
        scenario: PathBuf,
        detector: PathBuf,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 250_000)]
        max_t: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a scripted comparison (tables 2 to 5) and write its CSV.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct DetectArgs {
    detector: PathBuf,
    /// JSON Lines stream, as written by `simulate`.
    #[arg(long, conflicts_with = "scenario", requires = "n_nodes")]
    stream: Option<PathBuf>,
    /// Node count of `--stream`.
    #[arg(long)]
    n_nodes: Option<usize>,
    /// Simulate the stream from this scenario file instead.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Snapshots to simulate with `--scenario`.
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..=5), required_unless_present = "freeze_settings")]
    table: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Settings file (defaults to the committed one).
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Run the weight and size-parameter selection and write the settings here.
    #[arg(long, conflicts_with = "table")]
    freeze_settings: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    arl_trials: usize,
    #[arg(long, default_value_t = 2000)]
    delay_trials: usize,
    #[arg(long, default_value_t = 2000)]
    calibration_max_trials: usize,
    #[arg(long, default_value_t = 20_160_101)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Lower,
    Upper,
}

/// A failure together with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_ALARM: u8 = 3;
const EXIT_NO_ROOT: u8 = 4;

impl Failure {
    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_IO,
            error: error.into(),
        }
    }
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoRoot { .. } | Error::RootBracket(_) | Error::BoundUndefined(_) => EXIT_NO_ROOT,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::io(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<u8> {
    let out = Output {
        banner: !cli.no_banner,
    };
    match &cli.command {
        Command::Simulate {
            scenario,
            steps,
            out: path,
        } => simulate(scenario, *steps, path.as_deref()),
        Command::Detect(args) => detect(args, &out),
        Command::CalibrateMc {
            detector,
            n_nodes,
            target_arl,
            tol,
            initial_trials,
            max_trials,
            seed,
            out: path,
        } => {
            let cfg: DetectorConfig = read_json(detector)?;
            let scenario = ScenarioSpec::null(*n_nodes, cfg.p0)?;
            let opts = CalibrationOptions {
                tol: *tol,
                initial_trials: *initial_trials,
                max_trials: *max_trials,
                base_seed: seed_override().unwrap_or(*seed),
                ..Default::default()
            };
            let r = calibrate_threshold_mc(&scenario, &cfg, *target_arl, &opts)?;
            let mut w = out.open(path.as_deref())?;
            writeln!(w, "threshold,target_arl,arl,se,n_trials,n_censored")?;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.threshold, r.target_arl, r.arl.estimate, r.arl.std_error, r.arl.n_trials, r.arl.n_censored
            )?;
            w.flush()?;
            Ok(0)
        }
        Command::Theory {
            params,
            target_arl,
            bound,
            dump_profiles,
            profile_points,
            out: path,
        } => theory(params, *target_arl, *bound, dump_profiles.as_deref(), *profile_points, path.as_deref(), &out),
        Command::Delay {
            scenario,
            detector,
            trials,
            max_t,
            out: path,
        } => {
            let file: ScenarioFile = read_json(scenario)?;
            let spec = file.to_spec()?;
            let cfg: DetectorConfig = read_json(detector)?;
            let seed = seed_override().unwrap_or(file.seed);
            let exp = ExperimentSpec::new(spec, cfg, *trials, *max_t).with_seed(seed);
            let r = estimate_delay(&exp)?;
            let mut w = out.open(path.as_deref())?;
            writeln!(w, "delay,se,n_trials,n_censored,n_false_alarms")?;
            writeln!(
                w,
                "{},{},{},{},{}",
                r.estimate, r.std_error, r.n_trials, r.n_censored, r.n_false_alarms
            )?;
            w.flush()?;
            Ok(0)
        }
        Command::Reproduce(args) => reproduce(args, &out),
    }
}

fn seed_override() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|v| v.trim().parse().ok())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::io)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(Failure::config)
}

struct Output {
    banner: bool,
}

impl Output {
    /// Opens `path` (or stdout) for CSV output, writing the banner comment first.
    fn open(&self, path: Option<&Path>) -> CliResult<Box<dyn Write>> {
        let mut w = open_writer(path)?;
        if self.banner {
            let now = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            writeln!(w, "# commwatch {} unix_time={now}", env!("CARGO_PKG_VERSION"))?;
        }
        Ok(w)
    }
}

fn open_writer(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(Failure::io)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(scenario: &Path, steps: u64, out: Option<&Path>) -> CliResult<u8> {
    let file: ScenarioFile = read_json(scenario)?;
    let spec = file.to_spec()?;
    let seed = seed_override().unwrap_or(file.seed);
    let mut w = open_writer(out)?;
    for t in 1..=steps {
        let g = sample_snapshot(&spec, t, seed);
        let line = serde_json::to_string(&StreamRecord::from_snapshot(t, &g)).map_err(Failure::io)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(0)
}

fn detect(args: &DetectArgs, out: &Output) -> CliResult<u8> {
    let cfg: DetectorConfig = read_json(&args.detector)?;
    let snapshots: Box<dyn Iterator<Item = CliResult<GraphSnapshot>>>;
    let n_nodes;
    if let Some(path) = &args.stream {
        n_nodes = args.n_nodes.expect("clap requires n_nodes");
        let reader = BufReader::new(
            File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .map_err(Failure::io)?,
        );
        snapshots = Box::new(reader.lines().enumerate().filter_map(move |(i, line)| {
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Failure::io(e))),
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(
                serde_json::from_str::<StreamRecord>(&line)
                    .with_context(|| format!("stream line {}", i + 1))
                    .map_err(Failure::config)
                    .and_then(|r| r.to_snapshot(n_nodes).map_err(Failure::from)),
            )
        }));
    } else if let Some(path) = &args.scenario {
        let file: ScenarioFile = read_json(path)?;
        let spec = file.to_spec()?;
        n_nodes = spec.n_nodes();
        if let Some(n) = args.n_nodes {
            if n != n_nodes {
                return Err(Failure::config(anyhow!(
                    "--n-nodes {n} disagrees with the scenario's {n_nodes} nodes"
                )));
            }
        }
        let seed = seed_override().unwrap_or(file.seed);
        let steps = args.steps;
        snapshots = Box::new((1..=steps).map(move |t| Ok(sample_snapshot(&spec, t, seed))));
    } else {
        return Err(Failure::config(anyhow!("give --stream or --scenario")));
    }
    let mut det = cfg.build(n_nodes)?;
    let mut w = out.open(args.out.as_deref())?;
    writeln!(w, "t,statistic,argmax_k,alarmed,localized_set")?;
    for g in snapshots {
        let r = det.step(&g?)?;
        let set = r
            .localized_set
            .as_ref()
            .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let k = r.argmax_k.map(|k| k.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.t, r.statistic, k, r.alarmed, set)?;
        if r.alarmed {
            w.flush()?;
            eprintln!("alarm at t = {} (statistic {}, set [{set}])", r.t, r.statistic);
            return Ok(0);
        }
    }
    w.flush()?;
    eprintln!("no alarm in {} snapshots", det.t());
    Ok(EXIT_NO_ALARM)
}

fn theory(
    params: &Path,
    target_arl: Option<f64>,
    bound: BoundArg,
    dump: Option<&Path>,
    points: usize,
    path: Option<&Path>,
    out: &Output,
) -> CliResult<u8> {
    let mut value: serde_json::Value = read_json(params)?;
    if target_arl.is_some() {
        // b is solved for; a placeholder keeps the schema satisfied
        if let Some(obj) = value.as_object_mut() {
            obj.entry("b").or_insert(serde_json::json!(1.0));
        }
    }
    let mut p: TheoryParams = serde_json::from_value(value)
        .with_context(|| format!("invalid config {}", params.display()))
        .map_err(Failure::config)?;
    p.validate()?;
    if let Some(target) = target_arl {
        let which = match bound {
            BoundArg::Lower => BoundKind::Lower,
            BoundArg::Upper => BoundKind::Upper,
        };
        p.b = threshold_for_arl(&p, target, which)?;
        info!("threshold for run length {target}: {}", p.b);
    }
    let lb = arl_lower_bound(&p)?;
    let ub = arl_upper_bound(&p)?;
    let mut w = out.open(path)?;
    writeln!(w, "b,n_effective,arl_lower,arl_upper,skipped_windows")?;
    writeln!(w, "{},{},{},{},{}", p.b, p.n_eff(), lb.arl, ub, lb.skipped.len())?;
    w.flush()?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::io)?;
        let mut lw = out.open(Some(&dir.join("lower_terms.csv")))?;
        writeln!(lw, "tau,theta,gamma,h,log_h,term")?;
        for t in &lb.terms {
            writeln!(lw, "{},{},{},{},{},{}", t.tau, t.theta, t.gamma, t.log_h.exp(), t.log_h, t.term)?;
        }
        lw.flush()?;
        let mut uw = out.open(Some(&dir.join("upper_integrand.csv")))?;
        writeln!(uw, "y,tau,integrand")?;
        for s in upper_bound_profile(&p, points.max(2))? {
            writeln!(uw, "{},{},{}", s.y, s.tau, s.integrand)?;
        }
        uw.flush()?;
    }
    Ok(0)
}

fn reproduce(args: &ReproduceArgs, out: &Output) -> CliResult<u8> {
    let seed = seed_override().unwrap_or(args.seed);
    if let Some(path) = &args.freeze_settings {
        let settings = freeze_settings(args.arl_trials, seed)?;
        std::fs::write(path, settings.to_json() + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::io)?;
        return Ok(0);
    }
    let settings = match &args.settings {
        Some(p) => FrozenSettings::load(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::config)?,
        None => FrozenSettings::committed(),
    };
    let opts = TableOptions {
        settings,
        arl_trials: args.arl_trials,
        delay_trials: args.delay_trials,
        calibration: CalibrationOptions {
            max_trials: args.calibration_max_trials,
            initial_trials: args.calibration_max_trials.min(500),
            ..Default::default()
        },
        base_seed: seed,
    };
    let table = args.table.expect("clap requires table");
    let rows = Reproducer::new(opts)?.table(table)?;
    let mut w = out.open(args.out.as_deref())?;
    write_rows(&mut w, &rows).map_err(Failure::io)?;
    w.flush()?;
    Ok(0)
}
