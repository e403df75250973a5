//! The `mirto` command line: run behaviors against the simulator or a real
//! robot, check protocol conformance and analyze traces.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use mirto::behaviors::{
    self, analytics, BangBangConfig, BehaviorError, ExploreConfig, FollowerMode, MonitorConfig, PidConfig, Trace,
};
use mirto::client::{open_session, ClientSession, SessionOptions};
use mirto::protocol;
use mirto::sim::{harness, world::bundled, EmulatorOptions, Pacing, SimConfig, WorldModel};
use mirto::transport::{TransportEndpoint, ENDPOINT_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "mirto",
    version,
    about = "Run MIRTO robot behaviors, analyze traces, check ASIP conformance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a behavior against the simulator or a robot.
    Run(RunArgs),
    /// Decode and re-encode every line of a corpus file.
    Conformance { corpus: PathBuf },
    /// Print a statistic computed from a trace CSV.
    Analyze(AnalyzeArgs),
    /// Serve the simulated robot on an endpoint until the client leaves.
    Emulate(EmulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sim,
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Behavior {
    Explore,
    Monitor,
    Bangbang,
    Pid,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// World file, or the name of a bundled world (box, straight, u-curve, oval).
    #[arg(long)]
    world: Option<String>,
    #[arg(long, value_enum)]
    behavior: Behavior,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run length in seconds.
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Controller override: kp, kd, ki, base-speed, threshold or setpoint.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Centre the PID proportional term on 2000 like the integral term.
    #[arg(long)]
    symmetric: bool,
    /// Device endpoint for serial mode (defaults to $MIRTO_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalyzeOp {
    SumIr,
    CountHigh,
    LapTime,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    #[arg(long, value_enum)]
    op: AnalyzeOp,
    #[arg(long)]
    threshold: Option<i64>,
    /// Track width for lap-time, taken from a world.
    #[arg(long)]
    world: Option<String>,
    /// Track width for lap-time, in meters.
    #[arg(long)]
    width: Option<f64>,
}

#[derive(Debug, Args)]
struct EmulateArgs {
    #[arg(long)]
    world: String,
    #[arg(long, default_value = "tcp:127.0.0.1:7878")]
    endpoint: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step only when the client asks instead of in real time.
    #[arg(long)]
    lockstep: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Contract(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Contract(_) => EXIT_CONTRACT,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<BehaviorError> for Failure {
    fn from(err: BehaviorError) -> Self {
        match (&err, err.contract_violation()) {
            (_, Some(v)) => Failure::Contract(v.to_string()),
            (BehaviorError::Usage(m), _) => Failure::Usage(m.clone()),
            _ => Failure::Runtime(err.to_string()),
        }
    }
}

fn runtime(err: impl std::fmt::Display) -> Failure {
    Failure::Runtime(err.to_string())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, &mut out),
        Command::Conformance { corpus } => cmd_conformance(&corpus, &mut out),
        Command::Analyze(args) => cmd_analyze(&args, &mut out),
        Command::Emulate(args) => cmd_emulate(&args, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            match &failure {
                Failure::Usage(m) => eprintln!("usage error: {m}"),
                Failure::Contract(m) => eprintln!("{m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            failure.code()
        }
    }
}

fn load_world(name: &str) -> Result<WorldModel, Failure> {
    let path = Path::new(name);
    if !path.exists() {
        if let Some(text) = bundled::get(name) {
            return WorldModel::parse(text).map_err(runtime);
        }
    }
    WorldModel::load(path).map_err(|e| Failure::Runtime(format!("{name}: {e}")))
}

fn apply_overrides(args: &RunArgs) -> Result<(BangBangConfig, PidConfig), Failure> {
    let mut bang = BangBangConfig::default();
    let mut pid = if args.symmetric {
        PidConfig::symmetric()
    } else {
        PidConfig::default()
    };
    for item in &args.overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(Failure::Usage(format!("override `{item}` is not KEY=VALUE")));
        };
        let number = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|n| n.is_finite())
                .ok_or_else(|| Failure::Usage(format!("override {key}: `{v}` is not a number")))
        };
        let integer = |v: &str| {
            v.parse::<i32>()
                .map_err(|_| Failure::Usage(format!("override {key}: `{v}` is not an integer")))
        };
        match key {
            "kp" => pid.kp = number(value)?,
            "kd" => pid.kd = number(value)?,
            "ki" => pid.ki = number(value)?,
            "setpoint" => pid.setpoint = number(value)?,
            "base-speed" => pid.base_speed = integer(value)?,
            "threshold" => {
                let t = integer(value)?;
                if !(1..100).contains(&t) {
                    return Err(Failure::Usage("threshold must be within 1..=99".into()));
                }
                bang.threshold = t;
                pid.threshold = t;
            }
            other => return Err(Failure::Usage(format!("unknown override `{other}`"))),
        }
    }
    pid.validate()?;
    Ok((bang, pid))
}

fn run_behavior(
    session: &mut ClientSession,
    args: &RunArgs,
    bang: BangBangConfig,
    pid: PidConfig,
    out: &mut dyn Write,
) -> Result<Trace, Failure> {
    let trace = match args.behavior {
        Behavior::Explore => {
            let config = ExploreConfig {
                rng_seed: args.seed,
                ..ExploreConfig::default()
            };
            let outcome = behaviors::run_explore(session, &config, args.duration)?;
            writeln!(out, "explore: {} bumps", outcome.maneuvers.len()).map_err(runtime)?;
            outcome.trace
        }
        Behavior::Monitor => {
            let config = MonitorConfig {
                duration: Some(args.duration),
                ..MonitorConfig::default()
            };
            let mut write_error = None;
            let outcome = behaviors::run_monitor(session, &config, |event| {
                if let Err(e) = writeln!(out, "{event}") {
                    write_error.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_error {
                return Err(runtime(e));
            }
            outcome.trace
        }
        Behavior::Bangbang | Behavior::Pid => {
            let mode = if args.behavior == Behavior::Pid {
                FollowerMode::Pid(pid)
            } else {
                FollowerMode::BangBang(bang)
            };
            let outcome = behaviors::run_line_follower(session, &mode, args.duration)?;
            writeln!(
                out,
                "line follower: {:?} after {} ticks",
                outcome.result,
                outcome.trace.len()
            )
            .map_err(runtime)?;
            outcome.trace
        }
    };
    Ok(trace)
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(Failure::Usage("--duration must be a positive number of seconds".into()));
    }
    let (bang, pid) = apply_overrides(args)?;
    let trace = match args.mode {
        Mode::Sim => {
            let Some(world) = &args.world else {
                return Err(Failure::Usage("--mode sim needs --world".into()));
            };
            let world = load_world(world)?;
            let config = SimConfig {
                rng_seed: args.seed,
                ..SimConfig::default()
            };
            let (mut session, handle) = harness::spawn(world, config, EmulatorOptions::default()).map_err(runtime)?;
            let result = run_behavior(&mut session, args, bang, pid, out);
            handle.finish(session).map_err(runtime)?;
            result?
        }
        Mode::Serial => {
            let endpoint = match &args.endpoint {
                Some(text) => TransportEndpoint::parse(text),
                None => TransportEndpoint::from_env()
                    .ok_or_else(|| Failure::Usage(format!("serial mode needs --endpoint or {ENDPOINT_ENV}")))?,
            }
            .map_err(|e| Failure::Usage(e.to_string()))?;
            let mut session = open_session(&endpoint, SessionOptions::default()).map_err(runtime)?;
            let result = run_behavior(&mut session, args, bang, pid, out);
            session.close();
            result?
        }
    };
    if let Some(path) = &args.trace {
        let file = File::create(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        trace.write_csv(BufWriter::new(file))?;
    }
    Ok(EXIT_OK)
}

fn cmd_conformance(corpus: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = File::open(corpus).map_err(|e| Failure::Runtime(format!("{}: {e}", corpus.display())))?;
    let mut checked = 0;
    let mut mismatches = 0;
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(runtime)?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        checked += 1;
        let n = index + 1;
        let problem = match protocol::decode(line) {
            Err(e) => Some(format!("decode failed: {e}")),
            Ok(msg) => match protocol::encode(&msg) {
                Err(e) => Some(format!("encode failed: {e}")),
                Ok(again) if again != line => Some(format!("re-encodes as `{again}`")),
                Ok(_) => None,
            },
        };
        if let Some(problem) = problem {
            mismatches += 1;
            writeln!(out, "line {n}: `{line}`: {problem}").map_err(runtime)?;
        }
    }
    if checked == 0 {
        warn!("corpus {} has no messages", corpus.display());
        eprintln!("warning: corpus {} has no messages", corpus.display());
    }
    writeln!(out, "{checked} checked, {mismatches} mismatched").map_err(runtime)?;
    Ok(if mismatches == 0 { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let width = match (args.op, args.width, &args.world) {
        (AnalyzeOp::LapTime, Some(w), _) if w > 0.0 => Some(w),
        (AnalyzeOp::LapTime, Some(_), _) => return Err(Failure::Usage("--width must be positive".into())),
        (AnalyzeOp::LapTime, None, Some(world)) => match load_world(world)?.track {
            Some(track) => Some(track.width()),
            None => return Err(Failure::Usage(format!("world {world} has no track"))),
        },
        (AnalyzeOp::LapTime, None, None) => return Err(Failure::Usage("lap-time needs --width or --world".into())),
        _ => None,
    };
    let file = File::open(&args.trace).map_err(|e| Failure::Runtime(format!("{}: {e}", args.trace.display())))?;
    let trace = Trace::read_csv(BufReader::new(file))?;
    let report = match args.op {
        AnalyzeOp::SumIr => {
            let log: Vec<i64> = trace.records.iter().map(|r| i64::from(r.ir[1])).collect();
            analytics::sum_ir_greater_than(args.threshold.unwrap_or(45), &log).to_string()
        }
        AnalyzeOp::CountHigh => analytics::count_high_corrections(&trace, args.threshold.unwrap_or(0)).to_string(),
        AnalyzeOp::LapTime => match analytics::lap_time(&trace, width.unwrap_or_default()) {
            Some(t_ms) => t_ms.to_string(),
            None => "none".to_string(),
        },
    };
    writeln!(out, "{report}").map_err(runtime)?;
    Ok(EXIT_OK)
}

fn cmd_emulate(args: &EmulateArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let world = load_world(&args.world)?;
    let endpoint = TransportEndpoint::parse(&args.endpoint).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = SimConfig {
        rng_seed: args.seed,
        ..SimConfig::default()
    };
    let options = EmulatorOptions {
        pacing: if args.lockstep {
            Pacing::Lockstep
        } else {
            Pacing::RealTime
        },
        ..EmulatorOptions::default()
    };
    writeln!(out, "serving {} on {endpoint}", args.world).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    let report = mirto::sim::run_emulator(&endpoint, world, config, options).map_err(runtime)?;
    let pose = report.final_state.pose;
    writeln!(
        out,
        "client left after {} steps; final pose {:.3} {:.3} {:.3}",
        report.steps, pose.x, pose.y, pose.theta
    )
    .map_err(runtime)?;
    Ok(EXIT_OK)
}
