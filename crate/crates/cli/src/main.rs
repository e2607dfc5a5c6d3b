use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use roundsafe::bench::{run_grid, write_csv, BenchGrid, BenchModel};
use roundsafe::hexfloat::to_hex;
use roundsafe::model::parse_rational;
use roundsafe::oracle::DEFAULT_SCHEDULER_LIMIT;
use roundsafe::pctl::parse_property;
use roundsafe::{
    build_counterexample, evaluate, exact_reachability, parse_model, serialize_model, solve, Mdp,
    Opt, Precision, Query, Rational, SolveConfig, SolveResult, Strategy, Variant, Verdict,
};

/// Exit code for usage, parse and runtime errors.
const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "roundsafe", version, about = "Sound MDP reachability with safely rounded interval iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide a property `P~c [ F "label" ]`; exit 0 = true, 1 = false, 2 = unknown.
    Check {
        model: PathBuf,
        property: String,
        #[command(flatten)]
        solver: SolverArgs,
        /// On an unknown verdict, retry once with epsilon/100.
        #[arg(long)]
        refine: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Compute an interval for the max or min probability of reaching a label.
    Solve {
        model: PathBuf,
        label: String,
        #[arg(long, value_enum, default_value_t = OptArg::Max)]
        opt: OptArg,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print the counterexample model with chain length `n` and parameter `gamma`.
    Gen { n: usize, gamma: String },
    /// Benchmark variants, rounding strategies and precisions; writes CSV.
    Bench {
        #[arg(required = true)]
        models: Vec<PathBuf>,
        /// Goal label, looked up in every model.
        #[arg(long, default_value = "goal")]
        goal: String,
        #[arg(long, value_enum, default_value_t = OptArg::Max)]
        opt: OptArg,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Alg::Iii, Alg::Sii, Alg::SrIii, Alg::SrSii])]
        alg: Vec<Alg>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Rounding::Hardware, Rounding::Nudge])]
        rounding: Vec<Rounding>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PrecisionArg::Double, PrecisionArg::Single])]
        precision: Vec<PrecisionArg>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value = "1/1000000", value_parser = rational_arg)]
        epsilon: Rational,
        #[arg(long, default_value_t = roundsafe::iteration::DEFAULT_MAX_SWEEPS)]
        max_sweeps: u64,
        #[arg(long)]
        check_all_states: bool,
        /// Per-run limit in seconds; exceeded runs are marked TO.
        #[arg(long)]
        timeout: Option<f64>,
        /// Write CSV here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Exact probability by scheduler enumeration, printed as num/den.
    Oracle {
        model: PathBuf,
        label: String,
        #[arg(long, value_enum, default_value_t = OptArg::Max)]
        opt: OptArg,
        /// Refuse models with more memoryless schedulers than this.
        #[arg(long, default_value_t = DEFAULT_SCHEDULER_LIMIT)]
        limit: u128,
    },
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Alg::SrSii)]
    alg: Alg,
    #[arg(long, default_value = "1/1000000", value_parser = rational_arg)]
    epsilon: Rational,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Double)]
    precision: PrecisionArg,
    #[arg(long, value_enum, default_value_t = Rounding::Hardware)]
    rounding: Rounding,
    /// Require convergence at every state (always on for `check`).
    #[arg(long)]
    check_all_states: bool,
    #[arg(long, default_value_t = roundsafe::iteration::DEFAULT_MAX_SWEEPS)]
    max_sweeps: u64,
    /// Stop iterating after this many seconds; bounds stay sound.
    #[arg(long)]
    timeout: Option<f64>,
}

impl SolverArgs {
    fn config(&self, all_states: bool) -> Result<SolveConfig> {
        Ok(SolveConfig {
            variant: self.alg.into(),
            epsilon: self.epsilon.clone(),
            precision: self.precision.into(),
            strategy: self.rounding.into(),
            max_sweeps: self.max_sweeps,
            check_all_states: all_states || self.check_all_states,
            deadline: self.timeout.map(seconds).transpose()?.map(|d| Instant::now() + d),
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alg {
    Iii,
    Sii,
    SrIii,
    SrSii,
}

impl From<Alg> for Variant {
    fn from(a: Alg) -> Self {
        match a {
            Alg::Iii => Variant::Iii,
            Alg::Sii => Variant::Sii,
            Alg::SrIii => Variant::SrIii,
            Alg::SrSii => Variant::SrSii,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Rounding {
    Hardware,
    Nudge,
}

impl From<Rounding> for Strategy {
    fn from(r: Rounding) -> Self {
        match r {
            Rounding::Hardware => Strategy::HardwareMode,
            Rounding::Nudge => Strategy::Nudge,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptArg {
    Max,
    Min,
}

impl From<OptArg> for Opt {
    fn from(o: OptArg) -> Self {
        match o {
            OptArg::Max => Opt::Max,
            OptArg::Min => Opt::Min,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    /// One JSON object.
    Structured,
}

fn rational_arg(s: &str) -> Result<Rational, String> {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
        return parse_rational(&format!("{s}/1"));
    }
    parse_rational(s)
}

fn seconds(s: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("invalid timeout {s}"))
}

fn load(path: &Path) -> Result<Mdp> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_model(&text).with_context(|| format!("loading {}", path.display()))
}

#[derive(Serialize)]
struct RunReport {
    model: String,
    property: String,
    verdict: Option<String>,
    lower_hex: String,
    upper_hex: String,
    lower: f64,
    upper: f64,
    /// Midpoint of the interval, only for unsafe variants.
    midpoint: Option<f64>,
    warning: Option<String>,
    variant: String,
    precision: String,
    strategy: String,
    strategy_fallback: bool,
    epsilon: String,
    sweeps: u64,
    termination: String,
    stalled: bool,
    mode_switches: u64,
    refined: bool,
    iteration_time_s: f64,
    wall_time_s: f64,
}

const UNSAFE_WARNING: &str =
    "unsafe variant: floating-point rounding is not controlled, so neither the interval nor the midpoint is guaranteed";

impl RunReport {
    fn new(model: &Path, property: String, cfg: &SolveConfig, r: &SolveResult, wall: Duration) -> Self {
        let safe = cfg.variant.is_safe();
        RunReport {
            model: model.display().to_string(),
            property,
            verdict: None,
            lower_hex: to_hex(r.lower),
            upper_hex: to_hex(r.upper),
            lower: r.lower,
            upper: r.upper,
            midpoint: (!safe).then(|| r.lower + (r.upper - r.lower) / 2.0),
            warning: (!safe).then(|| UNSAFE_WARNING.to_string()),
            variant: cfg.variant.name().to_string(),
            precision: cfg.precision.to_string(),
            strategy: r.strategy.to_string(),
            strategy_fallback: r.strategy_fallback,
            epsilon: cfg.epsilon.to_string(),
            sweeps: r.sweeps,
            termination: r.termination.name().to_string(),
            stalled: r.stalled(),
            mode_switches: r.mode_switches,
            refined: false,
            iteration_time_s: r.iteration_time.as_secs_f64(),
            wall_time_s: wall.as_secs_f64(),
        }
    }

    fn print(&self, format: Format) -> Result<()> {
        let mut out = io::stdout().lock();
        if format == Format::Structured {
            serde_json::to_writer_pretty(&mut out, self)?;
            writeln!(out)?;
            return Ok(());
        }
        writeln!(out, "model:       {}", self.model)?;
        writeln!(out, "property:    {}", self.property)?;
        if let Some(v) = &self.verdict {
            writeln!(out, "verdict:     {v}")?;
        }
        writeln!(out, "lower:       {} ({})", self.lower_hex, self.lower)?;
        writeln!(out, "upper:       {} ({})", self.upper_hex, self.upper)?;
        if let Some(mid) = self.midpoint {
            writeln!(out, "midpoint:    {} ({mid})", to_hex(mid))?;
        }
        writeln!(
            out,
            "algorithm:   {} ({}, {}{}), epsilon {}",
            self.variant,
            self.precision,
            self.strategy,
            if self.strategy_fallback { ", fallback" } else { "" },
            self.epsilon
        )?;
        writeln!(out, "sweeps:      {} ({})", self.sweeps, self.termination)?;
        writeln!(out, "stalled:     {}", self.stalled)?;
        writeln!(out, "mode sw.:    {}", self.mode_switches)?;
        if self.refined {
            writeln!(out, "refined:     epsilon reduced once after an unknown verdict")?;
        }
        writeln!(out, "iteration:   {:.6} s", self.iteration_time_s)?;
        writeln!(out, "wall time:   {:.6} s", self.wall_time_s)?;
        if let Some(w) = &self.warning {
            writeln!(out, "warning:     {w}")?;
        }
        Ok(())
    }
}

fn cmd_check(model: &Path, property: &str, solver: &SolverArgs, refine: bool, format: Format) -> Result<u8> {
    let started = Instant::now();
    let m = load(model)?;
    let prop = parse_property(property).with_context(|| format!("parsing property {property:?}"))?;
    let Query::Threshold(cmp, c) = &prop.query else {
        bail!("`check` needs a comparison `P~c`; use `solve` for value queries");
    };
    let goal = m.label(&prop.goal_label)?;
    let mut cfg = solver.config(true)?;
    let mut r = solve(&m, goal, prop.opt, &cfg)?;
    let mut verdict = evaluate(r.lower, r.upper, *cmp, c);
    let mut refined = false;
    if verdict == Verdict::Unknown && refine {
        cfg.epsilon /= Rational::from_integer(100.into());
        r = solve(&m, goal, prop.opt, &cfg)?;
        verdict = evaluate(r.lower, r.upper, *cmp, c);
        refined = true;
    }
    let mut report = RunReport::new(model, prop.to_string(), &cfg, &r, started.elapsed());
    report.verdict = Some(verdict.to_string());
    report.refined = refined;
    report.print(format)?;
    Ok(match verdict {
        Verdict::True => 0,
        Verdict::False => 1,
        Verdict::Unknown => 2,
    })
}

fn cmd_solve(model: &Path, label: &str, opt: Opt, solver: &SolverArgs, format: Format) -> Result<()> {
    let started = Instant::now();
    let m = load(model)?;
    let goal = m.label(label)?;
    let cfg = solver.config(false)?;
    let r = solve(&m, goal, opt, &cfg)?;
    let property = format!("P{opt}=? [ F \"{label}\" ]");
    RunReport::new(model, property, &cfg, &r, started.elapsed()).print(format)
}

fn cmd_gen(n: usize, gamma: &str) -> Result<()> {
    let gamma = rational_arg(gamma).map_err(anyhow::Error::msg)?;
    let m = build_counterexample(n, &gamma)?;
    print!("{}", serialize_model(&m));
    Ok(())
}

fn cmd_oracle(model: &Path, label: &str, opt: Opt, limit: u128) -> Result<()> {
    let m = load(model)?;
    let goal = m.label(label)?;
    let r = exact_reachability(&m, goal, opt, limit)?;
    println!("{}/{}", r.value.numer(), r.value.denom());
    Ok(())
}

fn cmd_bench(
    models: &[PathBuf],
    goal: &str,
    opt: Opt,
    grid: BenchGrid,
    output: Option<&Path>,
) -> Result<()> {
    let models = models
        .iter()
        .map(|p| {
            let model = load(p)?;
            let goal = model.label(goal).with_context(|| p.display().to_string())?.clone();
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok(BenchModel { name, model, goal, opt })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = run_grid(&models, &grid)?;
    match output {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&rows, io::BufWriter::new(f))?;
        }
        None => write_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Check {
            model,
            property,
            solver,
            refine,
            format,
        } => cmd_check(&model, &property, &solver, refine, format),
        Command::Solve {
            model,
            label,
            opt,
            solver,
            format,
        } => cmd_solve(&model, &label, opt.into(), &solver, format).map(|_| 0),
        Command::Gen { n, gamma } => cmd_gen(n, &gamma).map(|_| 0),
        Command::Oracle {
            model,
            label,
            opt,
            limit,
        } => cmd_oracle(&model, &label, opt.into(), limit).map(|_| 0),
        Command::Bench {
            models,
            goal,
            opt,
            alg,
            rounding,
            precision,
            reps,
            epsilon,
            max_sweeps,
            check_all_states,
            timeout,
            output,
        } => {
            let grid = BenchGrid {
                variants: alg.into_iter().map(Into::into).collect(),
                strategies: rounding.into_iter().map(Into::into).collect(),
                precisions: precision.into_iter().map(Into::into).collect(),
                repetitions: reps,
                epsilon,
                max_sweeps,
                check_all_states,
                timeout: timeout.map(seconds).transpose()?,
            };
            cmd_bench(&models, &goal, opt.into(), grid, output.as_deref()).map(|_| 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
