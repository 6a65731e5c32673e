//! Command-line front end: evaluate formulas, enumerate and replay traces,
//! sample online executions, and check refinement mappings by bounded
//! bisimulation.
//!
//! Exit codes: 0 ok, 2 input error, 3 semantic error, 4 counterexample.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use noisy_golog::abstraction::{
    build_bisim, build_bisim_coarse, check_complete, check_sound, BisimRelation,
    RefinementMapping, Verdict,
};
use noisy_golog::belief::{self, Distribution, EpistemicState, EvalParams};
use noisy_golog::builtins;
use noisy_golog::interpreter::{self, Policy, SampleResult};
use noisy_golog::lang::{Formula, Term};
use noisy_golog::model::{GroundBat, WorldId};
use noisy_golog::parser::{
    parse_formula, parse_mapping, parse_program, parse_theory, parse_trace,
    pretty::{print_program, print_term, print_trace},
    SymbolTable,
};
use noisy_golog::report::{rat_value, Report};

#[derive(Parser)]
#[command(name = "ngolog", version, about = "Interpreter and abstraction verifier for noisy Golog programs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    First,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum BisimMode {
    /// One bounded bisimulation between the designated initial models.
    Bisim,
    /// Every initial low model must match some initial high model.
    Sound,
    /// Every initial high model must match some initial low model.
    Complete,
}

#[derive(Args)]
struct Common {
    /// Bound on entries into each star body along a branch.
    #[arg(long, default_value_t = 16)]
    star_bound: usize,
    /// Horizon for the `box` modality.
    #[arg(long)]
    box_horizon: Option<usize>,
    /// Treat undefined belief as an error instead of false.
    #[arg(long)]
    strict_belief: bool,
    /// Retain zero-likelihood observational alternatives.
    #[arg(long)]
    keep_zero: bool,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Worker threads for internal parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a formula at a state of a theory.
    Eval {
        /// Theory file (.dsg), or a built-in example name prefixed with '@'.
        #[arg(long)]
        theory: String,
        /// Formula to evaluate.
        #[arg(long)]
        formula: String,
        /// Trace executed so far (comma-separated ground actions).
        #[arg(long)]
        trace: Option<String>,
        /// Index of the actual initial world.
        #[arg(long, default_value_t = 0)]
        world: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Enumerate the action traces with which a program runs to completion.
    Traces {
        #[arg(long)]
        theory: String,
        #[arg(long)]
        program: String,
        /// Trace executed before the program starts.
        #[arg(long)]
        trace: Option<String>,
        #[arg(long, default_value_t = 0)]
        world: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Replay a target trace through a program and report reachability and
    /// finality.
    Run {
        #[arg(long)]
        theory: String,
        #[arg(long)]
        program: String,
        /// The target trace to follow.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        world: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sample online executions of a program, resolving agent choices by
    /// policy and nature by likelihood.
    Simulate {
        #[arg(long)]
        theory: String,
        #[arg(long)]
        program: String,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Random)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 0)]
        world: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Check a refinement mapping by bounded bisimulation.
    Bisim {
        /// Built-in example name (alternative to --high/--low/--map).
        #[arg(long)]
        example: Option<String>,
        /// High-level theory file.
        #[arg(long)]
        high: Option<PathBuf>,
        /// Low-level theory file.
        #[arg(long)]
        low: Option<PathBuf>,
        /// Refinement mapping file.
        #[arg(long)]
        map: Option<PathBuf>,
        /// High-level actions to look ahead.
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = BisimMode::Bisim)]
        mode: BisimMode,
        /// Keep full posteriors in low states instead of aggregating by
        /// support. Needed when refinement tests use graded belief, but
        /// far more expensive: every noisy reading path is tracked
        /// separately, so prefer a small --star-bound with it.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        common: Common,
    },
    /// List built-in examples, print one, or materialize its files.
    Example {
        /// Example name; omit to list available names.
        name: Option<String>,
        /// Write the example's files into this directory.
        #[arg(long)]
        materialize: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Error category determining the exit code.
enum CliError {
    /// Exit 2: unreadable/unparseable input.
    Input(String),
    /// Exit 3: well-formed input with no defined result.
    Semantic(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Semantic(_) => 3,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Semantic(m) => m,
        }
    }
}

fn input_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn semantic_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Semantic(e.to_string())
}

/// Load a theory from a file path, or from the built-ins when the argument
/// is `@name` or `@name.low` / `@name.high`.
fn load_theory(spec: &str) -> Result<(GroundBat, String), CliError> {
    let text = if let Some(name) = spec.strip_prefix('@') {
        let (base, side) = match name.rsplit_once('.') {
            Some((b, s @ ("low" | "high"))) => (b, s),
            _ => (name, "low"),
        };
        let bundle = builtins::builtin(base)
            .ok_or_else(|| CliError::Input(format!("unknown built-in example `{base}`")))?;
        if side == "high" {
            bundle.high_text.to_string()
        } else {
            bundle.low_text.to_string()
        }
    } else {
        std::fs::read_to_string(spec).map_err(|e| CliError::Input(format!("{spec}: {e}")))?
    };
    let th = parse_theory(&text).map_err(input_err)?;
    let bat = GroundBat::compile(th).map_err(input_err)?;
    Ok((bat, text))
}

fn initial_setup(
    bat: &GroundBat,
    world: usize,
) -> Result<(EpistemicState, Distribution, WorldId), CliError> {
    let worlds = bat.initial_worlds();
    if world >= worlds.len() {
        return Err(CliError::Input(format!(
            "world index {world} out of range (theory has {} initial worlds)",
            worlds.len()
        )));
    }
    let d: Distribution = worlds.iter().map(|(w, p)| (*w, p.clone())).collect();
    Ok((vec![d.clone()], d, worlds[world].0))
}

fn eval_params(c: &Common) -> EvalParams {
    EvalParams {
        box_horizon: c.box_horizon,
        star_bound: c.star_bound,
        strict_belief: c.strict_belief,
        keep_zero: c.keep_zero,
    }
}

fn parse_trace_opt(
    text: &Option<String>,
    table: &SymbolTable,
) -> Result<Vec<Term>, CliError> {
    match text {
        None => Ok(Vec::new()),
        Some(t) if t.trim().is_empty() => Ok(Vec::new()),
        Some(t) => parse_trace(t, table).map_err(input_err),
    }
}

fn emit(report: &Report, format: Format, started: Instant) {
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => print!("{}", report.to_text(started.elapsed())),
    }
}

fn cmd_eval(
    theory: &str,
    formula: &str,
    trace: &Option<String>,
    world: usize,
    common: &Common,
) -> Result<(Report, u8), CliError> {
    let (bat, text) = load_theory(theory)?;
    let table = SymbolTable::from_theory(&bat.theory);
    let f = parse_formula(formula, &table).map_err(input_err)?;
    let z = parse_trace_opt(trace, &table)?;
    let (e, d, w) = initial_setup(&bat, world)?;
    let params = eval_params(common);
    let value = belief::eval(&bat, &e, w, &z, &f, &params).map_err(semantic_err)?;
    let mut result = json!({
        "formula": noisy_golog::parser::pretty::print_formula(&f),
        "trace": print_trace(&z),
        "value": value,
    });
    // For a top-level belief formula also report the computed degree.
    if let Formula::Belief(body, _) = &f {
        let deg = belief::degree(&bat, &e, &d, w, &z, body, &params).map_err(semantic_err)?;
        result["degree"] = match deg {
            Some(r) => rat_value(&r),
            None => Value::String("undefined".into()),
        };
    }
    let mut report = Report::new("eval")
        .input("theory", &text)
        .input("formula", formula);
    report.result = result;
    Ok((report, 0))
}

fn cmd_traces(
    theory: &str,
    program: &str,
    trace: &Option<String>,
    world: usize,
    common: &Common,
) -> Result<(Report, u8), CliError> {
    let (bat, text) = load_theory(theory)?;
    let table = SymbolTable::from_theory(&bat.theory);
    let p = parse_program(program, &table).map_err(input_err)?;
    let z0 = parse_trace_opt(trace, &table)?;
    let (e, _, w) = initial_setup(&bat, world)?;
    let params = eval_params(common);
    let ts = interpreter::traces(&bat, &e, w, &z0, &p, common.star_bound, &params)
        .map_err(semantic_err)?;
    let mut report = Report::new("traces")
        .input("theory", &text)
        .input("program", program);
    report.truncated = !ts.exact;
    report.result = json!({
        "program": print_program(&p),
        "count": ts.traces.len(),
        "exact": ts.exact,
        "traces": ts.traces.iter().map(|t| print_trace(t)).collect::<Vec<_>>(),
    });
    Ok((report, 0))
}

fn cmd_run(
    theory: &str,
    program: &str,
    target: &str,
    world: usize,
    common: &Common,
) -> Result<(Report, u8), CliError> {
    let (bat, text) = load_theory(theory)?;
    let table = SymbolTable::from_theory(&bat.theory);
    let p = parse_program(program, &table).map_err(input_err)?;
    let z = parse_trace(target, &table).map_err(input_err)?;
    let (e, _, w) = initial_setup(&bat, world)?;
    let params = eval_params(common);
    let rep = interpreter::follow_trace(&bat, &e, w, &[], &p, &z, common.star_bound, &params)
        .map_err(semantic_err)?;
    let mut report = Report::new("run")
        .input("theory", &text)
        .input("program", program)
        .input("target", target);
    report.truncated = rep.truncated;
    report.result = json!({
        "target": print_trace(&z),
        "reached": rep.reached,
        "failed_at": rep.failed_at,
        "final": rep.final_config,
    });
    Ok((report, 0))
}

fn cmd_simulate(
    theory: &str,
    program: &str,
    runs: usize,
    seed: u64,
    policy: PolicyArg,
    world: usize,
    common: &Common,
) -> Result<(Report, u8), CliError> {
    let (bat, text) = load_theory(theory)?;
    let table = SymbolTable::from_theory(&bat.theory);
    let p = parse_program(program, &table).map_err(input_err)?;
    let (e, _, w) = initial_setup(&bat, world)?;
    let params = eval_params(common);
    let pol = match policy {
        PolicyArg::First => Policy::First,
        PolicyArg::Random => Policy::Random,
    };
    let mut completed = 0usize;
    let mut blocked = 0usize;
    let mut action_counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..runs {
        let r = interpreter::sample_trace(
            &bat,
            &e,
            w,
            &[],
            &p,
            common.star_bound,
            pol,
            seed.wrapping_add(i as u64),
            &params,
        )
        .map_err(semantic_err)?;
        let z = match r {
            SampleResult::Completed(z) => {
                completed += 1;
                z
            }
            SampleResult::Blocked(z) => {
                blocked += 1;
                z
            }
        };
        for a in &z {
            *action_counts.entry(print_term(a)).or_insert(0) += 1;
        }
    }
    let mut report = Report::new("simulate")
        .input("theory", &text)
        .input("program", program);
    report.result = json!({
        "runs": runs,
        "seed": seed,
        "completed": completed,
        "blocked": blocked,
        "action_counts": action_counts,
    });
    Ok((report, 0))
}

fn verdict_value(rel: &BisimRelation) -> (Value, bool) {
    match &rel.verdict {
        Verdict::CertifiedToBound => (
            json!({
                "status": "certified-to-bound",
                "pairs": rel.pairs.len(),
                "definite": rel.definite,
            }),
            false,
        ),
        Verdict::Counterexample(cex) => (
            json!({
                "status": "counterexample",
                "condition": cex.condition,
                "description": cex.description,
                "high_trace": print_trace(&cex.high.1),
                "low_trace": print_trace(&cex.low_trace),
            }),
            true,
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bisim(
    example: &Option<String>,
    high: &Option<PathBuf>,
    low: &Option<PathBuf>,
    map: &Option<PathBuf>,
    horizon: usize,
    mode: BisimMode,
    coarse: bool,
    common: &Common,
) -> Result<(Report, u8), CliError> {
    let (bat_h, bat_l, mapping, digests) = match example {
        Some(name) => {
            let b = builtins::builtin(name)
                .ok_or_else(|| CliError::Input(format!("unknown built-in example `{name}`")))?;
            let m = RefinementMapping::new(&b.mapping);
            let d = vec![
                ("high".to_string(), b.high_text.to_string()),
                ("low".to_string(), b.low_text.to_string()),
                ("map".to_string(), b.mapping_text.to_string()),
            ];
            (b.high, b.low, m, d)
        }
        None => {
            let (hp, lp, mp) = match (high, low, map) {
                (Some(h), Some(l), Some(m)) => (h, l, m),
                _ => {
                    return Err(CliError::Input(
                        "provide --example NAME or all of --high/--low/--map".into(),
                    ))
                }
            };
            let read = |p: &PathBuf| {
                std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
            };
            let (ht, lt, mt) = (read(hp)?, read(lp)?, read(mp)?);
            let high_th = parse_theory(&ht).map_err(input_err)?;
            let low_th = parse_theory(&lt).map_err(input_err)?;
            let high_table = SymbolTable::from_theory(&high_th);
            let low_table = SymbolTable::from_theory(&low_th);
            let mf = parse_mapping(&mt, &high_table, &low_table).map_err(input_err)?;
            let bat_h = GroundBat::compile(high_th).map_err(input_err)?;
            let bat_l = GroundBat::compile(low_th).map_err(input_err)?;
            let d = vec![
                ("high".to_string(), ht),
                ("low".to_string(), lt),
                ("map".to_string(), mt),
            ];
            (bat_h, bat_l, RefinementMapping::new(&mf), d)
        }
    };
    let mut report = Report::new("bisim");
    for (role, text) in &digests {
        report = report.input(role, text);
    }
    let (result, counterexample, truncated) = match mode {
        BisimMode::Bisim => {
            let w_h = bat_h.initial_worlds()[0].0;
            let w_l = bat_l.initial_worlds()[0].0;
            let e_h = belief::point_mass(w_h);
            let e_l = belief::point_mass(w_l);
            let build = if coarse { build_bisim_coarse } else { build_bisim };
            let rel = build(
                &mapping,
                &bat_h,
                &bat_l,
                &e_h,
                w_h,
                &e_l,
                w_l,
                horizon,
                common.star_bound,
            )
            .map_err(semantic_err)?;
            let (v, cex) = verdict_value(&rel);
            (
                json!({
                    "mode": "bisim",
                    "horizon": horizon,
                    "star_bound": common.star_bound,
                    "aggregation": if coarse { "support" } else { "exact" },
                    "verdict": v,
                }),
                cex,
                rel.truncated,
            )
        }
        BisimMode::Sound | BisimMode::Complete => {
            let check = match mode {
                BisimMode::Sound => {
                    check_sound(&mapping, &bat_h, &bat_l, horizon, common.star_bound, coarse)
                }
                _ => check_complete(&mapping, &bat_h, &bat_l, horizon, common.star_bound, coarse),
            }
            .map_err(semantic_err)?;
            let verdicts: Vec<Value> = check
                .verdicts
                .iter()
                .map(|v| {
                    json!({
                        "subject_world": v.subject_world,
                        "matched_world": v.matched_world,
                        "certified": v.certified,
                    })
                })
                .collect();
            (
                json!({
                    "mode": match mode { BisimMode::Sound => "sound", _ => "complete" },
                    "horizon": horizon,
                    "star_bound": common.star_bound,
                    "aggregation": if coarse { "support" } else { "exact" },
                    "holds": check.holds,
                    "models": verdicts,
                }),
                !check.holds,
                check.truncated,
            )
        }
    };
    report.result = result;
    report.truncated = truncated;
    Ok((report, if counterexample { 4 } else { 0 }))
}

fn cmd_example(
    name: &Option<String>,
    materialize: &Option<PathBuf>,
) -> Result<(Report, u8), CliError> {
    let mut report = Report::new("example");
    match name {
        None => {
            report.result = json!({ "examples": builtins::builtin_names() });
        }
        Some(n) => {
            let b = builtins::builtin(n)
                .ok_or_else(|| CliError::Input(format!("unknown built-in example `{n}`")))?;
            if let Some(dir) = materialize {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
                let files = [
                    (format!("{n}-low.dsg"), b.low_text),
                    (format!("{n}-high.dsg"), b.high_text),
                    (format!("{n}.map"), b.mapping_text),
                ];
                let mut written = Vec::new();
                for (fname, text) in files {
                    let path = dir.join(&fname);
                    std::fs::write(&path, text)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                    written.push(path.display().to_string());
                }
                report.result = json!({ "name": n, "written": written });
            } else {
                report.result = json!({
                    "name": n,
                    "low_theory": b.low_text,
                    "high_theory": b.high_text,
                    "mapping": b.mapping_text,
                    "high_program": builtins::DELTA_H,
                    "low_program": builtins::DELTA_L,
                    "reference_trace": builtins::REFERENCE_TRACE,
                });
            }
        }
    }
    Ok((report, 0))
}

fn dispatch(cli: &Cli) -> Result<(Report, u8, Format), CliError> {
    let common = match &cli.command {
        Cmd::Eval { common, .. }
        | Cmd::Traces { common, .. }
        | Cmd::Run { common, .. }
        | Cmd::Simulate { common, .. }
        | Cmd::Bisim { common, .. }
        | Cmd::Example { common, .. } => common,
    };
    if let Some(jobs) = common.jobs {
        // Best effort: the pool can only be initialized once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let format = common.format;
    let (report, code) = match &cli.command {
        Cmd::Eval {
            theory,
            formula,
            trace,
            world,
            common,
        } => cmd_eval(theory, formula, trace, *world, common)?,
        Cmd::Traces {
            theory,
            program,
            trace,
            world,
            common,
        } => cmd_traces(theory, program, trace, *world, common)?,
        Cmd::Run {
            theory,
            program,
            target,
            world,
            common,
        } => cmd_run(theory, program, target, *world, common)?,
        Cmd::Simulate {
            theory,
            program,
            runs,
            seed,
            policy,
            world,
            common,
        } => cmd_simulate(theory, program, *runs, *seed, *policy, *world, common)?,
        Cmd::Bisim {
            example,
            high,
            low,
            map,
            horizon,
            mode,
            exact,
            common,
        } => cmd_bisim(example, high, low, map, *horizon, *mode, !*exact, common)?,
        Cmd::Example {
            name, materialize, ..
        } => cmd_example(name, materialize)?,
    };
    Ok((report, code, format))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok((report, code, format)) => {
            emit(&report, format, started);
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
