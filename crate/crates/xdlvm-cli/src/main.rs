//! Command-line front end: static checking, execution, machine
//! compilation, the reference interpreter, and trace rendering.
//!
//! Exit codes: 0 success, 1 bad input or failed diagnostics, 2 runtime
//! failure. Diagnostics go to stderr; results go to stdout.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use xdlvm::parser::document_to_xml;
use xdlvm::platform::{platform_from_json, platform_to_json, Platform};
use xdlvm::render::{render_ascii, render_svg, RenderError};
use xdlvm::runtime::TraceSink;
use xdlvm::trace::Trace;
use xdlvm::turing::{oracle_trace, tm_spec_from_json, OracleEnd, TmConfiguration, TmSpec};
use xdlvm::{check, compile_tm, load_configuration, parse_document, ExecutionConfig, Severity};

#[derive(Parser)]
#[command(
    name = "xdlvm",
    version,
    about = "Virtual liquid-handling platform with conditional procedures and a Turing machine compiler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Statically validate a document against a platform.
    Check {
        /// Procedure document.
        file: PathBuf,
        /// Platform description (JSON).
        #[arg(long)]
        platform: PathBuf,
    },
    /// Execute a document on a platform and print the final vessel state.
    Run {
        /// Procedure document.
        file: PathBuf,
        /// Platform description (JSON).
        #[arg(long)]
        platform: PathBuf,
        /// Write the execution trace to this file (JSON lines).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Step budget for the run.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Override the platform's camera noise level.
        #[arg(long)]
        sigma: Option<f64>,
        /// Override the platform's camera seed (XDLVM_SEED wins over this).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compile a Turing machine description into a procedure document.
    CompileTm {
        /// Machine description (JSON).
        machine: PathBuf,
        /// Initial tape as one character per cell.
        #[arg(long)]
        tape: Option<String>,
        /// Number of tape cells (defaults to the tape length, or 8).
        #[arg(long)]
        tape_len: Option<u32>,
        /// Write the compiled document here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write a platform description pre-loaded with the initial
        /// tape, head, and state.
        #[arg(long)]
        emit_platform: Option<PathBuf>,
    },
    /// Run the reference interpreter and print every configuration.
    Oracle {
        /// Machine description (JSON).
        machine: PathBuf,
        /// Initial tape (repeatable); defaults to one blank tape.
        #[arg(long = "tape")]
        tapes: Vec<String>,
        /// Tape length when no --tape is given.
        #[arg(long, default_value_t = 8)]
        tape_len: u32,
        /// Transition cap per run.
        #[arg(long, default_value_t = 10_000)]
        max: u64,
        /// Worker threads for multiple tapes; output stays in input order.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render an execution trace as a step diagram.
    Render {
        /// Trace file (JSON lines).
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Ascii)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Svg,
}

enum CliError {
    /// Bad input or failed diagnostics: exit 1.
    Input(String),
    /// The run itself failed: exit 2.
    Runtime(String),
}

fn input_err(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_document(path: &Path) -> Result<xdlvm::XdlDocument, CliError> {
    let text = read_file(path)?;
    parse_document(&text).map_err(|diags| {
        for diag in &diags {
            eprintln!("{}:{diag}", path.display());
        }
        input_err(format!("{}: {} parse error(s)", path.display(), diags.len()))
    })
}

fn load_platform(path: &Path) -> Result<Platform, CliError> {
    let text = read_file(path)?;
    platform_from_json(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_machine(path: &Path) -> Result<TmSpec, CliError> {
    let text = read_file(path)?;
    tm_spec_from_json(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// Prints diagnostics and reports whether any of them is an error.
fn report_diagnostics(path: &Path, doc: &xdlvm::XdlDocument, platform: &Platform) -> bool {
    let diags = check(doc, platform);
    for diag in &diags {
        eprintln!("{}:{diag}", path.display());
    }
    diags.iter().any(|d| d.severity == Severity::Error)
}

fn vessel_summary(platform: &Platform) -> String {
    let mut out = String::new();
    for vessel in platform.vessels() {
        let colour = platform
            .current_colour(&vessel.id)
            .map(|c| c.name())
            .unwrap_or("unknown");
        let reagent = match vessel.contents.as_slice() {
            [] => "empty".to_string(),
            [only] => only.reagent.clone(),
            many => {
                let first = &many[0].reagent;
                if many.iter().all(|s| &s.reagent == first) {
                    first.clone()
                } else {
                    "mixture".to_string()
                }
            }
        };
        out.push_str(&format!(
            "{:<14} {:>10.3} mL  {:<7} {}\n",
            vessel.id,
            vessel.total_volume().as_ml(),
            colour,
            reagent
        ));
    }
    out
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let file =
        fs::File::create(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    trace
        .write_jsonl(file)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn cmd_check(file: &Path, platform_path: &Path) -> Result<(), CliError> {
    let doc = load_document(file)?;
    let platform = load_platform(platform_path)?;
    if report_diagnostics(file, &doc, &platform) {
        return Err(input_err("check failed"));
    }
    println!("ok");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    file: &Path,
    platform_path: &Path,
    trace_path: Option<&Path>,
    max_steps: Option<u64>,
    sigma: Option<f64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let doc = load_document(file)?;
    let mut platform = load_platform(platform_path)?;
    if let Some(sigma) = sigma {
        platform.camera_noise_sigma = sigma;
    }
    if let Some(seed) = seed {
        platform.rng_seed = seed;
    }
    if let Ok(text) = std::env::var("XDLVM_SEED") {
        platform.rng_seed = text
            .parse()
            .map_err(|_| input_err(format!("XDLVM_SEED {text:?} is not an integer")))?;
    }
    if report_diagnostics(file, &doc, &platform) {
        return Err(input_err("check failed"));
    }
    let mut config = ExecutionConfig::default();
    if let Some(max) = max_steps {
        config.max_steps = max;
    }
    if trace_path.is_none() {
        config.trace_sink = TraceSink::Discard;
    }
    match xdlvm::run(&doc, &mut platform, &config) {
        Ok(outcome) => {
            if let Some(path) = trace_path {
                write_trace(path, &outcome.trace)?;
            }
            print!("{}", vessel_summary(&platform));
            Ok(())
        }
        Err(failure) => {
            if let Some(path) = trace_path {
                write_trace(path, &failure.trace)?;
            }
            Err(CliError::Runtime(format!(
                "run failed after {} executed steps: {}",
                failure.executed_steps, failure.error
            )))
        }
    }
}

/// Turns a --tape string into symbols, one character per cell.
fn tape_from_string(spec: &TmSpec, text: &str) -> Result<Vec<String>, CliError> {
    text.chars()
        .map(|c| {
            let symbol = c.to_string();
            if spec.symbol_colour(&symbol).is_some() {
                Ok(symbol)
            } else {
                Err(input_err(format!("tape character {c:?} is not an alphabet symbol")))
            }
        })
        .collect()
}

fn initial_configuration(
    spec: &TmSpec,
    tape: Option<&str>,
    tape_len: Option<u32>,
) -> Result<TmConfiguration, CliError> {
    let cells = match tape {
        Some(text) => {
            let mut cells = tape_from_string(spec, text)?;
            let len = tape_len.unwrap_or(cells.len() as u32) as usize;
            if cells.len() > len {
                return Err(input_err(format!(
                    "tape has {} cells but the tape length is {len}",
                    cells.len()
                )));
            }
            cells.resize(len, spec.blank.clone());
            cells
        }
        None => vec![spec.blank.clone(); tape_len.unwrap_or(8) as usize],
    };
    if spec.initial_head > cells.len() {
        return Err(input_err(format!(
            "initial head {} is outside the {}-cell tape",
            spec.initial_head,
            cells.len()
        )));
    }
    Ok(TmConfiguration {
        state: spec.initial_state.clone(),
        head: spec.initial_head,
        tape: cells,
    })
}

fn cmd_compile_tm(
    machine: &Path,
    tape: Option<&str>,
    tape_len: Option<u32>,
    out: Option<&Path>,
    emit_platform: Option<&Path>,
) -> Result<(), CliError> {
    let spec = load_machine(machine)?;
    let initial = initial_configuration(&spec, tape, tape_len)?;
    let cells = initial.tape.len() as u32;
    let doc = compile_tm(&spec, cells).map_err(|e| input_err(e.to_string()))?;
    let xml = document_to_xml(&doc);
    match out {
        Some(path) => write_file(path, &xml)?,
        None => print!("{xml}"),
    }
    if let Some(path) = emit_platform {
        let mut platform = xdlvm::platform::standard_platform(cells, cells, 2)
            .map_err(|e| input_err(e.to_string()))?;
        load_configuration(&mut platform, &spec, &initial)
            .map_err(|e| input_err(e.to_string()))?;
        write_file(path, &platform_to_json(&platform))?;
    }
    Ok(())
}

fn oracle_report(spec: &TmSpec, initial: &TmConfiguration, max: u64) -> String {
    let (configs, end) = oracle_trace(spec, initial, max);
    let mut out = String::new();
    for config in &configs {
        out.push_str(&format!(
            "{} {} {}\n",
            config.state,
            config.head,
            config.tape_string()
        ));
    }
    let transitions = configs.len() - 1;
    let final_tape = configs.last().map(|c| c.tape_string()).unwrap_or_default();
    match end {
        OracleEnd::Halted => {
            out.push_str(&format!(
                "{} after {transitions} transitions, tape {final_tape}\n",
                spec.halt
            ));
        }
        OracleEnd::CapReached => {
            out.push_str(&format!(
                "cap reached after {transitions} transitions, tape {final_tape}\n"
            ));
        }
        OracleEnd::Failed(error) => {
            out.push_str(&format!(
                "error after {transitions} transitions: {error}, tape {final_tape}\n"
            ));
        }
    }
    out
}

fn cmd_oracle(
    machine: &Path,
    tapes: &[String],
    tape_len: u32,
    max: u64,
    jobs: usize,
) -> Result<(), CliError> {
    let spec = load_machine(machine)?;
    let initials = if tapes.is_empty() {
        vec![initial_configuration(&spec, None, Some(tape_len))?]
    } else {
        tapes
            .iter()
            .map(|t| initial_configuration(&spec, Some(t), Some(tape_len.max(t.chars().count() as u32))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let reports = if jobs <= 1 || initials.len() <= 1 {
        initials
            .iter()
            .map(|c| oracle_report(&spec, c, max))
            .collect::<Vec<_>>()
    } else {
        // Fixed-size chunks of the input indices per worker; each result
        // slot is owned by exactly one worker, so order is preserved.
        let mut reports: Vec<Option<String>> = vec![None; initials.len()];
        std::thread::scope(|scope| {
            let chunk = initials.len().div_ceil(jobs);
            for (slot_chunk, config_chunk) in
                reports.chunks_mut(chunk).zip(initials.chunks(chunk))
            {
                let spec = &spec;
                scope.spawn(move || {
                    for (slot, config) in slot_chunk.iter_mut().zip(config_chunk) {
                        *slot = Some(oracle_report(spec, config, max));
                    }
                });
            }
        });
        reports.into_iter().map(|r| r.expect("worker filled slot")).collect()
    };
    let many = reports.len() > 1;
    for (index, report) in reports.iter().enumerate() {
        if many {
            println!("# tape {}", initials[index].tape_string());
        }
        print!("{report}");
    }
    Ok(())
}

fn cmd_render(trace_path: &Path, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let file = fs::File::open(trace_path)
        .map_err(|e| input_err(format!("{}: {e}", trace_path.display())))?;
    let trace = Trace::read_jsonl(BufReader::new(file))
        .map_err(|e| input_err(format!("{}: {e}", trace_path.display())))?;
    let rendered = match format {
        Format::Ascii => render_ascii(&trace),
        Format::Svg => render_svg(&trace),
    }
    .map_err(|e| match e {
        RenderError::NoTransitions => input_err("no transitions found"),
        other => input_err(other.to_string()),
    })?;
    match out {
        Some(path) => write_file(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Check { file, platform } => cmd_check(&file, &platform),
        Command::Run {
            file,
            platform,
            trace,
            max_steps,
            sigma,
            seed,
        } => cmd_run(&file, &platform, trace.as_deref(), max_steps, sigma, seed),
        Command::CompileTm {
            machine,
            tape,
            tape_len,
            out,
            emit_platform,
        } => cmd_compile_tm(
            &machine,
            tape.as_deref(),
            tape_len,
            out.as_deref(),
            emit_platform.as_deref(),
        ),
        Command::Oracle {
            machine,
            tapes,
            tape_len,
            max,
            jobs,
        } => cmd_oracle(&machine, &tapes, tape_len, max, jobs),
        Command::Render { trace, format, out } => cmd_render(&trace, format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            let _ = std::io::stdout().flush();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
