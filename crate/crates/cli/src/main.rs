mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, CommandFactory, Parser, Subcommand};
use mdx_collect::{collect_run, read_dump, write_dump, Traces};
use mdx_core::{emit_container, listing, parse_container, Container, Value};
use mdx_corpus::{CorpusSpec, Family, Manifest, MANIFEST_HEADER};
use mdx_force::{iterate, recorded_branches, ForceOptions, DEFAULT_MAX_ITERATIONS};
use mdx_reassemble::{reassemble, ReassembleOptions};
use mdx_taint::{analyze, compute_metrics, snapshot_container, ConfusionCounts, Summary};
use mdx_vm::{run_program, Config, ExecutionLog, Mode, NativeRegistry, RuntimeError};

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_RUNTIME: u8 = 4;
const EXIT_FLOWS: u8 = 10;

const TRACE_EXT: &str = "mdxt";
const RUN_LOG: &str = "run.log";

#[derive(Parser)]
#[command(name = "mdx", version, about = "Collect, reassemble and analyze mini-DEX programs")]
struct Cli {
    /// `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the entry method, optionally collecting traces.
    Run(RunArgs),
    /// Drive forced runs towards uncovered branch arms.
    Force(ForceArgs),
    /// Build one container from collected traces.
    Reassemble(ReassembleArgs),
    /// Report source-to-sink flows. Exits 10 when any are found.
    Analyze { container: PathBuf },
    /// Memory image after the first `--at` events of a logged run.
    Snapshot {
        container: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        at: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sensitivity, specificity and F-measure from confusion counts.
    Metrics {
        #[arg(long)]
        tp: u64,
        #[arg(long)]
        fp: u64,
        #[arg(long)]
        tn: u64,
        #[arg(long = "fn")]
        fn_: u64,
    },
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Print a listing of every method.
    Disasm { container: PathBuf },
}

#[derive(Args)]
struct ExecArgs {
    /// Native behaviours; defaults to `<stem>.natives` next to the container.
    #[arg(long)]
    natives: Option<PathBuf>,
    /// One value per line (`i:5`, `s:3`, `nil`) or a corpus manifest;
    /// defaults to the inputs of `<stem>.manifest`.
    #[arg(long)]
    inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "step-budget")]
    step_budget: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    container: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
    /// Directory receiving `traces.mdxt` and `run.log`.
    #[arg(long)]
    collect: Option<PathBuf>,
    /// Also write the execution log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ForceArgs {
    container: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long = "paths-dir")]
    paths_dir: PathBuf,
    #[arg(long = "max-iter", default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
}

#[derive(Args)]
struct ReassembleArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write a listing next to the output.
    #[arg(long = "emit-text")]
    emit_text: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Write generated programs with their natives and manifests.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<u8, Failure>;

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_VALIDATION, error: e.into() }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_RUNTIME, error: e.into() }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(validation)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(validation)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).map_err(runtime)
}

fn load_container(path: &Path) -> Result<Container, Failure> {
    let bytes = read(path)?;
    let c = parse_container(&bytes).with_context(|| format!("parsing {}", path.display())).map_err(validation)?;
    c.validate().with_context(|| format!("validating {}", path.display())).map_err(validation)?;
    Ok(c)
}

fn sibling(container: &Path, ext: &str) -> PathBuf {
    container.with_extension(ext)
}

fn load_natives(container: &Path, c: &Container, explicit: Option<&Path>) -> Result<NativeRegistry, Failure> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = sibling(container, "natives");
            if !p.exists() {
                return Ok(NativeRegistry::new());
            }
            p
        }
    };
    let text = read_text(&path)?;
    NativeRegistry::parse(&text, c).with_context(|| format!("parsing {}", path.display())).map_err(validation)
}

fn parse_inputs(text: &str) -> anyhow::Result<Vec<Value>> {
    if text.starts_with(MANIFEST_HEADER) {
        return Ok(Manifest::parse(text)?.inputs);
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<Value>().map_err(|e| anyhow!("input `{l}`: {e}")))
        .collect()
}

fn load_inputs(container: &Path, explicit: Option<&Path>) -> Result<Vec<Value>, Failure> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let p = sibling(container, "manifest");
            if !p.exists() {
                return Ok(Vec::new());
            }
            p
        }
    };
    let text = read_text(&path)?;
    parse_inputs(&text).with_context(|| format!("parsing {}", path.display())).map_err(validation)
}

struct Program {
    container: Container,
    natives: NativeRegistry,
    inputs: Vec<Value>,
    config: Config,
}

fn load_program(path: &Path, exec: &ExecArgs) -> Result<Program, Failure> {
    let container = load_container(path)?;
    let natives = load_natives(path, &container, exec.natives.as_deref())?;
    if let Some(key) = natives.missing(&container) {
        return Err(validation(anyhow!("no native behaviour for {key}")));
    }
    let inputs = load_inputs(path, exec.inputs.as_deref())?;
    let mut config = Config { seed: exec.seed, ..Config::default() };
    if let Some(b) = exec.step_budget {
        config.step_budget = b;
    }
    Ok(Program { container, natives, inputs, config })
}

fn fault_message(e: &RuntimeError) -> String {
    let mut msg = e.to_string();
    for (m, pc) in e.backtrace() {
        msg.push_str(&format!("\n  at method {m} pc {pc}"));
    }
    msg
}

fn cmd_run(a: RunArgs) -> Outcome {
    let p = load_program(&a.container, &a.exec)?;
    let (run, traces) = if a.collect.is_some() {
        let (run, traces) = collect_run(&p.container, &p.natives, &p.inputs, Mode::Plain, p.config);
        (run, Some(traces))
    } else {
        (run_program(&p.container, &p.natives, &p.inputs, Mode::Plain, p.config, None), None)
    };
    let text = run.log.to_text();
    if let Some(path) = &a.log {
        write(path, &text)?;
    }
    if let (Some(dir), Some(traces)) = (&a.collect, traces) {
        let traces = traces.map_err(runtime)?;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;
        write(&dir.join(format!("traces.{TRACE_EXT}")), write_dump(&traces))?;
        write(&dir.join(RUN_LOG), &text)?;
        eprintln!("collected {} unique trees over {} methods", traces.tree_count(), traces.methods.len());
    }
    if a.log.is_none() && a.collect.is_none() {
        print!("{text}");
    }
    match run.outcome {
        Ok(v) => {
            eprintln!("returned {} after {} steps", v.map_or("void".to_string(), |v| v.to_string()), run.steps);
            Ok(0)
        }
        Err(e) => Err(runtime(anyhow!(fault_message(&e)))),
    }
}

fn trace_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display())).map_err(validation)?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == TRACE_EXT))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(validation(anyhow!("no .{TRACE_EXT} files in {}", dir.display())));
    }
    Ok(files)
}

fn load_traces(dir: &Path) -> Result<Traces, Failure> {
    let mut all = Traces::default();
    for f in trace_files(dir)? {
        let t = read_dump(&read(&f)?).with_context(|| format!("parsing {}", f.display())).map_err(validation)?;
        all.merge(t);
    }
    Ok(all)
}

fn cmd_force(a: ForceArgs) -> Outcome {
    let p = load_program(&a.container, &a.exec)?;
    let traces = load_traces(&a.traces)?;
    let log_path = a.traces.join(RUN_LOG);
    let log = if log_path.exists() {
        ExecutionLog::parse(&read_text(&log_path)?)
            .with_context(|| format!("parsing {}", log_path.display()))
            .map_err(validation)?
    } else {
        run_program(&p.container, &p.natives, &p.inputs, Mode::Plain, p.config, None).log
    };
    let opts = ForceOptions { max_iterations: a.max_iter, config: p.config };
    let out = iterate(&p.container, &p.natives, &p.inputs, vec![(log, traces)], opts).map_err(runtime)?;

    fs::create_dir_all(&a.paths_dir).with_context(|| format!("creating {}", a.paths_dir.display())).map_err(runtime)?;
    let mut written = 0;
    for (i, path) in out.paths().enumerate() {
        write(&a.paths_dir.join(format!("path-{i:03}.mdxp")), path.to_text())?;
        written += 1;
    }
    write(&a.traces.join(format!("forced.{TRACE_EXT}")), write_dump(&out.traces))?;

    let recorded = recorded_branches(&out.traces);
    let total = recorded.len() * 2;
    let covered = out.coverage.len();
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "iterations {}", out.iterations.len());
    let _ = writeln!(stdout, "paths {written}");
    let _ = writeln!(stdout, "arms covered {covered} of {total} recorded");
    for (m, arms) in &out.coverage.arms {
        let sites = recorded.iter().filter(|(rm, _)| rm == m).count();
        let _ = writeln!(stdout, "  {}\t{}/{}", p.container.method_key(*m), arms.len(), sites * 2);
    }
    let unreachable: usize = out.iterations.iter().map(|it| it.unreachable.len()).sum();
    if unreachable > 0 {
        let _ = writeln!(stdout, "unreachable {unreachable}");
    }
    Ok(0)
}

fn cmd_reassemble(a: ReassembleArgs) -> Outcome {
    let traces = load_traces(&a.traces)?;
    let r = reassemble(&traces, ReassembleOptions { seed: a.seed }).map_err(validation)?;
    let bytes = emit_container(&r.container).map_err(runtime)?;
    write(&a.output, bytes)?;
    write(&a.output.with_extension("plan"), r.plan.to_text())?;
    if a.emit_text {
        write(&a.output.with_extension("txt"), r.listing())?;
    }
    eprintln!("{} methods, {} instrument fields", r.container.methods.len(), r.plan.fields.len());
    Ok(0)
}

fn cmd_analyze(path: &Path) -> Outcome {
    let c = load_container(path)?;
    let flows = analyze(&c);
    let mut stdout = std::io::stdout().lock();
    for f in &flows {
        let _ = writeln!(stdout, "{}", f.record(&c));
    }
    eprintln!("{}", Summary(&c, &flows).to_string().trim_end());
    Ok(if flows.is_empty() { 0 } else { EXIT_FLOWS })
}

fn cmd_snapshot(container: &Path, log: &Path, at: usize, output: &Path) -> Outcome {
    let c = load_container(container)?;
    let log = ExecutionLog::parse(&read_text(log)?)
        .with_context(|| format!("parsing {}", log.display()))
        .map_err(validation)?;
    let snap = snapshot_container(&c, &log, at).map_err(validation)?;
    write(output, emit_container(&snap).map_err(runtime)?)?;
    Ok(0)
}

fn cmd_metrics(k: ConfusionCounts) -> Outcome {
    let m = compute_metrics(k).map_err(validation)?;
    println!("sensitivity={:.3}", m.sensitivity);
    println!("specificity={:.3}", m.specificity);
    println!("F={:.3}", m.f_measure);
    Ok(0)
}

fn cmd_corpus(c: CorpusCmd) -> Outcome {
    let CorpusCmd::Gen { family, seed, count, output } = c;
    fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display())).map_err(runtime)?;
    for s in seed..seed + count {
        let g = mdx_corpus::generate(&CorpusSpec::new(family, s)).map_err(runtime)?;
        let path = g.write_to(&output).with_context(|| format!("writing {}", g.name)).map_err(runtime)?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Force(a) => cmd_force(a),
        Cmd::Reassemble(a) => cmd_reassemble(a),
        Cmd::Analyze { container } => cmd_analyze(&container),
        Cmd::Snapshot { container, log, at, output } => cmd_snapshot(&container, &log, at, &output),
        Cmd::Metrics { tp, fp, tn, fn_ } => cmd_metrics(ConfusionCounts { tp, fp, tn, fn_ }),
        Cmd::Corpus(c) => cmd_corpus(c),
        Cmd::Disasm { container } => {
            print!("{}", listing::container_listing(&load_container(&container)?));
            Ok(0)
        }
    }
}

fn args_with_config() -> Result<Vec<OsString>, Failure> {
    let args: Vec<OsString> = std::env::args_os().collect();
    let Some(path) = config::config_path(&args) else { return Ok(args) };
    let text = read_text(Path::new(&path))?;
    let entries =
        config::parse(&text).with_context(|| format!("parsing {}", Path::new(&path).display())).map_err(validation)?;
    Ok(config::merge(&Cli::command(), args, &entries))
}

fn main() -> ExitCode {
    let result = args_with_config().and_then(|args| {
        let cli = Cli::try_parse_from(args).map_err(|e| {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            Failure { code, error: anyhow!("") }
        })?;
        dispatch(cli)
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let msg = format!("{:#}", f.error);
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(f.code)
        }
    }
}
