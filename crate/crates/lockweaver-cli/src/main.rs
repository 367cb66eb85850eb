//! `lockweaver`: parse, check and infer proofs, synthesize locks, and verify
//! the result with the bounded model checker.
//!
//! Exit codes: 0 success, 1 analysis rejection, 2 usage or I/O error,
//! 3 budget exhausted or basis closure diverged.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use lockweaver::lang::{build_control_graph, parse_formula, parse_instrumented, print_library, ControlGraph, Library};
use lockweaver::lin::{synthesize_linearizable, LinError};
use lockweaver::logic::Checker;
use lockweaver::mc::{explore, replay, ClientSpec, ExploreOptions, Status, Step, Tables, Verdict, Witness};
use lockweaver::proof::{annotation_from_library, check_proof, infer_proof, ProofAnnotation, ProofError, ProofReport};
use lockweaver::synth::{sidecar_json, synthesize, InstrumentedLibrary, SynthError};

#[derive(Parser, Debug)]
#[command(name = "lockweaver", version, about = "Lock synthesis from sequential proofs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Domain bound B: values range over [-B, B].
    #[arg(short = 'B', long = "bound", global = true, default_value_t = 4)]
    bound: i64,
    /// Valuations the checker may enumerate per query.
    #[arg(long, global = true, default_value_t = 10_000_000)]
    budget: u64,
    /// Client specification (JSON) for verification.
    #[arg(long, global = true)]
    client: Option<PathBuf>,
    /// Also check every complete history for linearizability.
    #[arg(long = "check-lin", global = true)]
    check_lin: bool,
    /// Replay a witness file instead of exploring.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Seed predicates for proof inference, separated by `;` or newlines.
    #[arg(long, global = true)]
    seeds: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(short = 'o', long = "out", global = true, default_value = ".")]
    out: PathBuf,
    /// JSON list of function-table assignments to verify under.
    #[arg(long = "sweep-tables", global = true)]
    sweep_tables: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and pretty-print a library.
    Parse { input: PathBuf },
    /// Check the proof given by the library's annotations.
    CheckProof { input: PathBuf },
    /// Infer a proof from seed predicates.
    InferProof { input: PathBuf },
    /// Synthesize locks preserving the proof.
    Synth { input: PathBuf },
    /// Synthesize locks that make every procedure linearizable.
    SynthLin { input: PathBuf },
    /// Explore a (possibly instrumented) library under a client.
    Verify { input: PathBuf },
    /// Proof, synthesis and verification end to end.
    Pipeline {
        input: PathBuf,
        /// Use linearizable synthesis.
        #[arg(long)]
        lin: bool,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Rejected(String),
    #[error("{0}")]
    Budget(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Rejected(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Budget(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// File name stem with `.lcl` (and `.instr`) removed.
fn stem(input: &Path) -> String {
    let name = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".lcl").unwrap_or(&name);
    name.strip_suffix(".instr").unwrap_or(name).to_string()
}

fn validate(cli: &Cli) -> Result<()> {
    if cli.bound < 1 {
        return Err(CliError::Usage("-B must be at least 1".into()));
    }
    if cli.budget == 0 {
        return Err(CliError::Usage("--budget must be positive".into()));
    }
    let input = match &cli.command {
        Command::Parse { input }
        | Command::CheckProof { input }
        | Command::InferProof { input }
        | Command::Synth { input }
        | Command::SynthLin { input }
        | Command::Verify { input }
        | Command::Pipeline { input, .. } => input,
    };
    for p in [Some(input), cli.client.as_ref(), cli.replay.as_ref(), cli.seeds.as_ref(), cli.sweep_tables.as_ref()].into_iter().flatten() {
        if !p.is_file() {
            return Err(CliError::Usage(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|source| CliError::Io { path: cli.out.display().to_string(), source })?;
    Ok(&cli.out)
}

fn run(cli: &Cli) -> Result<()> {
    validate(cli)?;
    let ck = Checker { bound: cli.bound, budget: cli.budget };
    match &cli.command {
        Command::Parse { input } => {
            let lib = load(cli, input)?;
            print!("{}", print_library(&lib));
            Ok(())
        }
        Command::CheckProof { input } => {
            let lib = load(cli, input)?;
            let g = build_control_graph(&lib);
            let ann = annotation_from_library(&lib, &g, &ck).map_err(proof_err)?;
            let rep = check_proof(&lib, &g, &ann, &ck);
            print!("{}", to_json(&report_json(&g, &rep)));
            verdict_of_report(&rep)
        }
        Command::InferProof { input } => {
            let lib = load(cli, input)?;
            let g = build_control_graph(&lib);
            if lib.annotations.seeds.is_empty() {
                return Err(CliError::Usage("no seeds: give --seeds or a @seed block".into()));
            }
            let ann = infer_proof(&lib, &g, &lib.annotations.seeds, &ck).map_err(proof_err)?;
            let rep = check_proof(&lib, &g, &ann, &ck);
            let doc = json!({ "proof": proof_json(&g, &ann), "check": report_json(&g, &rep) });
            let path = out_dir(cli)?.join(format!("{}.proof.json", stem(input)));
            write(&path, &to_json(&doc))?;
            eprintln!("wrote {}", path.display());
            verdict_of_report(&rep)
        }
        Command::Synth { input } => synth_cmd(cli, &ck, input, false).map(|_| ()),
        Command::SynthLin { input } => synth_cmd(cli, &ck, input, true).map(|_| ()),
        Command::Verify { input } => {
            let lib = load(cli, input)?;
            let client = match &cli.client {
                Some(p) => Some(load_client(p)?),
                None => None,
            };
            if let Some(w) = &cli.replay {
                return replay_cmd(cli, &lib, client, w);
            }
            let client = client.ok_or_else(|| CliError::Usage("verify needs --client or --replay".into()))?;
            verify(cli, &lib, &client, &stem(input), cli.check_lin)
        }
        Command::Pipeline { input, lin } => pipeline(cli, &ck, input, *lin),
    }
}

/// Parses the input and applies `--seeds`.
fn load(cli: &Cli, input: &Path) -> Result<Library> {
    let mut lib = parse_instrumented(&read(input)?).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    if let Some(p) = &cli.seeds {
        let mut seeds = Vec::new();
        for line in read(p)?.lines() {
            let line = line.split("//").next().unwrap_or("");
            for s in line.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                seeds.push(parse_formula(s, &lib, None).map_err(|e| CliError::Usage(format!("{}: seed `{s}`: {e}", p.display())))?);
            }
        }
        // Seeds replace any annotated proof.
        lib.annotations.inv.clear();
        lib.annotations.basis.clear();
        lib.annotations.seeds = seeds;
    }
    Ok(lib)
}

fn load_client(p: &Path) -> Result<ClientSpec> {
    ClientSpec::from_json(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

fn proof_err(e: ProofError) -> CliError {
    match e {
        ProofError::CubeCap { .. } => CliError::Budget(e.to_string()),
        ProofError::UnknownPoint(_) | ProofError::MissingInvariant(_) => CliError::Usage(e.to_string()),
        _ => CliError::Rejected(e.to_string()),
    }
}

fn synth_err(e: SynthError) -> CliError {
    match e {
        SynthError::Proof(p) => proof_err(p),
        e => CliError::Rejected(e.to_string()),
    }
}

fn lin_err(e: LinError) -> CliError {
    match e {
        LinError::Proof(p) => proof_err(p),
        LinError::Synth(s) => synth_err(s),
        e @ LinError::ClosureDiverged { .. } => CliError::Budget(e.to_string()),
    }
}

fn verdict_of_report(rep: &ProofReport) -> Result<()> {
    if rep.accepted() {
        eprintln!("proof accepted");
        return Ok(());
    }
    for v in &rep.violations {
        eprintln!("{}: {}", v.rule, v.detail);
    }
    if rep.violations.iter().any(|v| v.witness.is_some()) {
        Err(CliError::Rejected(format!("proof rejected ({} violations)", rep.violations.len())))
    } else {
        Err(CliError::Budget("proof undecided within the enumeration budget".into()))
    }
}

fn report_json(g: &ControlGraph, rep: &ProofReport) -> serde_json::Value {
    let vs: Vec<_> = rep
        .violations
        .iter()
        .map(|v| {
            let at = match v.site {
                lockweaver::proof::Site::Edge(e) => {
                    let e = &g.edges[e];
                    format!("{} -> {} [{}]", g.vertices[e.src].name, g.vertices[e.dst].name, e.stmt)
                }
                lockweaver::proof::Site::Vertex(u) => g.vertices[u].name.clone(),
            };
            json!({ "rule": v.rule, "at": at, "detail": v.detail, "witness": v.witness })
        })
        .collect();
    json!({ "accepted": rep.accepted(), "violations": vs })
}

fn proof_json(g: &ControlGraph, ann: &ProofAnnotation) -> serde_json::Value {
    let texts = |fs: &[lockweaver::lang::Formula]| fs.iter().map(|f| f.to_string()).collect::<Vec<_>>();
    let vs: Vec<_> = g
        .vertices
        .iter()
        .map(|v| {
            json!({
                "vertex": v.name,
                "invariant": ann.mu[v.id].to_string(),
                "basis": texts(&ann.pm[v.id]),
                "obligations": texts(&ann.om[v.id]),
            })
        })
        .collect();
    json!(vs)
}

/// Checks the proof, synthesizes and writes `<name>[.lin].instr.lcl` and
/// its JSON sidecar. Returns the instrumented library and its path.
fn synth_cmd(cli: &Cli, ck: &Checker, input: &Path, lin: bool) -> Result<(Library, PathBuf)> {
    let lib = load(cli, input)?;
    if lib.procs.iter().any(|p| p.body.iter().any(|s| s.is_lock())) {
        return Err(CliError::Usage(format!("{}: input already contains locking statements", input.display())));
    }
    let g = build_control_graph(&lib);
    let ann = annotation_from_library(&lib, &g, ck).map_err(proof_err)?;
    verdict_of_report(&check_proof(&lib, &g, &ann, ck))?;
    let (out, sidecar): (InstrumentedLibrary, serde_json::Value) = if lin {
        let s = synthesize_linearizable(&lib, ck).map_err(lin_err)?;
        let mut sc = sidecar_json(&s.graph, &s.plan, &s.output.provenance);
        let trace: Vec<_> = s.basis.trace.iter().map(|(v, p)| json!({ "vertex": v, "added": p })).collect();
        sc["closure"] = json!({ "flags": s.basis.flags, "trace": trace });
        (s.output, sc)
    } else {
        let s = synthesize(&lib, ck).map_err(synth_err)?;
        let sc = sidecar_json(&s.graph, &s.plan, &s.output.provenance);
        (s.output, sc)
    };
    let dir = out_dir(cli)?;
    let name = if lin { format!("{}.lin", stem(input)) } else { stem(input) };
    let src_path = dir.join(format!("{name}.instr.lcl"));
    write(&src_path, &out.source())?;
    write(&dir.join(format!("{name}.synth.json")), &to_json(&sidecar))?;
    let nlocks = sidecar["locks"].as_array().map_or(0, |a| a.len());
    eprintln!("wrote {} ({nlocks} locks)", src_path.display());
    Ok((out.lib, src_path))
}

/// Everything needed to replay a violation.
#[derive(Serialize, Deserialize)]
struct WitnessFile {
    client: ClientSpec,
    check_lin: bool,
    #[serde(default)]
    tables: Option<Tables>,
    status: serde_json::Value,
    schedule: Vec<Step>,
    history: String,
}

fn options(cli: &Cli, check_lin: bool) -> ExploreOptions {
    ExploreOptions { bound: cli.bound, check_lin, check_lp_order: false }
}

fn table_sets(cli: &Cli) -> Result<Vec<Option<Tables>>> {
    match &cli.sweep_tables {
        None => Ok(vec![None]),
        Some(p) => {
            let sets: Vec<Tables> =
                serde_json::from_str(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if sets.is_empty() {
                return Err(CliError::Usage(format!("{}: empty table list", p.display())));
            }
            Ok(sets.into_iter().map(Some).collect())
        }
    }
}

fn summary(v: &Verdict) -> String {
    format!(
        "{} ({} states, {} executions, {})",
        v.status,
        v.states,
        v.executions,
        if v.exhaustive { "exhaustive" } else { "not exhaustive" }
    )
}

fn verify(cli: &Cli, lib: &Library, client: &ClientSpec, name: &str, check_lin: bool) -> Result<()> {
    let dir = out_dir(cli)?;
    let mut reports = Vec::new();
    let mut failure: Option<(Witness, Option<Tables>)> = None;
    let mut depth_hit = false;
    for tables in table_sets(cli)? {
        let mut c = client.clone();
        if let Some(t) = &tables {
            c.tables = t.clone();
        }
        let v = explore(lib, &c, options(cli, check_lin)).map_err(|e| CliError::Usage(e.to_string()))?;
        eprintln!("{}", summary(&v));
        depth_hit |= !v.exhaustive;
        if let (None, Some(w)) = (&failure, v.violations.iter().find(|(c, _)| **c != lockweaver::mc::Category::DepthExceeded)) {
            failure = Some((w.1.clone(), tables.clone()));
        }
        reports.push(json!({ "tables": tables, "verdict": v }));
    }
    write(&dir.join(format!("{name}.verdict.json")), &to_json(&reports))?;
    if let Some((w, tables)) = failure {
        let mut c = client.clone();
        if let Some(t) = &tables {
            c.tables = t.clone();
        }
        let file = WitnessFile {
            client: c,
            check_lin,
            tables,
            status: serde_json::to_value(&w.status).expect("serializable"),
            schedule: w.schedule.clone(),
            history: w.history.to_string(),
        };
        let path = dir.join(format!("{name}.witness.json"));
        write(&path, &to_json(&file))?;
        eprintln!("schedule: {}", w.schedule.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "));
        eprintln!("history: {}", w.history);
        eprintln!("witness written to {}", path.display());
        return Err(CliError::Rejected(w.status.to_string()));
    }
    if depth_hit {
        return Err(CliError::Budget("depth bound reached; exploration not exhaustive".into()));
    }
    Ok(())
}

fn replay_cmd(cli: &Cli, lib: &Library, client: Option<ClientSpec>, path: &Path) -> Result<()> {
    let w: WitnessFile = serde_json::from_str(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let client = client
        .map(|mut c| {
            if let Some(t) = &w.tables {
                c.tables = t.clone();
            }
            c
        })
        .unwrap_or(w.client);
    let r = replay(lib, &client, &w.schedule, options(cli, w.check_lin || cli.check_lin)).map_err(|e| CliError::Rejected(e.to_string()))?;
    for line in &r.trace {
        println!("{line}");
    }
    println!("history: {}", r.history);
    println!("status: {}", r.status);
    match r.status {
        Status::Ok => Ok(()),
        Status::DepthExceeded => Err(CliError::Budget(r.status.to_string())),
        s => Err(CliError::Rejected(s.to_string())),
    }
}

/// Client specs shipped next to the input: `clients/<name>*.json`.
fn bundled_clients(input: &Path) -> Vec<PathBuf> {
    let name = stem(input);
    let dir = input.parent().unwrap_or(Path::new(".")).join("clients");
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            let f = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            f.starts_with(&name) && f.ends_with(".json")
        })
        .collect();
    out.sort();
    out
}

fn pipeline(cli: &Cli, ck: &Checker, input: &Path, lin: bool) -> Result<()> {
    let lib = load(cli, input)?;
    let a = &lib.annotations;
    if a.inv.is_empty() && a.basis.is_empty() && a.seeds.is_empty() {
        return Err(CliError::Usage(format!("{}: no annotations and no seeds", input.display())));
    }
    let (_, path) = synth_cmd(cli, ck, input, lin)?;
    // Verify what was written, not the in-memory result.
    let out = parse_instrumented(&read(&path)?).map_err(|e| CliError::Rejected(format!("{}: {e}", path.display())))?;
    let clients = match &cli.client {
        Some(c) => vec![c.clone()],
        None => bundled_clients(input),
    };
    if clients.is_empty() {
        eprintln!("no client specs found; skipping verification");
    }
    for c in clients {
        eprintln!("verifying {} with {}", path.display(), c.display());
        let spec = load_client(&c)?;
        let name = format!("{}.{}", stem(&path), c.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        verify(cli, &out, &spec, &name, lin || cli.check_lin)?;
    }
    Ok(())
}
