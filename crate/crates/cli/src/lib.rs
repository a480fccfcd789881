//! `pidalign` subcommands. Each `cmd_*` function is usable on its own; the
//! binary only parses arguments and maps errors to exit codes
//! (1 = invalid input, 2 = runtime failure).

use std::collections::BTreeSet;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pidalign_core::consistency::{validate_mapping, ConsistencyError, InconsistencyReport};
use pidalign_core::matcher::{match_graphs_with, Basis, MatchError};
use pidalign_core::scene::EquipmentAttach;
use pidalign_core::{
    build_functional_graph, extract_mapping, get_inconsistencies, remove_equipment, AlignmentGraph, Mapping,
    MatchConfig, RawPid, SceneConfig, SceneInput, Vocabulary,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Base configuration, loadable with `--config`; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneConfig,
    pub matcher: MatchConfig,
}

#[derive(Debug, Parser)]
#[command(name = "pidalign", version, about = "Align 3D scene graphs with P&ID functional graphs")]
pub struct Cli {
    /// JSON configuration used as the base layer for all options.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a simplified scene graph from pipe primitives and equipment.
    BuildScene(BuildSceneArgs),
    /// Normalize a digitized P&ID into a functional graph.
    BuildFunctional(BuildFunctionalArgs),
    /// Match a scene graph to a functional graph.
    Match(MatchArgs),
    /// Detect inconsistencies of an existing mapping.
    Check(CheckArgs),
    /// Serve alignment projects over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AttachArg {
    ClosestOnly,
    AllWithinThreshold,
}

#[derive(Debug, Args)]
pub struct BuildSceneArgs {
    pub scene: PathBuf,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
    /// Maximum gap between linked primitives, in meters.
    #[arg(long)]
    pub link_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub equipment_attach: Option<AttachArg>,
    #[arg(long)]
    pub max_equipment_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the graph before simplification.
    #[arg(long, value_name = "FILE")]
    pub linked_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildFunctionalArgs {
    pub pid: PathBuf,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
    /// Label vocabulary, one label per line, `alias=canonical` allowed.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Equipment ids to splice out of the diagram before normalizing.
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub remove_equipment: Vec<String>,
    /// Node ids exempt from simplification.
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub keep_hidden: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Adjacency,
    TwoHop,
    AttributeSim,
}

#[derive(Debug, Args)]
pub struct MatcherFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub weight_lr: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub attribute_weight: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub bases: Option<Vec<BasisArg>>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Directory receiving mapping.json, coupling.bin, coupling.json and
    /// report.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Inconsistency ids to report as accepted.
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub accept: Vec<String>,
    #[command(flatten)]
    pub matcher: MatcherFlags,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    pub mapping: PathBuf,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', value_name = "ID")]
    pub accept: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub project_dir: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))
}

/// Parses JSON, reporting the line and column of syntax errors.
fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

fn read_graph(path: &Path) -> CliResult<AlignmentGraph> {
    let doc = read_json(path)?;
    AlignmentGraph::from_doc(doc).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn read_vocab(path: Option<&Path>) -> CliResult<Option<Vocabulary>> {
    path.map(|p| read_text(p).map(|t| Vocabulary::parse(&t))).transpose()
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        Some(p) => read_json(p),
        None => Ok(Config::default()),
    }
}

impl BuildSceneArgs {
    pub fn apply(&self, cfg: &mut SceneConfig) {
        if let Some(v) = self.link_threshold {
            cfg.link_threshold = v;
        }
        if let Some(v) = self.equipment_attach {
            cfg.equipment_attach = match v {
                AttachArg::ClosestOnly => EquipmentAttach::ClosestOnly,
                AttachArg::AllWithinThreshold => EquipmentAttach::AllWithinThreshold,
            };
        }
        if let Some(v) = self.max_equipment_points {
            cfg.max_equipment_points = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

impl MatcherFlags {
    pub fn apply(&self, cfg: &mut MatchConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(seed, epsilon, outer_iters, sinkhorn_iters, weight_lr, tol, attribute_weight);
        if let Some(bases) = &self.bases {
            cfg.bases = bases
                .iter()
                .map(|b| match b {
                    BasisArg::Adjacency => Basis::Adjacency,
                    BasisArg::TwoHop => Basis::TwoHop,
                    BasisArg::AttributeSim => Basis::AttributeSim,
                })
                .collect();
        }
    }
}

pub fn cmd_build_scene(args: &BuildSceneArgs, cfg: &SceneConfig) -> CliResult<()> {
    let scene: SceneInput = read_json(&args.scene)?;
    let built = scene.build(cfg).map_err(|e| CliError::Invalid(e.to_string()))?;
    for w in &built.warnings {
        eprintln!("warning: pipe `{}` has degree {} but {} ports", w.node_id, w.degree, w.port_count);
    }
    if let Some(path) = &args.linked_out {
        write(path, built.linked.to_canonical_json().as_bytes())?;
    }
    write(&args.out, built.graph.to_canonical_json().as_bytes())
}

pub fn cmd_build_functional(args: &BuildFunctionalArgs) -> CliResult<()> {
    let mut raw: RawPid = read_json(&args.pid)?;
    let vocab = read_vocab(args.vocab.as_deref())?;
    if !args.remove_equipment.is_empty() {
        raw = remove_equipment(&raw, &args.remove_equipment).map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    let built = build_functional_graph(&raw, &args.keep_hidden, vocab.as_ref())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    for (id, label) in &built.unknown_labels {
        eprintln!("warning: `{id}` has label `{label}` outside the vocabulary");
    }
    write(&args.out, built.graph.to_canonical_json().as_bytes())
}

fn match_error(e: MatchError) -> CliError {
    match e {
        MatchError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    }
}

pub const MAPPING_FILE: &str = "mapping.json";
pub const COUPLING_FILE: &str = "coupling.bin";
pub const COUPLING_SIDECAR_FILE: &str = "coupling.json";
pub const REPORT_FILE: &str = "report.json";

pub fn cmd_match(args: &MatchArgs, cfg: &MatchConfig) -> CliResult<()> {
    let s = read_graph(&args.source)?;
    let f = read_graph(&args.target)?;
    let vocab = read_vocab(args.vocab.as_deref())?;
    let coupling = match_graphs_with(&s, &f, cfg, &[], vocab.as_ref(), &mut |p| {
        log::info!("iteration {}/{} objective {:.6e}", p.iteration, p.total, p.objective);
    })
    .map_err(match_error)?;
    let mapping = extract_mapping(&coupling);
    let accepted: BTreeSet<String> = args.accept.iter().cloned().collect();
    let report = InconsistencyReport { round: 0, items: get_inconsistencies(&mapping, &s, &f, &accepted) };

    let dir = &args.out_dir;
    write(&dir.join(MAPPING_FILE), mapping.to_json().as_bytes())?;
    write(&dir.join(COUPLING_FILE), &coupling.to_le_bytes())?;
    let mut sidecar = serde_json::to_string_pretty(&coupling.sidecar()).expect("sidecar serializes");
    sidecar.push('\n');
    write(&dir.join(COUPLING_SIDECAR_FILE), sidecar.as_bytes())?;
    write(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    eprintln!("{} inconsistencies ({} open)", report.items.len(), report.open_count());
    Ok(())
}

pub fn cmd_check(args: &CheckArgs) -> CliResult<()> {
    let s = read_graph(&args.source)?;
    let f = read_graph(&args.target)?;
    let mapping: Mapping = read_json(&args.mapping)?;
    validate_mapping(&mapping, &s, &f).map_err(|e: ConsistencyError| CliError::Invalid(e.to_string()))?;
    let accepted: BTreeSet<String> = args.accept.iter().cloned().collect();
    let report = InconsistencyReport { round: 0, items: get_inconsistencies(&mapping, &s, &f, &accepted) };
    write(&args.out, report.to_json().as_bytes())
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    if args.project_dir.exists() && !args.project_dir.is_dir() {
        return Err(CliError::Invalid(format!("{} is not a directory", args.project_dir.display())));
    }
    let state = pidalign_service::AppState::new(&args.project_dir)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", args.project_dir.display())))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime
        .block_on(pidalign_service::serve(state, SocketAddr::new(args.host, args.port)))
        .map_err(|e| CliError::Runtime(format!("cannot serve on {}:{}: {e}", args.host, args.port)))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::BuildScene(a) => a.apply(&mut config.scene),
        Command::Match(a) => a.matcher.apply(&mut config.matcher),
        _ => {}
    }
    config.scene.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    config.matcher.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
        return Ok(());
    }
    match &cli.command {
        Command::BuildScene(a) => cmd_build_scene(a, &config.scene),
        Command::BuildFunctional(a) => cmd_build_functional(a),
        Command::Match(a) => cmd_match(a, &config.matcher),
        Command::Check(a) => cmd_check(a),
        Command::Serve(a) => cmd_serve(a),
    }
}
