//! CLI subcommands. Exit codes: 0 success, 2 config error, 3 runtime
//! failure.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use dfrl_core::arena::{ArenaSpec, NUM_ACTIONS, NUM_SENSOR_STATES};
use dfrl_core::federation::{run_round, MobileAgent, NodeId};
use dfrl_core::rl::{Algorithm, LearningParams};
use dfrl_transport::{node_serve, LockstepConfig, NodeConfig, RemoteNode};

use crate::error::{HarnessError, Result};
use crate::metrics_io::emit_csv;
use crate::runner::{
    run_experiment, wait_for_boundary, LISTENING_PREFIX, METRICS_WRITTEN_PREFIX,
};
use crate::spec::{split_node_seed, ExperimentSpec};
use crate::summary::summarize;

#[derive(Parser)]
#[command(
    name = "dfrl",
    version,
    about = "Decentralized federated tabular RL: nodes, mobile agent, experiment runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run an experiment described by a TOML config file.
    Run(RunArgs),
    /// Start one node daemon.
    Node(NodeArgs),
    /// Drive federation rounds against already-running node daemons.
    Agent(AgentArgs),
    /// Summarize metrics CSVs (files or run output directories).
    Summarize(SummarizeArgs),
    /// Emit a gnuplot script for a run's CSVs.
    PlotScript(PlotScriptArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Print a summary table after the run.
    #[arg(long)]
    pub summarize: bool,
}

#[derive(Args)]
pub struct NodeArgs {
    #[arg(long, env = "DFRL_NODE_ID")]
    pub node_id: NodeId,
    /// Bind address, host:port (port 0 picks an ephemeral port).
    #[arg(long, env = "DFRL_LISTEN", default_value = "127.0.0.1:0")]
    pub listen: String,
    /// q | sarsa
    #[arg(long, env = "DFRL_ALGO", default_value = "q")]
    pub algo: String,
    /// Arena as WxHxB, e.g. 12x12x2.
    #[arg(long, env = "DFRL_ARENA", default_value = "12x12x2")]
    pub arena: String,
    /// Node seed; arena and policy streams are derived from it.
    #[arg(long, env = "DFRL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// alpha,gamma,epsilon,epsilon_decay,epsilon_min
    #[arg(long, env = "DFRL_PARAMS")]
    pub params: Option<String>,
    #[arg(long, env = "DFRL_ITERATIONS", default_value_t = 25_000)]
    pub iterations: u64,
    #[arg(long, env = "DFRL_METRICS_EVERY", default_value_t = 1)]
    pub metrics_every: u64,
    /// Write this node's metrics CSV here once learning completes.
    #[arg(long, env = "DFRL_METRICS_OUT")]
    pub metrics_out: Option<PathBuf>,
    /// Lockstep respite; 0 disables the barrier (free-running node).
    #[arg(long, env = "DFRL_RESPITE_M", default_value_t = 0)]
    pub respite_m: u64,
    /// Lockstep rounds; 0 derives iterations/respite_m.
    #[arg(long, env = "DFRL_ROUNDS_MAX", default_value_t = 0)]
    pub rounds_max: u32,
    /// Sleep this long after each iteration (64 restores paper pacing).
    #[arg(long, env = "DFRL_PACE_MS")]
    pub pace_ms: Option<u64>,
}

#[derive(Args)]
pub struct AgentArgs {
    /// Itinerary as id=host:port pairs, comma separated, in visit order.
    #[arg(long)]
    pub targets: String,
    /// avg | running-mean | max
    #[arg(long, default_value = "avg")]
    pub method: String,
    #[arg(long, default_value_t = 500)]
    pub respite_m: u64,
    #[arg(long, default_value_t = 1)]
    pub rounds: u32,
    /// Restrict visits to nodes running this algorithm (q | sarsa).
    #[arg(long)]
    pub algo_tag: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub agent_id: u32,
    #[arg(long, default_value_t = 10)]
    pub timeout_secs: u64,
    /// Time respites off the first node only instead of waiting for all.
    #[arg(long)]
    pub free_running: bool,
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// CSV files or directories containing node_*.csv.
    pub paths: Vec<PathBuf>,
}

#[derive(Args)]
pub struct PlotScriptArgs {
    /// Run output directory holding node_*.csv.
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Write the script here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::Node(args) => node_command(args),
        Command::Agent(args) => agent_command(args),
        Command::Summarize(args) => summarize_command(args),
        Command::PlotScript(args) => plot_script_command(args),
    }
}

fn run_command(args: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::from_toml_file(&args.config)?;
    if let Some(dir) = args.output_dir {
        spec.output_dir = dir;
    }
    let outcome = run_experiment(&spec)?;
    println!(
        "run complete: {} rounds, manifest {}",
        outcome.rounds_completed,
        outcome.manifest_path.display()
    );
    if args.summarize {
        let table = summarize(&outcome.csv_paths)?;
        print!("{table}");
    }
    Ok(())
}

fn parse_arena(text: &str, seed: u64) -> Result<ArenaSpec> {
    let parts: Vec<&str> = text.split('x').collect();
    let err = || HarnessError::config(format!("arena must be WxHxB, got {text:?}"));
    if parts.len() != 3 {
        return Err(err());
    }
    let spec = ArenaSpec {
        width: parts[0].parse().map_err(|_| err())?,
        height: parts[1].parse().map_err(|_| err())?,
        num_blocks: parts[2].parse().map_err(|_| err())?,
        seed,
    };
    spec.build()
        .map_err(|e| HarnessError::config(e.to_string()))?;
    Ok(spec)
}

fn parse_params(text: &str) -> Result<LearningParams> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 5 {
        return Err(HarnessError::config(format!(
            "params must be alpha,gamma,epsilon,epsilon_decay,epsilon_min, got {text:?}"
        )));
    }
    let get = |i: usize, name: &str| -> Result<f64> {
        fields[i]
            .parse()
            .map_err(|_| HarnessError::config(format!("malformed {name} in params: {text:?}")))
    };
    let params = LearningParams {
        alpha: get(0, "alpha")?,
        gamma: get(1, "gamma")?,
        epsilon: get(2, "epsilon")?,
        epsilon_decay: get(3, "epsilon_decay")?,
        epsilon_min: get(4, "epsilon_min")?,
    };
    params
        .validate()
        .map_err(|e| HarnessError::config(e.to_string()))?;
    Ok(params)
}

fn node_command(args: NodeArgs) -> Result<()> {
    let algorithm: Algorithm = args.algo.parse().map_err(HarnessError::Config)?;
    let (arena_seed, policy_seed) = split_node_seed(args.seed);
    let arena = parse_arena(&args.arena, arena_seed)?;
    let params = match &args.params {
        Some(text) => parse_params(text)?,
        None => LearningParams::default(),
    };
    let lockstep = if args.respite_m > 0 {
        let rounds_max = if args.rounds_max > 0 {
            args.rounds_max
        } else {
            u32::try_from(args.iterations / args.respite_m).unwrap_or(u32::MAX)
        };
        Some(LockstepConfig {
            respite_m: args.respite_m,
            rounds_max,
        })
    } else {
        None
    };
    if args.metrics_every == 0 {
        return Err(HarnessError::config("metrics-every must be at least 1"));
    }

    let server = node_serve(NodeConfig {
        node_id: args.node_id,
        listen: args.listen,
        algorithm,
        arena,
        params,
        policy_seed,
        iterations_total: args.iterations,
        metrics_every: args.metrics_every,
        lockstep,
        pace_ms: args.pace_ms,
    })
    .map_err(|e| HarnessError::runtime(e.to_string()))?;
    println!("{LISTENING_PREFIX}{}", server.local_addr());

    let records = server.wait_done();
    if let Some(path) = &args.metrics_out {
        emit_csv(&records, path)?;
        println!("{METRICS_WRITTEN_PREFIX}{}", path.display());
    }
    // Keep serving status and snapshot requests until killed.
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn parse_targets(text: &str) -> Result<Vec<(NodeId, String)>> {
    let mut targets = Vec::new();
    for part in text.split(',') {
        let (id, addr) = part.split_once('=').ok_or_else(|| {
            HarnessError::config(format!("target must be id=host:port, got {part:?}"))
        })?;
        let id: NodeId = id
            .parse()
            .map_err(|_| HarnessError::config(format!("malformed node id in {part:?}")))?;
        targets.push((id, addr.to_string()));
    }
    if targets.is_empty() {
        return Err(HarnessError::config("at least one target is required"));
    }
    Ok(targets)
}

fn agent_command(args: AgentArgs) -> Result<()> {
    let targets = parse_targets(&args.targets)?;
    let method = args.method.parse().map_err(HarnessError::Config)?;
    let algo_tag: Option<Algorithm> = match &args.algo_tag {
        Some(text) => Some(text.parse().map_err(HarnessError::Config)?),
        None => None,
    };
    if args.respite_m == 0 {
        return Err(HarnessError::config("respite-m must be at least 1"));
    }

    let timeout = Duration::from_secs(args.timeout_secs);
    let mut remotes: Vec<RemoteNode> = targets
        .iter()
        .map(|(id, addr)| RemoteNode::new(*id, addr.clone(), timeout))
        .collect();
    let itinerary: Vec<NodeId> = targets.iter().map(|(id, _)| *id).collect();
    let mut agent = MobileAgent::new(
        args.agent_id,
        itinerary,
        method,
        algo_tag,
        NUM_SENSOR_STATES,
        NUM_ACTIONS,
    )
    .map_err(|e| HarnessError::config(e.to_string()))?;

    for round in 1..=args.rounds {
        let boundary = u64::from(round) * args.respite_m;
        if args.free_running {
            wait_for_boundary(&mut remotes[..1], boundary)?;
        } else {
            wait_for_boundary(&mut remotes, boundary)?;
        }
        let report = run_round(&mut agent, &mut remotes)?;
        println!("{report}");
    }
    Ok(())
}

/// Expands directories to their node_*.csv files.
fn expand_csv_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().is_some_and(|e| e == "csv")
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("node_"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(path.clone());
        }
    }
    if out.is_empty() {
        return Err(HarnessError::config("no CSV files found"));
    }
    Ok(out)
}

fn summarize_command(args: SummarizeArgs) -> Result<()> {
    if args.paths.is_empty() {
        return Err(HarnessError::config("give CSV files or a run directory"));
    }
    let paths = expand_csv_paths(&args.paths)?;
    let table = summarize(&paths)?;
    print!("{table}");
    Ok(())
}

fn plot_script_command(args: PlotScriptArgs) -> Result<()> {
    let paths = expand_csv_paths(std::slice::from_ref(&args.output_dir))?;
    let prefix = args.output_dir.join("plots");
    let script = crate::plot::plot_script(&paths, &prefix.to_string_lossy());
    match args.out {
        Some(path) => std::fs::write(path, script)?,
        None => print!("{script}"),
    }
    Ok(())
}
