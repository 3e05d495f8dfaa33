//! The `banditry` command line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use banditry_core::document::canonical_string;
use banditry_core::policy::PolicyConfig;
use banditry_core::simulator::{Environment, Simulation};
use clap::{Args, Parser, Subcommand};
use rand::RngCore;

use crate::client::Client;
use crate::serve::{self, ServeConfig};

pub const ADMIN_TOKEN_ENV: &str = "BANDITRY_ADMIN_TOKEN";
pub const SERVER_ENV: &str = "BANDITRY_SERVER";

#[derive(Debug, Parser)]
#[command(
    name = "banditry",
    version,
    about = "Contextual bandit decision service"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP server.
    Serve(ServeArgs),
    /// Manage experiments on a running server.
    Exp {
        #[command(flatten)]
        remote: Remote,
        #[command(subcommand)]
        command: ExpCommand,
    },
    /// Inspect θ of an experiment.
    Theta {
        #[command(flatten)]
        remote: Remote,
        #[command(subcommand)]
        command: ThetaCommand,
    },
    /// Export interaction logs.
    Log {
        #[command(flatten)]
        remote: Remote,
        #[command(subcommand)]
        command: LogCommand,
    },
    /// Run a policy against a synthetic environment, in process.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value = "banditry-data")]
    pub data_dir: PathBuf,
    /// Token for the management API. A random one is generated and printed
    /// when neither this flag nor the environment variable is set.
    #[arg(long, env = ADMIN_TOKEN_ENV, hide_env_values = true)]
    pub admin_token: Option<String>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    /// fsync every journal append.
    #[arg(long)]
    pub sync: bool,
    /// Fold the θ append log into a snapshot after this many writes.
    #[arg(long, default_value_t = 10_000)]
    pub compact_every: u64,
}

#[derive(Debug, Args)]
pub struct Remote {
    /// Base URL of the server.
    #[arg(long, global = true, env = SERVER_ENV, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[arg(long, global = true, env = ADMIN_TOKEN_ENV, hide_env_values = true, default_value = "")]
    pub admin_token: String,
}

impl Remote {
    fn client(&self) -> Client {
        Client::new(&self.server, &self.admin_token)
    }
}

#[derive(Debug, Subcommand)]
pub enum ExpCommand {
    /// Create an experiment; prints its id and key.
    Create {
        #[arg(long)]
        name: String,
        /// A policy config document.
        #[arg(long)]
        policy_file: PathBuf,
    },
    /// Replace the policy config of an experiment.
    Update {
        #[arg(long)]
        id: u64,
        #[arg(long)]
        policy_file: PathBuf,
    },
    List,
    Delete {
        #[arg(long)]
        id: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum ThetaCommand {
    /// Print θ records, one canonical document per line.
    Dump {
        #[arg(long)]
        id: u64,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        value: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LogCommand {
    /// Write the whole log as newline-delimited JSON in sequence order.
    Export {
        #[arg(long)]
        id: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `bernoulli:0.5,0.6`, `bernoulli:A=0.5,B=0.6` or
    /// `goal:alpha=5,beta1=2,beta2=-1,sigma=0.5[,users=N][,weathers=sunny|rainy]`.
    #[arg(long)]
    pub env: String,
    /// Policy config document; defaults to Thompson sampling over the
    /// environment's arms, or linear_goal for goal setting.
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    /// Config of a nested child as `ID=FILE`; repeatable.
    #[arg(long = "child", value_name = "ID=FILE")]
    pub children: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    pub horizon: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub replications: u32,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn read_config(path: &Path) -> Result<PolicyConfig, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn print_lines<'a>(docs: impl IntoIterator<Item = &'a serde_json::Value>) -> CliResult {
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for doc in docs {
        writeln!(out, "{}", canonical_string(doc))?;
    }
    out.flush()?;
    Ok(())
}

fn random_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Serve(args) => {
            let admin_token = match args.admin_token.filter(|t| !t.is_empty()) {
                Some(t) => t,
                None => {
                    let t = random_token();
                    eprintln!("generated admin token: {t}");
                    t
                }
            };
            serve::run(ServeConfig {
                addr: SocketAddr::new(args.host, args.port),
                data_dir: args.data_dir,
                admin_token,
                threads: args.threads,
                sync: args.sync,
                compact_every: args.compact_every,
            })?;
        }
        Command::Exp { remote, command } => {
            let client = remote.client();
            match command {
                ExpCommand::Create { name, policy_file } => {
                    let created = client.create(&name, &read_config(&policy_file)?)?;
                    print_lines([&created])?;
                }
                ExpCommand::Update { id, policy_file } => {
                    let updated = client.update(id, &read_config(&policy_file)?)?;
                    print_lines([&updated])?;
                }
                ExpCommand::List => {
                    let mut list = client.list()?;
                    list.sort_by_key(|e| e["id"].as_u64());
                    print_lines(&list)?;
                }
                ExpCommand::Delete { id } => client.delete(id)?,
            }
        }
        Command::Theta { remote, command } => match command {
            ThetaCommand::Dump {
                id,
                name,
                key,
                value,
            } => {
                let records =
                    remote
                        .client()
                        .theta(id, name.as_deref(), key.as_deref(), value.as_deref())?;
                let docs: Vec<serde_json::Value> = records
                    .iter()
                    .map(|r| serde_json::to_value(r).expect("records serialize"))
                    .collect();
                print_lines(&docs)?;
            }
        },
        Command::Log { remote, command } => match command {
            LogCommand::Export { id, out } => {
                let records = remote.client().export_log(id)?;
                let file = fs::File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
                let mut w = BufWriter::new(file);
                for r in &records {
                    let doc = serde_json::to_value(r).expect("records serialize");
                    writeln!(w, "{}", canonical_string(&doc))?;
                }
                w.flush()?;
                eprintln!("exported {} records", records.len());
            }
        },
        Command::Simulate(args) => simulate(args)?,
    }
    Ok(())
}

fn default_config(env: &Environment) -> PolicyConfig {
    match env {
        Environment::BernoulliArms { arms, .. } => PolicyConfig::new(
            "thompson_bernoulli",
            serde_json::json!({"arms": arms.keys().collect::<Vec<_>>()}),
        ),
        Environment::GoalSetting(_) => PolicyConfig::new("linear_goal", serde_json::json!({})),
    }
}

fn simulate(args: SimulateArgs) -> CliResult {
    let env: Environment = args.env.parse()?;
    let config = match &args.policy_file {
        Some(path) => read_config(path)?,
        None => default_config(&env),
    };
    let mut children = BTreeMap::new();
    for arg in &args.children {
        let (id, path) = arg
            .split_once('=')
            .ok_or_else(|| format!("--child expects ID=FILE, got {arg:?}"))?;
        let id: u64 = id.parse().map_err(|_| format!("bad child id {id:?}"))?;
        children.insert(id, read_config(Path::new(path))?);
    }
    let report = Simulation::new(env, config, args.horizon, args.seed, args.replications)
        .with_children(children)
        .run()?;
    let json = report.to_json();
    match &args.out {
        Some(path) => fs::write(path, json).map_err(|e| format!("{}: {e}", path.display()))?,
        None => std::io::stdout().write_all(json.as_bytes())?,
    }
    Ok(())
}
