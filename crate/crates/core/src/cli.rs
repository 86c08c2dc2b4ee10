//! Command-line front end: local scenario runs, chain verification, the
//! consensus benchmark, the TCP proxy, the API server, and a client for every
//! endpoint.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::chain::{measure_consensus_latency, verify_export, ConsensusConfig, ElementId, Ledger, Role};
use crate::gateway::{self, Client, ClientError, DeskConfig, ADDR_ENV, DEFAULT_ADDR};
use crate::intent::{IntentRequest, Preference, Verb};
use crate::middleware::service::{self, ServiceConfig};
use crate::middleware::{Middleware, MiddlewareConfig};
use crate::sched::MS;
use crate::simnet::{self, ScenarioSpec};

#[derive(Parser, Debug)]
#[command(name = "ledgernet", version, about = "Ledger-backed OpenFlow middleware and defense simulator")]
pub struct Cli {
    /// Server address to bind (serve) or talk to (client commands).
    #[arg(long, global = true, env = ADDR_ENV, default_value = DEFAULT_ADDR)]
    pub addr: String,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum VerbArg {
    RemoveDevice,
    RecalculatePaths,
    ProtectService,
    LimitTraffic,
}

impl From<VerbArg> for Verb {
    fn from(v: VerbArg) -> Verb {
        match v {
            VerbArg::RemoveDevice => Verb::RemoveDevice,
            VerbArg::RecalculatePaths => Verb::RecalculatePaths,
            VerbArg::ProtectService => Verb::ProtectService,
            VerbArg::LimitTraffic => Verb::LimitTraffic,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum PreferenceArg {
    MaxPerformance,
    MaxProtection,
    None,
}

impl From<PreferenceArg> for Preference {
    fn from(p: PreferenceArg) -> Preference {
        match p {
            PreferenceArg::MaxPerformance => Preference::MaxPerformance,
            PreferenceArg::MaxProtection => Preference::MaxProtection,
            PreferenceArg::None => Preference::None,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum AlgArg {
    Pbft,
    Rpbft,
    Both,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Serve the HTTP API over a live simulation.
    Serve {
        /// Virtual seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario to run live instead of the default desk network.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run a scenario locally and write metrics.csv, chain.ndjson, events.ndjson, summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the middleware as a TCP proxy between real switches and controllers.
    Proxy {
        #[arg(long, default_value = "127.0.0.1:6633")]
        switch_listen: SocketAddr,
        /// Controllers attach here with `ATTACH <id> <openflow-addr>`.
        #[arg(long, default_value = "127.0.0.1:6634")]
        controller_listen: SocketAddr,
        /// Controller ids registered on the ledger at startup.
        #[arg(long, value_delimiter = ',')]
        register: Vec<String>,
        /// Register unknown controllers on first attach.
        #[arg(long)]
        open_enrollment: bool,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long = "delay-ms", default_value_t = 10)]
        delay_ms: u64,
    },
    /// Re-verify the hash links of a chain export.
    Verify { file: PathBuf },
    /// Consensus latency sweep; prints per-round latencies as CSV.
    Bench {
        #[arg(long, value_enum, default_value_t = AlgArg::Both)]
        algorithm: AlgArg,
        #[arg(long, value_delimiter = ',', default_values_t = [7usize, 19, 31])]
        nodes: Vec<usize>,
        /// One-way link delays in ms.
        #[arg(long = "delay-ms", value_delimiter = ',', default_values_t = [10u64, 20, 50, 100])]
        delay_ms: Vec<u64>,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// One mean/p50/p95 row per cell instead of per-round rows.
        #[arg(long)]
        summary: bool,
    },
    /// GET /chain/head
    Head,
    /// GET /chain/blocks/{height}
    Block { height: u64 },
    /// GET /chain/tx/{hash}
    Tx { hash: String },
    /// GET /registry
    Registry,
    /// POST /intents
    Intent {
        #[arg(value_enum)]
        verb: VerbArg,
        target: String,
        #[arg(long, value_enum, default_value_t = PreferenceArg::None)]
        preference: PreferenceArg,
    },
    /// GET /intents/{id}/report
    Report { id: u64 },
    /// GET /topology
    Topology,
    /// GET /mapping
    Mapping,
    /// POST /mapping/remap
    Remap { switch: String, controller: String },
    /// POST /elements/{id}/evict
    Evict { id: String },
    /// POST /scenarios/run
    Scenario {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// GET /events, printing one JSON line per event.
    Events {
        #[arg(long, default_value_t = 0)]
        from_seq: u64,
        /// Stop after this many events.
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Exit statuses: 0 ok, 1 caller error, 2 internal failure.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.exit_code() {
            1 => Failure::User(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn print_json(v: &impl Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Failure::Internal(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{s}");
    Ok(())
}

fn load_scenario(path: &std::path::Path) -> Result<ScenarioSpec, Failure> {
    ScenarioSpec::load(path).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    let client = || Client::new(&cli.addr);
    match cli.cmd {
        Cmd::Serve { speed, seed, scenario } => {
            let addr: SocketAddr = cli.addr.parse().map_err(|e| Failure::User(format!("bad address {}: {e}", cli.addr)))?;
            let scenario = match scenario {
                Some(p) => load_scenario(&p)?,
                None => gateway::desk_scenario(seed),
            };
            let cfg = DeskConfig { scenario, speed, ..Default::default() };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
            eprintln!("listening on {addr}");
            rt.block_on(gateway::serve(addr, cfg)).map_err(|e| match e {
                gateway::ServeError::BindFailure { .. } => Failure::User(e.to_string()),
                e => Failure::Internal(e.to_string()),
            })
        }
        Cmd::Run { scenario, seed, out } => {
            let mut spec = load_scenario(&scenario)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let result = simnet::run(spec).map_err(|e| Failure::User(e.to_string()))?;
            result.write_to(&out).map_err(|e| Failure::Internal(format!("{}: {e}", out.display())))?;
            print_json(&result.summary())
        }
        Cmd::Proxy { switch_listen, controller_listen, register, open_enrollment, nodes, delay_ms } => {
            let mut ledger = Ledger::new(ConsensusConfig::pbft(nodes, delay_ms * MS), 0).map_err(|e| Failure::User(e.to_string()))?;
            let mut mw = Middleware::new(MiddlewareConfig { open_enrollment, ..Default::default() });
            mw.bootstrap(&mut ledger).map_err(|e| Failure::Internal(e.to_string()))?;
            for id in &register {
                ledger.register(&ElementId::new(id.clone()), Role::Controller, Vec::new()).map_err(|e| Failure::Internal(e.to_string()))?;
            }
            let cfg = ServiceConfig { switch_addr: switch_listen, controller_addr: controller_listen, ..Default::default() };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
            rt.block_on(async move {
                let (handle, mut events) = service::spawn(mw, ledger, cfg).await.map_err(|e| Failure::User(format!("bind: {e}")))?;
                eprintln!("switches -> {}, controllers attach at {}", handle.switch_addr, handle.controller_addr);
                while let Some(ev) = events.recv().await {
                    let line = serde_json::to_string(&ev).unwrap_or_default();
                    if writeln!(std::io::stdout().lock(), "{line}").is_err() {
                        break;
                    }
                }
                Ok(())
            })
        }
        Cmd::Verify { file } => {
            let f = std::fs::File::open(&file).map_err(|e| Failure::User(format!("{}: {e}", file.display())))?;
            let n = verify_export(std::io::BufReader::new(f)).map_err(|e| Failure::User(format!("verification failed: {e}")))?;
            println!("ok: {n} blocks");
            Ok(())
        }
        Cmd::Bench { algorithm, nodes, delay_ms, rounds, seed, summary } => {
            let algs: &[fn(usize, u64) -> ConsensusConfig] = match algorithm {
                AlgArg::Pbft => &[ConsensusConfig::pbft],
                AlgArg::Rpbft => &[ConsensusConfig::rpbft],
                AlgArg::Both => &[ConsensusConfig::pbft, ConsensusConfig::rpbft],
            };
            let mut out = std::io::stdout().lock();
            if summary {
                let _ = writeln!(out, "algorithm,nodes,delay_ms,mean_ms,p50_ms,p95_ms");
            }
            for make in algs {
                for &n in &nodes {
                    for &d in &delay_ms {
                        let cfg = make(n, d * MS);
                        let s = measure_consensus_latency(&cfg, rounds, seed).map_err(|e| Failure::User(e.to_string()))?;
                        if !summary {
                            let mut buf = Vec::new();
                            s.write_csv(&mut buf).map_err(|e| Failure::Internal(e.to_string()))?;
                            // Keep the header only once across cells.
                            let skip = if std::ptr::eq(make, &algs[0]) && n == nodes[0] && d == delay_ms[0] { 0 } else { 1 };
                            for line in String::from_utf8_lossy(&buf).lines().skip(skip) {
                                let _ = writeln!(out, "{line}");
                            }
                            continue;
                        }
                        let alg = serde_json::to_value(s.algorithm).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                        let _ = writeln!(
                            out,
                            "{alg},{n},{d},{:.3},{:.3},{:.3}",
                            s.mean_ms(),
                            s.p50_us as f64 / 1e3,
                            s.p95_us as f64 / 1e3
                        );
                    }
                }
            }
            Ok(())
        }
        Cmd::Head => print_json(&client().chain_head()?),
        Cmd::Block { height } => print_json(&client().block(height)?),
        Cmd::Tx { ref hash } => print_json(&client().tx(hash)?),
        Cmd::Registry => print_json(&client().registry()?),
        Cmd::Intent { verb, ref target, preference } => {
            let req = IntentRequest { verb: verb.into(), target: target.clone(), preference: preference.into() };
            print_json(&client().submit_intent(&req)?)
        }
        Cmd::Report { id } => print_json(&client().report(id)?),
        Cmd::Topology => print_json(&client().topology()?),
        Cmd::Mapping => print_json(&client().mapping()?),
        Cmd::Remap { ref switch, ref controller } => print_json(&client().remap(switch, controller)?),
        Cmd::Evict { ref id } => print_json(&client().evict(id)?),
        Cmd::Scenario { ref file, seed } => {
            let spec = load_scenario(file)?;
            let v = client().run_scenario(&spec, seed)?;
            print_json(&v["summary"])
        }
        Cmd::Events { from_seq, limit } => {
            let mut left = limit.unwrap_or(usize::MAX);
            client().events(from_seq, |ev| {
                let line = serde_json::to_string(&ev).unwrap_or_default();
                left -= 1;
                writeln!(std::io::stdout().lock(), "{line}").is_ok() && left > 0
            })?;
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
