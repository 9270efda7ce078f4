use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clusterdiag_core::agent::{
    drill_backend_fixture, run_drill, ApprovalPolicy, Backend, DrillConfig, Monitor, MonitorConfig, Orchestrator,
    RemoteBackend, RemoteConfig, ScriptedBackend, SessionConfig, SessionStore,
};
use clusterdiag_core::benchmark::{
    bundled_items, compare_reports, competent_fixture, load_items, run_benchmark, EmptyBackend, OracleBackend,
    RunConfig, ScoreReport,
};
use clusterdiag_core::cluster_sim::{Cluster, ClusterTopology};
use clusterdiag_core::knowledge_base::{bundled_corpus, ingest, split_corpus, KnowledgeBase, Visibility};
use clusterdiag_core::perf_model::{ridge_point, roofline_curve, roofline_table};
use clusterdiag_core::ResourceProfile;
use clusterdiag_gateway::ServiceConfig;

#[derive(Parser)]
#[command(name = "clusterdiag", version, about = "Cluster diagnosis agent: service, benchmark, drill and roofline tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Benchmark a backend.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Inject the GPU throttle into a simulated cluster and diagnose it.
    Drill(DrillArgs),
    /// Print the roofline of a GPU.
    Roofline(RooflineArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Score a backend on an item set.
    Run(BenchRunArgs),
    /// Compare saved score reports.
    Compare { reports: Vec<PathBuf> },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Oracle,
    Empty,
    Competent,
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum VisibilityArg {
    FairEval,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct BenchRunArgs {
    /// Item file; the bundled items when omitted.
    #[arg(long)]
    items: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Fixture for the scripted backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Endpoint for the remote backend.
    #[arg(long, env = "CLUSTERDIAG_BACKEND_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "CLUSTERDIAG_BACKEND_MODEL", default_value = "default")]
    model: String,
    #[arg(long, value_enum, default_value = "fair-eval")]
    visibility: VisibilityArg,
    #[arg(long, value_enum, default_value = "off")]
    rag: Switch,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Knowledge corpus; the bundled corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DrillArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where the session is persisted.
    #[arg(long, default_value = "clusterdiag-data/sessions")]
    sessions_dir: PathBuf,
    /// Reject the remediation instead of approving it.
    #[arg(long)]
    reject: bool,
}

#[derive(Args)]
struct RooflineArgs {
    #[arg(long, default_value_t = 3.12e14)]
    peak_flops: f64,
    #[arg(long, default_value_t = 2.039e12)]
    mem_bw: f64,
    #[arg(long, default_value_t = 0.1)]
    min: f64,
    #[arg(long, default_value_t = 1e4)]
    max: f64,
    #[arg(long, default_value_t = 25)]
    points: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config } => serve(config),
        Command::Bench {
            command: BenchCommand::Run(args),
        } => bench_run(args),
        Command::Bench {
            command: BenchCommand::Compare { reports },
        } => bench_compare(&reports),
        Command::Drill(args) => drill(args),
        Command::Roofline(args) => roofline(&args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn serve(path: Option<PathBuf>) -> Result<ExitCode, String> {
    let mut config = match path {
        Some(p) => ServiceConfig::load(&p).map_err(|e| e.to_string())?,
        None => ServiceConfig::default(),
    };
    config
        .apply_overrides(|k| std::env::var(k).ok())
        .map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let gateway = clusterdiag_gateway::start(config).await.map_err(|e| e.to_string())?;
        eprintln!("clusterdiag listening on http://{}", gateway.addr);
        gateway.run_until_ctrl_c().await;
        Ok(ExitCode::SUCCESS)
    })
}

fn bench_run(args: BenchRunArgs) -> Result<ExitCode, String> {
    let items = match &args.items {
        Some(p) => load_items(p).map_err(|e| e.to_string())?,
        None => bundled_items(),
    };
    let backend: Box<dyn Backend> = match args.backend {
        BackendKind::Oracle => Box::new(OracleBackend::new(&items)),
        BackendKind::Empty => Box::new(EmptyBackend),
        BackendKind::Competent => Box::new(ScriptedBackend::from_json(competent_fixture()).map_err(|e| e.to_string())?),
        BackendKind::Scripted => {
            let path = args.fixture.as_ref().ok_or("--backend scripted needs --fixture")?;
            Box::new(ScriptedBackend::load(path).map_err(|e| e.to_string())?)
        }
        BackendKind::Remote => {
            let endpoint = args.endpoint.clone().ok_or("--backend remote needs --endpoint")?;
            Box::new(RemoteBackend::new(RemoteConfig {
                endpoint,
                model: args.model.clone(),
                token: std::env::var("CLUSTERDIAG_BACKEND_TOKEN").ok(),
                timeout_s: 60,
            }))
        }
    };
    let corpus = match &args.corpus {
        Some(p) => ingest(p).map_err(|e| e.to_string())?.corpus,
        None => bundled_corpus(),
    };
    let corpus = split_corpus(&corpus, clusterdiag_core::knowledge_base::DEFAULT_EVAL_FRACTION, args.split_seed)
        .map_err(|e| e.to_string())?;
    let kb = KnowledgeBase::new(corpus);
    let run = RunConfig {
        visibility: match args.visibility {
            VisibilityArg::FairEval => Visibility::FairEval,
            VisibilityArg::Full => Visibility::Full,
        },
        rag: matches!(args.rag, Switch::On),
        k: args.k,
        ..RunConfig::default()
    };
    let report = run_benchmark(&items, backend.as_ref(), Some(&kb), &run).map_err(|e| e.to_string())?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        report.save(out).map_err(|e| e.to_string())?;
    }
    Ok(if report.complete { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn bench_compare(paths: &[PathBuf]) -> Result<ExitCode, String> {
    let reports = paths
        .iter()
        .map(|p| ScoreReport::load(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let comparison = compare_reports(&reports).map_err(|e| e.to_string())?;
    print!("{}", comparison.render());
    Ok(ExitCode::SUCCESS)
}

fn drill(args: DrillArgs) -> Result<ExitCode, String> {
    let started = Instant::now();
    let cluster = Mutex::new(Cluster::build(ClusterTopology::bundled(), args.seed).map_err(|e| e.to_string())?);
    let kb = RwLock::new(KnowledgeBase::new(bundled_corpus()));
    let backend = ScriptedBackend::from_json(drill_backend_fixture()).map_err(|e| e.to_string())?;
    let store = SessionStore::open(&args.sessions_dir).map_err(|e| e.to_string())?;
    let orchestrator = Orchestrator::new(
        Arc::new(backend),
        SessionConfig {
            approval: if args.reject {
                ApprovalPolicy::AutoReject
            } else {
                ApprovalPolicy::AutoApprove
            },
            ..SessionConfig::default()
        },
    )
    .with_store(store);
    let mut monitor = Monitor::new(MonitorConfig::default());
    let report = run_drill(&orchestrator, &cluster, &kb, &mut monitor, &DrillConfig::default()).map_err(|e| e.to_string())?;
    println!(
        "fault      {} on {} at {} MHz",
        report.fault.kind.name(),
        report.fault.target,
        DrillConfig::default().throttle_mhz
    );
    println!(
        "job        {} predicted {:.4} it/s, measured {}",
        report.job.id,
        report.predicted_rate,
        report.measured_rate.map_or("n/a".to_string(), |r| format!("{r:.4} it/s"))
    );
    for alert in &report.alerts {
        println!("alert      #{} {:?} {}", alert.id, alert.source, alert.evidence);
    }
    let Some(session) = &report.session else {
        return Err("no session ran".into());
    };
    println!("session    {} {:?} after {} rounds", session.id, session.status, session.rounds.len());
    println!("test cases {}", session.test_cases.join(", "));
    match &session.verdict {
        Some(v) => {
            println!("verdict    {} on {} (confidence {})", v.cause, v.devices.join(", "), v.confidence);
            if let Some(r) = &v.remediation {
                println!("remedy     {:?}: {}", r.state, r.script.as_deref().unwrap_or(&r.text));
            }
        }
        None => println!("verdict    none"),
    }
    println!("elapsed    {:.3} s", started.elapsed().as_secs_f64());
    Ok(if session.verdict.is_some() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn roofline(args: &RooflineArgs) -> Result<ExitCode, String> {
    if args.points < 2 || !(args.min > 0.0 && args.max > args.min) {
        return Err("need --points >= 2 and 0 < --min < --max".into());
    }
    let profile = ResourceProfile::new(args.peak_flops, args.mem_bw, 1.0).map_err(|e| e.to_string())?;
    let step = (args.max / args.min).ln() / (args.points - 1) as f64;
    let grid: Vec<f64> = (0..args.points).map(|i| args.min * (step * i as f64).exp()).collect();
    let curve = roofline_curve(&profile, &grid).map_err(|e| e.to_string())?;
    println!("# ridge point {:e} flop/byte", ridge_point(&profile));
    print!("{}", roofline_table(&curve));
    Ok(ExitCode::SUCCESS)
}
