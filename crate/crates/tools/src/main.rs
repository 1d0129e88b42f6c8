use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use epimem_core::idf::golden;
use epimem_core::model::{Query, SnapshotSelector};
use epimem_core::{DataObject, MemoryId};
use epimem_net::client::RetryPolicy;
use epimem_net::config::{DEFAULT_MNS, MNS_ENV};
use epimem_net::{Connection, MemoryClient, MemoryServer, MnsServer, ServerConfig};
use epimem_tools::bench::{self, BenchServer, CsvRow, BATCHES, DEFAULT_SAMPLES};
use epimem_tools::payload::PayloadKind;
use epimem_tools::record::{read_record, record, replay};
use epimem_tools::recording::{run_compression_bench, RecordingSpec};
use epimem_tools::selector::Selector;
use epimem_tools::{pretty, pretty_snapshot};

#[derive(Parser)]
#[command(name = "epimem", version, about = "Operate and benchmark epimem memory servers")]
struct Cli {
    /// Name service endpoint [env: EPIMEM_MNS]
    #[arg(long, global = true)]
    mns: Option<String>,
    /// Talk to this server endpoint directly instead of resolving through the name service.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a memory server from a TOML config file.
    Serve { config: PathBuf },
    /// Run the memory name service.
    Mns {
        #[arg(long, default_value = DEFAULT_MNS)]
        listen: String,
    },
    /// List the hierarchy below an ID prefix.
    Tree { prefix: String },
    /// Print a snapshot (latest if the ID stops at the entity) with metadata and links.
    Show { id: String },
    /// Run a selector expression: <id-prefix> [latest|latestN=<n>|at=<ts>|range=<ts>..<ts>] [regex=<pat>]
    Query {
        #[arg(required = true, num_args = 1..)]
        selector: Vec<String>,
    },
    /// Print update notifications below a prefix.
    Watch {
        prefix: String,
        /// Exit after this many notifications.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Record notified snapshots below a prefix to a file.
    Record {
        prefix: String,
        file: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Recommit the snapshots of a record file.
    Replay { file: PathBuf },
    /// Run a benchmark scenario and write CSV.
    Bench {
        scenario: Scenario,
        /// Payload kind; all kinds when omitted.
        #[arg(long)]
        payload: Option<PayloadKind>,
        /// Batch size; the full grid when omitted.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Recording length for the compression scenario.
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Administrative commands.
    Admin {
        #[command(subcommand)]
        op: AdminOp,
        /// Memory to address.
        #[arg(long, global = true, default_value = "Memory")]
        memory: String,
    },
    /// Write the IDF golden vector corpus.
    Golden {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Commit,
    Query,
    AgeCompare,
    Compression,
}

#[derive(Subcommand)]
enum AdminOp {
    /// Change the working-memory byte budget.
    Resize { bytes: u64 },
    /// Consolidate now: the capacity policy, or every non-latest snapshot under a prefix.
    Consolidate {
        #[arg(long)]
        prefix: Option<String>,
    },
    /// Print working-memory and LTM statistics.
    Stats,
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Ctx {
    mns: String,
    server: Option<String>,
}

impl Ctx {
    fn connect(&self, id_text: &str) -> Res<Arc<Connection>> {
        if let Some(ep) = &self.server {
            return Ok(Connection::open(ep)?);
        }
        let retry = RetryPolicy {
            max_retries: 2,
            ..Default::default()
        };
        Ok(MemoryClient::with_retry(self.mns.clone(), retry).connect(id_text)?)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let ctx = Ctx {
        mns: cli
            .mns
            .clone()
            .or_else(|| std::env::var(MNS_ENV).ok())
            .unwrap_or_else(|| DEFAULT_MNS.to_owned()),
        server: cli.server.clone(),
    };
    match run(&ctx, cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epimem: {e}");
            ExitCode::FAILURE
        }
    }
}

fn park_forever() -> ! {
    loop {
        std::thread::park();
    }
}

fn run(ctx: &Ctx, cli: Cli) -> Res<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Serve { config } => {
            let mut cfg = ServerConfig::load(&config)?;
            cfg.apply_mns_override(cli.mns.or_else(|| std::env::var(MNS_ENV).ok()));
            let server = MemoryServer::start(cfg)?;
            writeln!(stdout, "{} listening on {}", server.memory_name(), server.endpoint())?;
            stdout.flush()?;
            park_forever()
        }
        Command::Mns { listen } => {
            let mns = MnsServer::start(&listen)?;
            writeln!(stdout, "mns listening on {}", mns.endpoint())?;
            stdout.flush()?;
            park_forever()
        }
        Command::Tree { prefix } => {
            let id = MemoryId::parse(&prefix)?;
            let conn = ctx.connect(&prefix)?;
            let tree = conn.admin(
                "tree",
                DataObject::map([("prefix", DataObject::string(id.to_string()))]),
            )?;
            write!(stdout, "{}", render_tree(&tree))?;
        }
        Command::Show { id } => {
            let id = MemoryId::parse(&id)?;
            let conn = ctx.connect(&id.to_string())?;
            let mut q = Query::prefix(&id, SnapshotSelector::Latest);
            q.with_links = true;
            let reply = conn.query(&q)?;
            let r = &reply.result;
            if r.ids.is_empty() {
                return Err(format!("no snapshot matches {id}").into());
            }
            for (sid, snap) in r.snapshots() {
                let links: Vec<MemoryId> = r
                    .links
                    .get(sid)
                    .map(|l| l.iter().cloned().collect())
                    .unwrap_or_default();
                write!(stdout, "{}", pretty_snapshot(sid, snap, &links))?;
            }
        }
        Command::Query { selector } => {
            let sel = Selector::parse(&selector)?;
            let conn = ctx.connect(sel.memory_name())?;
            let reply = conn.query(&sel.to_query())?;
            for (sid, snap) in reply.result.snapshots() {
                writeln!(stdout, "{sid}")?;
                for inst in &snap.instances {
                    for line in pretty(&inst.data).lines() {
                        writeln!(stdout, "  {line}")?;
                    }
                }
            }
            for (sid, status) in &reply.result.statuses {
                writeln!(stdout, "{sid}: {status}")?;
            }
            writeln!(
                stdout,
                "{} snapshots, lookup {} us",
                reply.result.ids.len(),
                reply.lookup_us
            )?;
        }
        Command::Watch { prefix, count } => {
            let id = MemoryId::parse(&prefix)?;
            let conn = ctx.connect(&prefix)?;
            let (tx, rx) = crossbeam_channel::unbounded();
            let _sub = conn.subscribe(&id, move |n| {
                let _ = tx.send(n);
            })?;
            let mut seen = 0;
            while count.is_none_or(|c| seen < c) {
                match rx.recv_timeout(Duration::from_millis(200)) {
                    Ok(n) => {
                        let ids: Vec<String> = n.ids.iter().map(ToString::to_string).collect();
                        writeln!(stdout, "#{} {}", n.seq, ids.join(" "))?;
                        stdout.flush()?;
                        seen += 1;
                    }
                    Err(_) if conn.is_closed() => return Err("connection closed".into()),
                    Err(_) => {}
                }
            }
        }
        Command::Record { prefix, file, count } => {
            let id = MemoryId::parse(&prefix)?;
            let conn = ctx.connect(&prefix)?;
            let mut out = BufWriter::new(File::create(&file)?);
            let n = record(&conn, &id, &mut out, count, || true)?;
            writeln!(stdout, "recorded {n} notifications to {}", file.display())?;
        }
        Command::Replay { file } => {
            let entries = read_record(File::open(&file)?)?;
            let Some(first) = entries.iter().find_map(|e| e.reply.result.ids.first()) else {
                writeln!(stdout, "nothing to replay")?;
                return Ok(());
            };
            let conn = ctx.connect(first.memory_name())?;
            let stats = replay(&conn, &entries)?;
            writeln!(
                stdout,
                "replayed {} entries, {} snapshots, {} rejected",
                stats.entries, stats.snapshots, stats.rejected
            )?;
        }
        Command::Bench {
            scenario,
            payload,
            batch,
            samples,
            seed,
            seconds,
            out,
        } => {
            let kinds: Vec<PayloadKind> = payload.map_or(PayloadKind::ALL.to_vec(), |k| vec![k]);
            let batches: Vec<usize> = batch.map_or(BATCHES.to_vec(), |b| vec![b]);
            let rows = run_bench(scenario, &kinds, &batches, samples, seed, seconds)?;
            match out {
                Some(path) => bench::write_csv(File::create(path)?, &rows)?,
                None => bench::write_csv(&mut stdout, &rows)?,
            }
        }
        Command::Admin { op, memory } => {
            let conn = ctx.connect(&memory)?;
            let reply = match op {
                AdminOp::Resize { bytes } => {
                    conn.admin("resize", DataObject::map([("bytes", DataObject::Int64(bytes as i64))]))?
                }
                AdminOp::Consolidate { prefix } => {
                    let args = match prefix {
                        Some(p) => DataObject::map([("prefix", DataObject::string(MemoryId::parse(&p)?.to_string()))]),
                        None => DataObject::Null,
                    };
                    conn.admin("consolidate", args)?
                }
                AdminOp::Stats => conn.admin("stats", DataObject::Null)?,
            };
            write!(stdout, "{}", pretty(&reply))?;
        }
        Command::Golden { out } => {
            let text = golden::render(&golden::corpus());
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => stdout.write_all(text.as_bytes())?,
            }
        }
    }
    Ok(())
}

fn run_bench(
    scenario: Scenario,
    kinds: &[PayloadKind],
    batches: &[usize],
    samples: usize,
    seed: u64,
    seconds: f64,
) -> Res<Vec<CsvRow>> {
    let mut rows = Vec::new();
    match scenario {
        Scenario::Commit | Scenario::Query => {
            let server = BenchServer::start()?;
            let conn = server.connect()?;
            for &kind in kinds {
                for &b in batches {
                    let r = match scenario {
                        Scenario::Commit => bench::run_commit_bench(&conn, kind, b, samples, seed),
                        _ => bench::run_query_bench(&conn, kind, b, samples, seed),
                    };
                    if !r.valid {
                        eprintln!(
                            "epimem: {} {kind} batch {b} aborted after {} samples",
                            r.scenario, r.samples
                        );
                    }
                    rows.extend(r.rows());
                }
            }
        }
        Scenario::AgeCompare => {
            for &kind in kinds {
                for r in bench::run_age_compare(kind, samples, seed)? {
                    rows.extend(r.rows());
                }
            }
        }
        Scenario::Compression => {
            let spec = RecordingSpec {
                seconds,
                seed,
                ..Default::default()
            };
            rows.extend(run_compression_bench(&spec)?.rows());
        }
    }
    Ok(rows)
}

fn render_tree(tree: &DataObject) -> String {
    let name = |v: &DataObject| v.get("name").and_then(DataObject::as_str).unwrap_or("?").to_owned();
    let list = |v: &DataObject, key: &str| {
        v.get(key)
            .and_then(DataObject::as_list)
            .map(<[_]>::to_vec)
            .unwrap_or_default()
    };
    let mut out = format!("{}\n", tree.get("memory").and_then(DataObject::as_str).unwrap_or("?"));
    for core in list(tree, "cores") {
        out += &format!("  {}\n", name(&core));
        for p in list(&core, "providers") {
            out += &format!("    {}\n", name(&p));
            for e in list(&p, "entities") {
                let n = e.get("snapshots").and_then(DataObject::as_i64).unwrap_or(0);
                let latest = e
                    .get("latest")
                    .and_then(DataObject::as_time)
                    .map(|t| format!(", latest {t}"))
                    .unwrap_or_default();
                out += &format!("      {} ({n} snapshots{latest})\n", name(&e));
            }
        }
    }
    if let Some(n) = tree.get("ltm_records").and_then(DataObject::as_i64) {
        out += &format!("ltm records: {n}\n");
    }
    out
}
