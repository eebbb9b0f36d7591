//! Operator entry points: schema init, seeding, running crawl instances,
//! serving mock webs, and producing reports.
//!
//! Exit codes: 0 success, 2 configuration/input problems (bad files,
//! insufficient privilege), 3 environment problems (store unreachable, port
//! busy), 64 usage errors (handled by `main` at parse time).

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analytics::{
    self, coverage_by_depth, coverage_by_frequency, CoverageUnit,
};
use crate::events::EventLog;
use crate::fetcher::politeness::PolitenessPolicy;
use crate::fetcher::{FetchLimits, HostResolution, DEFAULT_USER_AGENT};
use crate::frontier::{open_store, FrontierError, UrlStatus};
use crate::mockweb::{bind_and_serve, MockWebBundle, MockWebSpec};
use crate::report;
use crate::runtime::{run_instance, InstanceConfig, ShutdownSignal, StopReason};
use crate::scoring::KeywordStrategy;

/// Resolves on SIGINT or SIGTERM. Handlers are registered at call time so
/// a signal arriving before the first poll is not lost to the default
/// action; call within a runtime context.
fn interrupted() -> impl std::future::Future<Output = ()> {
    #[cfg(unix)]
    let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        .expect("install SIGTERM handler");
    async move {
        let ctrl_c = tokio::signal::ctrl_c();
        #[cfg(unix)]
        {
            tokio::select! {
                _ = ctrl_c => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        {
            let _ = ctrl_c.await;
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "crawlq",
    version,
    about = "Focused web crawler coordinated through a SQL store"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct StoreArgs {
    /// Store connection: a SQLite path (optionally `sqlite:<path>`) or a
    /// `postgres://` URL.
    #[arg(long, env = "CRAWLQ_DB")]
    pub db: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create or upgrade-check the store schema (idempotent).
    Init {
        #[command(flatten)]
        store: StoreArgs,
        /// Also install server-side scoring functions for this strategy on
        /// backends that support them.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Insert seed URLs (depth 0) from a line-delimited file.
    Seed {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        strategy: PathBuf,
        /// File with one URL per line; `#` comments allowed.
        urls_file: PathBuf,
    },
    /// Run one crawler instance until a stop condition.
    Crawl {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long, default_value_t = 50)]
        batch_size: usize,
        /// Simultaneous fetches for this instance.
        #[arg(long, default_value_t = 20)]
        parallel: usize,
        /// Claim lease in seconds.
        #[arg(long, default_value_t = 600.0)]
        lease: f64,
        /// Stop after this many fetch attempts.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Exit after the frontier has stayed empty this many seconds.
        #[arg(long, default_value_t = 5.0)]
        idle_shutdown: f64,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
        #[arg(long, default_value_t = 5)]
        max_redirects: usize,
        #[arg(long, default_value_t = 4 * 1024 * 1024)]
        max_body_bytes: usize,
        /// Minimum seconds between fetch starts on one domain.
        #[arg(long, default_value_t = 1.0)]
        min_interval: f64,
        /// Maximum simultaneous fetches per domain.
        #[arg(long, default_value_t = 2)]
        max_per_domain: usize,
        /// Skip robots.txt (mock-web testing only).
        #[arg(long)]
        no_robots: bool,
        #[arg(long, default_value = DEFAULT_USER_AGENT)]
        user_agent: String,
        /// Store fetched bodies under this directory, keyed by URL hash.
        #[arg(long)]
        content_dir: Option<PathBuf>,
        /// Resolve every host to this IP (virtual-hosted mock webs).
        #[arg(long)]
        resolve: Option<IpAddr>,
        #[arg(long)]
        instance_id: Option<String>,
    },
    /// Coverage and status reports over a finished crawl.
    Report {
        #[command(subcommand)]
        report: ReportCommand,
    },
    /// Generate a deterministic mock web and serve it until interrupted.
    Mockweb {
        /// Mock web spec file.
        spec: PathBuf,
        /// Bind address; `ip` or `ip:port` (a port here overrides the spec).
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Directory for the generated bundle and ground-truth manifest.
        #[arg(long, default_value = "mockweb-bundle")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum UnitArg {
    Url,
    Domain,
}

#[derive(Args, Debug)]
pub struct CrawlInput {
    /// Read crawled URLs and depths from the store.
    #[arg(long)]
    pub db: Option<String>,
    /// Or from a `url<TAB>depth` file.
    #[arg(long)]
    pub depths: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ReportCommand {
    /// Cumulative coverage of tweeted URLs per crawl depth.
    DepthCoverage {
        #[command(flatten)]
        input: CrawlInput,
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        /// Track the k most-tweeted targets separately.
        #[arg(long, default_value_t = 100)]
        top: usize,
        #[arg(long, value_enum, default_value_t = UnitArg::Url)]
        unit: UnitArg,
        /// Machine-readable TSV instead of the aligned table.
        #[arg(long)]
        tsv: bool,
    },
    /// Coverage of tweeted URLs per tweet-frequency bucket.
    FrequencyCoverage {
        #[command(flatten)]
        input: CrawlInput,
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        /// Comma-separated ascending bucket edges; last bucket is open.
        #[arg(long, default_value = "1,2,5,10,50")]
        buckets: String,
        #[arg(long)]
        tsv: bool,
        /// Also write `x y` pairs for plotting.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Frontier status counts.
    Stats {
        #[command(flatten)]
        store: StoreArgs,
    },
}

fn exit_for_frontier(e: &FrontierError) -> i32 {
    match e {
        FrontierError::InsufficientPrivilege(_) | FrontierError::SchemaVersionMismatch { .. } => 2,
        _ => 3,
    }
}

fn fail(code: i32, message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    code
}

fn load_strategy(path: &PathBuf) -> Result<KeywordStrategy, i32> {
    KeywordStrategy::from_file(path).map_err(|e| fail(2, format!("strategy {path:?}: {e}")))
}

fn secs(v: f64) -> Duration {
    Duration::from_secs_f64(v.max(0.0))
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Init { store, strategy } => cmd_init(store, strategy),
        Command::Seed {
            store,
            strategy,
            urls_file,
        } => cmd_seed(store, strategy, urls_file),
        Command::Crawl {
            store,
            strategy,
            batch_size,
            parallel,
            lease,
            stop_after,
            idle_shutdown,
            timeout,
            max_redirects,
            max_body_bytes,
            min_interval,
            max_per_domain,
            no_robots,
            user_agent,
            content_dir,
            resolve,
            instance_id,
        } => {
            let strategy = match load_strategy(&strategy) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let config = InstanceConfig {
                instance_id: instance_id
                    .unwrap_or_else(|| format!("instance-{}", std::process::id())),
                batch_size,
                parallel_fetches: parallel,
                lease: secs(lease),
                stop_after,
                idle_shutdown: secs(idle_shutdown),
                fetch_limits: FetchLimits {
                    timeout: secs(timeout),
                    max_redirects,
                    max_body_bytes,
                    ..FetchLimits::default()
                },
                politeness: PolitenessPolicy {
                    min_interval: secs(min_interval),
                    max_concurrent: max_per_domain.max(1),
                },
                user_agent,
                obey_robots: !no_robots,
                resolution: match resolve {
                    Some(ip) => HostResolution::Override(ip),
                    None => HostResolution::System,
                },
                content_dir,
                record_fetches: false,
                ..InstanceConfig::default()
            };
            cmd_crawl(store, config, strategy)
        }
        Command::Report { report } => cmd_report(report),
        Command::Mockweb { spec, bind, out } => cmd_mockweb(spec, bind, out),
    }
}

fn cmd_init(store: StoreArgs, strategy: Option<PathBuf>) -> i32 {
    let mut conn = match open_store(&store.db) {
        Ok(c) => c,
        Err(e) => return fail(exit_for_frontier(&e), e),
    };
    if let Err(e) = conn.init_schema() {
        return fail(exit_for_frontier(&e), e);
    }
    if let Some(path) = strategy {
        let strategy = match load_strategy(&path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        match conn.install_strategy_functions(&strategy) {
            Ok(true) => println!("schema ready, strategy functions installed"),
            Ok(false) => {
                println!("schema ready (backend has no procedural language; scoring stays client-side)")
            }
            Err(e) => return fail(exit_for_frontier(&e), e),
        }
    } else {
        println!("schema ready");
    }
    0
}

fn cmd_seed(store: StoreArgs, strategy: PathBuf, urls_file: PathBuf) -> i32 {
    let strategy = match load_strategy(&strategy) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let text = match std::fs::read_to_string(&urls_file) {
        Ok(t) => t,
        Err(e) => return fail(2, format!("urls file {urls_file:?}: {e}")),
    };
    let urls: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let mut conn = match open_store(&store.db) {
        Ok(c) => c,
        Err(e) => return fail(exit_for_frontier(&e), e),
    };
    match conn.insert_seeds(&urls, &strategy) {
        Ok(outcome) => {
            for (raw, err) in &outcome.rejected {
                eprintln!("warning: skipping `{raw}`: {err}");
            }
            println!(
                "inserted {} skipped {} rejected {}",
                outcome.inserted,
                outcome.skipped,
                outcome.rejected.len()
            );
            0
        }
        Err(e) => fail(exit_for_frontier(&e), e),
    }
}

fn cmd_crawl(store: StoreArgs, config: InstanceConfig, strategy: KeywordStrategy) -> i32 {
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail(3, format!("cannot start runtime: {e}")),
    };
    let db = store.db.clone();
    let events = EventLog::stderr(&config.instance_id);
    let shutdown = ShutdownSignal::new();
    let signal = shutdown.clone();
    rt.block_on(async move {
        let interrupt = interrupted();
        tokio::spawn(async move {
            interrupt.await;
            signal.trigger();
        });
        let result = run_instance(
            config,
            move || open_store(&db),
            Arc::new(strategy),
            events,
            shutdown,
        )
        .await;
        match result {
            Ok(summary) => {
                match serde_json::to_string(&summary) {
                    Ok(json) => println!("{json}"),
                    Err(e) => eprintln!("error: summary serialization: {e}"),
                }
                match summary.stop_reason {
                    StopReason::StoreError => 3,
                    _ => 0,
                }
            }
            Err(e) => fail(3, e),
        }
    })
}

fn load_crawled(input: &CrawlInput) -> Result<HashMap<String, u32>, i32> {
    match (&input.db, &input.depths) {
        (Some(db), None) => {
            let mut conn = open_store(db).map_err(|e| fail(exit_for_frontier(&e), e))?;
            let urls = conn
                .export_urls()
                .map_err(|e| fail(exit_for_frontier(&e), e))?;
            Ok(urls
                .into_iter()
                .filter(|u| u.status == UrlStatus::Fetched)
                .map(|u| (u.url, u.depth))
                .collect())
        }
        (None, Some(path)) => {
            analytics::load_depths_file(path).map_err(|e| fail(2, format!("{path:?}: {e}")))
        }
        _ => Err(fail(2, "provide exactly one of --db or --depths")),
    }
}

fn cmd_report(command: ReportCommand) -> i32 {
    match command {
        ReportCommand::DepthCoverage {
            input,
            tweets,
            mapping,
            top,
            unit,
            tsv,
        } => {
            let crawled = match load_crawled(&input) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let (targets, ingest) = match analytics::ingest_tweet_files(&tweets, &mapping) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            eprint!("{}", report::ingest_summary(&ingest));
            let unit = match unit {
                UnitArg::Url => CoverageUnit::Url,
                UnitArg::Domain => CoverageUnit::Domain,
            };
            match coverage_by_depth(&crawled, &targets, top, unit) {
                Ok(cov) => {
                    if tsv {
                        print!("{}", report::coverage_tsv(&cov));
                    } else {
                        print!("{}", report::coverage_table(&cov));
                    }
                    0
                }
                Err(e) => fail(2, e),
            }
        }
        ReportCommand::FrequencyCoverage {
            input,
            tweets,
            mapping,
            buckets,
            tsv,
            plot_data,
        } => {
            let crawled = match load_crawled(&input) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let crawled_set: std::collections::HashSet<String> =
                crawled.into_keys().collect();
            let (targets, ingest) = match analytics::ingest_tweet_files(&tweets, &mapping) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            eprint!("{}", report::ingest_summary(&ingest));
            let edges: Result<Vec<u64>, _> =
                buckets.split(',').map(|s| s.trim().parse::<u64>()).collect();
            let edges = match edges {
                Ok(e) => e,
                Err(_) => return fail(2, format!("bad bucket edges `{buckets}`")),
            };
            match coverage_by_frequency(&crawled_set, &targets, &edges) {
                Ok(histogram) => {
                    if let Some(path) = plot_data {
                        if let Err(e) =
                            std::fs::write(&path, report::frequency_plot_data(&histogram))
                        {
                            return fail(2, format!("{path:?}: {e}"));
                        }
                    }
                    if tsv {
                        print!("{}", report::frequency_tsv(&histogram));
                    } else {
                        print!("{}", report::frequency_table(&histogram));
                    }
                    0
                }
                Err(e) => fail(2, e),
            }
        }
        ReportCommand::Stats { store } => {
            let mut conn = match open_store(&store.db) {
                Ok(c) => c,
                Err(e) => return fail(exit_for_frontier(&e), e),
            };
            match conn.stats() {
                Ok(stats) => {
                    print!("{}", report::stats_table(&stats));
                    0
                }
                Err(e) => fail(exit_for_frontier(&e), e),
            }
        }
    }
}

fn cmd_mockweb(spec_path: PathBuf, bind: String, out: PathBuf) -> i32 {
    let mut spec = match MockWebSpec::from_file(&spec_path) {
        Ok(s) => s,
        Err(e) => return fail(2, format!("{spec_path:?}: {e}")),
    };
    let bind_addr = if let Some((ip, port)) = bind.rsplit_once(':') {
        match port.parse::<u16>() {
            Ok(port) => {
                spec.port = port;
                format!("{ip}:{port}")
            }
            Err(_) => return fail(2, format!("bad bind address `{bind}`")),
        }
    } else {
        format!("{bind}:{}", spec.port)
    };
    let bundle = match MockWebBundle::generate(&spec) {
        Ok(b) => b,
        Err(e) => return fail(2, e),
    };
    let manifest = match bundle.write_dir(&out) {
        Ok(m) => m,
        Err(e) => return fail(2, format!("cannot write bundle to {out:?}: {e}")),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail(3, format!("cannot start runtime: {e}")),
    };
    rt.block_on(async move {
        let server = match bind_and_serve(&bundle, &bind_addr).await {
            Ok(s) => s,
            Err(e) => return fail(3, e),
        };
        let interrupt = interrupted();
        println!("{}", manifest.display());
        eprintln!("serving {} pages on {}", bundle.pages.len(), server.addr);
        interrupt.await;
        server.shutdown().await;
        0
    })
}
