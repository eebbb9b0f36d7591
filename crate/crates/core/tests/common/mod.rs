//! Shared helpers for the integration and acceptance tests: spawning mock
//! webs on ephemeral ports and running crawler instances against temp
//! SQLite stores.

#![allow(dead_code)]

use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use crawlq::events::EventLog;
use crawlq::fetcher::politeness::PolitenessPolicy;
use crawlq::fetcher::{FetchLimits, HostResolution};
use crawlq::frontier::sqlite::SqliteStore;
use crawlq::frontier::{FrontierStore, UrlStatus};
use crawlq::mockweb::{reserve_listener, serve, MockWebBundle, MockWebServer, MockWebSpec};
use crawlq::runtime::{run_instance, InstanceConfig, RunSummary, ShutdownSignal};
use crawlq::scoring::KeywordStrategy;

pub fn figure_strategy() -> KeywordStrategy {
    KeywordStrategy::parse(include_str!("../data/figure.strategy")).expect("figure strategy")
}

/// Reserves an ephemeral port, regenerates the bundle with it, and serves.
pub async fn spawn_web(mut spec: MockWebSpec) -> (MockWebBundle, MockWebServer) {
    let (listener, port) = reserve_listener().await;
    spec.port = port;
    let bundle = MockWebBundle::generate(&spec).expect("generate bundle");
    let server = serve(&bundle, listener).await;
    (bundle, server)
}

pub fn quick_config(instance_id: &str) -> InstanceConfig {
    InstanceConfig {
        instance_id: instance_id.to_string(),
        batch_size: 50,
        parallel_fetches: 20,
        lease: Duration::from_secs(600),
        stop_after: None,
        idle_shutdown: Duration::from_millis(400),
        poll_interval: Duration::from_millis(25),
        fetch_limits: FetchLimits {
            timeout: Duration::from_secs(10),
            connect_timeout: Duration::from_secs(5),
            max_redirects: 5,
            max_body_bytes: 4 * 1024 * 1024,
        },
        politeness: PolitenessPolicy::unrestricted(),
        user_agent: "crawlq-test/0 (+local)".to_string(),
        obey_robots: false,
        resolution: HostResolution::Override(IpAddr::V4(Ipv4Addr::LOCALHOST)),
        content_dir: None,
        record_fetches: true,
    }
}

pub fn db_path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

pub fn init_and_seed(db: &str, seeds: &[String], strategy: &KeywordStrategy) {
    let mut store = SqliteStore::open(db).expect("open store");
    store.init_schema().expect("init schema");
    store.insert_seeds(seeds, strategy).expect("insert seeds");
}

pub async fn run_one(
    db: &str,
    config: InstanceConfig,
    strategy: &KeywordStrategy,
) -> RunSummary {
    let db = db.to_string();
    run_instance(
        config,
        move || Ok(Box::new(SqliteStore::open(&db)?) as Box<dyn FrontierStore>),
        Arc::new(strategy.clone()),
        EventLog::discard("test"),
        ShutdownSignal::new(),
    )
    .await
    .expect("run instance")
}

pub async fn run_many(
    db: &str,
    n: usize,
    base: InstanceConfig,
    strategy: &KeywordStrategy,
) -> Vec<RunSummary> {
    let mut tasks = tokio::task::JoinSet::new();
    for i in 0..n {
        let db = db.to_string();
        let mut config = base.clone();
        config.instance_id = format!("{}-{i}", base.instance_id);
        let strategy = Arc::new(strategy.clone());
        tasks.spawn(async move {
            run_instance(
                config,
                move || Ok(Box::new(SqliteStore::open(&db)?) as Box<dyn FrontierStore>),
                strategy,
                EventLog::discard("test"),
                ShutdownSignal::new(),
            )
            .await
            .expect("run instance")
        });
    }
    let mut summaries = Vec::new();
    while let Some(joined) = tasks.join_next().await {
        summaries.push(joined.expect("instance task"));
    }
    summaries
}

pub fn fetched_urls(db: &str) -> HashSet<String> {
    let mut store = SqliteStore::open(db).expect("open store");
    store
        .export_urls()
        .expect("export")
        .into_iter()
        .filter(|u| u.status == UrlStatus::Fetched)
        .map(|u| u.url)
        .collect()
}

pub fn reachable_urls(bundle: &MockWebBundle) -> HashSet<String> {
    bundle
        .reachable()
        .into_iter()
        .map(|id| bundle.url_of(id).to_string())
        .collect()
}

pub fn reachable_ok_urls(bundle: &MockWebBundle) -> HashSet<String> {
    bundle
        .reachable_ok()
        .into_iter()
        .map(|id| bundle.url_of(id).to_string())
        .collect()
}

/// Reconstructs every URL's stored depth from first principles: seeds are 0
/// and every other URL is the minimum depth the insertion channel ever
/// asserted for it across its inbound links.
pub fn reconstructed_depths(
    seeds: &[String],
    links: &[crawlq::frontier::LinkExport],
) -> std::collections::HashMap<String, u32> {
    let mut depths: std::collections::HashMap<String, u32> = std::collections::HashMap::new();
    for seed in seeds {
        depths.insert(seed.clone(), 0);
    }
    for link in links {
        depths
            .entry(link.target.clone())
            .and_modify(|d| *d = (*d).min(link.asserted_depth))
            .or_insert(link.asserted_depth);
    }
    depths
}
