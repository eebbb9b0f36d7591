//! End-to-end crawls against the synthetic web.

mod common;

use std::collections::{HashMap, HashSet};
use std::time::Duration;

use crawlq::analytics;
use crawlq::extractor;
use crawlq::fetcher::politeness::PolitenessPolicy;
use crawlq::frontier::sqlite::SqliteStore;
use crawlq::frontier::{FrontierStore, UrlStatus};
use crawlq::mockweb::{ErrorPageSpec, KeywordRegion, MockWebSpec};
use crawlq::runtime::StopReason;
use crawlq::scoring::KeywordStrategy;

use common::*;

fn base_spec(seed: u64, pages: usize) -> MockWebSpec {
    MockWebSpec {
        seed,
        pages,
        domains: 5,
        seed_pages: 3,
        out_degree: (2, 6),
        ..MockWebSpec::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn single_instance_crawls_the_whole_reachable_set() {
    let (bundle, server) = spawn_web(base_spec(21, 100)).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "crawl.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let summary = run_one(&db, quick_config("solo"), &strategy).await;
    assert_eq!(summary.stop_reason, StopReason::Idle);
    assert_eq!(summary.fetched, 100);
    assert_eq!(summary.failed, 0);

    let mut store = SqliteStore::open(&db).unwrap();
    let stats = store.stats().unwrap();
    assert_eq!(stats.fetched, 100);
    assert_eq!(stats.pending, 0);
    assert_eq!(stats.claimed, 0);
    assert_eq!(fetched_urls(&db), reachable_urls(&bundle));

    // the stored link graph is exactly the generated one
    let stored: HashSet<(String, String)> = store
        .export_edges()
        .unwrap()
        .into_iter()
        .map(|l| (l.source, l.target))
        .collect();
    let generated: HashSet<(String, String)> = bundle.edges_by_url().into_iter().collect();
    assert_eq!(stored, generated);

    // priorities never drift from the link table
    let audit = store.audit_priorities().unwrap();
    assert!(audit.violations.is_empty(), "{:?}", audit.violations);

    // stored depths: exactly reconstructable, never below the BFS truth
    let urls = store.export_urls().unwrap();
    let links = store.export_edges().unwrap();
    let reconstructed = reconstructed_depths(&bundle.seed_urls(), &links);
    let bfs = bundle.depths_by_url();
    for u in &urls {
        assert_eq!(u.depth, reconstructed[&u.url], "machinery drift at {}", u.url);
        assert!(u.depth >= bfs[&u.url], "{} below bfs depth", u.url);
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn one_instance_and_four_instances_fetch_the_same_set() {
    let (bundle, server) = spawn_web(base_spec(22, 160)).await;
    let strategy = figure_strategy();
    let dir = tempfile::tempdir().unwrap();

    let solo_db = db_path(dir.path(), "solo.db");
    init_and_seed(&solo_db, &bundle.seed_urls(), &strategy);
    run_one(&solo_db, quick_config("solo"), &strategy).await;

    let multi_db = db_path(dir.path(), "multi.db");
    init_and_seed(&multi_db, &bundle.seed_urls(), &strategy);
    let mut config = quick_config("multi");
    config.batch_size = 20;
    let summaries = run_many(&multi_db, 4, config, &strategy).await;

    let solo_set = fetched_urls(&solo_db);
    let multi_set = fetched_urls(&multi_db);
    assert_eq!(solo_set, multi_set);
    assert_eq!(solo_set, reachable_urls(&bundle));
    let total: u64 = summaries.iter().map(|s| s.fetched).sum();
    assert_eq!(total as usize, solo_set.len());
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stop_after_caps_attempts_and_leaves_the_rest_pending() {
    let (bundle, server) = spawn_web(base_spec(23, 100)).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "capped.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let mut config = quick_config("capped");
    config.stop_after = Some(10);
    let summary = run_one(&db, config, &strategy).await;
    assert_eq!(summary.stop_reason, StopReason::StopAfter);
    assert_eq!(summary.fetched, 10);

    let mut store = SqliteStore::open(&db).unwrap();
    let stats = store.stats().unwrap();
    assert_eq!(stats.fetched, 10);
    assert_eq!(stats.claimed, 0, "claims must not leak");
    assert!(stats.pending > 0);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn robots_disallowed_pages_are_failed_and_never_fetched() {
    let mut spec = base_spec(24, 80);
    spec.robots_disallow = 0.15;
    let (bundle, server) = spawn_web(spec).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "robots.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let mut config = quick_config("robots");
    config.obey_robots = true;
    run_one(&db, config, &strategy).await;

    let disallowed: HashSet<String> = bundle
        .pages
        .iter()
        .enumerate()
        .filter(|(_, p)| p.robots_disallowed)
        .map(|(id, _)| bundle.url_of(id).to_string())
        .collect();
    assert!(!disallowed.is_empty(), "fixture needs disallowed pages");

    let mut store = SqliteStore::open(&db).unwrap();
    for url in store.export_urls().unwrap() {
        if disallowed.contains(&url.url) {
            assert_eq!(url.status, UrlStatus::Failed, "{} must not be fetched", url.url);
            assert_eq!(url.last_error.as_deref(), Some("robots_denied"));
        }
    }
    // and the server never saw a GET for a disallowed path
    let disallowed_paths: HashSet<(String, String)> = bundle
        .pages
        .iter()
        .filter(|p| p.robots_disallowed)
        .map(|p| (p.host.clone(), p.path.clone()))
        .collect();
    for entry in server.access_log() {
        assert!(
            !disallowed_paths.contains(&(entry.host.clone(), entry.path.clone())),
            "server saw GET {}{}",
            entry.host,
            entry.path
        );
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn error_pages_are_failed_with_their_status() {
    let mut spec = base_spec(25, 120);
    spec.error_pages = vec![
        ErrorPageSpec { status: 404, fraction: 0.1 },
        ErrorPageSpec { status: 500, fraction: 0.05 },
    ];
    let (bundle, server) = spawn_web(spec).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "errors.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let summary = run_one(&db, quick_config("errors"), &strategy).await;
    let reachable = bundle.reachable();
    let reachable_errors: Vec<usize> = reachable
        .iter()
        .copied()
        .filter(|id| bundle.pages[*id].status != 200)
        .collect();
    assert_eq!(summary.fetched + summary.failed, reachable.len() as u64);
    assert_eq!(summary.failed, reachable_errors.len() as u64);

    let mut store = SqliteStore::open(&db).unwrap();
    let by_url: HashMap<String, _> = store
        .export_urls()
        .unwrap()
        .into_iter()
        .map(|u| (u.url.clone(), u))
        .collect();
    for id in reachable_errors {
        let row = &by_url[bundle.url_of(id)];
        assert_eq!(row.status, UrlStatus::Failed);
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn content_dir_stores_bodies_keyed_by_url_hash() {
    use sha2::{Digest, Sha256};
    let (bundle, server) = spawn_web(base_spec(26, 30)).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "content.db");
    let content_dir = dir.path().join("bodies");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let mut config = quick_config("content");
    config.content_dir = Some(content_dir.clone());
    let summary = run_one(&db, config, &strategy).await;

    let index = std::fs::read_to_string(content_dir.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count() as u64, summary.fetched);

    let url = bundle.url_of(5);
    let hash = format!("{:x}", Sha256::digest(url.as_bytes()));
    let stored = std::fs::read(content_dir.join(&hash[..2]).join(&hash)).unwrap();
    assert_eq!(stored, bundle.pages[5].body.as_bytes());
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn abandoned_claims_recover_through_lease_expiry() {
    let (bundle, server) = spawn_web(base_spec(27, 60)).await;
    let dir = tempfile::tempdir().unwrap();
    let strategy = KeywordStrategy::empty();

    // uninterrupted baseline
    let clean_db = db_path(dir.path(), "clean.db");
    init_and_seed(&clean_db, &bundle.seed_urls(), &strategy);
    run_one(&clean_db, quick_config("clean"), &strategy).await;

    // a "crashed" instance claims and vanishes without submitting
    let crash_db = db_path(dir.path(), "crash.db");
    init_and_seed(&crash_db, &bundle.seed_urls(), &strategy);
    {
        let mut store = SqliteStore::open(&crash_db).unwrap();
        let batch = store
            .claim_batch(3, Duration::from_millis(50), "doomed")
            .unwrap();
        assert!(!batch.is_empty());
        // no submit, no release: only the lease can free these rows
    }
    tokio::time::sleep(Duration::from_millis(60)).await;
    run_one(&crash_db, quick_config("rescuer"), &strategy).await;

    assert_eq!(fetched_urls(&crash_db), fetched_urls(&clean_db));
    assert_eq!(fetched_urls(&crash_db), reachable_urls(&bundle));
    server.shutdown().await;
}

#[tokio::test]
async fn generator_text_fixtures_match_extraction() {
    let spec = MockWebSpec {
        seed: 28,
        pages: 50,
        domains: 4,
        seed_pages: 2,
        keywords: vec![KeywordRegion {
            keyword: "keyword1".into(),
            fraction: 0.2,
            tld: "fr".into(),
        }],
        ..MockWebSpec::default()
    };
    let bundle = crawlq::mockweb::MockWebBundle::generate(&spec).unwrap();
    for page in &bundle.pages {
        let text = extractor::page_text(
            page.body.as_bytes(),
            Some("text/html; charset=utf-8"),
        );
        assert_eq!(text, page.expected_text, "page {}{}", page.host, page.path);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn run_events_are_structured_json() {
    use crawlq::events::EventLog;
    use crawlq::frontier::FrontierError;
    use crawlq::runtime::{run_instance, ShutdownSignal};
    use std::sync::Arc;

    let (bundle, server) = spawn_web(base_spec(29, 20)).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "events.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let (events, buffer) = EventLog::buffer("evt-1");
    let db_clone = db.clone();
    run_instance(
        quick_config("evt-1"),
        move || {
            Ok(Box::new(SqliteStore::open(&db_clone).map_err(FrontierError::from)?)
                as Box<dyn crawlq::frontier::FrontierStore>)
        },
        Arc::new(strategy),
        events,
        ShutdownSignal::new(),
    )
    .await
    .unwrap();

    let text = String::from_utf8(buffer.lock().unwrap().clone()).unwrap();
    let mut kinds: HashSet<String> = HashSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("each line is json");
        assert_eq!(v["instance"], "evt-1");
        kinds.insert(v["event"].as_str().unwrap().to_string());
    }
    for expected in ["claim", "fetch", "submit", "done"] {
        assert!(kinds.contains(expected), "missing {expected} event");
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn per_domain_spacing_is_visible_in_the_access_log() {
    let spec = MockWebSpec {
        seed: 30,
        pages: 8,
        domains: 1,
        seed_pages: 1,
        out_degree: (2, 4),
        ..MockWebSpec::default()
    };
    let (bundle, server) = spawn_web(spec).await;
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "polite.db");
    let strategy = KeywordStrategy::empty();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);

    let mut config = quick_config("polite");
    config.politeness = PolitenessPolicy {
        min_interval: Duration::from_millis(60),
        max_concurrent: 1,
    };
    config.parallel_fetches = 4;
    run_one(&db, config, &strategy).await;

    let mut offsets: Vec<Duration> = server
        .access_log()
        .iter()
        .filter(|e| e.path != "/robots.txt")
        .map(|e| e.offset)
        .collect();
    offsets.sort();
    assert_eq!(offsets.len(), 8);
    for pair in offsets.windows(2) {
        let gap = pair[1] - pair[0];
        assert!(
            gap >= Duration::from_millis(40),
            "same-domain fetches only {}ms apart",
            gap.as_millis()
        );
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn focused_strategy_reorders_the_crawl() {
    let spec = MockWebSpec {
        seed: 31,
        pages: 400,
        domains: 8,
        seed_pages: 4,
        out_degree: (3, 8),
        keywords: vec![KeywordRegion {
            keyword: "keyword1".into(),
            fraction: 0.1,
            tld: "fr".into(),
        }],
        ..MockWebSpec::default()
    };
    let (bundle, server) = spawn_web(spec).await;
    let keyword_urls: HashSet<String> = bundle
        .keyword_page_ids("keyword1")
        .into_iter()
        .map(|id| bundle.url_of(id).to_string())
        .collect();
    let dir = tempfile::tempdir().unwrap();

    let db = db_path(dir.path(), "focused.db");
    let strategy = figure_strategy();
    init_and_seed(&db, &bundle.seed_urls(), &strategy);
    let mut config = quick_config("focused");
    config.batch_size = 25;
    config.stop_after = Some(40);
    let summary = run_one(&db, config, &strategy).await;
    let first = summary.fetched_urls.unwrap();
    let hits = first.iter().filter(|u| keyword_urls.contains(*u)).count();
    // 10% of pages carry the keyword; a focused crawl must concentrate them
    assert!(
        hits * 10 >= first.len() * 2,
        "only {hits} keyword pages in the first {} fetches",
        first.len()
    );

    // analytics depth agreement on the finished crawl
    let db_full = db_path(dir.path(), "full.db");
    init_and_seed(&db_full, &bundle.seed_urls(), &strategy);
    run_one(&db_full, quick_config("full"), &strategy).await;
    let mut store = SqliteStore::open(&db_full).unwrap();
    let edges: Vec<(String, String)> = store
        .export_edges()
        .unwrap()
        .into_iter()
        .map(|l| (l.source, l.target))
        .collect();
    let depths = analytics::exact_depths(&edges, &bundle.seed_urls());
    assert_eq!(depths, bundle.depths_by_url());
    server.shutdown().await;
}
