//! Binary-level tests: exit codes, output contracts, and a hard-kill
//! recovery run through the real executable.

mod common;

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use crawlq::frontier::sqlite::SqliteStore;
use crawlq::frontier::FrontierStore;
use crawlq::mockweb::MockWebSpec;

use common::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crawlq"))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn init_is_idempotent_and_checks_schema_version() {
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "cli.db");
    let out = bin().args(["init", "--db", &db]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let out = bin().args(["init", "--db", &db]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));

    // a store from the future is a configuration error
    let conn = rusqlite::Connection::open(&db).unwrap();
    conn.execute("UPDATE meta SET value = '999' WHERE key = 'schema_version'", [])
        .unwrap();
    drop(conn);
    let out = bin().args(["init", "--db", &db]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn init_fails_with_3_when_the_store_is_unreachable() {
    // nothing listens on port 1
    let out = bin()
        .args(["init", "--db", "postgres://user:pw@127.0.0.1:1/db"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn seed_reports_counts_and_tolerates_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "seed.db");
    bin().args(["init", "--db", &db]).output().unwrap();

    let urls = dir.path().join("seeds.txt");
    std::fs::write(
        &urls,
        "# seeds\nhttp://a.fr/\nhttp://b.fr/\nnot a url at all\nHTTP://A.FR/\n",
    )
    .unwrap();
    let out = bin()
        .args(["seed", "--db", &db, "--strategy", &data("figure.strategy")])
        .arg(&urls)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout_of(&out).contains("inserted 2 skipped 1 rejected 1"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));

    let out = bin()
        .args(["seed", "--db", &db, "--strategy", &data("figure.strategy")])
        .arg(&urls)
        .output()
        .unwrap();
    assert!(stdout_of(&out).contains("inserted 0"));
}

#[test]
fn usage_errors_exit_64() {
    let out = bin().args(["report", "nonsense-subcommand"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = bin().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn depth_coverage_matches_the_golden_bytes() {
    let run = |unit: &str, golden: &str| {
        let out = bin()
            .args([
                "report",
                "depth-coverage",
                "--depths",
                &data("coverage_depths.tsv"),
                "--tweets",
                &data("coverage_tweets.tsv"),
                "--mapping",
                &data("coverage_mapping.tsv"),
                "--top",
                "2",
                "--unit",
                unit,
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        let expected = std::fs::read_to_string(data(golden)).unwrap();
        assert_eq!(stdout_of(&out), expected, "unit {unit} drifted from golden");
    };
    run("url", "golden_depth_url.txt");
    run("domain", "golden_depth_domain.txt");

    let out = bin()
        .args([
            "report",
            "depth-coverage",
            "--depths",
            &data("coverage_depths.tsv"),
            "--tweets",
            &data("coverage_tweets.tsv"),
            "--mapping",
            &data("coverage_mapping.tsv"),
            "--top",
            "2",
            "--unit",
            "url",
            "--tsv",
        ])
        .output()
        .unwrap();
    let expected = std::fs::read_to_string(data("golden_depth_url.tsv")).unwrap();
    assert_eq!(stdout_of(&out), expected);
}

#[test]
fn frequency_coverage_matches_the_golden_bytes_and_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("plot.txt");
    let out = bin()
        .args([
            "report",
            "frequency-coverage",
            "--depths",
            &data("coverage_depths.tsv"),
            "--tweets",
            &data("coverage_tweets.tsv"),
            "--mapping",
            &data("coverage_mapping.tsv"),
            "--buckets",
            "1,5",
            "--plot-data",
        ])
        .arg(&plot)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let expected = std::fs::read_to_string(data("golden_frequency.txt")).unwrap();
    assert_eq!(stdout_of(&out), expected);
    let plot_text = std::fs::read_to_string(&plot).unwrap();
    assert_eq!(plot_text, "1 66.67\n5 100.00\n");
}

#[test]
fn stats_on_a_fresh_store_is_all_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let db = db_path(dir.path(), "stats.db");
    bin().args(["init", "--db", &db]).output().unwrap();
    let out = bin().args(["report", "stats", "--db", &db]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout_of(&out);
    for metric in ["pending", "claimed", "fetched", "failed", "max_depth", "links"] {
        assert!(text.contains(metric));
    }
    for line in text.lines().skip(1) {
        assert!(line.trim_end().ends_with('0'), "non-zero line: {line}");
    }
}

#[test]
fn mockweb_rejects_bad_specs_and_busy_ports() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.spec");
    std::fs::write(&bad, "pages 0\n").unwrap();
    let out = bin()
        .args(["mockweb"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("bundle"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // occupy a port, then ask the server to bind it
    let blocker = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = blocker.local_addr().unwrap().port();
    let good = dir.path().join("good.spec");
    std::fs::write(&good, "seed 1\npages 10\ndomains 2\nseed-pages 1\n").unwrap();
    let out = bin()
        .args(["mockweb"])
        .arg(&good)
        .args(["--bind", &format!("127.0.0.1:{port}")])
        .args(["--out"])
        .arg(dir.path().join("bundle2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn mockweb_serves_and_exits_zero_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("web.spec");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    std::fs::write(&spec, "seed 9\npages 12\ndomains 2\nseed-pages 1\n").unwrap();
    let mut child = bin()
        .args(["mockweb"])
        .arg(&spec)
        .args(["--bind", &format!("127.0.0.1:{port}")])
        .args(["--out"])
        .arg(dir.path().join("bundle"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    // wait for it to come up, then check the manifest it promised
    let mut manifest_line = String::new();
    {
        use std::io::BufRead;
        let stdout = child.stdout.take().unwrap();
        let mut reader = std::io::BufReader::new(stdout);
        reader.read_line(&mut manifest_line).unwrap();
    }
    let manifest = manifest_line.trim();
    assert!(Path::new(manifest).exists(), "manifest at {manifest}");
    assert!(std::fs::read_to_string(manifest).unwrap().contains("pages 12"));

    unsafe {
        libc_kill(child.id() as i32, 15); // SIGTERM
    }
    let status = wait_with_timeout(&mut child, Duration::from_secs(5));
    assert_eq!(status, Some(0), "mockweb must exit 0 on SIGTERM");
}

extern "C" {
    #[link_name = "kill"]
    fn libc_kill(pid: i32, sig: i32) -> i32;
}

fn wait_with_timeout(child: &mut std::process::Child, timeout: Duration) -> Option<i32> {
    let start = std::time::Instant::now();
    while start.elapsed() < timeout {
        if let Ok(Some(status)) = child.try_wait() {
            return status.code();
        }
        std::thread::sleep(Duration::from_millis(25));
    }
    let _ = child.kill();
    None
}

/// Drives the full operator path through the executable: init, seed, crawl,
/// then hard-kills a crawl mid-flight and verifies lease recovery restores
/// the exact no-crash fetch set.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn binary_crawl_survives_a_hard_kill() {
    let spec = MockWebSpec {
        seed: 77,
        pages: 300,
        domains: 6,
        seed_pages: 3,
        out_degree: (2, 6),
        ..MockWebSpec::default()
    };
    let (bundle, server) = spawn_web(spec).await;
    let dir = tempfile::tempdir().unwrap();
    let seeds_file = dir.path().join("seeds.txt");
    std::fs::write(&seeds_file, bundle.seed_urls().join("\n")).unwrap();
    let strategy = data("figure.strategy");

    let crawl_args = |db: &str| {
        vec![
            "crawl".to_string(),
            "--db".to_string(),
            db.to_string(),
            "--strategy".to_string(),
            strategy.clone(),
            "--resolve".to_string(),
            "127.0.0.1".to_string(),
            "--no-robots".to_string(),
            "--min-interval".to_string(),
            "0".to_string(),
            "--max-per-domain".to_string(),
            "64".to_string(),
            "--idle-shutdown".to_string(),
            "0.4".to_string(),
            "--lease".to_string(),
            "1".to_string(),
        ]
    };

    // uninterrupted baseline through the binary
    let clean_db = db_path(dir.path(), "clean.db");
    let run = |args: &[String]| bin().args(args).output().unwrap();
    assert_eq!(run(&["init".into(), "--db".into(), clean_db.clone()]).status.code(), Some(0));
    let seed_out = bin()
        .args(["seed", "--db", &clean_db, "--strategy", &strategy])
        .arg(&seeds_file)
        .output()
        .unwrap();
    assert!(stdout_of(&seed_out).contains("inserted 3"));
    let out = run(&crawl_args(&clean_db));
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let summary: serde_json::Value = serde_json::from_str(stdout_of(&out).trim()).unwrap();
    assert_eq!(summary["fetched"].as_u64().unwrap() as usize, bundle.reachable().len());
    assert_eq!(summary["stop_reason"], "idle");

    // killed run: SIGKILL mid-crawl, then a second run finishes the job
    let crash_db = db_path(dir.path(), "crash.db");
    run(&["init".into(), "--db".into(), crash_db.clone()]);
    bin()
        .args(["seed", "--db", &crash_db, "--strategy", &strategy])
        .arg(&seeds_file)
        .output()
        .unwrap();
    let mut child = bin()
        .args(crawl_args(&crash_db))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(350));
    unsafe {
        libc_kill(child.id() as i32, 9); // SIGKILL: no graceful path
    }
    let _ = child.wait();

    // leases are 1s; the rerun sweeps them and completes the crawl
    std::thread::sleep(Duration::from_millis(1100));
    let out = run(&crawl_args(&crash_db));
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    assert_eq!(fetched_urls(&crash_db), fetched_urls(&clean_db));
    assert_eq!(fetched_urls(&crash_db), reachable_urls(&bundle));

    // exactly-once: nothing is fetched twice even across the crash
    let mut store = SqliteStore::open(&crash_db).unwrap();
    let stats = store.stats().unwrap();
    assert_eq!(stats.fetched as usize, bundle.reachable().len());
    assert_eq!(stats.claimed, 0);
    let fetched: HashSet<String> = fetched_urls(&crash_db);
    assert_eq!(fetched.len() as u64, stats.fetched);
    server.shutdown().await;
}
