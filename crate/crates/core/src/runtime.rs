//! The per-instance crawl loop: claim a batch, fetch in parallel under the
//! politeness gate, extract links, submit the discoveries — repeated until a
//! stop condition. Many instances may run this loop against one store; they
//! share nothing else.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::events::EventLog;
use crate::extractor;
use crate::fetcher::politeness::{PolitenessGate, PolitenessPolicy};
use crate::fetcher::robots::RobotsCache;
use crate::fetcher::{FetchErrorKind, FetchLimits, Fetcher, HostResolution, DEFAULT_USER_AGENT};
use crate::frontier::{
    ClaimToken, Discovery, FetchDisposition, FrontierError, FrontierStore, SourceResult,
    Timestamp, UrlRecord,
};
use crate::scoring::KeywordStrategy;

#[derive(Debug, Clone)]
pub struct InstanceConfig {
    pub instance_id: String,
    pub batch_size: usize,
    /// Instance-wide cap on simultaneous fetches.
    pub parallel_fetches: usize,
    pub lease: Duration,
    /// Stop after this many fetch attempts (successes plus failures).
    pub stop_after: Option<u64>,
    /// Exit once the frontier has stayed empty this long.
    pub idle_shutdown: Duration,
    pub poll_interval: Duration,
    pub fetch_limits: FetchLimits,
    pub politeness: PolitenessPolicy,
    pub user_agent: String,
    pub obey_robots: bool,
    pub resolution: HostResolution,
    /// When set, successful bodies are stored under `<dir>/<xy>/<hash>`,
    /// hash = sha256 of the canonical URL, with an append-only index file.
    pub content_dir: Option<PathBuf>,
    /// Record the fetched URL list in the summary (tests and audits).
    pub record_fetches: bool,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            instance_id: format!("instance-{}", std::process::id()),
            batch_size: 50,
            parallel_fetches: 20,
            lease: Duration::from_secs(600),
            stop_after: None,
            idle_shutdown: Duration::from_secs(5),
            poll_interval: Duration::from_millis(250),
            fetch_limits: FetchLimits::default(),
            politeness: PolitenessPolicy::default(),
            user_agent: DEFAULT_USER_AGENT.to_string(),
            obey_robots: true,
            resolution: HostResolution::System,
            content_dir: None,
            record_fetches: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Idle,
    StopAfter,
    Signal,
    StoreError,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub instance_id: String,
    pub fetched: u64,
    pub failed: u64,
    pub new_urls: u64,
    pub new_links: u64,
    pub wall_ms: u64,
    pub stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fetched_urls: Option<Vec<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Frontier(#[from] FrontierError),
    #[error("cannot build fetcher: {0}")]
    Fetcher(String),
}

/// Cooperative shutdown flag shared with signal handlers.
#[derive(Clone, Default)]
pub struct ShutdownSignal(Arc<AtomicBool>);

impl ShutdownSignal {
    pub fn new() -> Self {
        ShutdownSignal::default()
    }

    pub fn trigger(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_triggered(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

type SharedStore = Arc<Mutex<Box<dyn FrontierStore>>>;

/// Runs a store operation on the blocking pool with bounded retries on
/// transient unavailability.
async fn with_store<T, F>(store: &SharedStore, mut op: F) -> Result<T, FrontierError>
where
    T: Send + 'static,
    F: FnMut(&mut dyn FrontierStore) -> Result<T, FrontierError> + Send + 'static,
{
    let store = Arc::clone(store);
    tokio::task::spawn_blocking(move || {
        let mut guard = store.lock().expect("store lock");
        let mut delay = Duration::from_millis(100);
        let mut attempt = 0;
        loop {
            match op(guard.as_mut()) {
                Err(FrontierError::StoreUnavailable(_)) if attempt < 2 => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    })
    .await
    .expect("store task never panics")
}

struct Workers {
    fetcher: Fetcher,
    gate: Arc<PolitenessGate>,
    robots: Option<Arc<RobotsCache>>,
    semaphore: Arc<tokio::sync::Semaphore>,
    shutdown: ShutdownSignal,
    events: Arc<EventLog>,
    content_dir: Option<PathBuf>,
}

/// Fetches one claimed record; `None` means the fetch never started (the
/// claim should be released).
async fn fetch_one(w: Arc<Workers>, record: UrlRecord) -> Option<SourceResult> {
    let _instance_permit = w
        .semaphore
        .clone()
        .acquire_owned()
        .await
        .expect("semaphore open");
    if w.shutdown.is_triggered() {
        return None;
    }
    let domain = record.url.domain().registrable().to_string();
    let _domain_permit = w.gate.acquire(&domain).await;

    if let Some(robots) = &w.robots {
        if !robots.allows(&w.fetcher, &record.url).await {
            w.events.emit(
                "fetch",
                json!({"url": record.url.to_string(), "error": FetchErrorKind::RobotsDenied.to_string()}),
            );
            return Some(SourceResult {
                source: record.url.clone(),
                source_depth: record.depth,
                disposition: FetchDisposition::Failed {
                    http_status: None,
                    error: FetchErrorKind::RobotsDenied.to_string(),
                },
                discovered: Vec::new(),
            });
        }
    }

    let outcome = w.fetcher.fetch(&record.url).await;
    let discovered = if outcome.is_success() {
        extractor::extract_links(&outcome.body, outcome.content_type.as_deref())
            .into_iter()
            .map(|l| Discovery {
                target_raw: l.target_raw,
                context: l.context,
            })
            .collect()
    } else {
        Vec::new()
    };

    if outcome.is_success() {
        if let Some(dir) = &w.content_dir {
            if let Err(e) = store_body(dir, &record.url.to_string(), &outcome.body) {
                w.events
                    .emit("error", json!({"stage": "content_dir", "message": e.to_string()}));
            }
        }
    }

    let disposition = match (&outcome.error, outcome.http_status) {
        (Some(kind), _) => FetchDisposition::Failed {
            http_status: outcome.http_status,
            error: kind.to_string(),
        },
        (None, Some(status)) if (200..300).contains(&status) => {
            FetchDisposition::Fetched { http_status: status }
        }
        (None, status) => FetchDisposition::Failed {
            http_status: status,
            error: format!("http {}", status.unwrap_or(0)),
        },
    };
    w.events.emit(
        "fetch",
        json!({
            "url": record.url.to_string(),
            "status": outcome.http_status,
            "error": outcome.error.as_ref().map(|e| e.to_string()),
            "ms": outcome.elapsed.as_millis() as u64,
            "links": discovered.len(),
        }),
    );
    Some(SourceResult {
        source: record.url.clone(),
        source_depth: record.depth,
        disposition,
        discovered,
    })
}

fn store_body(dir: &PathBuf, url: &str, body: &[u8]) -> std::io::Result<()> {
    let hash = format!("{:x}", Sha256::digest(url.as_bytes()));
    let subdir = dir.join(&hash[..2]);
    std::fs::create_dir_all(&subdir)?;
    std::fs::write(subdir.join(&hash), body)?;
    use std::io::Write;
    let mut index = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("index.tsv"))?;
    writeln!(index, "{hash}\t{url}")?;
    Ok(())
}

struct PendingSubmit {
    token: ClaimToken,
    attempted: usize,
    fetched: u64,
    failed: u64,
    fetched_urls: Vec<String>,
    task: tokio::task::JoinHandle<Result<(u64, u64, u64), FrontierError>>,
}

/// Runs one crawler instance to completion. `store_factory` is called once
/// per connection the runtime needs (claims and submissions overlap by one
/// batch of lookahead).
pub async fn run_instance(
    config: InstanceConfig,
    store_factory: impl Fn() -> Result<Box<dyn FrontierStore>, FrontierError>,
    strategy: Arc<KeywordStrategy>,
    events: Arc<EventLog>,
    shutdown: ShutdownSignal,
) -> Result<RunSummary, RuntimeError> {
    let started = Instant::now();
    if config.batch_size < config.parallel_fetches {
        events.emit(
            "warning",
            json!({"message": format!(
                "batch_size {} below parallel_fetches {}; workers will idle",
                config.batch_size, config.parallel_fetches
            )}),
        );
    }
    let claim_store: SharedStore = Arc::new(Mutex::new(store_factory()?));
    let submit_store: SharedStore = Arc::new(Mutex::new(store_factory()?));
    let fetcher = Fetcher::new(
        &config.user_agent,
        config.fetch_limits.clone(),
        config.resolution.clone(),
    )
    .map_err(|e| RuntimeError::Fetcher(e.to_string()))?;
    let workers = Arc::new(Workers {
        fetcher,
        gate: PolitenessGate::new(config.politeness.clone()),
        robots: config
            .obey_robots
            .then(|| RobotsCache::new(&config.user_agent, Duration::from_secs(3600))),
        semaphore: Arc::new(tokio::sync::Semaphore::new(config.parallel_fetches.max(1))),
        shutdown: shutdown.clone(),
        events: Arc::clone(&events),
        content_dir: config.content_dir.clone(),
    });

    let mut summary = RunSummary {
        instance_id: config.instance_id.clone(),
        fetched: 0,
        failed: 0,
        new_urls: 0,
        new_links: 0,
        wall_ms: 0,
        stop_reason: StopReason::Idle,
        error: None,
        fetched_urls: config.record_fetches.then(Vec::new),
    };
    let mut attempts: u64 = 0;
    let mut idle_since: Option<Instant> = None;
    let mut pending: Option<PendingSubmit> = None;

    // Awaits the lookahead submission and folds its counts into the summary.
    async fn settle(
        pending: &mut Option<PendingSubmit>,
        summary: &mut RunSummary,
        events: &EventLog,
    ) -> Result<(), FrontierError> {
        let Some(p) = pending.take() else {
            return Ok(());
        };
        let result = p.task.await.expect("submit task never panics");
        match result {
            Ok((new_urls, new_links, released)) => {
                summary.fetched += p.fetched;
                summary.failed += p.failed;
                summary.new_urls += new_urls;
                summary.new_links += new_links;
                if let Some(urls) = &mut summary.fetched_urls {
                    urls.extend(p.fetched_urls);
                }
                events.emit(
                    "submit",
                    json!({
                        "token": p.token.0,
                        "sources": p.attempted,
                        "new_urls": new_urls,
                        "new_links": new_links,
                        "released": released,
                    }),
                );
                Ok(())
            }
            Err(FrontierError::ExpiredClaim(token)) | Err(FrontierError::UnknownToken(token)) => {
                // Lease lost: the work is discarded; the URLs are pending
                // again and will be re-fetched by someone.
                events.emit("error", json!({"stage": "submit", "message": format!("claim {token} lost")}));
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    let outcome: Result<StopReason, FrontierError> = loop {
        if shutdown.is_triggered() {
            break Ok(StopReason::Signal);
        }
        // Expiry sweep keeps crashed instances' work claimable.
        let now = Timestamp::now();
        match with_store(&claim_store, move |s| s.expire_leases(now)).await {
            Ok(reverted) if reverted > 0 => {
                events.emit("expire", json!({"reverted": reverted}));
            }
            Ok(_) => {}
            Err(e) => break Err(e),
        }

        // `attempts` already counts batches whose submission is in flight.
        let allowance = match config.stop_after {
            Some(limit) => limit.saturating_sub(attempts),
            None => u64::MAX,
        };
        if allowance == 0 {
            if let Err(e) = settle(&mut pending, &mut summary, &events).await {
                break Err(e);
            }
            break Ok(StopReason::StopAfter);
        }
        let limit = config.batch_size.min(allowance.min(usize::MAX as u64) as usize);

        let lease = config.lease;
        let instance_id = config.instance_id.clone();
        let batch = match with_store(&claim_store, move |s| {
            s.claim_batch(limit, lease, &instance_id)
        })
        .await
        {
            Ok(b) => b,
            Err(e) => break Err(e),
        };

        if batch.is_empty() {
            if pending.is_some() {
                if let Err(e) = settle(&mut pending, &mut summary, &events).await {
                    break Err(e);
                }
                continue;
            }
            let idle_started = *idle_since.get_or_insert_with(Instant::now);
            if idle_started.elapsed() >= config.idle_shutdown {
                break Ok(StopReason::Idle);
            }
            tokio::time::sleep(config.poll_interval).await;
            continue;
        }
        idle_since = None;
        events.emit(
            "claim",
            json!({"token": batch.token.0, "count": batch.urls.len()}),
        );

        let mut tasks = tokio::task::JoinSet::new();
        for record in batch.urls {
            tasks.spawn(fetch_one(Arc::clone(&workers), record));
        }
        let mut results: Vec<SourceResult> = Vec::new();
        let mut skipped = 0usize;
        while let Some(joined) = tasks.join_next().await {
            match joined.expect("fetch task never panics") {
                Some(result) => results.push(result),
                None => skipped += 1,
            }
        }

        // Finish the previous submission before queueing this one (one
        // batch of lookahead keeps claims fresh without unbounded overlap).
        if let Err(e) = settle(&mut pending, &mut summary, &events).await {
            break Err(e);
        }

        attempts += results.len() as u64;
        let fetched = results
            .iter()
            .filter(|r| matches!(r.disposition, FetchDisposition::Fetched { .. }))
            .count() as u64;
        let failed = results.len() as u64 - fetched;
        let fetched_urls: Vec<String> = if config.record_fetches {
            results
                .iter()
                .filter(|r| matches!(r.disposition, FetchDisposition::Fetched { .. }))
                .map(|r| r.source.to_string())
                .collect()
        } else {
            Vec::new()
        };

        let token = batch.token.clone();
        let submit_store_ref = Arc::clone(&submit_store);
        let strategy_ref = Arc::clone(&strategy);
        let attempted = results.len();
        let must_release = skipped > 0;
        let task = tokio::spawn(async move {
            let token_for_submit = token.clone();
            let submit = with_store(&submit_store_ref, move |s| {
                s.submit_discoveries(&token_for_submit, &results, &strategy_ref)
            })
            .await?;
            let released = if must_release {
                let token_for_release = token.clone();
                with_store(&submit_store_ref, move |s| {
                    s.release_claim(&token_for_release)
                })
                .await?
            } else {
                0
            };
            Ok((submit.new_urls, submit.new_links, released))
        });
        pending = Some(PendingSubmit {
            token: batch.token,
            attempted,
            fetched,
            failed,
            fetched_urls,
            task,
        });
    };

    // Drain the lookahead whatever happened.
    if let Err(e) = settle(&mut pending, &mut summary, &events).await {
        summary.stop_reason = StopReason::StoreError;
        summary.error = Some(e.to_string());
    }

    match outcome {
        Ok(reason) => summary.stop_reason = reason,
        Err(e) => {
            summary.stop_reason = StopReason::StoreError;
            summary.error = Some(e.to_string());
        }
    }
    summary.wall_ms = started.elapsed().as_millis() as u64;
    events.emit(
        "done",
        json!({
            "fetched": summary.fetched,
            "failed": summary.failed,
            "new_urls": summary.new_urls,
            "stop_reason": serde_json::to_value(summary.stop_reason).unwrap(),
        }),
    );
    Ok(summary)
}
