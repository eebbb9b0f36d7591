//! The relational coordination core.
//!
//! URLs and links live in a SQL store with uniqueness constraints; competing
//! crawler instances claim score-ordered batches of pending URLs under a
//! lease and submit fetch results plus discovered links back through one
//! insertion view (`discoveries`). A trigger behind the view maintains the
//! internal tables: new URLs are inserted pending at `source depth + 1`,
//! links are deduplicated per `(source, target)`, and a target's priority is
//! incremented by the link's context score exactly once per new link.
//!
//! Two backends implement the same contract: an embedded SQLite file for
//! desk-scale runs and tests, and PostgreSQL over the wire protocol for
//! multi-machine deployments. The SQL sticks to widely supported features:
//! transactions, unique constraints, ordered selection, views, triggers.

pub mod postgres;
pub mod sqlite;

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::scoring::{score_link, score_url, KeywordStrategy};
use crate::urlkit::{self, CanonicalUrl, UrlError};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum FrontierError {
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("insufficient privilege: {0}")]
    InsufficientPrivilege(String),
    #[error("store schema version {found} is newer than supported version {supported}")]
    SchemaVersionMismatch { found: i64, supported: i64 },
    #[error("unknown claim token `{0}`")]
    UnknownToken(String),
    #[error("claim `{0}` expired or was already completed")]
    ExpiredClaim(String),
    #[error("submitted source `{0}` is not part of the claim")]
    SourceNotInClaim(String),
    #[error("store error: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, FrontierError>;

/// Milliseconds since the Unix epoch. All lease arithmetic runs on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn now() -> Self {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_millis() as i64;
        Timestamp(ms)
    }

    pub fn plus(self, d: Duration) -> Self {
        Timestamp(self.0 + d.as_millis() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UrlStatus {
    Pending,
    Claimed,
    Fetched,
    Failed,
}

impl UrlStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            UrlStatus::Pending => "pending",
            UrlStatus::Claimed => "claimed",
            UrlStatus::Fetched => "fetched",
            UrlStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(UrlStatus::Pending),
            "claimed" => Ok(UrlStatus::Claimed),
            "fetched" => Ok(UrlStatus::Fetched),
            "failed" => Ok(UrlStatus::Failed),
            other => Err(FrontierError::Backend(format!("bad status `{other}`"))),
        }
    }
}

/// One frontier row.
#[derive(Debug, Clone)]
pub struct UrlRecord {
    pub id: i64,
    pub url: CanonicalUrl,
    pub url_score: i64,
    pub link_score_sum: i64,
    pub priority: i64,
    pub depth: u32,
    pub status: UrlStatus,
    pub http_status: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClaimToken(pub String);

impl ClaimToken {
    fn fresh() -> Self {
        ClaimToken(uuid::Uuid::new_v4().to_string())
    }
}

/// A leased set of URLs exclusively owned by one instance until submitted,
/// released, or expired.
#[derive(Debug)]
pub struct CrawlBatch {
    pub token: ClaimToken,
    pub lease_expiry: Timestamp,
    pub urls: Vec<UrlRecord>,
}

impl CrawlBatch {
    pub fn is_empty(&self) -> bool {
        self.urls.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct SeedOutcome {
    pub inserted: u64,
    pub skipped: u64,
    pub rejected: Vec<(String, UrlError)>,
}

#[derive(Debug, Clone)]
pub enum FetchDisposition {
    Fetched { http_status: u16 },
    Failed { http_status: Option<u16>, error: String },
}

/// A link found on a fetched page, still raw: canonicalization happens at
/// submission so one bad href never aborts a batch.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub target_raw: String,
    pub context: String,
}

#[derive(Debug, Clone)]
pub struct SourceResult {
    pub source: CanonicalUrl,
    pub source_depth: u32,
    pub disposition: FetchDisposition,
    pub discovered: Vec<Discovery>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SubmitOutcome {
    pub sources_updated: u64,
    pub new_urls: u64,
    pub new_links: u64,
    /// Discovered targets dropped because they did not canonicalize.
    pub skipped_targets: u64,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FrontierStats {
    pub pending: u64,
    pub claimed: u64,
    pub fetched: u64,
    pub failed: u64,
    pub max_depth: u32,
    pub links: u64,
}

/// One stored link with the depth the insertion channel asserted for its
/// target (min-maintained across re-assertions), from which stored depths
/// are exactly reconstructable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkExport {
    pub source: String,
    pub target: String,
    pub asserted_depth: u32,
}

#[derive(Debug, Clone)]
pub struct ExportedUrl {
    pub url: String,
    pub depth: u32,
    pub status: UrlStatus,
    pub priority: i64,
    pub last_error: Option<String>,
}

#[derive(Debug, Default)]
pub struct PriorityAudit {
    pub checked: u64,
    pub violations: Vec<String>,
}

/// The store contract every backend implements. Handles are not shareable
/// across workers; each worker opens its own connection.
pub trait FrontierStore: Send {
    /// Creates tables, constraints, indexes and the insertion view.
    /// Idempotent; refuses to run against a store with a newer schema.
    fn init_schema(&mut self) -> Result<()>;

    /// Installs server-side scoring functions equivalent to the strategy,
    /// on backends with a procedural language. Returns false when the
    /// backend cannot host them.
    fn install_strategy_functions(&mut self, strategy: &KeywordStrategy) -> Result<bool>;

    /// Inserts seed URLs at depth 0. Duplicates (within the call or against
    /// existing rows) are skipped; malformed entries are reported per entry.
    fn insert_seeds(&mut self, raw_urls: &[String], strategy: &KeywordStrategy)
        -> Result<SeedOutcome>;

    /// Atomically claims up to `limit` pending URLs ordered by
    /// (priority DESC, id ASC). Concurrent claimers never receive
    /// overlapping sets.
    fn claim_batch(&mut self, limit: usize, lease: Duration, instance_id: &str)
        -> Result<CrawlBatch>;

    /// Submits fetch results and discovered links for a claimed batch in one
    /// transaction. Fails with `ExpiredClaim`/`UnknownToken` when the lease
    /// is gone; the work is then discarded by the caller.
    fn submit_discoveries(
        &mut self,
        token: &ClaimToken,
        results: &[SourceResult],
        strategy: &KeywordStrategy,
    ) -> Result<SubmitOutcome>;

    /// Returns still-claimed URLs of this token to pending (shutdown path).
    fn release_claim(&mut self, token: &ClaimToken) -> Result<u64>;

    /// Reverts every claim whose lease expired before `now`.
    fn expire_leases(&mut self, now: Timestamp) -> Result<u64>;

    fn stats(&mut self) -> Result<FrontierStats>;

    /// Every URL row, in insertion (id) order.
    fn export_urls(&mut self) -> Result<Vec<ExportedUrl>>;

    /// Every stored link with its asserted target depth, insertion order.
    fn export_edges(&mut self) -> Result<Vec<LinkExport>>;

    /// Recomputes `priority = url_score + sum(inbound context scores)` from
    /// the link table and reports any row that disagrees.
    fn audit_priorities(&mut self) -> Result<PriorityAudit>;
}

/// Opens a store from a connection string: `postgres://` / `postgresql://`
/// URLs go to the PostgreSQL backend, anything else (optionally prefixed
/// `sqlite:`) is treated as a SQLite database path.
pub fn open_store(db: &str) -> Result<Box<dyn FrontierStore>> {
    if db.starts_with("postgres://") || db.starts_with("postgresql://") {
        Ok(Box::new(postgres::PgStore::connect(db)?))
    } else {
        let path = db.strip_prefix("sqlite:").unwrap_or(db);
        Ok(Box::new(sqlite::SqliteStore::open(path)?))
    }
}

/// A discovery row ready for the insertion view, with scores and depth
/// computed client-side.
#[derive(Debug, Clone)]
pub(crate) struct DiscoveryRow {
    pub source_url: String,
    pub target_url: String,
    pub target_domain: String,
    pub target_tld: String,
    pub target_url_score: i64,
    pub context: String,
    pub context_score: i64,
    pub target_depth: i64,
}

/// Canonicalizes and scores the discoveries of one source. Unparseable or
/// non-http targets are counted and dropped.
pub(crate) fn prepare_discovery_rows(
    result: &SourceResult,
    strategy: &KeywordStrategy,
) -> (Vec<DiscoveryRow>, u64) {
    let mut rows = Vec::with_capacity(result.discovered.len());
    let mut skipped = 0u64;
    for d in &result.discovered {
        let target = match urlkit::canonicalize(&d.target_raw, Some(&result.source)) {
            Ok(t) => t,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let domain = target.domain();
        rows.push(DiscoveryRow {
            source_url: result.source.to_string(),
            target_url: target.to_string(),
            target_domain: domain.registrable().to_string(),
            target_tld: domain.tld().to_string(),
            target_url_score: score_url(&target, strategy),
            context: d.context.clone(),
            context_score: score_link(&d.context, strategy),
            target_depth: i64::from(result.source_depth) + 1,
        });
    }
    (rows, skipped)
}

/// Canonicalizes seeds, deduplicating within the call; returns prepared rows
/// plus per-entry rejections.
pub(crate) fn prepare_seed_rows(
    raw_urls: &[String],
    strategy: &KeywordStrategy,
) -> (Vec<SeedRow>, Vec<(String, UrlError)>, u64) {
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    let mut in_call_duplicates = 0u64;
    for raw in raw_urls {
        match urlkit::canonicalize(raw, None) {
            Ok(url) => {
                let key = url.to_string();
                // first occurrence wins; caller order defines insertion ids
                if !seen.insert(key.clone()) {
                    in_call_duplicates += 1;
                    continue;
                }
                let domain = url.domain();
                rows.push(SeedRow {
                    url: key,
                    domain: domain.registrable().to_string(),
                    tld: domain.tld().to_string(),
                    url_score: score_url(&url, strategy),
                });
            }
            Err(e) => rejected.push((raw.clone(), e)),
        }
    }
    (rows, rejected, in_call_duplicates)
}

#[derive(Debug, Clone)]
pub(crate) struct SeedRow {
    pub url: String,
    pub domain: String,
    pub tld: String,
    pub url_score: i64,
}

impl FetchDisposition {
    pub(crate) fn status_str(&self) -> &'static str {
        match self {
            FetchDisposition::Fetched { .. } => "fetched",
            FetchDisposition::Failed { .. } => "failed",
        }
    }

    pub(crate) fn http_status(&self) -> Option<u16> {
        match self {
            FetchDisposition::Fetched { http_status } => Some(*http_status),
            FetchDisposition::Failed { http_status, .. } => *http_status,
        }
    }

    pub(crate) fn error_text(&self) -> Option<&str> {
        match self {
            FetchDisposition::Fetched { .. } => None,
            FetchDisposition::Failed { error, .. } => Some(error.as_str()),
        }
    }
}
