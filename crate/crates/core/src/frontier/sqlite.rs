//! Embedded SQLite backend.
//!
//! One database file is shared by any number of instances; SQLite's write
//! lock serializes claim/submit transactions, which is exactly the claim
//! exclusivity the contract needs. WAL mode keeps readers off the writers'
//! backs and a generous busy timeout absorbs contention.

use std::path::Path;
use std::time::Duration;

use rusqlite::{params, Connection, ErrorCode, OpenFlags, TransactionBehavior};

use super::*;

const SCHEMA_SQL: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
  key   TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS urls (
  id             INTEGER PRIMARY KEY,
  url            TEXT NOT NULL UNIQUE,
  domain         TEXT NOT NULL,
  tld            TEXT NOT NULL,
  url_score      INTEGER NOT NULL,
  link_score_sum INTEGER NOT NULL DEFAULT 0,
  priority       INTEGER NOT NULL,
  depth          INTEGER NOT NULL,
  status         TEXT NOT NULL DEFAULT 'pending'
                 CHECK (status IN ('pending','claimed','fetched','failed')),
  claim_token    TEXT,
  claim_expiry   INTEGER,
  http_status    INTEGER,
  fetched_at     INTEGER,
  fetched_by     TEXT,
  last_error     TEXT
);
CREATE INDEX IF NOT EXISTS urls_claim_order ON urls (status, priority DESC, id);
CREATE INDEX IF NOT EXISTS urls_claim_token ON urls (claim_token) WHERE claim_token IS NOT NULL;
CREATE TABLE IF NOT EXISTS links (
  seq            INTEGER PRIMARY KEY,
  source_id      INTEGER NOT NULL REFERENCES urls(id),
  target_id      INTEGER NOT NULL REFERENCES urls(id),
  context        TEXT NOT NULL,
  context_score  INTEGER NOT NULL,
  asserted_depth INTEGER NOT NULL,
  UNIQUE (source_id, target_id)
);
CREATE INDEX IF NOT EXISTS links_target ON links (target_id);
CREATE TABLE IF NOT EXISTS claims (
  token       TEXT PRIMARY KEY,
  instance_id TEXT NOT NULL,
  issued_at   INTEGER NOT NULL,
  expiry      INTEGER NOT NULL,
  url_count   INTEGER NOT NULL,
  released    INTEGER NOT NULL DEFAULT 0
);
CREATE VIEW IF NOT EXISTS discoveries AS
SELECT s.url        AS source_url,
       t.url        AS target_url,
       t.domain     AS target_domain,
       t.tld        AS target_tld,
       t.url_score  AS target_url_score,
       l.context    AS context,
       l.context_score AS context_score,
       t.depth      AS target_depth
  FROM links l
  JOIN urls s ON s.id = l.source_id
  JOIN urls t ON t.id = l.target_id;
CREATE TRIGGER IF NOT EXISTS discoveries_insert INSTEAD OF INSERT ON discoveries
BEGIN
  INSERT INTO urls (url, domain, tld, url_score, link_score_sum, priority, depth, status)
  VALUES (NEW.target_url, NEW.target_domain, NEW.target_tld, NEW.target_url_score, 0,
          NEW.target_url_score, NEW.target_depth, 'pending')
  ON CONFLICT (url) DO UPDATE SET depth = min(urls.depth, excluded.depth);
  -- bump scores before inserting the link so the bump happens exactly once
  UPDATE urls
     SET link_score_sum = link_score_sum + NEW.context_score,
         priority       = priority + NEW.context_score
   WHERE url = NEW.target_url
     AND NOT EXISTS (
           SELECT 1 FROM links
            WHERE source_id = (SELECT id FROM urls WHERE url = NEW.source_url)
              AND target_id = (SELECT id FROM urls WHERE url = NEW.target_url));
  INSERT INTO links (source_id, target_id, context, context_score, asserted_depth)
  SELECT s.id, t.id, NEW.context, NEW.context_score, NEW.target_depth
    FROM urls s, urls t
   WHERE s.url = NEW.source_url AND t.url = NEW.target_url
  ON CONFLICT (source_id, target_id)
  DO UPDATE SET asserted_depth = min(asserted_depth, excluded.asserted_depth);
END;
"#;

pub struct SqliteStore {
    conn: Connection,
    now_fn: Box<dyn Fn() -> Timestamp + Send>,
}

impl SqliteStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path.as_ref()).map_err(map_err)?;
        Self::configure(conn)
    }

    /// Opens the database read-only, so every mutating operation fails with
    /// `InsufficientPrivilege` (the embedded analog of read-only
    /// credentials).
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open_with_flags(
            path.as_ref(),
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(map_err)?;
        Self::configure(conn)
    }

    fn configure(conn: Connection) -> Result<Self> {
        conn.busy_timeout(Duration::from_secs(10)).map_err(map_err)?;
        // WAL and foreign keys are best-effort: they fail on read-only
        // handles, which must still be able to run queries.
        let _ = conn.pragma_update(None, "journal_mode", "WAL");
        let _ = conn.pragma_update(None, "synchronous", "NORMAL");
        let _ = conn.pragma_update(None, "foreign_keys", "ON");
        Ok(SqliteStore {
            conn,
            now_fn: Box::new(Timestamp::now),
        })
    }

    /// Replaces the wall clock, for deterministic lease tests.
    pub fn set_clock(&mut self, f: impl Fn() -> Timestamp + Send + 'static) {
        self.now_fn = Box::new(f);
    }

    fn stored_version(&self) -> Result<Option<i64>> {
        let has_meta: i64 = self
            .conn
            .query_row(
                "SELECT COUNT(*) FROM sqlite_master WHERE type = 'table' AND name = 'meta'",
                [],
                |r| r.get(0),
            )
            .map_err(map_err)?;
        if has_meta == 0 {
            return Ok(None);
        }
        let version: Option<String> = self
            .conn
            .query_row(
                "SELECT value FROM meta WHERE key = 'schema_version'",
                [],
                |r| r.get(0),
            )
            .optional_err()?;
        Ok(version.and_then(|v| v.parse().ok()))
    }
}

trait OptionalRow<T> {
    fn optional_err(self) -> Result<Option<T>>;
}

impl<T> OptionalRow<T> for std::result::Result<T, rusqlite::Error> {
    fn optional_err(self) -> Result<Option<T>> {
        match self {
            Ok(v) => Ok(Some(v)),
            Err(rusqlite::Error::QueryReturnedNoRows) => Ok(None),
            Err(e) => Err(map_err(e)),
        }
    }
}

fn map_err(e: rusqlite::Error) -> FrontierError {
    if let rusqlite::Error::SqliteFailure(ffi, ref msg) = e {
        let detail = msg.clone().unwrap_or_else(|| ffi.to_string());
        match ffi.code {
            ErrorCode::ReadOnly | ErrorCode::PermissionDenied | ErrorCode::AuthorizationForStatementDenied => {
                return FrontierError::InsufficientPrivilege(detail)
            }
            ErrorCode::DatabaseBusy | ErrorCode::DatabaseLocked | ErrorCode::CannotOpen => {
                return FrontierError::StoreUnavailable(detail)
            }
            _ => return FrontierError::Backend(detail),
        }
    }
    FrontierError::Backend(e.to_string())
}

fn row_to_record(row: &rusqlite::Row<'_>) -> rusqlite::Result<(i64, String, i64, i64, i64, i64, String, Option<i64>)> {
    Ok((
        row.get(0)?,
        row.get(1)?,
        row.get(2)?,
        row.get(3)?,
        row.get(4)?,
        row.get(5)?,
        row.get(6)?,
        row.get(7)?,
    ))
}

fn build_record(
    (id, url, url_score, link_score_sum, priority, depth, status, http_status): (
        i64,
        String,
        i64,
        i64,
        i64,
        i64,
        String,
        Option<i64>,
    ),
) -> Result<UrlRecord> {
    Ok(UrlRecord {
        id,
        url: CanonicalUrl::parse(&url)
            .map_err(|e| FrontierError::Backend(format!("stored url not canonical: {e}")))?,
        url_score,
        link_score_sum,
        priority,
        depth: depth as u32,
        status: UrlStatus::parse(&status)?,
        http_status: http_status.map(|s| s as u16),
    })
}

impl FrontierStore for SqliteStore {
    fn init_schema(&mut self) -> Result<()> {
        if let Some(found) = self.stored_version()? {
            if found > SCHEMA_VERSION {
                return Err(FrontierError::SchemaVersionMismatch {
                    found,
                    supported: SCHEMA_VERSION,
                });
            }
        }
        self.conn.execute_batch(SCHEMA_SQL).map_err(map_err)?;
        self.conn
            .execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('schema_version', ?1)",
                params![SCHEMA_VERSION.to_string()],
            )
            .map_err(map_err)?;
        Ok(())
    }

    fn install_strategy_functions(&mut self, _strategy: &KeywordStrategy) -> Result<bool> {
        // No procedural language; scoring stays client-side.
        Ok(false)
    }

    fn insert_seeds(
        &mut self,
        raw_urls: &[String],
        strategy: &KeywordStrategy,
    ) -> Result<SeedOutcome> {
        let (rows, rejected, in_call_duplicates) = prepare_seed_rows(raw_urls, strategy);
        let tx = self
            .conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_err)?;
        let mut inserted = 0u64;
        let mut skipped = in_call_duplicates;
        {
            let mut stmt = tx
                .prepare(
                    "INSERT INTO urls (url, domain, tld, url_score, link_score_sum, priority, depth, status)
                     VALUES (?1, ?2, ?3, ?4, 0, ?4, 0, 'pending')
                     ON CONFLICT (url) DO NOTHING",
                )
                .map_err(map_err)?;
            for row in &rows {
                let n = stmt
                    .execute(params![row.url, row.domain, row.tld, row.url_score])
                    .map_err(map_err)?;
                if n == 1 {
                    inserted += 1;
                } else {
                    skipped += 1;
                }
            }
        }
        tx.commit().map_err(map_err)?;
        Ok(SeedOutcome {
            inserted,
            skipped,
            rejected,
        })
    }

    fn claim_batch(
        &mut self,
        limit: usize,
        lease: Duration,
        instance_id: &str,
    ) -> Result<CrawlBatch> {
        let now = (self.now_fn)();
        let expiry = now.plus(lease);
        let token = ClaimToken::fresh();
        let tx = self
            .conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_err)?;
        let mut urls = Vec::new();
        {
            let mut stmt = tx
                .prepare(
                    "SELECT id, url, url_score, link_score_sum, priority, depth, status, http_status
                       FROM urls
                      WHERE status = 'pending'
                      ORDER BY priority DESC, id ASC
                      LIMIT ?1",
                )
                .map_err(map_err)?;
            let rows = stmt
                .query_map(params![limit as i64], row_to_record)
                .map_err(map_err)?;
            for row in rows {
                let mut record = build_record(row.map_err(map_err)?)?;
                record.status = UrlStatus::Claimed;
                urls.push(record);
            }
        }
        if urls.is_empty() {
            drop(tx);
            return Ok(CrawlBatch {
                token,
                lease_expiry: expiry,
                urls,
            });
        }
        {
            let mut stmt = tx
                .prepare(
                    "UPDATE urls SET status = 'claimed', claim_token = ?1, claim_expiry = ?2
                      WHERE id = ?3",
                )
                .map_err(map_err)?;
            for record in &urls {
                stmt.execute(params![token.0, expiry.0, record.id])
                    .map_err(map_err)?;
            }
        }
        tx.execute(
            "INSERT INTO claims (token, instance_id, issued_at, expiry, url_count) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![token.0, instance_id, now.0, expiry.0, urls.len() as i64],
        )
        .map_err(map_err)?;
        tx.commit().map_err(map_err)?;
        Ok(CrawlBatch {
            token,
            lease_expiry: expiry,
            urls,
        })
    }

    fn submit_discoveries(
        &mut self,
        token: &ClaimToken,
        results: &[SourceResult],
        strategy: &KeywordStrategy,
    ) -> Result<SubmitOutcome> {
        let now = (self.now_fn)();
        let tx = self
            .conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_err)?;

        let claim: Option<(String, i64, i64)> = tx
            .query_row(
                "SELECT instance_id, expiry, released FROM claims WHERE token = ?1",
                params![token.0],
                |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
            )
            .optional_err()?;
        let (instance_id, expiry, released) = match claim {
            None => return Err(FrontierError::UnknownToken(token.0.clone())),
            Some(c) => c,
        };
        if released != 0 || expiry < now.0 {
            // Return the leased rows immediately rather than waiting for the
            // next expiry sweep, then reject the stale work.
            tx.execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE claim_token = ?1 AND status = 'claimed'",
                params![token.0],
            )
            .map_err(map_err)?;
            tx.execute(
                "UPDATE claims SET released = 1 WHERE token = ?1",
                params![token.0],
            )
            .map_err(map_err)?;
            tx.commit().map_err(map_err)?;
            return Err(FrontierError::ExpiredClaim(token.0.clone()));
        }

        tx.execute(
            "UPDATE claims SET released = 1 WHERE token = ?1",
            params![token.0],
        )
        .map_err(map_err)?;
        let max_url_id: i64 = tx
            .query_row("SELECT COALESCE(MAX(id), 0) FROM urls", [], |r| r.get(0))
            .map_err(map_err)?;
        let max_link_seq: i64 = tx
            .query_row("SELECT COALESCE(MAX(seq), 0) FROM links", [], |r| r.get(0))
            .map_err(map_err)?;

        let mut outcome = SubmitOutcome::default();
        {
            let mut update_source = tx
                .prepare(
                    "UPDATE urls SET status = ?1, http_status = ?2, fetched_at = ?3, fetched_by = ?4,
                                     last_error = ?5, claim_token = NULL, claim_expiry = NULL
                      WHERE url = ?6 AND claim_token = ?7 AND status = 'claimed'",
                )
                .map_err(map_err)?;
            let mut insert_discovery = tx
                .prepare(
                    "INSERT INTO discoveries (source_url, target_url, target_domain, target_tld,
                                              target_url_score, context, context_score, target_depth)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                )
                .map_err(map_err)?;
            for result in results {
                let source_url = result.source.to_string();
                let n = update_source
                    .execute(params![
                        result.disposition.status_str(),
                        result.disposition.http_status().map(i64::from),
                        now.0,
                        instance_id,
                        result.disposition.error_text(),
                        source_url,
                        token.0,
                    ])
                    .map_err(map_err)?;
                if n != 1 {
                    return Err(FrontierError::SourceNotInClaim(source_url));
                }
                outcome.sources_updated += 1;
                let (rows, skipped) = prepare_discovery_rows(result, strategy);
                outcome.skipped_targets += skipped;
                for row in rows {
                    insert_discovery
                        .execute(params![
                            row.source_url,
                            row.target_url,
                            row.target_domain,
                            row.target_tld,
                            row.target_url_score,
                            row.context,
                            row.context_score,
                            row.target_depth,
                        ])
                        .map_err(map_err)?;
                }
            }
        }

        outcome.new_urls = tx
            .query_row(
                "SELECT COUNT(*) FROM urls WHERE id > ?1",
                params![max_url_id],
                |r| r.get::<_, i64>(0),
            )
            .map_err(map_err)? as u64;
        outcome.new_links = tx
            .query_row(
                "SELECT COUNT(*) FROM links WHERE seq > ?1",
                params![max_link_seq],
                |r| r.get::<_, i64>(0),
            )
            .map_err(map_err)? as u64;
        tx.commit().map_err(map_err)?;
        Ok(outcome)
    }

    fn release_claim(&mut self, token: &ClaimToken) -> Result<u64> {
        let tx = self
            .conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_err)?;
        let n = tx
            .execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE claim_token = ?1 AND status = 'claimed'",
                params![token.0],
            )
            .map_err(map_err)?;
        tx.execute(
            "UPDATE claims SET released = 1 WHERE token = ?1",
            params![token.0],
        )
        .map_err(map_err)?;
        tx.commit().map_err(map_err)?;
        Ok(n as u64)
    }

    fn expire_leases(&mut self, now: Timestamp) -> Result<u64> {
        let tx = self
            .conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(map_err)?;
        let n = tx
            .execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE status = 'claimed' AND claim_expiry < ?1",
                params![now.0],
            )
            .map_err(map_err)?;
        tx.execute(
            "UPDATE claims SET released = 1 WHERE released = 0 AND expiry < ?1",
            params![now.0],
        )
        .map_err(map_err)?;
        tx.commit().map_err(map_err)?;
        Ok(n as u64)
    }

    fn stats(&mut self) -> Result<FrontierStats> {
        let mut stats = FrontierStats::default();
        let mut stmt = self
            .conn
            .prepare("SELECT status, COUNT(*) FROM urls GROUP BY status")
            .map_err(map_err)?;
        let rows = stmt
            .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)))
            .map_err(map_err)?;
        for row in rows {
            let (status, count) = row.map_err(map_err)?;
            let count = count as u64;
            match UrlStatus::parse(&status)? {
                UrlStatus::Pending => stats.pending = count,
                UrlStatus::Claimed => stats.claimed = count,
                UrlStatus::Fetched => stats.fetched = count,
                UrlStatus::Failed => stats.failed = count,
            }
        }
        drop(stmt);
        stats.max_depth = self
            .conn
            .query_row("SELECT COALESCE(MAX(depth), 0) FROM urls", [], |r| {
                r.get::<_, i64>(0)
            })
            .map_err(map_err)? as u32;
        stats.links = self
            .conn
            .query_row("SELECT COUNT(*) FROM links", [], |r| r.get::<_, i64>(0))
            .map_err(map_err)? as u64;
        Ok(stats)
    }

    fn export_urls(&mut self) -> Result<Vec<ExportedUrl>> {
        let mut stmt = self
            .conn
            .prepare("SELECT url, depth, status, priority, last_error FROM urls ORDER BY id")
            .map_err(map_err)?;
        let rows = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, i64>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, i64>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })
            .map_err(map_err)?;
        let mut out = Vec::new();
        for row in rows {
            let (url, depth, status, priority, last_error) = row.map_err(map_err)?;
            out.push(ExportedUrl {
                url,
                depth: depth as u32,
                status: UrlStatus::parse(&status)?,
                priority,
                last_error,
            });
        }
        Ok(out)
    }

    fn export_edges(&mut self) -> Result<Vec<LinkExport>> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT s.url, t.url, l.asserted_depth
                   FROM links l JOIN urls s ON s.id = l.source_id JOIN urls t ON t.id = l.target_id
                  ORDER BY l.seq",
            )
            .map_err(map_err)?;
        let rows = stmt
            .query_map([], |r| {
                Ok(LinkExport {
                    source: r.get(0)?,
                    target: r.get(1)?,
                    asserted_depth: r.get::<_, i64>(2)? as u32,
                })
            })
            .map_err(map_err)?;
        rows.map(|r| r.map_err(map_err)).collect()
    }

    fn audit_priorities(&mut self) -> Result<PriorityAudit> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT u.url, u.url_score, u.link_score_sum, u.priority,
                        COALESCE((SELECT SUM(l.context_score) FROM links l WHERE l.target_id = u.id), 0)
                   FROM urls u",
            )
            .map_err(map_err)?;
        let rows = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, i64>(1)?,
                    r.get::<_, i64>(2)?,
                    r.get::<_, i64>(3)?,
                    r.get::<_, i64>(4)?,
                ))
            })
            .map_err(map_err)?;
        let mut audit = PriorityAudit::default();
        for row in rows {
            let (url, url_score, link_score_sum, priority, link_sum) = row.map_err(map_err)?;
            audit.checked += 1;
            if link_score_sum != link_sum || priority != url_score + link_sum {
                audit.violations.push(format!(
                    "{url}: priority={priority} url_score={url_score} link_score_sum={link_score_sum} actual_link_sum={link_sum}"
                ));
            }
        }
        Ok(audit)
    }
}
