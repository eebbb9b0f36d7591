//! PostgreSQL backend, speaking the wire protocol to a shared server.
//!
//! This is the deployment backend for multi-machine crawls. The schema and
//! the insertion-view trigger mirror the SQLite backend; claims additionally
//! use `FOR UPDATE SKIP LOCKED` so concurrent claimers neither block on nor
//! receive each other's rows.

use std::time::Duration;

use ::postgres::error::SqlState;
use ::postgres::{Client, NoTls};

use super::*;

const SCHEMA_SQL: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
  key   TEXT PRIMARY KEY,
  value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS urls (
  id             BIGSERIAL PRIMARY KEY,
  url            TEXT NOT NULL UNIQUE,
  domain         TEXT NOT NULL,
  tld            TEXT NOT NULL,
  url_score      BIGINT NOT NULL,
  link_score_sum BIGINT NOT NULL DEFAULT 0,
  priority       BIGINT NOT NULL,
  depth          BIGINT NOT NULL,
  status         TEXT NOT NULL DEFAULT 'pending'
                 CHECK (status IN ('pending','claimed','fetched','failed')),
  claim_token    TEXT,
  claim_expiry   BIGINT,
  http_status    INTEGER,
  fetched_at     BIGINT,
  fetched_by     TEXT,
  last_error     TEXT
);
CREATE INDEX IF NOT EXISTS urls_claim_order ON urls (status, priority DESC, id);
CREATE INDEX IF NOT EXISTS urls_claim_token ON urls (claim_token) WHERE claim_token IS NOT NULL;
CREATE TABLE IF NOT EXISTS links (
  seq            BIGSERIAL PRIMARY KEY,
  source_id      BIGINT NOT NULL REFERENCES urls(id),
  target_id      BIGINT NOT NULL REFERENCES urls(id),
  context        TEXT NOT NULL,
  context_score  BIGINT NOT NULL,
  asserted_depth BIGINT NOT NULL,
  UNIQUE (source_id, target_id)
);
CREATE INDEX IF NOT EXISTS links_target ON links (target_id);
CREATE TABLE IF NOT EXISTS claims (
  token       TEXT PRIMARY KEY,
  instance_id TEXT NOT NULL,
  issued_at   BIGINT NOT NULL,
  expiry      BIGINT NOT NULL,
  url_count   BIGINT NOT NULL,
  released    BIGINT NOT NULL DEFAULT 0
);
CREATE OR REPLACE VIEW discoveries AS
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
CREATE OR REPLACE FUNCTION discoveries_insert_fn() RETURNS trigger AS $$
BEGIN
  INSERT INTO urls (url, domain, tld, url_score, link_score_sum, priority, depth, status)
  VALUES (NEW.target_url, NEW.target_domain, NEW.target_tld, NEW.target_url_score, 0,
          NEW.target_url_score, NEW.target_depth, 'pending')
  ON CONFLICT (url) DO UPDATE SET depth = LEAST(urls.depth, EXCLUDED.depth);
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
  DO UPDATE SET asserted_depth = LEAST(links.asserted_depth, EXCLUDED.asserted_depth);
  RETURN NEW;
END $$ LANGUAGE plpgsql;
DROP TRIGGER IF EXISTS discoveries_insert ON discoveries;
CREATE TRIGGER discoveries_insert INSTEAD OF INSERT ON discoveries
FOR EACH ROW EXECUTE FUNCTION discoveries_insert_fn();
"#;

pub struct PgStore {
    client: Client,
    now_fn: Box<dyn Fn() -> Timestamp + Send>,
}

impl PgStore {
    pub fn connect(url: &str) -> Result<Self> {
        let client = Client::connect(url, NoTls).map_err(map_err)?;
        Ok(PgStore {
            client,
            now_fn: Box::new(Timestamp::now),
        })
    }

    pub fn set_clock(&mut self, f: impl Fn() -> Timestamp + Send + 'static) {
        self.now_fn = Box::new(f);
    }

    fn stored_version(&mut self) -> Result<Option<i64>> {
        let exists: Option<String> = self
            .client
            .query_one("SELECT to_regclass('public.meta')::text", &[])
            .map_err(map_err)?
            .get(0);
        if exists.is_none() {
            return Ok(None);
        }
        let rows = self
            .client
            .query("SELECT value FROM meta WHERE key = 'schema_version'", &[])
            .map_err(map_err)?;
        Ok(rows
            .first()
            .and_then(|r| r.get::<_, String>(0).parse().ok()))
    }
}

fn map_err(e: ::postgres::Error) -> FrontierError {
    if let Some(code) = e.code() {
        match *code {
            SqlState::INSUFFICIENT_PRIVILEGE => {
                return FrontierError::InsufficientPrivilege(e.to_string())
            }
            SqlState::INVALID_PASSWORD | SqlState::INVALID_AUTHORIZATION_SPECIFICATION => {
                return FrontierError::InsufficientPrivilege(e.to_string())
            }
            SqlState::CONNECTION_EXCEPTION
            | SqlState::CONNECTION_FAILURE
            | SqlState::CONNECTION_DOES_NOT_EXIST
            | SqlState::SQLCLIENT_UNABLE_TO_ESTABLISH_SQLCONNECTION
            | SqlState::TOO_MANY_CONNECTIONS
            | SqlState::ADMIN_SHUTDOWN
            | SqlState::CRASH_SHUTDOWN
            | SqlState::CANNOT_CONNECT_NOW => {
                return FrontierError::StoreUnavailable(e.to_string())
            }
            _ => return FrontierError::Backend(e.to_string()),
        }
    }
    // No SQLSTATE: connect/io level failure.
    FrontierError::StoreUnavailable(e.to_string())
}

fn row_to_record(row: &::postgres::Row) -> Result<UrlRecord> {
    let url: String = row.get(1);
    let status: String = row.get(6);
    let http_status: Option<i32> = row.get(7);
    Ok(UrlRecord {
        id: row.get(0),
        url: CanonicalUrl::parse(&url)
            .map_err(|e| FrontierError::Backend(format!("stored url not canonical: {e}")))?,
        url_score: row.get(2),
        link_score_sum: row.get(3),
        priority: row.get(4),
        depth: row.get::<_, i64>(5) as u32,
        status: UrlStatus::parse(&status)?,
        http_status: http_status.map(|s| s as u16),
    })
}

impl FrontierStore for PgStore {
    fn init_schema(&mut self) -> Result<()> {
        if let Some(found) = self.stored_version()? {
            if found > SCHEMA_VERSION {
                return Err(FrontierError::SchemaVersionMismatch {
                    found,
                    supported: SCHEMA_VERSION,
                });
            }
        }
        self.client.batch_execute(SCHEMA_SQL).map_err(map_err)?;
        self.client
            .execute(
                "INSERT INTO meta (key, value) VALUES ('schema_version', $1) ON CONFLICT (key) DO NOTHING",
                &[&SCHEMA_VERSION.to_string()],
            )
            .map_err(map_err)?;
        Ok(())
    }

    fn install_strategy_functions(&mut self, strategy: &KeywordStrategy) -> Result<bool> {
        self.client
            .batch_execute(&strategy.to_sql_functions())
            .map_err(map_err)?;
        Ok(true)
    }

    fn insert_seeds(
        &mut self,
        raw_urls: &[String],
        strategy: &KeywordStrategy,
    ) -> Result<SeedOutcome> {
        let (rows, rejected, in_call_duplicates) = prepare_seed_rows(raw_urls, strategy);
        let mut tx = self.client.transaction().map_err(map_err)?;
        let mut inserted = 0u64;
        let mut skipped = in_call_duplicates;
        for row in &rows {
            let n = tx
                .execute(
                    "INSERT INTO urls (url, domain, tld, url_score, link_score_sum, priority, depth, status)
                     VALUES ($1, $2, $3, $4, 0, $4, 0, 'pending')
                     ON CONFLICT (url) DO NOTHING",
                    &[&row.url, &row.domain, &row.tld, &row.url_score],
                )
                .map_err(map_err)?;
            if n == 1 {
                inserted += 1;
            } else {
                skipped += 1;
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
        let mut tx = self.client.transaction().map_err(map_err)?;
        let rows = tx
            .query(
                "UPDATE urls SET status = 'claimed', claim_token = $1, claim_expiry = $2
                  WHERE id IN (SELECT id FROM urls
                                WHERE status = 'pending'
                                ORDER BY priority DESC, id ASC
                                LIMIT $3
                                FOR UPDATE SKIP LOCKED)
                 RETURNING id, url, url_score, link_score_sum, priority, depth, status, http_status",
                &[&token.0, &expiry.0, &(limit as i64)],
            )
            .map_err(map_err)?;
        let mut urls = Vec::with_capacity(rows.len());
        for row in &rows {
            urls.push(row_to_record(row)?);
        }
        // RETURNING order is not defined; restore claim order.
        urls.sort_by(|a, b| b.priority.cmp(&a.priority).then(a.id.cmp(&b.id)));
        if !urls.is_empty() {
            tx.execute(
                "INSERT INTO claims (token, instance_id, issued_at, expiry, url_count) VALUES ($1, $2, $3, $4, $5)",
                &[&token.0, &instance_id, &now.0, &expiry.0, &(urls.len() as i64)],
            )
            .map_err(map_err)?;
        }
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
        let mut tx = self.client.transaction().map_err(map_err)?;
        let claim_rows = tx
            .query(
                "SELECT instance_id, expiry, released FROM claims WHERE token = $1 FOR UPDATE",
                &[&token.0],
            )
            .map_err(map_err)?;
        let claim = match claim_rows.first() {
            None => return Err(FrontierError::UnknownToken(token.0.clone())),
            Some(row) => (
                row.get::<_, String>(0),
                row.get::<_, i64>(1),
                row.get::<_, i64>(2),
            ),
        };
        let (instance_id, expiry, released) = claim;
        if released != 0 || expiry < now.0 {
            tx.execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE claim_token = $1 AND status = 'claimed'",
                &[&token.0],
            )
            .map_err(map_err)?;
            tx.execute("UPDATE claims SET released = 1 WHERE token = $1", &[&token.0])
                .map_err(map_err)?;
            tx.commit().map_err(map_err)?;
            return Err(FrontierError::ExpiredClaim(token.0.clone()));
        }

        tx.execute("UPDATE claims SET released = 1 WHERE token = $1", &[&token.0])
            .map_err(map_err)?;
        let max_url_id: i64 = tx
            .query_one("SELECT COALESCE(MAX(id), 0) FROM urls", &[])
            .map_err(map_err)?
            .get(0);
        let max_link_seq: i64 = tx
            .query_one("SELECT COALESCE(MAX(seq), 0) FROM links", &[])
            .map_err(map_err)?
            .get(0);

        let mut outcome = SubmitOutcome::default();
        for result in results {
            let source_url = result.source.to_string();
            let n = tx
                .execute(
                    "UPDATE urls SET status = $1, http_status = $2, fetched_at = $3, fetched_by = $4,
                                     last_error = $5, claim_token = NULL, claim_expiry = NULL
                      WHERE url = $6 AND claim_token = $7 AND status = 'claimed'",
                    &[
                        &result.disposition.status_str(),
                        &result.disposition.http_status().map(i32::from),
                        &now.0,
                        &instance_id,
                        &result.disposition.error_text(),
                        &source_url,
                        &token.0,
                    ],
                )
                .map_err(map_err)?;
            if n != 1 {
                return Err(FrontierError::SourceNotInClaim(source_url));
            }
            outcome.sources_updated += 1;
            let (rows, skipped) = prepare_discovery_rows(result, strategy);
            outcome.skipped_targets += skipped;
            for row in rows {
                tx.execute(
                    "INSERT INTO discoveries (source_url, target_url, target_domain, target_tld,
                                              target_url_score, context, context_score, target_depth)
                     VALUES ($1, $2, $3, $4, $5, $6, $7, $8)",
                    &[
                        &row.source_url,
                        &row.target_url,
                        &row.target_domain,
                        &row.target_tld,
                        &row.target_url_score,
                        &row.context,
                        &row.context_score,
                        &row.target_depth,
                    ],
                )
                .map_err(map_err)?;
            }
        }

        outcome.new_urls = tx
            .query_one("SELECT COUNT(*) FROM urls WHERE id > $1", &[&max_url_id])
            .map_err(map_err)?
            .get::<_, i64>(0) as u64;
        outcome.new_links = tx
            .query_one("SELECT COUNT(*) FROM links WHERE seq > $1", &[&max_link_seq])
            .map_err(map_err)?
            .get::<_, i64>(0) as u64;
        tx.commit().map_err(map_err)?;
        Ok(outcome)
    }

    fn release_claim(&mut self, token: &ClaimToken) -> Result<u64> {
        let mut tx = self.client.transaction().map_err(map_err)?;
        let n = tx
            .execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE claim_token = $1 AND status = 'claimed'",
                &[&token.0],
            )
            .map_err(map_err)?;
        tx.execute("UPDATE claims SET released = 1 WHERE token = $1", &[&token.0])
            .map_err(map_err)?;
        tx.commit().map_err(map_err)?;
        Ok(n)
    }

    fn expire_leases(&mut self, now: Timestamp) -> Result<u64> {
        let mut tx = self.client.transaction().map_err(map_err)?;
        let n = tx
            .execute(
                "UPDATE urls SET status = 'pending', claim_token = NULL, claim_expiry = NULL
                  WHERE status = 'claimed' AND claim_expiry < $1",
                &[&now.0],
            )
            .map_err(map_err)?;
        tx.execute(
            "UPDATE claims SET released = 1 WHERE released = 0 AND expiry < $1",
            &[&now.0],
        )
        .map_err(map_err)?;
        tx.commit().map_err(map_err)?;
        Ok(n)
    }

    fn stats(&mut self) -> Result<FrontierStats> {
        let mut stats = FrontierStats::default();
        for row in self
            .client
            .query("SELECT status, COUNT(*) FROM urls GROUP BY status", &[])
            .map_err(map_err)?
        {
            let status: String = row.get(0);
            let count = row.get::<_, i64>(1) as u64;
            match UrlStatus::parse(&status)? {
                UrlStatus::Pending => stats.pending = count,
                UrlStatus::Claimed => stats.claimed = count,
                UrlStatus::Fetched => stats.fetched = count,
                UrlStatus::Failed => stats.failed = count,
            }
        }
        stats.max_depth = self
            .client
            .query_one("SELECT COALESCE(MAX(depth), 0) FROM urls", &[])
            .map_err(map_err)?
            .get::<_, i64>(0) as u32;
        stats.links = self
            .client
            .query_one("SELECT COUNT(*) FROM links", &[])
            .map_err(map_err)?
            .get::<_, i64>(0) as u64;
        Ok(stats)
    }

    fn export_urls(&mut self) -> Result<Vec<ExportedUrl>> {
        let rows = self
            .client
            .query(
                "SELECT url, depth, status, priority, last_error FROM urls ORDER BY id",
                &[],
            )
            .map_err(map_err)?;
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let status: String = row.get(2);
            out.push(ExportedUrl {
                url: row.get(0),
                depth: row.get::<_, i64>(1) as u32,
                status: UrlStatus::parse(&status)?,
                priority: row.get(3),
                last_error: row.get(4),
            });
        }
        Ok(out)
    }

    fn export_edges(&mut self) -> Result<Vec<LinkExport>> {
        let rows = self
            .client
            .query(
                "SELECT s.url, t.url, l.asserted_depth
                   FROM links l JOIN urls s ON s.id = l.source_id JOIN urls t ON t.id = l.target_id
                  ORDER BY l.seq",
                &[],
            )
            .map_err(map_err)?;
        Ok(rows
            .into_iter()
            .map(|r| LinkExport {
                source: r.get(0),
                target: r.get(1),
                asserted_depth: r.get::<_, i64>(2) as u32,
            })
            .collect())
    }

    fn audit_priorities(&mut self) -> Result<PriorityAudit> {
        let rows = self
            .client
            .query(
                "SELECT u.url, u.url_score, u.link_score_sum, u.priority,
                        COALESCE((SELECT SUM(l.context_score) FROM links l WHERE l.target_id = u.id), 0)
                   FROM urls u",
                &[],
            )
            .map_err(map_err)?;
        let mut audit = PriorityAudit::default();
        for row in rows {
            audit.checked += 1;
            let url: String = row.get(0);
            let url_score: i64 = row.get(1);
            let link_score_sum: i64 = row.get(2);
            let priority: i64 = row.get(3);
            let link_sum: i64 = row.get(4);
            if link_score_sum != link_sum || priority != url_score + link_sum {
                audit.violations.push(format!(
                    "{url}: priority={priority} url_score={url_score} link_score_sum={link_score_sum} actual_link_sum={link_sum}"
                ));
            }
        }
        Ok(audit)
    }
}
