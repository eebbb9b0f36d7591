//! In-process HTTP fetching with redirect handling, size/time limits and
//! per-domain politeness.
//!
//! [`Fetcher::fetch`] never returns an error: HTTP-level failures are
//! encoded in `http_status`, transport failures in `error`. Host resolution
//! can be overridden so a synthetic web served on one loopback port can
//! impersonate many domains.

pub mod politeness;
pub mod robots;

use std::collections::HashMap;
use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::dns::{Addrs, Name, Resolve, Resolving};

use crate::urlkit::{canonicalize, CanonicalUrl};

pub const DEFAULT_USER_AGENT: &str = "crawlq/0.1 (+https://example.invalid/crawlq)";

#[derive(Debug, Clone)]
pub struct FetchLimits {
    pub timeout: Duration,
    pub connect_timeout: Duration,
    pub max_redirects: usize,
    pub max_body_bytes: usize,
}

impl Default for FetchLimits {
    fn default() -> Self {
        FetchLimits {
            timeout: Duration::from_secs(30),
            connect_timeout: Duration::from_secs(10),
            max_redirects: 5,
            max_body_bytes: 4 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchErrorKind {
    Dns,
    ConnectTimeout,
    ReadTimeout,
    ConnectFailed,
    TooManyRedirects,
    Tls,
    RobotsDenied,
    Other(String),
}

impl fmt::Display for FetchErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchErrorKind::Dns => f.write_str("dns_failure"),
            FetchErrorKind::ConnectTimeout => f.write_str("connect_timeout"),
            FetchErrorKind::ReadTimeout => f.write_str("read_timeout"),
            FetchErrorKind::ConnectFailed => f.write_str("connect_failed"),
            FetchErrorKind::TooManyRedirects => f.write_str("too_many_redirects"),
            FetchErrorKind::Tls => f.write_str("tls_failure"),
            FetchErrorKind::RobotsDenied => f.write_str("robots_denied"),
            FetchErrorKind::Other(msg) => write!(f, "other: {msg}"),
        }
    }
}

/// The complete observable result of one fetch. `body` is empty whenever
/// `error` is present; `final_url` equals `requested` when no redirect
/// occurred.
#[derive(Debug, Clone)]
pub struct FetchOutcome {
    pub requested: CanonicalUrl,
    pub final_url: CanonicalUrl,
    pub http_status: Option<u16>,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
    pub truncated: bool,
    pub elapsed: Duration,
    pub error: Option<FetchErrorKind>,
}

impl FetchOutcome {
    pub fn is_success(&self) -> bool {
        self.error.is_none() && self.http_status.map_or(false, |s| (200..300).contains(&s))
    }

    pub(crate) fn failure(
        requested: &CanonicalUrl,
        kind: FetchErrorKind,
        elapsed: Duration,
    ) -> Self {
        FetchOutcome {
            requested: requested.clone(),
            final_url: requested.clone(),
            http_status: None,
            content_type: None,
            body: Vec::new(),
            truncated: false,
            elapsed,
            error: Some(kind),
        }
    }
}

/// How host names map to addresses. `Override` sends every host to one IP
/// (the synthetic-web case: URL ports are preserved); `Static` resolves only
/// the listed hosts and fails the rest.
#[derive(Debug, Clone)]
pub enum HostResolution {
    System,
    Override(IpAddr),
    Static(HashMap<String, IpAddr>),
}

const STATIC_RESOLVER_MISS: &str = "host not present in static resolver table";

struct TableResolver {
    all: Option<IpAddr>,
    table: HashMap<String, IpAddr>,
}

impl Resolve for TableResolver {
    fn resolve(&self, name: Name) -> Resolving {
        let ip = self
            .all
            .or_else(|| self.table.get(name.as_str()).copied());
        let result: Result<Addrs, _> = match ip {
            // reqwest substitutes the URL port for the resolved port.
            Some(ip) => Ok(Box::new(std::iter::once(SocketAddr::new(ip, 0)))
                as Box<dyn Iterator<Item = SocketAddr> + Send>),
            None => Err(format!("{STATIC_RESOLVER_MISS}: {}", name.as_str()).into()),
        };
        Box::pin(std::future::ready(result))
    }
}

#[derive(Debug)]
pub struct FetcherBuildError(pub String);

impl fmt::Display for FetcherBuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot build http client: {}", self.0)
    }
}

impl std::error::Error for FetcherBuildError {}

/// Shared, cheaply clonable HTTP client wrapper enforcing the configured
/// limits. Safe to call from any number of workers.
#[derive(Clone)]
pub struct Fetcher {
    client: reqwest::Client,
    limits: FetchLimits,
}

impl Fetcher {
    pub fn new(
        user_agent: &str,
        limits: FetchLimits,
        resolution: HostResolution,
    ) -> Result<Self, FetcherBuildError> {
        let mut builder = reqwest::Client::builder()
            .user_agent(user_agent)
            .redirect(reqwest::redirect::Policy::limited(limits.max_redirects))
            .timeout(limits.timeout)
            .connect_timeout(limits.connect_timeout);
        match resolution {
            HostResolution::System => {}
            HostResolution::Override(ip) => {
                builder = builder.dns_resolver(Arc::new(TableResolver {
                    all: Some(ip),
                    table: HashMap::new(),
                }));
            }
            HostResolution::Static(table) => {
                builder = builder.dns_resolver(Arc::new(TableResolver { all: None, table }));
            }
        }
        let client = builder
            .build()
            .map_err(|e| FetcherBuildError(e.to_string()))?;
        Ok(Fetcher { client, limits })
    }

    pub fn limits(&self) -> &FetchLimits {
        &self.limits
    }

    /// Follows up to the configured number of redirects, reads at most
    /// `max_body_bytes`, and reports every failure inside the outcome.
    pub async fn fetch(&self, url: &CanonicalUrl) -> FetchOutcome {
        let started = Instant::now();
        let response = match self.client.get(url.to_string()).send().await {
            Ok(r) => r,
            Err(e) => {
                return FetchOutcome::failure(url, classify(&e, false), started.elapsed());
            }
        };
        let final_url =
            canonicalize(response.url().as_str(), None).unwrap_or_else(|_| url.clone());
        let http_status = Some(response.status().as_u16());
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(|v| v.to_string());

        let mut body = Vec::new();
        let mut truncated = false;
        let mut response = response;
        loop {
            match response.chunk().await {
                Ok(Some(chunk)) => {
                    let remaining = self.limits.max_body_bytes - body.len();
                    if chunk.len() >= remaining {
                        body.extend_from_slice(&chunk[..remaining]);
                        truncated = chunk.len() > remaining
                            || response.chunk().await.ok().flatten().is_some();
                        break;
                    }
                    body.extend_from_slice(&chunk);
                }
                Ok(None) => break,
                Err(e) => {
                    return FetchOutcome::failure(url, classify(&e, true), started.elapsed());
                }
            }
        }

        FetchOutcome {
            requested: url.clone(),
            final_url,
            http_status,
            content_type,
            body,
            truncated,
            elapsed: started.elapsed(),
            error: None,
        }
    }
}

fn source_chain_text(e: &reqwest::Error) -> String {
    let mut text = e.to_string().to_ascii_lowercase();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        text.push_str(" | ");
        text.push_str(&s.to_string().to_ascii_lowercase());
        source = s.source();
    }
    text
}

fn classify(e: &reqwest::Error, body_phase: bool) -> FetchErrorKind {
    if e.is_redirect() {
        return FetchErrorKind::TooManyRedirects;
    }
    let chain = source_chain_text(e);
    if e.is_timeout() {
        if body_phase || !e.is_connect() {
            return FetchErrorKind::ReadTimeout;
        }
        return FetchErrorKind::ConnectTimeout;
    }
    if chain.contains("dns error")
        || chain.contains("failed to lookup address")
        || chain.contains(STATIC_RESOLVER_MISS)
    {
        return FetchErrorKind::Dns;
    }
    if chain.contains("certificate") || chain.contains(" tls") || chain.contains("ssl") {
        return FetchErrorKind::Tls;
    }
    if e.is_connect() {
        return FetchErrorKind::ConnectFailed;
    }
    FetchErrorKind::Other(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::io::AsyncWriteExt;
    use tokio::net::TcpListener;

    fn canon(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    fn quick_limits() -> FetchLimits {
        FetchLimits {
            timeout: Duration::from_millis(600),
            connect_timeout: Duration::from_millis(400),
            max_redirects: 3,
            max_body_bytes: 64,
        }
    }

    #[tokio::test]
    async fn unknown_host_in_static_table_is_a_dns_failure() {
        let fetcher =
            Fetcher::new("t/1", quick_limits(), HostResolution::Static(HashMap::new())).unwrap();
        let outcome = fetcher.fetch(&canon("http://nowhere.fr:9/")).await;
        assert_eq!(outcome.error, Some(FetchErrorKind::Dns));
        assert!(outcome.body.is_empty());
        assert_eq!(outcome.final_url, outcome.requested);
    }

    #[tokio::test]
    async fn stalled_server_times_out_as_read_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            // accept and say nothing
            let (mut sock, _) = listener.accept().await.unwrap();
            tokio::time::sleep(Duration::from_secs(5)).await;
            let _ = sock.shutdown().await;
        });
        let fetcher = Fetcher::new("t/1", quick_limits(), HostResolution::System).unwrap();
        let outcome = fetcher
            .fetch(&canon(&format!("http://127.0.0.1:{}/", addr.port())))
            .await;
        assert_eq!(outcome.error, Some(FetchErrorKind::ReadTimeout));
    }

    #[tokio::test]
    async fn refused_connection_is_connect_failed() {
        // bind then drop to find a port that refuses
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let fetcher = Fetcher::new("t/1", quick_limits(), HostResolution::System).unwrap();
        let outcome = fetcher
            .fetch(&canon(&format!("http://127.0.0.1:{port}/")))
            .await;
        assert!(
            matches!(
                outcome.error,
                Some(FetchErrorKind::ConnectFailed) | Some(FetchErrorKind::ConnectTimeout)
            ),
            "got {:?}",
            outcome.error
        );
    }
}
