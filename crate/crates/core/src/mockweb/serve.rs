//! Serves a generated bundle over HTTP/1.1 on a loopback port.
//!
//! All domains of the bundle are virtual hosts behind one listener,
//! dispatched on the Host header. The server is read-only and stateless
//! across requests except for the access log and the concurrent-request
//! gauge the tests assert against.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, Method, StatusCode};
use axum::response::Response;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{MockWebBundle, MockWebError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEntry {
    pub seq: u64,
    /// Time since the server started.
    pub offset: Duration,
    pub host: String,
    pub path: String,
    pub status: u16,
}

struct Served {
    status: u16,
    content_type: &'static str,
    body: Arc<str>,
}

struct ServerState {
    pages: HashMap<(String, String), Served>,
    redirects: HashMap<(String, String), String>,
    robots: HashMap<String, String>,
    log: Mutex<Vec<AccessEntry>>,
    seq: AtomicU64,
    gauge: AtomicUsize,
    gauge_max: AtomicUsize,
    started: Instant,
}

struct GaugeGuard(Arc<ServerState>);

impl GaugeGuard {
    fn new(state: &Arc<ServerState>) -> Self {
        let current = state.gauge.fetch_add(1, Ordering::SeqCst) + 1;
        state.gauge_max.fetch_max(current, Ordering::SeqCst);
        GaugeGuard(Arc::clone(state))
    }
}

impl Drop for GaugeGuard {
    fn drop(&mut self) {
        self.0.gauge.fetch_sub(1, Ordering::SeqCst);
    }
}

fn build_state(bundle: &MockWebBundle) -> ServerState {
    let mut pages = HashMap::new();
    for page in &bundle.pages {
        pages.insert(
            (page.host.clone(), page.path.clone()),
            Served {
                status: page.status,
                content_type: "text/html; charset=utf-8",
                body: Arc::from(page.body.as_str()),
            },
        );
    }
    let mut redirects = HashMap::new();
    for chain in &bundle.redirects {
        for (i, (host, path)) in chain.hops.iter().enumerate() {
            let location = if i + 1 < chain.hops.len() {
                // relative hop on the same host
                chain.hops[i + 1].1.clone()
            } else {
                bundle.page_urls[chain.target].clone()
            };
            redirects.insert((host.clone(), path.clone()), location);
        }
    }
    ServerState {
        pages,
        redirects,
        robots: bundle.robots.clone(),
        log: Mutex::new(Vec::new()),
        seq: AtomicU64::new(0),
        gauge: AtomicUsize::new(0),
        gauge_max: AtomicUsize::new(0),
        started: Instant::now(),
    }
}

fn respond(status: StatusCode, content_type: &str, body: String) -> Response {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, content_type)
        .body(Body::from(body))
        .expect("static response")
}

async fn handle(State(state): State<Arc<ServerState>>, req: Request) -> Response {
    let _gauge = GaugeGuard::new(&state);
    let host = req
        .headers()
        .get(header::HOST)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .split(':')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    let path = req.uri().path().to_string();

    let response = if req.method() != Method::GET && req.method() != Method::HEAD {
        respond(
            StatusCode::METHOD_NOT_ALLOWED,
            "text/plain",
            "method not allowed\n".into(),
        )
    } else if path == "/robots.txt" {
        match state.robots.get(&host) {
            Some(body) => respond(StatusCode::OK, "text/plain", body.clone()),
            None => respond(StatusCode::NOT_FOUND, "text/plain", "no such host\n".into()),
        }
    } else if let Some(location) = state.redirects.get(&(host.clone(), path.clone())) {
        Response::builder()
            .status(StatusCode::MOVED_PERMANENTLY)
            .header(header::LOCATION, location)
            .header(header::CONTENT_TYPE, "text/html; charset=utf-8")
            .body(Body::from("<html><body>moved</body></html>"))
            .expect("redirect response")
    } else if let Some(page) = state.pages.get(&(host.clone(), path.clone())) {
        respond(
            StatusCode::from_u16(page.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            page.content_type,
            page.body.to_string(),
        )
    } else {
        respond(StatusCode::NOT_FOUND, "text/plain", "not found\n".into())
    };

    let entry = AccessEntry {
        seq: state.seq.fetch_add(1, Ordering::SeqCst),
        offset: state.started.elapsed(),
        host,
        path,
        status: response.status().as_u16(),
    };
    state.log.lock().expect("access log lock").push(entry);
    response
}

/// A running mock web; dropping it aborts the server, [`MockWebServer::shutdown`]
/// stops it gracefully.
pub struct MockWebServer {
    pub addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown_tx: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockWebServer {
    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn access_log(&self) -> Vec<AccessEntry> {
        self.state.log.lock().expect("access log lock").clone()
    }

    pub fn request_count(&self) -> u64 {
        self.state.seq.load(Ordering::SeqCst)
    }

    /// High-water mark of simultaneously in-flight requests.
    pub fn gauge_max(&self) -> usize {
        self.state.gauge_max.load(Ordering::SeqCst)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown_tx.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for MockWebServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Binds an ephemeral loopback port. Generate the bundle with the returned
/// port, then pass the listener to [`serve`].
pub async fn reserve_listener() -> (TcpListener, u16) {
    let listener = TcpListener::bind("127.0.0.1:0")
        .await
        .expect("bind loopback");
    let port = listener.local_addr().expect("local addr").port();
    (listener, port)
}

pub async fn serve(bundle: &MockWebBundle, listener: TcpListener) -> MockWebServer {
    let state = Arc::new(build_state(bundle));
    let addr = listener.local_addr().expect("local addr");
    let app = Router::new()
        .fallback(handle)
        .with_state(Arc::clone(&state));
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await;
    });
    MockWebServer {
        addr,
        state,
        shutdown_tx: Some(shutdown_tx),
        task,
    }
}

/// Binds the given address (the spec's port) and serves.
pub async fn bind_and_serve(
    bundle: &MockWebBundle,
    bind: &str,
) -> Result<MockWebServer, MockWebError> {
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|e| MockWebError::AddressInUse(format!("{bind}: {e}")))?;
    Ok(serve(bundle, listener).await)
}
