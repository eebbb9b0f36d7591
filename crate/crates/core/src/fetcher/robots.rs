//! robots.txt fetching, caching and prefix matching.
//!
//! Rules are cached in memory per host for a fixed TTL. Missing or
//! unreadable robots files allow everything. Matching is plain prefix
//! matching over Allow/Disallow lines of the most specific user-agent group;
//! the longest matching rule wins and allows win ties.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::Mutex;

use super::Fetcher;
use crate::urlkit::CanonicalUrl;

#[derive(Debug, Default)]
pub struct RobotsRules {
    /// (allow, path prefix), from the group that best matched our agent.
    rules: Vec<(bool, String)>,
}

impl RobotsRules {
    pub fn allow_all() -> Self {
        RobotsRules::default()
    }

    /// Parses the classic format. Groups are selected by user-agent token:
    /// an exact-ish (substring) match beats `*`, later groups of the same
    /// specificity accumulate.
    pub fn parse(text: &str, agent_token: &str) -> Self {
        let agent_token = agent_token.to_ascii_lowercase();
        let mut matched: Vec<(bool, String)> = Vec::new(); // specific group
        let mut wildcard: Vec<(bool, String)> = Vec::new();
        let mut current_agents: Vec<String> = Vec::new();
        let mut saw_rule_in_group = false;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((field, value)) = line.split_once(':') else {
                continue;
            };
            let field = field.trim().to_ascii_lowercase();
            let value = value.trim();
            match field.as_str() {
                "user-agent" => {
                    if saw_rule_in_group {
                        current_agents.clear();
                        saw_rule_in_group = false;
                    }
                    current_agents.push(value.to_ascii_lowercase());
                }
                "disallow" | "allow" => {
                    saw_rule_in_group = true;
                    if value.is_empty() {
                        continue; // empty Disallow means allow all
                    }
                    let allow = field == "allow";
                    for agent in &current_agents {
                        if agent == "*" {
                            wildcard.push((allow, value.to_string()));
                        } else if agent_token.contains(agent.as_str())
                            || agent.contains(&agent_token)
                        {
                            matched.push((allow, value.to_string()));
                        }
                    }
                }
                _ => {}
            }
        }
        let rules = if matched.is_empty() { wildcard } else { matched };
        RobotsRules { rules }
    }

    pub fn allows(&self, path: &str) -> bool {
        let mut best: Option<(usize, bool)> = None;
        for (allow, prefix) in &self.rules {
            if path.starts_with(prefix.as_str()) {
                let len = prefix.len();
                best = match best {
                    Some((blen, ballow)) if blen > len => Some((blen, ballow)),
                    Some((blen, ballow)) if blen == len => Some((blen, ballow || *allow)),
                    _ => Some((len, *allow)),
                };
            }
        }
        best.map_or(true, |(_, allow)| allow)
    }
}

struct CacheEntry {
    fetched_at: Instant,
    rules: Arc<RobotsRules>,
}

/// Per-host robots cache shared by all workers of one instance.
pub struct RobotsCache {
    entries: Mutex<HashMap<String, CacheEntry>>,
    ttl: Duration,
    agent_token: String,
}

impl RobotsCache {
    pub fn new(user_agent: &str, ttl: Duration) -> Arc<Self> {
        // first product token, e.g. "crawlq" from "crawlq/0.1 (+url)"
        let agent_token = user_agent
            .split(['/', ' '])
            .next()
            .unwrap_or(user_agent)
            .to_string();
        Arc::new(RobotsCache {
            entries: Mutex::new(HashMap::new()),
            ttl,
            agent_token,
        })
    }

    /// True when the URL may be fetched. The robots fetch itself goes
    /// through the normal fetcher (and so is counted by its limits).
    pub async fn allows(&self, fetcher: &Fetcher, url: &CanonicalUrl) -> bool {
        let key = format!("{}://{}", url.scheme().as_str(), url.authority());
        {
            let entries = self.entries.lock().await;
            if let Some(entry) = entries.get(&key) {
                if entry.fetched_at.elapsed() < self.ttl {
                    return entry.rules.allows(url.path());
                }
            }
        }
        // Fetch outside the lock; a racing duplicate fetch is harmless.
        let robots_url = CanonicalUrl::parse(&format!("{key}/robots.txt"))
            .expect("robots url from canonical parts");
        let outcome = fetcher.fetch(&robots_url).await;
        let rules = if outcome.is_success() {
            let text = String::from_utf8_lossy(&outcome.body);
            Arc::new(RobotsRules::parse(&text, &self.agent_token))
        } else {
            Arc::new(RobotsRules::allow_all())
        };
        let mut entries = self.entries.lock().await;
        entries.insert(
            key,
            CacheEntry {
                fetched_at: Instant::now(),
                rules: Arc::clone(&rules),
            },
        );
        rules.allows(url.path())
    }
}
