//! Offline crawl analysis: exact BFS depths over the link graph, coverage of
//! a tweeted-URL target set by depth (per URL or per domain), coverage by
//! tweet frequency, and ingestion of tweet/shortener files into a target
//! set.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use thiserror::Error;

use crate::urlkit::{canonicalize, CanonicalUrl, DomainName};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("target set is empty")]
    EmptyTargets,
    #[error("k = {k} exceeds target count {targets}")]
    KTooLarge { k: usize, targets: usize },
    #[error("bucket edges must be strictly increasing")]
    BadBuckets,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Unique effective URLs with how often each was tweeted.
#[derive(Debug, Clone, Default)]
pub struct TweetUrlSet {
    entries: BTreeMap<String, u64>,
}

impl TweetUrlSet {
    pub fn from_counts(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        TweetUrlSet {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// The k most-tweeted URLs; ties at the cut are broken by canonical URL
    /// order so reports are deterministic.
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        let mut all: Vec<(&str, u64)> = self.iter().collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        all.into_iter().take(k).map(|(url, _)| url).collect()
    }
}

/// Ingestion accounting, mirroring how a capture is summarized: total
/// tweets, URL-bearing tweets, and shortener resolution outcomes.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub tweets_total: u64,
    pub tweets_with_url: u64,
    pub unique_short_urls: u64,
    pub unresolvable_unique: u64,
    pub unresolvable_occurrences: u64,
    pub parse_errors: u64,
}

impl IngestReport {
    pub fn url_bearing_rate(&self) -> f64 {
        if self.tweets_total == 0 {
            0.0
        } else {
            100.0 * self.tweets_with_url as f64 / self.tweets_total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub depth: u32,
    pub cumulative_crawled: u64,
    pub pct_covered_all: f64,
    pub pct_covered_topk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageUnit {
    Url,
    Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub k: usize,
    pub unit: CoverageUnit,
}

/// Standard BFS shortest unweighted path lengths from any seed; unreachable
/// nodes are absent from the result.
pub fn exact_depths(
    edges: &[(String, String)],
    seeds: &[String],
) -> HashMap<String, u32> {
    let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
    for (s, t) in edges {
        adjacency.entry(s.as_str()).or_default().push(t.as_str());
    }
    let mut depths: HashMap<String, u32> = HashMap::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for seed in seeds {
        if !depths.contains_key(seed.as_str()) {
            depths.insert(seed.clone(), 0);
            queue.push_back(seed.as_str());
        }
    }
    while let Some(node) = queue.pop_front() {
        let d = depths[node];
        if let Some(nexts) = adjacency.get(node) {
            for t in nexts.clone() {
                if !depths.contains_key(t) {
                    depths.insert(t.to_string(), d + 1);
                    queue.push_back(t);
                }
            }
        }
    }
    depths
}

fn registrable(url: &str) -> String {
    match CanonicalUrl::parse(url) {
        Ok(u) => u.domain().registrable().to_string(),
        Err(_) => DomainName::from_host(url).registrable().to_string(),
    }
}

/// Cumulative coverage per depth. For every depth present in the crawl:
/// how many URLs (or distinct domains) were crawled within that depth, and
/// which percentage of the target set (all targets, and the top-k most
/// tweeted) that reaches.
pub fn coverage_by_depth(
    crawled: &HashMap<String, u32>,
    targets: &TweetUrlSet,
    k: usize,
    unit: CoverageUnit,
) -> Result<CoverageReport, AnalyticsError> {
    if targets.is_empty() {
        return Err(AnalyticsError::EmptyTargets);
    }
    if k > targets.len() {
        return Err(AnalyticsError::KTooLarge {
            k,
            targets: targets.len(),
        });
    }
    let top: HashSet<&str> = targets.top_k(k).into_iter().collect();

    let mut depths: Vec<u32> = crawled.values().copied().collect();
    depths.sort_unstable();
    depths.dedup();

    let mut rows = Vec::with_capacity(depths.len());
    match unit {
        CoverageUnit::Url => {
            let target_total = targets.len() as f64;
            let top_total = top.len() as f64;
            for &depth in &depths {
                let within: HashSet<&str> = crawled
                    .iter()
                    .filter(|(_, d)| **d <= depth)
                    .map(|(u, _)| u.as_str())
                    .collect();
                let covered_all = targets.iter().filter(|(u, _)| within.contains(u)).count();
                let covered_top = top.iter().filter(|u| within.contains(**u)).count();
                rows.push(CoverageRow {
                    depth,
                    cumulative_crawled: within.len() as u64,
                    pct_covered_all: 100.0 * covered_all as f64 / target_total,
                    pct_covered_topk: if top.is_empty() {
                        0.0
                    } else {
                        100.0 * covered_top as f64 / top_total
                    },
                });
            }
        }
        CoverageUnit::Domain => {
            let target_domains: HashSet<String> =
                targets.iter().map(|(u, _)| registrable(u)).collect();
            let top_domains: HashSet<String> = top.iter().map(|u| registrable(u)).collect();
            let target_total = target_domains.len() as f64;
            let top_total = top_domains.len() as f64;
            for &depth in &depths {
                let within: HashSet<String> = crawled
                    .iter()
                    .filter(|(_, d)| **d <= depth)
                    .map(|(u, _)| registrable(u))
                    .collect();
                let covered_all = target_domains.iter().filter(|d| within.contains(*d)).count();
                let covered_top = top_domains.iter().filter(|d| within.contains(*d)).count();
                rows.push(CoverageRow {
                    depth,
                    cumulative_crawled: within.len() as u64,
                    pct_covered_all: 100.0 * covered_all as f64 / target_total,
                    pct_covered_topk: if top_domains.is_empty() {
                        0.0
                    } else {
                        100.0 * covered_top as f64 / top_total
                    },
                });
            }
        }
    }
    Ok(CoverageReport { rows, k, unit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBucket {
    pub lo: u64,
    /// Exclusive upper edge; the last bucket is open-ended.
    pub hi: Option<u64>,
    pub targets: u64,
    pub covered: u64,
    /// Absent (no data) when the bucket holds no targets at all.
    pub pct_covered: Option<f64>,
}

/// Coverage per tweet-frequency bucket. Edges `[e1, e2, ..., en]` define
/// buckets `[e1,e2), [e2,e3), ..., [en, +inf)`.
pub fn coverage_by_frequency(
    crawled: &HashSet<String>,
    targets: &TweetUrlSet,
    edges: &[u64],
) -> Result<Vec<FrequencyBucket>, AnalyticsError> {
    if targets.is_empty() {
        return Err(AnalyticsError::EmptyTargets);
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalyticsError::BadBuckets);
    }
    let mut buckets: Vec<FrequencyBucket> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| FrequencyBucket {
            lo,
            hi: edges.get(i + 1).copied(),
            targets: 0,
            covered: 0,
            pct_covered: None,
        })
        .collect();
    for (url, count) in targets.iter() {
        let Some(bucket) = buckets
            .iter_mut()
            .rev()
            .find(|b| count >= b.lo && b.hi.map_or(true, |hi| count < hi))
        else {
            continue; // below the first edge
        };
        bucket.targets += 1;
        if crawled.contains(url) {
            bucket.covered += 1;
        }
    }
    for bucket in &mut buckets {
        if bucket.targets > 0 {
            bucket.pct_covered = Some(100.0 * bucket.covered as f64 / bucket.targets as f64);
        }
    }
    Ok(buckets)
}

/// Extracts URLs from a line-delimited tweet file
/// (`timestamp<TAB>author<TAB>text`), resolves shortened URLs through the
/// mapping (`short<TAB>effective`), canonicalizes, and aggregates tweet
/// counts per effective URL. A URL whose host appears on the mapping's
/// short side but which has no mapping entry is counted unresolvable and
/// excluded. Within one tweet a URL counts once.
pub fn ingest_tweets(
    tweets_text: &str,
    mapping_text: &str,
) -> (TweetUrlSet, IngestReport) {
    let mut mapping: HashMap<String, String> = HashMap::new();
    let mut short_hosts: HashSet<String> = HashSet::new();
    for line in mapping_text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((short, effective)) = line.split_once('\t') {
            let short = short.trim();
            let effective = effective.trim();
            if let Ok(short_canon) = canonicalize(short, None) {
                short_hosts.insert(short_canon.host().to_string());
                mapping.insert(short_canon.to_string(), effective.to_string());
            }
        }
    }

    let mut report = IngestReport::default();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut short_seen: HashSet<String> = HashSet::new();
    let mut unresolved_seen: HashSet<String> = HashSet::new();

    for line in tweets_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        report.tweets_total += 1;
        let mut fields = line.split('\t');
        let (_ts, _author, text) = (fields.next(), fields.next(), fields.next());
        let Some(text) = text else {
            report.parse_errors += 1;
            continue;
        };
        let mut effective_in_tweet: HashSet<String> = HashSet::new();
        let mut saw_url = false;
        for word in text.split_whitespace() {
            if !(word.starts_with("http://") || word.starts_with("https://")) {
                continue;
            }
            let trimmed = word.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', ']', '"']);
            let Ok(url) = canonicalize(trimmed, None) else {
                continue;
            };
            saw_url = true;
            let key = url.to_string();
            if short_hosts.contains(url.host()) {
                short_seen.insert(key.clone());
                match mapping.get(&key) {
                    Some(effective) => {
                        if let Ok(resolved) = canonicalize(effective, None) {
                            effective_in_tweet.insert(resolved.to_string());
                        }
                    }
                    None => {
                        report.unresolvable_occurrences += 1;
                        unresolved_seen.insert(key);
                    }
                }
            } else {
                effective_in_tweet.insert(key);
            }
        }
        if saw_url {
            report.tweets_with_url += 1;
        }
        for url in effective_in_tweet {
            *counts.entry(url).or_insert(0) += 1;
        }
    }
    report.unique_short_urls = short_seen.len() as u64;
    report.unresolvable_unique = unresolved_seen.len() as u64;
    (TweetUrlSet { entries: counts }, report)
}

pub fn ingest_tweet_files(
    tweets: &Path,
    mapping: &Path,
) -> Result<(TweetUrlSet, IngestReport), AnalyticsError> {
    let tweets_text = std::fs::read_to_string(tweets)?;
    let mapping_text = std::fs::read_to_string(mapping)?;
    Ok(ingest_tweets(&tweets_text, &mapping_text))
}

/// Loads `url<TAB>depth` lines, as written by the report tooling and the
/// mockweb manifest.
pub fn load_depths_file(path: &Path) -> Result<HashMap<String, u32>, AnalyticsError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((url, depth)) = line.split_once('\t') {
            if let Ok(depth) = depth.trim().parse() {
                out.insert(url.trim().to_string(), depth);
            }
        }
    }
    Ok(out)
}
