//! A deterministic synthetic web: a generator plus a local HTTP server that
//! stand in for the internet, so crawl coordination and coverage analyses
//! are reproducible at desk scale.
//!
//! The same spec always yields byte-identical site content and an identical
//! link graph, and the generator exports the ground truth a test needs: the
//! reachable set from the designated seed pages, exact BFS depths, and the
//! keyword-page inventory. Multiple domains are simulated by virtual hosting
//! on one loopback port, dispatched on the Host header.

mod generate;
mod serve;

pub use generate::{MockPage, MockWebBundle, RedirectChain};
pub use serve::{bind_and_serve, reserve_listener, serve, AccessEntry, MockWebServer};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MockWebError {
    #[error("invalid mock web spec: {0}")]
    InvalidSpec(String),
    #[error("spec parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("address in use or unbindable: {0}")]
    AddressInUse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordRegion {
    pub keyword: String,
    pub fraction: f64,
    pub tld: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RedirectChainSpec {
    pub count: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPageSpec {
    pub status: u16,
    pub fraction: f64,
}

/// Everything the generator needs; equal specs produce equal bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct MockWebSpec {
    pub seed: u64,
    pub pages: usize,
    pub domains: usize,
    pub seed_pages: usize,
    pub out_degree: (usize, usize),
    /// Port baked into every absolute URL; the server must bind it.
    pub port: u16,
    pub keywords: Vec<KeywordRegion>,
    pub redirect_chains: Vec<RedirectChainSpec>,
    pub error_pages: Vec<ErrorPageSpec>,
    pub robots_disallow: f64,
}

impl Default for MockWebSpec {
    fn default() -> Self {
        MockWebSpec {
            seed: 1,
            pages: 100,
            domains: 4,
            seed_pages: 2,
            out_degree: (2, 6),
            port: 8000,
            keywords: Vec::new(),
            redirect_chains: Vec::new(),
            error_pages: Vec::new(),
            robots_disallow: 0.0,
        }
    }
}

impl MockWebSpec {
    /// Parses the line-delimited spec format:
    ///
    /// ```text
    /// seed 42
    /// pages 1000
    /// domains 10
    /// seed-pages 4
    /// out-degree 2 8
    /// port 8000
    /// keyword keyword1 0.10 fr
    /// redirect-chains 3 4
    /// error-pages 404 0.05
    /// robots-disallow 0.1
    /// ```
    pub fn parse(text: &str) -> Result<Self, MockWebError> {
        let mut spec = MockWebSpec::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let fail = |reason: String| MockWebError::Parse {
                line: line_no,
                reason,
            };
            match fields.as_slice() {
                ["seed", v] => spec.seed = parse_num(v, line_no)?,
                ["pages", v] => spec.pages = parse_num(v, line_no)?,
                ["domains", v] => spec.domains = parse_num(v, line_no)?,
                ["seed-pages", v] => spec.seed_pages = parse_num(v, line_no)?,
                ["port", v] => spec.port = parse_num(v, line_no)?,
                ["out-degree", lo, hi] => {
                    spec.out_degree = (parse_num(lo, line_no)?, parse_num(hi, line_no)?)
                }
                ["keyword", kw, fraction, tld] => spec.keywords.push(KeywordRegion {
                    keyword: kw.to_string(),
                    fraction: parse_num(fraction, line_no)?,
                    tld: tld.to_ascii_lowercase(),
                }),
                ["redirect-chains", count, length] => spec.redirect_chains.push(RedirectChainSpec {
                    count: parse_num(count, line_no)?,
                    length: parse_num(length, line_no)?,
                }),
                ["error-pages", status, fraction] => spec.error_pages.push(ErrorPageSpec {
                    status: parse_num(status, line_no)?,
                    fraction: parse_num(fraction, line_no)?,
                }),
                ["robots-disallow", fraction] => {
                    spec.robots_disallow = parse_num(fraction, line_no)?
                }
                _ => return Err(fail(format!("unrecognized line `{line}`"))),
            }
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, MockWebError> {
        let text = std::fs::read_to_string(path)?;
        MockWebSpec::parse(&text)
    }

    pub fn validate(&self) -> Result<(), MockWebError> {
        let err = |msg: String| Err(MockWebError::InvalidSpec(msg));
        if self.pages == 0 {
            return err("pages must be positive".into());
        }
        if self.domains == 0 {
            return err("domains must be positive".into());
        }
        if self.seed_pages == 0 || self.seed_pages > self.pages {
            return err(format!(
                "seed-pages must be in 1..={}, got {}",
                self.pages, self.seed_pages
            ));
        }
        if self.out_degree.0 > self.out_degree.1 {
            return err(format!(
                "out-degree range is inverted: {} > {}",
                self.out_degree.0, self.out_degree.1
            ));
        }
        let mut fraction_sum = 0.0;
        for region in &self.keywords {
            if !(0.0..=1.0).contains(&region.fraction) {
                return err(format!(
                    "keyword `{}` fraction {} outside [0, 1]",
                    region.keyword, region.fraction
                ));
            }
            if region.keyword.is_empty()
                || !region
                    .keyword
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
            {
                return err(format!(
                    "keyword `{}` must be lowercase ascii alphanumeric",
                    region.keyword
                ));
            }
            fraction_sum += region.fraction;
        }
        let mut error_sum = 0.0;
        for e in &self.error_pages {
            if !(0.0..=1.0).contains(&e.fraction) {
                return err(format!("error fraction {} outside [0, 1]", e.fraction));
            }
            if !(400..600).contains(&e.status) {
                return err(format!("error status {} outside 400..599", e.status));
            }
            error_sum += e.fraction;
        }
        if !(0.0..=1.0).contains(&self.robots_disallow) {
            return err(format!(
                "robots-disallow fraction {} outside [0, 1]",
                self.robots_disallow
            ));
        }
        if fraction_sum > 1.0 {
            return err(format!("keyword fractions sum to {fraction_sum} > 1"));
        }
        if fraction_sum + error_sum + self.robots_disallow > 1.0 {
            return err(format!(
                "keyword + error + robots fractions sum to {} > 1",
                fraction_sum + error_sum + self.robots_disallow
            ));
        }
        let unique_tlds: std::collections::BTreeSet<&str> =
            self.keywords.iter().map(|r| r.tld.as_str()).collect();
        if self.domains < unique_tlds.len().max(1) {
            return err(format!(
                "{} domains cannot cover {} keyword TLDs",
                self.domains,
                unique_tlds.len()
            ));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, MockWebError> {
    s.parse().map_err(|_| MockWebError::Parse {
        line,
        reason: format!("cannot parse `{s}`"),
    })
}
