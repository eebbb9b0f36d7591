//! Additive focus strategies.
//!
//! A strategy is a list of `(pattern, url_weight, link_weight)` rules plus a
//! TLD bonus table. A URL scores the TLD bonus of its top label plus the URL
//! weight of every rule whose pattern occurs in the normalized URL string; an
//! anchor context scores the link weight of every rule occurring in the
//! normalized context. These are presence tests: a rule contributes its
//! weight at most once per text, no matter how often the pattern occurs.
//! A URL's frontier priority is its URL score plus the sum of the context
//! scores of its distinct inbound links.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

use crate::urlkit::{normalize_text, url_top, CanonicalUrl};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("cannot read strategy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: invalid pattern `{pattern}`: {reason}")]
    BadPattern {
        line: usize,
        pattern: String,
        reason: String,
    },
    #[error("line {line}: negative weight {value}")]
    NegativeWeight { line: usize, value: i64 },
}

#[derive(Debug, Clone)]
pub struct StrategyRule {
    pattern: Regex,
    pattern_text: String,
    url_weight: u32,
    link_weight: u32,
}

impl StrategyRule {
    pub fn new(pattern: &str, url_weight: u32, link_weight: u32) -> Result<Self, regex::Error> {
        Ok(StrategyRule {
            pattern: Regex::new(pattern)?,
            pattern_text: pattern.to_string(),
            url_weight,
            link_weight,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern_text
    }

    pub fn url_weight(&self) -> u32 {
        self.url_weight
    }

    pub fn link_weight(&self) -> u32 {
        self.link_weight
    }
}

/// Declarative focus strategy; immutable after load, shareable across any
/// number of workers.
#[derive(Debug, Clone, Default)]
pub struct KeywordStrategy {
    rules: Vec<StrategyRule>,
    tld_bonuses: BTreeMap<String, u32>,
}

/// Frontier ordering value: URL score plus the summed context scores of the
/// URL's distinct inbound links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Priority(pub i64);

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl KeywordStrategy {
    /// A strategy with no rules and no bonuses: every score is zero and the
    /// crawl degenerates to insertion order.
    pub fn empty() -> Self {
        KeywordStrategy::default()
    }

    pub fn new(
        rules: Vec<StrategyRule>,
        tld_bonuses: BTreeMap<String, u32>,
    ) -> Self {
        KeywordStrategy { rules, tld_bonuses }
    }

    /// Parses the line-delimited strategy format:
    ///
    /// ```text
    /// # comment
    /// rule <pattern> <url_weight> <link_weight>
    /// tld <label> <bonus>
    /// ```
    ///
    /// Patterns are regular expressions without whitespace, matched against
    /// normalized text (lowercase, diacritics stripped), so they should be
    /// written in that alphabet.
    pub fn parse(text: &str) -> Result<Self, StrategyError> {
        let mut rules = Vec::new();
        let mut tld_bonuses = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["rule", pattern, url_w, link_w] => {
                    let url_weight = parse_weight(url_w, line_no)?;
                    let link_weight = parse_weight(link_w, line_no)?;
                    let rule = StrategyRule::new(pattern, url_weight, link_weight).map_err(
                        |e| StrategyError::BadPattern {
                            line: line_no,
                            pattern: pattern.to_string(),
                            reason: e.to_string(),
                        },
                    )?;
                    rules.push(rule);
                }
                ["tld", label, bonus] => {
                    let bonus = parse_weight(bonus, line_no)?;
                    tld_bonuses.insert(label.to_ascii_lowercase(), bonus);
                }
                _ => {
                    return Err(StrategyError::Parse {
                        line: line_no,
                        reason: format!("expected `rule <pattern> <url_w> <link_w>` or `tld <label> <bonus>`, got `{line}`"),
                    })
                }
            }
        }
        Ok(KeywordStrategy { rules, tld_bonuses })
    }

    pub fn from_file(path: &Path) -> Result<Self, StrategyError> {
        let text = std::fs::read_to_string(path)?;
        KeywordStrategy::parse(&text)
    }

    pub fn rules(&self) -> &[StrategyRule] {
        &self.rules
    }

    pub fn tld_bonuses(&self) -> &BTreeMap<String, u32> {
        &self.tld_bonuses
    }

    pub fn tld_bonus(&self, tld: &str) -> i64 {
        self.tld_bonuses.get(tld).copied().unwrap_or(0) as i64
    }

    /// Equivalent SQL functions for backends that support server-side
    /// scoring, mirroring the shape of the store's procedural scoring
    /// option. Inputs are expected to be pre-normalized text.
    pub fn to_sql_functions(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "CREATE OR REPLACE FUNCTION score_url_norm(normurl TEXT, tld TEXT)\nRETURNS bigint AS $$\nDECLARE\nscore bigint;\nBEGIN\nscore := 0;\n",
        );
        for (label, bonus) in &self.tld_bonuses {
            out.push_str(&format!(
                "IF tld = '{}' THEN\n\tscore := score + {};\nEND IF;\n",
                sql_quote(label),
                bonus
            ));
        }
        for rule in &self.rules {
            if rule.url_weight > 0 {
                out.push_str(&format!(
                    "IF normurl ~ '{}' THEN\n\tscore := score + {};\nEND IF;\n",
                    sql_quote(&rule.pattern_text),
                    rule.url_weight
                ));
            }
        }
        out.push_str("RETURN score;\nEND;\n$$ LANGUAGE plpgsql;\n\n");
        out.push_str(
            "CREATE OR REPLACE FUNCTION score_link_norm(normcontext TEXT)\nRETURNS bigint AS $$\nDECLARE\nscore bigint;\nBEGIN\nscore := 0;\n",
        );
        for rule in &self.rules {
            if rule.link_weight > 0 {
                out.push_str(&format!(
                    "IF normcontext ~ '{}' THEN\n\tscore := score + {};\nEND IF;\n",
                    sql_quote(&rule.pattern_text),
                    rule.link_weight
                ));
            }
        }
        out.push_str("RETURN score;\nEND;\n$$ LANGUAGE plpgsql;\n");
        out
    }
}

fn parse_weight(s: &str, line: usize) -> Result<u32, StrategyError> {
    let value: i64 = s.parse().map_err(|_| StrategyError::Parse {
        line,
        reason: format!("`{s}` is not an integer"),
    })?;
    if value < 0 {
        return Err(StrategyError::NegativeWeight { line, value });
    }
    u32::try_from(value).map_err(|_| StrategyError::Parse {
        line,
        reason: format!("weight {value} out of range"),
    })
}

fn sql_quote(s: &str) -> String {
    s.replace('\'', "''")
}

/// Scores the URL string itself: TLD bonus plus the URL weight of every rule
/// whose pattern occurs in the normalized serialized URL.
pub fn score_url(url: &CanonicalUrl, strategy: &KeywordStrategy) -> i64 {
    let text = normalize_text(&url.to_string());
    let mut score = strategy.tld_bonus(url_top(url));
    for rule in &strategy.rules {
        if rule.url_weight > 0 && rule.pattern.is_match(&text) {
            score += rule.url_weight as i64;
        }
    }
    score
}

/// Scores the textual context an inbound link was found in.
pub fn score_link(context: &str, strategy: &KeywordStrategy) -> i64 {
    let text = normalize_text(context);
    let mut score = 0;
    for rule in &strategy.rules {
        if rule.link_weight > 0 && rule.pattern.is_match(&text) {
            score += rule.link_weight as i64;
        }
    }
    score
}

/// Additive combination of a URL score and the context scores of the URL's
/// distinct inbound links.
pub fn combine_priority(url_score: i64, link_scores: impl IntoIterator<Item = i64>) -> Priority {
    Priority(url_score + link_scores.into_iter().sum::<i64>())
}
