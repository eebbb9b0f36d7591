//! Report rendering: aligned plain-text tables for operators, TSV for
//! machines, and x/y plot data for the frequency histogram. Output is
//! deterministic for identical inputs.

use std::fmt::Write;

use crate::analytics::{CoverageReport, CoverageUnit, FrequencyBucket, IngestReport};
use crate::frontier::FrontierStats;

fn render_aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for (i, h) in header.iter().enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        let _ = write!(out, "{:<width$}", h, width = widths[i]);
    }
    out.push('\n');
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{:<width$}", cell, width = widths[i]);
        }
        out.push('\n');
    }
    out
}

pub fn coverage_table(report: &CoverageReport) -> String {
    let unit = match report.unit {
        CoverageUnit::Url => "urls",
        CoverageUnit::Domain => "domains",
    };
    let crawled_header = format!("crawled_{unit}");
    let top_header = format!("pct_top{}", report.k);
    let header = ["depth", crawled_header.as_str(), "pct_all", top_header.as_str()];
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.depth.to_string(),
                r.cumulative_crawled.to_string(),
                format!("{:.2}", r.pct_covered_all),
                format!("{:.2}", r.pct_covered_topk),
            ]
        })
        .collect();
    render_aligned(&header, &rows)
}

pub fn coverage_tsv(report: &CoverageReport) -> String {
    let mut out = String::from("depth\tcumulative_crawled\tpct_all\tpct_topk\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.2}\t{:.2}",
            r.depth, r.cumulative_crawled, r.pct_covered_all, r.pct_covered_topk
        );
    }
    out
}

fn bucket_label(b: &FrequencyBucket) -> String {
    match b.hi {
        Some(hi) => format!("[{},{})", b.lo, hi),
        None => format!("[{},inf)", b.lo),
    }
}

pub fn frequency_table(buckets: &[FrequencyBucket]) -> String {
    let header = ["bucket", "targets", "covered", "pct_covered"];
    let rows: Vec<Vec<String>> = buckets
        .iter()
        .map(|b| {
            vec![
                bucket_label(b),
                b.targets.to_string(),
                b.covered.to_string(),
                match b.pct_covered {
                    Some(p) => format!("{p:.2}"),
                    None => "no-data".to_string(),
                },
            ]
        })
        .collect();
    render_aligned(&header, &rows)
}

pub fn frequency_tsv(buckets: &[FrequencyBucket]) -> String {
    let mut out = String::from("bucket_lo\tbucket_hi\ttargets\tcovered\tpct_covered\n");
    for b in buckets {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            b.lo,
            b.hi.map_or("inf".to_string(), |h| h.to_string()),
            b.targets,
            b.covered,
            b.pct_covered
                .map_or("no-data".to_string(), |p| format!("{p:.2}")),
        );
    }
    out
}

/// `x y` pairs for the frequency histogram; buckets without data are
/// skipped rather than plotted as zero.
pub fn frequency_plot_data(buckets: &[FrequencyBucket]) -> String {
    let mut out = String::new();
    for b in buckets {
        if let Some(p) = b.pct_covered {
            let _ = writeln!(out, "{} {p:.2}", b.lo);
        }
    }
    out
}

pub fn stats_table(stats: &FrontierStats) -> String {
    let rows = vec![
        vec!["pending".to_string(), stats.pending.to_string()],
        vec!["claimed".to_string(), stats.claimed.to_string()],
        vec!["fetched".to_string(), stats.fetched.to_string()],
        vec!["failed".to_string(), stats.failed.to_string()],
        vec!["max_depth".to_string(), stats.max_depth.to_string()],
        vec!["links".to_string(), stats.links.to_string()],
    ];
    render_aligned(&["metric", "count"], &rows)
}

pub fn ingest_summary(report: &IngestReport) -> String {
    format!(
        "tweets {}\ntweets_with_url {} ({:.1}%)\nunique_short_urls {}\nunresolvable_unique {}\nunresolvable_occurrences {}\nparse_errors {}\n",
        report.tweets_total,
        report.tweets_with_url,
        report.url_bearing_rate(),
        report.unique_short_urls,
        report.unresolvable_unique,
        report.unresolvable_occurrences,
        report.parse_errors,
    )
}
