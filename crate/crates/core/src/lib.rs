//! A focused, distributable web crawler whose only coordination point is a
//! standard SQL database.
//!
//! The store holds the frontier: every discovered URL with its additive
//! keyword score, its depth (shortest observed link distance from a seed) and
//! its lifecycle status. Any number of crawler instances, on any number of
//! machines, run the same loop against the same database: claim a batch of
//! pending URLs ordered by priority, fetch them in parallel, extract links
//! and anchor contexts, and submit the discoveries back through a single
//! insertion view. Uniqueness of URLs and links is enforced by SQL
//! constraints; claims are leased so a crashed instance never strands work.
//!
//! The crate also ships a deterministic synthetic web ([`mockweb`]) used by
//! the integration and acceptance tests, and offline [`analytics`] for
//! depth and coverage reports over a finished crawl.

pub mod analytics;
pub mod cli;
pub mod events;
pub mod extractor;
pub mod fetcher;
pub mod frontier;
pub mod mockweb;
pub mod report;
pub mod runtime;
pub mod scoring;
pub mod urlkit;

pub use frontier::{open_store, FrontierError, FrontierStore};
pub use scoring::KeywordStrategy;
pub use urlkit::{canonicalize, normalize_text, url_top, CanonicalUrl, DomainName};
