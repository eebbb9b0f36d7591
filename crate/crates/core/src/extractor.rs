//! Lenient HTML link and text extraction.
//!
//! Anchors are returned in document order with their raw `href` exactly as
//! written (canonicalization happens at submission, against the fetched
//! URL). Each anchor carries a context: its own text plus up to ten words on
//! either side in the page's rendered text, capped at 512 characters.
//! Malformed HTML never fails; non-HTML content yields nothing.

use ego_tree::iter::Edge;
use scraper::{Html, Node};

const CONTEXT_WINDOW_WORDS: usize = 10;
const CONTEXT_MAX_CHARS: usize = 512;

/// Elements whose text is never rendered.
const SKIP_TAGS: &[&str] = &["head", "script", "style", "noscript", "template"];

/// Elements that terminate a word even without intervening whitespace.
const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "br", "caption", "dd", "div", "dl",
    "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5",
    "h6", "header", "hr", "html", "li", "main", "nav", "ol", "option", "p", "pre", "section",
    "select", "summary", "table", "tbody", "td", "tfoot", "th", "thead", "tr", "ul",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedLink {
    /// The href attribute exactly as written, possibly relative.
    pub target_raw: String,
    /// Whitespace-normalized anchor text plus surrounding words.
    pub context: String,
}

struct AnchorSpan {
    href: String,
    start_word: usize,
    end_word: usize,
}

struct TextWalk {
    words: Vec<String>,
    current: String,
    anchors: Vec<AnchorSpan>,
    open_anchors: Vec<(String, usize)>,
}

impl TextWalk {
    fn flush(&mut self) {
        if !self.current.is_empty() {
            self.words.push(std::mem::take(&mut self.current));
        }
    }

    fn push_text(&mut self, text: &str) {
        for c in text.chars() {
            if c.is_whitespace() {
                self.flush();
            } else {
                self.current.push(c);
            }
        }
    }
}

/// Walks the DOM iteratively (deeply nested input must not blow the stack),
/// producing the rendered word stream and the anchor spans over it.
fn walk(html: &Html) -> TextWalk {
    let mut state = TextWalk {
        words: Vec::new(),
        current: String::new(),
        anchors: Vec::new(),
        open_anchors: Vec::new(),
    };
    let mut skip_depth = 0usize;
    for edge in html.tree.root().traverse() {
        match edge {
            Edge::Open(node) => match node.value() {
                Node::Element(el) => {
                    let name = el.name();
                    if SKIP_TAGS.contains(&name) {
                        skip_depth += 1;
                        continue;
                    }
                    if skip_depth > 0 {
                        continue;
                    }
                    if BLOCK_TAGS.contains(&name) {
                        state.flush();
                    }
                    if name == "a" {
                        if let Some(href) = el.attr("href") {
                            let href = href.trim();
                            if !href.is_empty() {
                                state.flush();
                                state
                                    .open_anchors
                                    .push((href.to_string(), state.words.len()));
                            }
                        }
                    }
                }
                Node::Text(text) => {
                    if skip_depth == 0 {
                        state.push_text(&text.text);
                    }
                }
                _ => {}
            },
            Edge::Close(node) => {
                if let Node::Element(el) = node.value() {
                    let name = el.name();
                    if SKIP_TAGS.contains(&name) {
                        skip_depth = skip_depth.saturating_sub(1);
                        continue;
                    }
                    if skip_depth > 0 {
                        continue;
                    }
                    if BLOCK_TAGS.contains(&name) {
                        state.flush();
                    }
                    if name == "a" && el.attr("href").map_or(false, |h| !h.trim().is_empty()) {
                        state.flush();
                        if let Some((href, start_word)) = state.open_anchors.pop() {
                            state.anchors.push(AnchorSpan {
                                href,
                                start_word,
                                end_word: state.words.len(),
                            });
                        }
                    }
                }
            }
        }
    }
    state.flush();
    state
}

fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        s.chars().take(max).collect()
    }
}

fn is_html(content_type: Option<&str>) -> bool {
    match content_type {
        None => true,
        Some(ct) => {
            let essence = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
            essence == "text/html" || essence == "application/xhtml+xml"
        }
    }
}

/// Picks the document encoding: content-type charset first, then a
/// meta-declared charset in the first KiB, then UTF-8 with replacement.
fn decode(body: &[u8], content_type: Option<&str>) -> String {
    if let Some(ct) = content_type {
        if let Some(enc) = charset_param(ct) {
            return enc.decode(body).0.into_owned();
        }
    }
    let prefix_len = body.len().min(1024);
    let prefix: String = body[..prefix_len]
        .iter()
        .map(|b| b.to_ascii_lowercase() as char)
        .collect();
    if let Some(pos) = prefix.find("charset=") {
        let raw = &prefix[pos + "charset=".len()..];
        let label: String = raw
            .trim_start_matches(['"', '\''])
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':'))
            .collect();
        if let Some(enc) = encoding_rs::Encoding::for_label(label.as_bytes()) {
            return enc.decode(body).0.into_owned();
        }
    }
    String::from_utf8_lossy(body).into_owned()
}

fn charset_param(content_type: &str) -> Option<&'static encoding_rs::Encoding> {
    for part in content_type.split(';').skip(1) {
        let part = part.trim();
        if let Some(value) = part.strip_prefix("charset=").or_else(|| {
            part.strip_prefix("CHARSET=")
                .or_else(|| part.strip_prefix("Charset="))
        }) {
            let value = value.trim_matches(['"', '\'']);
            return encoding_rs::Encoding::for_label(value.as_bytes());
        }
    }
    None
}

/// Returns one entry per anchor element with a non-empty href, in document
/// order. Duplicate hrefs stay duplicated; the frontier's (source, target)
/// constraint deduplicates. Never fails, whatever the bytes.
pub fn extract_links(body: &[u8], content_type: Option<&str>) -> Vec<ExtractedLink> {
    if !is_html(content_type) {
        return Vec::new();
    }
    let text = decode(body, content_type);
    let html = Html::parse_document(&text);
    let state = walk(&html);
    state
        .anchors
        .into_iter()
        .map(|span| {
            let from = span.start_word.saturating_sub(CONTEXT_WINDOW_WORDS);
            let to = (span.end_word + CONTEXT_WINDOW_WORDS).min(state.words.len());
            let context = state.words[from..to].join(" ");
            ExtractedLink {
                target_raw: span.href,
                context: truncate_chars(&context, CONTEXT_MAX_CHARS),
            }
        })
        .collect()
}

/// Tag-stripped, entity-decoded, whitespace-normalized page text; empty for
/// non-HTML content.
pub fn page_text(body: &[u8], content_type: Option<&str>) -> String {
    if !is_html(content_type) {
        return String::new();
    }
    let text = decode(body, content_type);
    let html = Html::parse_document(&text);
    walk(&html).words.join(" ")
}
