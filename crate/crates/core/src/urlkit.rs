//! URL and text canonicalization.
//!
//! Every URL entering the system passes through [`canonicalize`] so that "the
//! same page" maps to exactly one frontier key, and all keyword matching runs
//! over [`normalize_text`] output so accented and cased variants hit the same
//! patterns.
//!
//! Canonical form: lowercase scheme and host (punycode for IDNs), fragment
//! stripped, default ports dropped, dot-segments resolved, percent-escapes
//! normalized (unreserved bytes decoded, kept escapes uppercased), userinfo
//! stripped, single trailing host dot removed. Query strings are preserved
//! byte-for-byte apart from percent normalization; trailing slashes are kept
//! because `/a` and `/a/` may be distinct resources.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;
use url::Url;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UrlError {
    #[error("malformed url `{input}`: {reason}")]
    Malformed { input: String, reason: String },
    #[error("unsupported scheme `{scheme}`")]
    UnsupportedScheme { scheme: String },
}

impl UrlError {
    fn malformed(input: &str, reason: impl fmt::Display) -> Self {
        UrlError::Malformed {
            input: input.chars().take(256).collect(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Http,
    Https,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Http => "http",
            Scheme::Https => "https",
        }
    }

    fn default_port(self) -> u16 {
        match self {
            Scheme::Http => 80,
            Scheme::Https => 443,
        }
    }
}

/// A normalized absolute http(s) URL; the identity key for frontier
/// uniqueness. Serializing and re-parsing a `CanonicalUrl` yields an
/// identical value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalUrl {
    scheme: Scheme,
    host: String,
    port: Option<u16>,
    path: String,
    query: Option<String>,
}

impl CanonicalUrl {
    pub fn parse(raw: &str) -> Result<Self, UrlError> {
        canonicalize(raw, None)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    /// Port, absent when it is the scheme default.
    pub fn port(&self) -> Option<u16> {
        self.port
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn query(&self) -> Option<&str> {
        self.query.as_deref()
    }

    pub fn domain(&self) -> DomainName {
        DomainName::from_host(&self.host)
    }

    /// Host plus explicit port when present, e.g. `site.fr:8080`.
    pub fn authority(&self) -> String {
        match self.port {
            Some(p) => format!("{}:{}", self.host, p),
            None => self.host.clone(),
        }
    }

    pub fn to_url(&self) -> Url {
        Url::parse(&self.to_string()).expect("canonical urls reparse")
    }
}

impl fmt::Display for CanonicalUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme.as_str(), self.host)?;
        if let Some(p) = self.port {
            write!(f, ":{p}")?;
        }
        write!(f, "{}", self.path)?;
        if let Some(q) = &self.query {
            write!(f, "?{q}")?;
        }
        Ok(())
    }
}

impl FromStr for CanonicalUrl {
    type Err = UrlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CanonicalUrl::parse(s)
    }
}

/// Host name split into the crawler's working notion of a domain. Without a
/// public-suffix list the registrable domain is simply the last two host
/// labels (the whole host when there are fewer), and the TLD is the final
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainName {
    registrable: String,
    tld: String,
}

impl DomainName {
    pub fn from_host(host: &str) -> Self {
        let labels: Vec<&str> = host.split('.').collect();
        let tld = labels.last().copied().unwrap_or(host).to_string();
        let registrable = if labels.len() >= 2 {
            labels[labels.len() - 2..].join(".")
        } else {
            host.to_string()
        };
        DomainName { registrable, tld }
    }

    pub fn registrable(&self) -> &str {
        &self.registrable
    }

    pub fn tld(&self) -> &str {
        &self.tld
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.registrable)
    }
}

/// Maps a raw URL string (optionally relative, resolved against `base`) to
/// its canonical form.
pub fn canonicalize(raw: &str, base: Option<&CanonicalUrl>) -> Result<CanonicalUrl, UrlError> {
    let trimmed = raw.trim_matches(|c: char| c.is_ascii_control() || c == ' ');
    if trimmed.is_empty() {
        return Err(UrlError::malformed(raw, "empty input"));
    }
    let parsed = match Url::parse(trimmed) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => {
            let base = base.ok_or_else(|| UrlError::malformed(raw, "relative url without base"))?;
            base.to_url()
                .join(trimmed)
                .map_err(|e| UrlError::malformed(raw, e))?
        }
        Err(e) => return Err(UrlError::malformed(raw, e)),
    };

    let scheme = match parsed.scheme() {
        "http" => Scheme::Http,
        "https" => Scheme::Https,
        other => {
            return Err(UrlError::UnsupportedScheme {
                scheme: other.to_string(),
            })
        }
    };

    let host = parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| UrlError::malformed(raw, "missing host"))?;
    let host = host.to_ascii_lowercase();
    let host = host.strip_suffix('.').unwrap_or(&host).to_string();
    if host.is_empty() {
        return Err(UrlError::malformed(raw, "missing host"));
    }

    // `Url::port()` is already None for the scheme default, but guard against
    // inputs like an explicit `:80` surviving through a join.
    let port = parsed.port().filter(|p| *p != scheme.default_port());

    let path = normalize_percent(parsed.path());
    let path = if path.is_empty() { "/".to_string() } else { path };
    let query = match parsed.query() {
        None | Some("") => None,
        Some(q) => Some(normalize_percent(q)),
    };

    Ok(CanonicalUrl {
        scheme,
        host,
        port,
        path,
        query,
    })
}

/// The final dot-separated label of the host: `http://www.lemonde.fr/x`
/// yields `fr`. Single-label semantics only; no public-suffix awareness.
pub fn url_top(url: &CanonicalUrl) -> &str {
    url.host().rsplit('.').next().unwrap_or(url.host())
}

/// Text normalization applied before any keyword match: NFKD decomposition,
/// combining marks stripped, lowercased, runs of whitespace collapsed to
/// single spaces.
pub fn normalize_text(s: &str) -> String {
    let stripped: String = s.nfkd().filter(|c| !is_combining_mark(*c)).collect();
    let lowered = stripped.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

/// Decodes percent-escapes of unreserved bytes and uppercases the hex digits
/// of the escapes that stay. Invalid escape sequences pass through untouched.
fn normalize_percent(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '%' {
            let rest = &s[i + 1..];
            let mut hex = rest.chars().take(2);
            if let (Some(h), Some(l)) = (hex.next(), hex.next()) {
                if h.is_ascii_hexdigit() && l.is_ascii_hexdigit() {
                    let byte = (h.to_digit(16).unwrap() * 16 + l.to_digit(16).unwrap()) as u8;
                    if is_unreserved(byte) {
                        out.push(byte as char);
                    } else {
                        out.push('%');
                        out.push(h.to_ascii_uppercase());
                        out.push(l.to_ascii_uppercase());
                    }
                    chars.next();
                    chars.next();
                    continue;
                }
            }
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn canon(s: &str) -> CanonicalUrl {
        CanonicalUrl::parse(s).unwrap()
    }

    #[test]
    fn strips_fragment_case_and_default_port() {
        assert_eq!(
            canon("HTTP://Example.FR:80/a/../b#x").to_string(),
            "http://example.fr/b"
        );
    }

    #[test]
    fn resolves_relative_against_base() {
        let base = canon("http://site.fr/dir/page1");
        let u = canonicalize("/page2", Some(&base)).unwrap();
        assert_eq!(u.to_string(), "http://site.fr/page2");
        let v = canonicalize("page3", Some(&base)).unwrap();
        assert_eq!(v.to_string(), "http://site.fr/dir/page3");
    }

    #[test]
    fn rejects_unsupported_schemes() {
        assert!(matches!(
            CanonicalUrl::parse("javascript:void(0)"),
            Err(UrlError::UnsupportedScheme { .. })
        ));
        assert!(matches!(
            CanonicalUrl::parse("mailto:a@b.fr"),
            Err(UrlError::UnsupportedScheme { .. })
        ));
    }

    #[test]
    fn rejects_garbage_and_relative_without_base() {
        assert!(matches!(
            CanonicalUrl::parse(""),
            Err(UrlError::Malformed { .. })
        ));
        assert!(matches!(
            CanonicalUrl::parse("/relative/only"),
            Err(UrlError::Malformed { .. })
        ));
        assert!(matches!(
            CanonicalUrl::parse("http://"),
            Err(UrlError::Malformed { .. })
        ));
    }

    #[test]
    fn keeps_non_default_ports_and_queries() {
        let u = canon("http://site.fr:8080/p?b=2&a=1");
        assert_eq!(u.port(), Some(8080));
        assert_eq!(u.query(), Some("b=2&a=1"));
        assert_eq!(u.to_string(), "http://site.fr:8080/p?b=2&a=1");
        // https on port 80 is not a default and must survive
        assert_eq!(
            canon("https://site.fr:80/p").to_string(),
            "https://site.fr:80/p"
        );
    }

    #[test]
    fn keeps_trailing_slash_distinct() {
        assert_ne!(canon("http://a.fr/x").to_string(), canon("http://a.fr/x/").to_string());
    }

    #[test]
    fn empty_path_becomes_root() {
        assert_eq!(canon("http://a.fr").to_string(), "http://a.fr/");
        assert_eq!(canon("http://a.fr").to_string(), canon("HTTP://A.FR/").to_string());
    }

    #[test]
    fn percent_normalization_decodes_unreserved_only() {
        // %41 = 'A' (unreserved, decoded); %2F = '/' (reserved, kept, uppercased)
        let u = canon("http://a.fr/%41b%2fc");
        assert_eq!(u.path(), "/Ab%2Fc");
        // invalid escape passes through
        assert_eq!(canon("http://a.fr/%zz").path(), "/%zz");
    }

    #[test]
    fn strips_userinfo_and_trailing_host_dot() {
        assert_eq!(
            canon("http://user:pw@site.fr./x").to_string(),
            "http://site.fr/x"
        );
    }

    #[test]
    fn punycodes_unicode_hosts() {
        let u = canon("http://élection.fr/");
        assert_eq!(u.host(), "xn--lection-9xa.fr");
    }

    #[test]
    fn url_top_returns_last_label() {
        assert_eq!(url_top(&canon("http://www.lemonde.fr/politique")), "fr");
        assert_eq!(url_top(&canon("http://example.com/")), "com");
        assert_eq!(url_top(&canon("http://a.co.uk/")), "uk");
    }

    #[test]
    fn domain_is_last_two_labels() {
        let d = canon("http://www.lemonde.fr/x").domain();
        assert_eq!(d.registrable(), "lemonde.fr");
        assert_eq!(d.tld(), "fr");
        let single = DomainName::from_host("localhost");
        assert_eq!(single.registrable(), "localhost");
        assert_eq!(single.tld(), "localhost");
    }

    #[test]
    fn normalize_text_examples() {
        assert_eq!(
            normalize_text("Élection Présidentielle"),
            "election presidentielle"
        );
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("ABC  \t def"), "abc def");
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(raw in "[a-zA-Z0-9:/?#%.~_@!$&'()*+,;=-]{0,80}") {
            if let Ok(once) = canonicalize(&format!("http://host.fr/{raw}"), None) {
                let twice = canonicalize(&once.to_string(), None).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn fragment_case_and_default_port_collapse(path in "[a-z0-9/._-]{0,40}", frag in "[a-z0-9]{0,10}") {
            let plain = canonicalize(&format!("http://site.fr:80/{path}"), None);
            let noisy = canonicalize(&format!("HTTP://SITE.FR/{path}#{frag}"), None);
            prop_assert_eq!(plain.unwrap(), noisy.unwrap());
        }

        #[test]
        fn normalize_text_is_idempotent_and_clean(s in "\\PC{0,120}") {
            let once = normalize_text(&s);
            prop_assert_eq!(&normalize_text(&once), &once);
            // lowercasing is a fixpoint (some symbols are uppercase with no mapping)
            prop_assert_eq!(&once.to_lowercase(), &once);
            prop_assert!(!once.chars().any(is_combining_mark));
            prop_assert!(!once.contains("  "));
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' '));
        }
    }
}
