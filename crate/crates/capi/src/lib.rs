//! C ABI over the crawler's pure kernel: URL canonicalization, text
//! normalization, and the additive keyword scoring functions. This is the
//! surface another language (or a database runtime loading native scoring
//! functions) binds against.
//!
//! Conventions: every function returns a [`crawlq_status`]; results come
//! back through out-pointers. Strategies are opaque handles freed with
//! [`crawlq_strategy_free`]; returned strings are NUL-terminated, owned by
//! the caller, and freed with [`crawlq_string_free`].

#![allow(non_camel_case_types)]

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crawlq::scoring::{score_link, score_url};
use crawlq::urlkit::UrlError;
use crawlq::{canonicalize, normalize_text, url_top, CanonicalUrl, KeywordStrategy};

/// Result of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum crawlq_status {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MalformedUrl = 3,
    UnsupportedScheme = 4,
    InvalidStrategy = 5,
    Internal = 6,
}

/// Opaque focus strategy handle.
pub struct crawlq_strategy(KeywordStrategy);

fn guarded(f: impl FnOnce() -> crawlq_status) -> crawlq_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => crawlq_status::Internal,
    }
}

/// # Safety
/// `s` must be a valid NUL-terminated string or null.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, crawlq_status> {
    if s.is_null() {
        return Err(crawlq_status::NullArgument);
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| crawlq_status::InvalidUtf8)
}

fn write_string(out: *mut *mut c_char, value: String) -> crawlq_status {
    match CString::new(value) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            crawlq_status::Ok
        }
        Err(_) => crawlq_status::Internal,
    }
}

fn url_status(e: &UrlError) -> crawlq_status {
    match e {
        UrlError::Malformed { .. } => crawlq_status::MalformedUrl,
        UrlError::UnsupportedScheme { .. } => crawlq_status::UnsupportedScheme,
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn crawlq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a strategy from its text format (`rule <pattern> <url_w> <link_w>`
/// and `tld <label> <bonus>` lines) into an opaque handle.
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the handle until `crawlq_strategy_free`.
#[no_mangle]
pub unsafe extern "C" fn crawlq_strategy_parse(
    text: *const c_char,
    out: *mut *mut crawlq_strategy,
) -> crawlq_status {
    guarded(|| {
        if out.is_null() {
            return crawlq_status::NullArgument;
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match KeywordStrategy::parse(text) {
            Ok(strategy) => {
                *out = Box::into_raw(Box::new(crawlq_strategy(strategy)));
                crawlq_status::Ok
            }
            Err(_) => crawlq_status::InvalidStrategy,
        }
    })
}

/// # Safety
/// `strategy` must come from `crawlq_strategy_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn crawlq_strategy_free(strategy: *mut crawlq_strategy) {
    if !strategy.is_null() {
        drop(Box::from_raw(strategy));
    }
}

/// Scores a URL string: TLD bonus plus the URL weight of every rule whose
/// pattern occurs in the normalized canonical URL (presence, not count).
///
/// # Safety
/// `strategy` must be a live handle; `url` a valid NUL-terminated string;
/// `out_score` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crawlq_score_url(
    strategy: *const crawlq_strategy,
    url: *const c_char,
    out_score: *mut i64,
) -> crawlq_status {
    guarded(|| {
        if strategy.is_null() || out_score.is_null() {
            return crawlq_status::NullArgument;
        }
        let raw = match read_str(url) {
            Ok(u) => u,
            Err(status) => return status,
        };
        match CanonicalUrl::parse(raw) {
            Ok(canonical) => {
                *out_score = score_url(&canonical, &(*strategy).0);
                crawlq_status::Ok
            }
            Err(e) => url_status(&e),
        }
    })
}

/// Scores the textual context a link was found in.
///
/// # Safety
/// `strategy` must be a live handle; `context` a valid NUL-terminated
/// string; `out_score` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crawlq_score_link(
    strategy: *const crawlq_strategy,
    context: *const c_char,
    out_score: *mut i64,
) -> crawlq_status {
    guarded(|| {
        if strategy.is_null() || out_score.is_null() {
            return crawlq_status::NullArgument;
        }
        let context = match read_str(context) {
            Ok(c) => c,
            Err(status) => return status,
        };
        *out_score = score_link(context, &(*strategy).0);
        crawlq_status::Ok
    })
}

/// Canonicalizes a URL (fragment stripped, case and default ports
/// normalized, dot-segments resolved). `base` may be null; it is required
/// to resolve relative inputs.
///
/// # Safety
/// `url` must be valid; `base` valid or null; `out` a valid pointer. On
/// success `*out` is a NUL-terminated string for `crawlq_string_free`.
#[no_mangle]
pub unsafe extern "C" fn crawlq_canonicalize(
    url: *const c_char,
    base: *const c_char,
    out: *mut *mut c_char,
) -> crawlq_status {
    guarded(|| {
        if out.is_null() {
            return crawlq_status::NullArgument;
        }
        let raw = match read_str(url) {
            Ok(u) => u,
            Err(status) => return status,
        };
        let base_parsed = if base.is_null() {
            None
        } else {
            let base_str = match read_str(base) {
                Ok(b) => b,
                Err(status) => return status,
            };
            match CanonicalUrl::parse(base_str) {
                Ok(b) => Some(b),
                Err(e) => return url_status(&e),
            }
        };
        match canonicalize(raw, base_parsed.as_ref()) {
            Ok(canonical) => write_string(out, canonical.to_string()),
            Err(e) => url_status(&e),
        }
    })
}

/// Returns the final dot-separated label of the host (`fr` for
/// `http://www.lemonde.fr/x`).
///
/// # Safety
/// `url` must be valid; `out` a valid pointer; free the result with
/// `crawlq_string_free`.
#[no_mangle]
pub unsafe extern "C" fn crawlq_url_top(
    url: *const c_char,
    out: *mut *mut c_char,
) -> crawlq_status {
    guarded(|| {
        if out.is_null() {
            return crawlq_status::NullArgument;
        }
        let raw = match read_str(url) {
            Ok(u) => u,
            Err(status) => return status,
        };
        match CanonicalUrl::parse(raw) {
            Ok(canonical) => write_string(out, url_top(&canonical).to_string()),
            Err(e) => url_status(&e),
        }
    })
}

/// NFKD-decomposes, strips combining marks, lowercases and collapses
/// whitespace; the normalization every keyword match runs on.
///
/// # Safety
/// `text` must be valid; `out` a valid pointer; free the result with
/// `crawlq_string_free`.
#[no_mangle]
pub unsafe extern "C" fn crawlq_normalize_text(
    text: *const c_char,
    out: *mut *mut c_char,
) -> crawlq_status {
    guarded(|| {
        if out.is_null() {
            return crawlq_status::NullArgument;
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        write_string(out, normalize_text(text))
    })
}

/// # Safety
/// `s` must be a string returned by this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn crawlq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    unsafe fn own_string(p: *mut c_char) -> String {
        let s = CStr::from_ptr(p).to_str().unwrap().to_string();
        crawlq_string_free(p);
        s
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(crawlq_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_rejected_not_fatal() {
        unsafe {
            let mut out: *mut crawlq_strategy = ptr::null_mut();
            assert_eq!(
                crawlq_strategy_parse(ptr::null(), &mut out),
                crawlq_status::NullArgument
            );
            let mut score = 0i64;
            assert_eq!(
                crawlq_score_url(ptr::null(), c("http://a.fr/").as_ptr(), &mut score),
                crawlq_status::NullArgument
            );
            crawlq_strategy_free(ptr::null_mut());
            crawlq_string_free(ptr::null_mut());
        }
    }
}
