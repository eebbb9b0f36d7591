//! Exercises the C ABI exactly as a foreign caller would: through the
//! exported extern "C" functions with C strings and out-pointers.

use std::ffi::{CStr, CString};
use std::ptr;

use crawlq_capi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn own(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    crawlq_string_free(p);
    s
}

unsafe fn parse_strategy(text: &str) -> *mut crawlq_strategy {
    let mut out: *mut crawlq_strategy = ptr::null_mut();
    let status = crawlq_strategy_parse(c(text).as_ptr(), &mut out);
    assert_eq!(status, crawlq_status::Ok);
    assert!(!out.is_null());
    out
}

const FIGURE: &str = "tld fr 1\nrule keyword1 2 1\nrule keyword2 1 1\n";

#[test]
fn scoring_through_the_abi_matches_the_reference_vectors() {
    unsafe {
        let strategy = parse_strategy(FIGURE);
        let score_url = |url: &str| {
            let mut score = 0i64;
            let status = crawlq_score_url(strategy, c(url).as_ptr(), &mut score);
            assert_eq!(status, crawlq_status::Ok, "{url}");
            score
        };
        assert_eq!(score_url("http://site.fr/keyword1.html"), 3);
        assert_eq!(score_url("http://site.com/nothing"), 0);
        assert_eq!(score_url("http://site.fr/keyword1-keyword2"), 4);

        let score_link = |context: &str| {
            let mut score = 0i64;
            let status = crawlq_score_link(strategy, c(context).as_ptr(), &mut score);
            assert_eq!(status, crawlq_status::Ok);
            score
        };
        assert_eq!(score_link("read keyword1 and keyword2"), 2);
        assert_eq!(score_link(""), 0);
        assert_eq!(score_link("keyword1 keyword1 keyword1"), 1);
        crawlq_strategy_free(strategy);
    }
}

#[test]
fn canonicalize_url_top_and_normalize_roundtrip() {
    unsafe {
        let mut out: *mut std::ffi::c_char = ptr::null_mut();
        let status = crawlq_canonicalize(
            c("HTTP://Example.FR:80/a/../b#x").as_ptr(),
            ptr::null(),
            &mut out,
        );
        assert_eq!(status, crawlq_status::Ok);
        assert_eq!(own(out), "http://example.fr/b");

        let base = c("http://site.fr/dir/page1");
        let mut out = ptr::null_mut();
        let status = crawlq_canonicalize(c("/page2").as_ptr(), base.as_ptr(), &mut out);
        assert_eq!(status, crawlq_status::Ok);
        assert_eq!(own(out), "http://site.fr/page2");

        let mut out = ptr::null_mut();
        let status = crawlq_url_top(c("http://www.lemonde.fr/politique").as_ptr(), &mut out);
        assert_eq!(status, crawlq_status::Ok);
        assert_eq!(own(out), "fr");

        let mut out = ptr::null_mut();
        let status =
            crawlq_normalize_text(c("Élection  Présidentielle").as_ptr(), &mut out);
        assert_eq!(status, crawlq_status::Ok);
        assert_eq!(own(out), "election presidentielle");
    }
}

#[test]
fn error_codes_cover_the_failure_modes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            crawlq_canonicalize(c("javascript:void(0)").as_ptr(), ptr::null(), &mut out),
            crawlq_status::UnsupportedScheme
        );
        assert_eq!(
            crawlq_canonicalize(c("/relative/without/base").as_ptr(), ptr::null(), &mut out),
            crawlq_status::MalformedUrl
        );

        let mut strategy_out: *mut crawlq_strategy = ptr::null_mut();
        assert_eq!(
            crawlq_strategy_parse(c("rule broken -2 0").as_ptr(), &mut strategy_out),
            crawlq_status::InvalidStrategy
        );
        assert!(strategy_out.is_null());

        // invalid UTF-8 in an argument
        let bad = [0x66u8, 0xFF, 0x00];
        let mut out = ptr::null_mut();
        assert_eq!(
            crawlq_canonicalize(bad.as_ptr() as *const _, ptr::null(), &mut out),
            crawlq_status::InvalidUtf8
        );
    }
}

#[test]
fn generated_header_declares_the_full_surface() {
    let header = include_str!("../include/crawlq.h");
    for declaration in [
        "crawlq_status",
        "crawlq_strategy",
        "crawlq_strategy_parse",
        "crawlq_strategy_free",
        "crawlq_score_url",
        "crawlq_score_link",
        "crawlq_canonicalize",
        "crawlq_url_top",
        "crawlq_normalize_text",
        "crawlq_string_free",
        "crawlq_version",
    ] {
        assert!(header.contains(declaration), "missing {declaration}");
    }
    assert!(header.contains("CRAWLQ_H"));
}
