//! `key=value` text: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{FormatError, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |detail: String| FormatError::Malformed { what: "config", detail };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(bad(format!("line {}: empty key", i + 1)).into());
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(bad(format!("line {}: duplicate key {k:?}", i + 1)).into());
        }
    }
    Ok(out)
}

pub fn format_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let m = parse_kv("# header\n stage = 1\n\nlr=2e-4 # inline\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["stage"], "1");
        assert_eq!(m["lr"], "2e-4");
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("a=1\na=2\n").is_err());
        assert!(parse_kv("=3").is_err());
    }

    #[test]
    fn format_round_trips() {
        let text = format_kv([("a", "1".to_string()), ("b", "x y".to_string())]);
        assert_eq!(text, "a=1\nb=x y\n");
        assert_eq!(parse_kv(&text).unwrap()["b"], "x y");
    }
}
