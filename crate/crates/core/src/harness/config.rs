//! Flat `key = value` configuration text.

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may not repeat.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::invalid(format!("line {}: duplicate key {k:?}", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_comments_and_errors() {
        let p = parse_pairs("# run\nseed = 7\n\n lr=1e-4 \nout = a = b\n").unwrap();
        assert_eq!(p, vec![("seed".into(), "7".into()), ("lr".into(), "1e-4".into()), ("out".into(), "a = b".into())]);
        assert!(parse_pairs("seed 7").is_err());
        assert!(parse_pairs("= 7").is_err());
        assert!(parse_pairs("a = 1\na = 2").is_err());
    }
}
