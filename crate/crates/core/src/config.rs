//! Plain-text `key = value` files with `#` comments.
//!
//! Keys may repeat; consumers decide whether a repeat accumulates or
//! overrides. Values keep their inner whitespace.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// One-based line number, for error messages.
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and text after `#` are ignored.
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Input(format!("line {}: expected `key = value`, found {line:?}", n + 1)));
        };
        let key = k.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(Error::Input(format!("line {}: empty key", n + 1)));
        }
        out.push(Entry {
            key,
            value: v.trim().to_string(),
            line: n + 1,
        });
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse(&text)
}

/// Splits at commas that are not inside parentheses.
pub fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

/// Parses `name(k=v, k=v)` or a bare `name` into the name and its
/// arguments.
pub fn call(s: &str) -> Result<(String, Vec<(String, String)>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s.to_ascii_lowercase(), Vec::new()));
    };
    if !s.ends_with(')') {
        return Err(Error::Input(format!("unbalanced parentheses in {s:?}")));
    }
    let name = s[..open].trim().to_ascii_lowercase();
    let mut args = Vec::new();
    for a in split_list(&s[open + 1..s.len() - 1]) {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("argument {a:?} in {s:?} is not `key=value`")))?;
        args.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    Ok((name, args))
}

/// Parses `key=value` tokens separated by whitespace.
pub fn tokens(s: &str) -> Result<Vec<(String, String)>> {
    s.split_whitespace()
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_ascii_lowercase(), v.to_string()))
                .ok_or_else(|| Error::Input(format!("expected key=value, found {t:?}")))
        })
        .collect()
}

pub fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Input(format!("invalid value {v:?} for {key}")))
}

pub fn numbers(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| number(key, t))
        .collect()
}

pub fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Input(format!("invalid boolean {v:?} for {key}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let e = parse("# header\n\nn_units = 10 # trailing\nbeta=1, 2\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].key, "n_units");
        assert_eq!(e[0].value, "10");
        assert_eq!(e[0].line, 3);
        assert_eq!(e[1].value, "1, 2");
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(parse("n_units 10").is_err());
    }

    #[test]
    fn lists_respect_parentheses() {
        let l = split_list("fe, abc(trim=1, iterations=2), sbc");
        assert_eq!(l, vec!["fe", "abc(trim=1, iterations=2)", "sbc"]);
        let (name, args) = call(&l[1]).unwrap();
        assert_eq!(name, "abc");
        assert_eq!(args, vec![("trim".into(), "1".into()), ("iterations".into(), "2".into())]);
    }
}
