//! Flat `key = value` text used for configs and checkpoint metadata.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Duplicate keys are rejected.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

pub fn render(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|s| parse_value(key, s.trim())).collect()
}

pub fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = "# comment\nb = 2\n\na=x y  # trailing\n";
        let m = parse(text).unwrap();
        assert_eq!(m["a"], "x y");
        assert_eq!(parse(&render(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("novalue").is_err());
        assert!(parse("a=1\na=2").is_err());
        assert!(parse("=1").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("c", "1, 16,32").unwrap(), vec![1, 16, 32]);
        assert!(parse_list::<usize>("c", "1,x").is_err());
    }
}
