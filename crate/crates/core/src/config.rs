//! Flat `key=value` configuration text. Blank lines and `#` comments are
//! skipped; later keys override earlier ones.

use std::collections::BTreeMap;

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got `{line}`", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn format_kv(kv: &BTreeMap<String, String>) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let kv = parse_kv("# c\nlr = 0.1\n\nmode=cogt\nlr=0.2\n").unwrap();
        assert_eq!(kv["lr"], "0.2");
        assert_eq!(kv["mode"], "cogt");
        assert_eq!(parse_kv(&format_kv(&kv)).unwrap(), kv);
        assert!(parse_kv("novalue").is_err());
        assert!(parse_kv("=3").is_err());
    }
}
