//! `key=value` text format shared by config files and checkpoint manifests.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored;
//! whitespace around keys and values is trimmed. Later duplicates win.

use std::fmt::Write as _;

/// Parses `key=value` text into ordered entries.
/// The error names the offending 1-based line.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got {line:?}", n + 1));
        };
        let k = k.trim();
        if k.is_empty() || k.chars().any(char::is_whitespace) {
            return Err(format!("line {}: invalid key {k:?}", n + 1));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<'a>(entries: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

/// Structs whose fields are addressable by name from `key=value` text.
pub trait KvFields {
    fn set_field(&mut self, key: &str, value: &str) -> Result<(), String>;
    fn fields(&self) -> Vec<(&'static str, String)>;
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

macro_rules! impl_kv_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::kv::KvFields for $ty {
            fn set_field(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::kv::parse_value(key, value)?;
                        Ok(())
                    })*
                    _ => Err(format!("unknown key {key:?}")),
                }
            }

            fn fields(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }
        }
    };
}
pub(crate) use impl_kv_fields;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_trimming() {
        let text = "# header\n\n a = 1 \nb=two words\n";
        assert_eq!(
            parse(text).unwrap(),
            vec![("a".into(), "1".into()), ("b".into(), "two words".into())]
        );
    }

    #[test]
    fn reports_line_of_malformed_entry() {
        let err = parse("a=1\nnot a pair\n").unwrap_err();
        assert!(err.starts_with("line 2"), "{err}");
        assert!(parse("bad key=1").is_err());
    }

    #[test]
    fn render_then_parse_round_trips() {
        let entries = vec![("x", "0.1".to_string()), ("y", "5".to_string())];
        let back = parse(&render(entries.clone())).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], ("x".to_string(), "0.1".to_string()));
    }
}
