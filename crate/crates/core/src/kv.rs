//! Sectioned `key = value` text format shared by weight files and fitted
//! baseline models.
//!
//! ```text
//! # comment
//! [section.name]
//! key = value
//! list = 1.0 2.0 3.0
//! ```
//!
//! Keys are unique within a section; values run to the end of the line.

use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// Stores floats with 17 significant digits, which round-trips `f64`.
    pub fn set_floats(&mut self, key: &str, values: &[f64]) {
        let mut s = String::with_capacity(values.len() * 24);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{v:.16e}").expect("writing to a String");
        }
        self.set(key, s);
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let parts: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.set(key, parts.join(" "));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            section: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| self.error(format!("missing key `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.trim()
            .parse()
            .map_err(|_| self.error(format!("cannot parse `{key}` from `{raw}`")))
    }

    pub fn parse_hex(&self, key: &str) -> Result<u64> {
        let raw = self.require(key)?;
        u64::from_str_radix(raw.trim(), 16)
            .map_err(|_| self.error(format!("`{key}` is not hex: `{raw}`")))
    }

    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .enumerate()
            .map(|(i, tok)| {
                tok.parse()
                    .map_err(|_| self.error(format!("`{key}` entry {i}: cannot parse `{tok}`")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Parse {
                section: name.to_string(),
                message: "section missing".into(),
            })
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    pub fn parse(text: &str) -> Result<Document> {
        let mut doc = Document::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    section: rest.to_string(),
                    message: format!("line {}: unterminated section header", lineno + 1),
                })?;
                if doc.has_section(name) {
                    return Err(Error::Parse {
                        section: name.to_string(),
                        message: "duplicate section".into(),
                    });
                }
                doc.push(Section::new(name.trim()));
                continue;
            }
            let current = doc.sections.last_mut().ok_or_else(|| Error::Parse {
                section: String::new(),
                message: format!("line {}: entry before any section header", lineno + 1),
            })?;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                current.error(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if current.get(key).is_some() {
                return Err(current.error(format!("duplicate key `{key}`")));
            }
            current
                .entries
                .push((key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "[{}]", s.name)?;
            for (k, v) in &s.entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_floats_exactly() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE];
        let mut s = Section::new("layer.0");
        s.set("kind", "dense");
        s.set_floats("weight", &vals);
        let mut doc = Document::new();
        doc.push(s);
        let text = doc.to_string();
        let back = Document::parse(&text).unwrap();
        let got: Vec<f64> = back.section("layer.0").unwrap().parse_list("weight").unwrap();
        assert_eq!(got, vals);
    }

    #[test]
    fn errors_name_the_section() {
        let err = Document::parse("[a]\nx = 1\n[b]\nnot an entry\n").unwrap_err();
        match err {
            Error::Parse { section, .. } => assert_eq!(section, "b"),
            e => panic!("unexpected {e}"),
        }
        let doc = Document::parse("[a]\nx = 1.5\n").unwrap();
        let err = doc.section("a").unwrap().parse::<u32>("x").unwrap_err();
        assert!(err.to_string().contains("[a]"));
        assert!(Document::parse("x = 1").is_err());
        assert!(Document::parse("[a]\nx=1\nx=2").is_err());
    }
}
