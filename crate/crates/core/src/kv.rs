//! Line-oriented `key = value` text with `[section]` headers.
//!
//! Used for experiment configs, the configuration block embedded in
//! checkpoints, and training-state headers. `#` starts a comment line.
//! Keys are unique per section; the printer emits sections and keys in
//! insertion order, so printing a parsed document is stable.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?;
                current = name.trim().to_string();
                doc.section_mut(&current);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if doc.get(&current, key).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{}`", lineno + 1, key)));
            }
            doc.set(&current, key, value.trim());
        }
        Ok(doc)
    }

    fn section_mut(&mut self, section: &str) -> &mut Vec<(String, String)> {
        let pos = match self.sections.iter().position(|(s, _)| s == section) {
            Some(p) => p,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        &mut self.sections[pos].1
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        let value = value.to_string();
        let entries = self.section_mut(section);
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, e)| e.iter().find(|(k, _)| k == key))
            .map(|(_, v)| v.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(s, _)| s == section)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(s, _)| s.as_str())
    }

    pub fn keys<'a>(&'a self, section: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.sections
            .iter()
            .filter(move |(s, _)| s == section)
            .flat_map(|(_, e)| e.iter().map(|(k, _)| k.as_str()))
    }

    /// Typed lookup; `Ok(None)` when absent.
    pub fn parse_opt<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {raw:?}"))),
        }
    }

    /// Typed lookup falling back to `default`.
    pub fn parse_or<V: FromStr>(&self, section: &str, key: &str, default: V) -> Result<V> {
        Ok(self.parse_opt(section, key)?.unwrap_or(default))
    }

    /// Fails on keys in `section` not listed in `known`.
    pub fn reject_unknown(&self, section: &str, known: &[&str]) -> Result<()> {
        match self.keys(section).find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("[{section}] unknown key `{k}`"))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (section, entries)) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            if !section.is_empty() {
                out.push_str(&format!("[{section}]\n"));
            }
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
