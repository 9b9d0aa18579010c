//! One-line `kind key=value ...` headers shared by the binary artifact files,
//! plus the provenance stamp every artifact carries.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("mvedoe/", env!("CARGO_PKG_VERSION"));

/// Tool version and config hash embedded in artifact headers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub tool: String,
    pub config_hash: String,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Stamp {
            tool: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
        }
    }

    /// `# tool=... config=...` comment line for text artifacts.
    pub fn comment_line(&self) -> String {
        format!("# tool={} config={}", self.tool, self.config_hash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub kind: String,
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: &str) -> Self {
        Header {
            kind: kind.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!value.contains(char::is_whitespace) && !key.contains('='));
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn stamp(mut self, stamp: Option<&Stamp>) -> Self {
        if let Some(s) = stamp {
            self.set("tool", &s.tool);
            self.set("config", &s.config_hash);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format("header", format!("{} header lacks `{key}`", self.kind)))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::format("header", format!("bad value for `{key}`: {raw}")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::format("header", format!("bad list entry for `{key}`: {v}")))
            })
            .collect()
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "{}", self.kind)?;
        for (k, v) in &self.entries {
            write!(out, " {k}={v}")?;
        }
        writeln!(out)
    }

    pub fn read<R: BufRead>(input: &mut R, expected_kind: &str) -> Result<Self> {
        let mut line = String::new();
        input
            .read_line(&mut line)
            .map_err(|e| Error::format("header", e.to_string()))?;
        let mut parts = line.trim_end_matches(['\n', '\r']).split(' ');
        let kind = parts.next().unwrap_or_default();
        if kind != expected_kind {
            return Err(Error::format(
                "header",
                format!("expected `{expected_kind}`, found `{kind}`"),
            ));
        }
        let mut header = Header::new(kind);
        for part in parts.filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::format("header", format!("entry without `=`: {part}")))?;
            header.entries.push((k.to_string(), v.to_string()));
        }
        Ok(header)
    }
}

pub fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
