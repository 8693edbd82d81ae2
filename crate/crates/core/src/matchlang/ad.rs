//! Attribute ads and their line-oriented text form.
//!
//! ```text
//! [slot]
//! name = "glidein-1@site-ce"
//! cpus = 8
//! requirements = TARGET.requestcpus <= MY.cpus
//! ```
//!
//! Blank lines and lines starting with `#` are ignored when reading. Writing
//! emits one `name = expression` line per attribute in insertion order, using
//! the canonical expression form, so `write_ads(parse_ads(t)) == t` for any
//! text that `write_ads` produced.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use thiserror::Error;

use super::ast::Expr;
use super::parser::{parse, ParseError};
use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AdKind {
    Job,
    Slot,
    Entry,
    Cache,
    Other,
}

impl AdKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdKind::Job => "job",
            AdKind::Slot => "slot",
            AdKind::Entry => "entry",
            AdKind::Cache => "cache",
            AdKind::Other => "other",
        }
    }
}

impl fmt::Display for AdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdKind {
    type Err = AdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "job" => Ok(AdKind::Job),
            "slot" => Ok(AdKind::Slot),
            "entry" => Ok(AdKind::Entry),
            "cache" => Ok(AdKind::Cache),
            "other" => Ok(AdKind::Other),
            _ => Err(AdError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdError {
    #[error("unknown ad kind '{0}'")]
    UnknownKind(String),
    #[error("duplicate attribute '{0}'")]
    DuplicateAttribute(String),
    #[error("{kind} ad is missing required attribute 'requirements'")]
    MissingRequirements { kind: AdKind },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: in attribute '{attr}': {source}")]
    Expression {
        line: usize,
        attr: String,
        #[source]
        source: ParseError,
    },
}

/// An attribute map describing a job, slot, entry point or cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Ad {
    kind: AdKind,
    attrs: IndexMap<String, Expr>,
}

impl Ad {
    pub fn new(kind: AdKind) -> Ad {
        Ad {
            kind,
            attrs: IndexMap::new(),
        }
    }

    pub fn kind(&self) -> AdKind {
        self.kind
    }

    /// Sets (or replaces) an attribute; the name is case-folded.
    pub fn set(&mut self, name: &str, expr: Expr) {
        self.attrs.insert(name.to_ascii_lowercase(), expr);
    }

    pub fn with(mut self, name: &str, expr: Expr) -> Ad {
        self.set(name, expr);
        self
    }

    pub fn with_value(self, name: &str, value: impl Into<Value>) -> Ad {
        self.with(name, Expr::Literal(value.into()))
    }

    /// Parses `text` and sets it as the attribute's expression.
    pub fn with_expr(self, name: &str, text: &str) -> Result<Ad, ParseError> {
        Ok(self.with(name, parse(text)?))
    }

    /// Inserts a new attribute, rejecting a name already present after case folding.
    pub fn insert_new(&mut self, name: &str, expr: Expr) -> Result<(), AdError> {
        let key = name.to_ascii_lowercase();
        if self.attrs.contains_key(&key) {
            return Err(AdError::DuplicateAttribute(key));
        }
        self.attrs.insert(key, expr);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Expr> {
        self.attrs.shift_remove(&name.to_ascii_lowercase())
    }

    /// Looks up an attribute by (case-insensitive) name.
    ///
    /// `kind` is always resolvable: when not set explicitly it yields the ad's
    /// kind as lowercase text, so constraints like `kind == "slot"` work.
    pub fn get(&self, name: &str) -> Option<&Expr> {
        if name.bytes().any(|b| b.is_ascii_uppercase()) {
            self.attrs.get(&name.to_ascii_lowercase())
        } else {
            self.attrs.get(name)
        }
    }

    pub(crate) fn lookup(&self, lower_name: &str) -> Option<Lookup<'_>> {
        match self.attrs.get(lower_name) {
            Some(e) => Some(Lookup::Expr(e)),
            None if lower_name == "kind" => Some(Lookup::Kind(self.kind)),
            None => None,
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.attrs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn requirements(&self) -> Option<&Expr> {
        self.attrs.get("requirements")
    }

    /// The `rank` expression, defaulting to literal 0.
    pub fn rank(&self) -> Expr {
        self.attrs
            .get("rank")
            .cloned()
            .unwrap_or(Expr::Literal(Value::Integer(0)))
    }

    /// The `name` attribute when it is a literal string.
    pub fn name(&self) -> Option<&str> {
        match self.attrs.get("name") {
            Some(Expr::Literal(Value::Text(s))) => Some(s),
            _ => None,
        }
    }

    /// Literal integer attribute, accepting integral reals.
    pub fn int_attr(&self, name: &str) -> Option<i64> {
        match self.get(name)? {
            Expr::Literal(Value::Integer(i)) => Some(*i),
            Expr::Literal(Value::Real(r)) if r.fract() == 0.0 => Some(*r as i64),
            _ => None,
        }
    }

    pub fn real_attr(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            Expr::Literal(v) => v.as_f64(),
            _ => None,
        }
    }

    pub fn text_attr(&self, name: &str) -> Option<&str> {
        match self.get(name)? {
            Expr::Literal(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    /// JOB and SLOT ads must define `requirements`.
    pub fn validate(&self) -> Result<(), AdError> {
        if matches!(self.kind, AdKind::Job | AdKind::Slot) && self.requirements().is_none() {
            return Err(AdError::MissingRequirements { kind: self.kind });
        }
        Ok(())
    }
}

pub(crate) enum Lookup<'a> {
    Expr(&'a Expr),
    Kind(AdKind),
}

impl fmt::Display for Ad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.kind)?;
        for (name, expr) in &self.attrs {
            writeln!(f, "{name} = {expr}")?;
        }
        Ok(())
    }
}

/// Serializes ads; consecutive ads are separated by a blank line.
pub fn write_ads(ads: &[Ad]) -> String {
    let mut out = String::new();
    for (i, ad) in ads.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&ad.to_string());
    }
    out
}

/// Reads zero or more ads from the text form, validating each one.
pub fn parse_ads(text: &str) -> Result<Vec<Ad>, AdError> {
    let mut ads: Vec<Ad> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(kind) = rest.strip_suffix(']') else {
                return Err(AdError::Syntax {
                    line: line_no,
                    message: "unterminated kind header".into(),
                });
            };
            if let Some(prev) = ads.last() {
                prev.validate()?;
            }
            ads.push(Ad::new(kind.trim().parse()?));
            continue;
        }
        let Some(ad) = ads.last_mut() else {
            return Err(AdError::Syntax {
                line: line_no,
                message: "attribute before any [kind] header".into(),
            });
        };
        let Some((name, expr_text)) = line.split_once('=') else {
            return Err(AdError::Syntax {
                line: line_no,
                message: "expected 'name = expression'".into(),
            });
        };
        let name = name.trim();
        let valid_name = name
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid_name {
            return Err(AdError::Syntax {
                line: line_no,
                message: format!("invalid attribute name '{name}'"),
            });
        }
        let expr = parse(expr_text.trim()).map_err(|source| AdError::Expression {
            line: line_no,
            attr: name.to_ascii_lowercase(),
            source,
        })?;
        ad.insert_new(name, expr)?;
    }
    if let Some(last) = ads.last() {
        last.validate()?;
    }
    Ok(ads)
}
