//! Pieces of the command-line surface that are useful outside the binary:
//! run manifests, the `key=value` config file and JSON output with 17
//! significant digits.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::ops::format_sig17;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: key '{key}' given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("reading config {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Parsed `key=value` file. Blank lines and lines starting with `#` are
/// skipped; whitespace around keys and values is trimmed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: n + 1, text: raw.to_string() });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: n + 1, text: raw.to_string() });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: n + 1, key: key.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

/// Resolves settings with precedence flag > config file > default and
/// records every resolved value for the manifest.
#[derive(Debug, Default)]
pub struct Resolver {
    file: ConfigFile,
    resolved: BTreeMap<String, serde_json::Value>,
}

impl Resolver {
    pub fn new(file: ConfigFile) -> Self {
        Self { file, resolved: BTreeMap::new() }
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, ConfigError>
    where
        T: std::str::FromStr + Serialize,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(text) => parse_value(key, text)?,
                None => default,
            },
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`Resolver::value`] for settings without a default.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr + Serialize,
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(key).map(|text| parse_value(key, text)).transpose()?,
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Records a value derived from other settings.
    pub fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.resolved.insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    pub fn resolved(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.resolved
    }
}

fn parse_value<T>(key: &str, text: &str) -> Result<T, ConfigError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.parse().map_err(|e: T::Err| ConfigError::Value { key: key.to_string(), value: text.to_string(), reason: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub artifact: String,
    pub config_schema: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self { artifact: ARTIFACT_VERSION.to_string(), config_schema: CONFIG_SCHEMA_VERSION }
    }
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, serde_json::Value>,
    pub input_equation: Option<String>,
    pub seed: Option<u64>,
    pub versions: Versions,
}

impl RunManifest {
    pub fn new(command: &str, resolver: &Resolver, input_equation: Option<&str>, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config: resolver.resolved().clone(),
            input_equation: input_equation.map(str::to_string),
            seed,
            versions: Versions::default(),
        }
    }

    /// Writes the manifest next to `output` as `<output>.manifest.json`.
    pub fn write_beside(&self, output: &Path) -> io::Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        let mut f = io::BufWriter::new(std::fs::File::create(name)?);
        write_json(&mut f, self)?;
        f.flush()
    }
}

/// A JSON document made of a manifest and a payload whose fields sit beside it.
#[derive(Debug, Clone, Serialize)]
pub struct WithManifest<'a, T: Serialize> {
    pub manifest: &'a RunManifest,
    #[serde(flatten)]
    pub body: &'a T,
}

/// Pretty JSON whose floats carry 17 significant digits.
pub struct Sig17Formatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for Sig17Formatter<'_> {
    fn default() -> Self {
        Self { inner: PrettyFormatter::with_indent(b"  ") }
    }
}

impl Formatter for Sig17Formatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_sig17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes `value` with [`Sig17Formatter`] and a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> io::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut w, Sig17Formatter::default());
    value.serialize(&mut ser).map_err(io::Error::other)?;
    w.write_all(b"\n")
}

/// One JSON value per line, floats at 17 significant digits.
pub fn write_json_line<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> io::Result<()> {
    struct Compact;
    impl Formatter for Compact {
        fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
            w.write_all(format_sig17(value).as_bytes())
        }
    }
    let mut ser = serde_json::Serializer::with_formatter(&mut w, Compact);
    value.serialize(&mut ser).map_err(io::Error::other)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let cfg = ConfigFile::parse("# run settings\n\nepsilon = 0.05\nseed=7\n").unwrap();
        assert_eq!(cfg.get("epsilon"), Some("0.05"));
        assert_eq!(cfg.get("seed"), Some("7"));
        assert!(matches!(ConfigFile::parse("seed 7"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ConfigFile::parse("a=1\na=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        assert!(matches!(cfg.check_keys(&["epsilon"]), Err(ConfigError::UnknownKey(k)) if k == "seed"));
    }

    #[test]
    fn precedence_flag_file_default() {
        let mut r = Resolver::new(ConfigFile::parse("epsilon=0.05\nseed=7").unwrap());
        assert_eq!(r.value("epsilon", Some(0.2), 0.1).unwrap(), 0.2);
        assert_eq!(r.value("seed", None, 0u64).unwrap(), 7);
        assert_eq!(r.value("p", None, 0.9).unwrap(), 0.9);
        assert_eq!(r.optional::<u32>("max-cutoff", None).unwrap(), None);
        assert_eq!(r.resolved().len(), 4);
        assert_eq!(r.resolved()["seed"], serde_json::json!(7));
        let mut bad = Resolver::new(ConfigFile::parse("seed=x").unwrap());
        assert!(matches!(bad.value("seed", None, 0u64), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let mut out = Vec::new();
        write_json(&mut out, &serde_json::json!({"x": 0.1, "n": 3, "z": 0.0, "nan": f64::NAN})).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("\"x\": 1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"n\": 3"));
        assert!(text.contains("\"nan\": null"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        let mut line = Vec::new();
        write_json_line(&mut line, &[0.5f64, 2.0]).unwrap();
        assert_eq!(String::from_utf8(line).unwrap(), "[5.0000000000000000e-1,2.0000000000000000e0]\n");
    }
}
