//! Plain-text `key=value` configuration files. Flags always take precedence;
//! the file only fills in settings the command line left unset.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Parsed configuration file: a flat key → value map.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

/// Keys a configuration file may set (the long flag names).
const KNOWN_KEYS: &[&str] = &[
    "problem",
    "damping",
    "K",
    "k",
    "tolp",
    "beta",
    "iters",
    "target-error",
    "out",
    "breakdown",
    "mesh",
    "jobs",
    "ref-value",
    "step",
    "resolved-step",
];

impl FileConfig {
    /// Loads and validates a configuration file. Lines are `key=value`;
    /// blank lines and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                ));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(format!(
                    "{}:{}: unknown configuration key {key:?} (known: {})",
                    path.display(),
                    lineno + 1,
                    KNOWN_KEYS.join(", ")
                ));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(format!(
                    "{}:{}: duplicate configuration key {key:?}",
                    path.display(),
                    lineno + 1
                ));
            }
        }
        Ok(Self { entries })
    }

    /// Resolves a setting: the flag value if given, else the file value
    /// parsed to the target type, else `None`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, String> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key {key}={raw:?} does not parse")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_and_resolves_with_flag_precedence() {
        let f = write_temp("# comment\nproblem = osc2\nk=0.05\n\nbeta=1.5\n");
        let cfg = FileConfig::load(f.path()).unwrap();
        // Flag wins.
        assert_eq!(cfg.resolve(Some(0.1f64), "k").unwrap(), Some(0.1));
        // File fills in.
        assert_eq!(cfg.resolve::<f64>(None, "k").unwrap(), Some(0.05));
        assert_eq!(cfg.resolve::<String>(None, "problem").unwrap().as_deref(), Some("osc2"));
        // Unset everywhere.
        assert_eq!(cfg.resolve::<f64>(None, "tolp").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let unknown = write_temp("frobnicate=1\n");
        assert!(FileConfig::load(unknown.path()).unwrap_err().contains("unknown configuration key"));
        let malformed = write_temp("just-a-word\n");
        assert!(FileConfig::load(malformed.path()).unwrap_err().contains("expected key=value"));
        let duplicate = write_temp("k=0.1\nk=0.2\n");
        assert!(FileConfig::load(duplicate.path()).unwrap_err().contains("duplicate"));
    }

    #[test]
    fn bad_value_types_are_reported() {
        let f = write_temp("k=fast\n");
        let cfg = FileConfig::load(f.path()).unwrap();
        assert!(cfg.resolve::<f64>(None, "k").unwrap_err().contains("does not parse"));
    }
}
