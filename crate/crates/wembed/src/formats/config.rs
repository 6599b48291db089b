//! Line-oriented `key=value` run configuration. `#` starts a comment;
//! blank lines are ignored. Values are typed on access.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected key=value, got {1:?}")]
    MalformedLine(usize, String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key {key:?}: cannot parse {value:?} as {ty}")]
    BadValue {
        key: String,
        value: String,
        ty: &'static str,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let eq = line
                .find('=')
                .ok_or_else(|| ConfigError::MalformedLine(lineno + 1, raw.to_string()))?;
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(ConfigError::MalformedLine(lineno + 1, raw.to_string()));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
        }
        Ok(Config { values })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, ty: &'static str) -> Result<Option<T>, ConfigError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                ty,
            }),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.typed(key, "real")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.typed(key, "integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.typed(key, "integer")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.typed(key, "bool")
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_types() {
        let cfg = Config::parse(
            "# run settings\nlambda = 0.5\nbatch_size=128\n\nlog_domain = true # stable\n",
        )
        .unwrap();
        assert_eq!(cfg.get_f64("lambda").unwrap(), Some(0.5));
        assert_eq!(cfg.get_usize("batch_size").unwrap(), Some(128));
        assert_eq!(cfg.get_bool("log_domain").unwrap(), Some(true));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn typed_errors() {
        assert!(matches!(
            Config::parse("just words\n"),
            Err(ConfigError::MalformedLine(1, _))
        ));
        assert!(matches!(
            Config::parse("a=1\na=2\n"),
            Err(ConfigError::DuplicateKey(_))
        ));
        let cfg = Config::parse("batch_size=tiny\n").unwrap();
        assert!(matches!(
            cfg.get_usize("batch_size"),
            Err(ConfigError::BadValue { .. })
        ));
    }
}
