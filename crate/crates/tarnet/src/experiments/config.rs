//! Experiment configuration files: INI-style sections of `key = value`
//! lines, with `#` comments.
//!
//! ```text
//! [grid]
//! ranks = 2,2,2
//! n = 9
//! p = 3
//! ratios = 0.15, 0.25, 0.35
//! replications = 50
//! master_seed = 42
//! estimators = ols, lr, ltr
//!
//! [training]
//! learning_rate = 0.01
//!
//! [output]
//! dir = out
//! id = scaling
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::TrainConfig;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line_no, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(line_no, "empty section name"));
                }
                if sections.contains_key(name) {
                    return Err(Error::parse(line_no, format!("duplicate section [{name}]")));
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(line_no, format!("expected `key = value`, got {line:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::parse(line_no, "empty key"));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| Error::parse(line_no, "key before any [section]"))?;
            let map = sections.get_mut(section).expect("section exists");
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::parse(
                    line_no,
                    format!("duplicate key {key:?} in [{section}]"),
                ));
            }
        }
        Ok(ConfigFile { sections })
    }

    pub fn section<'a>(&'a self, name: &'a str) -> SectionView<'a> {
        SectionView {
            name,
            map: self.sections.get(name),
        }
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    /// Rejects sections other than the allowed ones and, within each allowed
    /// section, keys outside its allowed list.
    pub fn check_known(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for (name, keys) in &self.sections {
            let Some((_, allowed_keys)) = allowed.iter().find(|(s, _)| s == name) else {
                return Err(Error::InvalidArgument(format!(
                    "unknown config section [{name}]"
                )));
            };
            for key in keys.keys() {
                if !allowed_keys.contains(&key.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "unknown key {key:?} in [{name}] (allowed: {allowed_keys:?})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub struct SectionView<'a> {
    name: &'a str,
    map: Option<&'a BTreeMap<String, String>>,
}

impl<'a> SectionView<'a> {
    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.map.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidArgument(format!(
                    "[{}] {key} = {v:?} cannot be parsed",
                    self.name
                ))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    out.push(part.parse::<T>().map_err(|_| {
                        Error::InvalidArgument(format!(
                            "[{}] {key}: cannot parse element {part:?}",
                            self.name
                        ))
                    })?);
                }
                if out.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "[{}] {key} is an empty list",
                        self.name
                    )));
                }
                Ok(Some(out))
            }
        }
    }

    /// Rank triples separated by `;`, each a comma-separated `r1,r2,r3`.
    pub fn get_ranks_list(&self, key: &str) -> Result<Option<Vec<(usize, usize, usize)>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for triple in v.split(';') {
                    let triple = triple.trim();
                    if triple.is_empty() {
                        continue;
                    }
                    out.push(parse_ranks(triple).map_err(|e| {
                        Error::InvalidArgument(format!("[{}] {key}: {e}", self.name))
                    })?);
                }
                if out.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "[{}] {key} is an empty list",
                        self.name
                    )));
                }
                Ok(Some(out))
            }
        }
    }
}

/// Parses `r1,r2,r3`.
pub fn parse_ranks(text: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(|s| s.trim()).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected three comma-separated ranks, got {text:?}"
        )));
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("invalid rank {s:?}")))
    };
    Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

pub const TRAINING_KEYS: &[&str] = &[
    "learning_rate",
    "momentum",
    "loss_drop_tolerance",
    "max_epochs",
    "init_scale",
];

/// Reads the `[training]` section over the given defaults. The seed is not a
/// key: per-fit seeds derive from the master seed.
pub fn training_from_config(cfg: &ConfigFile, defaults: TrainConfig) -> Result<TrainConfig> {
    let s = cfg.section("training");
    let out = TrainConfig {
        learning_rate: s.get_or("learning_rate", defaults.learning_rate)?,
        momentum: s.get_or("momentum", defaults.momentum)?,
        loss_drop_tolerance: s.get_or("loss_drop_tolerance", defaults.loss_drop_tolerance)?,
        max_epochs: s.get_or("max_epochs", defaults.max_epochs)?,
        init_scale: s.get_or("init_scale", defaults.init_scale)?,
        seed: defaults.seed,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_values() {
        let text = "# comment\n[grid]\nn = 9, 25\nratios = 0.15,0.45\nranks = 2,2,2 ; 3,3,3\n\n[training]\nlearning_rate = 0.02\n";
        let cfg = ConfigFile::parse(text).unwrap();
        let grid = cfg.section("grid");
        assert_eq!(grid.get_list::<usize>("n").unwrap().unwrap(), vec![9, 25]);
        assert_eq!(
            grid.get_ranks_list("ranks").unwrap().unwrap(),
            vec![(2, 2, 2), (3, 3, 3)]
        );
        let tr = training_from_config(&cfg, TrainConfig::default()).unwrap();
        assert_eq!(tr.learning_rate, 0.02);
        assert_eq!(tr.momentum, 0.9);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(ConfigFile::parse("[grid\nn = 1\n").is_err());
        assert!(ConfigFile::parse("n = 1\n").is_err());
        assert!(ConfigFile::parse("[a]\nn\n").is_err());
        assert!(ConfigFile::parse("[a]\nn = 1\nn = 2\n").is_err());
        assert!(ConfigFile::parse("[a]\nk = 1\n[a]\nj = 2\n").is_err());
    }

    #[test]
    fn check_known_flags_typos() {
        let cfg = ConfigFile::parse("[grid]\nreplciations = 3\n").unwrap();
        let err = cfg
            .check_known(&[("grid", &["replications"])])
            .unwrap_err();
        assert!(err.to_string().contains("replciations"));

        let cfg = ConfigFile::parse("[grid]\nx = 1\n[extra]\ny = 2\n").unwrap();
        assert!(cfg.check_known(&[("grid", &["x"])]).is_err());
    }

    #[test]
    fn bad_values_are_reported_with_context() {
        let cfg = ConfigFile::parse("[grid]\nn = nine\n").unwrap();
        let err = cfg.section("grid").get_list::<usize>("n").unwrap_err();
        assert!(err.to_string().contains("nine"));
    }
}
