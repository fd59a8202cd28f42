//! Flat INI-style configuration: `[section]` headers over typed `key = value`
//! lines, `#` comments. No nesting, no quoting; values are scalars or
//! comma-separated lists, so configs stay diffable.
//!
//! The `[env]` section understands two vector shorthands:
//! `hard_center = ones-scaled:<c>` for `c·(1, ..., 1)`, and
//! `theta`/`upsilon = auto-orthonormal:<seed>` for a seeded random
//! orthonormal pair.

use crate::channel::ChannelSpec;
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use indexmap::IndexMap;

/// A parsed config document: sections of key-value pairs, order preserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDoc {
    sections: IndexMap<String, IndexMap<String, String>>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let mut doc = ConfigDoc::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(format!("line {line_no}"), "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(format!("line {line_no}"), "empty section name"));
                }
                if doc.sections.contains_key(name) {
                    return Err(Error::parse(
                        format!("line {line_no}"),
                        format!("duplicate section `{name}`"),
                    ));
                }
                doc.sections.insert(name.to_string(), IndexMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(format!("line {line_no}"), format!("expected key = value, found `{line}`"))
            })?;
            let section = current.as_ref().ok_or_else(|| {
                Error::parse(format!("line {line_no}"), "key outside any [section]")
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(format!("line {line_no}"), "empty key"));
            }
            let entries = doc.sections.get_mut(section).expect("section exists");
            if entries.contains_key(key) {
                return Err(Error::parse(
                    format!("line {line_no}"),
                    format!("duplicate key `{key}` in [{section}]"),
                ));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&IndexMap<String, String>> {
        self.sections.get(name)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::parse(format!("[{section}]"), format!("missing key `{key}`"))
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.get(section, key)
            .map(|v| parse_f64(section, key, v))
            .transpose()
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.get(section, key)
            .map(|v| {
                v.parse::<u64>().map_err(|e| {
                    Error::parse(format!("[{section}] {key}"), format!("bad integer `{v}`: {e}"))
                })
            })
            .transpose()
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(section, key)
            .map(|v| {
                v.split(',')
                    .map(|item| parse_f64(section, key, item.trim()))
                    .collect()
            })
            .transpose()
    }

    pub fn get_u64_list(&self, section: &str, key: &str) -> Result<Option<Vec<u64>>> {
        self.get(section, key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim().parse::<u64>().map_err(|e| {
                            Error::parse(
                                format!("[{section}] {key}"),
                                format!("bad integer `{item}`: {e}"),
                            )
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn get_str_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

fn parse_f64(section: &str, key: &str, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|e| {
        Error::parse(format!("[{section}] {key}"), format!("bad number `{value}`: {e}"))
    })
}

fn parse_vector(section: &str, key: &str, value: &str, d: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split(',')
        .map(|item| parse_f64(section, key, item.trim()))
        .collect::<Result<_>>()?;
    if v.len() != d {
        return Err(Error::parse(
            format!("[{section}] {key}"),
            format!("expected {d} components, found {}", v.len()),
        ));
    }
    Ok(v)
}

/// Build an environment from an `[env]` section with keys `d`, `alpha`,
/// `hard_center`, `theta`, `upsilon`.
pub fn env_from_config(doc: &ConfigDoc, section: &str) -> Result<EnvironmentSpec> {
    let d = doc.require(section, "d")?.parse::<usize>().map_err(|e| {
        Error::parse(format!("[{section}] d"), format!("bad dimension: {e}"))
    })?;
    let alpha = parse_f64(section, "alpha", doc.require(section, "alpha")?)?;

    let center_raw = doc.require(section, "hard_center")?;
    let hard_center = if let Some(scale) = center_raw.strip_prefix("ones-scaled:") {
        let c = parse_f64(section, "hard_center", scale.trim())?;
        vec![c; d]
    } else {
        parse_vector(section, "hard_center", center_raw, d)?
    };

    let theta_raw = doc.require(section, "theta")?;
    let upsilon_raw = doc.require(section, "upsilon")?;
    let auto_seed = |raw: &str, key: &str| -> Result<Option<u64>> {
        match raw.strip_prefix("auto-orthonormal:") {
            Some(seed) => seed
                .trim()
                .parse::<u64>()
                .map(Some)
                .map_err(|e| Error::parse(format!("[{section}] {key}"), format!("bad seed: {e}"))),
            None => Ok(None),
        }
    };

    let (theta, upsilon) = match (auto_seed(theta_raw, "theta")?, auto_seed(upsilon_raw, "upsilon")?) {
        (Some(s1), Some(s2)) => {
            if s1 != s2 {
                return Err(Error::parse(
                    format!("[{section}]"),
                    "auto-orthonormal seeds for theta and upsilon must match",
                ));
            }
            EnvironmentSpec::auto_orthonormal(d, s1)?
        }
        (None, None) => (
            parse_vector(section, "theta", theta_raw, d)?,
            parse_vector(section, "upsilon", upsilon_raw, d)?,
        ),
        _ => {
            return Err(Error::parse(
                format!("[{section}]"),
                "theta and upsilon must both be explicit or both auto-orthonormal",
            ))
        }
    };

    EnvironmentSpec::new(alpha, hard_center, theta, upsilon)
}

/// Build a channel from a `[channel]` section: `epsilon`, plus optional
/// `epsilon_hetero = linear:<lo>,<hi>`.
pub fn channel_from_config(
    doc: &ConfigDoc,
    section: &str,
    env: &EnvironmentSpec,
) -> Result<ChannelSpec> {
    match doc.get(section, "epsilon_hetero") {
        Some(raw) => {
            let spec = raw.strip_prefix("linear:").ok_or_else(|| {
                Error::parse(
                    format!("[{section}] epsilon_hetero"),
                    format!("expected linear:<lo>,<hi>, found `{raw}`"),
                )
            })?;
            let parts: Vec<f64> = spec
                .split(',')
                .map(|p| parse_f64(section, "epsilon_hetero", p.trim()))
                .collect::<Result<_>>()?;
            if parts.len() != 2 {
                return Err(Error::parse(
                    format!("[{section}] epsilon_hetero"),
                    "expected exactly two bounds",
                ));
            }
            ChannelSpec::linear_quantile(env, parts[0], parts[1])
        }
        None => {
            let eps = parse_f64(section, "epsilon", doc.require(section, "epsilon")?)?;
            ChannelSpec::constant(eps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SAMPLE: &str = "\
# experiment setup
[env]
d = 4
alpha = 0.1            # hard mass
hard_center = ones-scaled:0.5
theta = auto-orthonormal:7
upsilon = auto-orthonormal:7

[channel]
epsilon = 0.1
";

    #[test]
    fn parses_sections_and_comments() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        assert_eq!(doc.get("env", "d"), Some("4"));
        assert_eq!(doc.get("env", "alpha"), Some("0.1"));
        assert_eq!(doc.get("channel", "epsilon"), Some("0.1"));
        assert!(doc.get("channel", "missing").is_none());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigDoc::parse("[env\nd = 4").is_err());
        assert!(ConfigDoc::parse("key = 1").is_err()); // outside a section
        assert!(ConfigDoc::parse("[a]\nnot a pair").is_err());
        assert!(ConfigDoc::parse("[a]\nx = 1\nx = 2").is_err());
        assert!(ConfigDoc::parse("[a]\n[a]").is_err());
        // errors carry line locations
        let err = ConfigDoc::parse("[a]\nbroken line").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn env_round_trips_through_config() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        let env = env_from_config(&doc, "env").unwrap();
        assert_eq!(env.d(), 4);
        assert_abs_diff_eq!(env.alpha(), 0.1);
        assert_eq!(env.hard_center(), &[0.5, 0.5, 0.5, 0.5]);
        // auto pair is the seeded pair
        let (theta, upsilon) = EnvironmentSpec::auto_orthonormal(4, 7).unwrap();
        assert_eq!(env.theta(), theta.as_slice());
        assert_eq!(env.upsilon(), upsilon.as_slice());
        // identical parse gives an identical environment
        let env2 = env_from_config(&ConfigDoc::parse(SAMPLE).unwrap(), "env").unwrap();
        assert_eq!(env, env2);
    }

    #[test]
    fn env_with_explicit_vectors() {
        let text = "\
[env]
d = 2
alpha = 0.2
hard_center = 1.5,0.0
theta = 0,1
upsilon = 1,0
";
        let env = env_from_config(&ConfigDoc::parse(text).unwrap(), "env").unwrap();
        assert_eq!(env.theta(), &[0.0, 1.0]);
        assert_eq!(env.upsilon(), &[1.0, 0.0]);
        assert_abs_diff_eq!(env.upsilon_center(), 1.5);
    }

    #[test]
    fn env_rejects_mixed_direction_modes_and_bad_lengths() {
        let mixed = "\
[env]
d = 4
alpha = 0.1
hard_center = ones-scaled:1
theta = auto-orthonormal:3
upsilon = 1,0,0,0
";
        assert!(env_from_config(&ConfigDoc::parse(mixed).unwrap(), "env").is_err());
        let short = "\
[env]
d = 4
alpha = 0.1
hard_center = 1,2
theta = auto-orthonormal:3
upsilon = auto-orthonormal:3
";
        assert!(env_from_config(&ConfigDoc::parse(short).unwrap(), "env").is_err());
    }

    #[test]
    fn channel_from_config_variants() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        let env = env_from_config(&doc, "env").unwrap();
        let ch = channel_from_config(&doc, "channel", &env).unwrap();
        assert_abs_diff_eq!(ch.epsilon(), 0.1);
        assert!(!ch.is_heterogeneous());

        let hetero = "\
[channel]
epsilon = 0.1
epsilon_hetero = linear:0.05,0.15
";
        let doc2 = ConfigDoc::parse(hetero).unwrap();
        let ch2 = channel_from_config(&doc2, "channel", &env).unwrap();
        assert!(ch2.is_heterogeneous());
        assert_abs_diff_eq!(ch2.epsilon(), 0.1);
        let bad = ConfigDoc::parse("[channel]\nepsilon_hetero = linear:0.05\n").unwrap();
        assert!(channel_from_config(&bad, "channel", &env).is_err());
    }

    #[test]
    fn typed_getters() {
        let doc = ConfigDoc::parse("[s]\na = 1.5\nb = 2,3,4\nc = x, y\n").unwrap();
        assert_eq!(doc.get_f64("s", "a").unwrap(), Some(1.5));
        assert_eq!(doc.get_u64_list("s", "b").unwrap(), Some(vec![2, 3, 4]));
        assert_eq!(
            doc.get_str_list("s", "c"),
            Some(vec!["x".to_string(), "y".to_string()])
        );
        assert!(doc.get_f64("s", "c").is_err());
        assert!(doc.require("s", "zz").is_err());
    }
}
