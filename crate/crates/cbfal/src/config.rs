//! Scenario parameter overrides.
//!
//! Overrides arrive either as `key=value` pairs from the command line or as a
//! TOML file whose nested tables are flattened with dotted keys (`filter
//! { enabled = false }` becomes `filter.enabled`). Values are numbers or
//! booleans; scenarios reject unknown keys, so typos fail loudly instead of
//! silently running defaults.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// A single override value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverrideValue {
    Number(f64),
    Bool(bool),
}

impl std::fmt::Display for OverrideValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OverrideValue::Number(v) => write!(f, "{v}"),
            OverrideValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Ordered key-value override set. Ordering is deterministic (sorted keys),
/// so reports and serialized forms are stable across runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(BTreeMap<String, OverrideValue>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_number(&mut self, key: &str, value: f64) -> &mut Self {
        self.0.insert(key.into(), OverrideValue::Number(value));
        self
    }

    pub fn set_bool(&mut self, key: &str, value: bool) -> &mut Self {
        self.0.insert(key.into(), OverrideValue::Bool(value));
        self
    }

    pub fn get(&self, key: &str) -> Option<OverrideValue> {
        self.0.get(key).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, OverrideValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Consumes into the underlying map; scenario builders drain it and
    /// reject leftovers.
    pub fn into_map(self) -> BTreeMap<String, OverrideValue> {
        self.0
    }

    /// Parses `key=value` pairs. Booleans are the literals `true`/`false`;
    /// everything else must parse as a float.
    pub fn from_set_args<I, S>(args: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self::new();
        for arg in args {
            let arg = arg.as_ref();
            let Some((key, value)) = arg.split_once('=') else {
                return Err(Error::InvalidOverride {
                    key: arg.into(),
                    reason: "expected key=value".into(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidOverride {
                    key: arg.into(),
                    reason: "empty key".into(),
                });
            }
            let value = value.trim();
            let parsed = match value {
                "true" => OverrideValue::Bool(true),
                "false" => OverrideValue::Bool(false),
                other => match other.parse::<f64>() {
                    Ok(v) if v.is_finite() => OverrideValue::Number(v),
                    _ => {
                        return Err(Error::InvalidOverride {
                            key: key.into(),
                            reason: format!("{value:?} is neither a finite number nor a boolean"),
                        })
                    }
                },
            };
            out.0.insert(key.into(), parsed);
        }
        Ok(out)
    }

    /// Parses a TOML document, flattening nested tables with dotted keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::InvalidOverride {
            key: "<config file>".into(),
            reason: format!("TOML parse error: {e}"),
        })?;
        let mut out = Self::new();
        flatten_table(&table, String::new(), &mut out)?;
        Ok(out)
    }

    /// Serializes as TOML with dotted keys expanded into nested tables.
    /// Round-trips through [`from_toml_str`] without loss.
    pub fn to_toml_string(&self) -> String {
        let mut root = toml::Table::new();
        for (key, value) in &self.0 {
            let mut node = &mut root;
            let mut parts = key.split('.').peekable();
            while let Some(part) = parts.next() {
                if parts.peek().is_none() {
                    node.insert(
                        part.into(),
                        match value {
                            OverrideValue::Number(v) => toml::Value::Float(*v),
                            OverrideValue::Bool(b) => toml::Value::Boolean(*b),
                        },
                    );
                } else {
                    node = node
                        .entry(part.to_owned())
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                        .as_table_mut()
                        .expect("dotted prefix collides with a scalar key");
                }
            }
        }
        toml::to_string(&root).expect("override table serializes")
    }

    /// Returns `self` with `other`'s entries layered on top.
    pub fn merged(mut self, other: &Overrides) -> Self {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), *v);
        }
        self
    }
}

fn flatten_table(table: &toml::Table, prefix: String, out: &mut Overrides) -> Result<()> {
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            toml::Value::Boolean(b) => {
                out.0.insert(path, OverrideValue::Bool(*b));
            }
            toml::Value::Float(v) => {
                out.0.insert(path, OverrideValue::Number(*v));
            }
            toml::Value::Integer(v) => {
                out.0.insert(path, OverrideValue::Number(*v as f64));
            }
            toml::Value::Table(t) => flatten_table(t, path, out)?,
            other => {
                return Err(Error::InvalidOverride {
                    key: path,
                    reason: format!("unsupported value type {:?}", other.type_str()),
                })
            }
        }
    }
    Ok(())
}

// ─── tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_args_parse_numbers_and_booleans() {
        let ov = Overrides::from_set_args(["tau=2.5", "filter.enabled=false", "x0=-0.4"]).unwrap();
        assert_eq!(ov.get("tau"), Some(OverrideValue::Number(2.5)));
        assert_eq!(ov.get("filter.enabled"), Some(OverrideValue::Bool(false)));
        assert_eq!(ov.get("x0"), Some(OverrideValue::Number(-0.4)));
        assert!(Overrides::from_set_args(["tau"]).is_err());
        assert!(Overrides::from_set_args(["tau=fast"]).is_err());
        assert!(Overrides::from_set_args(["tau=inf"]).is_err());
    }

    #[test]
    fn toml_round_trip_preserves_every_entry() {
        let mut ov = Overrides::new();
        ov.set_number("tau", 1.5)
            .set_number("x0.0", 0.1)
            .set_number("x0.1", 0.2)
            .set_bool("filter.enabled", false)
            .set_bool("init.equilibrium", true);
        let text = ov.to_toml_string();
        let back = Overrides::from_toml_str(&text).unwrap();
        assert_eq!(ov, back);
    }

    #[test]
    fn toml_integers_coerce_to_numbers() {
        let ov = Overrides::from_toml_str("tau = 2\n[filter]\nenabled = true\n").unwrap();
        assert_eq!(ov.get("tau"), Some(OverrideValue::Number(2.0)));
        assert_eq!(ov.get("filter.enabled"), Some(OverrideValue::Bool(true)));
        assert!(Overrides::from_toml_str("name = \"case1\"\n").is_err());
    }

    #[test]
    fn merge_layers_the_second_set_on_top() {
        let base = Overrides::from_set_args(["tau=1.0", "gamma=3.0"]).unwrap();
        let top = Overrides::from_set_args(["gamma=5.0"]).unwrap();
        let merged = base.merged(&top);
        assert_eq!(merged.get("tau"), Some(OverrideValue::Number(1.0)));
        assert_eq!(merged.get("gamma"), Some(OverrideValue::Number(5.0)));
    }
}
