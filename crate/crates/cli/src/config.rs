//! Run settings. Values are layered, later layers winning: built-in
//! defaults, the `--preset`, a config file, `KGFUSE_*` environment variables
//! and `--section.key value` flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use kgfuse::harness::{desk_esim_config, desk_kge_config, SyntheticSpec};
use kgfuse::{seed, EsimConfig, FusionConfig, KgeTrainConfig, OovPolicy};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Bad flags, config values or missing inputs. Maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Published training settings.
    Paper,
    /// Small KGE and ESIM sized for the synthetic corpus.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovKind {
    Zero,
    Hashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSettings {
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub oov: OovKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub kge: KgeTrainConfig,
    pub esim: EsimConfig,
    pub fusion: FusionConfig,
    pub annotate: AnnotateSettings,
    pub embed: EmbedSettings,
    pub synth: SyntheticSpec,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            kge: KgeTrainConfig::default(),
            esim: EsimConfig::default(),
            fusion: FusionConfig::BASE,
            annotate: AnnotateSettings { window: kgfuse::annotate::DEFAULT_WINDOW },
            embed: EmbedSettings { oov: OovKind::Zero },
            synth: SyntheticSpec::default(),
        }
    }
}

/// Keys whose values are fixed by the inputs rather than configured.
const DERIVED: [&str; 1] = ["esim.input_dim"];

/// Stage seeds filled from the global seed unless given explicitly.
const STAGE_SEEDS: [(&str, &str); 3] = [("kge.seed", "kge"), ("esim.seed", "esim"), ("synth.seed", "synth")];

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("settings serialize to JSON")
}

impl Settings {
    /// `section.key -> value`, plus the top-level `seed`.
    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        out.insert("seed".to_string(), Value::from(self.seed));
        let sections = [
            ("kge", to_value(&self.kge)),
            ("esim", to_value(&self.esim)),
            ("fusion", to_value(&self.fusion)),
            ("annotate", to_value(&self.annotate)),
            ("embed", to_value(&self.embed)),
            ("synth", to_value(&self.synth)),
        ];
        for (section, value) in sections {
            let Value::Object(fields) = value else { unreachable!("sections are structs") };
            for (k, v) in fields {
                let key = format!("{section}.{k}");
                if !DERIVED.contains(&key.as_str()) {
                    out.insert(key, v);
                }
            }
        }
        out
    }

    fn unflatten(flat: &BTreeMap<String, Value>) -> anyhow::Result<Settings> {
        let defaults = Settings::default();
        let mut sections: BTreeMap<&str, Map<String, Value>> = BTreeMap::new();
        for (key, value) in flat {
            if let Some((section, field)) = key.split_once('.') {
                sections.entry(section).or_default().insert(field.to_string(), value.clone());
            }
        }
        sections.entry("esim").or_default().insert("input_dim".into(), Value::from(defaults.esim.input_dim));
        fn take<T: for<'de> Deserialize<'de>>(
            sections: &mut BTreeMap<&str, Map<String, Value>>,
            name: &str,
        ) -> anyhow::Result<T> {
            let map = sections.remove(name).unwrap_or_default();
            serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("[{name}] {e}")))
        }
        let seed = flat.get("seed").and_then(Value::as_u64).unwrap_or(defaults.seed);
        Ok(Settings {
            seed,
            kge: take(&mut sections, "kge")?,
            esim: take(&mut sections, "esim")?,
            fusion: take(&mut sections, "fusion")?,
            annotate: take(&mut sections, "annotate")?,
            embed: take(&mut sections, "embed")?,
            synth: take(&mut sections, "synth")?,
        })
    }

    pub fn oov_policy(&self) -> OovPolicy {
        match self.embed.oov {
            OovKind::Zero => OovPolicy::Zero,
            OovKind::Hashed => OovPolicy::Hashed { seed: seed::substream(self.seed, "oov") },
        }
    }
}

/// Parse `raw` to the JSON type of `current`.
fn coerce(key: &str, raw: &str, current: &Value) -> anyhow::Result<Value> {
    let raw = raw.trim();
    let bad = |what: &str| usage(format!("`{key}`: expected {what}, got `{raw}`"));
    Ok(match current {
        Value::Bool(_) => match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Value::Bool(true),
            "false" | "0" | "no" | "off" => Value::Bool(false),
            _ => return Err(bad("a boolean")),
        },
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Value::Number(_) => {
            let v = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("a number"))?;
            Value::from(v)
        }
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => {
            Value::Array(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Value::from).collect())
        }
        _ => return Err(bad("a scalar")),
    })
}

/// One `key = value` assignment with a description of where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub struct Resolver {
    values: BTreeMap<String, Value>,
    explicit: BTreeSet<String>,
}

impl Resolver {
    pub fn new(preset: Preset) -> Self {
        let mut base = Settings::default();
        if preset == Preset::Desk {
            base.kge = KgeTrainConfig { seed: base.kge.seed, ..desk_kge_config() };
            base.esim = EsimConfig { seed: base.esim.seed, ..desk_esim_config() };
        }
        Resolver { values: base.flatten(), explicit: BTreeSet::new() }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn assign(&mut self, a: &Assignment) -> anyhow::Result<()> {
        let current = self
            .values
            .get(&a.key)
            .ok_or_else(|| usage(format!("{}: unknown setting `{}`", a.origin, a.key)))?;
        let v = coerce(&a.key, &a.value, current).map_err(|e| usage(format!("{}: {e}", a.origin)))?;
        self.values.insert(a.key.clone(), v);
        self.explicit.insert(a.key.clone());
        Ok(())
    }

    /// Environment variable for a key: `KGFUSE_` + upper-cased key with dots
    /// replaced by underscores.
    pub fn env_name(key: &str) -> String {
        format!("KGFUSE_{}", key.to_ascii_uppercase().replace('.', "_"))
    }

    pub fn env_assignments(&self, lookup: impl Fn(&str) -> Option<String>) -> Vec<Assignment> {
        self.keys()
            .filter_map(|k| {
                let name = Self::env_name(k);
                lookup(&name).map(|value| Assignment { key: k.to_string(), value, origin: name })
            })
            .collect()
    }

    pub fn finish(mut self) -> anyhow::Result<Settings> {
        let global = self.values["seed"].as_u64().expect("seed is an integer");
        for (key, stream) in STAGE_SEEDS {
            if !self.explicit.contains(key) {
                self.values.insert(key.to_string(), Value::from(seed::substream(global, stream)));
            }
        }
        let settings = Settings::unflatten(&self.values)?;
        settings.kge.validate().map_err(|e| usage(format!("[kge] {e}")))?;
        settings.esim.validate().map_err(|e| usage(format!("[esim] {e}")))?;
        settings.synth.validate().map_err(|e| usage(format!("[synth] {e}")))?;
        Ok(settings)
    }
}

/// Sections in `[brackets]`, `key = value` lines, `#` or `;` comments.
/// Keys before the first section are top-level.
pub fn parse_config(text: &str, origin: &str) -> anyhow::Result<Vec<Assignment>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let at = || format!("{origin}:{}", i + 1);
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| usage(format!("{}: unclosed section header", at())))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("{}: expected `key = value`", at())))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(usage(format!("{}: empty key", at())));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        out.push(Assignment { key, value: v.trim().to_string(), origin: at() });
    }
    Ok(out)
}

/// Pulls `--section.key value` and `--section.key=value` out of `args`,
/// returning the remaining arguments and the assignments. Any long flag
/// whose name contains a dot is treated as a setting.
pub fn split_overrides(args: Vec<String>) -> anyhow::Result<(Vec<String>, Vec<Assignment>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut found = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--").filter(|n| n.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match name.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("--{name} needs a value")))?;
                (name.to_string(), v)
            }
        };
        let origin = format!("--{key}");
        found.push(Assignment { key, value, origin });
    }
    Ok((rest, found))
}
