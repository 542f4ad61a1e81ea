//! Run configuration: defaults, TOML file, then dotted-key overrides.
//!
//! Everything is resolved on the JSON form of the configuration, so the key
//! schema, the `--help` listing and unknown-key checks all come from the
//! serialized defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use usdrl::downstream::{FinetuneConfig, PostprocessConfig, ProbeConfig};
use usdrl::dste::EncoderConfig;
use usdrl::mgfd::LossWeights;
use usdrl::pretrain::{DataConfig, PretrainConfig, TrainConfig};
use usdrl::skelio::SynthSpec;

/// Sliding-window inference and scoring for detection and segmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    /// Window stride in frames; the window length is the encoder's `frames`.
    pub stride: usize,
    /// IoU threshold of the headline mAP.
    pub iou: f64,
    pub postprocess: PostprocessConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { stride: 16, iou: 0.5, postprocess: PostprocessConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
    pub detect: DetectConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PretrainConfig::desk();
        Self {
            encoder: p.encoder,
            loss: p.loss,
            train: p.train,
            data: p.data,
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
            detect: DetectConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig { encoder: self.encoder.clone(), loss: self.loss.clone(), train: self.train.clone(), data: self.data.clone() }
    }

    /// Hex sha256 of the canonical JSON form (keys sorted).
    pub fn digest(&self, extra: &Value) -> String {
        let v = serde_json::json!({ "config": self, "args": extra });
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("config serializes")))
    }
}

fn schema() -> Value {
    serde_json::to_value(RunConfig::default()).expect("default config serializes")
}

/// Every addressable dotted key with its default value.
pub fn keys() -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => out.push((prefix.to_string(), leaf.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", &schema(), &mut out);
    out
}

/// The `--help` section listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (TOML file sections, or --<key> <value> on the command line):\n");
    for (k, v) in keys() {
        let shown = if v.is_null() { "unset".to_string() } else { v.to_string() };
        s.push_str(&format!("  {k} = {shown}\n"));
    }
    s
}

fn unknown_key(key: &str) -> anyhow::Error {
    let valid: Vec<String> = keys().into_iter().map(|(k, _)| k).collect();
    anyhow::anyhow!("unknown config key `{key}`; valid keys are:\n  {}", valid.join("\n  "))
}

/// Rejects keys of `user` that the schema does not have.
fn check_keys(prefix: &str, user: &Value, schema: &Value) -> Result<()> {
    let (Value::Object(u), Value::Object(s)) = (user, schema) else {
        return Ok(());
    };
    for (k, v) in u {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match s.get(k) {
            None => return Err(unknown_key(&key)),
            Some(child) => check_keys(&key, v, child)?,
        }
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// A command-line value: TOML literal syntax when it parses, else a string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).expect("toml value converts"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn nest(key: &str, value: Value) -> Value {
    key.rsplit('.').fold(value, |acc, part| {
        let mut m = Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    })
}

/// Relative paths in a config file are taken relative to that file.
fn anchor_paths(v: &mut Value, dir: &Path) {
    for (section, field) in [("data", "manifest"), ("train", "checkpoint"), ("train", "log")] {
        if let Some(Value::String(p)) = v.get_mut(section).and_then(|s| s.get_mut(field)) {
            if Path::new(p).is_relative() {
                *p = dir.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
}

/// Defaults, then the file, then `overrides` in order.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let schema = schema();
    let mut v = schema.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut user = serde_json::to_value(table)?;
        check_keys("", &user, &schema)?;
        anchor_paths(&mut user, path.parent().unwrap_or(Path::new("")));
        merge(&mut v, user);
    }
    for (key, raw) in overrides {
        let user = nest(key, parse_value(raw));
        check_keys("", &user, &schema)?;
        merge(&mut v, user);
    }
    let cfg: RunConfig = serde_json::from_value(v).context("invalid configuration")?;
    cfg.pretrain().validate()?;
    cfg.probe.validate()?;
    cfg.finetune.validate()?;
    Ok(cfg)
}

/// Splits `--a.b value` and `--a.b=value` arguments off the command line.
/// Any long flag containing a dot is an override.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(a);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let Some(v) = it.next() else { bail!("override --{flag} needs a value") };
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

/// Manifest from an explicit flag, else from the configuration.
pub fn manifest_path(flag: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.cloned().or_else(|| cfg.data.manifest.clone()).ok_or_else(|| anyhow::anyhow!("no dataset manifest; pass --data or set data.manifest"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_off() {
        let (rest, o) = split_overrides(s(&["usdrl", "--out-dir", "x", "--train.epochs", "3", "pretrain", "--loss.tau=0.25"])).unwrap();
        assert_eq!(rest, s(&["usdrl", "--out-dir", "x", "pretrain"]));
        assert_eq!(o, vec![("train.epochs".into(), "3".into()), ("loss.tau".into(), "0.25".into())]);
        assert!(split_overrides(s(&["usdrl", "--train.epochs"])).is_err());
    }

    #[test]
    fn values_parse_as_toml_literals() {
        assert_eq!(parse_value("3"), Value::from(3));
        assert_eq!(parse_value("true"), Value::from(true));
        assert_eq!(parse_value("[\"joint\", \"bone\"]"), serde_json::json!(["joint", "bone"]));
        assert_eq!(parse_value("runs/a.ckpt"), Value::from("runs/a.ckpt"));
    }

    #[test]
    fn later_overrides_win_and_types_are_checked() {
        let c = resolve(None, &[("train.epochs".into(), "3".into()), ("train.epochs".into(), "4".into())]).unwrap();
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.loss, RunConfig::default().loss);
        assert!(resolve(None, &[("train.epochs".into(), "many".into())]).is_err());
        let c = resolve(None, &[("encoder.modalities".into(), "[\"joint\", \"motion\"]".into())]).unwrap();
        assert_eq!(c.encoder.modalities.len(), 2);
    }

    #[test]
    fn every_key_resolves_back_to_its_default() {
        let base = RunConfig::default();
        for (k, v) in keys() {
            if v.is_null() {
                continue;
            }
            let c = resolve(None, &[(k.clone(), toml_literal(&v))]).unwrap_or_else(|e| panic!("{k}: {e:#}"));
            assert_eq!(c, base, "{k}");
        }
    }

    fn toml_literal(v: &Value) -> String {
        let t: toml::Value = serde_json::from_value(v.clone()).unwrap();
        let mut table = toml::Table::new();
        table.insert("v".into(), t);
        toml::to_string(&table).unwrap().trim_start_matches("v = ").trim().to_string()
    }
}
