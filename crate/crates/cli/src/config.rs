//! Run configuration: flat `key = value` files with `[section]` headers.
//!
//! Keys are addressed as `section.key`. Precedence, lowest first: built-in
//! defaults, the config file, `--set key=value`, dedicated flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Every recognised key with its default. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("run.deterministic", "false"),
    ("run.threads", ""),
    ("run.precision", "f32"),
    ("model.checkpoint", ""),
    ("model.preset", "resnet34"),
    ("model.family", "resnet"),
    ("model.stage_blocks", "2,2,2"),
    ("model.base_channels", "16"),
    ("model.input", ""),
    ("model.num_classes", ""),
    ("data.source", "ppm"),
    ("data.dir", ""),
    ("data.manifest", "manifest.tsv"),
    ("data.val_dir", ""),
    ("data.classes", ""),
    ("data.limit", ""),
    ("data.count", "256"),
    ("data.val_count", "64"),
    ("data.side", "32"),
    ("data.seed", "0"),
    ("train.lr0", "0.01"),
    ("train.momentum", "0.9"),
    ("train.weight_decay", "0.0001"),
    ("train.lr_drop_factor", "10"),
    ("train.lr_drop_every", "30"),
    ("train.epochs", "90"),
    ("train.batch", "256"),
    ("train.eval_batch", "256"),
    ("train.decay_all", "false"),
    ("train.augment", "crop_flip"),
    ("train.flip_prob", "0.5"),
    ("train.resume", ""),
    ("eval.batch", "64"),
    ("rf.layer", ""),
    ("rf.neuron", ""),
    ("mine.layer", "maxpool"),
    ("mine.mode", "center"),
    ("mine.channels", ""),
    ("mine.topk", "16"),
    ("mine.batch", "64"),
    ("mine.scale", "4"),
    ("vfilter.w1", "stem.conv"),
    ("vfilter.w2", "downsample2.conv"),
    ("vfilter.channels", ""),
    ("vfilter.order", "signed"),
    ("vfilter.scale", "8"),
    ("actmax.layer", "stem.conv"),
    ("actmax.channels", ""),
    ("actmax.mode", "channel"),
    ("actmax.steps", "31"),
    ("actmax.lr", "0.1"),
    ("actmax.weight_decay", "0.000001"),
    ("actmax.scale", "4"),
    ("probe.layer", "maxpool"),
    ("probe.batch", "64"),
    ("noise.mode", "all"),
    ("noise.report", ""),
    ("export.to", "raw"),
    ("export.manifest", ""),
    ("export.blob", ""),
];

pub fn default_value(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Parses `key = value` lines; `[name]` starts a section whose name prefixes
/// the following keys. `#` and `;` start comment lines.
pub fn parse(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{origin}:{}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        let key = if section.is_empty() || k.contains('.') { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub out: PathBuf,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults for every key, then `layers` applied in order.
    pub fn build(command: &str, out: PathBuf, layers: &[Vec<(String, String)>]) -> Result<Self> {
        let mut values: BTreeMap<String, String> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in layers.iter().flatten() {
            match values.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => bail!(UsageError(format!("unknown config key `{k}`"))),
            }
        }
        Ok(RunConfig {
            command: command.to_string(),
            out,
            values,
        })
    }

    pub fn load_file(path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| anyhow!(UsageError(format!("bad value `{v}` for {key}: {e}"))))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.opt(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    /// Comma-separated list; empty means `None`.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.opt(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| anyhow!(UsageError(format!("bad list entry `{s}` for {key}: {e}"))))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt(key).map(PathBuf::from)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("run.seed")
    }

    /// Keys echoed to the manifest: the shared sections plus those of
    /// `sections`.
    pub fn echoed(&self, sections: &[&str]) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| {
                let s = k.split('.').next().unwrap_or("");
                matches!(s, "run" | "model" | "data") || sections.contains(&s)
            })
            .filter(|(k, _)| k.as_str() != "run.threads")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Config-file rendering of the echoed keys, grouped by section.
    pub fn render(&self, sections: &[&str]) -> String {
        let mut text = String::new();
        let mut current = "";
        for (k, v) in self.echoed(sections).iter() {
            let (s, key) = k.split_once('.').expect("sectioned key");
            if s != current {
                if !text.is_empty() {
                    text.push('\n');
                }
                let _ = writeln!(text, "[{s}]");
                current = s;
            }
            let _ = writeln!(text, "{key} = {v}");
        }
        text
    }

    /// SHA-256 over the command name and rendered config.
    pub fn hash(&self, sections: &[&str]) -> String {
        self.hash_excluding(sections, &[])
    }

    /// [`RunConfig::hash`] with some keys left out.
    pub fn hash_excluding(&self, sections: &[&str], skip: &[&str]) -> String {
        let mut kept = self.clone();
        kept.values.retain(|k, _| !skip.contains(&k.as_str()));
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0u8]);
        h.update(kept.render(sections).as_bytes());
        hex::encode(h.finalize())
    }
}
