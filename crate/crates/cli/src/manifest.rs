//! Run manifests: `run.cfg` (the effective config, reusable with
//! `--config`) and `manifest.json` (command, config hash, seed, version and
//! a digest of every output file).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "run.cfg";

pub fn write_config(cfg: &RunConfig, sections: &[&str]) -> Result<()> {
    let path = cfg.out.join(CONFIG_FILE);
    fs::write(&path, cfg.render(sections)).with_context(|| format!("writing {}", path.display()))
}

/// Files under `dir`, relative and sorted, excluding the manifest itself.
pub fn output_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.retain(|p| p != Path::new(MANIFEST_FILE));
    files.sort();
    Ok(files)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_manifest(cfg: &RunConfig, sections: &[&str]) -> Result<PathBuf> {
    let outputs = output_files(&cfg.out)?
        .into_iter()
        .map(|rel| {
            let digest = sha256_file(&cfg.out.join(&rel))?;
            Ok(json!({ "file": rel.to_string_lossy().replace('\\', "/"), "sha256": digest }))
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = json!({
        "command": cfg.command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed()?,
        "config_hash": cfg.hash(sections),
        "config": cfg.echoed(sections),
        "outputs": outputs,
    });
    let path = cfg.out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
