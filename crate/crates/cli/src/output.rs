use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;

/// Reads a JSON config; parse errors name the offending field.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        anyhow::anyhow!("invalid config {} at field `{field}`: {}", path.display(), e.inner())
    })
}

/// Output files of one command, written all-or-nothing.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = PathBuf> + '_ {
        self.files.iter().map(|(n, _)| self.dir.join(n))
    }

    /// Fails before running when any target exists and `force` is off.
    pub fn check_targets(dir: &Path, names: &[&str], force: bool) -> Result<()> {
        if force {
            return Ok(());
        }
        for n in names {
            let p = dir.join(n);
            if p.exists() {
                bail!("{} exists; pass --force to overwrite", p.display());
            }
        }
        Ok(())
    }

    /// Writes each file to a temporary sibling and renames it into place.
    pub fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create {}", self.dir.display()))?;
        for (name, bytes) in &self.files {
            let target = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.tmp"));
            let mut f = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target).with_context(|| format!("cannot write {}", target.display()))?;
        }
        Ok(())
    }
}
