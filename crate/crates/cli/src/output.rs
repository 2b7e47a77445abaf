use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// A scratch directory next to the destination that replaces it on commit.
/// Dropped without commit, it is removed and the destination is untouched.
pub struct Staging {
    tmp: PathBuf,
    dest: PathBuf,
    done: bool,
}

impl Staging {
    pub fn new(dest: &Path, force: bool) -> Result<Self> {
        if dest.exists() && !force {
            bail!("{} already exists; pass --force to replace it", dest.display());
        }
        let name = dest.file_name().context("output path has no final component")?.to_string_lossy();
        let tmp = dest.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self { tmp, dest: dest.to_path_buf(), done: false })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.tmp.join(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.exists() {
            std::fs::remove_dir_all(&self.dest).with_context(|| format!("removing {}", self.dest.display()))?;
        }
        std::fs::rename(&self.tmp, &self.dest).with_context(|| format!("moving output to {}", self.dest.display()))?;
        self.done = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}
