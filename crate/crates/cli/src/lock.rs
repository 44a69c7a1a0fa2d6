use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::fail::{Classify, CmdResult, Fail};

pub const LOCK_NAME: &str = ".detal.lock";

/// Advisory lock on an output directory, released on drop. A second command
/// targeting the same directory fails instead of interleaving writes.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CmdResult<Self> {
        fs::create_dir_all(dir).internal(format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(Fail::data(format!(
                    "output directory {} is in use (lock held by pid {}); remove {} if that process is gone",
                    dir.display(),
                    holder.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(e).internal(format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
