use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::anyhow;

/// A command failure, classified by exit status.
#[derive(Debug)]
pub enum Fail {
    /// Bad flags or configuration. Exit 1.
    Usage(anyhow::Error),
    /// Unreadable or invalid input data, or a delegated operation refused it. Exit 2.
    Data(anyhow::Error),
    /// Could not write results, or an invariant broke. Exit 3.
    Internal(anyhow::Error),
}

impl Fail {
    pub fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 1,
            Fail::Data(_) => 2,
            Fail::Internal(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Fail::Usage(e) | Fail::Data(e) | Fail::Internal(e) => e,
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        Fail::Usage(anyhow!("{msg}"))
    }

    pub fn data(msg: impl Display) -> Self {
        Fail::Data(anyhow!("{msg}"))
    }
}

pub type CmdResult<T = ()> = Result<T, Fail>;

/// Tags an error with its exit class and a context line.
pub trait Classify<T> {
    fn usage(self, ctx: impl Display) -> CmdResult<T>;
    fn data(self, ctx: impl Display) -> CmdResult<T>;
    fn internal(self, ctx: impl Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self, ctx: impl Display) -> CmdResult<T> {
        self.map_err(|e| Fail::Usage(e.into().context(ctx.to_string())))
    }

    fn data(self, ctx: impl Display) -> CmdResult<T> {
        self.map_err(|e| Fail::Data(e.into().context(ctx.to_string())))
    }

    fn internal(self, ctx: impl Display) -> CmdResult<T> {
        self.map_err(|e| Fail::Internal(e.into().context(ctx.to_string())))
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).internal(format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).internal(format!("writing {}", path.display()))
}

pub fn read_file(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).data(format!("reading {}", path.display()))
}
