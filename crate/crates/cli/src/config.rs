//! Run configuration: a TOML file whose values sit between built-in defaults
//! and command-line flags. Relative paths resolve against the file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use detal::eval::MatchConfig;
use detal::mosaic::{MosaicSpec, ScheduleSpec};
use detal::scale::ScalePolicy;
use detal::synth::SurrogateSpec;
use serde::Deserialize;

use crate::fail::{read_file, Classify, CmdResult, Fail};

pub const CONFIG_ENV: &str = "DETAL_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// `average`, `max`, `sum` or `random`.
    pub acquisition: Option<String>,
    pub k: Option<usize>,
    pub update: Option<String>,
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Dataset root in the `images/ labels/ classes.txt *.txt` layout.
    pub dataset: Option<PathBuf>,
    /// Class table overriding the dataset's own `classes.txt`.
    pub classes: Option<PathBuf>,
    pub scale: Option<ScalePolicy>,
    pub mosaic: Option<MosaicSpec>,
    pub schedule: Option<ScheduleSpec>,
    pub selection: SelectionSection,
    /// `synthetic`, `synthetic:<config.toml>` or `external:<dir>`.
    pub detector: Option<String>,
    pub eval: Option<MatchConfig>,
    /// Surrogate dataset used by `al-sim` when no dataset is given.
    pub surrogate: Option<SurrogateSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = read_file(path).map_err(|e| Fail::Usage(anyhow::anyhow!("{:#}", e.error())))?;
        let mut cfg: RunConfig = toml::from_str(&text).usage(format!("parsing run config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.out);
        resolve(&mut cfg.dataset);
        resolve(&mut cfg.classes);
        if let Some(d) = &cfg.detector {
            let mut choice: DetectorChoice = d.parse().map_err(Fail::usage)?;
            choice.resolve(base);
            cfg.detector = Some(choice.to_string());
        }
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, path: &Path) -> CmdResult {
        let bad = |m: String| Err(Fail::usage(format!("run config {}: {m}", path.display())));
        for (name, p) in [("dataset", &self.dataset), ("classes", &self.classes)] {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{name} path {} does not exist", p.display()));
                }
            }
        }
        if let Some(d) = &self.detector {
            if let Some(p) = d.parse::<DetectorChoice>().map_err(Fail::usage)?.path() {
                if !p.exists() {
                    return bad(format!("detector path {} does not exist", p.display()));
                }
            }
        }
        if let Some(s) = &self.scale {
            s.validate().usage(format!("run config {}", path.display()))?;
        }
        if let Some(m) = &self.mosaic {
            m.validate().usage(format!("run config {}", path.display()))?;
        }
        if let Some(s) = &self.schedule {
            ScheduleSpec::new(s.total_epochs, s.cutoff).usage(format!("run config {}", path.display()))?;
        }
        if let Some(s) = &self.surrogate {
            s.validate().usage(format!("run config {}", path.display()))?;
        }
        if self.selection.k == Some(0) {
            return bad("selection.k must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}

/// Where predictions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorChoice {
    /// Built-in greenhouse preset.
    Synthetic,
    SyntheticFile(PathBuf),
    /// `<dir>/round<t>/<id>.txt` per round.
    External(PathBuf),
}

impl DetectorChoice {
    fn path(&self) -> Option<&Path> {
        match self {
            DetectorChoice::Synthetic => None,
            DetectorChoice::SyntheticFile(p) | DetectorChoice::External(p) => Some(p),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DetectorChoice::SyntheticFile(p) | DetectorChoice::External(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

impl FromStr for DetectorChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "synthetic" => Ok(DetectorChoice::Synthetic),
            Some(("synthetic", p)) if !p.is_empty() => Ok(DetectorChoice::SyntheticFile(p.into())),
            Some(("external", p)) if !p.is_empty() => Ok(DetectorChoice::External(p.into())),
            _ => Err(format!(
                "unknown detector {s:?}; expected synthetic, synthetic:<file> or external:<dir>"
            )),
        }
    }
}

impl fmt::Display for DetectorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorChoice::Synthetic => f.write_str("synthetic"),
            DetectorChoice::SyntheticFile(p) => write!(f, "synthetic:{}", p.display()),
            DetectorChoice::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}
