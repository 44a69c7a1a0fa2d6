use std::path::{Path, PathBuf};

use detal::al::PoolState;
use detal::dataset::{ClassTable, Dataset, Split};
use detal::detector::SyntheticDetectorConfig;

use crate::config::{DetectorChoice, RunConfig};
use crate::fail::{read_file, Classify, CmdResult, Fail};
use crate::lock::OutputLock;
use crate::GlobalArgs;

pub const DEFAULT_OUT: &str = "detal-out";

/// Resolved global settings: flags, then run config, then defaults.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Ctx {
    pub fn new(g: &GlobalArgs) -> CmdResult<Self> {
        let cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let threads = g.threads.or(cfg.threads);
        if let Some(n) = threads {
            if n == 0 {
                return Err(Fail::usage("--threads must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .internal("configuring the thread pool")?;
        }
        Ok(Ctx {
            seed: g.seed.or(cfg.seed).unwrap_or(0),
            out: g.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
            quiet: g.quiet,
            cfg,
        })
    }

    pub fn lock(&self) -> CmdResult<OutputLock> {
        OutputLock::acquire(&self.out)
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out.join(name)
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn dataset_root(&self, flag: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.cfg.dataset.clone())
    }

    /// Loads the dataset from `--data` or the config, applying a class-table override.
    pub fn dataset(&self, flag: &Option<PathBuf>) -> CmdResult<Dataset> {
        let root = self
            .dataset_root(flag)
            .ok_or_else(|| Fail::usage("no dataset given; pass --data or set `dataset` in the run config"))?;
        if !root.is_dir() {
            return Err(Fail::data(format!("dataset root {} is not a directory", root.display())));
        }
        let ds = Dataset::load(&root).data(format!("loading dataset {}", root.display()))?;
        match &self.cfg.classes {
            Some(p) => {
                let table = ClassTable::parse(&read_file(p)?).data(format!("parsing {}", p.display()))?;
                Dataset::new(table, ds.into_images()).data(format!("applying class table {}", p.display()))
            }
            None => Ok(ds),
        }
    }

    pub fn detector_choice(&self, flag: &Option<DetectorChoice>) -> CmdResult<DetectorChoice> {
        match (flag, &self.cfg.detector) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(s)) => s.parse().map_err(Fail::usage),
            (None, None) => Ok(DetectorChoice::Synthetic),
        }
    }

    /// Synthetic detector settings; the global seed replaces any seed in the file.
    pub fn synthetic_config(&self, choice: &DetectorChoice) -> CmdResult<Option<SyntheticDetectorConfig>> {
        let cfg = match choice {
            DetectorChoice::Synthetic => SyntheticDetectorConfig::greenhouse(self.seed),
            DetectorChoice::SyntheticFile(p) => SyntheticDetectorConfig {
                seed: self.seed,
                ..SyntheticDetectorConfig::load(p).usage("loading synthetic detector config")?
            },
            DetectorChoice::External(_) => return Ok(None),
        };
        Ok(Some(cfg))
    }

    /// Pool state from `--state`, or the dataset's train (labeled) and pool (unlabeled) splits.
    pub fn pool_state(&self, ds: &Dataset, state: &Option<PathBuf>) -> CmdResult<PoolState> {
        match state {
            Some(p) => {
                let st: PoolState =
                    serde_json::from_str(&read_file(p)?).data(format!("parsing pool state {}", p.display()))?;
                // copy updates leave labeled ids in the pool, so only ids and counts are checked
                let unknown = st.unlabeled.iter().find(|id| ds.get(id).is_none());
                if let Some(id) = unknown {
                    return Err(Fail::data(format!("pool state {}: unknown image {id}", p.display())));
                }
                let fresh = PoolState::new(st.labeled.iter().cloned(), [], ds)
                    .data(format!("pool state {} does not fit the dataset", p.display()))?;
                if fresh.class_counts != st.class_counts {
                    return Err(Fail::data(format!(
                        "pool state {} records class counts {:?} but the dataset gives {:?}",
                        p.display(),
                        st.class_counts,
                        fresh.class_counts
                    )));
                }
                Ok(st)
            }
            None => PoolState::new(ds.split_ids(Split::Train), ds.split_ids(Split::Pool), ds)
                .data("building the initial pool state"),
        }
    }
}
