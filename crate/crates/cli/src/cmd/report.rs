use std::path::{Path, PathBuf};

use clap::Args;
use detal::al::{Acquisition, AggregationMethod, PoolUpdate, RoundLog};
use detal::dataset::ClassTable;
use detal::report::{growth_table, score_table, stage_table, LabeledLog, Table};

use crate::ctx::Ctx;
use crate::fail::{read_file, write_file, Classify, CmdResult, Fail};

pub fn log_file_name(acq: &Acquisition, update: PoolUpdate) -> String {
    format!("log_{acq}_{update}.csv")
}

/// Inverse of [`log_file_name`].
pub fn parse_log_file_name(name: &str) -> Option<(Acquisition, PoolUpdate)> {
    let stem = name.strip_prefix("log_")?.strip_suffix(".csv")?;
    let (acq, update) = stem.rsplit_once('_')?;
    Some((acq.parse().ok()?, update.parse().ok()?))
}

pub fn method_label(acq: &Acquisition) -> &'static str {
    match acq {
        Acquisition::Uncertainty(AggregationMethod::Average) => "Average",
        Acquisition::Uncertainty(AggregationMethod::Max) => "Max",
        Acquisition::Uncertainty(AggregationMethod::Sum) => "Sum",
        Acquisition::Random => "Random",
    }
}

pub fn strategy_label(update: PoolUpdate) -> &'static str {
    match update {
        PoolUpdate::Move => "Move",
        PoolUpdate::Copy => "Copy",
    }
}

/// Row order of the report tables.
pub fn report_order(acq: &Acquisition, update: PoolUpdate) -> (usize, usize) {
    let m = match acq {
        Acquisition::Uncertainty(AggregationMethod::Average) => 0,
        Acquisition::Uncertainty(AggregationMethod::Max) => 1,
        Acquisition::Uncertainty(AggregationMethod::Sum) => 2,
        Acquisition::Random => 3,
    };
    (m, usize::from(update == PoolUpdate::Copy))
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Round logs (`log_<method>_<update>.csv`) or directories holding them
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,

    /// Log whose last round gives the full-data row of the stage table
    #[arg(long)]
    pub full: Option<PathBuf>,

    /// Method and update for the stage table, e.g. max_move
    #[arg(long, default_value = "max_move")]
    pub stage: String,

    /// Class names, one per line
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

struct Found {
    acq: Acquisition,
    update: PoolUpdate,
    log: RoundLog,
}

fn read_log(path: &Path) -> CmdResult<RoundLog> {
    RoundLog::parse_csv(&read_file(path)?).data(format!("parsing round log {}", path.display()))
}

fn collect_logs(paths: &[PathBuf]) -> CmdResult<Vec<Found>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).data(format!("listing {}", p.display()))?;
            for e in entries {
                let path = e.data(format!("listing {}", p.display()))?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if parse_log_file_name(name).is_some() {
                    files.push(path);
                }
            }
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Fail::usage(format!("{} does not exist", p.display())));
        }
    }
    let mut found = Vec::new();
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (acq, update) = parse_log_file_name(name).ok_or_else(|| {
            Fail::usage(format!("{}: expected a name like log_max_move.csv", path.display()))
        })?;
        found.push(Found {
            acq,
            update,
            log: read_log(&path)?,
        });
    }
    if found.is_empty() {
        return Err(Fail::data("no round logs found"));
    }
    found.sort_by_key(|f| report_order(&f.acq, f.update));
    if let Some(w) = found.windows(2).find(|w| report_order(&w[0].acq, w[0].update) == report_order(&w[1].acq, w[1].update)) {
        return Err(Fail::usage(format!("two logs for {}_{}", w[0].acq, w[0].update)));
    }
    Ok(found)
}

fn class_names(ctx: &Ctx, flag: &Option<PathBuf>, num_classes: usize) -> CmdResult<Vec<String>> {
    if let Some(p) = flag.as_ref().or(ctx.cfg.classes.as_ref()) {
        let table = ClassTable::parse(&read_file(p)?).data(format!("parsing {}", p.display()))?;
        return Ok(table.names().to_vec());
    }
    let default = ClassTable::default();
    Ok(if default.len() == num_classes {
        default.names().to_vec()
    } else {
        (0..num_classes).map(|c| format!("class{c}")).collect()
    })
}

fn emit(ctx: &Ctx, name: &str, table: &Table) -> CmdResult {
    write_file(&ctx.path(format!("{name}.txt")), table.to_text())?;
    write_file(&ctx.path(format!("{name}.csv")), table.to_csv())?;
    println!("{name}:");
    print!("{}", table.to_text());
    println!();
    Ok(())
}

pub fn report(ctx: &Ctx, a: ReportArgs) -> CmdResult {
    let found = collect_logs(&a.logs)?;
    let logs: Vec<LabeledLog> = found
        .iter()
        .map(|f| LabeledLog::new(method_label(&f.acq), strategy_label(f.update), f.log.clone()))
        .collect();
    let full = match &a.full {
        Some(p) => Some(LabeledLog::new("Full", "", read_log(p)?)),
        None => None,
    };
    let num_classes = found[0].log.num_classes();
    let names = class_names(ctx, &a.classes, num_classes)?;
    if names.len() != num_classes {
        return Err(Fail::data(format!("{} class names for logs with {num_classes} classes", names.len())));
    }

    let _lock = ctx.lock()?;
    emit(ctx, "growth", &growth_table(&logs).data("growth table")?)?;
    let with_metrics = found.iter().all(|f| f.log.entries.iter().all(|e| e.metrics.is_some()));
    if with_metrics {
        emit(ctx, "scores", &score_table(&logs).data("score table")?)?;
        let stage = found
            .iter()
            .position(|f| format!("{}_{}", f.acq, f.update) == a.stage)
            .ok_or_else(|| Fail::usage(format!("no log for stage {}", a.stage)))?;
        emit(ctx, "stages", &stage_table(&logs[stage], full.as_ref(), &names).data("stage table")?)?;
    } else {
        ctx.note("logs carry no evaluation metrics; skipping score and stage tables");
    }
    Ok(())
}
