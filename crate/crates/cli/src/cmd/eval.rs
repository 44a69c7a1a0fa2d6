use std::path::PathBuf;

use clap::Args;
use detal::dataset::{ImageRecord, Split};
use detal::eval::evaluate;
use detal::report::percent;

use crate::cmd::al::provider;
use crate::ctx::Ctx;
use crate::fail::{write_file, Classify, CmdResult, Fail};
use crate::{PredictionArgs, SplitArg};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Split holding the ground truth
    #[arg(long, value_enum, default_value_t = SplitArg::Valid)]
    pub split: SplitArg,

    /// Pool state the synthetic detector is trained on; defaults to the train split
    #[arg(long)]
    pub state: Option<PathBuf>,

    #[command(flatten)]
    pub preds: PredictionArgs,

    /// IoU threshold for a true positive
    #[arg(long)]
    pub iou: Option<f64>,

    /// Match predictions to ground truth of any class
    #[arg(long)]
    pub class_agnostic: bool,
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> CmdResult {
    let mut matching = ctx.cfg.eval.unwrap_or_default();
    if let Some(t) = a.iou {
        matching.iou_threshold = t;
    }
    if a.class_agnostic {
        matching.per_class = false;
    }
    if !(matching.iou_threshold > 0.0 && matching.iou_threshold <= 1.0) {
        return Err(Fail::usage(format!("IoU threshold {} is outside (0, 1]", matching.iou_threshold)));
    }
    let ds = ctx.dataset(&a.data)?;
    let split = Split::from(a.split);
    let images: Vec<&ImageRecord> = ds.split(split).collect();
    if images.is_empty() {
        return Err(Fail::data(format!("the {split} split is empty")));
    }
    let state = ctx.pool_state(&ds, &a.state)?;
    let ids: Vec<String> = images.iter().map(|r| r.image_id.clone()).collect();
    let preds = provider(ctx, &ds, &a.preds)?.predict(&state, &ids).data("loading predictions")?;
    let summary = evaluate(&preds, images.iter().copied(), ds.classes().len(), &matching);

    let names = ds.classes().names();
    let _lock = ctx.lock()?;
    write_file(&ctx.path("eval.csv"), summary.to_csv(names))?;
    write_file(&ctx.path("pr_curves.csv"), summary.pr_curves_csv(names))?;
    write_file(
        &ctx.path("eval.json"),
        serde_json::to_string_pretty(&summary).internal("serializing evaluation")? + "\n",
    )?;
    let show = |v: Option<f64>| v.map(percent).unwrap_or_else(|| "-".into());
    println!(
        "{split} ({} images): mAP{:.0} {}  P {}  R {}",
        images.len(),
        matching.iou_threshold * 100.0,
        show(summary.map),
        percent(summary.precision),
        percent(summary.recall)
    );
    for (c, name) in summary.classes.iter().zip(names) {
        println!("  {name}: AP {} (gt {}, tp {}, fp {})", show(c.ap), c.gt, c.tp, c.fp);
    }
    Ok(())
}
