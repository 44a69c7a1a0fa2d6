use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use detal::dataset::Split;
use detal::mosaic::{
    build_epoch_plan, compose_mosaic, load_pixels, schedule_csv, write_sample, CellFit, MosaicSource,
    MosaicVariant, PlanItem, ScheduleSpec,
};
use rayon::prelude::*;

use crate::ctx::Ctx;
use crate::fail::{write_file, Classify, CmdResult};
use crate::SplitArg;

#[derive(Args, Debug, Clone, Default)]
pub struct ScheduleFlags {
    /// Total training epochs E
    #[arg(long)]
    pub epochs: Option<u32>,

    /// Closing epochs C without mosaic
    #[arg(long, conflicts_with = "usage")]
    pub cutoff: Option<u32>,

    /// Share of epochs with mosaic on; sets C = round((1 - usage) * E)
    #[arg(long)]
    pub usage: Option<f64>,
}

impl ScheduleFlags {
    fn resolve(&self, ctx: &Ctx) -> CmdResult<ScheduleSpec> {
        let base = ctx.cfg.schedule.unwrap_or(ScheduleSpec {
            total_epochs: 500,
            cutoff: 100,
        });
        let epochs = self.epochs.unwrap_or(base.total_epochs);
        let spec = match (self.cutoff, self.usage) {
            (_, Some(u)) => ScheduleSpec::from_usage(epochs, u),
            (Some(c), None) => ScheduleSpec::new(epochs, c),
            (None, None) => ScheduleSpec::new(epochs, base.cutoff),
        };
        spec.usage("mosaic schedule")
    }
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

pub fn schedule(ctx: &Ctx, a: ScheduleArgs) -> CmdResult {
    let spec = a.schedule.resolve(ctx)?;
    let _lock = ctx.lock()?;
    write_file(&ctx.path("schedule.csv"), schedule_csv(&spec))?;
    let on = spec.switch_epoch();
    println!(
        "E = {}, C = {}: mosaic on for epochs 0..{} ({on} of {}), off from epoch {on}",
        spec.total_epochs,
        spec.cutoff,
        on.saturating_sub(1),
        spec.total_epochs
    );
    Ok(())
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum VariantArg {
    Mosaic4,
    Mosaic9,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FitArg {
    Stretch,
    Cover,
}

#[derive(Args, Debug)]
pub struct MosaicArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Split whose images feed the plan
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,

    /// Epoch to plan
    #[arg(long, default_value_t = 0)]
    pub epoch: u32,

    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,

    #[arg(long, value_enum)]
    pub fit: Option<FitArg>,

    /// Side length of the composites, in pixels
    #[arg(long)]
    pub size: Option<u32>,

    /// Render the first N composites of the plan to images and labels
    #[arg(long, default_value_t = 0)]
    pub render: usize,

    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

pub fn mosaic(ctx: &Ctx, a: MosaicArgs) -> CmdResult {
    let schedule = a.schedule.resolve(ctx)?;
    let mut spec = ctx.cfg.mosaic.unwrap_or_default();
    spec.rng_seed = ctx.seed;
    if let Some(v) = a.variant {
        spec.variant = match v {
            VariantArg::Mosaic4 => MosaicVariant::Mosaic4,
            VariantArg::Mosaic9 => MosaicVariant::Mosaic9,
        };
    }
    if let Some(f) = a.fit {
        spec.fit = match f {
            FitArg::Stretch => CellFit::Stretch,
            FitArg::Cover => CellFit::Cover,
        };
    }
    if let Some(s) = a.size {
        spec.output_width = s;
        spec.output_height = s;
    }
    spec.validate().usage("mosaic spec")?;
    let ds = ctx.dataset(&a.data)?;
    let ids = ds.split_ids(Split::from(a.split));
    let plan = build_epoch_plan(&ids, &spec, &schedule, a.epoch).usage("planning the epoch")?;

    let _lock = ctx.lock()?;
    write_file(&ctx.path(format!("plan_epoch{}.csv", a.epoch)), plan.to_csv())?;
    let composites: Vec<(usize, &Vec<String>, u64)> = plan
        .items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| match item {
            PlanItem::Mosaic { sources, seed } => Some((i, sources, *seed)),
            PlanItem::Original { .. } => None,
        })
        .take(a.render)
        .collect();
    if a.render > 0 && composites.is_empty() {
        ctx.note(format!("epoch {} has mosaic off; nothing to render", a.epoch));
    }

    let wanted: std::collections::BTreeSet<&String> = composites.iter().flat_map(|c| c.1.iter()).collect();
    let pixels: BTreeMap<&String, _> = wanted
        .into_par_iter()
        .map(|id| {
            let rec = ds.get(id).expect("plan ids come from the dataset");
            load_pixels(rec).data(format!("loading pixels for {id}")).map(|p| (id, p))
        })
        .collect::<CmdResult<_>>()?;
    let dir = ctx.path("mosaic");
    composites.par_iter().try_for_each(|(i, sources, seed)| -> CmdResult {
        let srcs: Vec<MosaicSource> = sources
            .iter()
            .map(|id| MosaicSource {
                record: ds.get(id).expect("plan ids come from the dataset"),
                pixels: &pixels[id],
            })
            .collect();
        let sample = compose_mosaic(&srcs, &spec.with_seed(*seed)).data(format!("composite {i}"))?;
        let name = format!("e{}_{i:05}", a.epoch);
        write_sample(&dir, &name, &sample).internal(format!("writing composite {name}"))?;
        let layout = serde_json::to_string_pretty(&sample.layout).internal("serializing layout")?;
        write_file(&dir.join("layouts").join(format!("{name}.json")), layout + "\n")
    })?;

    let mosaics = plan.items.iter().filter(|i| matches!(i, PlanItem::Mosaic { .. })).count();
    println!(
        "epoch {}: mosaic {}, {} items ({mosaics} composites), {} rendered",
        a.epoch,
        if plan.mosaic { "on" } else { "off" },
        plan.items.len(),
        composites.len()
    );
    Ok(())
}
