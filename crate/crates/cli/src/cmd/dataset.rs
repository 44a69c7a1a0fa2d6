use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use detal::dataset::Dataset;
use detal::scale::{
    filter_dataset, log_edges, records_csv, scale_histogram, scale_records, EmptyImagePolicy, ScaleClass, ScalePolicy,
};
use detal::synth::{render_surrogate_image, surrogate_dataset, SurrogateSpec};
use rayon::prelude::*;

use crate::ctx::Ctx;
use crate::fail::{write_file, Classify, CmdResult};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scale image and annotation counts relative to the full-size surrogate
    #[arg(long)]
    pub scale: Option<f64>,

    /// Keep this many train images labeled and move the rest to the pool
    #[arg(long)]
    pub initial_labeled: Option<usize>,

    /// Side length of the rendered square images, in pixels
    #[arg(long)]
    pub size: Option<u32>,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    let mut spec = match a.scale {
        Some(f) => SurrogateSpec::scaled(f),
        None => ctx.cfg.surrogate.clone().unwrap_or_default(),
    };
    spec.seed = ctx.seed;
    if let Some(n) = a.initial_labeled {
        spec.initial_labeled = Some(n);
    }
    if let Some(s) = a.size {
        spec.width = s;
        spec.height = s;
    }
    let ds = surrogate_dataset(&spec).usage("building the surrogate dataset")?;
    let _lock = ctx.lock()?;
    let images_dir = ctx.path("images");
    std::fs::create_dir_all(&images_dir).internal(format!("creating {}", images_dir.display()))?;
    let seed = ctx.seed;
    let records: Vec<_> = ds
        .images()
        .par_iter()
        .map(|r| {
            let path = images_dir.join(format!("{}.png", r.image_id));
            render_surrogate_image(r, seed)
                .save(&path)
                .internal(format!("writing {}", path.display()))?;
            let mut r = r.clone();
            r.image_path = Some(path);
            Ok(r)
        })
        .collect::<CmdResult<_>>()?;
    let ds = ds.with_images(records).internal("attaching image paths")?;
    ds.save(&ctx.out).internal(format!("writing dataset to {}", ctx.out.display()))?;
    print!("{}", ds.summarize().render_text(ds.classes()));
    Ok(())
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[command(flatten)]
    pub policy: PolicyArgs,

    /// Histogram decades below 1 (log-spaced bins)
    #[arg(long, default_value_t = 5)]
    pub decades: u32,

    #[arg(long, default_value_t = 4)]
    pub bins_per_decade: u32,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PolicyArgs {
    /// Area-ratio threshold below which a box counts as small
    #[arg(long)]
    pub small_threshold: Option<f64>,

    /// Area-ratio threshold below which a box counts as extremely small (0 disables filtering)
    #[arg(long)]
    pub extreme_threshold: Option<f64>,

    /// Drop images whose last label the filter removed
    #[arg(long)]
    pub drop_empty: bool,
}

impl PolicyArgs {
    pub fn resolve(&self, ctx: &Ctx) -> CmdResult<ScalePolicy> {
        let mut p = ctx.cfg.scale.unwrap_or_default();
        if let Some(v) = self.small_threshold {
            p.small_threshold = v;
        }
        if let Some(v) = self.extreme_threshold {
            p.extreme_small_threshold = v;
        }
        if self.drop_empty {
            p.on_empty_image = EmptyImagePolicy::Drop;
        }
        p.validate().usage("scale policy")?;
        Ok(p)
    }
}

fn scale_class_table(ds: &Dataset, policy: &ScalePolicy) -> String {
    let classes = ScaleClass::ALL;
    let names = ds.classes().names();
    let mut counts = vec![[0usize; 3]; names.len()];
    for r in scale_records(ds, policy) {
        let k = classes.iter().position(|&c| c == r.scale_class).expect("known class");
        counts[r.class_id as usize][k] += 1;
    }
    let mut out = String::from("class,extreme_small,small,medium_large,small_share\n");
    for (name, c) in names.iter().zip(&counts) {
        let total: usize = c.iter().sum();
        let share = if total == 0 { 0.0 } else { (c[0] + c[1]) as f64 / total as f64 };
        let _ = writeln!(out, "{name},{},{},{},{share:.4}", c[0], c[1], c[2]);
    }
    out
}

pub fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> CmdResult {
    let policy = a.policy.resolve(ctx)?;
    let ds = ctx.dataset(&a.data)?;
    let summary = ds.summarize();
    let hist = scale_histogram(&ds, &log_edges(a.decades, a.bins_per_decade)).usage("histogram bins")?;
    let records = scale_records(&ds, &policy);

    let _lock = ctx.lock()?;
    let text = summary.render_text(ds.classes());
    write_file(&ctx.path("summary.txt"), &text)?;
    write_file(
        &ctx.path("summary.json"),
        serde_json::to_string_pretty(&summary).internal("serializing summary")? + "\n",
    )?;
    write_file(&ctx.path("scale_records.csv"), records_csv(&records))?;
    write_file(&ctx.path("scale_classes.csv"), scale_class_table(&ds, &policy))?;
    write_file(&ctx.path("histogram.csv"), hist.to_csv())?;
    print!("{text}");
    let small = records.iter().filter(|r| r.scale_class != ScaleClass::MediumLarge).count();
    println!(
        "boxes: {}; below {}: {} ({:.1}%)",
        records.len(),
        policy.small_threshold,
        small,
        100.0 * small as f64 / records.len().max(1) as f64
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[command(flatten)]
    pub policy: PolicyArgs,
}

pub fn filter(ctx: &Ctx, a: FilterArgs) -> CmdResult {
    let policy = a.policy.resolve(ctx)?;
    let ds = ctx.dataset(&a.data)?;
    let (filtered, report) = filter_dataset(&ds, &policy).data("filtering")?;
    let _lock = ctx.lock()?;
    filtered.save(&ctx.out).internal(format!("writing dataset to {}", ctx.out.display()))?;
    let text = report.render_text(ds.classes().names());
    write_file(&ctx.path("removal_report.txt"), &text)?;
    write_file(
        &ctx.path("removal_report.json"),
        serde_json::to_string_pretty(&report).internal("serializing report")? + "\n",
    )?;
    print!("{text}");
    Ok(())
}
