use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use detal::al::{
    apply_selection, reports_csv, run_rounds, score_pool, select_round, selection_manifest, Acquisition,
    AggregationMethod, AlError, PoolState, PoolUpdate, PredictionProvider, RoundEvaluator, RunOutcome,
    SelectionPolicy,
};
use detal::dataset::{Dataset, ImageRecord, Split};
use detal::detector::{load_external_predictions, ExternalDetector, PredictionSet, SyntheticDetector};
use detal::eval::{evaluate, EvalSummary, MatchConfig};
use detal::report::{growth_table, score_table, LabeledLog};
use detal::synth::{surrogate_dataset, SurrogateSpec};
use rayon::prelude::*;

use crate::cmd::report::{log_file_name, method_label, report_order, strategy_label};
use crate::config::DetectorChoice;
use crate::ctx::Ctx;
use crate::fail::{write_file, Classify, CmdResult, Fail};
use crate::{parse_acquisition, parse_method, parse_update, PredictionArgs, SplitArg};

/// `<dir>/<id>.txt`, the same files every round.
struct FlatDir {
    dir: PathBuf,
    num_classes: usize,
    strict: bool,
}

impl PredictionProvider for FlatDir {
    fn predict(&mut self, _state: &PoolState, ids: &[String]) -> Result<PredictionSet, AlError> {
        Ok(load_external_predictions(&self.dir, ids, self.num_classes, self.strict)?.predictions)
    }
}

/// Builds the prediction source named by the flags or the run config.
pub fn provider<'a>(
    ctx: &Ctx,
    ds: &'a Dataset,
    args: &PredictionArgs,
) -> CmdResult<Box<dyn PredictionProvider + 'a>> {
    let num_classes = ds.classes().len();
    if let Some(dir) = &args.predictions {
        if !dir.is_dir() {
            return Err(Fail::usage(format!("prediction directory {} does not exist", dir.display())));
        }
        return Ok(Box::new(FlatDir {
            dir: dir.clone(),
            num_classes,
            strict: args.strict,
        }));
    }
    let choice = ctx.detector_choice(&args.detector)?;
    match (&choice, ctx.synthetic_config(&choice)?) {
        (_, Some(cfg)) => Ok(Box::new(SyntheticDetector::new(ds, cfg).usage("synthetic detector")?)),
        (DetectorChoice::External(dir), None) => {
            if !dir.is_dir() {
                return Err(Fail::usage(format!("prediction directory {} does not exist", dir.display())));
            }
            Ok(Box::new(ExternalDetector::new(dir, num_classes, args.strict)))
        }
        _ => unreachable!("synthetic choices always carry a config"),
    }
}

/// Scores the model behind a prediction source on a fixed image set.
pub struct ProviderEvaluator<'a> {
    pub provider: Box<dyn PredictionProvider + 'a>,
    pub images: Vec<&'a ImageRecord>,
    pub num_classes: usize,
    pub matching: MatchConfig,
}

impl RoundEvaluator for ProviderEvaluator<'_> {
    fn evaluate(&mut self, state: &PoolState) -> Result<EvalSummary, AlError> {
        let ids: Vec<String> = self.images.iter().map(|r| r.image_id.clone()).collect();
        let preds = self.provider.predict(state, &ids)?;
        Ok(evaluate(&preds, self.images.iter().copied(), self.num_classes, &self.matching))
    }
}

fn policy(ctx: &Ctx, acquisition: Option<Acquisition>, k: Option<usize>, update: Option<PoolUpdate>) -> CmdResult<SelectionPolicy> {
    let sel = &ctx.cfg.selection;
    let acquisition = match (acquisition, &sel.acquisition) {
        (Some(a), _) => a,
        (None, Some(s)) => parse_acquisition(s).map_err(Fail::usage)?,
        (None, None) => Acquisition::Uncertainty(AggregationMethod::Max),
    };
    let update = match (update, &sel.update) {
        (Some(u), _) => u,
        (None, Some(s)) => parse_update(s).map_err(Fail::usage)?,
        (None, None) => PoolUpdate::Move,
    };
    let p = SelectionPolicy {
        seed: ctx.seed,
        ..SelectionPolicy::new(acquisition, k.or(sel.k).unwrap_or(500), update)
    };
    p.validate().usage("selection policy")?;
    Ok(p)
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Pool state JSON written by `select`; defaults to the dataset's train/pool manifests
    #[arg(long)]
    pub state: Option<PathBuf>,

    #[command(flatten)]
    pub preds: PredictionArgs,

    /// average, max or sum
    #[arg(long, value_parser = parse_method, default_value = "max")]
    pub method: AggregationMethod,
}

pub fn score(ctx: &Ctx, a: ScoreArgs) -> CmdResult {
    let ds = ctx.dataset(&a.data)?;
    let state = ctx.pool_state(&ds, &a.state)?;
    let mut source = provider(ctx, &ds, &a.preds)?;
    let pool = state.unlabeled_ids();
    let preds = source.predict(&state, &pool).data("loading predictions")?;
    let p = policy(ctx, Some(Acquisition::Uncertainty(a.method)), None, None)?;
    let reports = score_pool(&preds, &pool, a.method, &p.empty_scores).data("scoring the pool")?;
    let _lock = ctx.lock()?;
    write_file(&ctx.path(format!("uncertainty_{}.csv", a.method)), reports_csv(&reports))?;
    let empty = reports.iter().filter(|r| r.empty).count();
    let mean = reports.iter().map(|r| r.score).sum::<f64>() / reports.len().max(1) as f64;
    println!(
        "scored {} pool images with {}: mean {mean:.4}, {empty} without detections",
        reports.len(),
        a.method
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Pool state JSON from an earlier `select`; defaults to the dataset's train/pool manifests
    #[arg(long)]
    pub state: Option<PathBuf>,

    #[command(flatten)]
    pub preds: PredictionArgs,

    /// Images to select per round
    #[arg(long)]
    pub k: Option<usize>,

    /// average, max, sum or random
    #[arg(long, value_parser = parse_acquisition)]
    pub method: Option<Acquisition>,

    /// move or copy
    #[arg(long, value_parser = parse_update)]
    pub update: Option<PoolUpdate>,
}

pub fn select(ctx: &Ctx, a: SelectArgs) -> CmdResult {
    let ds = ctx.dataset(&a.data)?;
    let state = ctx.pool_state(&ds, &a.state)?;
    let p = policy(ctx, a.method, a.k, a.update)?;
    if state.unlabeled.is_empty() {
        return Err(Fail::data("the unlabeled pool is empty"));
    }
    let mut source = provider(ctx, &ds, &a.preds)?;
    let selected = select_round(&state, source.as_mut(), &p).data("selecting")?;
    let next = apply_selection(&state, &selected, p.update, &ds).internal("applying the selection")?;
    let net_new = next.history.last().map_or(0, |h| h.net_new.len());

    let _lock = ctx.lock()?;
    write_file(
        &ctx.path("selections").join(format!("round{}.txt", state.round)),
        selection_manifest(&selected),
    )?;
    write_file(
        &ctx.path("state.json"),
        serde_json::to_string_pretty(&next).internal("serializing pool state")? + "\n",
    )?;
    println!(
        "round {}: selected {} ({} new) by {}/{}; labeled {}, unlabeled {}",
        state.round,
        selected.len(),
        net_new,
        p.acquisition,
        p.update,
        next.labeled.len(),
        next.unlabeled.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct AlSimArgs {
    /// Dataset root; without one a seeded surrogate dataset is generated
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Surrogate only: images labeled at the start
    #[arg(long)]
    pub initial_labeled: Option<usize>,

    /// Surrogate only: scale relative to the full-size surrogate
    #[arg(long)]
    pub surrogate_scale: Option<f64>,

    #[command(flatten)]
    pub preds: PredictionArgs,

    /// Comma-separated acquisitions: average, max, sum, random
    #[arg(long, value_delimiter = ',', value_parser = parse_acquisition)]
    pub methods: Vec<Acquisition>,

    /// Comma-separated pool updates: move, copy
    #[arg(long, value_delimiter = ',', value_parser = parse_update)]
    pub updates: Vec<PoolUpdate>,

    /// Images to select per round
    #[arg(long)]
    pub k: Option<usize>,

    /// Maximum selection rounds (a move run also stops when the pool is empty)
    #[arg(long)]
    pub rounds: Option<usize>,

    /// Split the per-round model is scored on
    #[arg(long, value_enum, default_value_t = SplitArg::Valid)]
    pub eval_split: SplitArg,

    /// Skip per-round evaluation
    #[arg(long)]
    pub no_eval: bool,
}

fn sim_dataset(ctx: &Ctx, a: &AlSimArgs) -> CmdResult<Dataset> {
    if ctx.dataset_root(&a.data).is_some() {
        if a.initial_labeled.is_some() || a.surrogate_scale.is_some() {
            return Err(Fail::usage("--initial-labeled and --surrogate-scale apply only without a dataset"));
        }
        return ctx.dataset(&a.data);
    }
    let mut spec = match a.surrogate_scale {
        Some(f) => SurrogateSpec::scaled(f),
        None => ctx.cfg.surrogate.clone().unwrap_or_default(),
    };
    spec.seed = ctx.seed;
    spec.initial_labeled = a.initial_labeled.or(spec.initial_labeled).or(Some(230));
    surrogate_dataset(&spec).usage("building the surrogate dataset")
}

pub fn al_sim(ctx: &Ctx, a: AlSimArgs) -> CmdResult {
    let ds = sim_dataset(ctx, &a)?;
    let methods = if a.methods.is_empty() {
        vec![policy(ctx, None, None, None)?.acquisition]
    } else {
        a.methods.clone()
    };
    let updates = if a.updates.is_empty() {
        vec![policy(ctx, None, None, None)?.update]
    } else {
        a.updates.clone()
    };
    let rounds = a.rounds.or(ctx.cfg.selection.rounds).unwrap_or(7);
    let matching = ctx.cfg.eval.unwrap_or_default();
    let eval_images: Vec<&ImageRecord> = ds.split(Split::from(a.eval_split)).collect();
    if !a.no_eval && eval_images.is_empty() {
        return Err(Fail::data(format!(
            "the {} split is empty; pass --no-eval or another --eval-split",
            Split::from(a.eval_split)
        )));
    }
    let initial = ctx.pool_state(&ds, &None)?;
    if initial.unlabeled.is_empty() {
        return Err(Fail::data("the dataset has no pool images to select from"));
    }

    let mut combos = Vec::new();
    for &m in &methods {
        for &u in &updates {
            combos.push(policy(ctx, Some(m), a.k, Some(u))?);
        }
    }
    // surface detector errors before taking the lock
    provider(ctx, &ds, &a.preds)?;

    let _lock = ctx.lock()?;
    let started = Instant::now();
    let outcomes: Vec<(SelectionPolicy, RunOutcome)> = combos
        .par_iter()
        .map(|p| {
            let mut source = provider(ctx, &ds, &a.preds)?;
            let mut evaluator = ProviderEvaluator {
                provider: provider(ctx, &ds, &a.preds)?,
                images: eval_images.clone(),
                num_classes: ds.classes().len(),
                matching,
            };
            let ev: Option<&mut dyn RoundEvaluator> = if a.no_eval { None } else { Some(&mut evaluator) };
            let out = run_rounds(initial.clone(), source.as_mut(), p, rounds, &ds, ev)
                .data(format!("{}/{} run", p.acquisition, p.update))?;
            Ok((*p, out))
        })
        .collect::<CmdResult<_>>()?;

    let mut outcomes = outcomes;
    outcomes.sort_by_key(|(p, _)| report_order(&p.acquisition, p.update));
    let mut logs = Vec::new();
    for (p, out) in &outcomes {
        write_file(&ctx.path(log_file_name(&p.acquisition, p.update)), out.log.to_csv())?;
        write_outcome_selections(&ctx.path("selections").join(format!("{}_{}", p.acquisition, p.update)), out)?;
        logs.push(LabeledLog::new(method_label(&p.acquisition), strategy_label(p.update), out.log.clone()));
    }
    print!("{}", growth_table(&logs).internal("growth table")?.to_text());
    if !a.no_eval {
        println!();
        print!("{}", score_table(&logs).internal("score table")?.to_text());
    }
    ctx.note(format!(
        "{} runs over {} images in {:.2} s",
        outcomes.len(),
        ds.len(),
        started.elapsed().as_secs_f64()
    ));
    Ok(())
}

fn write_outcome_selections(dir: &Path, out: &RunOutcome) -> CmdResult {
    for h in &out.state.history {
        write_file(&dir.join(format!("round{}.txt", h.round)), selection_manifest(&h.selected))?;
    }
    Ok(())
}
