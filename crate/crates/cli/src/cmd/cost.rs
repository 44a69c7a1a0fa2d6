use std::path::PathBuf;

use clap::Args;
use detal::cost::{human_flops, human_params, CostModel};

use crate::ctx::Ctx;
use crate::fail::{write_file, Classify, CmdResult, Fail};

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Model files (TOML block graphs)
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
}

pub fn cost(ctx: &Ctx, a: CostArgs) -> CmdResult {
    let mut evaluated = Vec::new();
    for path in &a.models {
        let model = CostModel::load(path).data(format!("loading {}", path.display()))?;
        let (report, shape) = model.evaluate().data(format!("evaluating {}", path.display()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Fail::usage(format!("model path {} has no file name", path.display())))?
            .to_string();
        evaluated.push((stem, model, report, shape));
    }

    let _lock = ctx.lock()?;
    let mut summary = String::from("model,params,flops,output,reference_params,reference_flops\n");
    for (stem, model, report, shape) in &evaluated {
        let table = report.render_table();
        write_file(&ctx.path(format!("cost_{stem}.txt")), &table)?;
        write_file(&ctx.path(format!("cost_{stem}.csv")), report.to_csv())?;
        print!("{table}");
        println!(
            "total {} params, {} FLOPs, output {}x{}x{}",
            human_params(report.params),
            human_flops(report.flops()),
            shape.channels,
            shape.height,
            shape.width
        );
        let (rp, rf) = match &model.reference {
            Some(r) => {
                println!(
                    "reference {} params, {} FLOPs (computed/reference: {:.3} params, {:.3} FLOPs)",
                    human_params(r.params as u64),
                    human_flops(r.flops as u64),
                    report.params as f64 / r.params,
                    report.flops() as f64 / r.flops
                );
                (r.params.to_string(), r.flops.to_string())
            }
            None => (String::new(), String::new()),
        };
        println!();
        summary.push_str(&format!(
            "{stem},{},{},{}x{}x{},{rp},{rf}\n",
            report.params,
            report.flops(),
            shape.channels,
            shape.height,
            shape.width
        ));
    }
    write_file(&ctx.path("cost_summary.csv"), summary)
}
