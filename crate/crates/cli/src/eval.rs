use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use samtrack_core::metrics::davis::{self, ANNOTATIONS_DIR};
use samtrack_core::metrics::{aggregate, evaluate, format_table, EvalOptions, EvalReport, GroundTruthSequence, Tolerance};
use samtrack_core::pipeline::manifest::{load_results, MANIFEST_FILE};
use samtrack_core::LabelMap;
use serde_json::json;

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Result directory, directory of label PNGs, or a root with one
    /// subdirectory per sequence.
    #[arg(long)]
    pred: PathBuf,
    /// Annotation directory of one sequence, or a DAVIS-style root.
    #[arg(long)]
    gt: PathBuf,
    /// Boundary tolerance in pixels, or `auto`.
    #[arg(long, default_value = "auto")]
    tol: Tolerance,
    /// Leave the first (prompted) frame out of the scores.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    exclude_first: bool,
    /// Print the full report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn read_pred(dir: &Path) -> anyhow::Result<Vec<LabelMap>> {
    if dir.join(MANIFEST_FILE).is_file() {
        let (_, maps) = load_results(dir)?;
        return Ok(maps);
    }
    let (_, maps) = davis::read_annotations(dir, false)?;
    if maps.is_empty() {
        bail!("no label maps in {}", dir.display());
    }
    Ok(maps)
}

fn name_of(dir: &Path) -> String {
    dir.file_name().and_then(|n| n.to_str()).unwrap_or("sequence").to_string()
}

pub fn run(args: &EvalArgs) -> anyhow::Result<()> {
    let opts = EvalOptions {
        tolerance: args.tol,
        exclude_first: args.exclude_first,
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    if davis::is_davis_root(&args.gt) {
        for seq in davis::sequences(&args.gt)? {
            let (_, gt) = davis::read_davis(&args.gt, &seq)?;
            let preds = read_pred(&args.pred.join(&seq)).with_context(|| format!("sequence {seq}"))?;
            reports.push(evaluate(&preds, &gt, &opts).with_context(|| format!("sequence {seq}"))?);
        }
        if reports.is_empty() {
            bail!("no sequences under {}", args.gt.join(ANNOTATIONS_DIR).display());
        }
    } else {
        let (_, frames) = davis::read_annotations(&args.gt, false)?;
        let gt = GroundTruthSequence::new(name_of(&args.gt), frames)?;
        let preds = read_pred(&args.pred)?;
        reports.push(evaluate(&preds, &gt, &opts)?);
    }
    let summary = aggregate(&reports);
    if args.json {
        println!("{}", json!({ "summary": summary, "sequences": reports }));
    } else {
        print!("{}", format_table(&reports, &summary));
    }
    Ok(())
}
