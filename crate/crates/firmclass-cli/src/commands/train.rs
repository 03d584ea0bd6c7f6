use std::path::{Path, PathBuf};

use firmclass::taxonomy::TaxonomyTree;
use firmclass::train::{save_checkpoint, train};
use firmclass::Result;

use super::common;
use crate::TrainArgs;

fn loss_log_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    checkpoint.with_file_name(format!("{stem}.losses.csv"))
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let resolved = crate::config::resolve(&args.opts)?;
    let mut cfg = resolved.cfg;
    let tree = TaxonomyTree::parse_file(&args.data.taxonomy)?;
    let pinned = resolved.focal_explicit.then_some(cfg.focal_level);
    let data = common::load_assignment_file(&args.data.assignments, &tree, pinned)?;
    // Unless pinned, follow the data rather than the default focal level.
    cfg.focal_level = data.focal_level;
    let store = common::load_store(
        &args.data.firm_embeddings,
        &args.data.definitions,
        &tree,
        cfg.dimension,
    )?;

    let (model, report) = train(&data, &tree, &store, &cfg)?;

    let taxonomy_text = std::fs::read_to_string(&args.data.taxonomy)?;
    std::fs::write(&args.out, save_checkpoint(&model, &taxonomy_text)?)?;

    let loss_path = loss_log_path(&args.out);
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        let val = report
            .val_losses
            .get(i)
            .map(|v| v.to_string())
            .unwrap_or_default();
        csv.push_str(&format!("{},{loss},{val}\n", i + 1));
    }
    std::fs::write(&loss_path, csv)?;

    println!(
        "trained {} model ({} parameters) over {} epochs",
        model.kind.name(),
        model.param_count(),
        report.epoch_losses.len()
    );
    if let Some(best) = report.best_epoch {
        println!("kept epoch {best} (lowest validation loss)");
    }
    if report.skipped_records > 0 {
        println!(
            "skipped {} records without firm embeddings",
            report.skipped_records
        );
    }
    println!("checkpoint: {}", args.out.display());
    println!("loss log: {}", loss_path.display());
    Ok(())
}
