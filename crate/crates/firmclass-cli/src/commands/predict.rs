use firmclass::taxonomy::TaxonomyTree;
use firmclass::train::{infer, load_checkpoint, ModelKind, Prediction};
use firmclass::{Error, Result};

use super::common;
use crate::PredictArgs;

/// Per-level conditional columns for one prediction: the sibling-normalized
/// probability of the predicted node's ancestor at each level, whose product
/// is the reported probability.
fn conditional_columns(
    tree: &TaxonomyTree,
    kind: ModelKind,
    focal_level: usize,
    p: &Prediction,
) -> Result<Vec<f64>> {
    match (&p.conditionals, kind) {
        (Some(conds), _) => (1..=focal_level)
            .map(|level| {
                let ancestor = tree.ancestor(p.node, focal_level - level)?;
                Ok(conds[&ancestor])
            })
            .collect(),
        // Flat variants decide in a single step: the only conditional is the
        // focal-level probability itself.
        (None, _) => Ok((1..=focal_level)
            .map(|level| if level == focal_level { p.probability } else { 1.0 })
            .collect()),
    }
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let taxonomy_text = std::fs::read_to_string(&args.taxonomy)?;
    let tree = TaxonomyTree::parse(&taxonomy_text)?;
    let checkpoint_text = std::fs::read_to_string(&args.checkpoint)?;
    let model = load_checkpoint(&checkpoint_text, &taxonomy_text)?;
    let store = common::load_store(
        &args.firm_embeddings,
        &args.definitions,
        &tree,
        model.dimension,
    )?;

    let period = match &args.period {
        Some(p) => p.clone(),
        None => store
            .firm_period_labels()
            .pop()
            .ok_or_else(|| Error::Config("embedding file has no periods".into()))?,
    };
    let firms: Vec<String> = match &args.firms {
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect(),
        None => store.firms_in_period(&period),
    };
    if firms.is_empty() {
        return Err(Error::Config(format!(
            "no firms to classify for period '{period}'"
        )));
    }

    let (predictions, failures) = infer(&model, &tree, &store, &firms, &period)?;
    for (firm, err) in &failures {
        log::warn!("skipping firm '{firm}': {err}");
    }

    let mut out = String::from("firm_id,period,predicted_code,probability");
    if args.explain {
        for level in 1..=model.focal_level {
            out.push_str(&format!(",cond_level_{level}"));
        }
    }
    out.push('\n');
    for p in &predictions {
        out.push_str(&format!(
            "{},{period},{},{}",
            p.firm,
            tree.node(p.node).code,
            p.probability
        ));
        if args.explain {
            for c in conditional_columns(&tree, model.kind, model.focal_level, p)? {
                out.push_str(&format!(",{c}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!(
        "classified {} firms for period {period} ({} skipped): {}",
        predictions.len(),
        failures.len(),
        args.out.display()
    );
    Ok(())
}
