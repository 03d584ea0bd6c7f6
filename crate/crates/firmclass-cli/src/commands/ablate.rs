use std::collections::HashMap;

use firmclass::dataset::AssignmentDataset;
use firmclass::embedding::EmbeddingStore;
use firmclass::metrics::accuracy_macro_f1;
use firmclass::taxonomy::{NodeId, TaxonomyTree};
use firmclass::train::{infer, train, ModelKind, TrainConfig};
use firmclass::{Error, Result};

use super::common;
use crate::AblateArgs;

const VARIANTS: [ModelKind; 3] = [
    ModelKind::Full,
    ModelKind::NoHierarchy,
    ModelKind::NoHierarchyNoDynamic,
];

struct RunResult {
    seed: u64,
    kind: ModelKind,
    accuracy: f64,
    macro_f1: f64,
}

/// Trains one variant under one seed and scores it on the held-out period.
fn run_one(
    cfg: &TrainConfig,
    tree: &TaxonomyTree,
    data: &AssignmentDataset,
    store: &EmbeddingStore,
    truth: &AssignmentDataset,
    truth_period: &str,
) -> Result<(f64, f64)> {
    let (model, _) = train(data, tree, store, cfg)?;
    let firms: Vec<String> = truth.records.iter().map(|r| r.firm.clone()).collect();
    let (predictions, failures) = infer(&model, tree, store, &firms, truth_period)?;
    if !failures.is_empty() {
        return Err(Error::Missing(format!(
            "{} truth firms lack embeddings for period '{truth_period}'",
            failures.len()
        )));
    }
    let by_firm: HashMap<&str, NodeId> = predictions
        .iter()
        .map(|p| (p.firm.as_str(), p.node))
        .collect();
    let pred: Vec<NodeId> = truth.records.iter().map(|r| by_firm[r.firm.as_str()]).collect();
    let target: Vec<NodeId> = truth.records.iter().map(|r| r.node).collect();
    let report = accuracy_macro_f1(&pred, &target, tree, truth.focal_level, false)?;
    Ok((report.accuracy, report.macro_f1))
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let resolved = crate::config::resolve(&args.opts)?;
    let mut base = resolved.cfg;
    let seeds = crate::config::parse_seeds(&args.seeds)?;

    let tree = TaxonomyTree::parse_file(&args.data.taxonomy)?;
    let pinned = resolved.focal_explicit.then_some(base.focal_level);
    let data = common::load_assignment_file(&args.data.assignments, &tree, pinned)?;
    base.focal_level = data.focal_level;
    let truth = common::load_assignment_file(&args.truth, &tree, Some(data.focal_level))?;
    let truth_period = truth.period_labels[0].clone();
    let store = common::load_store(
        &args.data.firm_embeddings,
        &args.data.definitions,
        &tree,
        base.dimension,
    )?;

    let jobs: Vec<(u64, ModelKind)> = seeds
        .iter()
        .flat_map(|&seed| VARIANTS.iter().map(move |&kind| (seed, kind)))
        .collect();
    let run_job = |&(seed, kind): &(u64, ModelKind)| -> Result<RunResult> {
        let cfg = TrainConfig { kind, seed, ..base.clone() };
        let (accuracy, macro_f1) = run_one(&cfg, &tree, &data, &store, &truth, &truth_period)?;
        Ok(RunResult { seed, kind, accuracy, macro_f1 })
    };
    let results: Vec<RunResult> = if args.parallel_seeds {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(|| run_job(job))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        jobs.iter().map(run_job).collect::<Result<_>>()?
    };

    let mut per_run = String::from("seed,variant,accuracy,macro_f1\n");
    for r in &results {
        per_run.push_str(&format!("{},{},{},{}\n", r.seed, r.kind.name(), r.accuracy, r.macro_f1));
    }
    match &args.out {
        Some(path) => std::fs::write(path, &per_run)?,
        None => print!("{per_run}"),
    }

    let mean = |kind: ModelKind, f: fn(&RunResult) -> f64| -> f64 {
        let vals: Vec<f64> = results.iter().filter(|r| r.kind == kind).map(f).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let full_acc = mean(ModelKind::Full, |r| r.accuracy);
    println!("variant,mean_accuracy,mean_macro_f1,accuracy_delta_vs_full");
    for kind in VARIANTS {
        let acc = mean(kind, |r| r.accuracy);
        let f1 = mean(kind, |r| r.macro_f1);
        println!("{},{acc},{f1},{}", kind.name(), full_acc - acc);
    }
    Ok(())
}
