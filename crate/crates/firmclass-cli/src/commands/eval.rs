use std::collections::HashMap;
use std::path::Path;

use firmclass::metrics::{
    accuracy_macro_f1, mean_tree_distance, misclassification_cost, production_rate_accuracy,
    CostCase, EtrTable, ScoredCase,
};
use firmclass::taxonomy::{NodeId, TaxonomyTree};
use firmclass::{Error, Result};

use super::common;
use crate::EvalArgs;

fn load_income(path: &Path) -> Result<HashMap<String, f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut incomes = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (firm, income) = line.split_once(',').ok_or_else(|| Error::Load {
            row: i + 1,
            msg: "expected firm_id,income".into(),
        })?;
        let income: f64 = income.trim().parse().map_err(|_| Error::Load {
            row: i + 1,
            msg: format!("bad income '{income}'"),
        })?;
        incomes.insert(firm.trim().to_string(), income);
    }
    Ok(incomes)
}

fn parse_rates(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad production rate '{s}'")))
        })
        .collect()
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let tree = TaxonomyTree::parse_file(&args.taxonomy)?;
    let truth = common::load_assignment_file(&args.truth, &tree, None)?;
    let predictions = common::load_predictions(&args.predictions, &tree)?;

    let predicted_by_firm: HashMap<&str, &common::PredictionRow> =
        predictions.iter().map(|p| (p.firm.as_str(), p)).collect();
    let truth_by_firm: HashMap<&str, NodeId> = truth
        .records
        .iter()
        .map(|r| (r.firm.as_str(), r.node))
        .collect();
    let missing_predictions: Vec<&str> = truth_by_firm
        .keys()
        .filter(|f| !predicted_by_firm.contains_key(*f))
        .copied()
        .collect();
    let missing_truth: Vec<&str> = predicted_by_firm
        .keys()
        .filter(|f| !truth_by_firm.contains_key(*f))
        .copied()
        .collect();
    if !missing_predictions.is_empty() || !missing_truth.is_empty() {
        let mut msg = String::from("firm ids do not align:");
        let mut list = |label: &str, ids: &[&str]| {
            if !ids.is_empty() {
                let mut ids: Vec<&str> = ids.to_vec();
                ids.sort();
                msg.push_str(&format!(" {label}: {}.", ids.join(", ")));
            }
        };
        list("missing from predictions", &missing_predictions);
        list("missing from truth", &missing_truth);
        return Err(Error::Domain(msg));
    }

    // Fixed firm order (truth-file order) for every metric.
    let firms: Vec<&str> = truth.records.iter().map(|r| r.firm.as_str()).collect();
    let pred: Vec<NodeId> = firms.iter().map(|f| predicted_by_firm[f].node).collect();
    let target: Vec<NodeId> = firms.iter().map(|f| truth_by_firm[f]).collect();

    let report = accuracy_macro_f1(&pred, &target, &tree, truth.focal_level, args.present_only)?;
    let distance = if args.tree_distance {
        Some(mean_tree_distance(&pred, &target, &tree)?)
    } else {
        None
    };
    let pr_curve = match &args.production_rates {
        Some(spec) => {
            let cases: Vec<ScoredCase> = firms
                .iter()
                .map(|f| ScoredCase {
                    firm: f.to_string(),
                    predicted: predicted_by_firm[f].node,
                    truth: truth_by_firm[f],
                    score: predicted_by_firm[f].probability,
                })
                .collect();
            Some(production_rate_accuracy(&cases, &parse_rates(spec)?)?)
        }
        None => None,
    };
    let cost = if args.cost {
        let etr_path = args
            .etr
            .as_ref()
            .ok_or_else(|| Error::Config("--cost requires --etr".into()))?;
        let income_path = args
            .income
            .as_ref()
            .ok_or_else(|| Error::Config("--cost requires --income".into()))?;
        let etr = EtrTable::parse(&std::fs::read_to_string(etr_path)?, &tree)?;
        let incomes = load_income(income_path)?;
        let cases: Vec<CostCase> = firms
            .iter()
            .map(|f| {
                let income = *incomes.get(*f).ok_or_else(|| {
                    Error::Missing(format!("no income for firm '{f}'"))
                })?;
                Ok(CostCase {
                    firm: f.to_string(),
                    predicted: predicted_by_firm[f].node,
                    truth: truth_by_firm[f],
                    income,
                })
            })
            .collect::<Result<_>>()?;
        Some(misclassification_cost(&cases, &etr)?)
    } else {
        None
    };

    if args.json {
        let obj = serde_json::json!({
            "cases": report.cases,
            "focal_level": truth.focal_level,
            "accuracy": report.accuracy,
            "macro_f1": report.macro_f1,
            "mean_tree_distance": distance,
            "production_rate_accuracy": pr_curve,
            "misclassification_cost": cost,
            "per_class": report.per_class,
        });
        println!("{}", serde_json::to_string_pretty(&obj)?);
        return Ok(());
    }

    println!("cases: {}", report.cases);
    println!("accuracy: {:.4}", report.accuracy);
    println!("macro F1: {:.4}", report.macro_f1);
    if let Some(d) = distance {
        println!("mean tree distance: {d:.4}");
    }
    if let Some(curve) = &pr_curve {
        for (rate, acc) in curve {
            println!("production rate {rate}: accuracy {acc:.4}");
        }
    }
    if let Some(mc) = cost {
        println!("misclassification cost: {mc:.4}");
    }
    println!("class,tp,fp,fn,precision,recall,f1");
    for c in &report.per_class {
        println!(
            "{},{},{},{},{:.4},{:.4},{:.4}",
            c.code, c.true_positives, c.false_positives, c.false_negatives, c.precision, c.recall,
            c.f1
        );
    }
    Ok(())
}
