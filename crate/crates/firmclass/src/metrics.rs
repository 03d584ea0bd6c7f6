//! Evaluation metrics: accuracy, macro-F1, tree-based misclassification
//! distance, accuracy under partial production-rate coverage, and
//! tax-rate-weighted misclassification cost.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree};

#[derive(Clone, Debug, Serialize)]
pub struct ClassStats {
    pub code: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub cases: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassStats>,
}

/// Accuracy and macro-F1 over focal-level classes. By default every class at
/// the focal level enters the macro average (absent classes contribute 0);
/// `present_only` restricts to classes appearing in the predictions or truth.
pub fn accuracy_macro_f1(
    pred: &[NodeId],
    truth: &[NodeId],
    tree: &TaxonomyTree,
    focal_level: usize,
    present_only: bool,
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("no cases to evaluate".into()));
    }
    for &n in pred.iter().chain(truth) {
        if tree.node(n).level != focal_level {
            return Err(Error::Domain(format!(
                "node '{}' is not at focal level {focal_level}",
                tree.node(n).code
            )));
        }
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();

    let mut per_class = Vec::new();
    let mut f1_sum = 0.0;
    let mut class_count = 0usize;
    for &class in tree.level(focal_level) {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == class && **t == class)
            .count();
        let fp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == class && **t != class)
            .count();
        let fne = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p != class && **t == class)
            .count();
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let present = tp + fp + fne > 0;
        if !present_only || present {
            f1_sum += f1;
            class_count += 1;
        }
        per_class.push(ClassStats {
            code: tree.node(class).code.clone(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fne,
            precision,
            recall,
            f1,
        });
    }
    Ok(EvalReport {
        cases: pred.len(),
        accuracy: correct as f64 / pred.len() as f64,
        macro_f1: if class_count == 0 { 0.0 } else { f1_sum / class_count as f64 },
        per_class,
    })
}

/// Mean tree distance between prediction and truth over all cases.
pub fn mean_tree_distance(pred: &[NodeId], truth: &[NodeId], tree: &TaxonomyTree) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("no cases to evaluate".into()));
    }
    let mut total = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        total += tree.tree_distance(p, t)?;
    }
    Ok(total as f64 / pred.len() as f64)
}

/// One scored prediction case for coverage curves.
#[derive(Clone, Debug)]
pub struct ScoredCase {
    pub firm: String,
    pub predicted: NodeId,
    pub truth: NodeId,
    /// Probability of the most likely focal industry.
    pub score: f64,
}

/// Accuracy over the top ⌈rate·n⌉ cases by score (descending; ties broken by
/// firm id ascending), for each requested production rate.
pub fn production_rate_accuracy(cases: &[ScoredCase], rates: &[f64]) -> Result<Vec<(f64, f64)>> {
    if cases.is_empty() {
        return Err(Error::Domain("no cases to evaluate".into()));
    }
    for &r in rates {
        if !(0.0 < r && r <= 1.0) {
            return Err(Error::Config(format!("production rate {r} outside (0, 1]")));
        }
    }
    let mut order: Vec<&ScoredCase> = cases.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.firm.cmp(&b.firm))
    });
    let n = cases.len();
    Ok(rates
        .iter()
        .map(|&r| {
            let k = ((r * n as f64).ceil() as usize).min(n).max(1);
            let correct = order[..k].iter().filter(|c| c.predicted == c.truth).count();
            (r, correct as f64 / k as f64)
        })
        .collect())
}

/// Level-1 effective tax rates, all strictly inside (0, 1).
#[derive(Clone, Debug)]
pub struct EtrTable {
    rates: HashMap<NodeId, f64>,
}

impl EtrTable {
    pub fn new(rates: HashMap<NodeId, f64>) -> Result<Self> {
        for (&node, &r) in &rates {
            if !(0.0 < r && r < 1.0) {
                return Err(Error::Domain(format!(
                    "effective tax rate {r} for node {node} outside (0, 1)"
                )));
            }
        }
        Ok(EtrTable { rates })
    }

    pub fn rate(&self, node: NodeId) -> Option<f64> {
        self.rates.get(&node).copied()
    }

    /// Parses `code,rate` CSV (rates as fractions, e.g. 0.1564).
    pub fn parse(text: &str, tree: &TaxonomyTree) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let mut rates = HashMap::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let code = rec[0].trim();
            let node = tree.by_code(code).ok_or_else(|| Error::Load {
                row,
                msg: format!("unknown code '{code}' in tax-rate table"),
            })?;
            let rate: f64 = rec[1].trim().parse().map_err(|_| Error::Load {
                row,
                msg: format!("bad rate '{}'", &rec[1]),
            })?;
            rates.insert(node, rate);
        }
        Self::new(rates)
    }
}

/// One firm's data for the cost metric: predicted and true level-1 industry
/// plus income. Callers drop ineligible firms (negative income, industries
/// missing from the table) before calling.
#[derive(Clone, Debug)]
pub struct CostCase {
    pub firm: String,
    pub predicted: NodeId,
    pub truth: NodeId,
    pub income: f64,
}

/// Mean over firms of |ETR(truth) − ETR(pred)| · income.
pub fn misclassification_cost(cases: &[CostCase], etr: &EtrTable) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Domain("no eligible firms for cost metric".into()));
    }
    let mut total = 0.0;
    for case in cases {
        if case.income <= 0.0 {
            return Err(Error::Domain(format!(
                "firm '{}' has non-positive income {}",
                case.firm, case.income
            )));
        }
        let t = etr.rate(case.truth).ok_or_else(|| {
            Error::Missing(format!("no tax rate for true industry of '{}'", case.firm))
        })?;
        let p = etr.rate(case.predicted).ok_or_else(|| {
            Error::Missing(format!(
                "no tax rate for predicted industry of '{}'",
                case.firm
            ))
        })?;
        total += (t - p).abs() * case.income;
    }
    Ok(total / cases.len() as f64)
}
