//! Firm–industry compatibility scoring and the hierarchy-respecting
//! probability factorization: conditionals are softmax over sibling groups,
//! and a node's probability is the product of conditionals along its path
//! from the root. All math runs in log-space.

use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree, ROOT};

/// log s(industry, firm) = vᵀx; the score itself is its exponential.
pub fn compat_log_score(industry: &Tensor, firm: &Tensor) -> Result<f64> {
    if !industry.same_shape(firm) {
        return Err(Error::Shape(format!(
            "compat score shapes disagree: {:?} vs {:?}",
            industry.shape(),
            firm.shape()
        )));
    }
    Ok(industry
        .data()
        .iter()
        .zip(firm.data())
        .map(|(a, b)| a * b)
        .sum())
}

pub fn compat_score(industry: &Tensor, firm: &Tensor) -> Result<f64> {
    compat_log_score(industry, firm).map(f64::exp)
}

fn log_softmax_group(log_scores: &[f64]) -> Vec<f64> {
    let m = log_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + log_scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    log_scores.iter().map(|s| s - lse).collect()
}

/// Probabilities for one firm in one period over levels 1..=focal:
/// per-node conditionals given the parent, and cumulative path products.
#[derive(Clone, Debug)]
pub struct AssignmentDistribution {
    pub firm: String,
    pub period: usize,
    pub focal_level: usize,
    /// P(node | parent, firm, period), levels 1..=focal.
    pub conditionals: HashMap<NodeId, f64>,
    /// ln P(node | firm, period), levels 1..=focal.
    pub log_hierarchical: HashMap<NodeId, f64>,
}

impl AssignmentDistribution {
    pub fn prob(&self, node: NodeId) -> f64 {
        self.log_hierarchical[&node].exp()
    }

    /// (node, probability) over the focal level, in tree order.
    pub fn focal_probs(&self, tree: &TaxonomyTree) -> Vec<(NodeId, f64)> {
        tree.level(self.focal_level)
            .iter()
            .map(|&n| (n, self.prob(n)))
            .collect()
    }

    /// Most probable focal node; ties break to the smallest node id.
    pub fn assign(&self, tree: &TaxonomyTree) -> NodeId {
        let mut best = tree.level(self.focal_level)[0];
        let mut best_lp = self.log_hierarchical[&best];
        for &n in &tree.level(self.focal_level)[1..] {
            let lp = self.log_hierarchical[&n];
            if lp > best_lp || (lp == best_lp && n < best) {
                best = n;
                best_lp = lp;
            }
        }
        best
    }
}

/// Builds the hierarchical distribution from per-node log scores. Each
/// sibling group (children of one parent, with the root parenting level 1)
/// is normalized by log-softmax; path products accumulate in log-space.
pub fn hierarchical_distribution(
    tree: &TaxonomyTree,
    focal_level: usize,
    firm: &str,
    period: usize,
    log_score: &dyn Fn(NodeId) -> f64,
) -> Result<AssignmentDistribution> {
    if focal_level == 0 || focal_level > tree.depth() {
        return Err(Error::Config(format!(
            "focal level {focal_level} must be in 1..={}",
            tree.depth()
        )));
    }
    let mut conditionals = HashMap::new();
    let mut log_hierarchical = HashMap::new();
    for level in 1..=focal_level {
        for &parent in tree.level(level - 1) {
            let group = tree.children(parent);
            if group.is_empty() {
                continue;
            }
            let scores: Vec<f64> = group.iter().map(|&c| log_score(c)).collect();
            let log_conds = log_softmax_group(&scores);
            let parent_lp = if parent == ROOT {
                0.0
            } else {
                log_hierarchical[&parent]
            };
            for (&child, lc) in group.iter().zip(&log_conds) {
                conditionals.insert(child, lc.exp());
                log_hierarchical.insert(child, parent_lp + lc);
            }
        }
    }
    Ok(AssignmentDistribution {
        firm: firm.to_string(),
        period,
        focal_level,
        conditionals,
        log_hierarchical,
    })
}

/// Non-hierarchical variant: softmax over every node of one level at once.
pub fn flat_distribution(
    tree: &TaxonomyTree,
    level: usize,
    log_score: &dyn Fn(NodeId) -> f64,
) -> Result<HashMap<NodeId, f64>> {
    if level == 0 || level > tree.depth() {
        return Err(Error::Config(format!(
            "level {level} must be in 1..={}",
            tree.depth()
        )));
    }
    let nodes = tree.level(level);
    let scores: Vec<f64> = nodes.iter().map(|&n| log_score(n)).collect();
    let log_probs = log_softmax_group(&scores);
    Ok(nodes
        .iter()
        .zip(log_probs)
        .map(|(&n, lp)| (n, lp.exp()))
        .collect())
}
