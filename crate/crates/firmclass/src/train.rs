//! Mini-batch training of the full parameter set against the hierarchical
//! negative log-likelihood, inference for the held-out period, ablated model
//! variants, and checkpointing.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assign::{flat_distribution, hierarchical_distribution};
use crate::attention::{
    spatial_forward, temporal_forward, DirCache, LeafKnowledgeTable, MhaParams, MhaVars,
};
use crate::autodiff::{uniform_tensor, AdamState, Gradients, Tape, Tensor, Var};
use crate::dataset::AssignmentDataset;
use crate::embedding::{EmbeddingStore, FirmTransform, FirmTransformVars};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree, ROOT};

/// Which model variant to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Hierarchical factorization over dynamic industry representations.
    Full,
    /// Flat softmax over the focal level; representations stay dynamic.
    NoHierarchy,
    /// Flat softmax over learnable static per-industry vectors.
    NoHierarchyNoDynamic,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelKind::Full),
            "no-ha" => Ok(ModelKind::NoHierarchy),
            "no-ha-no-dir" => Ok(ModelKind::NoHierarchyNoDynamic),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected full, no-ha, or no-ha-no-dir)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Full => "full",
            ModelKind::NoHierarchy => "no-ha",
            ModelKind::NoHierarchyNoDynamic => "no-ha-no-dir",
        }
    }
}

/// Industry-representation parameters: the attention pipeline for dynamic
/// variants, or a bare vector per focal-level industry for the static one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ReprParams {
    Dynamic {
        theta: MhaParams,
        theta_prime: MhaParams,
        gamma: LeafKnowledgeTable,
    },
    Static {
        vectors: Vec<Tensor>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub dimension: usize,
    pub heads: usize,
    pub periods: usize,
    pub focal_level: usize,
    pub delta: FirmTransform,
    pub repr: ReprParams,
}

/// Tape handles for every parameter tensor, in the same canonical order as
/// [`ModelParams::tensors_mut`].
pub struct ParamVars {
    pub order: Vec<Var>,
    pub delta: FirmTransformVars,
    pub dynamic: Option<(MhaVars, MhaVars, Vec<Vec<Var>>)>,
    pub statics: Option<Vec<Var>>,
}

impl ModelParams {
    pub fn init(
        kind: ModelKind,
        tree: &TaxonomyTree,
        dimension: usize,
        heads: usize,
        periods: usize,
        focal_level: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dimension == 0 || heads == 0 || periods == 0 {
            return Err(Error::Config(
                "dimension, heads, and periods must all be positive".into(),
            ));
        }
        if focal_level == 0 || focal_level > tree.depth() {
            return Err(Error::Config(format!(
                "focal level {focal_level} must be in 1..={}",
                tree.depth()
            )));
        }
        let repr = match kind {
            ModelKind::Full | ModelKind::NoHierarchy => ReprParams::Dynamic {
                theta: MhaParams::init(dimension, heads, rng),
                theta_prime: MhaParams::init(dimension, heads, rng),
                gamma: LeafKnowledgeTable::init(
                    tree.level_count(tree.depth()),
                    periods,
                    dimension,
                    rng,
                ),
            },
            ModelKind::NoHierarchyNoDynamic => ReprParams::Static {
                vectors: tree
                    .level(focal_level)
                    .iter()
                    .map(|_| {
                        uniform_tensor(vec![dimension, 1], (1.0 / dimension as f64).sqrt(), rng)
                    })
                    .collect(),
            },
        };
        let model = ModelParams {
            kind,
            dimension,
            heads,
            periods,
            focal_level,
            delta: FirmTransform::init(dimension, dropout, rng),
            repr,
        };
        // The closed-form parameter count is a structural invariant; a
        // mismatch means a tensor has the wrong shape.
        let (d, h) = (dimension, heads);
        let expected = match kind {
            ModelKind::Full | ModelKind::NoHierarchy => {
                let leaves = tree.level_count(tree.depth());
                (8 * h + 6) * d * d + (leaves * periods + 5) * d
            }
            ModelKind::NoHierarchyNoDynamic => {
                tree.level_count(focal_level) * d + 4 * d * d + 3 * d
            }
        };
        assert_eq!(model.param_count(), expected, "parameter count invariant");
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        let repr = match &self.repr {
            ReprParams::Dynamic {
                theta,
                theta_prime,
                gamma,
            } => theta.param_count() + theta_prime.param_count() + gamma.param_count(),
            ReprParams::Static { vectors } => vectors.iter().map(Tensor::numel).sum(),
        };
        self.delta.param_count() + repr
    }

    /// All parameter tensors in canonical order: transform layer first, then
    /// the representation parameters.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.delta.w1,
            &mut self.delta.b1,
            &mut self.delta.w2,
            &mut self.delta.b2,
        ];
        match &mut self.repr {
            ReprParams::Dynamic {
                theta,
                theta_prime,
                gamma,
            } => {
                for block in [theta, theta_prime] {
                    for head in &mut block.heads {
                        out.push(&mut head.wq);
                        out.push(&mut head.wk);
                        out.push(&mut head.wv);
                    }
                    out.push(&mut block.wo);
                    out.push(&mut block.w1);
                    out.push(&mut block.b1);
                }
                for per_leaf in &mut gamma.vectors {
                    for v in per_leaf {
                        out.push(v);
                    }
                }
            }
            ReprParams::Static { vectors } => out.extend(vectors.iter_mut()),
        }
        out
    }

    /// Registers every parameter on the tape, mirroring the canonical order.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let delta = self.delta.leaves(tape);
        let mut order = vec![delta.w1, delta.b1, delta.w2, delta.b2];
        let mut dynamic = None;
        let mut statics = None;
        match &self.repr {
            ReprParams::Dynamic {
                theta,
                theta_prime,
                gamma,
            } => {
                let tv = theta.leaves(tape);
                let tpv = theta_prime.leaves(tape);
                for block in [&tv, &tpv] {
                    for head in &block.heads {
                        order.extend([head.wq, head.wk, head.wv]);
                    }
                    order.extend([block.wo, block.w1, block.b1]);
                }
                let gv = gamma.leaves_on_tape(tape);
                for per_leaf in &gv {
                    order.extend(per_leaf.iter().copied());
                }
                dynamic = Some((tv, tpv, gv));
            }
            ReprParams::Static { vectors } => {
                let vars: Vec<Var> = vectors.iter().map(|v| tape.leaf(v.clone())).collect();
                order.extend(vars.iter().copied());
                statics = Some(vars);
            }
        }
        ParamVars {
            order,
            delta,
            dynamic,
            statics,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dimension: usize,
    pub heads: usize,
    pub dropout: f64,
    pub focal_level: usize,
    /// Fraction of cases held out per training run to pick the best epoch;
    /// 0 disables validation and returns the final-epoch parameters.
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Full,
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.001,
            seed: 0,
            dimension: 32,
            heads: 2,
            dropout: 0.5,
            focal_level: 2,
            val_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    pub batch_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub skipped_records: usize,
}

/// One training case after embedding lookup: the raw firm vector, the target
/// focal node, and the period index.
#[derive(Clone, Debug)]
struct Case {
    firm_vec: Tensor,
    target: NodeId,
    period: usize,
}

fn definition_leaves(
    tape: &mut Tape,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
) -> HashMap<NodeId, Var> {
    tree.all_nodes()
        .filter(|n| n.id != ROOT)
        .map(|n| (n.id, tape.leaf(store.definition_vector(n.id).clone())))
        .collect()
}

/// Builds the fused industry vectors for dynamic variants.
fn repr_forward(
    tape: &mut Tape,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
    vars: &ParamVars,
    periods: usize,
) -> Result<Option<DirCache>> {
    match &vars.dynamic {
        Some((theta, theta_prime, gamma)) => {
            let defs = definition_leaves(tape, tree, store);
            let mut cache = spatial_forward(tape, tree, gamma, &defs, theta, periods)?;
            temporal_forward(tape, tree, &mut cache, theta_prime, periods)?;
            Ok(Some(cache))
        }
        None => Ok(None),
    }
}

/// Inner product vᵀx as a [1, 1] tape value.
fn score_var(tape: &mut Tape, industry: Var, firm: Var) -> Result<Var> {
    let vt = tape.transpose(industry)?;
    tape.matmul(vt, firm)
}

/// ln P(target | firm) on the tape for one case.
fn case_log_prob(
    tape: &mut Tape,
    tree: &TaxonomyTree,
    model: &ModelParams,
    vars: &ParamVars,
    cache: Option<&DirCache>,
    x: Var,
    target: NodeId,
    period: usize,
) -> Result<Var> {
    let industry_var = |node: NodeId| -> Var {
        match (&vars.statics, cache) {
            (Some(statics), _) => {
                let pos = tree
                    .level(model.focal_level)
                    .iter()
                    .position(|&n| n == node)
                    .expect("focal node");
                statics[pos]
            }
            (None, Some(cache)) => cache.combined[&(node, period)],
            (None, None) => unreachable!("dynamic model without cache"),
        }
    };

    match model.kind {
        ModelKind::Full => {
            // Product of sibling-group softmaxes along the path to the target.
            let mut acc: Option<Var> = None;
            for level in 1..=model.focal_level {
                let anc = tree.ancestor(target, model.focal_level - level)?;
                let parent = tree.parent(anc).expect("non-root");
                let group = tree.children(parent);
                let scores: Vec<Var> = group
                    .iter()
                    .map(|&c| score_var(tape, industry_var(c), x))
                    .collect::<Result<_>>()?;
                let stacked = tape.concat_rows(&scores)?;
                let log_probs = tape.log_softmax(stacked, 0)?;
                let idx = group.iter().position(|&c| c == anc).expect("sibling");
                let term = tape.select(log_probs, idx)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            Ok(acc.expect("focal level ≥ 1"))
        }
        ModelKind::NoHierarchy | ModelKind::NoHierarchyNoDynamic => {
            let group = tree.level(model.focal_level);
            let scores: Vec<Var> = group
                .iter()
                .map(|&c| score_var(tape, industry_var(c), x))
                .collect::<Result<_>>()?;
            let stacked = tape.concat_rows(&scores)?;
            let log_probs = tape.log_softmax(stacked, 0)?;
            let idx = group.iter().position(|&c| c == target).expect("focal node");
            tape.select(log_probs, idx)
        }
    }
}

/// Forward pass for one batch: returns the tape, parameter handles, and the
/// summed negative log-likelihood.
fn batch_forward(
    model: &ModelParams,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
    cases: &[Case],
    masks: Option<&[Tensor]>,
) -> Result<(Tape, ParamVars, Var)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let cache = repr_forward(&mut tape, tree, store, &vars, model.periods)?;

    let mut acc: Option<Var> = None;
    for (i, case) in cases.iter().enumerate() {
        let raw = tape.leaf(case.firm_vec.clone());
        let mask = masks.map(|m| &m[i]);
        let x = model.delta.forward(&mut tape, vars.delta, raw, mask)?;
        let lp = case_log_prob(
            &mut tape,
            tree,
            model,
            &vars,
            cache.as_ref(),
            x,
            case.target,
            case.period,
        )?;
        acc = Some(match acc {
            Some(a) => tape.add(a, lp)?,
            None => lp,
        });
    }
    let total = acc.ok_or_else(|| Error::Config("empty batch".into()))?;
    let loss = tape.neg(total);
    Ok((tape, vars, loss))
}

fn apply_gradients(
    model: &mut ModelParams,
    vars: &ParamVars,
    grads: &Gradients,
    adam: &mut AdamState,
) -> Result<()> {
    let grad_refs: Vec<Option<&Tensor>> = vars.order.iter().map(|&v| grads.get(v)).collect();
    let mut tensors = model.tensors_mut();
    let mut refs: Vec<&mut Tensor> = tensors.iter_mut().map(|t| &mut **t).collect();
    adam.step(&mut refs, &grad_refs)
}

/// Mean per-case NLL on held-out cases, dropout off.
fn eval_loss(
    model: &ModelParams,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
    cases: &[Case],
) -> Result<f64> {
    let (tape, _, loss) = batch_forward(model, tree, store, cases, None)?;
    Ok(tape.value(loss).item() / cases.len() as f64)
}

/// Trains a model per the mini-batch procedure: every epoch permutes the
/// cases and walks them in batches; every batch rebuilds the industry
/// representations from current parameters, accumulates the summed NLL over
/// its cases, backpropagates, and applies one Adam update.
pub fn train(
    data: &AssignmentDataset,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if data.records.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if cfg.focal_level != data.focal_level {
        return Err(Error::Config(format!(
            "config focal level {} does not match dataset focal level {}",
            cfg.focal_level, data.focal_level
        )));
    }
    if store.dimension != cfg.dimension {
        return Err(Error::Config(format!(
            "embedding store dimension {} does not match configured {}",
            store.dimension, cfg.dimension
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ModelParams::init(
        cfg.kind,
        tree,
        cfg.dimension,
        cfg.heads,
        data.periods,
        cfg.focal_level,
        cfg.dropout,
        &mut rng,
    )?;

    // Resolve embeddings once; records without a vector are dropped here.
    let mut report = TrainReport::default();
    let mut cases = Vec::with_capacity(data.records.len());
    for rec in &data.records {
        let label = &data.period_labels[rec.period - 1];
        match store.firm_vector(&rec.firm, label) {
            Ok(v) => cases.push(Case {
                firm_vec: v.clone(),
                target: rec.node,
                period: rec.period,
            }),
            Err(_) => {
                log::warn!(
                    "skipping firm '{}' period '{label}': no embedding vector",
                    rec.firm
                );
                report.skipped_records += 1;
            }
        }
    }
    if cases.is_empty() {
        return Err(Error::Config(
            "no training cases left after dropping records without embeddings".into(),
        ));
    }

    // Optional validation split, carved off once before training.
    let val_count = (cases.len() as f64 * cfg.val_fraction).floor() as usize;
    cases.shuffle(&mut rng);
    let val_cases: Vec<Case> = cases.split_off(cases.len() - val_count);

    let mut adam = AdamState::new(cfg.learning_rate);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        cases.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in cases.chunks(cfg.batch_size).enumerate() {
            let masks: Option<Vec<Tensor>> = if cfg.dropout > 0.0 {
                Some(batch.iter().map(|_| model.delta.sample_mask(&mut rng)).collect())
            } else {
                None
            };
            let (tape, vars, loss) =
                batch_forward(&model, tree, store, batch, masks.as_deref())?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let grads = tape.backward(loss)?;
            apply_gradients(&mut model, &vars, &grads, &mut adam)?;
            report.batch_losses.push(loss_val);
            epoch_loss += loss_val;
        }
        report.epoch_losses.push(epoch_loss / cases.len() as f64);

        if !val_cases.is_empty() {
            let vl = eval_loss(&model, tree, store, &val_cases)?;
            report.val_losses.push(vl);
            if best.as_ref().map_or(true, |(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.clone()));
            }
        }
    }

    if let Some((_, epoch, params)) = best {
        report.best_epoch = Some(epoch);
        Ok((params, report))
    } else {
        Ok((model, report))
    }
}

/// One classified firm with its full focal-level distribution and, for the
/// hierarchical model, the per-node conditionals along every path.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub firm: String,
    pub node: NodeId,
    pub probability: f64,
    pub focal_probs: Vec<(NodeId, f64)>,
    pub conditionals: Option<HashMap<NodeId, f64>>,
}

/// Classifies firms for an unseen period using the final training period's
/// industry representations as a stand-in. Firms without a vector for
/// `period_label` come back as per-firm errors; the rest are unaffected.
pub fn infer(
    model: &ModelParams,
    tree: &TaxonomyTree,
    store: &EmbeddingStore,
    firms: &[String],
    period_label: &str,
) -> Result<(Vec<Prediction>, Vec<(String, Error)>)> {
    // One eval-mode forward gives every industry vector as plain numbers.
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let cache = repr_forward(&mut tape, tree, store, &vars, model.periods)?;
    let industry_vecs: HashMap<NodeId, Vec<f64>> = match (&vars.statics, &cache) {
        (Some(statics), _) => tree
            .level(model.focal_level)
            .iter()
            .zip(statics)
            .map(|(&n, &v)| (n, tape.value(v).data().to_vec()))
            .collect(),
        (None, Some(cache)) => tree
            .all_nodes()
            .filter(|n| n.id != ROOT)
            .map(|n| {
                (
                    n.id,
                    tape.value(cache.combined[&(n.id, model.periods)]).data().to_vec(),
                )
            })
            .collect(),
        (None, None) => unreachable!("dynamic model without cache"),
    };

    let mut predictions = Vec::new();
    let mut failures = Vec::new();
    for firm in firms {
        let raw = match store.firm_vector(firm, period_label) {
            Ok(v) => v,
            Err(e) => {
                failures.push((firm.clone(), e));
                continue;
            }
        };
        let x = model.delta.apply_eval(raw)?;
        let log_score = |n: NodeId| -> f64 {
            industry_vecs[&n]
                .iter()
                .zip(x.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let prediction = match model.kind {
            ModelKind::Full => {
                let dist = hierarchical_distribution(
                    tree,
                    model.focal_level,
                    firm,
                    model.periods + 1,
                    &log_score,
                )?;
                let node = dist.assign(tree);
                Prediction {
                    firm: firm.clone(),
                    node,
                    probability: dist.prob(node),
                    focal_probs: dist.focal_probs(tree),
                    conditionals: Some(dist.conditionals.clone()),
                }
            }
            ModelKind::NoHierarchy | ModelKind::NoHierarchyNoDynamic => {
                let flat = flat_distribution(tree, model.focal_level, &log_score)?;
                let mut focal_probs: Vec<(NodeId, f64)> = tree
                    .level(model.focal_level)
                    .iter()
                    .map(|&n| (n, flat[&n]))
                    .collect();
                let (node, p) = focal_probs
                    .iter()
                    .cloned()
                    .fold(None::<(NodeId, f64)>, |best, (n, p)| match best {
                        Some((bn, bp)) if p < bp || (p == bp && bn < n) => Some((bn, bp)),
                        _ => Some((n, p)),
                    })
                    .expect("focal level nonempty");
                focal_probs.sort_by_key(|(n, _)| *n);
                Prediction {
                    firm: firm.clone(),
                    node,
                    probability: p,
                    focal_probs,
                    conditionals: None,
                }
            }
        };
        predictions.push(prediction);
    }
    Ok((predictions, failures))
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    taxonomy_sha256: String,
    model: ModelParams,
}

pub fn taxonomy_fingerprint(taxonomy_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(taxonomy_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Serializes a model together with a fingerprint of the taxonomy it was
/// trained against.
pub fn save_checkpoint(model: &ModelParams, taxonomy_text: &str) -> Result<String> {
    let cp = Checkpoint {
        version: CHECKPOINT_VERSION,
        taxonomy_sha256: taxonomy_fingerprint(taxonomy_text),
        model: model.clone(),
    };
    Ok(serde_json::to_string(&cp)?)
}

/// Loads a checkpoint, refusing version or taxonomy mismatches.
pub fn load_checkpoint(text: &str, taxonomy_text: &str) -> Result<ModelParams> {
    let cp: Checkpoint = serde_json::from_str(text)?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            cp.version
        )));
    }
    let fp = taxonomy_fingerprint(taxonomy_text);
    if cp.taxonomy_sha256 != fp {
        return Err(Error::Config(
            "checkpoint was trained against a different taxonomy file".into(),
        ));
    }
    Ok(cp.model)
}
