//! Dynamic industry representations: a generic multi-head attention block,
//! bottom-up spatial aggregation over the tree (separately for
//! assignment-derived and definition-derived vectors), and temporal
//! aggregation across periods.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{uniform_tensor, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree, ROOT};

/// One attention head: full-width d×d query/key/value projections. Heads are
/// not split across the embedding dimension; each carries its own d×d maps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Parameters of one attention block: `h` heads, an output projection from
/// the [h·d, 1] concatenation back to d, and the residual post-transform
/// relu(W₁(q + o) + b₁). Total scalar count is (4h+1)d² + d.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MhaParams {
    pub heads: Vec<HeadParams>,
    pub wo: Tensor, // [d, h*d]
    pub w1: Tensor, // [d, d]
    pub b1: Tensor, // [d, 1]
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

#[derive(Clone, Debug)]
pub struct MhaVars {
    pub heads: Vec<HeadVars>,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
}

impl MhaParams {
    pub fn init<R: Rng>(dimension: usize, heads: usize, rng: &mut R) -> Self {
        let d = dimension;
        let bound = (1.0 / d as f64).sqrt();
        MhaParams {
            heads: (0..heads)
                .map(|_| HeadParams {
                    wq: uniform_tensor(vec![d, d], bound, rng),
                    wk: uniform_tensor(vec![d, d], bound, rng),
                    wv: uniform_tensor(vec![d, d], bound, rng),
                })
                .collect(),
            wo: uniform_tensor(vec![d, heads * d], bound, rng),
            w1: uniform_tensor(vec![d, d], bound, rng),
            b1: Tensor::zeros(vec![d, 1]),
        }
    }

    pub fn dimension(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn param_count(&self) -> usize {
        self.heads
            .iter()
            .map(|h| h.wq.numel() + h.wk.numel() + h.wv.numel())
            .sum::<usize>()
            + self.wo.numel()
            + self.w1.numel()
            + self.b1.numel()
    }

    pub fn leaves(&self, tape: &mut Tape) -> MhaVars {
        MhaVars {
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars {
                    wq: tape.leaf(h.wq.clone()),
                    wk: tape.leaf(h.wk.clone()),
                    wv: tape.leaf(h.wv.clone()),
                })
                .collect(),
            wo: tape.leaf(self.wo.clone()),
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
        }
    }
}

/// Attention over `cols` with query `q`, both length-d on the tape. Returns
/// the post-transformed output and the per-head attention-weight vectors
/// ([n, 1] each) for diagnostics and convexity checks.
pub fn mha(
    tape: &mut Tape,
    params: &MhaVars,
    q: Var,
    cols: &[Var],
) -> Result<(Var, Vec<Var>)> {
    if cols.is_empty() {
        return Err(Error::Shape("attention over zero columns".into()));
    }
    let d = tape.value(q).rows();
    let keys = tape.concat_cols(cols)?;
    let scale = 1.0 / (d as f64).sqrt();

    let mut head_outputs = Vec::with_capacity(params.heads.len());
    let mut head_weights = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let qh = tape.matmul(head.wq, q)?; // [d, 1]
        let kh = tape.matmul(head.wk, keys)?; // [d, n]
        let qh_t = tape.transpose(qh)?;
        let scores = tape.matmul(qh_t, kh)?; // [1, n]
        let scores = tape.scale(scores, scale);
        let scores = tape.transpose(scores)?; // [n, 1]
        let beta = tape.softmax(scores, 0)?;
        let vh = tape.matmul(head.wv, keys)?; // [d, n]
        let out = tape.matmul(vh, beta)?; // [d, 1]
        head_outputs.push(out);
        head_weights.push(beta);
    }
    let stacked = tape.concat_rows(&head_outputs)?; // [h*d, 1]
    let o = tape.matmul(params.wo, stacked)?;
    let residual = tape.add(q, o)?;
    let z = tape.matmul(params.w1, residual)?;
    let z = tape.add(z, params.b1)?;
    Ok((tape.relu(z), head_weights))
}

/// Mean-of-columns query over the same columns attention will see.
pub fn mean_query(tape: &mut Tape, cols: &[Var]) -> Result<Var> {
    let stacked = tape.concat_cols(cols)?;
    tape.mean_cols(stacked)
}

/// Learnable per-leaf, per-period vectors seeding the assignment-derived
/// spatial pass. Logical shape (N_L, T, d), stored as a table of [d, 1]
/// tensors indexed by leaf position (within the leaf level, in tree order)
/// then period.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafKnowledgeTable {
    pub vectors: Vec<Vec<Tensor>>,
}

impl LeafKnowledgeTable {
    pub fn init<R: Rng>(leaves: usize, periods: usize, dimension: usize, rng: &mut R) -> Self {
        let bound = (1.0 / dimension as f64).sqrt();
        LeafKnowledgeTable {
            vectors: (0..leaves)
                .map(|_| {
                    (0..periods)
                        .map(|_| uniform_tensor(vec![dimension, 1], bound, rng))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.vectors
            .iter()
            .flat_map(|per_leaf| per_leaf.iter())
            .map(Tensor::numel)
            .sum()
    }

    pub fn leaves_on_tape(&self, tape: &mut Tape) -> Vec<Vec<Var>> {
        self.vectors
            .iter()
            .map(|per_leaf| per_leaf.iter().map(|v| tape.leaf(v.clone())).collect())
            .collect()
    }
}

/// Per-node vectors produced by one forward pass, all living on one tape:
/// assignment-derived v^(A,t), definition-derived v^(D), and the temporally
/// fused v^(t).
#[derive(Clone, Debug, Default)]
pub struct DirCache {
    pub assign: HashMap<(NodeId, usize), Var>,
    pub definition: HashMap<NodeId, Var>,
    pub combined: HashMap<(NodeId, usize), Var>,
}

/// Bottom-up spatial pass. `gamma` indexes leaf-level nodes in tree order,
/// then periods 1..=T (position t-1). `definitions` maps every non-root node
/// to its raw definition-embedding leaf on the tape. The assignment pass
/// reads only `gamma`; the definition pass reads only `definitions`.
pub fn spatial_forward(
    tape: &mut Tape,
    tree: &TaxonomyTree,
    gamma: &[Vec<Var>],
    definitions: &HashMap<NodeId, Var>,
    theta: &MhaVars,
    periods: usize,
) -> Result<DirCache> {
    let leaf_level = tree.depth();
    if gamma.len() != tree.level_count(leaf_level) {
        return Err(Error::Shape(format!(
            "leaf table covers {} leaves but the tree has {}",
            gamma.len(),
            tree.level_count(leaf_level)
        )));
    }
    let mut cache = DirCache::default();

    // Assignment-derived vectors: leaves come straight from the table, inner
    // nodes attend over their children with a mean query.
    for (pos, &leaf) in tree.level(leaf_level).iter().enumerate() {
        if gamma[pos].len() != periods {
            return Err(Error::Shape(format!(
                "leaf table has {} periods, expected {periods}",
                gamma[pos].len()
            )));
        }
        for t in 1..=periods {
            cache.assign.insert((leaf, t), gamma[pos][t - 1]);
        }
    }
    for level in (1..leaf_level).rev() {
        for &node in tree.level(level) {
            for t in 1..=periods {
                let cols: Vec<Var> = tree
                    .children(node)
                    .iter()
                    .map(|c| cache.assign[&(*c, t)])
                    .collect();
                let q = mean_query(tape, &cols)?;
                let (out, _) = mha(tape, theta, q, &cols)?;
                cache.assign.insert((node, t), out);
            }
        }
    }

    // Definition-derived vectors: leaves are the raw definition embeddings;
    // inner nodes attend over their own raw embedding plus the children's
    // aggregated vectors.
    for &leaf in tree.level(leaf_level) {
        cache.definition.insert(leaf, definitions[&leaf]);
    }
    for level in (1..leaf_level).rev() {
        for &node in tree.level(level) {
            let mut cols = vec![definitions[&node]];
            cols.extend(tree.children(node).iter().map(|c| cache.definition[c]));
            let q = mean_query(tape, &cols)?;
            let (out, _) = mha(tape, theta, q, &cols)?;
            cache.definition.insert(node, out);
        }
    }
    Ok(cache)
}

/// Temporal pass: for every node and period t, attend from v^(A,t) over
/// [v^(D), v^(A,1), ..., v^(A,t)] with the independent parameter set.
pub fn temporal_forward(
    tape: &mut Tape,
    tree: &TaxonomyTree,
    cache: &mut DirCache,
    theta_prime: &MhaVars,
    periods: usize,
) -> Result<()> {
    for node in tree.all_nodes() {
        if node.id == ROOT {
            continue;
        }
        for t in 1..=periods {
            let q = cache.assign[&(node.id, t)];
            let mut cols = vec![cache.definition[&node.id]];
            cols.extend((1..=t).map(|s| cache.assign[&(node.id, s)]));
            let (out, _) = mha(tape, theta_prime, q, &cols)?;
            cache.combined.insert((node.id, t), out);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_diff, max_rel_err};
    use crate::taxonomy::tests::{at, example_tree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line evaluation of the attention block with plain loops: the
    /// independent oracle for the tape implementation.
    fn naive_mha(params: &MhaParams, q: &Tensor, cols: &[Tensor]) -> Vec<f64> {
        let d = q.rows();
        let n = cols.len();
        let matvec = |m: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..m.rows())
                .map(|i| (0..m.cols()).map(|j| m.at(i, j) * v[j]).sum::<f64>())
                .collect()
        };
        let mut concat = Vec::new();
        for head in &params.heads {
            let qh = matvec(&head.wq, q.data());
            let mut scores = Vec::with_capacity(n);
            for c in cols {
                let kh = matvec(&head.wk, c.data());
                let dot: f64 = qh.iter().zip(&kh).map(|(a, b)| a * b).sum();
                scores.push(dot / (d as f64).sqrt());
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let beta: Vec<f64> = exps.iter().map(|e| e / z).collect();
            let mut out = vec![0.0; d];
            for (b, c) in beta.iter().zip(cols) {
                let vh = matvec(&head.wv, c.data());
                for (o, v) in out.iter_mut().zip(&vh) {
                    *o += b * v;
                }
            }
            concat.extend(out);
        }
        let o = matvec(&params.wo, &concat);
        let resid: Vec<f64> = q.data().iter().zip(&o).map(|(a, b)| a + b).collect();
        let z = matvec(&params.w1, &resid);
        z.iter()
            .zip(params.b1.data())
            .map(|(v, b)| (v + b).max(0.0))
            .collect()
    }

    fn run_mha(params: &MhaParams, q: &Tensor, cols: &[Tensor]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars = params.leaves(&mut tape);
        let qv = tape.leaf(q.clone());
        let col_vars: Vec<Var> = cols.iter().map(|c| tape.leaf(c.clone())).collect();
        let (out, weights) = mha(&mut tape, &vars, qv, &col_vars).unwrap();
        (
            tape.value(out).data().to_vec(),
            weights
                .iter()
                .map(|&w| tape.value(w).data().to_vec())
                .collect(),
        )
    }

    #[test]
    fn singleton_attention_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = MhaParams::init(4, 2, &mut rng);
        let q = uniform_tensor(vec![4, 1], 1.0, &mut rng);
        let c = uniform_tensor(vec![4, 1], 1.0, &mut rng);
        let (_, weights) = run_mha(&params, &q, &[c]);
        for w in weights {
            assert_eq!(w, vec![1.0]);
        }
    }

    #[test]
    fn identical_columns_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = MhaParams::init(4, 2, &mut rng);
        let q = uniform_tensor(vec![4, 1], 1.0, &mut rng);
        let c = uniform_tensor(vec![4, 1], 1.0, &mut rng);
        let (_, weights) = run_mha(&params, &q, &[c.clone(), c.clone(), c]);
        for w in weights {
            for v in w {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let params = MhaParams::init(8, 2, &mut rng);
            let q = uniform_tensor(vec![8, 1], 1.0, &mut rng);
            let cols: Vec<Tensor> = (0..3)
                .map(|_| uniform_tensor(vec![8, 1], 1.0, &mut rng))
                .collect();
            let (got, _) = run_mha(&params, &q, &cols);
            let want = naive_mha(&params, &q, &cols);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "trial {trial}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn weights_are_convex_over_many_invocations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = MhaParams::init(6, 2, &mut rng);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let q = uniform_tensor(vec![6, 1], 3.0, &mut rng);
            let cols: Vec<Tensor> = (0..n)
                .map(|_| uniform_tensor(vec![6, 1], 3.0, &mut rng))
                .collect();
            let (_, weights) = run_mha(&params, &q, &cols);
            for w in weights {
                assert!(w.iter().all(|&v| v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (d, h) in [(4, 1), (8, 2), (16, 3)] {
            let params = MhaParams::init(d, h, &mut rng);
            assert_eq!(params.param_count(), (4 * h + 1) * d * d + d);
        }
    }

    fn identity_params(d: usize) -> MhaParams {
        let eye = |rows: usize, cols: usize| {
            let mut m = Tensor::zeros(vec![rows, cols]);
            for i in 0..rows.min(cols) {
                m.set(i, i, 1.0);
            }
            m
        };
        MhaParams {
            heads: vec![HeadParams {
                wq: eye(d, d),
                wk: eye(d, d),
                wv: eye(d, d),
            }],
            wo: eye(d, d),
            w1: eye(d, d),
            b1: Tensor::zeros(vec![d, 1]),
        }
    }

    #[test]
    fn single_child_identity_weights_doubles_child() {
        // One child: attention returns the child itself; query is the child;
        // residual doubles it; identity post-transform plus ReLU.
        let child = Tensor::col(vec![0.5, -1.0, 2.0]);
        let params = identity_params(3);
        let mut tape = Tape::new();
        let vars = params.leaves(&mut tape);
        let c = tape.leaf(child.clone());
        let q = mean_query(&mut tape, &[c]).unwrap();
        let (out, _) = mha(&mut tape, &vars, q, &[c]).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.0, 4.0]);
    }

    fn gamma_for(tree: &TaxonomyTree, d: usize, periods: usize, seed: u64) -> LeafKnowledgeTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LeafKnowledgeTable::init(tree.level_count(tree.depth()), periods, d, &mut rng)
    }

    fn defs_for(tree: &TaxonomyTree, d: usize, seed: u64) -> HashMap<NodeId, Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        tree.all_nodes()
            .filter(|n| n.id != ROOT)
            .map(|n| (n.id, uniform_tensor(vec![d, 1], 1.0, &mut rng)))
            .collect()
    }

    fn full_forward(
        tree: &TaxonomyTree,
        theta: &MhaParams,
        theta_prime: &MhaParams,
        gamma: &LeafKnowledgeTable,
        defs: &HashMap<NodeId, Tensor>,
        periods: usize,
    ) -> (Tape, DirCache, MhaVars, MhaVars, Vec<Vec<Var>>) {
        let mut tape = Tape::new();
        let theta_vars = theta.leaves(&mut tape);
        let theta_prime_vars = theta_prime.leaves(&mut tape);
        let gamma_vars = gamma.leaves_on_tape(&mut tape);
        let def_vars: HashMap<NodeId, Var> = defs
            .iter()
            .map(|(&id, v)| (id, tape.leaf(v.clone())))
            .collect();
        let mut cache =
            spatial_forward(&mut tape, tree, &gamma_vars, &def_vars, &theta_vars, periods)
                .unwrap();
        temporal_forward(&mut tape, tree, &mut cache, &theta_prime_vars, periods).unwrap();
        (tape, cache, theta_vars, theta_prime_vars, gamma_vars)
    }

    #[test]
    fn forward_populates_every_node_and_period() {
        let tree = example_tree();
        let (d, h, periods) = (6, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = MhaParams::init(d, h, &mut rng);
        let theta_prime = MhaParams::init(d, h, &mut rng);
        let gamma = gamma_for(&tree, d, periods, 7);
        let defs = defs_for(&tree, d, 8);
        let (tape, cache, ..) = full_forward(&tree, &theta, &theta_prime, &gamma, &defs, periods);
        for node in tree.all_nodes().filter(|n| n.id != ROOT) {
            assert!(cache.definition.contains_key(&node.id));
            for t in 1..=periods {
                assert!(cache.assign.contains_key(&(node.id, t)));
                let v = cache.combined[&(node.id, t)];
                assert_eq!(tape.value(v).shape(), &[d, 1]);
                assert!(tape.value(v).all_finite());
            }
        }
    }

    #[test]
    fn sibling_permutation_leaves_parents_exactly_unchanged() {
        // Same tree shape, but the second sector's three children are listed
        // in a different order; leaf tables and definitions are permuted to
        // match. Parent vectors must be bit-identical.
        let tree = example_tree();
        let permuted_tree = crate::taxonomy::TaxonomyTree::parse(
            "1\tfirst sector\tdef 1\n\
             11\tleaf one one\tdef 11\n\
             12\tleaf one two\tdef 12\n\
             2\tsecond sector\tdef 2\n\
             23\tleaf two three\tdef 23\n\
             21\tleaf two one\tdef 21\n\
             22\tleaf two two\tdef 22\n",
        )
        .unwrap();
        let (d, periods) = (6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = MhaParams::init(d, 2, &mut rng);
        let theta_prime = MhaParams::init(d, 2, &mut rng);
        let gamma = gamma_for(&tree, d, periods, 10);
        let defs = defs_for(&tree, d, 11);

        // Re-key the leaf table and definitions by code so both trees see the
        // same per-code values.
        let leaf_by_code: HashMap<String, Vec<Tensor>> = tree
            .level(2)
            .iter()
            .enumerate()
            .map(|(i, &id)| (tree.node(id).code.clone(), gamma.vectors[i].clone()))
            .collect();
        let defs_by_code: HashMap<String, Tensor> = defs
            .iter()
            .map(|(&id, v)| (tree.node(id).code.clone(), v.clone()))
            .collect();
        let gamma_perm = LeafKnowledgeTable {
            vectors: permuted_tree
                .level(2)
                .iter()
                .map(|&id| leaf_by_code[&permuted_tree.node(id).code].clone())
                .collect(),
        };
        let defs_perm: HashMap<NodeId, Tensor> = permuted_tree
            .all_nodes()
            .filter(|n| n.id != ROOT)
            .map(|n| (n.id, defs_by_code[&n.code].clone()))
            .collect();

        let (tape_a, cache_a, ..) = full_forward(&tree, &theta, &theta_prime, &gamma, &defs, periods);
        let (tape_b, cache_b, ..) =
            full_forward(&permuted_tree, &theta, &theta_prime, &gamma_perm, &defs_perm, periods);

        for code in ["1", "2"] {
            let na = tree.by_code(code).unwrap();
            let nb = permuted_tree.by_code(code).unwrap();
            for t in 1..=periods {
                let a = tape_a.value(cache_a.combined[&(na, t)]).data();
                let b = tape_b.value(cache_b.combined[&(nb, t)]).data();
                assert_eq!(a, b, "node {code} period {t}");
            }
        }
    }

    #[test]
    fn temporal_key_width_grows_with_t() {
        // For t the key matrix is [v^(D), v^(A,1..t)]: with a distinctive
        // later-period leaf vector, v^(t=1) must not depend on it while
        // v^(t=2) must.
        let tree = example_tree();
        let (d, periods) = (4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let theta = MhaParams::init(d, 1, &mut rng);
        let theta_prime = MhaParams::init(d, 1, &mut rng);
        let mut gamma = gamma_for(&tree, d, periods, 14);
        let defs = defs_for(&tree, d, 15);
        let (tape1, cache1, ..) = full_forward(&tree, &theta, &theta_prime, &gamma, &defs, periods);

        // Perturb only period 2 of the first leaf.
        gamma.vectors[0][1].data_mut()[0] += 1.0;
        let (tape2, cache2, ..) = full_forward(&tree, &theta, &theta_prime, &gamma, &defs, periods);

        let leaf = at(&tree, 2, 1);
        let v1_before = tape1.value(cache1.combined[&(leaf, 1)]).data();
        let v1_after = tape2.value(cache2.combined[&(leaf, 1)]).data();
        assert_eq!(v1_before, v1_after);
        let v2_before = tape1.value(cache1.combined[&(leaf, 2)]).data();
        let v2_after = tape2.value(cache2.combined[&(leaf, 2)]).data();
        assert_ne!(v2_before, v2_after);
    }

    #[test]
    fn gradients_reach_all_parameter_groups() {
        let tree = example_tree();
        let (d, periods) = (6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let theta = MhaParams::init(d, 1, &mut rng);
        let theta_prime = MhaParams::init(d, 1, &mut rng);
        let gamma = gamma_for(&tree, d, periods + 1, 17);
        let defs = defs_for(&tree, d, 18);
        let periods = 2;

        // Flatten the parameter groups for the finite-difference oracle:
        // theta.wq, theta_prime.wq, and one leaf vector.
        let params = [
            theta.heads[0].wq.clone(),
            theta_prime.heads[0].wq.clone(),
            gamma.vectors[0][0].clone(),
        ];
        let eval = |ps: &[Tensor]| {
            let mut th = theta.clone();
            th.heads[0].wq = ps[0].clone();
            let mut thp = theta_prime.clone();
            thp.heads[0].wq = ps[1].clone();
            let mut g = gamma.clone();
            g.vectors[0][0] = ps[2].clone();
            let (mut tape, cache, ..) = full_forward(&tree, &th, &thp, &g, &defs, periods);
            // Scalar probe: sum of the sector-level fused vector at t=2.
            let probe = cache.combined[&(at(&tree, 1, 1), 2)];
            let s = tape.sum(probe);
            (tape, s)
        };

        let (mut tape, cache, theta_vars, theta_prime_vars, gamma_vars) =
            full_forward(&tree, &theta, &theta_prime, &gamma, &defs, periods);
        let probe = cache.combined[&(at(&tree, 1, 1), 2)];
        let s = tape.sum(probe);
        let grads = tape.backward(s).unwrap();
        let wq = theta_vars.heads[0].wq;
        let wq_prime = theta_prime_vars.heads[0].wq;
        let gamma00 = gamma_vars[0][0];

        let numeric = central_diff(&params, &mut |ps| {
            let (t, s) = eval(ps);
            t.value(s).item()
        }, 1e-5);
        assert!(max_rel_err(grads.get(wq).unwrap(), &numeric[0]) < 1e-5);
        assert!(max_rel_err(grads.get(wq_prime).unwrap(), &numeric[1]) < 1e-5);
        assert!(max_rel_err(grads.get(gamma00).unwrap(), &numeric[2]) < 1e-5);
    }
}
