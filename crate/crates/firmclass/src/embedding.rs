//! Pretrained document-embedding ingestion plus the learnable firm
//! transformation layer. The document encoder itself is external; this module
//! loads its outputs and, for self-contained runs, provides a deterministic
//! feature-hashing stand-in.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{uniform_tensor, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree, ROOT};

/// Fixed-dimension vectors for firms (per period label) and for every
/// industry's definition text.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    pub dimension: usize,
    firm_vectors: HashMap<(String, String), Tensor>,
    definition_vectors: HashMap<NodeId, Tensor>,
}

impl EmbeddingStore {
    pub fn firm_vector(&self, firm: &str, period_label: &str) -> Result<&Tensor> {
        self.firm_vectors
            .get(&(firm.to_string(), period_label.to_string()))
            .ok_or_else(|| {
                Error::Missing(format!(
                    "no embedding for firm '{firm}' in period '{period_label}'"
                ))
            })
    }

    pub fn has_firm_vector(&self, firm: &str, period_label: &str) -> bool {
        self.firm_vectors
            .contains_key(&(firm.to_string(), period_label.to_string()))
    }

    pub fn definition_vector(&self, node: NodeId) -> &Tensor {
        &self.definition_vectors[&node]
    }

    /// Firms with a vector for `period_label`, sorted by id.
    pub fn firms_in_period(&self, period_label: &str) -> Vec<String> {
        let mut firms: Vec<String> = self
            .firm_vectors
            .keys()
            .filter(|(_, l)| l == period_label)
            .map(|(f, _)| f.clone())
            .collect();
        firms.sort();
        firms.dedup();
        firms
    }

    /// Distinct period labels present among firm vectors, sorted.
    pub fn firm_period_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .firm_vectors
            .keys()
            .map(|(_, l)| l.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

fn parse_vector_row(rec: &csv::StringRecord, skip: usize, d: usize, row: usize) -> Result<Tensor> {
    if rec.len() != skip + d {
        return Err(Error::Load {
            row,
            msg: format!(
                "expected {} value columns for dimension {d}, got {}",
                d,
                rec.len() - skip.min(rec.len())
            ),
        });
    }
    let mut data = Vec::with_capacity(d);
    for i in skip..rec.len() {
        let v: f64 = rec[i].trim().parse().map_err(|_| Error::Load {
            row,
            msg: format!("non-numeric value '{}' in column {i}", &rec[i]),
        })?;
        if !v.is_finite() {
            return Err(Error::Load {
                row,
                msg: format!("non-finite value in column {i}"),
            });
        }
        data.push(v);
    }
    Tensor::new(vec![d, 1], data)
}

/// Loads firm and definition embedding CSVs. Firm file header is
/// `firm_id,period,v0,...`; definition file header is `code,v0,...`. Every
/// non-root taxonomy node must receive a definition vector.
pub fn load_embeddings(
    firm_text: &str,
    definition_text: &str,
    tree: &TaxonomyTree,
    dimension: usize,
) -> Result<EmbeddingStore> {
    if dimension == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut firm_vectors = HashMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(firm_text.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let vec = parse_vector_row(&rec, 2, dimension, row)?;
        let key = (rec[0].trim().to_string(), rec[1].trim().to_string());
        if firm_vectors.insert(key.clone(), vec).is_some() {
            return Err(Error::Load {
                row,
                msg: format!("duplicate firm embedding for '{}' period '{}'", key.0, key.1),
            });
        }
    }

    let mut definition_vectors = HashMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(definition_text.as_bytes());
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let vec = parse_vector_row(&rec, 1, dimension, row)?;
        let code = rec[0].trim();
        let node = tree.by_code(code).ok_or_else(|| Error::Load {
            row,
            msg: format!("definition embedding for unknown code '{code}'"),
        })?;
        if definition_vectors.insert(node, vec).is_some() {
            return Err(Error::Load {
                row,
                msg: format!("duplicate definition embedding for code '{code}'"),
            });
        }
    }
    for node in tree.all_nodes() {
        if node.id != ROOT && !definition_vectors.contains_key(&node.id) {
            return Err(Error::Missing(format!(
                "no definition embedding for industry code '{}'",
                node.code
            )));
        }
    }

    Ok(EmbeddingStore {
        dimension,
        firm_vectors,
        definition_vectors,
    })
}

pub fn load_embeddings_files(
    firm_path: &Path,
    definition_path: &Path,
    tree: &TaxonomyTree,
    dimension: usize,
) -> Result<EmbeddingStore> {
    let firm_text = std::fs::read_to_string(firm_path)?;
    let definition_text = std::fs::read_to_string(definition_path)?;
    load_embeddings(&firm_text, &definition_text, tree, dimension)
}

/// Two-layer perceptron d → 2d → d with ReLU and dropout on the hidden layer.
/// The learnable firm-side transformation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirmTransform {
    pub w1: Tensor, // [2d, d]
    pub b1: Tensor, // [2d, 1]
    pub w2: Tensor, // [d, 2d]
    pub b2: Tensor, // [d, 1]
    pub dropout: f64,
}

/// Tape handles for the transform's four parameter tensors within one
/// forward/backward pass.
#[derive(Clone, Copy, Debug)]
pub struct FirmTransformVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl FirmTransform {
    pub fn init<R: Rng>(dimension: usize, dropout: f64, rng: &mut R) -> Self {
        let d = dimension;
        let bound = (1.0 / d as f64).sqrt();
        FirmTransform {
            w1: uniform_tensor(vec![2 * d, d], bound, rng),
            b1: Tensor::zeros(vec![2 * d, 1]),
            w2: uniform_tensor(vec![d, 2 * d], bound, rng),
            b2: Tensor::zeros(vec![d, 1]),
            dropout,
        }
    }

    pub fn dimension(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w1.numel() + self.b1.numel() + self.w2.numel() + self.b2.numel()
    }

    /// Registers the four parameter tensors as tape leaves.
    pub fn leaves(&self, tape: &mut Tape) -> FirmTransformVars {
        FirmTransformVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// Inverted-dropout mask over the hidden layer: entries are 0 with
    /// probability `dropout`, else 1/(1-dropout).
    pub fn sample_mask<R: Rng>(&self, rng: &mut R) -> Tensor {
        let keep = 1.0 - self.dropout;
        let data = (0..2 * self.dimension())
            .map(|_| {
                if rng.gen::<f64>() < self.dropout {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        Tensor::new(vec![2 * self.dimension(), 1], data).unwrap()
    }

    /// Forward pass on the tape. `mask` of `None` means eval mode (dropout
    /// off); in train mode pass a mask from [`sample_mask`](Self::sample_mask).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: FirmTransformVars,
        input: Var,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let h = tape.matmul(vars.w1, input)?;
        let h = tape.add(h, vars.b1)?;
        let mut h = tape.relu(h);
        if let Some(mask) = mask {
            let m = tape.leaf(mask.clone());
            h = tape.mul_elem(m, h)?;
        }
        let out = tape.matmul(vars.w2, h)?;
        tape.add(out, vars.b2)
    }

    /// Eval-mode transform of a raw vector, off any caller-visible tape.
    pub fn apply_eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let x = tape.leaf(input.clone());
        let y = self.forward(&mut tape, vars, x, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Deterministic bag-of-words feature hashing into `d` buckets with sign
/// hashing, L2-normalized. A stand-in document encoder for synthetic and
/// smoke-test runs only.
pub fn hash_embed(text: &str, d: usize, seed: u64) -> Tensor {
    // FNV-1a, seed-mixed, so the output never depends on platform hashers.
    fn fnv1a(token: &str, seed: u64) -> u64 {
        let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
        for b in token.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
    let mut data = vec![0.0; d];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let token = token.to_lowercase();
        let h = fnv1a(&token, seed);
        let bucket = (h >> 1) as usize % d;
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        data[bucket] += sign;
    }
    let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut data {
            *v /= norm;
        }
    }
    Tensor::new(vec![d, 1], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_diff, max_rel_err};
    use crate::taxonomy::tests::example_tree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defs_csv(tree: &TaxonomyTree, d: usize) -> String {
        let mut out = String::from("code");
        for i in 0..d {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        for n in tree.all_nodes().filter(|n| n.id != ROOT) {
            out.push_str(&n.code);
            for i in 0..d {
                out.push_str(&format!(",{}", (n.id.0 * d + i) as f64 * 0.1));
            }
            out.push('\n');
        }
        out
    }

    #[test]
    fn load_roundtrip() {
        let tree = example_tree();
        let firm = "firm_id,period,v0,v1\nA,2019,1.0,2.0\nA,2020,3.0,4.0\n";
        let store = load_embeddings(firm, &defs_csv(&tree, 2), &tree, 2).unwrap();
        assert_eq!(store.firm_vector("A", "2019").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(store.firm_period_labels(), vec!["2019", "2020"]);
        let n = tree.by_code("23").unwrap();
        assert_eq!(store.definition_vector(n).shape(), &[2, 1]);
    }

    #[test]
    fn zero_vector_accepted() {
        let tree = example_tree();
        let firm = "firm_id,period,v0,v1\nA,2019,0.0,0.0\n";
        let store = load_embeddings(firm, &defs_csv(&tree, 2), &tree, 2).unwrap();
        assert_eq!(store.firm_vector("A", "2019").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let tree = example_tree();
        let firm = "firm_id,period,v0,v1,v2\nA,2019,1.0,2.0,3.0\n";
        let err = load_embeddings(firm, &defs_csv(&tree, 2), &tree, 2).unwrap_err();
        assert!(err.to_string().contains("dimension 2"), "{err}");
    }

    #[test]
    fn missing_definition_coverage_named() {
        let tree = example_tree();
        let defs = defs_csv(&tree, 2);
        // Drop the last definition row.
        let truncated: String = {
            let mut lines: Vec<&str> = defs.trim_end().lines().collect();
            lines.pop();
            lines.join("\n")
        };
        let err = load_embeddings("firm_id,period,v0,v1\n", &truncated, &tree, 2).unwrap_err();
        assert!(err.to_string().contains("'23'"), "{err}");
    }

    #[test]
    fn transform_param_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [2, 6, 32, 400] {
            let t = FirmTransform::init(d, 0.5, &mut rng);
            assert_eq!(t.param_count(), 4 * d * d + 3 * d);
        }
    }

    #[test]
    fn identity_like_weights_reproduce_input() {
        // W1 = [I; 0], W2 = [I 0], zero biases: output = relu(x) path, and for
        // nonnegative x the transform returns x exactly.
        let d = 3;
        let mut w1 = Tensor::zeros(vec![2 * d, d]);
        let mut w2 = Tensor::zeros(vec![d, 2 * d]);
        for i in 0..d {
            w1.set(i, i, 1.0);
            w2.set(i, i, 1.0);
        }
        let t = FirmTransform {
            w1,
            b1: Tensor::zeros(vec![2 * d, 1]),
            w2,
            b2: Tensor::zeros(vec![d, 1]),
            dropout: 0.5,
        };
        let x = Tensor::col(vec![1.0, 0.5, 2.0]);
        assert_eq!(t.apply_eval(&x).unwrap().data(), x.data());
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = FirmTransform::init(4, 0.5, &mut rng);
        let x = Tensor::col(vec![0.3, -0.7, 1.1, 0.0]);
        assert_eq!(
            t.apply_eval(&x).unwrap().data(),
            t.apply_eval(&x.clone()).unwrap().data()
        );
    }

    #[test]
    fn dropout_mask_reproducible_and_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = FirmTransform::init(8, 0.5, &mut rng);
        let m1 = t.sample_mask(&mut ChaCha8Rng::seed_from_u64(4));
        let m2 = t.sample_mask(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(m1.data(), m2.data());
        assert!(m1.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn transform_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 4;
        let t = FirmTransform::init(d, 0.0, &mut rng);
        let x0 = uniform_tensor(vec![d, 1], 1.0, &mut rng);
        let params = [t.w1.clone(), t.b1.clone(), t.w2.clone(), t.b2.clone()];

        let eval = |ps: &[Tensor]| {
            let model = FirmTransform {
                w1: ps[0].clone(),
                b1: ps[1].clone(),
                w2: ps[2].clone(),
                b2: ps[3].clone(),
                dropout: 0.0,
            };
            let mut tape = Tape::new();
            let vars = model.leaves(&mut tape);
            let x = tape.leaf(x0.clone());
            let y = model.forward(&mut tape, vars, x, None).unwrap();
            let s = tape.sum(y);
            (tape, vars, s)
        };

        let (tape, vars, loss) = eval(&params);
        let grads = tape.backward(loss).unwrap();
        let numeric = central_diff(&params, &mut |ps| {
            let (t, _, s) = eval(ps);
            t.value(s).item()
        }, 1e-5);
        assert!(max_rel_err(grads.get(vars.w1).unwrap(), &numeric[0]) < 1e-5);
        assert!(max_rel_err(grads.get(vars.b1).unwrap(), &numeric[1]) < 1e-5);
        assert!(max_rel_err(grads.get(vars.w2).unwrap(), &numeric[2]) < 1e-5);
        assert!(max_rel_err(grads.get(vars.b2).unwrap(), &numeric[3]) < 1e-5);
    }

    #[test]
    fn hash_embed_properties() {
        let a = hash_embed("maker of precision widgets", 16, 7);
        let b = hash_embed("maker of precision widgets", 16, 7);
        assert_eq!(a.data(), b.data());

        let permuted = hash_embed("widgets precision of maker", 16, 7);
        assert_eq!(a.data(), permuted.data());

        let norm: f64 = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let empty = hash_embed("", 16, 7);
        assert!(empty.data().iter().all(|&v| v == 0.0));

        let other_seed = hash_embed("maker of precision widgets", 16, 8);
        assert_ne!(a.data(), other_seed.data());
    }
}
