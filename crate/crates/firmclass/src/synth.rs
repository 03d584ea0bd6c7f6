//! Deterministic synthetic-data generator: a uniform-depth taxonomy, firm
//! clusters around hierarchically arranged leaf centers, per-period drift and
//! firm churn, and all the files the pipeline consumes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub levels: usize,
    /// Children per node at each level; length must equal `levels`.
    pub branching: Vec<usize>,
    pub dimension: usize,
    pub firms_per_leaf: usize,
    /// Training periods T; files also cover the held-out period T+1.
    pub periods: usize,
    pub separation: f64,
    pub noise: f64,
    /// Per-period center movement as a fraction of `separation`.
    pub drift: f64,
    /// Per-period probability that a firm exits and is replaced by a new one.
    pub churn: f64,
    /// Level whose codes label the assignment files; 0 means the leaf level.
    pub focal_level: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            levels: 2,
            branching: vec![3, 4],
            dimension: 32,
            firms_per_leaf: 20,
            periods: 3,
            separation: 4.0,
            noise: 0.5,
            drift: 0.0,
            churn: 0.0,
            focal_level: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn focal(&self) -> usize {
        if self.focal_level == 0 {
            self.levels
        } else {
            self.focal_level
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.branching.len() != self.levels {
            return Err(Error::Config(format!(
                "branching must list one factor per level ({} levels, {} factors)",
                self.levels,
                self.branching.len()
            )));
        }
        if self.branching.iter().any(|&b| b == 0) {
            return Err(Error::Config("branching factors must be ≥ 1".into()));
        }
        if self.firms_per_leaf == 0 || self.periods == 0 {
            return Err(Error::Config("firms per leaf and periods must be ≥ 1".into()));
        }
        if !(self.separation > 0.0) {
            return Err(Error::Config("separation must be positive".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 || !self.drift.is_finite() || self.drift < 0.0
        {
            return Err(Error::Config("noise and drift must be finite and ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.churn) {
            return Err(Error::Config("churn must be in [0, 1)".into()));
        }
        let industries: usize = {
            let mut per_level = 1;
            let mut total = 0;
            for &b in &self.branching {
                per_level *= b;
                total += per_level;
            }
            total
        };
        if self.dimension < industries {
            return Err(Error::Config(format!(
                "dimension {} too small for {industries} industries (each needs its own axis)",
                self.dimension
            )));
        }
        if self.focal() > self.levels {
            return Err(Error::Config(format!(
                "focal level {} exceeds depth {}",
                self.focal(),
                self.levels
            )));
        }
        Ok(())
    }
}

/// Generated file contents, byte-identical across runs with the same config.
#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub taxonomy: String,
    /// Training assignments, periods 1..=T.
    pub assignments: String,
    /// Held-out ground truth, period T+1, same format as `assignments`.
    pub truth: String,
    /// Firm vectors for periods 1..=T+1.
    pub firm_embeddings: String,
    pub definition_embeddings: String,
}

impl SynthFiles {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("taxonomy.tsv"), &self.taxonomy)?;
        std::fs::write(dir.join("assignments.csv"), &self.assignments)?;
        std::fs::write(dir.join("truth.csv"), &self.truth)?;
        std::fs::write(dir.join("firm_embeddings.csv"), &self.firm_embeddings)?;
        std::fs::write(dir.join("definitions.csv"), &self.definition_embeddings)?;
        Ok(())
    }
}

struct SynthNode {
    code: String,
    parent: Option<usize>,
    level: usize,
    center: Vec<f64>,
    leaf_descendants: Vec<usize>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthFiles> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dimension;

    // Build the tree with one reserved axis per industry: a node's center is
    // its parent's center plus an offset along its own axis, with magnitude
    // shrinking toward the leaves so siblings under one parent stay closer to
    // each other than to other subtrees.
    let mut nodes: Vec<SynthNode> = Vec::new();
    let mut frontier: Vec<Option<usize>> = vec![None];
    let mut axis = 0;
    for level in 1..=cfg.levels {
        // Sibling centers at the leaf level differ on two axes by `scale`
        // each, so scale = separation/√2 puts them exactly `separation`
        // apart; each level up quadruples the offset so subtrees stay far
        // apart even after several periods of drift.
        let scale = cfg.separation * 4f64.powi((cfg.levels - level) as i32)
            * std::f64::consts::FRAC_1_SQRT_2;
        let mut next = Vec::new();
        for &parent in &frontier {
            for j in 0..cfg.branching[level - 1] {
                let (parent_code, parent_center) = match parent {
                    Some(p) => (nodes[p].code.clone(), nodes[p].center.clone()),
                    None => (String::new(), vec![0.0; d]),
                };
                let code = if cfg.branching[level - 1] <= 9 {
                    format!("{parent_code}{}", j + 1)
                } else {
                    format!("{parent_code}x{}", j + 1)
                };
                let mut center = parent_center;
                center[axis] += scale;
                axis += 1;
                nodes.push(SynthNode {
                    code,
                    parent,
                    level,
                    center,
                    leaf_descendants: Vec::new(),
                });
                next.push(Some(nodes.len() - 1));
            }
        }
        frontier = next;
    }
    let leaf_indices: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.level == cfg.levels)
        .map(|(i, _)| i)
        .collect();
    for &leaf in &leaf_indices {
        let mut cur = Some(leaf);
        while let Some(i) = cur {
            nodes[i].leaf_descendants.push(leaf);
            cur = nodes[i].parent;
        }
    }

    let mut taxonomy = String::from("# synthetic industry taxonomy\n");
    for n in &nodes {
        let parent_code = n.parent.map(|p| nodes[p].code.as_str()).unwrap_or("");
        taxonomy.push_str(&format!(
            "{}\tindustry {}\tdefinition of industry {}\t{}\n",
            n.code, n.code, n.code, parent_code
        ));
    }

    // Definition vectors from the initial (pre-drift) subtree centers.
    let mut definitions = String::from("code");
    for i in 0..d {
        definitions.push_str(&format!(",v{i}"));
    }
    definitions.push('\n');
    for n in &nodes {
        let mut mean = vec![0.0; d];
        for &leaf in &n.leaf_descendants {
            for (m, c) in mean.iter_mut().zip(&nodes[leaf].center) {
                *m += c;
            }
        }
        for m in &mut mean {
            *m /= n.leaf_descendants.len() as f64;
        }
        definitions.push_str(&n.code);
        for m in mean {
            let jitter = rng.gen_range(-1.0..1.0) * 0.1 * cfg.noise;
            definitions.push_str(&format!(",{}", m + jitter));
        }
        definitions.push('\n');
    }

    // Firms, drifting centers, churn, and the per-period files. Period label
    // strings are zero-padded so lexical order matches temporal order.
    let focal = cfg.focal();
    let focal_code = |leaf: usize| -> &str {
        let mut cur = leaf;
        while nodes[cur].level > focal {
            cur = nodes[cur].parent.unwrap();
        }
        &nodes[cur].code
    };

    let mut centers: Vec<Vec<f64>> = leaf_indices.iter().map(|&l| nodes[l].center.clone()).collect();
    // Each leaf drifts along a fixed random unit direction — a secular trend,
    // so later periods genuinely supersede earlier ones.
    let drift_dirs: Vec<Vec<f64>> = (0..leaf_indices.len())
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut firms: Vec<(String, usize)> = Vec::new(); // (firm id, leaf position)
    let mut firm_counter = 0usize;
    for (pos, _) in leaf_indices.iter().enumerate() {
        for _ in 0..cfg.firms_per_leaf {
            firms.push((format!("F{firm_counter:05}"), pos));
            firm_counter += 1;
        }
    }

    let mut assignments = String::from("firm_id,period,code\n");
    let mut truth = String::from("firm_id,period,code\n");
    let mut firm_embeddings = String::from("firm_id,period");
    for i in 0..d {
        firm_embeddings.push_str(&format!(",v{i}"));
    }
    firm_embeddings.push('\n');

    for t in 1..=cfg.periods + 1 {
        let label = format!("{t:03}");
        for (firm, pos) in &firms {
            let leaf = leaf_indices[*pos];
            let row = format!("{firm},{label},{}\n", focal_code(leaf));
            if t <= cfg.periods {
                assignments.push_str(&row);
            } else {
                truth.push_str(&row);
            }
            firm_embeddings.push_str(&format!("{firm},{label}"));
            for &c in &centers[*pos] {
                firm_embeddings.push_str(&format!(",{}", c + rng.gen_range(-1.0..1.0) * cfg.noise));
            }
            firm_embeddings.push('\n');
        }
        if t <= cfg.periods {
            // Advance each leaf center one drift step.
            if cfg.drift > 0.0 {
                for (center, dir) in centers.iter_mut().zip(&drift_dirs) {
                    for (c, v) in center.iter_mut().zip(dir) {
                        *c += v * cfg.drift * cfg.separation;
                    }
                }
            }
            // Churn: exits are replaced by fresh firms in the same leaf.
            for slot in &mut firms {
                if cfg.churn > 0.0 && rng.gen::<f64>() < cfg.churn {
                    slot.0 = format!("F{firm_counter:05}");
                    firm_counter += 1;
                }
            }
        }
    }

    Ok(SynthFiles {
        taxonomy,
        assignments,
        truth,
        firm_embeddings,
        definition_embeddings: definitions,
    })
}
