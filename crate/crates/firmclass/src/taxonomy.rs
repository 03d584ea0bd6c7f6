//! The industry tree: level-indexed nodes with parent/child links, the
//! ancestor/descendant operators, and parsing of prefix-coded hierarchies.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node identifier within one [`TaxonomyTree`]. Id 0 is always the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct IndustryNode {
    pub id: NodeId,
    pub code: String,
    pub title: String,
    pub definition: String,
    pub level: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// 1-based position within its level, in file order.
    pub within_level_index: usize,
}

/// Immutable industry tree. All leaves sit at the same level `L`; the root is
/// level 0 and is excluded from the industry count `N`.
#[derive(Clone, Debug)]
pub struct TaxonomyTree {
    nodes: Vec<IndustryNode>,
    levels: Vec<Vec<NodeId>>,
    by_code: HashMap<String, NodeId>,
}

pub const ROOT: NodeId = NodeId(0);

impl TaxonomyTree {
    /// Builds a tree from (code, title, definition, explicit-parent) records in
    /// file order. `line` indexes are used for error reporting.
    fn build(records: Vec<(usize, String, String, String, Option<String>)>) -> Result<Self> {
        let mut nodes = vec![IndustryNode {
            id: ROOT,
            code: String::new(),
            title: "(root)".into(),
            definition: String::new(),
            level: 0,
            parent: None,
            children: Vec::new(),
            within_level_index: 1,
        }];
        let mut by_code: HashMap<String, NodeId> = HashMap::new();

        // Parent resolution: explicit column wins; otherwise the longest
        // proper code prefix present in the file, falling back to the root.
        let codes: Vec<&String> = records.iter().map(|r| &r.1).collect();
        let code_set: std::collections::HashSet<&str> =
            codes.iter().map(|c| c.as_str()).collect();

        for (line, code, title, definition, explicit_parent) in &records {
            if by_code.contains_key(code) {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("duplicate code '{code}'"),
                });
            }
            let parent_id = match explicit_parent {
                Some(p) if !p.is_empty() => match by_code.get(p) {
                    Some(&id) => id,
                    None => {
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!("orphan code '{code}': parent '{p}' not defined before it"),
                        })
                    }
                },
                _ => {
                    let mut best: Option<&str> = None;
                    for len in (1..code.len()).rev() {
                        let prefix = &code[..len];
                        if code_set.contains(prefix) {
                            best = Some(prefix);
                            break;
                        }
                    }
                    match best {
                        Some(p) => match by_code.get(p) {
                            Some(&id) => id,
                            None => {
                                return Err(Error::Parse {
                                    line: *line,
                                    msg: format!(
                                        "orphan code '{code}': prefix parent '{p}' appears later in the file"
                                    ),
                                })
                            }
                        },
                        None => ROOT,
                    }
                }
            };
            let level = nodes[parent_id.0].level + 1;
            let id = NodeId(nodes.len());
            nodes.push(IndustryNode {
                id,
                code: code.clone(),
                title: title.clone(),
                definition: definition.clone(),
                level,
                parent: Some(parent_id),
                children: Vec::new(),
                within_level_index: 0,
            });
            nodes[parent_id.0].children.push(id);
            by_code.insert(code.clone(), id);
        }

        if nodes.len() == 1 {
            return Err(Error::Parse {
                line: 0,
                msg: "taxonomy contains no industries".into(),
            });
        }

        let max_level = nodes.iter().map(|n| n.level).max().unwrap();
        let mut levels = vec![Vec::new(); max_level + 1];
        for n in &nodes {
            levels[n.level].push(n.id);
        }
        for level_nodes in &levels {
            for (i, &id) in level_nodes.iter().enumerate() {
                nodes[id.0].within_level_index = i + 1;
            }
        }

        // Uniform depth: every leaf must sit at level L.
        for n in &nodes[1..] {
            if n.children.is_empty() && n.level != max_level {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!(
                        "ragged tree: leaf '{}' is at level {} but the deepest level is {}",
                        n.code, n.level, max_level
                    ),
                });
            }
        }

        Ok(TaxonomyTree {
            nodes,
            levels,
            by_code,
        })
    }

    /// Parses a taxonomy file: UTF-8, one record per line, tab-separated
    /// `code<TAB>title<TAB>definition` with an optional fourth `parent_code`
    /// column. Lines beginning with `#` are ignored; the root is implicit.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() < 3 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected at least 3 tab-separated fields, got {}", fields.len()),
                });
            }
            records.push((
                line,
                fields[0].trim().to_string(),
                fields[1].trim().to_string(),
                fields[2].trim().to_string(),
                fields.get(3).map(|s| s.trim().to_string()),
            ));
        }
        Self::build(records)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn node(&self, id: NodeId) -> &IndustryNode {
        &self.nodes[id.0]
    }

    pub fn by_code(&self, code: &str) -> Option<NodeId> {
        self.by_code.get(code).copied()
    }

    /// All nodes including the root.
    pub fn all_nodes(&self) -> impl Iterator<Item = &IndustryNode> {
        self.nodes.iter()
    }

    /// Node ids at one level, in file order.
    pub fn level(&self, l: usize) -> &[NodeId] {
        &self.levels[l]
    }

    /// Leaf level L.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Number of industries at level l.
    pub fn level_count(&self, l: usize) -> usize {
        self.levels[l].len()
    }

    /// Total industry count, excluding the root.
    pub fn industry_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    /// The unique ancestor `k` levels above; `k = 0` is the node itself.
    pub fn ancestor(&self, id: NodeId, k: usize) -> Result<NodeId> {
        let level = self.nodes[id.0].level;
        if k > level {
            return Err(Error::Domain(format!(
                "ancestor: k = {k} exceeds node level {level}"
            )));
        }
        let mut cur = id;
        for _ in 0..k {
            cur = self.nodes[cur.0].parent.expect("non-root node has a parent");
        }
        Ok(cur)
    }

    /// All descendants exactly `k` levels below, in node-id order;
    /// `k = 0` is the node itself.
    pub fn descendants(&self, id: NodeId, k: usize) -> Result<Vec<NodeId>> {
        let level = self.nodes[id.0].level;
        if level + k > self.depth() {
            return Err(Error::Domain(format!(
                "descendants: level {} + k = {} exceeds leaf level {}",
                level,
                k,
                self.depth()
            )));
        }
        let mut frontier = vec![id];
        for _ in 0..k {
            let mut next = Vec::new();
            for n in frontier {
                next.extend_from_slice(&self.nodes[n.0].children);
            }
            frontier = next;
        }
        frontier.sort();
        Ok(frontier)
    }

    /// Structure-based knowledge: all proper ancestors (excluding the root)
    /// and all descendants, in node-id order.
    pub fn structure_knowledge(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            if p != ROOT {
                out.push(p);
            }
            cur = p;
        }
        let mut frontier = self.nodes[id.0].children.clone();
        while !frontier.is_empty() {
            out.extend_from_slice(&frontier);
            let mut next = Vec::new();
            for n in frontier {
                next.extend_from_slice(&self.nodes[n.0].children);
            }
            frontier = next;
        }
        out.sort();
        out
    }

    /// Minimum edge count between two nodes through the tree (the root may
    /// lie on the path).
    pub fn tree_distance(&self, a: NodeId, b: NodeId) -> Result<usize> {
        if a.0 >= self.nodes.len() || b.0 >= self.nodes.len() {
            return Err(Error::Domain("tree_distance: node not in this tree".into()));
        }
        let (mut x, mut y) = (a, b);
        let mut dist = 0;
        while self.nodes[x.0].level > self.nodes[y.0].level {
            x = self.nodes[x.0].parent.unwrap();
            dist += 1;
        }
        while self.nodes[y.0].level > self.nodes[x.0].level {
            y = self.nodes[y.0].parent.unwrap();
            dist += 1;
        }
        while x != y {
            x = self.nodes[x.0].parent.unwrap();
            y = self.nodes[y.0].parent.unwrap();
            dist += 2;
        }
        Ok(dist)
    }
}
