//! Time-stamped firm–industry assignment cases and the per-period roll-up
//! that attaches each node's historical firm set to it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentRecord {
    pub firm: String,
    /// Dense period index in 1..=T.
    pub period: usize,
    /// Node at the focal level.
    pub node: NodeId,
}

/// The training cases: one (firm, period, focal-level industry) triple per
/// row, with periods remapped from source labels to dense 1..=T.
#[derive(Clone, Debug)]
pub struct AssignmentDataset {
    pub records: Vec<AssignmentRecord>,
    pub periods: usize,
    pub focal_level: usize,
    pub firms: BTreeSet<String>,
    /// Dense period index → original source label, for reporting.
    pub period_labels: Vec<String>,
}

impl AssignmentDataset {
    pub fn period_of_label(&self, label: &str) -> Option<usize> {
        self.period_labels.iter().position(|l| l == label).map(|i| i + 1)
    }
}

/// Per-period firm sets for every node at levels 1..=focal. A node above the
/// focal level holds the union of its focal-level descendants' sets.
#[derive(Clone, Debug)]
pub struct KnowledgeIndex {
    sets: HashMap<(NodeId, usize), BTreeSet<String>>,
    empty: BTreeSet<String>,
}

impl KnowledgeIndex {
    /// Firms attached to `node` in `period`. Empty for nodes below the focal
    /// level or periods without assignments.
    pub fn firms(&self, node: NodeId, period: usize) -> &BTreeSet<String> {
        self.sets.get(&(node, period)).unwrap_or(&self.empty)
    }
}

/// Parses an assignment CSV (`firm_id,period,code` with header). Period
/// labels are arbitrary sortable strings; the distinct labels are sorted and
/// mapped to 1..=T.
pub fn load_assignments(
    text: &str,
    tree: &TaxonomyTree,
    focal_level: usize,
) -> Result<AssignmentDataset> {
    if focal_level == 0 || focal_level > tree.depth() {
        return Err(Error::Config(format!(
            "focal level {focal_level} must be in 1..={}",
            tree.depth()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());

    let mut raw: Vec<(usize, String, String, NodeId)> = Vec::new();
    let mut labels: BTreeSet<String> = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Load {
                row,
                msg: format!("expected 3 columns, got {}", rec.len()),
            });
        }
        let firm = rec[0].trim().to_string();
        let label = rec[1].trim().to_string();
        let code = rec[2].trim();
        if firm.is_empty() {
            return Err(Error::Load {
                row,
                msg: "empty firm id".into(),
            });
        }
        let node = tree.by_code(code).ok_or_else(|| Error::Load {
            row,
            msg: format!("unknown industry code '{code}'"),
        })?;
        let level = tree.node(node).level;
        if level != focal_level {
            return Err(Error::Load {
                row,
                msg: format!(
                    "code '{code}' is at level {level}, expected focal level {focal_level}"
                ),
            });
        }
        labels.insert(label.clone());
        raw.push((row, firm, label, node));
    }

    let period_labels: Vec<String> = labels.into_iter().collect();
    let label_index: HashMap<&str, usize> = period_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i + 1))
        .collect();

    let mut seen: HashSet<(String, usize)> = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    let mut firms = BTreeSet::new();
    for (row, firm, label, node) in raw {
        let period = label_index[label.as_str()];
        if !seen.insert((firm.clone(), period)) {
            return Err(Error::Load {
                row,
                msg: format!("duplicate assignment for firm '{firm}' in period '{label}'"),
            });
        }
        firms.insert(firm.clone());
        records.push(AssignmentRecord { firm, period, node });
    }

    Ok(AssignmentDataset {
        records,
        periods: period_labels.len(),
        focal_level,
        firms,
        period_labels,
    })
}

pub fn load_assignments_file(
    path: &Path,
    tree: &TaxonomyTree,
    focal_level: usize,
) -> Result<AssignmentDataset> {
    let text = std::fs::read_to_string(path)?;
    load_assignments(&text, tree, focal_level)
}

/// Builds the per-period firm sets: each record contributes its firm to the
/// assigned node and to every ancestor up to level 1.
pub fn rollup_knowledge(data: &AssignmentDataset, tree: &TaxonomyTree) -> KnowledgeIndex {
    let mut sets: BTreeMap<(NodeId, usize), BTreeSet<String>> = BTreeMap::new();
    for l in 1..=data.focal_level {
        for &node in tree.level(l) {
            for t in 1..=data.periods {
                sets.insert((node, t), BTreeSet::new());
            }
        }
    }
    for rec in &data.records {
        let mut cur = rec.node;
        loop {
            sets.get_mut(&(cur, rec.period))
                .expect("levels 1..=focal pre-populated")
                .insert(rec.firm.clone());
            match tree.parent(cur) {
                Some(p) if tree.node(p).level >= 1 => cur = p,
                _ => break,
            }
        }
    }
    KnowledgeIndex {
        sets: sets.into_iter().collect(),
        empty: BTreeSet::new(),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::taxonomy::tests::{at, example_tree};

    /// The 8-case two-period dataset over the 7-node example tree: firms
    /// B,C,D,E assigned in period 1; B,C,D,F in period 2 (E exits, F enters,
    /// C switches leaves).
    pub(crate) fn example_dataset_csv() -> &'static str {
        "firm_id,period,code\n\
         B,2019,11\n\
         C,2019,21\n\
         D,2019,23\n\
         E,2019,12\n\
         B,2020,11\n\
         C,2020,23\n\
         D,2020,23\n\
         F,2020,22\n"
    }

    #[test]
    fn example_dataset_loads() {
        let tree = example_tree();
        let data = load_assignments(example_dataset_csv(), &tree, 2).unwrap();
        assert_eq!(data.records.len(), 8);
        assert_eq!(data.periods, 2);
        assert_eq!(data.focal_level, 2);
        assert_eq!(
            data.firms.iter().cloned().collect::<Vec<_>>(),
            vec!["B", "C", "D", "E", "F"]
        );
        assert_eq!(data.period_labels, vec!["2019", "2020"]);
        assert_eq!(data.period_of_label("2020"), Some(2));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let tree = example_tree();
        let data = load_assignments("firm_id,period,code\n", &tree, 2).unwrap();
        assert!(data.records.is_empty());
        assert_eq!(data.periods, 0);
    }

    #[test]
    fn wrong_level_code_rejected_with_row() {
        let tree = example_tree();
        let err = load_assignments("firm_id,period,code\nB,2019,1\n", &tree, 2).unwrap_err();
        match err {
            Error::Load { row, msg } => {
                assert_eq!(row, 2);
                assert!(msg.contains("level 1"), "{msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_code_rejected() {
        let tree = example_tree();
        let err = load_assignments("firm_id,period,code\nB,2019,99\n", &tree, 2).unwrap_err();
        assert!(err.to_string().contains("unknown industry code '99'"));
    }

    #[test]
    fn duplicate_firm_period_rejected() {
        let tree = example_tree();
        let err = load_assignments(
            "firm_id,period,code\nB,2019,21\nB,2019,22\n",
            &tree,
            2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate assignment"));
    }

    #[test]
    fn rollup_matches_worked_example() {
        let tree = example_tree();
        let data = load_assignments(example_dataset_csv(), &tree, 2).unwrap();
        let index = rollup_knowledge(&data, &tree);
        let firms = |l, i, t| {
            index
                .firms(at(&tree, l, i), t)
                .iter()
                .cloned()
                .collect::<Vec<_>>()
        };
        // Period 1.
        assert_eq!(firms(2, 1, 1), vec!["B"]);
        assert_eq!(firms(2, 2, 1), vec!["E"]);
        assert_eq!(firms(1, 1, 1), vec!["B", "E"]);
        assert_eq!(firms(2, 3, 1), vec!["C"]);
        assert_eq!(firms(2, 4, 1), Vec::<String>::new());
        assert_eq!(firms(2, 5, 1), vec!["D"]);
        assert_eq!(firms(1, 2, 1), vec!["C", "D"]);
        // Period 2: E exits, F enters, C switches to the fifth leaf.
        assert_eq!(firms(1, 1, 2), vec!["B"]);
        assert_eq!(firms(2, 4, 2), vec!["F"]);
        assert_eq!(firms(2, 5, 2), vec!["C", "D"]);
        assert_eq!(firms(1, 2, 2), vec!["C", "D", "F"]);
    }

    #[test]
    fn parent_set_is_union_of_children() {
        let tree = example_tree();
        let data = load_assignments(example_dataset_csv(), &tree, 2).unwrap();
        let index = rollup_knowledge(&data, &tree);
        for &parent in tree.level(1) {
            for t in 1..=data.periods {
                let mut union = BTreeSet::new();
                for &c in tree.children(parent) {
                    union.extend(index.firms(c, t).iter().cloned());
                }
                assert_eq!(&union, index.firms(parent, t));
            }
        }
    }

    #[test]
    fn partition_is_disjoint_and_counts_match() {
        let tree = example_tree();
        let data = load_assignments(example_dataset_csv(), &tree, 2).unwrap();
        let index = rollup_knowledge(&data, &tree);
        for t in 1..=data.periods {
            let per_period = data.records.iter().filter(|r| r.period == t).count();
            for l in 1..=data.focal_level {
                let mut seen = BTreeSet::new();
                let mut total = 0;
                for &node in tree.level(l) {
                    let s = index.firms(node, t);
                    total += s.len();
                    seen.extend(s.iter().cloned());
                }
                // No firm in two sibling sets, and everyone assigned shows up.
                assert_eq!(total, seen.len());
                assert_eq!(total, per_period);
            }
        }
    }
}
