//! Shared input loading and file parsing for the subcommands.

use std::path::Path;

use firmclass::dataset::{load_assignments, AssignmentDataset};
use firmclass::embedding::{load_embeddings_files, EmbeddingStore};
use firmclass::taxonomy::{NodeId, TaxonomyTree};
use firmclass::{Error, Result};

/// Loads an assignment CSV, inferring the focal level from its first row's
/// code when the caller doesn't pin one.
pub fn load_assignment_file(
    path: &Path,
    tree: &TaxonomyTree,
    focal_level: Option<usize>,
) -> Result<AssignmentDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read '{}': {e}", path.display())))?;
    let focal = match focal_level {
        Some(l) => l,
        None => infer_focal_level(&text, tree, path)?,
    };
    load_assignments(&text, tree, focal)
}

fn infer_focal_level(text: &str, tree: &TaxonomyTree, path: &Path) -> Result<usize> {
    let first = text
        .lines()
        .nth(1)
        .ok_or_else(|| Error::Config(format!("'{}' has no data rows", path.display())))?;
    let code = first
        .split(',')
        .nth(2)
        .ok_or_else(|| Error::Config(format!("'{}' is not firm_id,period,code", path.display())))?
        .trim();
    let node = tree
        .by_code(code)
        .ok_or_else(|| Error::Config(format!("unknown industry code '{code}'")))?;
    Ok(tree.node(node).level)
}

pub fn load_store(
    firm_path: &Path,
    definition_path: &Path,
    tree: &TaxonomyTree,
    dimension: usize,
) -> Result<EmbeddingStore> {
    load_embeddings_files(firm_path, definition_path, tree, dimension)
}

/// One parsed row of a predictions CSV.
pub struct PredictionRow {
    pub firm: String,
    pub node: NodeId,
    pub probability: f64,
}

pub fn load_predictions(path: &Path, tree: &TaxonomyTree) -> Result<Vec<PredictionRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Load {
                row: i + 1,
                msg: format!("expected at least 4 columns, got {}", fields.len()),
            });
        }
        let node = tree.by_code(fields[2].trim()).ok_or_else(|| Error::Load {
            row: i + 1,
            msg: format!("unknown industry code '{}'", fields[2]),
        })?;
        let probability = fields[3].trim().parse().map_err(|_| Error::Load {
            row: i + 1,
            msg: format!("bad probability '{}'", fields[3]),
        })?;
        rows.push(PredictionRow {
            firm: fields[0].trim().to_string(),
            node,
            probability,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "'{}' contains no predictions",
            path.display()
        )));
    }
    Ok(rows)
}
