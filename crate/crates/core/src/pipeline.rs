//! Dataset-level orchestration shared by the CLI subcommands and the
//! end-to-end tests: PP fields for whole datasets, seed generation per
//! frame, and the self-training driver on disk layouts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::ephemerality::PpEngine;
use crate::error::{Error, Result};
use crate::io;
use crate::seed::generate_seed_labels;
use crate::types::{LabelSet, Scan, Traversal};

/// Compute PP fields for every scan of the dataset (or a subset of
/// scan ids). Scans whose location has fewer than two covering
/// traversals are skipped: the score is undefined there.
pub fn compute_ppfields(
    traversals: &[Traversal],
    cfg: &PipelineConfig,
    subset: Option<&[String]>,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let engine = PpEngine::new(traversals, cfg.window, cfg.r, cfg.include_own_traversal)?;
    let mut fields = BTreeMap::new();
    for traversal in traversals {
        for scan in &traversal.scans {
            if let Some(ids) = subset {
                if !ids.iter().any(|id| id == &scan.scan_id) {
                    continue;
                }
            }
            if let Some(field) = engine.field_for(scan) {
                fields.insert(scan.scan_id.clone(), field.tau);
            }
        }
    }
    Ok(fields)
}

/// Seed labels for every frame that has a PP field, in dataset order.
pub fn generate_all_seeds(
    traversals: &[Traversal],
    ppfields: &BTreeMap<String, Vec<f32>>,
    cfg: &PipelineConfig,
) -> Result<Vec<LabelSet>> {
    let mut out = Vec::new();
    for traversal in traversals {
        for scan in &traversal.scans {
            let Some(tau) = ppfields.get(&scan.scan_id) else {
                continue;
            };
            out.push(generate_seed_labels(scan, tau, &cfg.seed_gen)?);
        }
    }
    Ok(out)
}

/// All scans of all traversals, flattened in dataset order.
pub fn flatten_pool(traversals: &[Traversal]) -> Vec<Scan> {
    traversals
        .iter()
        .flat_map(|t| t.scans.iter().cloned())
        .collect()
}

/// Sidecar path for a scan's PP field: `<dir>/<scan_id>.ppf`.
pub fn ppf_path(dir: &Path, scan_id: &str) -> PathBuf {
    dir.join(format!("{scan_id}.ppf"))
}

/// Write one sidecar per computed field.
pub fn write_ppfields(dir: &Path, fields: &BTreeMap<String, Vec<f32>>) -> Result<()> {
    for (scan_id, tau) in fields {
        io::write_ppf(ppf_path(dir, scan_id), tau)?;
    }
    Ok(())
}

/// Load the sidecars present in `dir` for the given traversals,
/// checking alignment with each scan's point count.
pub fn load_ppfields(
    dir: &Path,
    traversals: &[Traversal],
) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut fields = BTreeMap::new();
    for traversal in traversals {
        for scan in &traversal.scans {
            let path = ppf_path(dir, &scan.scan_id);
            if !path.exists() {
                continue;
            }
            let tau = io::read_ppf(&path)?;
            if tau.len() != scan.points.len() {
                return Err(Error::Validation(format!(
                    "PP sidecar {} holds {} scores but scan `{}` has {} points",
                    path.display(),
                    tau.len(),
                    scan.scan_id,
                    scan.points.len()
                )));
            }
            fields.insert(scan.scan_id.clone(), tau);
        }
    }
    Ok(fields)
}
