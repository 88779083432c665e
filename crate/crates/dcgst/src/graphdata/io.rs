//! Plain-text dataset ingestion.
//!
//! A dataset directory holds three files:
//! - `edges.tsv` — one `u<TAB>v` per line, 0-based node ids; undirected
//!   edges may appear once or twice.
//! - `features.csv` — comma-separated decimals, row i = node i.
//! - `labels.csv` — one integer per line.
//!
//! An optional `splits.json` with `{"labeled": [...], "validation": [...],
//! "test": [...]}` overrides split generation.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{DcgstError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| DcgstError::Ingest(format!("cannot read {}: {e}", path.display())))
}

pub fn load_graph(dataset_dir: &Path) -> Result<Graph> {
    let feature_text = read(&dataset_dir.join("features.csv"))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in feature_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            DcgstError::Ingest(format!("features.csv line {}: {e}", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DcgstError::Ingest(format!(
                    "features.csv line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let mut features = Array2::zeros((n, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }

    let label_text = read(&dataset_dir.join("labels.csv"))?;
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in label_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: usize = line.trim().parse().map_err(|e| {
            DcgstError::Ingest(format!("labels.csv line {}: {e}", lineno + 1))
        })?;
        labels.push(l);
    }
    if labels.len() != n {
        return Err(DcgstError::Ingest(format!(
            "labels.csv has {} rows but features.csv has {n}",
            labels.len()
        )));
    }
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);

    let edge_text = read(&dataset_dir.join("edges.tsv"))?;
    let mut edges = Vec::new();
    for (lineno, line) in edge_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |t: Option<&str>| -> Result<usize> {
            t.ok_or_else(|| {
                DcgstError::Ingest(format!("edges.tsv line {}: missing field", lineno + 1))
            })?
            .trim()
            .parse()
            .map_err(|e| DcgstError::Ingest(format!("edges.tsv line {}: {e}", lineno + 1)))
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        edges.push((u, v));
    }

    Graph::new(n, &edges, features, labels, class_count)
}

/// Write a graph back out in the same text layout. Round-trips with
/// [`load_graph`] on (n, edges, labels) exactly and on features to the
/// printed precision.
pub fn save_graph(g: &Graph, dataset_dir: &Path) -> Result<()> {
    fs::create_dir_all(dataset_dir)?;
    let mut edges = String::new();
    for &(u, v) in &g.edges {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(dataset_dir.join("edges.tsv"), edges)?;

    let mut feats = String::new();
    for i in 0..g.n {
        let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v:.12e}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    fs::write(dataset_dir.join("features.csv"), feats)?;

    let mut labels = String::new();
    for &l in &g.labels {
        labels.push_str(&format!("{l}\n"));
    }
    fs::write(dataset_dir.join("labels.csv"), labels)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    labeled: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

/// Load a `splits.json` override if the dataset directory carries one.
pub fn try_load_split_override(dataset_dir: &Path, g: &Graph) -> Result<Option<Split>> {
    let path = dataset_dir.join("splits.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = read(&path)?;
    let file: SplitFile = serde_json::from_str(&text)
        .map_err(|e| DcgstError::Ingest(format!("splits.json: {e}")))?;
    let split = Split::from_sets(g, file.labeled, file.validation, file.test)?;
    Ok(Some(split))
}
