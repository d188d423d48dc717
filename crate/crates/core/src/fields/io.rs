//! Sampled fields on disk: a CSV table (`node,x1..xn,value`, masked nodes in
//! lexicographic node order) plus a JSON sidecar with the grid metadata.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GridDomain, GridSpec, SampledField};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub kind: String,
    pub name: String,
    pub grid: GridSpec,
    pub grid_hash: String,
    pub masked_nodes: usize,
    pub csv: String,
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_sampled(field: &SampledField, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let grid = field.grid();
    let csv_name = format!("{stem}.csv");
    let mut w = csv::Writer::from_path(dir.join(&csv_name))?;
    let mut header = vec!["node".to_string()];
    header.extend((1..=grid.dim()).map(|a| format!("x{a}")));
    header.push("value".into());
    w.write_record(&header)?;
    for node in grid.masked_nodes() {
        let mut row = vec![node.to_string()];
        row.extend(grid.coords(node).iter().map(|c| format!("{c:?}")));
        row.push(format!("{:?}", field.values()[node]));
        w.write_record(&row)?;
    }
    w.flush()?;
    let sidecar = FieldSidecar {
        kind: "sampled_field".into(),
        name: stem.into(),
        grid: grid.spec().clone(),
        grid_hash: grid.hash(),
        masked_nodes: grid.masked_count(),
        csv: csv_name,
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Reads a field back from its sidecar; the mask is rebuilt from the CSV rows
/// and checked against the recorded grid hash.
pub fn read_sampled(sidecar_path: &Path) -> Result<SampledField> {
    let sidecar: FieldSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let base = GridDomain::from_spec(&sidecar.grid)?;
    let mut mask = vec![false; base.node_count()];
    let mut values = vec![0.0; base.node_count()];
    let mut r = csv::Reader::from_path(dir.join(&sidecar.csv))?;
    let value_col = base.dim() + 1;
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::GridMismatch(format!("bad {what} in {}", sidecar.csv));
        let node: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("node"))?;
        let v: f64 = rec
            .get(value_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("value"))?;
        if node >= mask.len() {
            return Err(bad("node index"));
        }
        mask[node] = true;
        values[node] = v;
    }
    let grid = base.with_mask_vec(mask)?;
    if grid.hash() != sidecar.grid_hash {
        return Err(Error::GridMismatch("grid hash does not match the sidecar".into()));
    }
    SampledField::new(Arc::new(grid), values)
}
