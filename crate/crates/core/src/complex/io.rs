//! Forms on disk: one CSV per component (`node,x1..xn,value` over active
//! entries) plus a JSON manifest with the degree, component order and grid
//! hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscreteForm, FormSpace, SparseMatrix};
use crate::error::{contract, Error, Result};
use crate::fields::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    /// One-based axes, e.g. `[1, 2]` for `dx1^dx2`.
    pub index: Vec<usize>,
    pub csv: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormManifest {
    pub kind: String,
    pub degree: usize,
    pub grid: GridSpec,
    pub grid_hash: String,
    pub components: Vec<ComponentFile>,
}

fn component_stem(stem: &str, index: &[usize]) -> String {
    if index.is_empty() {
        format!("{stem}_1.csv")
    } else {
        let axes: Vec<String> = index.iter().map(|a| format!("dx{a}")).collect();
        format!("{stem}_{}.csv", axes.join(""))
    }
}

/// Writes `<stem>.json` and one `<stem>_dx..csv` per component into `dir`.
pub fn write_form(form: &DiscreteForm, space: &FormSpace, dir: &Path, stem: &str) -> Result<()> {
    space.check(form)?;
    fs::create_dir_all(dir)?;
    let grid = space.grid();
    let mut components = Vec::new();
    for (c, idx) in space.basis().indices().iter().enumerate() {
        let index = idx.one_based();
        let csv_name = component_stem(stem, &index);
        let mut w = csv::Writer::from_path(dir.join(&csv_name))?;
        let mut header = vec!["node".to_string()];
        header.extend((1..=grid.dim()).map(|a| format!("x{a}")));
        header.push("value".into());
        w.write_record(&header)?;
        for &(comp, node) in space.dofs().iter().filter(|(comp, _)| *comp == c) {
            let mut row = vec![node.to_string()];
            row.extend(grid.coords(node).iter().map(|x| format!("{x:?}")));
            row.push(format!("{:?}", form.components[comp][node]));
            w.write_record(&row)?;
        }
        w.flush()?;
        components.push(ComponentFile { index, csv: csv_name });
    }
    let manifest = FormManifest {
        kind: "discrete_form".into(),
        degree: space.degree(),
        grid: grid.spec().clone(),
        grid_hash: grid.hash(),
        components,
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a form written by [`write_form`] onto `space`, whose grid must have
/// the recorded hash. Missing rows are zero; rows at inactive entries fail.
pub fn read_form(manifest_path: &Path, space: &FormSpace) -> Result<DiscreteForm> {
    let manifest: FormManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.degree != space.degree() {
        return contract(format!(
            "form file has degree {}, expected {}",
            manifest.degree,
            space.degree()
        ));
    }
    if manifest.grid_hash != space.grid().hash() {
        return Err(Error::GridMismatch("form file was written for another grid".into()));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut form = space.zeros();
    let value_col = space.grid().dim() + 1;
    for file in &manifest.components {
        let axes: Vec<usize> = file.index.iter().map(|a| a.wrapping_sub(1)).collect();
        let c = space
            .basis()
            .indices()
            .iter()
            .position(|m| m.as_slice() == axes.as_slice())
            .ok_or_else(|| Error::GridMismatch(format!("unknown component {:?}", file.index)))?;
        let mut r = csv::Reader::from_path(dir.join(&file.csv))?;
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| Error::GridMismatch(format!("bad {what} in {}", file.csv));
            let node: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("node"))?;
            let v: f64 = rec
                .get(value_col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("value"))?;
            if node >= space.grid().node_count() || !space.is_active(c, node) {
                return Err(bad("node (inactive entry)"));
            }
            if !v.is_finite() {
                return Err(bad("value (not finite)"));
            }
            form.components[c][node] = v;
        }
    }
    Ok(form)
}

/// Writes a sparse operator in `row col value` text form.
pub fn write_operator(matrix: &SparseMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    matrix.write_coo(std::io::BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::complex::Complex;
    use crate::fields::GridDomain;

    #[test]
    fn forms_survive_disk() {
        let grid = Arc::new(
            GridDomain::centered(3, 1.0, 5)
                .unwrap()
                .with_mask(|x| x.iter().map(|v| v * v).sum::<f64>() < 0.8)
                .unwrap(),
        );
        let c = Complex::new(grid.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir = tempfile::tempdir().unwrap();
        for k in 0..=3 {
            let f = c.space(k).random_form(&mut rng, 0);
            write_form(&f, c.space(k), dir.path(), &format!("f{k}")).unwrap();
            let back = read_form(&dir.path().join(format!("f{k}.json")), c.space(k)).unwrap();
            assert_eq!(back, f);
        }
        assert!(read_form(&dir.path().join("f1.json"), c.space(2)).is_err());
        let other = Arc::new(GridDomain::centered(3, 1.0, 5).unwrap());
        let s = FormSpace::new(other, 1).unwrap();
        assert!(matches!(
            read_form(&dir.path().join("f1.json"), &s),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn operator_export() {
        let grid = Arc::new(GridDomain::centered(1, 1.0, 2).unwrap());
        let c = Complex::new(grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d0.coo");
        write_operator(c.d_matrix(0).unwrap(), &path).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().next(), Some("2 3 4"));
        assert_eq!(text.lines().count(), 5);
    }
}
