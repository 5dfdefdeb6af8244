//! CSV rows plus a JSON sidecar carrying everything needed for exact replay.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a dataset back reproduces it bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use subspace_core::{Matrix, SubspaceBasis};

use crate::{BiasedDataset, DatasetKind, FeatureSplit, GenError, GroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub p_i: f64,
    pub p_o: f64,
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub split_dims: [usize; 3],
    /// Basis columns, one inner list per column.
    pub invariant_basis: Vec<Vec<f64>>,
    pub spurious_basis: Vec<Vec<f64>>,
    pub unknown_basis: Vec<Vec<f64>>,
    /// `W*` rows.
    pub w_star: Vec<Vec<f64>>,
    pub exact_targets: bool,
}

fn columns_of(b: &SubspaceBasis) -> Vec<Vec<f64>> {
    b.columns().column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn basis_from(ambient: usize, cols: &[Vec<f64>]) -> Result<SubspaceBasis, GenError> {
    let mut m = Matrix::zeros(ambient, cols.len());
    for (j, col) in cols.iter().enumerate() {
        if col.len() != ambient {
            return Err(GenError::Malformed(format!("basis column {j} has {} entries", col.len())));
        }
        for (i, v) in col.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(SubspaceBasis::new(m)?)
}

impl DatasetMetadata {
    pub fn of(ds: &BiasedDataset) -> Self {
        Self {
            seed: ds.seed,
            n: ds.n(),
            d: ds.d(),
            m: ds.m(),
            p_i: ds.p_i,
            p_o: ds.p_o,
            kind: ds.kind.clone(),
            split_dims: ds.split.dims(),
            invariant_basis: columns_of(&ds.split.invariant),
            spurious_basis: columns_of(&ds.split.spurious),
            unknown_basis: columns_of(&ds.split.unknown),
            w_star: ds.truth.w_star.row_iter().map(|r| r.iter().copied().collect()).collect(),
            exact_targets: ds.truth.exact_targets,
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.json` side by side.
pub fn write_dataset(ds: &BiasedDataset, csv_path: &Path, meta_path: &Path) -> Result<(), GenError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("x{j}")).collect();
    header.extend((0..ds.m()).map(|j| format!("y{j}")));
    header.push("id_flag".into());
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.extend(ds.y.row(i).iter().map(|v| v.to_string()));
        rec.push(if ds.id_mask[i] { "1".into() } else { "0".into() });
        if let Some(labels) = &ds.labels {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut meta = BufWriter::new(File::create(meta_path)?);
    serde_json::to_writer_pretty(&mut meta, &DatasetMetadata::of(ds))?;
    meta.write_all(b"\n")?;
    meta.flush()?;
    Ok(())
}

/// Inverse of [`write_dataset`].
pub fn read_dataset(csv_path: &Path, meta_path: &Path) -> Result<BiasedDataset, GenError> {
    let meta: DatasetMetadata = serde_json::from_reader(File::open(meta_path)?)?;
    let has_labels = meta.kind.classes().is_some();
    let mut x = Matrix::zeros(meta.n, meta.d);
    let mut y = Matrix::zeros(meta.n, meta.m);
    let mut id_mask = Vec::with_capacity(meta.n);
    let mut labels = Vec::new();
    let mut r = csv::Reader::from_path(csv_path)?;
    let width = meta.d + meta.m + 1 + usize::from(has_labels);
    let parse = |s: &str| -> Result<f64, GenError> {
        s.parse().map_err(|_| GenError::Malformed(format!("bad number {s:?}")))
    };
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != width || i >= meta.n {
            return Err(GenError::Malformed(format!("row {i} has {} fields, want {width}", rec.len())));
        }
        for j in 0..meta.d {
            x[(i, j)] = parse(&rec[j])?;
        }
        for j in 0..meta.m {
            y[(i, j)] = parse(&rec[meta.d + j])?;
        }
        id_mask.push(&rec[meta.d + meta.m] == "1");
        if has_labels {
            let l = rec[meta.d + meta.m + 1]
                .parse()
                .map_err(|_| GenError::Malformed(format!("bad label in row {i}")))?;
            labels.push(l);
        }
        rows += 1;
    }
    if rows != meta.n {
        return Err(GenError::Malformed(format!("{rows} rows, metadata says {}", meta.n)));
    }
    let split = FeatureSplit {
        invariant: basis_from(meta.d, &meta.invariant_basis)?,
        spurious: basis_from(meta.d, &meta.spurious_basis)?,
        unknown: basis_from(meta.d, &meta.unknown_basis)?,
    };
    let mut w_star = Matrix::zeros(meta.w_star.len(), meta.d);
    for (i, row) in meta.w_star.iter().enumerate() {
        if row.len() != meta.d {
            return Err(GenError::Malformed(format!("w_star row {i} has {} entries", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            w_star[(i, j)] = *v;
        }
    }
    let truth = GroundTruth::new(w_star, &split, meta.exact_targets);
    Ok(BiasedDataset {
        x,
        y,
        id_mask,
        p_i: meta.p_i,
        p_o: meta.p_o,
        split,
        truth,
        seed: meta.seed,
        kind: meta.kind,
        labels: has_labels.then_some(labels),
    })
}
