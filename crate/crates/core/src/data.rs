//! Dataset representation, synthetic blob generation, CSV ingestion, and
//! deterministic splitting.
//!
//! Labels are dense 0-based class indices. When loading a CSV whose label
//! column is categorical, labels map to indices in first-appearance order;
//! integer labels that already form the dense set `{0..k-1}` are kept as-is.
//! Both rules are deterministic so CSV-driven runs are reproducible.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// A feature matrix with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Dataset> {
        if labels.len() != features.rows() {
            return Err(Error::dim(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if n_classes < 2 {
            return Err(Error::invalid(format!("n_classes = {n_classes}, need at least 2")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("label {bad} >= n_classes {n_classes}")));
        }
        Ok(Dataset { features, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row subset, preserving the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Disjoint train/validation/test row partition of a source dataset.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Gaussian blobs with class means at equal angles on a circle of radius
/// `center_radius` embedded in the first two coordinates (zeros elsewhere,
/// so 2-D runs plot directly from the emitted CSV). Exactly `per_class`
/// samples per class, class-major row order, deterministic in `seed`.
pub fn gen_blobs(
    n_classes: usize,
    dim: usize,
    per_class: usize,
    center_radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::invalid(format!("gen_blobs: n_classes = {n_classes}, need >= 2")));
    }
    if dim < 2 {
        return Err(Error::invalid(format!("gen_blobs: dim = {dim}, need >= 2")));
    }
    if per_class == 0 {
        return Err(Error::invalid("gen_blobs: per_class = 0".to_string()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("gen_blobs: sigma = {sigma}, need >= 0")));
    }
    let mut rng = Rng::new(seed);
    let mut features = Matrix::zeros(n_classes * per_class, dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
        let (mx, my) = (center_radius * angle.cos(), center_radius * angle.sin());
        for s in 0..per_class {
            let row = features.row_mut(c * per_class + s);
            for (j, v) in row.iter_mut().enumerate() {
                let mean = match j {
                    0 => mx,
                    1 => my,
                    _ => 0.0,
                };
                *v = mean + sigma * rng.normal();
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, n_classes)
}

fn float_cell(v: f64) -> String {
    // 17 significant digits: parses back to the identical f64
    format!("{v:.16e}")
}

/// Write a dataset as UTF-8 comma-separated text: header `f0..f{d-1},<label>`,
/// features at 17 significant digits, labels as integers.
pub fn save_csv(dataset: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let mut out = String::new();
    for j in 0..dataset.dim() {
        let _ = write!(out, "f{j},");
    }
    out.push_str(label_column);
    out.push('\n');
    for i in 0..dataset.len() {
        for &v in dataset.features.row(i) {
            out.push_str(&float_cell(v));
            out.push(',');
        }
        let _ = writeln!(out, "{}", dataset.labels[i]);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Feature matrix (optionally with labels) loaded from a headered CSV.
#[derive(Debug)]
pub struct LoadedCsv {
    pub features: Matrix,
    pub feature_names: Vec<String>,
    /// Present when a label column was requested.
    pub labels: Option<Vec<usize>>,
    pub n_classes: usize,
}

impl LoadedCsv {
    pub fn into_dataset(self) -> Result<Dataset> {
        let labels = self
            .labels
            .ok_or_else(|| Error::invalid("csv was loaded without a label column".to_string()))?;
        Dataset::new(self.features, labels, self.n_classes)
    }
}

/// Load a headered CSV. Features are all non-label columns in header order.
/// `label_column = None` loads unlabeled features (e.g. for scoring).
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<LoadedCsv> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_s = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Csv {
        path: path_s.clone(),
        row: 0,
        column: "-".to_string(),
        message: "file is empty".to_string(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = match label_column {
        Some(name) => Some(columns.iter().position(|c| *c == name).ok_or_else(|| Error::Csv {
            path: path_s.clone(),
            row: 0,
            column: name.to_string(),
            message: "label column not found in header".to_string(),
        })?),
        None => None,
    };
    let feature_names: Vec<String> = columns
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, c)| c.to_string())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::Csv {
                path: path_s.clone(),
                row: lineno,
                column: "-".to_string(),
                message: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (j, cell) in cells.iter().enumerate() {
            if Some(j) == label_idx {
                raw_labels.push((*cell).to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                path: path_s.clone(),
                row: lineno,
                column: columns[j].to_string(),
                message: format!("non-numeric feature cell {cell:?}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: path_s,
            row: 1,
            column: "-".to_string(),
            message: "no data rows".to_string(),
        });
    }
    let features = Matrix::from_rows(&rows)?;
    let (labels, n_classes) = match label_idx {
        Some(_) => {
            let mapped = map_labels(&raw_labels);
            let n = mapped.iter().copied().max().unwrap_or(0) + 1;
            (Some(mapped), n.max(2))
        }
        None => (None, 0),
    };
    Ok(LoadedCsv { features, feature_names, labels, n_classes })
}

/// Dense integer labels `{0..k-1}` pass through; anything else maps by
/// first appearance.
fn map_labels(raw: &[String]) -> Vec<usize> {
    let as_ints: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    if let Some(ints) = as_ints {
        let max = ints.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; max + 1];
        for &v in &ints {
            seen[v] = true;
        }
        if seen.iter().all(|&s| s) {
            return ints;
        }
    }
    let mut order: Vec<&str> = Vec::new();
    raw.iter()
        .map(|s| {
            if let Some(pos) = order.iter().position(|seen| *seen == s.as_str()) {
                pos
            } else {
                order.push(s.as_str());
                order.len() - 1
            }
        })
        .collect()
}

/// Per-feature mean/std computed on `train` only and applied to every dataset.
/// Features with std below 1e-12 are centered but not divided. Returns the
/// transformed datasets (train first, then `others` in order) and the stats.
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Vec<Dataset>, Vec<f64>, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::EmptyInput("standardize: train"));
    }
    let d = train.dim();
    let m = train.len() as f64;
    let mut mean = vec![0.0; d];
    for i in 0..train.len() {
        for (j, v) in train.features.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    let mut std = vec![0.0; d];
    for i in 0..train.len() {
        for (j, v) in train.features.row(i).iter().enumerate() {
            let c = v - mean[j];
            std[j] += c * c;
        }
    }
    for v in &mut std {
        *v = (*v / m).sqrt();
    }
    let mut out = Vec::with_capacity(1 + others.len());
    out.push(apply_standardize(train, &mean, &std));
    for ds in others {
        if !ds.is_empty() && ds.dim() != d {
            return Err(Error::dim(format!(
                "standardize: dataset dim {} vs train dim {}",
                ds.dim(),
                d
            )));
        }
        out.push(apply_standardize(ds, &mean, &std));
    }
    Ok((out, mean, std))
}

/// Apply previously computed standardization stats.
pub fn apply_standardize(ds: &Dataset, mean: &[f64], std: &[f64]) -> Dataset {
    let mut features = ds.features.clone();
    for i in 0..features.rows() {
        for (j, v) in features.row_mut(i).iter_mut().enumerate() {
            *v -= mean[j];
            if std[j] >= 1e-12 {
                *v /= std[j];
            }
        }
    }
    Dataset { features, labels: ds.labels.clone(), n_classes: ds.n_classes }
}

/// Shuffle with a seeded permutation, then cut contiguous train/validation/
/// test slices whose sizes match `fractions` up to rounding.
pub fn split_shuffle(d: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if !(ft >= 0.0 && fv >= 0.0 && fs >= 0.0) {
        return Err(Error::invalid(format!("split fractions must be non-negative: {fractions:?}")));
    }
    let sum = ft + fv + fs;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {sum}, expected 1")));
    }
    let m = d.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut perm);
    let n_train = ((ft * m as f64).round() as usize).min(m);
    let n_val = ((fv * m as f64).round() as usize).min(m - n_train);
    let train: Vec<usize> = perm[..n_train].to_vec();
    let validation: Vec<usize> = perm[n_train..n_train + n_val].to_vec();
    let test: Vec<usize> = perm[n_train + n_val..].to_vec();
    Ok(Split {
        train: d.select(&train),
        validation: d.select(&validation),
        test: d.select(&test),
    })
}
