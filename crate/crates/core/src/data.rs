//! Datasets: synthetic Gaussian blobs, CSV loading, stratified splitting and
//! standardization.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Smallest standard deviation the scaler divides by.
pub const STD_FLOOR: f64 = 1e-8;

/// Dense feature matrix with integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking that labels are in range, every class is
    /// present and all features are finite.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Param("feature_dim must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::SingleClass(num_classes));
        }
        let mut seen = vec![false; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Param(format!(
                    "label {y} at row {i} outside [0, {num_classes})"
                )));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyClass(c));
        }
        if let Some(((r, c), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::BadCell {
                row: r,
                column: format!("feature {c}"),
                value: v.to_string(),
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Copies the given rows (repeats allowed) into a feature matrix and label vector.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// Sub-dataset over `indices`. Class coverage is re-checked.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (x, y) = self.gather(indices);
        Self::new(x, y, self.num_classes)
    }

    /// Writes the dataset as CSV with header `f0,..,f{d-1},label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.feature_dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &y) in self.features.outer_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Isotropic unit-variance Gaussian blobs.
///
/// Class means are drawn uniformly from `[-class_separation, class_separation]^d`,
/// then `samples_per_class` points per class, rows ordered class-major.
/// A separation of zero puts every mean at the origin.
pub fn generate_blobs(
    num_classes: usize,
    feature_dim: usize,
    samples_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Param(format!("num_classes must be >= 2, got {num_classes}")));
    }
    if feature_dim == 0 {
        return Err(Error::Param("feature_dim must be >= 1".into()));
    }
    if samples_per_class == 0 {
        return Err(Error::Param("samples_per_class must be >= 1".into()));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(Error::Param(format!(
            "class_separation must be finite and non-negative, got {class_separation}"
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0, 0);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..feature_dim)
                .map(|_| class_separation * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        })
        .collect();
    let n = num_classes * samples_per_class;
    let mut features = Array2::zeros((n, feature_dim));
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for k in 0..samples_per_class {
            let mut row = features.row_mut(c * samples_per_class + k);
            for (x, m) in row.iter_mut().zip(mean) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + z;
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, num_classes)
}

/// Loads a comma-separated file with a header row.
///
/// Every column except `label_column` is a numeric feature. Label values are
/// encoded by order of first appearance: the first distinct label seen becomes
/// class 0, the next class 1, and so on. This holds for integer labels too.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let d = header.len() - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut codes: HashMap<String, usize> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                let next = codes.len();
                labels.push(*codes.entry(cell.to_string()).or_insert(next));
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::BadCell {
                        row,
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
    }
    if codes.len() < 2 {
        return Err(Error::SingleClass(codes.len()));
    }
    let features = Array2::from_shape_vec((labels.len(), d), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, labels, codes.len())
}

/// Number of test rows taken from a class of `class_size` rows:
/// `max(1, floor(class_size · test_fraction))`, capped at `class_size - 1`.
pub fn stratified_test_count(class_size: usize, test_fraction: f64) -> usize {
    // The epsilon keeps products like 50 · 0.2 from landing just below an integer.
    let raw = (class_size as f64 * test_fraction + 1e-9).floor() as usize;
    raw.max(1).min(class_size.saturating_sub(1))
}

/// Stratified split returning `(train_indices, test_indices)`, each ascending.
pub fn split_indices(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Param(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in dataset.class_indices().into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::CannotStratify {
                class: c,
                count: idx.len(),
            });
        }
        let mut rng = rng::stream(seed, Purpose::Split, 0, c as u64);
        idx.shuffle(&mut rng);
        let n_test = stratified_test_count(idx.len(), test_fraction);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset, test_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

/// Per-column standardization statistics (population std, floored).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Scaler {
    pub fn fit(train: &Dataset) -> Self {
        let x = train.features();
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let std = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                var.sqrt().max(STD_FLOOR)
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_dim() != self.mean.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} columns, dataset has {}",
                self.mean.len(),
                dataset.feature_dim()
            )));
        }
        let mut x = dataset.features().clone();
        for mut row in x.outer_iter_mut() {
            row -= &self.mean;
            row /= &self.std;
        }
        Dataset::new(x, dataset.labels().to_vec(), dataset.num_classes())
    }
}

pub fn fit_standardizer(train: &Dataset) -> Scaler {
    Scaler::fit(train)
}

pub fn apply_standardizer(scaler: &Scaler, dataset: &Dataset) -> Result<Dataset> {
    scaler.transform(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn blobs_shape_and_counts() {
        let ds = generate_blobs(3, 4, 10, 5.0, 7).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.feature_dim(), 4);
        for c in 0..3 {
            assert_eq!(ds.labels().iter().filter(|&&y| y == c).count(), 10);
        }
    }

    #[test]
    fn blobs_zero_separation_centers_at_origin() {
        let ds = generate_blobs(2, 2, 2000, 0.0, 1).unwrap();
        let idx = ds.class_indices();
        for rows in idx {
            let (x, _) = ds.gather(&rows);
            let m = x.mean_axis(Axis(0)).unwrap();
            assert!(m.iter().all(|v| v.abs() < 0.1), "{m}");
        }
    }

    #[test]
    fn blobs_deterministic() {
        let a = generate_blobs(4, 3, 8, 2.0, 42).unwrap();
        let b = generate_blobs(4, 3, 8, 2.0, 42).unwrap();
        let bits = |d: &Dataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&generate_blobs(4, 3, 8, 2.0, 43).unwrap()));
    }

    #[test]
    fn blobs_reject_bad_params() {
        assert!(matches!(generate_blobs(1, 2, 3, 1.0, 0), Err(Error::Param(_))));
        assert!(matches!(generate_blobs(2, 0, 3, 1.0, 0), Err(Error::Param(_))));
        assert!(matches!(generate_blobs(2, 2, 0, 1.0, 0), Err(Error::Param(_))));
        assert!(matches!(generate_blobs(2, 2, 3, -1.0, 0), Err(Error::Param(_))));
    }

    #[test]
    fn csv_first_appearance_encoding() {
        let f = write_tmp("x1,x2,y\n1,2,a\n3,4,a\n5,6,b\n7,8,b\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), &[0, 0, 1, 1]);
        assert_eq!(ds.features()[[2, 1]], 6.0);

        let f = write_tmp("y,x\n2,0.5\n0,1.5\n2,2.5\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            load_csv("/nonexistent/affr.csv", "y"),
            Err(Error::MissingFile(_))
        ));
        let one = write_tmp("x,y\n1,a\n");
        assert!(matches!(load_csv(one.path(), "y"), Err(Error::SingleClass(1))));
        let nan = write_tmp("x1,x2,y\n1,2,a\n3,NaN,b\n");
        match load_csv(nan.path(), "y") {
            Err(Error::BadCell { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x2");
            }
            other => panic!("expected BadCell, got {other:?}"),
        }
        let text = write_tmp("x,y\nabc,a\n1,b\n");
        assert!(matches!(load_csv(text.path(), "y"), Err(Error::BadCell { .. })));
        let ragged = write_tmp("x1,x2,y\n1,2,a\n3,b\n");
        assert!(matches!(
            load_csv(ragged.path(), "y"),
            Err(Error::RaggedRow { row: 1, expected: 3, found: 2 })
        ));
        let nolabel = write_tmp("x1,x2\n1,2\n");
        assert!(matches!(
            load_csv(nolabel.path(), "y"),
            Err(Error::MissingLabelColumn(_))
        ));
    }

    #[test]
    fn csv_round_trip_through_writer() {
        let ds = generate_blobs(3, 2, 4, 1.0, 9).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let f = write_tmp(std::str::from_utf8(&buf).unwrap());
        let back = load_csv(f.path(), "label").unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn split_balanced_counts() {
        let ds = generate_blobs(2, 2, 50, 1.0, 3).unwrap();
        let (train, test) = train_test_split(&ds, 0.2, 11).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        for c in 0..2 {
            assert_eq!(train.labels().iter().filter(|&&y| y == c).count(), 40);
            assert_eq!(test.labels().iter().filter(|&&y| y == c).count(), 10);
        }
    }

    #[test]
    fn split_rounding_rule_small_classes() {
        // 3 per class at 0.5: floor(1.5) = 1 test row, 2 train rows.
        assert_eq!(stratified_test_count(3, 0.5), 1);
        assert_eq!(stratified_test_count(2, 0.1), 1);
        assert_eq!(stratified_test_count(2, 0.9), 1);
        assert_eq!(stratified_test_count(10, 0.3), 3);
        let ds = generate_blobs(2, 1, 3, 1.0, 5).unwrap();
        let (train, test) = split_indices(&ds, 0.5, 1).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 2);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let ds = generate_blobs(3, 2, 20, 1.0, 3).unwrap();
        let a = split_indices(&ds, 0.25, 77).unwrap();
        let b = split_indices(&ds, 0.25, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|i| !a.1.contains(i)));
        assert_eq!(a.0.len() + a.1.len(), ds.len());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let ds = Dataset::new(array![[0.0], [1.0], [2.0]], vec![0, 0, 1], 2).unwrap();
        assert!(matches!(
            split_indices(&ds, 0.5, 0),
            Err(Error::CannotStratify { class: 1, count: 1 })
        ));
    }

    #[test]
    fn scaler_hand_values() {
        let ds = Dataset::new(array![[0.0, 3.0], [2.0, 3.0]], vec![0, 1], 2).unwrap();
        let s = fit_standardizer(&ds);
        assert_eq!(s.mean, array![1.0, 3.0]);
        assert_eq!(s.std, array![1.0, STD_FLOOR]);
        let t = apply_standardizer(&s, &ds).unwrap();
        assert_eq!(t.features(), &array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn scaler_standardizes_training_rows() {
        let ds = generate_blobs(3, 5, 30, 4.0, 8).unwrap();
        let s = fit_standardizer(&ds);
        let t = apply_standardizer(&s, &ds).unwrap();
        let again = fit_standardizer(&t);
        for (m, sd) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-7);
        }
    }
}
