//! GZSL datasets: synthetic generation, CSV/JSON ingestion, normalization
//! and batching.
//!
//! On disk a dataset is three files:
//!
//! * `features.csv`: header `label,f0,…,f{d_x−1}`, one row per sample;
//! * `attributes.csv`: header `label,a0,…,a{d_h−1}`, one row per class;
//! * `splits.json`: `{"seen_classes": [...], "unseen_classes": [...],
//!   "partitions": ["train-seen" | "test-seen" | "test-unseen", ...]}` with
//!   one partition per feature row, in file order.
//!
//! Labels are integer class ids. Floats are decimal text that parses back to
//! the same 64-bit value; `NaN` and infinities are rejected.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partition {
    #[serde(rename = "train-seen")]
    TrainSeen,
    #[serde(rename = "test-seen")]
    TestSeen,
    #[serde(rename = "test-unseen")]
    TestUnseen,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::TrainSeen, Partition::TestSeen, Partition::TestUnseen];

    fn bit(self) -> u8 {
        match self {
            Partition::TrainSeen => 1,
            Partition::TestSeen => 2,
            Partition::TestUnseen => 4,
        }
    }
}

/// Features, labels and class attributes with a seen/unseen split.
///
/// Labels are dense class indices into the rows of `attributes`; the
/// original ids from the files are kept in `class_ids`. Every read of a
/// partition's rows is recorded, see [`GzslDataset::accessed`].
#[derive(Clone, Debug)]
pub struct GzslDataset {
    features: Matrix,
    labels: Vec<usize>,
    class_ids: Vec<i64>,
    attributes: Matrix,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    partitions: Vec<Partition>,
    access: Arc<AtomicU8>,
}

impl PartialEq for GzslDataset {
    fn eq(&self, o: &Self) -> bool {
        self.features == o.features
            && self.labels == o.labels
            && self.class_ids == o.class_ids
            && self.attributes == o.attributes
            && self.seen == o.seen
            && self.unseen == o.unseen
            && self.partitions == o.partitions
    }
}

/// One minibatch: features, labels and the attribute row of each label.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub attributes: Matrix,
}

impl GzslDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_ids: Vec<i64>,
        attributes: Matrix,
        seen: Vec<usize>,
        unseen: Vec<usize>,
        partitions: Vec<Partition>,
    ) -> Result<Self> {
        let n = features.rows();
        let classes = attributes.rows();
        if labels.len() != n || partitions.len() != n {
            return Err(Error::Schema {
                path: PathBuf::new(),
                detail: format!("{n} samples but {} labels and {} partitions", labels.len(), partitions.len()),
            });
        }
        if class_ids.len() != classes {
            return Err(Error::Schema { path: PathBuf::new(), detail: "one class id per attribute row required".into() });
        }
        if let Some(&y) = labels.iter().chain(&seen).chain(&unseen).find(|&&y| y >= classes) {
            return Err(Error::Schema { path: PathBuf::new(), detail: format!("class index {y} has no attribute row") });
        }
        if let Some(y) = seen.iter().find(|y| unseen.contains(y)) {
            return Err(Error::Invariant(format!("class {} is both seen and unseen", class_ids[*y])));
        }
        for (i, (&y, &p)) in labels.iter().zip(&partitions).enumerate() {
            let ok = match p {
                Partition::TrainSeen | Partition::TestSeen => seen.contains(&y),
                Partition::TestUnseen => unseen.contains(&y),
            };
            if !ok {
                return Err(Error::Invariant(format!(
                    "sample {i} of class {} is tagged {p:?}",
                    class_ids[y]
                )));
            }
        }
        for c in 0..classes {
            let row = attributes.row(c);
            if row.iter().any(|v| !v.is_finite()) || row.iter().all(|&v| v == 0.0) {
                return Err(Error::Invariant(format!("attribute row of class {} is non-finite or all zero", class_ids[c])));
            }
        }
        if !features.is_finite() {
            return Err(Error::Invariant("features contain non-finite values".into()));
        }
        let mut ids = class_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != class_ids.len() {
            return Err(Error::Schema { path: PathBuf::new(), detail: "duplicate class ids".into() });
        }
        let mut seen = seen;
        let mut unseen = unseen;
        seen.sort_unstable();
        seen.dedup();
        unseen.sort_unstable();
        unseen.dedup();
        Ok(GzslDataset { features, labels, class_ids, attributes, seen, unseen, partitions, access: Arc::default() })
    }

    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn d_x(&self) -> usize {
        self.features.cols()
    }

    pub fn d_h(&self) -> usize {
        self.attributes.cols()
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    pub fn class_ids(&self) -> &[i64] {
        &self.class_ids
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen_classes(&self) -> &[usize] {
        &self.unseen
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    /// Position of a class in the sorted seen-class list.
    pub fn seen_position(&self, class: usize) -> Option<usize> {
        self.seen.binary_search(&class).ok()
    }

    /// Row indices of a partition, in dataset order. Recorded as an access.
    pub fn indices(&self, partition: Partition) -> Vec<usize> {
        self.access.fetch_or(partition.bit(), Ordering::Relaxed);
        (0..self.num_samples()).filter(|&i| self.partitions[i] == partition).collect()
    }

    /// Features and labels of a partition. Recorded as an access.
    pub fn subset(&self, partition: Partition) -> (Matrix, Vec<usize>) {
        let idx = self.indices(partition);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (self.features.gather_rows(&idx), labels)
    }

    /// Partitions whose rows have been read since construction or the last
    /// [`GzslDataset::reset_access`]. Shared between clones.
    pub fn accessed(&self) -> Vec<Partition> {
        let bits = self.access.load(Ordering::Relaxed);
        Partition::ALL.into_iter().filter(|p| bits & p.bit() != 0).collect()
    }

    pub fn reset_access(&self) {
        self.access.store(0, Ordering::Relaxed);
    }

    /// Full feature matrix and labels, bypassing access tracking; for
    /// serialization and tests.
    pub fn raw(&self) -> (&Matrix, &[usize]) {
        (&self.features, &self.labels)
    }

    /// Minibatches covering a partition exactly once, the last one possibly
    /// short. With `shuffle` the order is a permutation drawn from `rng`.
    pub fn batches(&self, partition: Partition, batch_size: usize, rng: &mut RngStream, shuffle: bool) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let mut idx = self.indices(partition);
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("partition {partition:?} is empty")));
        }
        if shuffle {
            idx.shuffle(rng);
        }
        Ok(idx
            .chunks(batch_size)
            .map(|chunk| {
                let labels: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
                Batch {
                    indices: chunk.to_vec(),
                    features: self.features.gather_rows(chunk),
                    attributes: self.attributes.gather_rows(&labels),
                    labels,
                }
            })
            .collect())
    }

    fn with_features(&self, features: Matrix) -> Self {
        GzslDataset { features, access: Arc::default(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    None,
    UnitL2,
    MinMax,
}

impl NormMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormMode::None),
            "unit-l2" => Ok(NormMode::UnitL2),
            "min-max" => Ok(NormMode::MinMax),
            _ => Err(Error::InvalidArgument(format!("unknown normalization {s:?} (none, unit-l2, min-max)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::UnitL2 => "unit-l2",
            NormMode::MinMax => "min-max",
        }
    }
}

/// Rescales features. Min-max statistics come from train-seen rows only and
/// are applied to every row; constant columns map to 0. Zero rows stay zero
/// under unit-l2.
pub fn normalize_features(ds: &GzslDataset, mode: NormMode) -> GzslDataset {
    let mut x = ds.features.clone();
    match mode {
        NormMode::None => {}
        NormMode::UnitL2 => {
            for i in 0..x.rows() {
                let row = x.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        NormMode::MinMax => {
            let d = x.cols();
            let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
            for i in (0..x.rows()).filter(|&i| ds.partitions[i] == Partition::TrainSeen) {
                for (j, &v) in x.row(i).iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            for i in 0..x.rows() {
                for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                    let span = hi[j] - lo[j];
                    *v = if span > 0.0 && span.is_finite() { (*v - lo[j]) / span } else { 0.0 };
                }
            }
        }
    }
    ds.with_features(x)
}

/// Parameters of a synthetic dataset.
///
/// Each class gets a nonnegative attribute vector in which every entry is
/// nonzero with probability `attribute_density` and uniform on `[0, 1)`.
/// Features are `relu(M·h_y) + σ·noise` with one Gaussian map `M` shared by
/// all classes. Seen classes come first in the class order.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub d_x: usize,
    pub d_h: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub attribute_density: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_seen: 5,
            n_unseen: 5,
            d_x: 32,
            d_h: 8,
            train_per_class: 100,
            test_per_class: 50,
            attribute_density: 0.5,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen < 2 || self.n_unseen < 1 {
            return Err(Error::InvalidArgument("need at least 2 seen and 1 unseen class".into()));
        }
        if self.d_x == 0 || self.d_h == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidArgument("dimensions and per-class counts must be >= 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if !(self.attribute_density > 0.0 && self.attribute_density <= 1.0) {
            return Err(Error::InvalidArgument("attribute density must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<GzslDataset> {
    spec.validate()?;
    let classes = spec.n_seen + spec.n_unseen;
    let mut attr_rng = RngStream::new(spec.seed, "synth/attributes");
    let mut attributes = Matrix::zeros(classes, spec.d_h);
    for c in 0..classes {
        loop {
            for v in attributes.row_mut(c) {
                let keep = attr_rng.uniform() < spec.attribute_density;
                let u = attr_rng.uniform();
                *v = if keep { u } else { 0.0 };
            }
            if attributes.row(c).iter().any(|&v| v != 0.0) {
                break;
            }
        }
    }
    let scale = 1.0 / (spec.d_h as f64 * spec.attribute_density).sqrt();
    let mut map = RngStream::new(spec.seed, "synth/map").gaussian_matrix(spec.d_h, spec.d_x);
    map.data_mut().iter_mut().for_each(|v| *v *= scale);
    let mut noise = RngStream::new(spec.seed, "synth/noise");

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut partitions = Vec::new();
    for c in 0..classes {
        let mean: Vec<f64> = (0..spec.d_x)
            .map(|j| (0..spec.d_h).map(|k| attributes.get(c, k) * map.get(k, j)).sum::<f64>().max(0.0))
            .collect();
        let plan: &[(Partition, usize)] = if c < spec.n_seen {
            &[(Partition::TrainSeen, spec.train_per_class), (Partition::TestSeen, spec.test_per_class)]
        } else {
            &[(Partition::TestUnseen, spec.test_per_class)]
        };
        for &(p, count) in plan {
            for _ in 0..count {
                rows.push(mean.iter().map(|m| m + spec.sigma * noise.gaussian()).collect::<Vec<_>>());
                labels.push(c);
                partitions.push(p);
            }
        }
    }
    GzslDataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        (0..classes as i64).collect(),
        attributes,
        (0..spec.n_seen).collect(),
        (spec.n_seen..classes).collect(),
        partitions,
    )
}

/// Paths of the three dataset files inside a directory.
pub struct DatasetPaths {
    pub features: PathBuf,
    pub attributes: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            features: dir.join("features.csv"),
            attributes: dir.join("attributes.csv"),
            splits: dir.join("splits.json"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    seen_classes: Vec<i64>,
    unseen_classes: Vec<i64>,
    partitions: Vec<Partition>,
}

/// Rows of a labelled numeric CSV: `(line, label, values)`.
fn read_table(path: &Path, prefix: char) -> Result<Vec<(u64, i64, Vec<f64>)>> {
    let parse_err = |line: u64, detail: String| Error::Parse { path: path.to_path_buf(), line, detail };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let width = header.len();
    if width < 2 || &header[0] != "label" {
        return Err(parse_err(1, format!("header must start with `label` and have at least one {prefix}-column")));
    }
    for (k, name) in header.iter().skip(1).enumerate() {
        if name != format!("{prefix}{k}") {
            return Err(parse_err(1, format!("column {} is {name:?}, expected {prefix}{k}", k + 1)));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        let label = rec[0].trim().parse::<i64>().map_err(|_| parse_err(line, format!("bad label {:?}", &rec[0])))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| match s.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("not a finite number: {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((line, label, values));
    }
    Ok(out)
}

pub fn load_dataset(features_path: &Path, attributes_path: &Path, splits_path: &Path) -> Result<GzslDataset> {
    let attr_rows = read_table(attributes_path, 'a')?;
    if attr_rows.is_empty() {
        return Err(Error::Schema { path: attributes_path.into(), detail: "no attribute rows".into() });
    }
    let class_ids: Vec<i64> = attr_rows.iter().map(|r| r.1).collect();
    let index_of = |id: i64, path: &Path| {
        class_ids
            .iter()
            .position(|&c| c == id)
            .ok_or_else(|| Error::Schema { path: path.into(), detail: format!("class {id} has no attribute row") })
    };
    let attributes = Matrix::from_rows(&attr_rows.iter().map(|r| r.2.clone()).collect::<Vec<_>>())?;

    let feat_rows = read_table(features_path, 'f')?;
    let labels = feat_rows.iter().map(|r| index_of(r.1, features_path)).collect::<Result<Vec<_>>>()?;
    let d_x = feat_rows.first().map_or(0, |r| r.2.len());
    let data: Vec<f64> = feat_rows.into_iter().flat_map(|r| r.2).collect();
    let features = Matrix::new(labels.len(), d_x, data)?;

    let text = std::fs::read_to_string(splits_path).map_err(|e| Error::io(splits_path, e))?;
    let splits: SplitsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: splits_path.into(),
        line: e.line() as u64,
        detail: e.to_string(),
    })?;
    let seen = splits.seen_classes.iter().map(|&c| index_of(c, splits_path)).collect::<Result<Vec<_>>>()?;
    let unseen = splits.unseen_classes.iter().map(|&c| index_of(c, splits_path)).collect::<Result<Vec<_>>>()?;
    GzslDataset::new(features, labels, class_ids, attributes, seen, unseen, splits.partitions).map_err(|e| match e {
        Error::Schema { path, detail } if path.as_os_str().is_empty() => Error::Schema { path: splits_path.into(), detail },
        other => other,
    })
}

pub fn load_dataset_dir(dir: &Path) -> Result<GzslDataset> {
    let p = DatasetPaths::in_dir(dir);
    load_dataset(&p.features, &p.attributes, &p.splits)
}

fn write_table(path: &Path, prefix: char, labels: impl Iterator<Item = i64>, values: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    let to_err = |e: csv::Error| Error::Io { path: path.into(), source: std::io::Error::other(e) };
    let mut header = vec!["label".to_string()];
    header.extend((0..values.cols()).map(|k| format!("{prefix}{k}")));
    w.write_record(&header).map_err(to_err)?;
    for (i, label) in labels.enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(values.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `features.csv`, `attributes.csv` and `splits.json` into `dir`.
pub fn save_dataset(ds: &GzslDataset, dir: &Path) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = DatasetPaths::in_dir(dir);
    write_table(&p.features, 'f', ds.labels.iter().map(|&y| ds.class_ids[y]), &ds.features)?;
    write_table(&p.attributes, 'a', ds.class_ids.iter().copied(), &ds.attributes)?;
    let splits = SplitsFile {
        seen_classes: ds.seen.iter().map(|&c| ds.class_ids[c]).collect(),
        unseen_classes: ds.unseen.iter().map(|&c| ds.class_ids[c]).collect(),
        partitions: ds.partitions.clone(),
    };
    let mut json = serde_json::to_string_pretty(&splits).expect("plain struct serializes");
    json.push('\n');
    std::fs::write(&p.splits, json).map_err(|e| Error::io(&p.splits, e))?;
    Ok(p)
}
