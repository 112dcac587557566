//! Multi-label datasets: dense feature/label matrices, CSV ingestion, a
//! seeded synthetic generator and seeded train/val/test splitting.
//!
//! CSV layout: `id,f:0,...,f:{d-1},y:<name0>,...,y:<name{C-1}>`. Feature
//! columns must precede label columns; labels are strictly `0` or `1`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FEATURE_PREFIX: &str = "f:";
const LABEL_PREFIX: &str = "y:";

/// Dense `N x d` matrix of finite real features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / values.ncols(), pos % values.ncols());
            return Err(Error::NonFinite(format!("feature at ({r}, {c})")));
        }
        Ok(Self(values))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self(self.0.select(Axis(0), rows))
    }
}

/// Dense `N x C` binary label matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix(Array2<u8>);

impl LabelMatrix {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            let (r, c) = (pos / values.ncols(), pos % values.ncols());
            return Err(Error::InvalidArgument(format!(
                "label at ({r}, {c}) is {}, expected 0 or 1",
                values.as_slice_memory_order().map_or(0, |s| s[pos])
            )));
        }
        // Row-major storage is assumed by the cell-indexed APIs.
        Ok(Self(values.as_standard_layout().into_owned()))
    }

    pub fn zeros(rows: usize, classes: usize) -> Self {
        Self(Array2::zeros((rows, classes)))
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Shape("ragged label rows".into()));
        }
        let flat: Vec<u8> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), classes), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(values)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn cells(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, row: usize, class: usize) -> u8 {
        self.0[[row, class]]
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.0.view()
    }

    /// Row-major cell values; cell `k` is `(k / C, k % C)`.
    pub fn as_slice(&self) -> &[u8] {
        self.0
            .as_slice()
            .expect("label matrix is kept in standard layout")
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u8] {
        self.0
            .as_slice_mut()
            .expect("label matrix is kept in standard layout")
    }

    pub fn row(&self, row: usize) -> ArrayView1<'_, u8> {
        self.0.row(row)
    }

    pub fn column(&self, class: usize) -> ArrayView1<'_, u8> {
        self.0.column(class)
    }

    pub fn positives_per_class(&self) -> Vec<usize> {
        self.0
            .columns()
            .into_iter()
            .map(|col| col.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    pub fn positives_per_row(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| row.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    pub fn total_positives(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self(self.0.select(Axis(0), rows))
    }

    /// Cell-wise XOR; both matrices must have the same shape.
    pub fn xor(&self, other: &LabelMatrix) -> Result<LabelMatrix> {
        if self.0.dim() != other.0.dim() {
            return Err(Error::Shape(format!(
                "xor of {:?} and {:?}",
                self.0.dim(),
                other.0.dim()
            )));
        }
        Ok(Self(
            ndarray::Zip::from(&self.0)
                .and(&other.0)
                .map_collect(|a, b| a ^ b),
        ))
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.0.mapv(f64::from)
    }
}

/// Per-class and overall positive rates of a label matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalence {
    pub per_class: Vec<f64>,
    pub overall: f64,
}

pub fn prevalence(labels: &LabelMatrix) -> Prevalence {
    let n = labels.rows();
    let cells = labels.cells();
    if n == 0 || cells == 0 {
        return Prevalence {
            per_class: vec![0.0; labels.classes()],
            overall: 0.0,
        };
    }
    let per_class = labels
        .positives_per_class()
        .into_iter()
        .map(|p| p as f64 / n as f64)
        .collect();
    Prevalence {
        per_class,
        overall: labels.total_positives() as f64 / cells as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelDataset {
    features: FeatureMatrix,
    labels: LabelMatrix,
    ids: Vec<String>,
    class_names: Vec<String>,
}

impl MultiLabelDataset {
    pub fn new(
        features: FeatureMatrix,
        labels: LabelMatrix,
        ids: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        if ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} ids for {} rows",
                ids.len(),
                features.rows()
            )));
        }
        if class_names.len() != labels.classes() {
            return Err(Error::Shape(format!(
                "{} class names for {} label columns",
                class_names.len(),
                labels.classes()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate id {dup:?}")));
        }
        Ok(Self {
            features,
            labels,
            ids,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.classes()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Same instances with a replacement label matrix of identical shape.
    pub fn with_labels(&self, labels: LabelMatrix) -> Result<Self> {
        if labels.view().dim() != self.labels.view().dim() {
            return Err(Error::Shape(format!(
                "replacement labels {:?} for dataset labels {:?}",
                labels.view().dim(),
                self.labels.view().dim()
            )));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    /// Subset in the given row order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: self.labels.select_rows(rows),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<MultiLabelDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<MultiLabelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| Error::parse(None, None, format!("header: {e}")))?,
        None => return Err(Error::parse(None, None, "empty file")),
    };
    if header.get(0) != Some("id") {
        return Err(Error::parse(None, Some(1), "first header column must be `id`"));
    }
    let mut n_features = 0;
    let mut class_names = Vec::new();
    for (col, name) in header.iter().enumerate().skip(1) {
        if let Some(label) = name.strip_prefix(LABEL_PREFIX) {
            class_names.push(label.to_string());
        } else if let Some(index) = name.strip_prefix(FEATURE_PREFIX) {
            if !class_names.is_empty() {
                return Err(Error::parse(
                    None,
                    Some(col + 1),
                    "feature column after label columns",
                ));
            }
            if index.parse::<usize>().ok() != Some(n_features) {
                return Err(Error::parse(
                    None,
                    Some(col + 1),
                    format!("expected `f:{n_features}`, found `{name}`"),
                ));
            }
            n_features += 1;
        } else {
            return Err(Error::parse(
                None,
                Some(col + 1),
                format!("column `{name}` lacks an `f:` or `y:` prefix"),
            ));
        }
    }
    if n_features == 0 || class_names.is_empty() {
        return Err(Error::parse(
            None,
            None,
            "header must declare at least one feature and one label column",
        ));
    }
    let width = 1 + n_features + class_names.len();

    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(Some(row), None, e.to_string()))?;
        if rec.len() != width {
            return Err(Error::parse(
                Some(row),
                None,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        for col in 1..=n_features {
            let value: f64 = rec[col].trim().parse().map_err(|_| {
                Error::parse(
                    Some(row),
                    Some(col + 1),
                    format!("non-numeric feature `{}`", &rec[col]),
                )
            })?;
            if !value.is_finite() {
                return Err(Error::parse(Some(row), Some(col + 1), "non-finite feature"));
            }
            feats.push(value);
        }
        for col in 1 + n_features..width {
            let value = match rec[col].trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::parse(
                        Some(row),
                        Some(col + 1),
                        format!("label must be 0 or 1, found `{other}`"),
                    ))
                }
            };
            labels.push(value);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::parse(None, None, "no data rows"));
    }
    let features = Array2::from_shape_vec((n, n_features), feats)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let labels = Array2::from_shape_vec((n, class_names.len()), labels)
        .map_err(|e| Error::Shape(e.to_string()))?;
    MultiLabelDataset::new(
        FeatureMatrix::new(features)?,
        LabelMatrix::new(labels)?,
        ids,
        class_names,
    )
}

pub fn save_csv(ds: &MultiLabelDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Floats use Rust's shortest round-trip formatting, so re-saving a loaded
/// file written by this function reproduces it byte for byte.
pub fn write_csv(ds: &MultiLabelDataset, out: &mut impl Write) -> std::io::Result<()> {
    let mut header = vec!["id".to_string()];
    header.extend((0..ds.n_features()).map(|j| format!("{FEATURE_PREFIX}{j}")));
    header.extend(ds.class_names.iter().map(|c| format!("{LABEL_PREFIX}{c}")));
    writeln!(out, "{}", header.join(","))?;
    let feats = ds.features.view();
    let labels = ds.labels.view();
    for (i, id) in ds.ids.iter().enumerate() {
        write!(out, "{id}")?;
        for v in feats.row(i) {
            write!(out, ",{v}")?;
        }
        for v in labels.row(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parameters of the synthetic linear-latent generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    /// Mean positive rate over all cells.
    pub target_prevalence: f64,
    /// Share of each class weight vector drawn from a common direction.
    pub class_correlation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// The benchmark configuration: 4000 instances, 32 features, 10 classes,
    /// 20% of cells positive.
    fn default() -> Self {
        Self {
            n: 4000,
            d: 32,
            classes: 10,
            target_prevalence: 0.2,
            class_correlation: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.classes == 0 {
            return Err(Error::InvalidArgument(
                "synthetic dataset needs n, d and classes >= 1".into(),
            ));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target prevalence {} outside (0, 1)",
                self.target_prevalence
            )));
        }
        if !(0.0..1.0).contains(&self.class_correlation) {
            return Err(Error::InvalidArgument(format!(
                "class correlation {} outside [0, 1)",
                self.class_correlation
            )));
        }
        Ok(())
    }

    /// Per-class prevalence targets, spread linearly around the overall target
    /// so class frequencies differ while their mean stays at the target.
    pub fn class_targets(&self) -> Vec<f64> {
        let t = self.target_prevalence;
        if self.classes == 1 {
            return vec![t];
        }
        let spread = 0.5 * (1.0 - t).min(t) / t;
        (0..self.classes)
            .map(|c| {
                let u = c as f64 / (self.classes - 1) as f64;
                t * (1.0 - spread + 2.0 * spread * u)
            })
            .collect()
    }
}

const CALIBRATION_ITERATIONS: usize = 50;
const CALIBRATION_TOLERANCE: f64 = 0.02;
/// Standard deviation of the per-cell latent perturbation, relative to the
/// unit-variance class score.
const LATENT_NOISE: f64 = 0.35;

/// Generates instances `x ~ N(0, I_d)` and labels `y_c = [w_c . x + e > t_c]`,
/// with unit-norm class directions `w_c`, small Gaussian latent noise `e` and
/// thresholds `t_c` found by bisection so each class hits its target rate.
pub fn synth_generate(spec: &SynthSpec) -> Result<MultiLabelDataset> {
    spec.validate()?;
    let SynthSpec { n, d, classes, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let shared: Array1<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let rho = spec.class_correlation;
    let mut weights = Array2::<f64>::zeros((d, classes));
    for c in 0..classes {
        let own: Array1<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let w = &shared * rho.sqrt() + &own * (1.0 - rho).sqrt();
        let norm = w.dot(&w).sqrt().max(f64::MIN_POSITIVE);
        weights.column_mut(c).assign(&(w / norm));
    }

    let features = Array2::from_shape_simple_fn((n, d), || normal(&mut rng));
    let mut scores = features.dot(&weights);
    scores.mapv_inplace(|s| s + LATENT_NOISE * normal(&mut rng));

    let targets = spec.class_targets();
    let mut labels = Array2::<u8>::zeros((n, classes));
    for (c, &target) in targets.iter().enumerate() {
        let column = scores.column(c);
        let threshold = calibrate_threshold(column, target, c)?;
        for (i, &s) in column.iter().enumerate() {
            labels[[i, c]] = u8::from(s > threshold);
        }
    }

    let width = n.to_string().len();
    let ids = (0..n).map(|i| format!("s{i:0width$}")).collect();
    let class_names = (0..classes).map(|c| format!("c{c}")).collect();
    MultiLabelDataset::new(
        FeatureMatrix::new(features)?,
        LabelMatrix::new(labels)?,
        ids,
        class_names,
    )
}

fn calibrate_threshold(scores: ArrayView1<'_, f64>, target: f64, class: usize) -> Result<f64> {
    let n = scores.len() as f64;
    let rate = |t: f64| scores.iter().filter(|&&s| s > t).count() as f64 / n;
    let (mut lo, mut hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    // rate(lo) <= 1 and rate(hi) == 0; rate is non-increasing in t.
    lo -= 1.0;
    let mut best = (f64::INFINITY, lo);
    for _ in 0..CALIBRATION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        let err = (r - target).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if err <= CALIBRATION_TOLERANCE * 0.25 {
            break;
        }
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration {
            class,
            target,
            best: rate(best.1),
            iterations: CALIBRATION_ITERATIONS,
        });
    }
    Ok(best.1)
}

/// Fractions of a three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::new(0.8, 0.1, 0.1)
    }
}

/// Row indices of each part, in permuted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive, got {train}/{val}/{test}"
        )));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios sum to {}, expected 1",
            train + val + test
        )));
    }
    let n_train = (train * n as f64).round() as usize;
    let n_val = (val * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "ratios {train}/{val}/{test} leave a split empty for n = {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_part = order.split_off(n_train + n_val);
    let val_part = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val: val_part,
        test: test_part,
    })
}

pub fn split(
    ds: &MultiLabelDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(MultiLabelDataset, MultiLabelDataset, MultiLabelDataset)> {
    let idx = split_indices(ds.len(), ratios, seed)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.val), ds.subset(&idx.test)))
}
