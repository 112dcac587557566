//! Synthetic label corruption and the oracle ledger of flipped cells.
//!
//! The noise level of a corrupted matrix is always the fraction of cells
//! whose value actually changed, recomputed from the flip mask. Injector
//! parameters (a mixed-noise rate, a transition matrix) are not noise levels.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseStrategy {
    None,
    Uniform,
    Mixed,
    Transition,
}

impl fmt::Display for NoiseStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseStrategy::None => "none",
            NoiseStrategy::Uniform => "uniform",
            NoiseStrategy::Mixed => "mixed",
            NoiseStrategy::Transition => "transition",
        })
    }
}

impl FromStr for NoiseStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseStrategy::None),
            "uniform" => Ok(NoiseStrategy::Uniform),
            "mixed" => Ok(NoiseStrategy::Mixed),
            "transition" => Ok(NoiseStrategy::Transition),
            other => Err(Error::InvalidArgument(format!("unknown noise strategy `{other}`"))),
        }
    }
}

/// Which cells were inverted, and the noise levels derived from that.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedger {
    flip_mask: LabelMatrix,
    epsilon: f64,
    epsilon_per_class: Vec<f64>,
    strategy: NoiseStrategy,
    seed: u64,
}

impl NoiseLedger {
    pub fn from_mask(flip_mask: LabelMatrix, strategy: NoiseStrategy, seed: u64) -> Self {
        let n = flip_mask.rows();
        let cells = flip_mask.cells();
        let epsilon = if cells == 0 {
            0.0
        } else {
            flip_mask.total_positives() as f64 / cells as f64
        };
        let epsilon_per_class = flip_mask
            .positives_per_class()
            .into_iter()
            .map(|k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
            .collect();
        Self {
            flip_mask,
            epsilon,
            epsilon_per_class,
            strategy,
            seed,
        }
    }

    pub fn between(
        clean: &LabelMatrix,
        noisy: &LabelMatrix,
        strategy: NoiseStrategy,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::from_mask(clean.xor(noisy)?, strategy, seed))
    }

    /// All-clean ledger for uncorrupted data.
    pub fn clean(rows: usize, classes: usize) -> Self {
        Self::from_mask(LabelMatrix::zeros(rows, classes), NoiseStrategy::None, 0)
    }

    pub fn flip_mask(&self) -> &LabelMatrix {
        &self.flip_mask
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn epsilon_per_class(&self) -> &[f64] {
        &self.epsilon_per_class
    }

    pub fn strategy(&self) -> NoiseStrategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_flipped(&self, row: usize, class: usize) -> bool {
        self.flip_mask.get(row, class) == 1
    }

    /// Ledger restricted to the given rows (e.g. one split).
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self::from_mask(self.flip_mask.select_rows(rows), self.strategy, self.seed)
    }

    /// Undo the corruption: `noisy XOR mask`.
    pub fn restore(&self, noisy: &LabelMatrix) -> Result<LabelMatrix> {
        noisy.xor(&self.flip_mask)
    }

    pub fn sidecar_path(dataset_path: &Path) -> PathBuf {
        dataset_path.with_extension("ledger")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `key=value` header lines, a blank line, then one comma-separated
    /// 0/1 row per instance.
    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let per_class: Vec<String> = self.epsilon_per_class.iter().map(f64::to_string).collect();
        writeln!(out, "strategy={}", self.strategy)?;
        writeln!(out, "seed={}", self.seed)?;
        writeln!(out, "rows={}", self.flip_mask.rows())?;
        writeln!(out, "classes={}", self.flip_mask.classes())?;
        writeln!(out, "epsilon={}", self.epsilon)?;
        writeln!(out, "epsilon_per_class={}", per_class.join(","))?;
        writeln!(out)?;
        for row in self.flip_mask.view().rows() {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the sidecar format; the stored noise levels must agree with
    /// the ones recomputed from the mask.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut strategy = None;
        let mut seed = None;
        let mut rows = None;
        let mut classes = None;
        let mut epsilon = None;
        for (lineno, line) in lines.by_ref() {
            if line.trim().is_empty() {
                break;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(Some(lineno + 1), None, "expected key=value"))?;
            let bad = |what: &str| Error::parse(Some(lineno + 1), None, format!("invalid {what}"));
            match key.trim() {
                "strategy" => strategy = Some(value.trim().parse::<NoiseStrategy>()?),
                "seed" => seed = Some(value.trim().parse::<u64>().map_err(|_| bad("seed"))?),
                "rows" => rows = Some(value.trim().parse::<usize>().map_err(|_| bad("rows"))?),
                "classes" => {
                    classes = Some(value.trim().parse::<usize>().map_err(|_| bad("classes"))?)
                }
                "epsilon" => {
                    epsilon = Some(value.trim().parse::<f64>().map_err(|_| bad("epsilon"))?)
                }
                "epsilon_per_class" => {}
                other => {
                    return Err(Error::parse(
                        Some(lineno + 1),
                        None,
                        format!("unknown ledger key `{other}`"),
                    ))
                }
            }
        }
        let missing = |k: &str| Error::parse(None, None, format!("ledger header lacks `{k}`"));
        let strategy = strategy.ok_or_else(|| missing("strategy"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let rows = rows.ok_or_else(|| missing("rows"))?;
        let classes = classes.ok_or_else(|| missing("classes"))?;

        let mut cells = Vec::with_capacity(rows * classes);
        let mut seen_rows = 0;
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            seen_rows += 1;
            let before = cells.len();
            for field in line.split(',') {
                cells.push(match field.trim() {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(Error::parse(
                            Some(lineno + 1),
                            None,
                            format!("mask cell must be 0 or 1, found `{other}`"),
                        ))
                    }
                });
            }
            if cells.len() - before != classes {
                return Err(Error::parse(
                    Some(lineno + 1),
                    None,
                    format!("expected {classes} mask cells"),
                ));
            }
        }
        if seen_rows != rows {
            return Err(Error::parse(
                None,
                None,
                format!("header declares {rows} rows, found {seen_rows}"),
            ));
        }
        let mask = Array2::from_shape_vec((rows, classes), cells)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let ledger = Self::from_mask(LabelMatrix::new(mask)?, strategy, seed);
        if let Some(eps) = epsilon {
            if (eps - ledger.epsilon).abs() > 1e-12 {
                return Err(Error::parse(
                    None,
                    None,
                    format!(
                        "header epsilon {eps} disagrees with mask epsilon {}",
                        ledger.epsilon
                    ),
                ));
            }
        }
        Ok(ledger)
    }
}

/// Row-stochastic `C x C` matrix; `T[c][c']` is the probability that class
/// `c` swaps its value with class `c'` within an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Array2<f64>);

impl TransitionMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::Shape(format!(
                "transition matrix must be square and non-empty, got {:?}",
                values.dim()
            )));
        }
        for (c, row) in values.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "transition row {c} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "transition row {c} sums to {sum}"
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn identity(classes: usize) -> Self {
        Self(Array2::eye(classes))
    }

    /// Stays put with probability `1 - swap`, otherwise swaps with one of
    /// the other classes uniformly.
    pub fn symmetric(classes: usize, swap: f64) -> Result<Self> {
        if classes < 2 {
            return Self::new(Array2::eye(classes));
        }
        let off = swap / (classes - 1) as f64;
        Self::new(Array2::from_shape_fn((classes, classes), |(i, j)| {
            if i == j {
                1.0 - swap
            } else {
                off
            }
        }))
    }

    pub fn classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[[from, to]]
    }

    /// Whitespace- or comma-separated rows, one per class; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::parse(Some(lineno + 1), None, format!("non-numeric entry `{s}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("transition matrix must be square".into()));
        }
        let values = Array2::from_shape_vec((c, c), rows.concat())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "{name} must lie in [0, 1], got {value}"
        )));
    }
    Ok(())
}

/// Flips exactly `round(epsilon_req * N * C)` distinct cells chosen
/// uniformly without replacement.
pub fn inject_uniform(
    labels: &LabelMatrix,
    epsilon_req: f64,
    seed: u64,
) -> Result<(LabelMatrix, NoiseLedger)> {
    check_fraction("epsilon", epsilon_req)?;
    let cells = labels.cells();
    let flips = ((epsilon_req * cells as f64).round() as usize).min(cells);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.clone();
    let slots = noisy.as_mut_slice();
    for k in index::sample(&mut rng, cells, flips) {
        slots[k] ^= 1;
    }
    let ledger = NoiseLedger::between(labels, &noisy, NoiseStrategy::Uniform, seed)?;
    Ok((noisy, ledger))
}

/// Per class: `floor(rate * P_c)` positives go to 0 and the same number of
/// negatives go to 1, so class frequencies are unchanged.
pub fn inject_mixed(
    labels: &LabelMatrix,
    rate: f64,
    seed: u64,
) -> Result<(LabelMatrix, NoiseLedger)> {
    check_fraction("mixed noise rate", rate)?;
    let (n, classes) = (labels.rows(), labels.classes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.clone();
    for c in 0..classes {
        let column = labels.column(c);
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| column[i] == 1);
        let k = (rate * pos.len() as f64).floor() as usize;
        if neg.len() < k {
            return Err(Error::InsufficientNegatives {
                class: c,
                available: neg.len(),
                required: k,
            });
        }
        let slots = noisy.as_mut_slice();
        for j in index::sample(&mut rng, pos.len(), k) {
            slots[pos[j] * classes + c] = 0;
        }
        for j in index::sample(&mut rng, neg.len(), k) {
            slots[neg[j] * classes + c] = 1;
        }
    }
    let ledger = NoiseLedger::between(labels, &noisy, NoiseStrategy::Mixed, seed)?;
    Ok((noisy, ledger))
}

/// For every instance and every class `c` in ascending order, draws a
/// partner `c'` from row `c` of the transition matrix and swaps the two
/// cells. Per-instance label counts are preserved.
pub fn inject_transition(
    labels: &LabelMatrix,
    transition: &TransitionMatrix,
    seed: u64,
) -> Result<(LabelMatrix, NoiseLedger)> {
    let classes = labels.classes();
    if transition.classes() != classes {
        return Err(Error::Shape(format!(
            "transition matrix for {} classes applied to {classes}",
            transition.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.clone();
    let slots = noisy.as_mut_slice();
    for row in slots.chunks_exact_mut(classes) {
        for c in 0..classes {
            let partner = draw_categorical(&mut rng, transition, c);
            if partner != c {
                row.swap(c, partner);
            }
        }
    }
    let ledger = NoiseLedger::between(labels, &noisy, NoiseStrategy::Transition, seed)?;
    Ok((noisy, ledger))
}

fn draw_categorical(rng: &mut impl Rng, transition: &TransitionMatrix, from: usize) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let last = transition.classes() - 1;
    for to in 0..last {
        acc += transition.get(from, to);
        if u < acc {
            return to;
        }
    }
    last
}

/// Mixed-noise rate whose realized noise level is `epsilon_target` on data
/// of the given prevalence: each flipped positive is paired with a flipped
/// negative, so `epsilon = 2 * rate * prevalence`.
pub fn mixed_rate_for_target(epsilon_target: f64, prevalence: f64) -> Result<f64> {
    if !(prevalence > 0.0 && prevalence <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "prevalence {prevalence} outside (0, 0.5]"
        )));
    }
    if !(epsilon_target >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise target {epsilon_target} must be non-negative"
        )));
    }
    let rate = epsilon_target / (2.0 * prevalence);
    if rate > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "noise level {epsilon_target} unreachable with mixed noise at prevalence {prevalence} (rate {rate} > 1)"
        )));
    }
    Ok(rate)
}
