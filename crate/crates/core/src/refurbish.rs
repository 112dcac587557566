//! Label refurbishment from prediction histories, and merging of the two
//! co-trained networks' selection and correction decisions.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::SelectionMask;

/// A probability at or above this value counts as a positive prediction.
pub const PREDICTION_THRESHOLD: f64 = 0.5;

/// Ring buffer of the last `q` thresholded predictions of every cell.
///
/// All cells are recorded together once per epoch, so one write cursor and
/// one fill count serve the whole matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHistory {
    q: usize,
    rows: usize,
    classes: usize,
    slots: Vec<u8>,
    head: usize,
    fill: usize,
}

impl PredictionHistory {
    pub fn new(rows: usize, classes: usize, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("history window must be >= 1".into()));
        }
        Ok(Self {
            q,
            rows,
            classes,
            slots: vec![0; rows * classes * q],
            head: 0,
            fill: 0,
        })
    }

    pub fn window_len(&self) -> usize {
        self.q
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_ready(&self) -> bool {
        self.fill == self.q
    }

    pub fn cells(&self) -> usize {
        self.rows * self.classes
    }

    pub fn record_epoch(&mut self, probs: ArrayView2<'_, f64>) -> Result<()> {
        if probs.dim() != (self.rows, self.classes) {
            return Err(Error::Shape(format!(
                "history for {}x{} given predictions {:?}",
                self.rows,
                self.classes,
                probs.dim()
            )));
        }
        for (cell, &p) in probs.iter().enumerate() {
            self.slots[cell * self.q + self.head] = u8::from(p >= PREDICTION_THRESHOLD);
        }
        self.head = (self.head + 1) % self.q;
        self.fill = (self.fill + 1).min(self.q);
        Ok(())
    }

    /// Recorded predictions of one cell, oldest first.
    pub fn window(&self, cell: usize) -> Vec<u8> {
        let ring = &self.slots[cell * self.q..(cell + 1) * self.q];
        if self.fill < self.q {
            ring[..self.fill].to_vec()
        } else {
            ring[self.head..].iter().chain(&ring[..self.head]).copied().collect()
        }
    }

    fn ones(&self, cell: usize) -> usize {
        let ring = &self.slots[cell * self.q..(cell + 1) * self.q];
        // unfilled slots are still zero
        ring.iter().filter(|&&v| v == 1).count()
    }

    /// Scaled entropy of a cell's window, or `None` until the window is full.
    pub fn entropy(&self, cell: usize) -> Option<f64> {
        self.is_ready()
            .then(|| scaled_entropy(self.ones(cell), self.q))
    }
}

/// Binary entropy of the window's prediction frequencies divided by
/// `ln 2`, so it lies in `[0, 1]`; `0 ln 0` is taken as 0.
pub fn scaled_entropy(ones: usize, window: usize) -> f64 {
    let p1 = ones as f64 / window as f64;
    let p0 = (window - ones) as f64 / window as f64;
    let plogp = |p: f64| if p == 0.0 { 0.0 } else { p * p.ln() };
    let h = (plogp(p0) + plogp(p1)) / 0.5f64.ln();
    // -0.0 for a constant window
    h.abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    /// `None` while the history is not full.
    pub entropy: Option<f64>,
    /// Majority prediction; present iff the cell is refurbishable.
    pub corrected: Option<u8>,
}

impl CellVerdict {
    pub fn is_refurbishable(&self) -> bool {
        self.corrected.is_some()
    }
}

/// Per-cell refurbishment verdicts of one network for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RefurbishDecision {
    classes: usize,
    verdicts: Vec<CellVerdict>,
}

impl RefurbishDecision {
    /// Nothing refurbishable (histories not in use).
    pub fn none(rows: usize, classes: usize) -> Self {
        Self {
            classes,
            verdicts: vec![
                CellVerdict {
                    entropy: None,
                    corrected: None
                };
                rows * classes
            ],
        }
    }

    pub fn verdicts(&self) -> &[CellVerdict] {
        &self.verdicts
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn refurbishable_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_refurbishable()).count()
    }

    pub fn corrected(&self, cell: usize) -> Option<u8> {
        self.verdicts[cell].corrected
    }

    /// Corrected labels of the cells of the given instances, row-major.
    pub fn corrections_for(&self, rows: &[usize]) -> Vec<Option<u8>> {
        rows.iter()
            .flat_map(|&r| (0..self.classes).map(move |c| r * self.classes + c))
            .map(|cell| self.verdicts[cell].corrected)
            .collect()
    }

    /// CSV rows `epoch,network,instance,class,entropy,refurbishable,corrected`.
    pub fn write_csv(&self, out: &mut impl Write, epoch: usize, network: usize, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "epoch,network,instance,class,entropy,refurbishable,corrected")?;
        }
        for (cell, v) in self.verdicts.iter().enumerate() {
            let (i, c) = (cell / self.classes, cell % self.classes);
            let h = v.entropy.map_or(String::new(), |h| h.to_string());
            let corrected = v.corrected.map_or(String::new(), |y| y.to_string());
            writeln!(
                out,
                "{epoch},{network},{i},{c},{h},{},{corrected}",
                u8::from(v.is_refurbishable())
            )?;
        }
        Ok(())
    }
}

/// A cell is refurbishable when its history is full, its scaled entropy is
/// at most `theta`, and its window has a strict majority.
pub fn decide(history: &PredictionHistory, theta: f64) -> Result<RefurbishDecision> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside [0, 1]")));
    }
    let q = history.window_len();
    let verdicts = (0..history.cells())
        .map(|cell| {
            let entropy = history.entropy(cell);
            let corrected = entropy.and_then(|h| {
                let ones = history.ones(cell);
                let majority = match (2 * ones).cmp(&q) {
                    std::cmp::Ordering::Greater => Some(1),
                    std::cmp::Ordering::Less => Some(0),
                    std::cmp::Ordering::Equal => None,
                };
                majority.filter(|_| h <= theta)
            });
            CellVerdict { entropy, corrected }
        })
        .collect();
    Ok(RefurbishDecision {
        classes: history.classes,
        verdicts,
    })
}

/// Where a trained cell's label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    /// The (possibly noisy) dataset label.
    Observed,
    /// The other network's corrected label.
    PeerCorrected,
    /// The single available correction, shared by both networks.
    JointCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellTarget {
    pub label: u8,
    pub source: LabelSource,
}

/// Training targets of one network for one batch; `None` means excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveBatch {
    pub targets: Vec<Option<CellTarget>>,
}

impl EffectiveBatch {
    pub fn trained(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    pub fn corrected(&self) -> usize {
        self.targets
            .iter()
            .flatten()
            .filter(|t| t.source != LabelSource::Observed)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JccMerge {
    pub a: EffectiveBatch,
    pub b: EffectiveBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionMode {
    /// Each network trains on its peer's corrections only.
    PerNetwork,
    /// A correction found by either network is used by both.
    Joint,
}

/// Builds both networks' targets for one batch.
///
/// Per cell, with `ca`/`cb` the corrections of networks A/B:
/// - both present: A trains on `cb`, B on `ca`;
/// - only one present: in joint mode both train on it; in per-network mode
///   only the peer of the correcting network does, the other falls through
///   to the selection rule;
/// - otherwise A trains on the observed label iff B's selection kept the
///   cell, and vice versa.
pub fn merge_decisions(
    mode: CorrectionMode,
    corrected_a: &[Option<u8>],
    corrected_b: &[Option<u8>],
    selection_a: &SelectionMask,
    selection_b: &SelectionMask,
    observed: &[u8],
) -> Result<JccMerge> {
    let m = observed.len();
    if [corrected_a.len(), corrected_b.len(), selection_a.len(), selection_b.len()]
        .iter()
        .any(|&len| len != m)
    {
        return Err(Error::Shape(format!(
            "merge inputs cover {}/{}/{}/{} cells, observed labels {m}",
            corrected_a.len(),
            corrected_b.len(),
            selection_a.len(),
            selection_b.len()
        )));
    }
    let target = |label, source| Some(CellTarget { label, source });
    let observed_if = |kept: bool, y: u8| kept.then_some(CellTarget { label: y, source: LabelSource::Observed });
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for k in 0..m {
        let y = observed[k];
        let fed_a = observed_if(selection_b.keep[k], y);
        let fed_b = observed_if(selection_a.keep[k], y);
        let (ta, tb) = match (corrected_a[k], corrected_b[k], mode) {
            (Some(ca), Some(cb), _) => (
                target(cb, LabelSource::PeerCorrected),
                target(ca, LabelSource::PeerCorrected),
            ),
            (Some(ca), None, CorrectionMode::Joint) => (
                target(ca, LabelSource::JointCorrected),
                target(ca, LabelSource::JointCorrected),
            ),
            (None, Some(cb), CorrectionMode::Joint) => (
                target(cb, LabelSource::JointCorrected),
                target(cb, LabelSource::JointCorrected),
            ),
            (Some(ca), None, CorrectionMode::PerNetwork) => (fed_a, target(ca, LabelSource::PeerCorrected)),
            (None, Some(cb), CorrectionMode::PerNetwork) => (target(cb, LabelSource::PeerCorrected), fed_b),
            (None, None, _) => (fed_a, fed_b),
        };
        a.push(ta);
        b.push(tb);
    }
    Ok(JccMerge {
        a: EffectiveBatch { targets: a },
        b: EffectiveBatch { targets: b },
    })
}

/// Joint correction criterion merge.
pub fn jcc_merge(
    corrected_a: &[Option<u8>],
    corrected_b: &[Option<u8>],
    selection_a: &SelectionMask,
    selection_b: &SelectionMask,
    observed: &[u8],
) -> Result<JccMerge> {
    merge_decisions(
        CorrectionMode::Joint,
        corrected_a,
        corrected_b,
        selection_a,
        selection_b,
        observed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn history_from(windows: &[&[u8]]) -> PredictionHistory {
        let q = windows[0].len();
        let mut h = PredictionHistory::new(1, windows.len(), q).unwrap();
        for t in 0..q {
            let row: Vec<f64> = windows.iter().map(|w| if w[t] == 1 { 0.9 } else { 0.1 }).collect();
            h.record_epoch(Array2::from_shape_vec((1, windows.len()), row).unwrap().view()).unwrap();
        }
        h
    }

    fn mask(keep: &[bool]) -> SelectionMask {
        SelectionMask {
            keep: keep.to_vec(),
            losses: vec![0.0; keep.len()],
        }
    }

    #[test]
    fn boundary_probability_records_positive() {
        let mut h = PredictionHistory::new(1, 2, 3).unwrap();
        h.record_epoch(ndarray::array![[0.5, 0.4999]].view()).unwrap();
        assert_eq!(h.window(0), vec![1]);
        assert_eq!(h.window(1), vec![0]);
        assert_eq!(h.entropy(0), None);
    }

    #[test]
    fn ring_keeps_last_q_against_list_reference() {
        let (q, epochs) = (4, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = PredictionHistory::new(3, 2, q).unwrap();
        let mut reference: Vec<Vec<u8>> = vec![Vec::new(); 6];
        for _ in 0..epochs {
            let probs = Array2::from_shape_simple_fn((3, 2), || rng.random::<f64>());
            for (cell, &p) in probs.iter().enumerate() {
                reference[cell].push(u8::from(p >= 0.5));
            }
            h.record_epoch(probs.view()).unwrap();
            for (cell, full) in reference.iter().enumerate() {
                let start = full.len().saturating_sub(q);
                assert_eq!(h.window(cell), full[start..].to_vec());
            }
        }
        assert!(h.is_ready());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(scaled_entropy(4, 4), 0.0);
        assert_eq!(scaled_entropy(0, 10), 0.0);
        assert_eq!(scaled_entropy(2, 4), 1.0);
        let h = scaled_entropy(3, 4);
        let by_hand = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln()) / 2f64.ln();
        assert!((h - by_hand).abs() < 1e-15);
        assert!((h - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn entropy_symmetric_and_peaked_at_half() {
        let q = 10;
        for ones in 0..=q {
            assert_eq!(scaled_entropy(ones, q), scaled_entropy(q - ones, q));
            if ones != 5 {
                assert!(scaled_entropy(ones, q) < 1.0);
            }
        }
    }

    #[test]
    fn decide_examples() {
        let h = history_from(&[&[0, 0, 0, 0], &[1, 1, 1, 0], &[1, 0, 1, 0]]);
        let d = decide(&h, 0.05).unwrap();
        assert_eq!(d.corrected(0), Some(0));
        assert_eq!(d.corrected(1), None);
        assert!((d.verdicts()[1].entropy.unwrap() - 0.8113).abs() < 1e-4);
        let all = decide(&h, 1.0).unwrap();
        assert_eq!(all.corrected(1), Some(1));
        // a tied window has no majority
        assert_eq!(all.corrected(2), None);
        assert!(decide(&h, 1.5).is_err());
    }

    #[test]
    fn not_ready_is_never_refurbishable() {
        let mut h = PredictionHistory::new(2, 2, 3).unwrap();
        h.record_epoch(Array2::from_elem((2, 2), 0.9).view()).unwrap();
        let d = decide(&h, 1.0).unwrap();
        assert_eq!(d.refurbishable_count(), 0);
    }

    #[test]
    fn jcc_cases() {
        let none = [None];
        let sel_on = mask(&[true]);
        let sel_off = mask(&[false]);
        // both refurbishable, same label
        let m = jcc_merge(&[Some(1)], &[Some(1)], &sel_off, &sel_off, &[0]).unwrap();
        assert_eq!(m.a.targets[0].unwrap().label, 1);
        assert_eq!(m.b.targets[0].unwrap().label, 1);
        // both refurbishable, different labels: peers swap
        let m = jcc_merge(&[Some(1)], &[Some(0)], &sel_on, &sel_on, &[0]).unwrap();
        assert_eq!(m.a.targets[0], Some(CellTarget { label: 0, source: LabelSource::PeerCorrected }));
        assert_eq!(m.b.targets[0], Some(CellTarget { label: 1, source: LabelSource::PeerCorrected }));
        // only A refurbishable: both use A's label
        let m = jcc_merge(&[Some(1)], &none, &sel_off, &sel_off, &[0]).unwrap();
        assert_eq!(m.a.targets[0], Some(CellTarget { label: 1, source: LabelSource::JointCorrected }));
        assert_eq!(m.b.targets[0], Some(CellTarget { label: 1, source: LabelSource::JointCorrected }));
        // neither: cross-fed by selection
        let m = jcc_merge(&none, &none, &sel_on, &sel_off, &[1]).unwrap();
        assert_eq!(m.a.targets[0], None);
        assert_eq!(m.b.targets[0], Some(CellTarget { label: 1, source: LabelSource::Observed }));
        assert!(jcc_merge(&none, &none, &sel_on, &sel_off, &[1, 0]).is_err());
    }

    #[test]
    fn per_network_mode_ignores_own_corrections() {
        let m = merge_decisions(
            CorrectionMode::PerNetwork,
            &[Some(1), Some(1)],
            &[None, None],
            &mask(&[false, false]),
            &mask(&[true, false]),
            &[0, 0],
        )
        .unwrap();
        // A's own correction does not reach A; B keeps cell 0 for A.
        assert_eq!(m.a.targets[0], Some(CellTarget { label: 0, source: LabelSource::Observed }));
        assert_eq!(m.a.targets[1], None);
        assert_eq!(m.b.targets[1], Some(CellTarget { label: 1, source: LabelSource::PeerCorrected }));
    }

    proptest! {
        #[test]
        fn theta_monotone(windows in prop::collection::vec(prop::collection::vec(0u8..2, 5), 1..20), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let refs: Vec<&[u8]> = windows.iter().map(Vec::as_slice).collect();
            let h = history_from(&refs);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let small = decide(&h, lo).unwrap();
            let large = decide(&h, hi).unwrap();
            for (s, l) in small.verdicts().iter().zip(large.verdicts()) {
                prop_assert!(!s.is_refurbishable() || l.is_refurbishable());
            }
        }

        #[test]
        fn joint_set_is_union(ca in prop::collection::vec(prop::option::of(0u8..2), 1..30), seed in 0u64..100) {
            let m = ca.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cb: Vec<Option<u8>> = (0..m).map(|_| if rng.random::<bool>() { Some(rng.random_range(0..2)) } else { None }).collect();
            let sa = mask(&(0..m).map(|_| rng.random()).collect::<Vec<bool>>());
            let sb = mask(&(0..m).map(|_| rng.random()).collect::<Vec<bool>>());
            let obs: Vec<u8> = (0..m).map(|_| rng.random_range(0..2)).collect();
            let joint = jcc_merge(&ca, &cb, &sa, &sb, &obs).unwrap();
            let split = merge_decisions(CorrectionMode::PerNetwork, &ca, &cb, &sa, &sb, &obs).unwrap();
            for k in 0..m {
                let union = ca[k].is_some() || cb[k].is_some();
                let corrected_a = joint.a.targets[k].is_some_and(|t| t.source != LabelSource::Observed);
                let corrected_b = joint.b.targets[k].is_some_and(|t| t.source != LabelSource::Observed);
                prop_assert_eq!(corrected_a, union);
                prop_assert_eq!(corrected_b, union);
                // without joint correction each network sees its peer's set
                let split_a = split.a.targets[k].is_some_and(|t| t.source != LabelSource::Observed);
                prop_assert_eq!(split_a, cb[k].is_some());
            }
        }
    }
}
