//! Label-level small-loss selection.
//!
//! Each cell of a mini-batch is one (instance, class) label. The forget rate
//! `tau` is the fraction of highest-loss cells discarded; the rest are kept
//! as probably clean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `tau = clip(alpha * epsilon, 0, 1)`, optionally per class, reached
/// linearly over `ramp_epochs` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetSchedule {
    pub alpha: f64,
    pub epsilon: f64,
    /// Per-class noise levels; present iff selection is class dependent.
    pub epsilon_per_class: Option<Vec<f64>>,
    pub ramp_epochs: usize,
}

impl ForgetSchedule {
    pub fn global(alpha: f64, epsilon: f64, ramp_epochs: usize) -> Self {
        Self {
            alpha,
            epsilon,
            epsilon_per_class: None,
            ramp_epochs,
        }
    }

    pub fn per_class(alpha: f64, epsilon: f64, epsilon_per_class: Vec<f64>, ramp_epochs: usize) -> Self {
        Self {
            alpha,
            epsilon,
            epsilon_per_class: Some(epsilon_per_class),
            ramp_epochs,
        }
    }

    pub fn is_class_dependent(&self) -> bool {
        self.epsilon_per_class.is_some()
    }

    /// Final global forget rate.
    pub fn forget_rate(&self) -> f64 {
        forget_rate(self.alpha, self.epsilon)
    }

    /// Final per-class forget rates; the global rate for every class when
    /// selection is not class dependent.
    pub fn class_forget_rates(&self, classes: usize) -> Vec<f64> {
        match &self.epsilon_per_class {
            Some(eps) => eps.iter().map(|&e| forget_rate(self.alpha, e)).collect(),
            None => vec![self.forget_rate(); classes],
        }
    }

    /// Rates in effect at `epoch`: one entry, or one per class.
    pub fn rates_at(&self, epoch: usize) -> Vec<f64> {
        match &self.epsilon_per_class {
            Some(eps) => eps
                .iter()
                .map(|&e| ramped_tau(forget_rate(self.alpha, e), epoch, self.ramp_epochs))
                .collect(),
            None => vec![ramped_tau(self.forget_rate(), epoch, self.ramp_epochs)],
        }
    }
}

pub fn forget_rate(alpha: f64, epsilon: f64) -> f64 {
    (alpha * epsilon).clamp(0.0, 1.0)
}

/// `tau_final * min(epoch / ramp_epochs, 1)`; no ramp when `ramp_epochs == 0`.
pub fn ramped_tau(tau_final: f64, epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return tau_final;
    }
    tau_final * (epoch as f64 / ramp_epochs as f64).min(1.0)
}

/// Number of cells kept out of `m` at forget rate `tau`: `ceil((1 - tau) m)`.
///
/// Products that land within 1e-9 of an integer are snapped first, so e.g.
/// `tau = 0.3, m = 10` keeps 7 rather than 8 from `0.7 * 10 = 7.000000000000001`.
pub fn kept_count(tau: f64, m: usize) -> usize {
    let exact = (1.0 - tau.clamp(0.0, 1.0)) * m as f64;
    let nearest = exact.round();
    let snapped = if (exact - nearest).abs() < 1e-9 { nearest } else { exact };
    (snapped.ceil() as usize).min(m)
}

/// Per-cell keep decisions for one batch and the losses they were based on.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    pub keep: Vec<bool>,
    pub losses: Vec<f64>,
}

impl SelectionMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept() as f64 / self.len() as f64
    }

    /// Everything kept; used when selection is switched off.
    pub fn keep_all(losses: Vec<f64>) -> Self {
        Self {
            keep: vec![true; losses.len()],
            losses,
        }
    }
}

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(k) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("loss of cell {k}")));
    }
    Ok(())
}

/// Marks the `k` smallest losses among `cells`; ties go to the lower cell index.
fn keep_smallest(losses: &[f64], cells: &mut [usize], k: usize, keep: &mut [bool]) {
    cells.sort_unstable_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    for &cell in &cells[..k] {
        keep[cell] = true;
    }
}

/// Pooled selection over all cells of the batch. Cells are indexed
/// row-major, so index order is (instance, class) order.
pub fn select_small_loss(losses: &[f64], tau: f64) -> Result<SelectionMask> {
    check_losses(losses)?;
    let m = losses.len();
    let mut keep = vec![false; m];
    let mut cells: Vec<usize> = (0..m).collect();
    keep_smallest(losses, &mut cells, kept_count(tau, m), &mut keep);
    Ok(SelectionMask {
        keep,
        losses: losses.to_vec(),
    })
}

/// Class-dependent selection: within each class `c`, keep the
/// `ceil((1 - tau[c]) M_c)` smallest-loss cells of that class.
pub fn select_small_loss_cdnr(losses: &[f64], taus: &[f64], class_of: &[usize]) -> Result<SelectionMask> {
    check_losses(losses)?;
    if class_of.len() != losses.len() {
        return Err(Error::Shape(format!(
            "{} class indices for {} losses",
            class_of.len(),
            losses.len()
        )));
    }
    if let Some(&c) = class_of.iter().find(|&&c| c >= taus.len()) {
        return Err(Error::Shape(format!(
            "cell of class {c} but only {} forget rates",
            taus.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); taus.len()];
    for (cell, &c) in class_of.iter().enumerate() {
        by_class[c].push(cell);
    }
    let mut keep = vec![false; losses.len()];
    for (c, cells) in by_class.iter_mut().enumerate() {
        let k = kept_count(taus[c], cells.len());
        keep_smallest(losses, cells, k, &mut keep);
    }
    Ok(SelectionMask {
        keep,
        losses: losses.to_vec(),
    })
}

/// Class-dependent selection over a row-major `rows x classes` batch.
pub fn select_small_loss_cdnr_matrix(losses: &[f64], taus: &[f64]) -> Result<SelectionMask> {
    let classes = taus.len();
    if classes == 0 || losses.len() % classes != 0 {
        return Err(Error::Shape(format!(
            "{} losses do not tile {classes} classes",
            losses.len()
        )));
    }
    let class_of: Vec<usize> = (0..losses.len()).map(|k| k % classes).collect();
    select_small_loss_cdnr(losses, taus, &class_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forget_rate_examples() {
        assert!((forget_rate(1.5, 0.2) - 0.3).abs() < 1e-15);
        assert!((forget_rate(0.25, 0.2) - 0.05).abs() < 1e-15);
        assert_eq!(forget_rate(10.0, 0.2), 1.0);
        let s = ForgetSchedule::per_class(2.0, 0.2, vec![0.1, 0.6], 10);
        assert_eq!(s.class_forget_rates(2), vec![0.2, 1.0]);
        assert_eq!(ForgetSchedule::global(2.0, 0.2, 0).class_forget_rates(3), vec![0.4; 3]);
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramped_tau(0.3, 0, 10), 0.0);
        assert_eq!(ramped_tau(0.3, 5, 10), 0.15);
        assert_eq!(ramped_tau(0.3, 20, 10), 0.3);
        assert_eq!(ramped_tau(0.3, 0, 0), 0.3);
    }

    #[test]
    fn pooled_examples() {
        let losses = [0.1, 0.9, 0.5, 0.2];
        assert_eq!(select_small_loss(&losses, 0.0).unwrap().kept(), 4);
        let m = select_small_loss(&losses, 0.5).unwrap();
        assert_eq!(m.keep, vec![true, false, false, true]);
        assert_eq!(select_small_loss(&losses, 1.0).unwrap().kept(), 0);
        assert!(matches!(select_small_loss(&[], 0.1), Err(Error::EmptyBatch)));
        assert!(select_small_loss(&[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn ties_break_by_cell_index() {
        let m = select_small_loss(&[0.5, 0.5, 0.5, 0.1], 0.5).unwrap();
        assert_eq!(m.keep, vec![true, false, false, true]);
    }

    #[test]
    fn kept_count_snaps_representation_error() {
        assert_eq!(kept_count(0.3, 10), 7);
        assert_eq!(kept_count(0.25, 4), 3);
        assert_eq!(kept_count(0.05, 7), 7);
        assert_eq!(kept_count(0.5, 3), 2);
        assert_eq!(kept_count(1.0, 9), 0);
    }

    #[test]
    fn cdnr_boundaries() {
        // rows x 2 classes, class 0 never forgets, class 1 forgets all
        let losses = [0.3, 0.1, 0.9, 0.2, 0.4, 0.05];
        let m = select_small_loss_cdnr_matrix(&losses, &[0.0, 1.0]).unwrap();
        assert_eq!(m.keep, vec![true, false, true, false, true, false]);
    }

    #[test]
    fn cdnr_counts() {
        let losses: Vec<f64> = (0..12).map(|k| ((k * 7) % 12) as f64 * 0.1).collect();
        let m = select_small_loss_cdnr_matrix(&losses, &[0.25, 0.5, 0.75]).unwrap();
        let per_class: Vec<usize> = (0..3)
            .map(|c| (0..12).filter(|&k| k % 3 == c && m.keep[k]).count())
            .collect();
        assert_eq!(per_class, vec![3, 2, 1]);
    }

    #[test]
    fn equal_rates_match_pooled_per_class() {
        let losses = [0.4, 0.3, 0.2, 0.8, 0.6, 0.1, 0.7, 0.5];
        let cdnr = select_small_loss_cdnr_matrix(&losses, &[0.5, 0.5]).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = losses.iter().skip(c).step_by(2).copied().collect();
            let pooled = select_small_loss(&col, 0.5).unwrap();
            let got: Vec<bool> = cdnr.keep.iter().skip(c).step_by(2).copied().collect();
            assert_eq!(got, pooled.keep);
        }
    }

    proptest! {
        #[test]
        fn raising_tau_only_removes(losses in prop::collection::vec(0.0f64..5.0, 1..40), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let loose = select_small_loss(&losses, lo).unwrap();
            let tight = select_small_loss(&losses, hi).unwrap();
            for (t, l) in tight.keep.iter().zip(&loose.keep) {
                prop_assert!(!t || *l);
            }
            prop_assert_eq!(loose.kept(), kept_count(lo, losses.len()));
        }
    }
}
