//! Ranking metrics (AP, mAP) and label-selection diagnostics.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrCurvePoint {
    /// 1-based rank.
    pub rank: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Indices by descending score, ties by ascending index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Precision and recall after each rank.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Vec<PrCurvePoint> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let mut hits = 0;
    ranking(scores)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            hits += usize::from(labels[i] == 1);
            PrCurvePoint {
                rank: k + 1,
                precision: hits as f64 / (k + 1) as f64,
                recall: if positives == 0 { 0.0 } else { hits as f64 / positives as f64 },
            }
        })
        .collect()
}

/// Mean of precision@k over the ranks `k` that hold a positive.
/// `None` when there is no positive label.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, i) in ranking(scores).into_iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// `None` for classes without positives, which are left out of the mean.
    pub per_class: Vec<Option<f64>>,
}

impl MapResult {
    pub fn excluded(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].is_none())
            .collect()
    }
}

/// Unweighted mean of per-class AP over classes with at least one positive.
pub fn mean_average_precision(scores: ArrayView2<'_, f64>, labels: &LabelMatrix) -> Result<MapResult> {
    if scores.dim() != labels.view().dim() {
        return Err(Error::Shape(format!(
            "scores {:?} vs labels {:?}",
            scores.dim(),
            labels.view().dim()
        )));
    }
    let per_class: Vec<Option<f64>> = (0..labels.classes())
        .map(|c| {
            let s: Vec<f64> = scores.column(c).to_vec();
            let y: Vec<u8> = labels.column(c).to_vec();
            average_precision(&s, &y)
        })
        .collect();
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no class has a positive label".into()));
    }
    let result = MapResult {
        map: scored.iter().sum::<f64>() / scored.len() as f64,
        per_class,
    };
    let excluded = result.excluded();
    if !excluded.is_empty() {
        log::debug!("mAP excludes classes without positives: {excluded:?}");
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPr {
    /// `None` when nothing was selected.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Label precision `|kept & clean| / |kept|` and recall
/// `|kept & clean| / |clean|` against a flip mask (`1` = noisy).
pub fn label_pr(kept: &[bool], flip_mask: &[u8]) -> Result<LabelPr> {
    if kept.len() != flip_mask.len() {
        return Err(Error::Shape(format!(
            "{} selection cells vs {} ledger cells",
            kept.len(),
            flip_mask.len()
        )));
    }
    let selected = kept.iter().filter(|&&k| k).count();
    let clean = flip_mask.iter().filter(|&&f| f == 0).count();
    let clean_selected = kept
        .iter()
        .zip(flip_mask)
        .filter(|&(&k, &f)| k && f == 0)
        .count();
    Ok(LabelPr {
        precision: (selected > 0).then(|| clean_selected as f64 / selected as f64),
        recall: if clean == 0 { 0.0 } else { clean_selected as f64 / clean as f64 },
    })
}

/// Running counts behind [`label_pr`], generalised to corrected labels: a
/// trained cell counts as clean when the label it was trained on equals the
/// true label. Recall only credits originally clean cells, so it stays in
/// `[0, 1]`. Without corrections this reduces to [`label_pr`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelPrCounter {
    pub trained: usize,
    pub trained_correct: usize,
    pub clean_trained_correct: usize,
    pub clean: usize,
}

impl LabelPrCounter {
    /// `target` is the training label (None = excluded), `observed` the
    /// dataset label, `flipped` whether the ledger marks the cell noisy.
    pub fn add(&mut self, target: Option<u8>, observed: u8, flipped: bool) {
        let truth = observed ^ u8::from(flipped);
        self.clean += usize::from(!flipped);
        if let Some(label) = target {
            self.trained += 1;
            if label == truth {
                self.trained_correct += 1;
                self.clean_trained_correct += usize::from(!flipped);
            }
        }
    }

    pub fn result(&self) -> LabelPr {
        LabelPr {
            precision: (self.trained > 0).then(|| self.trained_correct as f64 / self.trained as f64),
            recall: if self.clean == 0 {
                0.0
            } else {
                self.clean_trained_correct as f64 / self.clean as f64
            },
        }
    }
}

/// Mean of the last `k` entries.
pub fn last_k_mean(series: &[f64], k: usize) -> Result<f64> {
    if k == 0 || series.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need {k} >= 1 trailing values, series has {}",
            series.len()
        )));
    }
    Ok(series[series.len() - k..].iter().sum::<f64>() / k as f64)
}
