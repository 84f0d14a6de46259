//! Confusion-matrix semantic segmentation scores: mIoU, pixel accuracy and
//! mean accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMap, MAX_CATEGORIES};

/// `counts[g * classes + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SemanticOptions {
    /// Leave class 0 out of the mIoU and mean-accuracy averages. Pixel
    /// accuracy always counts every pixel.
    pub ignore_background: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMetrics {
    pub miou: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 || classes > MAX_CATEGORIES {
            return Err(Error::invalid(format!(
                "class count must lie in 1..={MAX_CATEGORIES}, got {classes}"
            )));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    /// Sums the matrices of every `(pred, gt)` pair. An empty input gives
    /// the zero matrix.
    pub fn from_pairs<'a, I>(classes: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
    {
        let mut cm = Self::new(classes)?;
        for (pred, gt) in pairs {
            cm.add_pair(pred, gt)?;
        }
        Ok(cm)
    }

    /// Parallel [`from_pairs`](Self::from_pairs). Integer addition makes the
    /// result independent of scheduling.
    pub fn from_pairs_par(classes: usize, pairs: &[(&LabelMap, &LabelMap)]) -> Result<Self> {
        let zero = Self::new(classes)?;
        pairs
            .par_iter()
            .map(|&(p, g)| zero.accumulate(p, g))
            .try_reduce(|| zero.clone(), |a, b| a.merge(&b))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.count(g, pred)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes)
            .all(|g| (0..self.classes).all(|p| g == p || self.count(g, p) == 0))
    }

    /// Returns a new matrix with the pair's pixels added.
    pub fn accumulate(&self, pred: &LabelMap, gt: &LabelMap) -> Result<Self> {
        let mut out = self.clone();
        out.add_pair(pred, gt)?;
        Ok(out)
    }

    pub fn add_pair(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::invalid(format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        let c = self.classes;
        let limit = |m: &LabelMap| m.data().iter().copied().max().unwrap_or(0) as usize;
        let (pmax, gmax) = (limit(pred), limit(gt));
        if pmax >= c || gmax >= c {
            return Err(Error::invalid(format!(
                "label {} is not below class count {c}",
                pmax.max(gmax)
            )));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<Self> {
        if self.classes != other.classes {
            return Err(Error::invalid(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ConfusionMatrix {
            classes: self.classes,
            counts,
        })
    }

    pub fn scores(&self, opts: SemanticOptions) -> Result<SemanticMetrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let first = usize::from(opts.ignore_background);

        let per_class_iou: Vec<Option<f64>> = (0..self.classes)
            .map(|c| {
                let tp = self.count(c, c);
                let union = self.row_sum(c) + self.col_sum(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();

        let ious: Vec<f64> = per_class_iou[first..].iter().flatten().copied().collect();
        let accs: Vec<f64> = (first..self.classes)
            .filter_map(|c| {
                let row = self.row_sum(c);
                (row > 0).then(|| self.count(c, c) as f64 / row as f64)
            })
            .collect();
        if ious.is_empty() {
            return Err(Error::invalid("no class is present in prediction or ground truth"));
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(SemanticMetrics {
            miou: mean(&ious),
            pixel_acc: self.trace() as f64 / total as f64,
            mean_acc: mean(&accs),
            per_class_iou,
        })
    }
}

/// Scores `(pred, gt)` pairs in parallel.
pub fn evaluate_semantic(
    classes: usize,
    pairs: &[(&LabelMap, &LabelMap)],
    opts: SemanticOptions,
) -> Result<SemanticMetrics> {
    ConfusionMatrix::from_pairs_par(classes, pairs)?.scores(opts)
}
