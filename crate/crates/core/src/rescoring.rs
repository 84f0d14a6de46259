//! Parsing re-scoring: mIoU regression targets, score fusion, top-K
//! candidate selection and calibration analysis.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::crop_label_map;
use crate::instance_metrics::{part_iou, PairTable};
use crate::model::{BBox, ImageRecord, Instance, LabelMap, ProbMap};

/// Inputs this far outside `[0, 1]` are clamped rather than rejected.
pub const SCORE_SLACK: f64 = 1e-6;

/// Default number of candidates kept per image.
pub const DEFAULT_TOP_K: usize = 100;

/// Regression target of the re-scoring head: part-wise mIoU between the
/// predicted local map and the ground-truth semantic map cropped at the
/// *predicted* box. Box misalignment is deliberately left uncorrected.
pub fn miou_target(pred: &Instance, gt_semantic: &LabelMap) -> Result<f64> {
    let crop = crop_label_map(gt_semantic, pred.bbox())?;
    let r = pred.bbox().pixel_rect();
    Ok(part_iou(&r, pred.local_map(), &r, &crop).miou)
}

/// Target from a soft prediction: argmax labels resized to the box extent
/// by nearest neighbour, then [`miou_target`].
pub fn miou_target_from_probs(bbox: &BBox, probs: &ProbMap, gt_semantic: &LabelMap) -> Result<f64> {
    let r = bbox.pixel_rect();
    let labels = crate::geometry::resize_nearest(&probs.argmax(), r.width(), r.height())?;
    let inst = Instance::new(0, *bbox, 1.0, labels)?;
    miou_target(&inst, gt_semantic)
}

fn unit(name: &str, v: f64) -> Result<f64> {
    if !(-SCORE_SLACK..=1.0 + SCORE_SLACK).contains(&v) {
        return Err(Error::invalid(format!("{name} {v} outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Final parsing score: the geometric mean `sqrt(cls * iou)`.
pub fn fuse_scores(cls: f64, iou: f64) -> Result<f64> {
    Ok((unit("cls_score", cls)? * unit("iou_score", iou)?).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RescoreOptions {
    pub top_k: usize,
    /// Replace every iou_score by its [`miou_target`] (model-free runs).
    pub oracle: bool,
}

impl Default for RescoreOptions {
    fn default() -> Self {
        RescoreOptions {
            top_k: DEFAULT_TOP_K,
            oracle: false,
        }
    }
}

/// The `k` best candidates by classification score (ties: lower id),
/// returned in ascending id order.
pub fn top_k(preds: &[Instance], k: usize) -> Vec<Instance> {
    let mut order: Vec<&Instance> = preds.iter().collect();
    order.sort_by(|a, b| {
        b.cls_score()
            .total_cmp(&a.cls_score())
            .then_with(|| a.id().cmp(&b.id()))
    });
    order.truncate(k);
    order.sort_by_key(|i| i.id());
    order.into_iter().cloned().collect()
}

/// Keeps the top-K candidates and assigns each its fused parsing score.
pub fn rescore_image(img: &ImageRecord, opts: RescoreOptions) -> Result<ImageRecord> {
    let kept = top_k(img.pred_instances(), opts.top_k);
    if !opts.oracle {
        let missing: Vec<u64> = kept
            .iter()
            .filter(|p| p.iou_score().is_none())
            .map(Instance::id)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingScore {
                what: "iou_score",
                ids: missing,
            });
        }
    }
    let rescored = kept
        .into_iter()
        .map(|p| {
            let iou = if opts.oracle {
                miou_target(&p, img.gt_semantic())?
            } else {
                p.iou_score().expect("checked above")
            };
            let fused = fuse_scores(p.cls_score(), iou)?;
            Ok(p.with_scores(Some(iou), Some(fused))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(img.clone().with_predictions(rescored)?)
}

pub fn rescore_dataset(images: &[ImageRecord], opts: RescoreOptions) -> Result<Vec<ImageRecord>> {
    images.par_iter().map(|i| rescore_image(i, opts)).collect()
}

/// A correlation coefficient, or `Undefined` when an input has zero
/// variance. Serializes as a number or the string `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Defined(v) => Some(*v),
            Correlation::Undefined => None,
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Correlation::Defined(v) => s.serialize_f64(crate::formats::round_score(*v)),
            Correlation::Undefined => s.serialize_str("undefined"),
        }
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len().min(y.len());
    if n < 2 {
        return Correlation::Undefined;
    }
    let mean = |v: &[f64]| v[..n].iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationPair {
    pub pearson: Correlation,
    pub spearman: Correlation,
}

impl CorrelationPair {
    fn of(x: &[f64], y: &[f64]) -> Self {
        CorrelationPair {
            pearson: pearson(x, y),
            spearman: spearman(x, y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub image_id: String,
    pub pred_id: u64,
    pub gt_miou: f64,
    pub cls_score: f64,
    pub iou_score: Option<f64>,
    pub parsing_score: Option<f64>,
}

impl CalibrationRow {
    /// Parsing score, else the fused score, else the classification score.
    pub fn effective_parsing_score(&self) -> f64 {
        self.parsing_score
            .or_else(|| self.iou_score.and_then(|i| fuse_scores(self.cls_score, i).ok()))
            .unwrap_or(self.cls_score)
    }
}

/// How well each score tracks the true mIoU of its instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    #[serde(skip)]
    pub rows: Vec<CalibrationRow>,
    pub instances: usize,
    /// gt_miou vs cls_score.
    pub cls: CorrelationPair,
    /// gt_miou vs parsing score.
    pub parsing: CorrelationPair,
    /// gt_miou vs iou_score, when every row has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<CorrelationPair>,
}

impl CalibrationReport {
    pub fn from_rows(rows: Vec<CalibrationRow>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(Error::invalid(format!(
                "calibration needs at least 3 instances, got {}",
                rows.len()
            )));
        }
        let gt: Vec<f64> = rows.iter().map(|r| r.gt_miou).collect();
        let cls: Vec<f64> = rows.iter().map(|r| r.cls_score).collect();
        let parsing: Vec<f64> = rows.iter().map(|r| r.effective_parsing_score()).collect();
        let iou: Option<Vec<f64>> = rows.iter().map(|r| r.iou_score).collect();
        Ok(CalibrationReport {
            instances: rows.len(),
            cls: CorrelationPair::of(&gt, &cls),
            parsing: CorrelationPair::of(&gt, &parsing),
            iou: iou.map(|v| CorrelationPair::of(&gt, &v)),
            rows,
        })
    }

    /// Scatter export: header row, 6-decimal floats, LF endings; missing
    /// scores are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gt_miou,cls_score,iou_score,parsing_score\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:.6},{:.6},{},{}\n",
                r.gt_miou,
                r.cls_score,
                opt(r.iou_score),
                opt(r.parsing_score)
            ));
        }
        out
    }
}

/// Matches predictions to ground truths at threshold 0 and records each
/// prediction's true mIoU next to its scores. Unmatched predictions get
/// a true mIoU of 0.
pub fn calibration(images: &[ImageRecord]) -> Result<CalibrationReport> {
    let per_image = images
        .par_iter()
        .map(|img| {
            let table = PairTable::build(img.pred_instances(), img.gt_instances(), img.dims())?;
            let result = table.match_at(0.0);
            let rows = result
                .entries
                .iter()
                .map(|e| {
                    let p = img
                        .pred_instances()
                        .iter()
                        .find(|p| p.id() == e.pred_id)
                        .expect("entry refers to a prediction of this image");
                    CalibrationRow {
                        image_id: img.id().to_string(),
                        pred_id: e.pred_id,
                        gt_miou: if e.gt_id.is_some() { e.miou } else { 0.0 },
                        cls_score: p.cls_score(),
                        iou_score: p.iou_score(),
                        parsing_score: p.parsing_score(),
                    }
                })
                .collect::<Vec<_>>();
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationReport::from_rows(per_image.into_iter().flatten().collect())
}
