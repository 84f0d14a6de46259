//! Instance-level parsing metrics: part-wise instance mIoU, greedy
//! score-ordered matching, AP^p at fixed thresholds, AP^p_vol and PCP_50.
//!
//! Protocol (see [`PROTOCOL_VERSION`]):
//! * the instance mIoU averages per-category IoU over every non-background
//!   category present in either instance, with both instances pasted alone
//!   onto the image canvas;
//! * predictions are visited by descending score (ties: ascending instance
//!   id) and each takes the unmatched ground truth of highest mIoU when that
//!   mIoU reaches the threshold;
//! * AP is the exact area under the all-point interpolated PR curve of one
//!   ranked list pooled over all images (ties: instance id, then image id);
//! * PCP_50 assigns ground truths through the same greedy matching at
//!   threshold 0 and scores the fraction of ground-truth parts whose IoU
//!   reaches 0.5; unassigned ground truths score 0.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, Instance, LabelMap, PixelRect, BACKGROUND, MAX_CATEGORIES};

/// Identifies the matching/AP/PCP conventions implemented here.
pub const PROTOCOL_VERSION: &str =
    "mhp-parsing-eval/1 (part-union mIoU, greedy score-ordered matching, all-point AP, pooled ranking, PCP50 greedy@0)";

/// AP^p thresholds; AP^p_vol is their mean.
pub const AP_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Per-part IoU required for a part to count in PCP_50.
pub const PCP_PART_THRESHOLD: f64 = 0.5;

/// Part-wise IoU between two instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIou {
    pub miou: f64,
    pub per_part: BTreeMap<u8, f64>,
}

/// Per-category IoU of two rasters placed at `ra` and `rb` on a common
/// canvas, everything outside a raster being background.
pub(crate) fn part_iou(ra: &PixelRect, a: &LabelMap, rb: &PixelRect, b: &LabelMap) -> PartIou {
    let mut area_a = [0u64; MAX_CATEGORIES];
    let mut area_b = [0u64; MAX_CATEGORIES];
    let mut inter = [0u64; MAX_CATEGORIES];
    for &v in a.data() {
        area_a[v as usize] += 1;
    }
    for &v in b.data() {
        area_b[v as usize] += 1;
    }
    let (x0, x1) = (ra.x0.max(rb.x0), ra.x1.min(rb.x1));
    let (y0, y1) = (ra.y0.max(rb.y0), ra.y1.min(rb.y1));
    if x0 < x1 && y0 < y1 {
        for y in y0..y1 {
            let row_a = &a.row(y - ra.y0)[x0 - ra.x0..x1 - ra.x0];
            let row_b = &b.row(y - rb.y0)[x0 - rb.x0..x1 - rb.x0];
            for (&va, &vb) in row_a.iter().zip(row_b) {
                if va == vb {
                    inter[va as usize] += 1;
                }
            }
        }
    }
    let mut per_part = BTreeMap::new();
    for c in (BACKGROUND as usize + 1)..MAX_CATEGORIES {
        let union = area_a[c] + area_b[c] - inter[c];
        if union > 0 {
            per_part.insert(c as u8, inter[c] as f64 / union as f64);
        }
    }
    let miou = if per_part.is_empty() {
        0.0
    } else {
        per_part.values().sum::<f64>() / per_part.len() as f64
    };
    PartIou { miou, per_part }
}

fn canvas_rect(inst: &Instance, canvas: (usize, usize)) -> Result<PixelRect> {
    let r = inst.bbox().pixel_rect();
    if r.is_empty() || r.x1 > canvas.0 || r.y1 > canvas.1 {
        return Err(Error::invalid(format!(
            "instance {} with pixel box {r:?} cannot be pasted on a {}x{} canvas",
            inst.id(),
            canvas.0,
            canvas.1
        )));
    }
    Ok(r)
}

/// Part-wise mIoU of two instances pasted alone onto a `canvas`-sized image.
pub fn instance_miou(pred: &Instance, gt: &Instance, canvas: (usize, usize)) -> Result<PartIou> {
    let rp = canvas_rect(pred, canvas)?;
    let rg = canvas_rect(gt, canvas)?;
    Ok(part_iou(&rp, pred.local_map(), &rg, gt.local_map()))
}

/// One ranked prediction and its fate at a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub pred_id: u64,
    pub gt_id: Option<u64>,
    /// mIoU with the matched ground truth, or for a false positive the best
    /// mIoU among the ground truths still unmatched when it was visited.
    pub miou: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub threshold: f64,
    /// Descending score, ties by ascending prediction id.
    pub entries: Vec<MatchEntry>,
    pub unmatched_gts: Vec<u64>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.gt_id.is_some()).count()
    }
}

/// All prediction/ground-truth part IoUs of one image, with predictions in
/// rank order and ground truths in ascending id order. Built once and
/// reused for every threshold.
#[derive(Debug, Clone)]
pub struct PairTable {
    preds: Vec<(u64, f64)>,
    gts: Vec<u64>,
    gt_parts: Vec<Vec<u8>>,
    pairs: Vec<PartIou>,
}

impl PairTable {
    pub fn build(preds: &[Instance], gts: &[Instance], canvas: (usize, usize)) -> Result<Self> {
        let mut pred_order: Vec<&Instance> = preds.iter().collect();
        pred_order.sort_by(|a, b| crate::geometry::by_rank(a, b));
        let mut gt_order: Vec<&Instance> = gts.iter().collect();
        gt_order.sort_by_key(|g| g.id());

        let pred_rects = pred_order
            .iter()
            .map(|p| canvas_rect(p, canvas))
            .collect::<Result<Vec<_>>>()?;
        let gt_rects = gt_order
            .iter()
            .map(|g| canvas_rect(g, canvas))
            .collect::<Result<Vec<_>>>()?;

        let mut pairs = Vec::with_capacity(preds.len() * gts.len());
        for (p, rp) in pred_order.iter().zip(&pred_rects) {
            for (g, rg) in gt_order.iter().zip(&gt_rects) {
                pairs.push(part_iou(rp, p.local_map(), rg, g.local_map()));
            }
        }
        Ok(PairTable {
            preds: pred_order
                .iter()
                .map(|p| (p.id(), p.ranking_score()))
                .collect(),
            gts: gt_order.iter().map(|g| g.id()).collect(),
            gt_parts: gt_order
                .iter()
                .map(|g| g.local_map().foreground_categories().into_iter().collect())
                .collect(),
            pairs,
        })
    }

    pub fn num_preds(&self) -> usize {
        self.preds.len()
    }

    pub fn num_gts(&self) -> usize {
        self.gts.len()
    }

    /// Part IoU of the `p`-th ranked prediction against the `g`-th ground truth.
    pub fn pair(&self, p: usize, g: usize) -> &PartIou {
        &self.pairs[p * self.gts.len() + g]
    }

    /// Greedy score-ordered matching; returns ranked-prediction index ->
    /// ground-truth index alongside the public result.
    fn greedy(&self, threshold: f64) -> (MatchResult, Vec<Option<usize>>) {
        let mut taken = vec![false; self.gts.len()];
        let mut assignment = Vec::with_capacity(self.preds.len());
        let mut entries = Vec::with_capacity(self.preds.len());
        for (p, &(pred_id, score)) in self.preds.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for g in 0..self.gts.len() {
                if taken[g] {
                    continue;
                }
                let m = self.pair(p, g).miou;
                if best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((g, m));
                }
            }
            let hit = best.filter(|&(_, m)| m >= threshold);
            if let Some((g, _)) = hit {
                taken[g] = true;
            }
            assignment.push(hit.map(|(g, _)| g));
            entries.push(MatchEntry {
                pred_id,
                gt_id: hit.map(|(g, _)| self.gts[g]),
                miou: best.map_or(0.0, |(_, m)| m),
                score,
            });
        }
        let unmatched_gts = self
            .gts
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&id, _)| id)
            .collect();
        (
            MatchResult {
                threshold,
                entries,
                unmatched_gts,
            },
            assignment,
        )
    }

    pub fn match_at(&self, threshold: f64) -> MatchResult {
        self.greedy(threshold).0
    }

    /// Sum of PCP part scores over this image's ground truths.
    pub fn pcp_sum(&self) -> f64 {
        let (_, assignment) = self.greedy(0.0);
        let mut sum = 0.0;
        for (p, g) in assignment.iter().enumerate() {
            let Some(g) = *g else { continue };
            let parts = &self.gt_parts[g];
            if parts.is_empty() {
                continue;
            }
            let per_part = &self.pair(p, g).per_part;
            let good = parts
                .iter()
                .filter(|c| per_part.get(c).is_some_and(|&v| v >= PCP_PART_THRESHOLD))
                .count();
            sum += good as f64 / parts.len() as f64;
        }
        sum
    }
}

/// Greedy matching of `preds` to `gts` at mIoU threshold `t`.
pub fn match_instances(
    preds: &[Instance],
    gts: &[Instance],
    t: f64,
    canvas: (usize, usize),
) -> Result<MatchResult> {
    Ok(PairTable::build(preds, gts, canvas)?.match_at(t))
}

/// Exact area under the all-point interpolated precision/recall curve of a
/// ranked list of hits.
pub fn average_precision_of_hits<I>(hits: I, total_gt: usize) -> f64
where
    I: IntoIterator<Item = bool>,
{
    let hits: Vec<bool> = hits.into_iter().collect();
    if total_gt == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// AP of one image's match result.
pub fn average_precision(mr: &MatchResult, total_gt: usize) -> f64 {
    average_precision_of_hits(mr.entries.iter().map(|e| e.gt_id.is_some()), total_gt)
}

/// PCP_50 of one image.
pub fn pcp50(preds: &[Instance], gts: &[Instance], canvas: (usize, usize)) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::invalid("PCP_50 needs at least one ground truth"));
    }
    Ok(PairTable::build(preds, gts, canvas)?.pcp_sum() / gts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    /// AP^p at each of [`AP_THRESHOLDS`], same order.
    pub ap_at: Vec<f64>,
    pub ap_vol: f64,
    pub pcp50: f64,
}

impl InstanceMetrics {
    /// AP at one of the standard thresholds.
    pub fn ap(&self, t: f64) -> Option<f64> {
        AP_THRESHOLDS
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| self.ap_at[i])
    }
}

/// Predictions and ground truths of one image, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSet<'a> {
    pub image_id: &'a str,
    pub width: usize,
    pub height: usize,
    pub preds: &'a [Instance],
    pub gts: &'a [Instance],
}

impl<'a> From<&'a ImageRecord> for InstanceSet<'a> {
    fn from(r: &'a ImageRecord) -> Self {
        InstanceSet {
            image_id: r.id(),
            width: r.width(),
            height: r.height(),
            preds: r.pred_instances(),
            gts: r.gt_instances(),
        }
    }
}

struct Ranked<'a> {
    score: f64,
    pred_id: u64,
    image_id: &'a str,
    hit: bool,
}

fn pooled_rank(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.pred_id.cmp(&b.pred_id))
        .then_with(|| a.image_id.cmp(b.image_id))
}

/// Dataset-wide AP^p per threshold, AP^p_vol and PCP_50.
pub fn evaluate_instance_sets(sets: &[InstanceSet]) -> Result<InstanceMetrics> {
    let total_gt: usize = sets.iter().map(|s| s.gts.len()).sum();
    if total_gt == 0 {
        return Err(Error::invalid("dataset has no ground-truth instances"));
    }
    let tables = sets
        .par_iter()
        .map(|s| PairTable::build(s.preds, s.gts, (s.width, s.height)))
        .collect::<Result<Vec<_>>>()?;

    let per_image: Vec<(Vec<MatchResult>, f64)> = tables
        .par_iter()
        .map(|t| {
            let results = AP_THRESHOLDS.iter().map(|&th| t.match_at(th)).collect();
            (results, t.pcp_sum())
        })
        .collect();

    let mut ap_at = Vec::with_capacity(AP_THRESHOLDS.len());
    for k in 0..AP_THRESHOLDS.len() {
        let mut ranked: Vec<Ranked> = sets
            .iter()
            .zip(&per_image)
            .flat_map(|(s, (results, _))| {
                results[k].entries.iter().map(move |e| Ranked {
                    score: e.score,
                    pred_id: e.pred_id,
                    image_id: s.image_id,
                    hit: e.gt_id.is_some(),
                })
            })
            .collect();
        ranked.sort_by(pooled_rank);
        ap_at.push(average_precision_of_hits(
            ranked.iter().map(|r| r.hit),
            total_gt,
        ));
    }
    let ap_vol = ap_at.iter().sum::<f64>() / ap_at.len() as f64;
    let pcp50 = per_image.iter().map(|(_, s)| s).sum::<f64>() / total_gt as f64;
    Ok(InstanceMetrics {
        ap_at,
        ap_vol,
        pcp50,
    })
}

pub fn evaluate_instances(images: &[ImageRecord]) -> Result<InstanceMetrics> {
    let sets: Vec<InstanceSet> = images.iter().map(InstanceSet::from).collect();
    evaluate_instance_sets(&sets)
}
