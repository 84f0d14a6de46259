//! Domain types shared by every module.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards; "modification" goes through the `*Parts` structs or the
//! `with_*` helpers, which re-run validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Checker, ValidationError};
use crate::geometry::Grid;

/// Category id reserved for background.
pub const BACKGROUND: u8 = 0;

/// Largest category count an 8-bit raster can carry.
pub const MAX_CATEGORIES: usize = 256;

/// Tolerance of the `parsing_score = sqrt(cls_score * iou_score)` invariant.
pub const FUSED_SCORE_TOLERANCE: f64 = 1e-9;

/// Per-pixel probability sums must be within this of 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

// ---------------------------------------------------------------------------
// CategorySet

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CategorySetRepr")]
pub struct CategorySet {
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct CategorySetRepr {
    count: usize,
    #[serde(default)]
    names: Option<Vec<String>>,
}

impl TryFrom<CategorySetRepr> for CategorySet {
    type Error = ValidationError;
    fn try_from(r: CategorySetRepr) -> Result<Self, Self::Error> {
        CategorySet::new(r.count, r.names)
    }
}

impl CategorySet {
    pub fn new(count: usize, names: Option<Vec<String>>) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        c.check(count >= 2, "count", || format!("must be >= 2, got {count}"));
        c.check(count <= MAX_CATEGORIES, "count", || {
            format!("must be <= {MAX_CATEGORIES}, got {count}")
        });
        if let Some(names) = &names {
            c.check(names.len() == count, "names", || {
                format!("expected {count} names, got {}", names.len())
            });
            c.check(
                names
                    .first()
                    .is_some_and(|n| n.eq_ignore_ascii_case("background")),
                "names[0]",
                || "category 0 must be named \"background\"".to_string(),
            );
        }
        c.finish()?;
        Ok(CategorySet { count, names })
    }

    /// Unnamed set of `count` categories.
    pub fn with_count(count: usize) -> Result<Self, ValidationError> {
        Self::new(count, None)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn contains(&self, id: u8) -> bool {
        (id as usize) < self.count
    }
}

// ---------------------------------------------------------------------------
// BBox

/// Axis-aligned box in continuous image coordinates, covering
/// `[x1, x2) x [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = ValidationError;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        for (name, v) in [("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)] {
            c.check(v.is_finite(), name, || format!("must be finite, got {v}"));
        }
        c.check(!(x1 > x2), "x2", || format!("x1 <= x2 violated ({x1} > {x2})"));
        c.check(!(y1 > y2), "y2", || format!("y1 <= y2 violated ({y1} > {y2})"));
        c.finish()?;
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box covering whole pixels `[x0, x1) x [y0, y1)`.
    pub fn from_rect(r: PixelRect) -> Self {
        BBox {
            x1: r.x0 as f64,
            y1: r.y0 as f64,
            x2: r.x1 as f64,
            y2: r.y1 as f64,
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn clip(&self, width: usize, height: usize) -> BBox {
        let (w, h) = (width as f64, height as f64);
        let x1 = self.x1.clamp(0.0, w);
        let y1 = self.y1.clamp(0.0, h);
        BBox {
            x1,
            y1,
            x2: self.x2.clamp(x1, w),
            y2: self.y2.clamp(y1, h),
        }
    }

    pub fn is_within(&self, width: usize, height: usize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width as f64 && self.y2 <= height as f64
    }

    /// Pixel rectangle covered by the box: each corner rounded to the
    /// nearest integer, ties away from zero. Negative corners map to 0.
    pub fn pixel_rect(&self) -> PixelRect {
        let r = |v: f64| v.round().max(0.0) as usize;
        PixelRect {
            x0: r(self.x1),
            y0: r(self.y1),
            x1: r(self.x2),
            y1: r(self.y2),
        }
    }
}

/// Half-open integer rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Smallest rectangle containing both.
    pub fn hull(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

// ---------------------------------------------------------------------------
// LabelMap

/// Dense row-major raster of category ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LabelMapRepr")]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

#[derive(Deserialize)]
struct LabelMapRepr {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl TryFrom<LabelMapRepr> for LabelMap {
    type Error = ValidationError;
    fn try_from(r: LabelMapRepr) -> Result<Self, Self::Error> {
        LabelMap::new(r.width, r.height, r.data)
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        c.check(width > 0, "width", || "must be positive".to_string());
        c.check(height > 0, "height", || "must be positive".to_string());
        c.check(data.len() == width * height, "data", || {
            format!(
                "length {} does not equal width x height = {}",
                data.len(),
                width * height
            )
        });
        c.finish()?;
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ValidationError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn background(width: usize, height: usize) -> Result<Self, ValidationError> {
        Self::filled(width, height, BACKGROUND)
    }

    /// Builds a map from equal-length rows.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, ValidationError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(width * height);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(ValidationError::single(
                    format!("rows[{i}]"),
                    format!("length {} differs from first row length {width}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Mutable pixel access; the length is fixed so the shape invariant holds.
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn is_all_background(&self) -> bool {
        self.data.iter().all(|&v| v == BACKGROUND)
    }

    /// Distinct non-background categories, ascending.
    pub fn foreground_categories(&self) -> BTreeSet<u8> {
        let mut seen = [false; MAX_CATEGORIES];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..MAX_CATEGORIES)
            .filter(|&c| seen[c])
            .map(|c| c as u8)
            .collect()
    }

    /// Checks every value against `categories`, naming the first offending value.
    pub fn check_categories(&self, categories: &CategorySet) -> Result<(), ValidationError> {
        match self.data.iter().position(|&v| !categories.contains(v)) {
            None => Ok(()),
            Some(i) => Err(ValidationError::single(
                "data",
                format!(
                    "value {} at ({}, {}) is not below category count {}",
                    self.data[i],
                    i % self.width,
                    i / self.width,
                    categories.count()
                ),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// ProbMap

/// Per-pixel categorical distribution, stored pixel-major
/// (`data[(y * width + x) * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(
        channels: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
    ) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        c.check(channels > 0, "channels", || "must be positive".to_string());
        c.check(width > 0, "width", || "must be positive".to_string());
        c.check(height > 0, "height", || "must be positive".to_string());
        c.check(data.len() == channels * width * height, "data", || {
            format!(
                "length {} does not equal channels x width x height = {}",
                data.len(),
                channels * width * height
            )
        });
        c.finish()?;

        let mut c = Checker::default();
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            c.check(false, "data", || {
                format!("value {} at flat index {i} is negative or not finite", data[i])
            });
        }
        if let Some((p, sum)) = data
            .chunks_exact(channels)
            .map(|px| px.iter().sum::<f64>())
            .enumerate()
            .find(|(_, s)| (s - 1.0).abs() > PROB_SUM_TOLERANCE)
        {
            c.check(false, "data", || {
                format!(
                    "probabilities at ({}, {}) sum to {sum}, not 1",
                    p % width,
                    p / width
                )
            });
        }
        c.finish()?;
        Ok(ProbMap {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn uniform(channels: usize, width: usize, height: usize) -> Result<Self, ValidationError> {
        let p = 1.0 / channels as f64;
        Self::new(channels, width, height, vec![p; channels * width * height])
    }

    /// One-hot distribution of `labels`; every label must be below `channels`.
    pub fn one_hot(labels: &LabelMap, channels: usize) -> Result<Self, ValidationError> {
        let mut data = vec![0.0; channels * labels.data.len()];
        for (i, &l) in labels.data.iter().enumerate() {
            if l as usize >= channels {
                return Err(ValidationError::single(
                    "labels",
                    format!("label {l} not below channel count {channels}"),
                ));
            }
            data[i * channels + l as usize] = 1.0;
        }
        Self::new(channels, labels.width, labels.height, data)
    }

    /// Stacks single-channel grids; each pixel must form a distribution.
    pub fn from_channels(grids: &[Grid]) -> Result<Self, ValidationError> {
        let Some(first) = grids.first() else {
            return Err(ValidationError::single("channels", "need at least one grid"));
        };
        let (w, h) = (first.width(), first.height());
        if let Some(i) = grids
            .iter()
            .position(|g| g.width() != w || g.height() != h)
        {
            return Err(ValidationError::single(
                format!("channels[{i}]"),
                format!("dimensions differ from channel 0 ({w}x{h})"),
            ));
        }
        let c = grids.len();
        let mut data = vec![0.0; c * w * h];
        for (ch, g) in grids.iter().enumerate() {
            for (p, &v) in g.data().iter().enumerate() {
                data[p * c + ch] = v;
            }
        }
        Self::new(c, w, h, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn prob(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn channel(&self, c: usize) -> Grid {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Grid::new(self.width, self.height, data).expect("channel of a valid map is a valid grid")
    }

    /// Most probable category per pixel; ties go to the lower id.
    pub fn argmax(&self) -> LabelMap {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| {
                let mut best = 0;
                for (c, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = c;
                    }
                }
                best.min(u8::MAX as usize) as u8
            })
            .collect();
        LabelMap::new(self.width, self.height, data).expect("argmax preserves shape")
    }
}

// ---------------------------------------------------------------------------
// Instance

/// Unvalidated field bundle for [`Instance`]; also its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParts {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub cls_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsing_score: Option<f64>,
    pub local_map: LabelMap,
}

/// One predicted or ground-truth person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceParts", into = "InstanceParts")]
pub struct Instance {
    id: u64,
    bbox: BBox,
    cls_score: f64,
    iou_score: Option<f64>,
    parsing_score: Option<f64>,
    local_map: LabelMap,
}

impl TryFrom<InstanceParts> for Instance {
    type Error = ValidationError;
    fn try_from(p: InstanceParts) -> Result<Self, Self::Error> {
        Instance::from_parts(p)
    }
}

impl From<Instance> for InstanceParts {
    fn from(i: Instance) -> Self {
        i.into_parts()
    }
}

fn unit_score(c: &mut Checker, field: &str, v: f64) {
    c.check((0.0..=1.0).contains(&v), field, || {
        format!("must lie in [0, 1], got {v}")
    });
}

impl Instance {
    pub fn from_parts(p: InstanceParts) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        unit_score(&mut c, "cls_score", p.cls_score);
        if let Some(v) = p.iou_score {
            unit_score(&mut c, "iou_score", v);
        }
        if let Some(v) = p.parsing_score {
            unit_score(&mut c, "parsing_score", v);
        }
        if let (Some(iou), Some(parsing)) = (p.iou_score, p.parsing_score) {
            let fused = (p.cls_score * iou).sqrt();
            c.check(
                (parsing - fused).abs() <= FUSED_SCORE_TOLERANCE,
                "parsing_score",
                || format!("{parsing} differs from sqrt(cls_score * iou_score) = {fused}"),
            );
        }
        let rect = p.bbox.pixel_rect();
        c.check(
            p.local_map.dims() == (rect.width(), rect.height()),
            "local_map",
            || {
                format!(
                    "dimensions {}x{} do not match rounded box extent {}x{}",
                    p.local_map.width,
                    p.local_map.height,
                    rect.width(),
                    rect.height()
                )
            },
        );
        c.finish()?;
        Ok(Instance {
            id: p.id,
            bbox: p.bbox,
            cls_score: p.cls_score,
            iou_score: p.iou_score,
            parsing_score: p.parsing_score,
            local_map: p.local_map,
        })
    }

    /// Raw detection: only a classification score.
    pub fn new(
        id: u64,
        bbox: BBox,
        cls_score: f64,
        local_map: LabelMap,
    ) -> Result<Self, ValidationError> {
        Self::from_parts(InstanceParts {
            id,
            bbox,
            cls_score,
            iou_score: None,
            parsing_score: None,
            local_map,
        })
    }

    /// Ground-truth person; scores fixed at 1.0.
    pub fn ground_truth(id: u64, bbox: BBox, local_map: LabelMap) -> Result<Self, ValidationError> {
        Self::new(id, bbox, 1.0, local_map)
    }

    pub fn into_parts(self) -> InstanceParts {
        InstanceParts {
            id: self.id,
            bbox: self.bbox,
            cls_score: self.cls_score,
            iou_score: self.iou_score,
            parsing_score: self.parsing_score,
            local_map: self.local_map,
        }
    }

    pub fn to_parts(&self) -> InstanceParts {
        self.clone().into_parts()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn cls_score(&self) -> f64 {
        self.cls_score
    }

    pub fn iou_score(&self) -> Option<f64> {
        self.iou_score
    }

    pub fn parsing_score(&self) -> Option<f64> {
        self.parsing_score
    }

    pub fn local_map(&self) -> &LabelMap {
        &self.local_map
    }

    /// Score used to rank instances: the parsing score, or the
    /// classification score when no parsing score has been assigned.
    pub fn ranking_score(&self) -> f64 {
        self.parsing_score.unwrap_or(self.cls_score)
    }

    pub fn with_scores(
        self,
        iou_score: Option<f64>,
        parsing_score: Option<f64>,
    ) -> Result<Self, ValidationError> {
        let mut p = self.into_parts();
        p.iou_score = iou_score;
        p.parsing_score = parsing_score;
        Self::from_parts(p)
    }

    pub fn with_geometry(self, bbox: BBox, local_map: LabelMap) -> Result<Self, ValidationError> {
        let mut p = self.into_parts();
        p.bbox = bbox;
        p.local_map = local_map;
        Self::from_parts(p)
    }
}

// ---------------------------------------------------------------------------
// ImageRecord

/// Unvalidated field bundle for [`ImageRecord`]; also its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecordParts {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub gt_semantic: LabelMap,
    pub gt_instances: Vec<Instance>,
    pub pred_instances: Vec<Instance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_semantic: Option<LabelMap>,
}

/// Ground truth and predictions for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImageRecordParts", into = "ImageRecordParts")]
pub struct ImageRecord {
    id: String,
    width: usize,
    height: usize,
    gt_semantic: LabelMap,
    gt_instances: Vec<Instance>,
    pred_instances: Vec<Instance>,
    pred_semantic: Option<LabelMap>,
}

impl TryFrom<ImageRecordParts> for ImageRecord {
    type Error = ValidationError;
    fn try_from(p: ImageRecordParts) -> Result<Self, Self::Error> {
        ImageRecord::from_parts(p)
    }
}

impl From<ImageRecord> for ImageRecordParts {
    fn from(r: ImageRecord) -> Self {
        r.into_parts()
    }
}

fn check_instance_list(
    c: &mut Checker,
    list: &[Instance],
    name: &str,
    width: usize,
    height: usize,
) {
    let mut ids = BTreeSet::new();
    for (i, inst) in list.iter().enumerate() {
        let field = format!("{name}[{i}]");
        c.check(inst.bbox.is_within(width, height), &format!("{field}.box"), || {
            format!(
                "{:?} not clipped to the {width}x{height} image",
                inst.bbox.to_array()
            )
        });
        c.check(ids.insert(inst.id), &format!("{field}.id"), || {
            format!("duplicate instance id {}", inst.id)
        });
    }
}

/// Ground-truth persons must not share foreground pixels once pasted.
fn check_gt_partition(c: &mut Checker, gts: &[Instance], width: usize, height: usize) {
    let mut owner: Vec<u32> = vec![0; width * height];
    for (k, gt) in gts.iter().enumerate() {
        let r = gt.bbox.pixel_rect();
        if r.x1 > width || r.y1 > height {
            continue;
        }
        let mut clash = None;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                if gt.local_map.get(x - r.x0, y - r.y0) == BACKGROUND {
                    continue;
                }
                let o = &mut owner[y * width + x];
                if *o != 0 && clash.is_none() {
                    clash = Some((x, y, *o - 1));
                }
                *o = k as u32 + 1;
            }
        }
        if let Some((x, y, other)) = clash {
            c.check(false, &format!("gt_instances[{k}]"), || {
                format!(
                    "foreground overlaps gt_instances[{other}] at ({x}, {y}); ground truth must be a partition"
                )
            });
        }
    }
}

impl ImageRecord {
    pub fn from_parts(p: ImageRecordParts) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        c.check(p.width > 0, "width", || "must be positive".to_string());
        c.check(p.height > 0, "height", || "must be positive".to_string());
        c.check(
            p.gt_semantic.dims() == (p.width, p.height),
            "gt_semantic",
            || {
                format!(
                    "dimensions {}x{} differ from image {}x{}",
                    p.gt_semantic.width, p.gt_semantic.height, p.width, p.height
                )
            },
        );
        if let Some(m) = &p.pred_semantic {
            c.check(m.dims() == (p.width, p.height), "pred_semantic", || {
                format!(
                    "dimensions {}x{} differ from image {}x{}",
                    m.width, m.height, p.width, p.height
                )
            });
        }
        check_instance_list(&mut c, &p.gt_instances, "gt_instances", p.width, p.height);
        check_instance_list(
            &mut c,
            &p.pred_instances,
            "pred_instances",
            p.width,
            p.height,
        );
        for (i, gt) in p.gt_instances.iter().enumerate() {
            c.check(
                gt.cls_score == 1.0,
                &format!("gt_instances[{i}].cls_score"),
                || format!("ground truth score must be 1.0, got {}", gt.cls_score),
            );
        }
        check_gt_partition(&mut c, &p.gt_instances, p.width, p.height);
        c.finish()?;
        Ok(ImageRecord {
            id: p.id,
            width: p.width,
            height: p.height,
            gt_semantic: p.gt_semantic,
            gt_instances: p.gt_instances,
            pred_instances: p.pred_instances,
            pred_semantic: p.pred_semantic,
        })
    }

    pub fn into_parts(self) -> ImageRecordParts {
        ImageRecordParts {
            id: self.id,
            width: self.width,
            height: self.height,
            gt_semantic: self.gt_semantic,
            gt_instances: self.gt_instances,
            pred_instances: self.pred_instances,
            pred_semantic: self.pred_semantic,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn gt_semantic(&self) -> &LabelMap {
        &self.gt_semantic
    }

    pub fn gt_instances(&self) -> &[Instance] {
        &self.gt_instances
    }

    pub fn pred_instances(&self) -> &[Instance] {
        &self.pred_instances
    }

    pub fn pred_semantic(&self) -> Option<&LabelMap> {
        self.pred_semantic.as_ref()
    }

    /// Replaces the predictions, validating only what changed.
    pub fn with_predictions(mut self, preds: Vec<Instance>) -> Result<Self, ValidationError> {
        let mut c = Checker::default();
        check_instance_list(&mut c, &preds, "pred_instances", self.width, self.height);
        c.finish()?;
        self.pred_instances = preds;
        Ok(self)
    }

    pub fn with_pred_semantic(mut self, map: Option<LabelMap>) -> Result<Self, ValidationError> {
        if let Some(m) = &map {
            if m.dims() != self.dims() {
                return Err(ValidationError::single(
                    "pred_semantic",
                    format!(
                        "dimensions {}x{} differ from image {}x{}",
                        m.width, m.height, self.width, self.height
                    ),
                ));
            }
        }
        self.pred_semantic = map;
        Ok(self)
    }

    /// Checks every raster of the record against `categories`.
    pub fn check_categories(&self, categories: &CategorySet) -> Result<(), ValidationError> {
        let mut c = Checker::default();
        c.absorb(self.gt_semantic.check_categories(categories), "gt_semantic");
        if let Some(m) = &self.pred_semantic {
            c.absorb(m.check_categories(categories), "pred_semantic");
        }
        for (i, g) in self.gt_instances.iter().enumerate() {
            c.absorb(
                g.local_map.check_categories(categories),
                &format!("gt_instances[{i}].local_map"),
            );
        }
        for (i, p) in self.pred_instances.iter().enumerate() {
            c.absorb(
                p.local_map.check_categories(categories),
                &format!("pred_instances[{i}].local_map"),
            );
        }
        c.finish()
    }
}
