//! Global/instance segmentation combination: filter instances by parsing
//! score, render them, and OR the result with the global semantic map.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{render_table, to_json, SemanticSection};
use crate::geometry::{paste_instances, PastePolicy};
use crate::model::{ImageRecord, LabelMap, BACKGROUND};
use crate::semantic_metrics::{evaluate_semantic, SemanticMetrics, SemanticOptions};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

/// Map (b): instances whose parsing score reaches `threshold`, pasted with
/// the highest score on top.
pub fn render_instance_semantic(image: &ImageRecord, threshold: f64) -> Result<LabelMap> {
    let missing: Vec<u64> = image
        .pred_instances()
        .iter()
        .filter(|p| p.parsing_score().is_none())
        .map(|p| p.id())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingScore {
            what: "parsing_score",
            ids: missing,
        });
    }
    let kept: Vec<_> = image
        .pred_instances()
        .iter()
        .filter(|p| p.parsing_score().expect("checked above") >= threshold)
        .cloned()
        .collect();
    paste_instances(
        image.width(),
        image.height(),
        &kept,
        PastePolicy::HighestScoreWins,
    )
}

/// Map (c): union of foreground, with the instance label winning wherever
/// both maps are foreground. Not symmetric on purpose.
pub fn combine_or(global: &LabelMap, instance: &LabelMap) -> Result<LabelMap> {
    if global.dims() != instance.dims() {
        return Err(Error::invalid(format!(
            "cannot combine {}x{} global map with {}x{} instance map",
            global.width(),
            global.height(),
            instance.width(),
            instance.height()
        )));
    }
    let data = global
        .data()
        .iter()
        .zip(instance.data())
        .map(|(&g, &i)| if i != BACKGROUND { i } else { g })
        .collect();
    Ok(LabelMap::new(global.width(), global.height(), data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    Global,
    Instance,
    Combined,
}

impl CombineMode {
    pub const ALL: [CombineMode; 3] = [CombineMode::Global, CombineMode::Instance, CombineMode::Combined];

    pub fn label(&self) -> &'static str {
        match self {
            CombineMode::Global => "(a) global",
            CombineMode::Instance => "(b) instance-level",
            CombineMode::Combined => "(c) combine",
        }
    }

    /// File-name tag used when the maps are written out.
    pub fn tag(&self) -> &'static str {
        match self {
            CombineMode::Global => "a",
            CombineMode::Instance => "b",
            CombineMode::Combined => "c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinedMaps {
    pub image_id: String,
    pub global: Option<LabelMap>,
    pub instance: LabelMap,
    pub combined: Option<LabelMap>,
}

impl CombinedMaps {
    pub fn get(&self, mode: CombineMode) -> Option<&LabelMap> {
        match mode {
            CombineMode::Global => self.global.as_ref(),
            CombineMode::Instance => Some(&self.instance),
            CombineMode::Combined => self.combined.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineRow {
    pub mode: CombineMode,
    pub label: String,
    #[serde(flatten)]
    pub semantic: SemanticSection,
}

/// One row per available mode, percent values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombineReport {
    pub score_threshold: f64,
    pub images: usize,
    pub rows: Vec<CombineRow>,
    pub warnings: Vec<String>,
}

impl CombineReport {
    pub fn row(&self, mode: CombineMode) -> Option<&CombineRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                (
                    r.label.clone(),
                    vec![
                        Some(r.semantic.pixel_acc),
                        Some(r.semantic.mean_acc),
                        Some(r.semantic.miou),
                    ],
                )
            })
            .collect();
        let mut out = render_table(&["Pixel acc.", "Mean acc.", "mIoU"], &rows);
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombineOutput {
    pub maps: Vec<CombinedMaps>,
    pub metrics: Vec<(CombineMode, SemanticMetrics)>,
    pub report: CombineReport,
}

impl CombineOutput {
    pub fn metrics(&self, mode: CombineMode) -> Option<&SemanticMetrics> {
        self.metrics.iter().find(|(m, _)| *m == mode).map(|(_, s)| s)
    }
}

/// Renders maps (a)/(b)/(c) for every image and scores each mode against
/// the ground-truth semantics. If any image lacks a global map, the (a)
/// and (c) rows are dropped and a warning names the images.
pub fn combine_dataset(
    images: &[ImageRecord],
    classes: usize,
    threshold: f64,
    opts: SemanticOptions,
) -> Result<CombineOutput> {
    if images.is_empty() {
        return Err(Error::NoImages);
    }
    let maps = images
        .par_iter()
        .map(|img| {
            let instance = render_instance_semantic(img, threshold)?;
            let global = img.pred_semantic().cloned();
            let combined = global.as_ref().map(|g| combine_or(g, &instance)).transpose()?;
            Ok(CombinedMaps {
                image_id: img.id().to_string(),
                global,
                instance,
                combined,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let missing: Vec<&str> = maps
        .iter()
        .filter(|m| m.global.is_none())
        .map(|m| m.image_id.as_str())
        .collect();
    let mut warnings = Vec::new();
    if !missing.is_empty() {
        warnings.push(format!(
            "pred_semantic missing for {} image(s) ({}); rows (a) and (c) omitted",
            missing.len(),
            missing.join(", ")
        ));
    }

    let mut metrics = Vec::new();
    for mode in CombineMode::ALL {
        if mode != CombineMode::Instance && !missing.is_empty() {
            continue;
        }
        let pairs: Vec<(&LabelMap, &LabelMap)> = maps
            .iter()
            .zip(images)
            .map(|(m, img)| (m.get(mode).expect("present"), img.gt_semantic()))
            .collect();
        metrics.push((mode, evaluate_semantic(classes, &pairs, opts)?));
    }

    let report = CombineReport {
        score_threshold: threshold,
        images: images.len(),
        rows: metrics
            .iter()
            .map(|(mode, m)| CombineRow {
                mode: *mode,
                label: mode.label().to_string(),
                semantic: SemanticSection::from(m),
            })
            .collect(),
        warnings,
    };
    Ok(CombineOutput {
        maps,
        metrics,
        report,
    })
}
