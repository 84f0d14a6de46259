//! File formats: 8-bit PNG label maps, JSON dataset manifests and
//! evaluation reports.
//!
//! Manifest layout:
//!
//! ```json
//! {"categories": {"count": 20, "names": ["background", ...]},
//!  "images": [{"id": "img0", "width": 64, "height": 48,
//!              "gt_semantic": "maps/img0.png",
//!              "gt_instances": [{"box": [x1, y1, x2, y2], "map": "maps/img0_gt_0.png"}],
//!              "predictions": [{"box": [...], "cls_score": 0.9, "iou_score": 0.7,
//!                               "parsing_score": 0.793725, "map": "maps/img0_pred_0.png"}],
//!              "pred_semantic": "maps/img0_global.png"}]}
//! ```
//!
//! Paths are relative to the manifest's directory. Instance ids are list
//! positions. `iou_score`, `parsing_score` and `pred_semantic` are optional.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result, ValidationError};
use crate::instance_metrics::{InstanceMetrics, AP_THRESHOLDS, PROTOCOL_VERSION};
use crate::model::{BBox, CategorySet, ImageRecord, ImageRecordParts, Instance, InstanceParts, LabelMap};
use crate::rescoring::fuse_scores;
use crate::semantic_metrics::SemanticMetrics;

// ---------------------------------------------------------------------------
// Label maps

/// Decodes an 8-bit single-channel PNG (grayscale or paletted; palette
/// indices are category ids). With `categories`, every value is checked.
pub fn read_label_map(bytes: &[u8], categories: Option<&CategorySet>) -> Result<LabelMap> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("not a readable PNG: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale | png::ColorType::Indexed, png::BitDepth::Eight) => {}
        (ct, bd) => {
            return Err(Error::UnsupportedFormat(format!(
                "label maps must be 8-bit single-channel PNGs, got {ct:?} at {bd:?}"
            )))
        }
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("PNG too large".to_string()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::UnsupportedFormat(format!("corrupt PNG data: {e}")))?;
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks(frame.line_size).take(height) {
        data.extend_from_slice(&row[..width]);
    }
    let map = LabelMap::new(width, height, data)?;
    if let Some(c) = categories {
        map.check_categories(c)?;
    }
    Ok(map)
}

/// Encodes a label map as an 8-bit grayscale PNG. Output bytes depend only
/// on the map.
pub fn write_label_map(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width() as u32, map.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
        w.write_image_data(map.data())
            .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
        w.finish()
            .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
    }
    Ok(out)
}

pub fn load_label_map(path: &Path, categories: Option<&CategorySet>) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_label_map(&bytes, categories).map_err(|e| match e {
        Error::Validation(v) => Error::Validation(v.nested(&path.display().to_string())),
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_label_map(path: &Path, map: &LabelMap) -> Result<()> {
    write_file(path, &write_label_map(map)?)
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Manifests

/// Scores are written with at most 6 decimals.
pub fn round_score(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn ser_score<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_score(*x))
}

fn ser_opt_score<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round_score(*v)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub categories: CategorySet,
    pub images: Vec<ImageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub gt_semantic: String,
    #[serde(default)]
    pub gt_instances: Vec<GtEntry>,
    #[serde(default)]
    pub predictions: Vec<PredictionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_semantic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub map: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(serialize_with = "ser_score")]
    pub cls_score: f64,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_opt_score"
    )]
    pub iou_score: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_opt_score"
    )]
    pub parsing_score: Option<f64>,
    pub map: String,
}

/// Parses and validates a manifest. Structural errors carry the JSON path
/// of the offending value.
pub fn read_manifest(text: &str) -> Result<DatasetManifest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let manifest: DatasetManifest =
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Pretty JSON with a trailing newline.
pub fn manifest_to_string(m: &DatasetManifest) -> Result<String> {
    let mut s = serde_json::to_string_pretty(m)
        .map_err(|e| Error::invalid(format!("manifest serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn schema(path: String, message: impl Into<String>) -> Error {
    Error::Schema {
        path,
        message: message.into(),
    }
}

fn check_box(path: &str, b: &[f64; 4], w: usize, h: usize) -> Result<BBox> {
    let bbox = BBox::try_from(*b).map_err(|e| schema(path.to_string(), e.to_string()))?;
    if !bbox.is_within(w, h) {
        return Err(schema(
            path.to_string(),
            format!("box {b:?} is not clipped to the {w}x{h} image"),
        ));
    }
    if bbox.pixel_rect().is_empty() {
        return Err(schema(path.to_string(), format!("box {b:?} covers no pixel")));
    }
    Ok(bbox)
}

fn check_score(path: String, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(schema(path, format!("score {v} outside [0, 1]")))
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, img) in self.images.iter().enumerate() {
            let at = format!("images[{i}]");
            if !ids.insert(img.id.as_str()) {
                return Err(Error::DuplicateImageId(img.id.clone()));
            }
            if img.width == 0 || img.height == 0 {
                return Err(schema(at.clone(), "width and height must be positive"));
            }
            for (k, g) in img.gt_instances.iter().enumerate() {
                check_box(&format!("{at}.gt_instances[{k}].box"), &g.bbox, img.width, img.height)?;
            }
            for (k, p) in img.predictions.iter().enumerate() {
                let pa = format!("{at}.predictions[{k}]");
                check_box(&format!("{pa}.box"), &p.bbox, img.width, img.height)?;
                check_score(format!("{pa}.cls_score"), p.cls_score)?;
                if let Some(v) = p.iou_score {
                    check_score(format!("{pa}.iou_score"), v)?;
                }
                if let Some(v) = p.parsing_score {
                    check_score(format!("{pa}.parsing_score"), v)?;
                }
            }
        }
        Ok(())
    }

    /// Every file path the manifest references, in document order.
    pub fn referenced_paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for img in &self.images {
            out.push(img.gt_semantic.as_str());
            out.extend(img.gt_instances.iter().map(|g| g.map.as_str()));
            out.extend(img.predictions.iter().map(|p| p.map.as_str()));
            out.extend(img.pred_semantic.as_deref());
        }
        out
    }

    /// Fails listing every referenced file missing under `root`.
    pub fn check_references(&self, root: &Path) -> Result<()> {
        let missing: Vec<String> = self
            .referenced_paths()
            .into_iter()
            .filter(|p| !root.join(p).is_file())
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::DanglingReferences(missing))
        }
    }
}

/// A validated manifest plus the directory its paths resolve against.
/// Images are decoded on request.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        manifest.validate()?;
        manifest.check_references(&root)?;
        Ok(Dataset { root, manifest })
    }

    /// Reads, validates and resolves a manifest file.
    pub fn open(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = read_manifest(&text)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(manifest, root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn categories(&self) -> &CategorySet {
        &self.manifest.categories
    }

    pub fn len(&self) -> usize {
        self.manifest.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.images.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Decodes image `index` into a validated record.
    pub fn load_image(&self, index: usize) -> Result<ImageRecord> {
        let img = self
            .manifest
            .images
            .get(index)
            .ok_or_else(|| Error::invalid(format!("image index {index} out of range")))?;
        let cats = Some(&self.manifest.categories);
        let load = |rel: &str| load_label_map(&self.resolve(rel), cats);
        let at = format!("images[{index}]");

        let gt_semantic = load(&img.gt_semantic)?;
        let gt_instances = img
            .gt_instances
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let bbox = BBox::try_from(g.bbox)?;
                Instance::ground_truth(k as u64, bbox, load(&g.map)?)
                    .map_err(|e| e.nested(&format!("{at}.gt_instances[{k}]")).into())
            })
            .collect::<Result<Vec<_>>>()?;
        let pred_instances = img
            .predictions
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let path = format!("{at}.predictions[{k}]");
                let parsing_score = match (p.iou_score, p.parsing_score) {
                    // Stored fused scores carry 6 decimals; restore the exact value.
                    (Some(iou), Some(stored)) => {
                        let fused = fuse_scores(p.cls_score, iou)?;
                        if (fused - stored).abs() > 1e-6 {
                            return Err(schema(
                                format!("{path}.parsing_score"),
                                format!("{stored} is not sqrt(cls_score * iou_score) = {fused}"),
                            ));
                        }
                        Some(fused)
                    }
                    (_, s) => s,
                };
                Instance::from_parts(InstanceParts {
                    id: k as u64,
                    bbox: BBox::try_from(p.bbox)?,
                    cls_score: p.cls_score,
                    iou_score: p.iou_score,
                    parsing_score,
                    local_map: load(&p.map)?,
                })
                .map_err(|e| e.nested(&path).into())
            })
            .collect::<Result<Vec<_>>>()?;
        let pred_semantic = img.pred_semantic.as_deref().map(load).transpose()?;

        let record = ImageRecord::from_parts(ImageRecordParts {
            id: img.id.clone(),
            width: img.width,
            height: img.height,
            gt_semantic,
            gt_instances,
            pred_instances,
            pred_semantic,
        })
        .map_err(|e: ValidationError| e.nested(&at))?;
        Ok(record)
    }

    /// Decodes every image in parallel, preserving manifest order.
    pub fn load_all(&self) -> Result<Vec<ImageRecord>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| self.load_image(i))
            .collect()
    }
}

/// File names used by [`write_dataset`] for image `index`.
fn map_name(index: usize, what: &str) -> String {
    format!("maps/{index:05}_{what}.png")
}

/// Manifest entry for one record, with maps named after `index`. Instances
/// are listed in ascending id order.
pub fn image_entry(index: usize, r: &ImageRecord) -> ImageEntry {
    let mut gts: Vec<&Instance> = r.gt_instances().iter().collect();
    gts.sort_by_key(|i| i.id());
    let mut preds: Vec<&Instance> = r.pred_instances().iter().collect();
    preds.sort_by_key(|i| i.id());
    ImageEntry {
        id: r.id().to_string(),
        width: r.width(),
        height: r.height(),
        gt_semantic: map_name(index, "gt"),
        gt_instances: gts
            .iter()
            .enumerate()
            .map(|(k, g)| GtEntry {
                bbox: g.bbox().to_array(),
                map: map_name(index, &format!("gt_{k}")),
            })
            .collect(),
        predictions: preds
            .iter()
            .enumerate()
            .map(|(k, p)| PredictionEntry {
                bbox: p.bbox().to_array(),
                cls_score: p.cls_score(),
                iou_score: p.iou_score(),
                parsing_score: p.parsing_score(),
                map: map_name(index, &format!("pred_{k}")),
            })
            .collect(),
        pred_semantic: r.pred_semantic().map(|_| map_name(index, "global")),
    }
}

/// Writes every raster of `images` under `dir/maps/` and the manifest to
/// `dir/manifest.json`.
pub fn write_dataset(
    images: &[ImageRecord],
    categories: &CategorySet,
    dir: &Path,
) -> Result<DatasetManifest> {
    let entries: Vec<ImageEntry> = images
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            r.check_categories(categories)?;
            let entry = image_entry(i, r);
            let mut gts: Vec<&Instance> = r.gt_instances().iter().collect();
            gts.sort_by_key(|x| x.id());
            let mut preds: Vec<&Instance> = r.pred_instances().iter().collect();
            preds.sort_by_key(|x| x.id());
            save_label_map(&dir.join(&entry.gt_semantic), r.gt_semantic())?;
            for (g, e) in gts.iter().zip(&entry.gt_instances) {
                save_label_map(&dir.join(&e.map), g.local_map())?;
            }
            for (p, e) in preds.iter().zip(&entry.predictions) {
                save_label_map(&dir.join(&e.map), p.local_map())?;
            }
            if let (Some(m), Some(rel)) = (r.pred_semantic(), &entry.pred_semantic) {
                save_label_map(&dir.join(rel), m)?;
            }
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        categories: categories.clone(),
        images: entries,
    };
    manifest.validate()?;
    write_file(&dir.join("manifest.json"), manifest_to_string(&manifest)?.as_bytes())?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Reports

/// Percent with 4 decimals.
pub fn percent(x: f64) -> f64 {
    (x * 100.0 * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticSection {
    pub miou: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

impl From<&SemanticMetrics> for SemanticSection {
    fn from(m: &SemanticMetrics) -> Self {
        SemanticSection {
            miou: percent(m.miou),
            pixel_acc: percent(m.pixel_acc),
            mean_acc: percent(m.mean_acc),
            per_class_iou: m.per_class_iou.iter().map(|v| v.map(percent)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSection {
    /// Threshold (one decimal) -> AP^p.
    pub ap: BTreeMap<String, f64>,
    pub ap_vol: f64,
    pub pcp50: f64,
}

impl From<&InstanceMetrics> for InstanceSection {
    fn from(m: &InstanceMetrics) -> Self {
        InstanceSection {
            ap: AP_THRESHOLDS
                .iter()
                .zip(&m.ap_at)
                .map(|(t, v)| (format!("{t:.1}"), percent(*v)))
                .collect(),
            ap_vol: percent(m.ap_vol),
            pcp50: percent(m.pcp50),
        }
    }
}

/// Evaluation results; every score is a percentage with 4 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSection>,
}

impl EvalReport {
    pub fn new(
        images: usize,
        semantic: Option<&SemanticMetrics>,
        instance: Option<&InstanceMetrics>,
    ) -> Self {
        EvalReport {
            protocol: PROTOCOL_VERSION.to_string(),
            images,
            semantic: semantic.map(SemanticSection::from),
            instance: instance.map(InstanceSection::from),
        }
    }

    /// Values in the column order mIoU, AP^p_50, AP^p_vol, PCP_50.
    pub fn headline(&self) -> [Option<f64>; 4] {
        [
            self.semantic.as_ref().map(|s| s.miou),
            self.instance.as_ref().and_then(|i| i.ap.get("0.5").copied()),
            self.instance.as_ref().map(|i| i.ap_vol),
            self.instance.as_ref().map(|i| i.pcp50),
        ]
    }
}

pub const HEADLINE_COLUMNS: [&str; 4] = ["mIoU", "AP^p_50", "AP^p_vol", "PCP_50"];

/// JSON and aligned plain-text renderings of one report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub json: String,
    pub text: String,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &EvalReport) -> Result<RenderedReport> {
    if report.images == 0 {
        return Err(Error::NoImages);
    }
    let mut text = format!("protocol: {}\nimages: {}\n", report.protocol, report.images);
    text.push_str(&render_table(
        &HEADLINE_COLUMNS,
        &[("result".to_string(), report.headline().to_vec())],
    ));
    if let Some(s) = &report.semantic {
        text.push_str(&render_table(
            &["mIoU", "Pixel acc.", "Mean acc."],
            &[(
                "semantic".to_string(),
                vec![Some(s.miou), Some(s.pixel_acc), Some(s.mean_acc)],
            )],
        ));
    }
    Ok(RenderedReport {
        json: to_json(report)?,
        text,
    })
}

/// Right-aligned numeric table with one decimal; `None` renders as `-`.
pub fn render_table(columns: &[&str], rows: &[(String, Vec<Option<f64>>)]) -> String {
    render_cells(
        columns,
        &rows
            .iter()
            .map(|(label, vals)| {
                (
                    label.clone(),
                    vals.iter()
                        .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}")))
                        .collect(),
                )
            })
            .collect::<Vec<_>>(),
    )
}

/// Table of preformatted cells: label column left-aligned, others right.
pub fn render_cells(columns: &[&str], rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rows.iter()
                .filter_map(|(_, v)| v.get(i).map(String::len))
                .chain([c.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{:label_w$}", "");
    for (c, w) in columns.iter().zip(&widths) {
        out.push_str(&format!("  {c:>w$}"));
    }
    out.push('\n');
    for (label, vals) in rows {
        out.push_str(&format!("{label:label_w$}"));
        for (i, w) in widths.iter().enumerate() {
            let cell = vals.get(i).map_or("-", String::as_str);
            out.push_str(&format!("  {cell:>w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(color: png::ColorType, depth: png::BitDepth, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            if color == png::ColorType::Indexed {
                enc.set_palette(vec![0u8; 3 * 256]);
            }
            let mut wr = enc.write_header().unwrap();
            wr.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn all_zero_png_is_background() {
        let bytes = png_bytes(png::ColorType::Grayscale, png::BitDepth::Eight, 8, 8, &[0; 64]);
        let m = read_label_map(&bytes, None).unwrap();
        assert_eq!(m, LabelMap::background(8, 8).unwrap());
    }

    #[test]
    fn paletted_indices_are_categories() {
        let data: Vec<u8> = (0..12).collect();
        let bytes = png_bytes(png::ColorType::Indexed, png::BitDepth::Eight, 4, 3, &data);
        let m = read_label_map(&bytes, None).unwrap();
        assert_eq!(m.data(), &data[..]);
    }

    #[test]
    fn value_above_category_count_is_rejected() {
        let mut data = vec![0u8; 16];
        data[5] = 255;
        let bytes = png_bytes(png::ColorType::Grayscale, png::BitDepth::Eight, 4, 4, &data);
        let cats = CategorySet::with_count(20).unwrap();
        match read_label_map(&bytes, Some(&cats)) {
            Err(Error::Validation(v)) => assert!(v.to_string().contains("value 255"), "{v}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_formats() {
        let rgb = png_bytes(png::ColorType::Rgb, png::BitDepth::Eight, 2, 2, &[0; 12]);
        assert!(matches!(read_label_map(&rgb, None), Err(Error::UnsupportedFormat(_))));
        let wide = png_bytes(png::ColorType::Grayscale, png::BitDepth::Sixteen, 2, 2, &[0; 8]);
        assert!(matches!(read_label_map(&wide, None), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            read_label_map(b"not a png", None),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn writer_is_deterministic_and_handles_1x1() {
        let m = LabelMap::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(write_label_map(&m).unwrap(), write_label_map(&m).unwrap());
        let one = LabelMap::background(1, 1).unwrap();
        assert_eq!(read_label_map(&write_label_map(&one).unwrap(), None).unwrap(), one);
    }

    const MINIMAL: &str = r#"{"categories": {"count": 3},
        "images": [{"id": "a", "width": 4, "height": 2, "gt_semantic": "a.png"}]}"#;

    #[test]
    fn minimal_manifest() {
        let m = read_manifest(MINIMAL).unwrap();
        assert_eq!(m.images.len(), 1);
        assert!(m.images[0].gt_instances.is_empty());
        assert!(m.images[0].predictions.is_empty());
        assert_eq!(read_manifest(&manifest_to_string(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn manifest_errors_name_the_location() {
        let dup = MINIMAL.replace(
            r#""gt_semantic": "a.png"}]"#,
            r#""gt_semantic": "a.png"}, {"id": "a", "width": 1, "height": 1, "gt_semantic": "b.png"}]"#,
        );
        match read_manifest(&dup) {
            Err(Error::DuplicateImageId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        let bad_type = MINIMAL.replace(r#""width": 4"#, r#""width": "4""#);
        match read_manifest(&bad_type) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "images[0].width"),
            other => panic!("{other:?}"),
        }
        let bad_cats = MINIMAL.replace(r#""count": 3"#, r#""count": 1"#);
        match read_manifest(&bad_cats) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "categories"),
            other => panic!("{other:?}"),
        }
        let bad_box = MINIMAL.replace(
            r#""gt_semantic": "a.png"}"#,
            r#""gt_semantic": "a.png", "predictions": [{"box": [0, 0, 5, 2], "cls_score": 0.5, "map": "p.png"}]}"#,
        );
        match read_manifest(&bad_box) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "images[0].predictions[0].box"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_references_are_enumerated() {
        let dir = tempfile::tempdir().unwrap();
        let m = read_manifest(&MINIMAL.replace(
            r#""gt_semantic": "a.png"}"#,
            r#""gt_semantic": "a.png", "pred_semantic": "g.png"}"#,
        ))
        .unwrap();
        match Dataset::new(m, dir.path()) {
            Err(Error::DanglingReferences(v)) => assert_eq!(v, ["a.png", "g.png"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scores_serialize_with_six_decimals() {
        let p = PredictionEntry {
            bbox: [0.0, 0.0, 1.0, 1.0],
            cls_score: 0.123456789,
            iou_score: Some(1.0 / 3.0),
            parsing_score: None,
            map: "x".into(),
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"cls_score\":0.123457"), "{s}");
        assert!(s.contains("\"iou_score\":0.333333"), "{s}");
        assert!(!s.contains("parsing_score"));
    }

    #[test]
    fn report_rendering() {
        assert!(matches!(
            write_report(&EvalReport::new(0, None, None)),
            Err(Error::NoImages)
        ));
        let sem = SemanticMetrics {
            miou: 1.0,
            pixel_acc: 1.0,
            mean_acc: 1.0,
            per_class_iou: vec![Some(1.0), None],
        };
        let inst = InstanceMetrics {
            ap_at: vec![1.0; 9],
            ap_vol: 1.0,
            pcp50: 1.0,
        };
        let r = EvalReport::new(3, Some(&sem), Some(&inst));
        assert_eq!(r.headline(), [Some(100.0); 4]);
        let a = write_report(&r).unwrap();
        assert_eq!(a, write_report(&r).unwrap());
        assert!(a.text.contains("100.0"));
        let back: EvalReport = serde_json::from_str(&a.json).unwrap();
        assert_eq!(back, r);
        assert!(a.json.contains("\"0.5\": 100.0"), "{}", a.json);
    }

    #[test]
    fn table_alignment() {
        let t = render_table(
            &["mIoU", "PCP_50"],
            &[("a".into(), vec![Some(5.0), None]), ("longer".into(), vec![Some(100.0), Some(1.24)])],
        );
        assert_eq!(
            t,
            "         mIoU  PCP_50\n\
             a         5.0       -\n\
             longer  100.0     1.2\n"
        );
    }
}
