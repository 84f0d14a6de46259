//! Raster and box operations: IoU, crop, paste, resize, pooling.
//!
//! Every box-to-pixel conversion goes through [`BBox::pixel_rect`], so
//! crop, paste and the metrics agree on which pixels a box covers.

use std::cmp::Ordering;

use crate::error::{Error, Result, ValidationError};
use crate::model::{BBox, Instance, LabelMap, PixelRect, ProbMap, BACKGROUND};

/// Single-channel raster of finite reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ValidationError> {
        if width == 0 || height == 0 {
            return Err(ValidationError::single(
                if width == 0 { "width" } else { "height" },
                "must be positive",
            ));
        }
        if data.len() != width * height {
            return Err(ValidationError::single(
                "data",
                format!(
                    "length {} does not equal width x height = {}",
                    data.len(),
                    width * height
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ValidationError::single(
                "data",
                format!("value at flat index {i} is not finite"),
            ));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Result<Self, ValidationError> {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ValidationError> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(ValidationError::single("rows", "rows differ in length"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(width, rows.len(), data)
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
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Intersection over union of two boxes.
///
/// Fails when both boxes have zero area; a single degenerate box simply
/// yields 0.
pub fn box_iou(a: &BBox, b: &BBox) -> Result<f64> {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::invalid("box_iou of two zero-area boxes"));
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn check_rect_in(rect: &PixelRect, width: usize, height: usize, what: &str) -> Result<()> {
    if rect.is_empty() {
        return Err(Error::invalid(format!(
            "{what}: rounded box extent {}x{} is empty",
            rect.width(),
            rect.height()
        )));
    }
    if rect.x1 > width || rect.y1 > height {
        return Err(Error::invalid(format!(
            "{what}: rounded box {rect:?} exceeds the {width}x{height} raster"
        )));
    }
    Ok(())
}

/// Sub-raster of `map` covered by the rounded `bbox`.
pub fn crop_label_map(map: &LabelMap, bbox: &BBox) -> Result<LabelMap> {
    let r = bbox.pixel_rect();
    check_rect_in(&r, map.width(), map.height(), "crop_label_map")?;
    let mut data = Vec::with_capacity(r.width() * r.height());
    for y in r.y0..r.y1 {
        data.extend_from_slice(&map.row(y)[r.x0..r.x1]);
    }
    Ok(LabelMap::new(r.width(), r.height(), data)?)
}

/// Order in which [`paste_instances`] applies instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PastePolicy {
    /// Ascending ranking score, so the highest-scoring instance wins
    /// overlaps; equal scores resolve in favour of the lower id.
    #[default]
    HighestScoreWins,
    /// List order; later instances overwrite earlier ones.
    InputOrder,
}

/// Paint order for `instances` under `policy`, as indices.
pub fn paste_order(instances: &[Instance], policy: PastePolicy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    if policy == PastePolicy::HighestScoreWins {
        order.sort_by(|&a, &b| {
            let (ia, ib) = (&instances[a], &instances[b]);
            ia.ranking_score()
                .total_cmp(&ib.ranking_score())
                .then_with(|| ib.id().cmp(&ia.id()))
        });
    }
    order
}

/// Renders instances onto an all-background canvas. Background pixels of a
/// local map never overwrite the canvas.
pub fn paste_instances(
    canvas_w: usize,
    canvas_h: usize,
    instances: &[Instance],
    policy: PastePolicy,
) -> Result<LabelMap> {
    let mut canvas = LabelMap::background(canvas_w, canvas_h)?;
    for i in paste_order(instances, policy) {
        paste_one(&mut canvas, &instances[i])?;
    }
    Ok(canvas)
}

pub(crate) fn paste_one(canvas: &mut LabelMap, inst: &Instance) -> Result<()> {
    let r = inst.bbox().pixel_rect();
    let local = inst.local_map();
    if local.dims() != (r.width(), r.height()) {
        return Err(Error::invalid(format!(
            "instance {}: local map {}x{} does not match rounded box extent {}x{}",
            inst.id(),
            local.width(),
            local.height(),
            r.width(),
            r.height()
        )));
    }
    check_rect_in(
        &r,
        canvas.width(),
        canvas.height(),
        &format!("instance {}", inst.id()),
    )?;
    let cw = canvas.width();
    let dst = canvas.data_mut();
    for y in 0..r.height() {
        let row = local.row(y);
        let base = (r.y0 + y) * cw + r.x0;
        for (x, &v) in row.iter().enumerate() {
            if v != BACKGROUND {
                dst[base + x] = v;
            }
        }
    }
    Ok(())
}

/// Half-pixel-centre source coordinate, clamped into `[0, len - 1]`.
#[inline]
fn source_coord(i: usize, scale: f64, len: usize) -> f64 {
    ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64)
}

fn check_out_size(out_w: usize, out_h: usize) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "output size {out_w}x{out_h} must be at least 1x1"
        )));
    }
    Ok(())
}

/// Linear taps along one axis: (lower index, upper index, upper weight).
fn linear_taps(out: usize, len: usize) -> Vec<(usize, usize, f64)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = source_coord(i, scale, len);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Exact when `a == b`, so constant rasters stay constant.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize with half-pixel-centre alignment.
pub fn resize_bilinear(g: &Grid, out_w: usize, out_h: usize) -> Result<Grid> {
    check_out_size(out_w, out_h)?;
    let xs = linear_taps(out_w, g.width);
    let ys = linear_taps(out_h, g.height);
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(g.get(x0, y0), g.get(x1, y0), fx);
            let bottom = lerp(g.get(x0, y1), g.get(x1, y1), fx);
            data.push(lerp(top, bottom, fy));
        }
    }
    Ok(Grid::new(out_w, out_h, data)?)
}

/// Nearest source index for output index `i`: the half-pixel-centre
/// coordinate rounded half up, i.e. `floor((i + 0.5) * scale)`.
fn nearest_index(i: usize, scale: f64, len: usize) -> usize {
    (((i as f64 + 0.5) * scale).floor() as usize).min(len - 1)
}

/// Nearest-neighbour resize for label rasters; never invents values.
pub fn resize_nearest(m: &LabelMap, out_w: usize, out_h: usize) -> Result<LabelMap> {
    check_out_size(out_w, out_h)?;
    let sx = m.width() as f64 / out_w as f64;
    let sy = m.height() as f64 / out_h as f64;
    let xs: Vec<usize> = (0..out_w).map(|i| nearest_index(i, sx, m.width())).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let row = m.row(nearest_index(j, sy, m.height()));
        data.extend(xs.iter().map(|&x| row[x]));
    }
    Ok(LabelMap::new(out_w, out_h, data)?)
}

/// Bilinear resize of every channel of a probability map. Interpolating
/// distributions keeps each pixel a distribution.
pub fn resize_prob_map(p: &ProbMap, out_w: usize, out_h: usize) -> Result<ProbMap> {
    let grids = (0..p.channels())
        .map(|c| resize_bilinear(&p.channel(c), out_w, out_h))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbMap::from_channels(&grids)?)
}

/// Padding-free max pooling with `kernel == stride`.
pub fn max_pool(g: &Grid, kernel: usize, stride: usize) -> Result<Grid> {
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid("kernel and stride must be >= 1"));
    }
    if kernel != stride {
        return Err(Error::invalid(format!(
            "only kernel == stride is supported (got kernel {kernel}, stride {stride})"
        )));
    }
    if g.width % stride != 0 || g.height % stride != 0 {
        return Err(Error::invalid(format!(
            "{}x{} grid is not divisible by stride {stride}",
            g.width, g.height
        )));
    }
    let (ow, oh) = (g.width / stride, g.height / stride);
    let mut out = vec![f64::NEG_INFINITY; ow * oh];
    for y in 0..g.height {
        let orow = &mut out[(y / stride) * ow..(y / stride + 1) * ow];
        for (x, &v) in g.data[y * g.width..(y + 1) * g.width].iter().enumerate() {
            let cell = &mut orow[x / stride];
            if v > *cell {
                *cell = v;
            }
        }
    }
    Ok(Grid::new(ow, oh, out)?)
}

/// Max-pools every channel of a probability map (the re-scoring input
/// preparation). Pooled channels no longer sum to one, hence grids.
pub fn max_pool_channels(p: &ProbMap, kernel: usize, stride: usize) -> Result<Vec<Grid>> {
    (0..p.channels())
        .map(|c| max_pool(&p.channel(c), kernel, stride))
        .collect()
}

/// Compares instances by descending ranking score, then ascending id.
pub(crate) fn by_rank(a: &Instance, b: &Instance) -> Ordering {
    b.ranking_score()
        .total_cmp(&a.ranking_score())
        .then_with(|| a.id().cmp(&b.id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn inst(id: u64, b: BBox, score: f64, fill: u8) -> Instance {
        let r = b.pixel_rect();
        Instance::new(id, b, score, LabelMap::filled(r.width(), r.height(), fill).unwrap())
            .unwrap()
    }

    #[test]
    fn box_iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(box_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(box_iou(&a, &bx(2.0, 0.0, 4.0, 2.0)).unwrap(), 0.0);
        // intersection 2, union 6
        assert!((box_iou(&a, &bx(1.0, 0.0, 3.0, 2.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let dot = bx(1.0, 1.0, 1.0, 1.0);
        assert!(box_iou(&dot, &dot).is_err());
        assert_eq!(box_iou(&dot, &a).unwrap(), 0.0);
    }

    #[test]
    fn crop_examples() {
        let m = LabelMap::new(4, 4, (0..16).collect()).unwrap();
        assert_eq!(crop_label_map(&m, &bx(0.0, 0.0, 4.0, 4.0)).unwrap(), m);
        let z = LabelMap::background(4, 4).unwrap();
        assert_eq!(
            crop_label_map(&z, &bx(1.0, 1.0, 3.0, 3.0)).unwrap(),
            LabelMap::background(2, 2).unwrap()
        );
        let m = LabelMap::from_rows(&[[1u8, 2], [3, 4]]).unwrap();
        assert_eq!(
            crop_label_map(&m, &bx(1.0, 0.0, 2.0, 2.0)).unwrap(),
            LabelMap::from_rows(&[[2u8], [4]]).unwrap()
        );
        assert!(crop_label_map(&m, &bx(1.2, 0.0, 1.4, 2.0)).is_err());
        assert!(crop_label_map(&m, &bx(0.0, 0.0, 3.0, 2.0)).is_err());
    }

    #[test]
    fn paste_examples() {
        assert!(paste_instances(3, 2, &[], PastePolicy::default())
            .unwrap()
            .is_all_background());
        let full = inst(0, bx(0.0, 0.0, 3.0, 2.0), 0.5, 3);
        assert_eq!(
            paste_instances(3, 2, &[full], PastePolicy::default()).unwrap(),
            LabelMap::filled(3, 2, 3).unwrap()
        );
        // Overlap column x=1 goes to the 0.9 instance regardless of list order.
        let hi = inst(0, bx(0.0, 0.0, 2.0, 1.0), 0.9, 1);
        let lo = inst(1, bx(1.0, 0.0, 3.0, 1.0), 0.4, 2);
        for list in [vec![hi.clone(), lo.clone()], vec![lo.clone(), hi.clone()]] {
            let out = paste_instances(3, 1, &list, PastePolicy::default()).unwrap();
            assert_eq!(out.data(), &[1, 1, 2]);
        }
        let out = paste_instances(3, 1, &[hi, lo], PastePolicy::InputOrder).unwrap();
        assert_eq!(out.data(), &[1, 2, 2]);
    }

    #[test]
    fn paste_ties_favour_lower_id() {
        let a = inst(4, bx(0.0, 0.0, 2.0, 1.0), 0.5, 1);
        let b = inst(2, bx(1.0, 0.0, 3.0, 1.0), 0.5, 2);
        let out = paste_instances(3, 1, &[a, b], PastePolicy::default()).unwrap();
        assert_eq!(out.data(), &[1, 2, 2]);
    }

    #[test]
    fn paste_background_is_transparent() {
        let under = inst(0, bx(0.0, 0.0, 2.0, 1.0), 0.1, 5);
        let mut holey = LabelMap::filled(2, 1, 7).unwrap();
        holey.set(0, 0, 0);
        let over = Instance::new(1, bx(0.0, 0.0, 2.0, 1.0), 0.9, holey).unwrap();
        let out = paste_instances(2, 1, &[under, over], PastePolicy::default()).unwrap();
        assert_eq!(out.data(), &[5, 7]);
    }

    #[test]
    fn paste_rejects_out_of_canvas() {
        let i = inst(0, bx(0.0, 0.0, 3.0, 1.0), 0.5, 1);
        assert!(paste_instances(2, 1, &[i], PastePolicy::default()).is_err());
    }

    /// Closed-form bilinear sample, coded directly from the definition.
    fn bilinear_oracle(g: &Grid, out_w: usize, out_h: usize, i: usize, j: usize) -> f64 {
        let sx = ((i as f64 + 0.5) * g.width() as f64 / out_w as f64 - 0.5)
            .max(0.0)
            .min(g.width() as f64 - 1.0);
        let sy = ((j as f64 + 0.5) * g.height() as f64 / out_h as f64 - 0.5)
            .max(0.0)
            .min(g.height() as f64 - 1.0);
        let mut acc = 0.0;
        for y in 0..g.height() {
            for x in 0..g.width() {
                let wx = (1.0 - (sx - x as f64).abs()).max(0.0);
                let wy = (1.0 - (sy - y as f64).abs()).max(0.0);
                acc += wx * wy * g.get(x, y);
            }
        }
        acc
    }

    #[test]
    fn bilinear_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::new(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let same = resize_bilinear(&g, 5, 3).unwrap();
        for (a, b) in same.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let one = Grid::filled(1, 1, 0.7).unwrap();
        let big = resize_bilinear(&one, 6, 4).unwrap();
        assert!(big.data().iter().all(|&v| v == 0.7));

        let ramp = Grid::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let up = resize_bilinear(&ramp, 4, 4).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let expect = bilinear_oracle(&ramp, 4, 4, i, j);
                assert!((up.get(i, j) - expect).abs() < 1e-12);
            }
            // Half-pixel centres: [0, 0.25, 0.75, 1].
            assert_eq!(&up.data()[j * 4..j * 4 + 4], &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn bilinear_matches_oracle_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..7), rng.random_range(1..7));
            let g = Grid::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect())
                .unwrap();
            let (ow, oh) = (rng.random_range(1..10), rng.random_range(1..10));
            let out = resize_bilinear(&g, ow, oh).unwrap();
            for j in 0..oh {
                for i in 0..ow {
                    assert!((out.get(i, j) - bilinear_oracle(&g, ow, oh, i, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nearest_examples() {
        let m = LabelMap::from_rows(&[[1u8, 2], [3, 4]]).unwrap();
        assert_eq!(resize_nearest(&m, 2, 2).unwrap(), m);
        let c = LabelMap::filled(3, 2, 9).unwrap();
        assert_eq!(resize_nearest(&c, 7, 5).unwrap(), LabelMap::filled(7, 5, 9).unwrap());
        let up = resize_nearest(&m, 4, 4).unwrap();
        assert_eq!(
            up,
            LabelMap::from_rows(&[[1u8, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
                .unwrap()
        );
        assert!(resize_nearest(&m, 0, 4).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let c = Grid::filled(4, 4, 0.5).unwrap();
        assert_eq!(max_pool(&c, 4, 4).unwrap().data(), &[0.5]);
        let mut d = vec![0.0; 16];
        d[9] = 1.0;
        assert_eq!(max_pool(&Grid::new(4, 4, d).unwrap(), 4, 4).unwrap().data(), &[1.0]);
        assert!(max_pool(&Grid::filled(6, 4, 0.0).unwrap(), 4, 4).is_err());
        assert!(max_pool(&c, 4, 2).is_err());
        assert!(max_pool(&c, 0, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(8, 8, (0..64).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let p = max_pool(&g, 4, 4).unwrap();
        assert_eq!((p.width(), p.height()), (2, 2));
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f64::NEG_INFINITY;
                for y in oy * 4..oy * 4 + 4 {
                    for x in ox * 4..ox * 4 + 4 {
                        m = m.max(g.get(x, y));
                    }
                }
                assert_eq!(p.get(ox, oy), m);
            }
        }
    }

    #[test]
    fn prob_map_resize_and_pool() {
        let labels = LabelMap::from_rows(&[[0u8, 1, 1, 2], [0, 1, 2, 2]]).unwrap();
        let p = ProbMap::one_hot(&labels, 3).unwrap();
        let up = resize_prob_map(&p, 8, 4).unwrap();
        assert_eq!(up.channels(), 3);
        let pooled = max_pool_channels(&up, 4, 4).unwrap();
        assert_eq!(pooled.len(), 3);
        assert_eq!((pooled[0].width(), pooled[0].height()), (2, 1));
        assert_eq!(pooled[0].get(0, 0), 1.0);
        assert_eq!(pooled[0].get(1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn box_iou_symmetric_and_bounded(
            a in (0.0..20.0f64, 0.0..20.0f64, 0.1..10.0f64, 0.1..10.0f64),
            b in (0.0..20.0f64, 0.0..20.0f64, 0.1..10.0f64, 0.1..10.0f64),
        ) {
            let a = bx(a.0, a.1, a.0 + a.2, a.1 + a.3);
            let b = bx(b.0, b.1, b.0 + b.2, b.1 + b.3);
            let ab = box_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, box_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((box_iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn paste_then_crop_recovers_foreground(
            x0 in 0usize..6, y0 in 0usize..6, w in 1usize..6, h in 1usize..6,
            cells in proptest::collection::vec(0u8..4, 36),
        ) {
            let b = bx(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64);
            let local = LabelMap::new(w, h, cells[..w * h].to_vec()).unwrap();
            let i = Instance::new(0, b, 0.5, local.clone()).unwrap();
            let canvas = paste_instances(12, 12, &[i], PastePolicy::default()).unwrap();
            let back = crop_label_map(&canvas, &b).unwrap();
            for (l, c) in local.data().iter().zip(back.data()) {
                if *l != 0 {
                    prop_assert_eq!(l, c);
                }
            }
        }

        #[test]
        fn bilinear_bounds_and_constant_round_trip(
            w in 1usize..6, h in 1usize..6, ow in 1usize..12, oh in 1usize..12,
            vals in proptest::collection::vec(-3.0..3.0f64, 36),
            c in -2.0..2.0f64,
        ) {
            let g = Grid::new(w, h, vals[..w * h].to_vec()).unwrap();
            let out = resize_bilinear(&g, ow, oh).unwrap();
            prop_assert!(out.min() >= g.min() - 1e-12 && out.max() <= g.max() + 1e-12);
            let k = Grid::filled(w, h, c).unwrap();
            let there = resize_bilinear(&k, ow, oh).unwrap();
            prop_assert_eq!(resize_bilinear(&there, w, h).unwrap(), k);
        }

        #[test]
        fn nearest_only_uses_input_values(
            w in 1usize..6, h in 1usize..6, ow in 1usize..12, oh in 1usize..12,
            vals in proptest::collection::vec(0u8..20, 36),
        ) {
            let m = LabelMap::new(w, h, vals[..w * h].to_vec()).unwrap();
            let out = resize_nearest(&m, ow, oh).unwrap();
            for v in out.data() {
                prop_assert!(m.data().contains(v));
            }
        }
    }
}
