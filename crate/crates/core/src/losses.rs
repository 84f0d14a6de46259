//! Training-loss formulas and the weighted whole-network combiner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::model::{LabelMap, ProbMap};

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 2.0,
            lambda_s: 2.0,
            lambda_r: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_p: f64, lambda_s: f64, lambda_r: f64) -> Result<Self, ValidationError> {
        let w = LossWeights {
            lambda_p,
            lambda_s,
            lambda_r,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut c = crate::error::Checker::default();
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_s", self.lambda_s),
            ("lambda_r", self.lambda_r),
        ] {
            c.check(v.is_finite() && v >= 0.0, name, || {
                format!("must be finite and non-negative, got {v}")
            });
        }
        c.finish()
    }
}

/// Pre-reduced loss terms. RPN and box losses are opaque to this crate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rpn: f64,
    pub l_bbox: f64,
    pub l_par: f64,
    pub l_sem: f64,
    pub l_res: f64,
}

impl LossBreakdown {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut c = crate::error::Checker::default();
        for (name, v) in [
            ("l_rpn", self.l_rpn),
            ("l_bbox", self.l_bbox),
            ("l_par", self.l_par),
            ("l_sem", self.l_sem),
            ("l_res", self.l_res),
        ] {
            c.check(v.is_finite() && v >= 0.0, name, || {
                format!("must be finite and non-negative, got {v}")
            });
        }
        c.finish()
    }
}

/// `l_rpn + l_bbox + lambda_p l_par + lambda_s l_sem + lambda_r l_res`.
pub fn total_loss(b: &LossBreakdown, w: &LossWeights) -> Result<f64> {
    b.validate()?;
    w.validate()?;
    Ok(b.l_rpn + b.l_bbox + w.lambda_p * b.l_par + w.lambda_s * b.l_sem + w.lambda_r * b.l_res)
}

/// Mean over pixels of `-ln p[gt]`.
pub fn pixel_cross_entropy(p: &ProbMap, gt: &LabelMap) -> Result<f64> {
    if (p.width(), p.height()) != gt.dims() {
        return Err(Error::invalid(format!(
            "probability map {}x{} does not match labels {}x{}",
            p.width(),
            p.height(),
            gt.width(),
            gt.height()
        )));
    }
    let c = p.channels();
    let mut sum = 0.0;
    for (i, &label) in gt.data().iter().enumerate() {
        let label = label as usize;
        if label >= c {
            return Err(Error::invalid(format!(
                "label {label} has no channel in a {c}-channel map"
            )));
        }
        sum -= p.data()[i * c + label].max(PROB_FLOOR).ln();
    }
    Ok(sum / gt.data().len() as f64)
}

pub fn mse(pred: f64, target: f64) -> Result<f64> {
    if !pred.is_finite() || !target.is_finite() {
        return Err(Error::invalid(format!("non-finite mse input ({pred}, {target})")));
    }
    Ok((pred - target).powi(2))
}

/// Mean squared error over `(pred, target)` pairs.
pub fn mse_mean(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("mse over an empty batch"));
    }
    let mut sum = 0.0;
    for &(p, t) in pairs {
        sum += mse(p, t)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        let labels = LabelMap::from_rows(&[[0u8, 1, 2], [3, 3, 0]]).unwrap();
        let one_hot = ProbMap::one_hot(&labels, 4).unwrap();
        assert_eq!(pixel_cross_entropy(&one_hot, &labels).unwrap(), 0.0);
        let uniform = ProbMap::uniform(4, 3, 2).unwrap();
        let ce = pixel_cross_entropy(&uniform, &labels).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-9);
        assert!(pixel_cross_entropy(&uniform, &LabelMap::background(2, 2).unwrap()).is_err());
        // a zero probability on the true class is floored, not infinite
        let wrong = ProbMap::one_hot(&LabelMap::filled(3, 2, 1).unwrap(), 4).unwrap();
        let ce = pixel_cross_entropy(&wrong, &LabelMap::background(3, 2).unwrap()).unwrap();
        assert!((ce - -PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(0.8, 0.8).unwrap(), 0.0);
        assert!((mse(0.6, 0.8).unwrap() - 0.04).abs() < 1e-15);
        assert!(mse(f64::NAN, 0.0).is_err());
        let pairs = [(0.1, 0.3), (0.5, 0.5), (0.9, 0.2)];
        let oracle = ((0.1f64 - 0.3).powi(2) + 0.0 + (0.9f64 - 0.2).powi(2)) / 3.0;
        assert!((mse_mean(&pairs).unwrap() - oracle).abs() < 1e-15);
        assert!(mse_mean(&[]).is_err());
    }

    #[test]
    fn combiner_examples() {
        let ones = LossBreakdown {
            l_rpn: 1.0,
            l_bbox: 1.0,
            l_par: 1.0,
            l_sem: 1.0,
            l_res: 1.0,
        };
        assert_eq!(total_loss(&ones, &LossWeights::default()).unwrap(), 7.0);
        let zero = LossWeights::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(total_loss(&ones, &zero).unwrap(), 2.0);
        let b = LossBreakdown {
            l_rpn: 0.3,
            l_bbox: 0.2,
            l_par: 0.5,
            l_sem: 0.4,
            l_res: 0.1,
        };
        assert_eq!(
            total_loss(&b, &LossWeights::default()).unwrap(),
            0.3 + 0.2 + 2.0 * 0.5 + 2.0 * 0.4 + 1.0 * 0.1
        );
        assert!((total_loss(&b, &LossWeights::default()).unwrap() - 2.4).abs() < 1e-12);
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(f64::INFINITY, 0.0, 0.0).is_err());
    }

    fn prob_and_labels() -> impl Strategy<Value = (ProbMap, LabelMap)> {
        (2usize..5, 1usize..5, 1usize..5).prop_flat_map(|(c, w, h)| {
            (
                proptest::collection::vec(0.01..1.0f64, c * w * h),
                proptest::collection::vec(0..c as u8, w * h),
            )
                .prop_map(move |(raw, labels)| {
                    let mut grids = vec![vec![0.0; w * h]; c];
                    for px in 0..w * h {
                        let s: f64 = (0..c).map(|k| raw[px * c + k]).sum();
                        for (k, g) in grids.iter_mut().enumerate() {
                            g[px] = raw[px * c + k] / s;
                        }
                    }
                    let grids: Vec<Grid> =
                        grids.into_iter().map(|g| Grid::new(w, h, g).unwrap()).collect();
                    (
                        ProbMap::from_channels(&grids).unwrap(),
                        LabelMap::new(w, h, labels).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn cross_entropy_matches_direct_sum((p, gt) in prob_and_labels()) {
            let mut oracle = 0.0;
            for y in 0..gt.height() {
                for x in 0..gt.width() {
                    oracle += -p.prob(gt.get(x, y) as usize, x, y).ln();
                }
            }
            oracle /= (gt.width() * gt.height()) as f64;
            let ce = pixel_cross_entropy(&p, &gt).unwrap();
            prop_assert!(ce >= 0.0);
            prop_assert!((ce - oracle).abs() <= 1e-12);
        }

        #[test]
        fn combiner_is_linear(
            v in proptest::collection::vec(0.0..10.0f64, 5),
            w in proptest::collection::vec(0.0..5.0f64, 3),
            k in 0usize..5, d in 0.0..3.0f64,
        ) {
            let b = LossBreakdown { l_rpn: v[0], l_bbox: v[1], l_par: v[2], l_sem: v[3], l_res: v[4] };
            let weights = LossWeights::new(w[0], w[1], w[2]).unwrap();
            let mut bumped = b;
            let coeff = match k {
                0 => { bumped.l_rpn += d; 1.0 }
                1 => { bumped.l_bbox += d; 1.0 }
                2 => { bumped.l_par += d; w[0] }
                3 => { bumped.l_sem += d; w[1] }
                _ => { bumped.l_res += d; w[2] }
            };
            let delta = total_loss(&bumped, &weights).unwrap() - total_loss(&b, &weights).unwrap();
            prop_assert!((delta - coeff * d).abs() < 1e-9);
            let unit = LossWeights::new(1.0, 1.0, 1.0).unwrap();
            prop_assert!((total_loss(&b, &unit).unwrap() - v.iter().sum::<f64>()).abs() < 1e-12);
        }
    }
}
