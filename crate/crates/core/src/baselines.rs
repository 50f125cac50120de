//! Reference window-scoring measures that BBS is compared against.

use std::fmt;
use std::str::FromStr;

use crate::bbs::{distance_matrix, DistanceMatrix};
use crate::error::{BbsError, Result};
use crate::features::FeatureGrid;
use crate::pointset::{Measure, PointSet, Polarity};

pub const DEFAULT_HM_BINS: usize = 8;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Ssd,
    Sad,
    Ncc,
    /// Joint color histogram compared with the χ² distance.
    HmChi2 { bins: usize },
    /// Bidirectional similarity in the same space as BBS.
    Bds,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Ssd => "ssd",
            BaselineKind::Sad => "sad",
            BaselineKind::Ncc => "ncc",
            BaselineKind::HmChi2 { .. } => "hm",
            BaselineKind::Bds => "bds",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::HmChi2 { bins } if bins < 2 => Err(BbsError::Config(format!(
                "histogram needs at least 2 bins per channel, got {bins}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = BbsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(BaselineKind::Ssd),
            "sad" => Ok(BaselineKind::Sad),
            "ncc" => Ok(BaselineKind::Ncc),
            "hm" | "hm-chi2" | "chi2" => Ok(BaselineKind::HmChi2 {
                bins: DEFAULT_HM_BINS,
            }),
            "bds" => Ok(BaselineKind::Bds),
            other => Err(BbsError::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

fn check_same_shape(t: &FeatureGrid, w: &FeatureGrid) -> Result<()> {
    if (t.height(), t.width(), t.channels()) != (w.height(), w.width(), w.channels()) {
        return Err(BbsError::Dimension(format!(
            "template {}x{}x{} and window {}x{}x{} differ",
            t.height(),
            t.width(),
            t.channels(),
            w.height(),
            w.width(),
            w.channels()
        )));
    }
    Ok(())
}

pub fn score_ssd(t: &FeatureGrid, w: &FeatureGrid) -> Result<f64> {
    check_same_shape(t, w)?;
    Ok(t.data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum())
}

pub fn score_sad(t: &FeatureGrid, w: &FeatureGrid) -> Result<f64> {
    check_same_shape(t, w)?;
    Ok(t.data().iter().zip(w.data()).map(|(a, b)| (a - b).abs()).sum())
}

/// Zero-mean, unit-norm correlation per channel, averaged over channels.
/// A channel that is constant in either input contributes 0.
pub fn score_ncc(t: &FeatureGrid, w: &FeatureGrid) -> Result<f64> {
    check_same_shape(t, w)?;
    let d = t.channels();
    let n = (t.height() * t.width()) as f64;
    let mut total = 0.0;
    for c in 0..d {
        let channel = |g: &FeatureGrid| g.data().iter().skip(c).step_by(d).copied().collect::<Vec<_>>();
        let (a, b) = (channel(t), channel(w));
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&b) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        let denom = (saa * sbb).sqrt();
        if denom > 0.0 {
            total += (sab / denom).clamp(-1.0, 1.0);
        }
    }
    Ok(total / d as f64)
}

/// Normalized joint `bins^3` histogram of a 3-channel grid with values in `[0, 1]`.
pub fn color_histogram(g: &FeatureGrid, bins: usize) -> Result<Vec<f64>> {
    if g.channels() != 3 {
        return Err(BbsError::Dimension(format!(
            "color histogram needs 3 channels, grid has {}",
            g.channels()
        )));
    }
    if bins < 2 {
        return Err(BbsError::Config(format!("need at least 2 bins, got {bins}")));
    }
    let mut hist = vec![0.0; bins * bins * bins];
    let bin = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    for px in g.data().chunks_exact(3) {
        hist[(bin(px[0]) * bins + bin(px[1])) * bins + bin(px[2])] += 1.0;
    }
    let n = (g.height() * g.width()) as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    Ok(hist)
}

/// `sum (a - b)^2 / (a + b)`, skipping bins empty in both.
pub fn chi2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| *x + *y > 0.0)
        .map(|(x, y)| {
            let d = x - y;
            d * d / (x + y)
        })
        .sum()
}

pub fn score_hm_chi2(t: &FeatureGrid, w: &FeatureGrid, bins: usize) -> Result<f64> {
    Ok(chi2_distance(&color_histogram(t, bins)?, &color_histogram(w, bins)?))
}

/// Mean best-row value plus mean best-column value of a distance matrix.
pub fn bds_from_matrix(d: &DistanceMatrix) -> f64 {
    let rows = d.row_best().iter().map(|e| e.value).sum::<f64>() / d.rows() as f64;
    let cols = d.col_best().iter().map(|e| e.value).sum::<f64>() / d.cols() as f64;
    rows + cols
}

/// Bidirectional similarity. A dissimilarity under distance measures and a
/// similarity under similarity measures (it follows the measure's polarity).
pub fn score_bds(p: &PointSet, q: &PointSet, m: &Measure) -> Result<f64> {
    Ok(bds_from_matrix(&distance_matrix(p, q, m)?))
}

/// Sign that turns a raw baseline value into a higher-is-better score.
pub fn score_sign(kind: BaselineKind, measure: &Measure) -> f64 {
    match kind {
        BaselineKind::Ncc => 1.0,
        BaselineKind::Bds if measure.polarity() == Polarity::Max => 1.0,
        _ => -1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(vals: &[f64], d: usize) -> FeatureGrid {
        FeatureGrid::new(1, vals.len() / d, d, vals.to_vec()).unwrap()
    }

    #[test]
    fn ssd_sad_counting() {
        let a = FeatureGrid::filled(2, 2, 1, 0.0).unwrap();
        let b = FeatureGrid::filled(2, 2, 1, 1.0).unwrap();
        assert_eq!(score_ssd(&a, &b).unwrap(), 4.0);
        assert_eq!(score_sad(&a, &b).unwrap(), 4.0);
        assert_eq!(score_ssd(&a, &a).unwrap(), 0.0);
        assert!(score_ssd(&a, &grid(&[0.0], 1)).is_err());
    }

    #[test]
    fn ncc_self_and_anti() {
        let t = grid(&[0.1, 0.5, 0.3, 0.9, 0.2, 0.4], 2);
        assert!((score_ncc(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let neg = FeatureGrid::new(1, 3, 2, t.data().iter().map(|v| 2.0 - v).collect()).unwrap();
        assert!((score_ncc(&t, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_constant_channel_contributes_zero() {
        let t = grid(&[0.5, 0.1, 0.5, 0.7], 2);
        assert!((score_ncc(&t, &t).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chi2_hand_values() {
        let v = chi2_distance(&[0.5, 0.5], &[0.25, 0.75]);
        assert!((v - (0.0625 / 0.75 + 0.0625 / 1.25)).abs() < 1e-15);
        assert_eq!(chi2_distance(&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5]), 2.0);
    }

    #[test]
    fn hm_identical_and_disjoint() {
        let a = grid(&[0.1, 0.1, 0.1, 0.9, 0.9, 0.9], 3);
        let b = grid(&[0.6, 0.1, 0.1, 0.6, 0.1, 0.1], 3);
        assert_eq!(score_hm_chi2(&a, &a, 8).unwrap(), 0.0);
        assert!((score_hm_chi2(&a, &b, 8).unwrap() - 2.0).abs() < 1e-15);
        assert!(score_hm_chi2(&grid(&[0.1, 0.2], 2), &grid(&[0.1, 0.2], 2), 8).is_err());
    }

    #[test]
    fn bds_hand_value() {
        let p = PointSet::from_appearance(1, vec![0.0]).unwrap();
        let q = PointSet::from_appearance(1, vec![1.0]).unwrap();
        assert_eq!(score_bds(&p, &q, &Measure::default()).unwrap(), 2.0);
        let r = PointSet::from_appearance(1, vec![0.0, 3.0]).unwrap();
        assert_eq!(score_bds(&r, &r, &Measure::default()).unwrap(), 0.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("NCC".parse::<BaselineKind>().unwrap(), BaselineKind::Ncc);
        assert_eq!("hm".parse::<BaselineKind>().unwrap(), BaselineKind::HmChi2 { bins: 8 });
        assert!("emd".parse::<BaselineKind>().is_err());
        assert!(BaselineKind::HmChi2 { bins: 1 }.validate().is_err());
    }
}
