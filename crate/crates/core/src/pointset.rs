//! Points in the joint location-appearance space and the point-wise measures.

use crate::error::{BbsError, Result};
use crate::features::FeatureGrid;

/// Which extreme of a measure means "closest".
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Polarity {
    /// Smaller values are closer (distances).
    Min,
    /// Larger values are closer (similarities).
    Max,
}

impl Polarity {
    /// True when `candidate` is strictly closer than `current`.
    #[inline]
    pub fn better(self, candidate: f64, current: f64) -> bool {
        match self {
            Polarity::Min => candidate < current,
            Polarity::Max => candidate > current,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MeasureKind {
    /// `|a_p - a_q|^2 + lambda * |l_p - l_q|^2`, minimized.
    ColorSquaredDistance,
    /// `<a_p, a_q> + exp(-lambda * |l_p - l_q|^2)`, maximized.
    SimilarityInnerProduct,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Measure {
    pub kind: MeasureKind,
    pub lambda: f64,
}

impl Default for Measure {
    fn default() -> Self {
        Measure::color(0.25)
    }
}

impl Measure {
    pub const DEFAULT_COLOR_LAMBDA: f64 = 0.25;
    pub const DEFAULT_SIMILARITY_LAMBDA: f64 = 1.0;

    pub fn color(lambda: f64) -> Self {
        Measure {
            kind: MeasureKind::ColorSquaredDistance,
            lambda,
        }
    }

    pub fn similarity(lambda: f64) -> Self {
        Measure {
            kind: MeasureKind::SimilarityInnerProduct,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(BbsError::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn polarity(&self) -> Polarity {
        match self.kind {
            MeasureKind::ColorSquaredDistance => Polarity::Min,
            MeasureKind::SimilarityInnerProduct => Polarity::Max,
        }
    }

    /// Appearance half of the measure.
    #[inline]
    pub fn appearance_term(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            MeasureKind::ColorSquaredDistance => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x - y;
                    d * d
                })
                .sum(),
            MeasureKind::SimilarityInnerProduct => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// Location half of the measure, as a function of the squared location distance.
    #[inline]
    pub fn location_term(&self, squared_location_distance: f64) -> f64 {
        match self.kind {
            MeasureKind::ColorSquaredDistance => self.lambda * squared_location_distance,
            MeasureKind::SimilarityInnerProduct => (-self.lambda * squared_location_distance).exp(),
        }
    }

    /// Every evaluation of the measure goes through this sum so cached and
    /// from-scratch paths produce identical bits.
    #[inline]
    pub fn combine(appearance: f64, location: f64) -> f64 {
        appearance + location
    }

    /// The location term does not vary with point positions.
    pub fn location_is_constant(&self) -> bool {
        self.lambda == 0.0
    }
}

#[inline]
pub fn squared_location_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Borrowed view of one point of a [`PointSet`].
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Point<'a> {
    /// Normalized `(x, y)` position within the window.
    pub location: [f64; 2],
    pub appearance: &'a [f64],
}

pub fn pointwise_distance(p: &Point<'_>, q: &Point<'_>, m: &Measure) -> Result<f64> {
    if p.appearance.len() != q.appearance.len() {
        return Err(BbsError::Dimension(format!(
            "appearance dimensions differ: {} vs {}",
            p.appearance.len(),
            q.appearance.len()
        )));
    }
    Ok(Measure::combine(
        m.appearance_term(p.appearance, q.appearance),
        m.location_term(squared_location_distance(p.location, q.location)),
    ))
}

/// Ordered, non-empty collection of points sharing one appearance dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    locations: Vec<[f64; 2]>,
    appearance: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, locations: Vec<[f64; 2]>, appearance: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(BbsError::Dimension("point set must be non-empty".into()));
        }
        if dim == 0 || appearance.len() != dim * locations.len() {
            return Err(BbsError::Dimension(format!(
                "{} points of dimension {dim} need {} appearance values, got {}",
                locations.len(),
                dim * locations.len(),
                appearance.len()
            )));
        }
        Ok(Self {
            dim,
            locations,
            appearance,
        })
    }

    /// Points with the given appearance vectors, all at the same location.
    pub fn from_appearance(dim: usize, appearance: Vec<f64>) -> Result<Self> {
        let n = appearance.len().checked_div(dim).unwrap_or(0);
        Self::new(dim, vec![[0.5, 0.5]; n], appearance)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point<'_> {
        Point {
            location: self.locations[i],
            appearance: self.appearance(i),
        }
    }

    #[inline]
    pub fn appearance(&self, i: usize) -> &[f64] {
        &self.appearance[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn location(&self, i: usize) -> [f64; 2] {
        self.locations[i]
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }

    /// Appearance vectors in point order.
    pub fn appearances(&self) -> std::slice::ChunksExact<'_, f64> {
        self.appearance.chunks_exact(self.dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = Point<'_>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }
}

/// Number of whole `k x k` patches along each axis of a `width x height` grid.
pub fn patch_grid_dims(width: usize, height: usize, k: usize) -> (usize, usize) {
    (width / k, height / k)
}

/// Normalized center of patch `(px, py)` in a `width x height` window.
#[inline]
pub fn patch_center(px: usize, py: usize, k: usize, width: usize, height: usize) -> [f64; 2] {
    let half = k as f64 / 2.0;
    [
        ((px * k) as f64 + half) / width as f64,
        ((py * k) as f64 + half) / height as f64,
    ]
}

/// Appends the `d * k * k` values of the patch with top-left cell `(x0, y0)`,
/// row-major over the patch and channel-interleaved.
#[inline]
pub(crate) fn push_patch(grid: &FeatureGrid, x0: usize, y0: usize, k: usize, out: &mut Vec<f64>) {
    let d = grid.channels();
    let row_len = grid.width() * d;
    let data = grid.data();
    for y in y0..y0 + k {
        let start = y * row_len + x0 * d;
        out.extend_from_slice(&data[start..start + k * d]);
    }
}

/// One point per non-overlapping `k x k` patch, row-major. Grids whose sides
/// are not multiples of `k` are truncated to whole patches; locations are
/// normalized by the full grid size.
pub fn build_point_set(grid: &FeatureGrid, k: usize) -> Result<PointSet> {
    if k == 0 {
        return Err(BbsError::Dimension("patch size must be positive".into()));
    }
    if grid.height() < k || grid.width() < k {
        return Err(BbsError::Dimension(format!(
            "{}x{} grid is smaller than the {k}x{k} patch",
            grid.width(),
            grid.height()
        )));
    }
    let (pw, ph) = patch_grid_dims(grid.width(), grid.height(), k);
    let dim = grid.channels() * k * k;
    let mut locations = Vec::with_capacity(pw * ph);
    let mut appearance = Vec::with_capacity(pw * ph * dim);
    for py in 0..ph {
        for px in 0..pw {
            locations.push(patch_center(px, py, k, grid.width(), grid.height()));
            push_patch(grid, px * k, py * k, k, &mut appearance);
        }
    }
    PointSet::new(dim, locations, appearance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_truncation() {
        let g = FeatureGrid::filled(4, 4, 3, 0.1).unwrap();
        let p = build_point_set(&g, 2).unwrap();
        assert_eq!((p.len(), p.dim()), (4, 12));
        let g = FeatureGrid::filled(5, 5, 3, 0.1).unwrap();
        assert_eq!(build_point_set(&g, 2).unwrap().len(), 4);
    }

    #[test]
    fn center_point_of_three_by_three() {
        let g = FeatureGrid::new(3, 3, 1, (0..9).map(f64::from).collect()).unwrap();
        let p = build_point_set(&g, 1).unwrap();
        assert_eq!(p.len(), 9);
        let c = p.point(4);
        assert_eq!(c.appearance, &[4.0]);
        assert_eq!(c.location, [0.5, 0.5]);
        assert_eq!(p.point(0).location, [1.0 / 6.0, 1.0 / 6.0]);
    }

    #[test]
    fn patch_appearance_layout() {
        let g = FeatureGrid::from_fn(2, 2, 2, |y, x, c| (y * 4 + x * 2 + c) as f64).unwrap();
        let p = build_point_set(&g, 2).unwrap();
        assert_eq!(p.appearance(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(p.location(0), [0.5, 0.5]);
    }

    #[test]
    fn grid_smaller_than_patch() {
        let g = FeatureGrid::filled(1, 3, 3, 0.0).unwrap();
        assert!(matches!(build_point_set(&g, 2), Err(BbsError::Dimension(_))));
    }

    #[test]
    fn color_distance_examples() {
        let m = Measure::color(0.25);
        let p = Point { location: [0.2, 0.3], appearance: &[1.0, 0.0] };
        let q = Point { location: [0.2, 0.3], appearance: &[0.0, 1.0] };
        assert_eq!(pointwise_distance(&p, &p, &m).unwrap(), 0.0);
        assert_eq!(pointwise_distance(&p, &q, &m).unwrap(), 2.0);
        let r = Point { location: [0.0, 0.3], appearance: &[0.0, 1.0] };
        assert!((pointwise_distance(&q, &r, &m).unwrap() - 0.25 * 0.04).abs() < 1e-15);
    }

    #[test]
    fn similarity_self() {
        let m = Measure::similarity(1.0);
        let a = [0.6, 0.8];
        let p = Point { location: [0.4, 0.9], appearance: &a };
        assert!((pointwise_distance(&p, &p, &m).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(m.polarity(), Polarity::Max);
    }

    #[test]
    fn dimension_mismatch() {
        let p = Point { location: [0.0, 0.0], appearance: &[1.0] };
        let q = Point { location: [0.0, 0.0], appearance: &[1.0, 2.0] };
        assert!(pointwise_distance(&p, &q, &Measure::default()).is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(Measure::color(-0.1).validate().is_err());
        assert!(Measure::color(0.0).validate().is_ok());
    }
}
