//! Sliding-window matching.
//!
//! Every fully contained placement of the template is scored; nothing is
//! padded. With a `w x h` template in a `W x H` image and stride `s` the
//! likelihood map has `(H - h) / s + 1` rows and `(W - w) / s + 1` columns,
//! and cell `(r, c)` holds the score of the window whose top-left pixel is
//! `(c * s, r * s)`.
//!
//! [`match_naive`] rebuilds the window point set and the full distance
//! matrix at every placement. [`match_cached`] produces bit-identical
//! scores while reusing distances between neighboring windows; see
//! [`cached`] for the scheme.

pub mod cached;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{
    bds_from_matrix, score_hm_chi2, score_ncc, score_sad, score_sign, score_ssd, BaselineKind,
};
use crate::bbs::{bbs_score, distance_matrix};
use crate::error::{BbsError, Result};
use crate::eval::BoundingBox;
use crate::features::{encode_pgm, normalize_per_window, FeatureGrid};
use crate::pointset::{build_point_set, Measure};

pub use cached::{match_cached, match_cached_with_stats, CacheStats, WindowTrace};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Naive,
    Cached,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MatcherConfig {
    /// Side of the square patches that become points.
    pub patch_size: usize,
    pub measure: Measure,
    /// Pixel step between window origins.
    pub stride: usize,
    pub algorithm: Algorithm,
    /// Normalize every channel of the template and of each window to zero
    /// mean and unit variance before building points.
    pub normalize_windows: bool,
    /// Worker threads; 0 and 1 both mean sequential.
    pub threads: usize,
}

impl MatcherConfig {
    /// Color features: `k x k` patches, squared distance with `lambda = 0.25`,
    /// stride `k`.
    pub fn color(k: usize) -> Self {
        MatcherConfig {
            patch_size: k,
            measure: Measure::color(Measure::DEFAULT_COLOR_LAMBDA),
            stride: k,
            algorithm: Algorithm::Cached,
            normalize_windows: false,
            threads: 1,
        }
    }

    /// Externally supplied feature maps: every cell is a point, inner-product
    /// similarity with `lambda = 1`, per-window normalization, stride 1.
    pub fn feature_grid() -> Self {
        MatcherConfig {
            patch_size: 1,
            measure: Measure::similarity(Measure::DEFAULT_SIMILARITY_LAMBDA),
            stride: 1,
            algorithm: Algorithm::Naive,
            normalize_windows: true,
            threads: 1,
        }
    }

    pub fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_measure(mut self, measure: Measure) -> Self {
        self.measure = measure;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(BbsError::Config("patch size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(BbsError::Config("stride must be at least 1".into()));
        }
        self.measure.validate()
    }
}

/// Placement geometry shared by all matchers.
#[derive(Copy, Clone, Debug)]
pub(crate) struct Geometry {
    pub template_w: usize,
    pub template_h: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

pub(crate) fn geometry(template: &FeatureGrid, image: &FeatureGrid, cfg: &MatcherConfig) -> Result<Geometry> {
    cfg.validate()?;
    if template.channels() != image.channels() {
        return Err(BbsError::Dimension(format!(
            "template has {} channels, image has {}",
            template.channels(),
            image.channels()
        )));
    }
    if template.width() > image.width() || template.height() > image.height() {
        return Err(BbsError::Dimension(format!(
            "template {}x{} does not fit in image {}x{}",
            template.width(),
            template.height(),
            image.width(),
            image.height()
        )));
    }
    if template.width() < cfg.patch_size || template.height() < cfg.patch_size {
        return Err(BbsError::Dimension(format!(
            "template {}x{} is smaller than the {} pixel patch",
            template.width(),
            template.height(),
            cfg.patch_size
        )));
    }
    Ok(Geometry {
        template_w: template.width(),
        template_h: template.height(),
        stride: cfg.stride,
        rows: (image.height() - template.height()) / cfg.stride + 1,
        cols: (image.width() - template.width()) / cfg.stride + 1,
    })
}

/// Per-placement scores; higher is always better.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
    pub window_width: usize,
    pub window_height: usize,
    pub stride: usize,
}

impl LikelihoodMap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.cols + col]
    }

    /// Top-left pixel of the window scored in cell `(row, col)`.
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (col * self.stride, row * self.stride)
    }

    /// Highest cell, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.scores.iter().enumerate() {
            if v > self.scores[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// The map as a single-channel grid, for BFM output.
    pub fn to_feature_grid(&self) -> Result<FeatureGrid> {
        FeatureGrid::new(self.rows, self.cols, 1, self.scores.clone())
    }

    /// Min-max scaled 8-bit PGM for viewing.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        encode_pgm(&self.scores, self.cols, self.rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    /// 1-based, in order of decreasing score.
    pub rank: usize,
}

/// Runs `score(row, col)` for every map cell, in parallel when asked.
pub(crate) fn score_all<F>(geo: &Geometry, threads: usize, score: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let cells = geo.rows * geo.cols;
    let eval = |idx: usize| score(idx / geo.cols, idx % geo.cols);
    if threads <= 1 {
        (0..cells).map(eval).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| BbsError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..cells).into_par_iter().map(eval).collect())
    }
}

fn prepare(grid: &FeatureGrid, cfg: &MatcherConfig) -> FeatureGrid {
    if cfg.normalize_windows {
        normalize_per_window(grid)
    } else {
        grid.clone()
    }
}

fn into_map(geo: &Geometry, scores: Vec<f64>) -> LikelihoodMap {
    LikelihoodMap {
        rows: geo.rows,
        cols: geo.cols,
        scores,
        window_width: geo.template_w,
        window_height: geo.template_h,
        stride: geo.stride,
    }
}

/// Reference matcher: full point sets and distance matrix per placement.
pub fn match_naive(template: &FeatureGrid, image: &FeatureGrid, cfg: &MatcherConfig) -> Result<LikelihoodMap> {
    let geo = geometry(template, image, cfg)?;
    let tpl_points = build_point_set(&prepare(template, cfg), cfg.patch_size)?;
    let scores = score_all(&geo, cfg.threads, |r, c| {
        let window = image.crop(c * geo.stride, r * geo.stride, geo.template_w, geo.template_h)?;
        let win_points = build_point_set(&prepare(&window, cfg), cfg.patch_size)?;
        let d = distance_matrix(&tpl_points, &win_points, &cfg.measure)?;
        Ok(bbs_score(&d))
    })?;
    Ok(into_map(&geo, scores))
}

/// BBS map with the algorithm selected in `cfg`.
pub fn match_template(template: &FeatureGrid, image: &FeatureGrid, cfg: &MatcherConfig) -> Result<LikelihoodMap> {
    match cfg.algorithm {
        Algorithm::Naive => match_naive(template, image, cfg),
        Algorithm::Cached => match_cached(template, image, cfg),
    }
}

/// Map of a baseline measure. Dissimilarities are negated so that higher is
/// better everywhere.
pub fn match_baseline(
    template: &FeatureGrid,
    image: &FeatureGrid,
    cfg: &MatcherConfig,
    baseline: BaselineKind,
) -> Result<LikelihoodMap> {
    baseline.validate()?;
    let geo = geometry(template, image, cfg)?;
    if matches!(baseline, BaselineKind::HmChi2 { .. }) && template.channels() != 3 {
        return Err(BbsError::Dimension(format!(
            "histogram matching needs 3 color channels, got {}",
            template.channels()
        )));
    }
    let sign = score_sign(baseline, &cfg.measure);
    let tpl = prepare(template, cfg);
    let tpl_points = match baseline {
        BaselineKind::Bds => Some(build_point_set(&tpl, cfg.patch_size)?),
        _ => None,
    };
    let scores = score_all(&geo, cfg.threads, |r, c| {
        let window = prepare(
            &image.crop(c * geo.stride, r * geo.stride, geo.template_w, geo.template_h)?,
            cfg,
        );
        let raw = match baseline {
            BaselineKind::Ssd => score_ssd(&tpl, &window)?,
            BaselineKind::Sad => score_sad(&tpl, &window)?,
            BaselineKind::Ncc => score_ncc(&tpl, &window)?,
            BaselineKind::HmChi2 { bins } => score_hm_chi2(&tpl, &window, bins)?,
            BaselineKind::Bds => {
                let q = build_point_set(&window, cfg.patch_size)?;
                let p = tpl_points.as_ref().expect("template points built for BDS");
                bds_from_matrix(&distance_matrix(p, &q, &cfg.measure)?)
            }
        };
        Ok(sign * raw)
    })?;
    Ok(into_map(&geo, scores))
}

/// Default suppression radius: half the window in each axis.
pub fn default_nms_radius(map: &LikelihoodMap) -> (usize, usize) {
    (map.window_width / 2, map.window_height / 2)
}

/// Greedy non-maximum suppression. Takes the highest remaining cell (first in
/// row-major order on ties), then removes every cell whose window origin is
/// within `nms_radius = (rx, ry)` pixels of it along both axes, until
/// `kmodes` results are collected or the map is exhausted.
pub fn top_modes(map: &LikelihoodMap, kmodes: usize, nms_radius: (usize, usize)) -> Vec<MatchResult> {
    let mut alive = vec![true; map.scores.len()];
    let mut out = Vec::with_capacity(kmodes);
    let (rx, ry) = nms_radius;
    while out.len() < kmodes {
        let mut best: Option<usize> = None;
        for (i, &v) in map.scores.iter().enumerate() {
            if alive[i] && best.is_none_or(|b| v > map.scores[b]) {
                best = Some(i);
            }
        }
        let Some(idx) = best else { break };
        let (r0, c0) = (idx / map.cols, idx % map.cols);
        let (x0, y0) = map.origin(r0, c0);
        out.push(MatchResult {
            bbox: BoundingBox::new(x0 as i64, y0 as i64, map.window_width as i64, map.window_height as i64),
            score: map.scores[idx],
            rank: out.len() + 1,
        });
        for r in 0..map.rows {
            for c in 0..map.cols {
                let (x, y) = map.origin(r, c);
                if x.abs_diff(x0) <= rx && y.abs_diff(y0) <= ry {
                    alive[r * map.cols + c] = false;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(rows: usize, cols: usize, scores: Vec<f64>) -> LikelihoodMap {
        LikelihoodMap {
            rows,
            cols,
            scores,
            window_width: 4,
            window_height: 4,
            stride: 1,
        }
    }

    #[test]
    fn geometry_counts_valid_placements() {
        let t = FeatureGrid::filled(4, 6, 3, 0.0).unwrap();
        let i = FeatureGrid::filled(10, 13, 3, 0.0).unwrap();
        let g = geometry(&t, &i, &MatcherConfig::color(2).with_stride(1)).unwrap();
        assert_eq!((g.rows, g.cols), (7, 8));
        let g = geometry(&t, &i, &MatcherConfig::color(2)).unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        assert!(geometry(&i, &t, &MatcherConfig::color(2)).is_err());
    }

    #[test]
    fn single_peak_fully_suppressed() {
        let m = map_from(3, 3, vec![0.1, 0.2, 0.1, 0.2, 0.9, 0.2, 0.1, 0.2, 0.1]);
        let modes = top_modes(&m, 3, (2, 2));
        assert_eq!(modes.len(), 1);
        assert_eq!((modes[0].bbox.x, modes[0].bbox.y), (1, 1));
    }

    #[test]
    fn equal_peaks_ranked_row_major() {
        let mut scores = vec![0.0; 36];
        scores[4 * 6 + 1] = 1.0;
        scores[6 + 5] = 1.0;
        let m = map_from(6, 6, scores);
        let modes = top_modes(&m, 2, (2, 2));
        assert_eq!(modes.len(), 2);
        assert_eq!((modes[0].bbox.x, modes[0].bbox.y), (5, 1));
        assert_eq!((modes[1].bbox.x, modes[1].bbox.y), (1, 4));
        assert_eq!((modes[0].rank, modes[1].rank), (1, 2));
    }

    #[test]
    fn naive_identity_is_one() {
        let g = FeatureGrid::from_fn(6, 6, 3, |y, x, c| ((y * 7 + x * 3 + c * 11) % 17) as f64 / 17.0).unwrap();
        let m = match_naive(&g, &g, &MatcherConfig::color(1)).unwrap();
        assert_eq!((m.rows, m.cols), (1, 1));
        assert_eq!(m.scores, vec![1.0]);
    }
}
