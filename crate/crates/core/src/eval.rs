//! Accuracy evaluation against annotated template/target pairs.
//!
//! Accuracy of a detection is the intersection-over-union of the estimated
//! and ground-truth boxes. A success curve reports, for each threshold, the
//! fraction of pairs whose overlap exceeds it; mAP is its trapezoidal area.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{BbsError, Result};
use crate::features::{load_feature_grid, load_image, rgb_to_hsv, FeatureGrid};
use crate::matcher::{
    default_nms_radius, match_baseline, match_template, top_modes, Algorithm, LikelihoodMap, MatcherConfig,
};
use crate::pointset::Measure;

/// Closed integer pixel rectangle: top-left `(x, y)`, size `w x h`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BoundingBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 1 || self.h < 1 {
            return Err(BbsError::Format(format!(
                "box {self:?} must have positive width and height"
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    /// The box lies inside a `width x height` image.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x >= 0 && self.y >= 0 && self.x + self.w <= width as i64 && self.y + self.h <= height as i64
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// `{0, 0.01, ..., 1}`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessCurve {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Fraction of overlaps above each threshold. A perfect overlap of 1
/// counts as a success at every threshold, including 1 itself.
pub fn success_curve(overlaps: &[f64], thresholds: &[f64]) -> Result<SuccessCurve> {
    if overlaps.is_empty() || thresholds.is_empty() {
        return Err(BbsError::Format("success curve needs overlaps and thresholds".into()));
    }
    let n = overlaps.len() as f64;
    let rates = thresholds
        .iter()
        .map(|&th| overlaps.iter().filter(|&&o| o > th || o >= 1.0).count() as f64 / n)
        .collect();
    Ok(SuccessCurve {
        thresholds: thresholds.to_vec(),
        rates,
    })
}

/// Trapezoidal area under the success curve.
pub fn map_score(curve: &SuccessCurve) -> f64 {
    curve
        .thresholds
        .windows(2)
        .zip(curve.rates.windows(2))
        .map(|(t, r)| (t[1] - t[0]) * (r[0] + r[1]) / 2.0)
        .sum()
}

/// One annotated template/target pair; image paths are resolved relative to
/// the annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub id: String,
    pub template_image: PathBuf,
    pub target_image: PathBuf,
    pub template_box: BoundingBox,
    pub gt_box: BoundingBox,
}

/// Reads JSON Lines annotations. Blank lines are skipped.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<PairAnnotation>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| BbsError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut ann: PairAnnotation = serde_json::from_str(line).map_err(|e| {
            BbsError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        ann.template_box.validate()?;
        ann.gt_box.validate()?;
        if ann.template_image.is_relative() {
            ann.template_image = base.join(&ann.template_image);
        }
        if ann.target_image.is_relative() {
            ann.target_image = base.join(&ann.target_image);
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, annotations: &[PairAnnotation]) -> Result<()> {
    let mut text = String::new();
    for a in annotations {
        text.push_str(&serde_json::to_string(a).map_err(|e| BbsError::Format(e.to_string()))?);
        text.push('\n');
    }
    crate::features::write_atomic(path, text.as_bytes())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Method {
    Bbs,
    Baseline(BaselineKind),
}

impl Method {
    pub const NAMES: [&'static str; 6] = ["bbs", "ssd", "sad", "ncc", "hm", "bds"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Bbs => "bbs",
            Method::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BbsError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("bbs") {
            return Ok(Method::Bbs);
        }
        s.parse::<BaselineKind>().map(Method::Baseline).map_err(|_| {
            BbsError::Config(format!(
                "unknown method {s:?}; valid methods: {}",
                Method::NAMES.join(", ")
            ))
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Hsv,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub matcher: MatcherConfig,
    pub color_space: ColorSpace,
    pub kmodes: usize,
    /// Suppression radius in pixels; defaults to half the template.
    pub nms_radius: Option<(usize, usize)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            matcher: MatcherConfig::color(3),
            color_space: ColorSpace::Hsv,
            kmodes: 3,
            nms_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairOutcome {
    pub id: String,
    pub method: String,
    pub rank1_overlap: f64,
    pub best_overlap: f64,
    /// Boxes of the returned modes, best first.
    pub detections: Vec<BoundingBox>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub pairs: usize,
    pub failures: usize,
    /// mAP using only the global maximum.
    pub map_top1: f64,
    /// mAP using the best of the top `kmodes` modes.
    pub map_best_of_k: f64,
    pub curve_top1: SuccessCurve,
    pub curve_best_of_k: SuccessCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub kmodes: usize,
    pub outcomes: Vec<PairOutcome>,
    pub summaries: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// `id,method,rank1_overlap,best_of_k_overlap,error`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| BbsError::Format(e.to_string());
        wr.write_record(["id", "method", "rank1_overlap", "best_of_k_overlap", "error"])
            .map_err(csv_err)?;
        for o in &self.outcomes {
            wr.write_record([
                o.id.as_str(),
                o.method.as_str(),
                &format!("{:.6}", o.rank1_overlap),
                &format!("{:.6}", o.best_overlap),
                o.error.as_deref().unwrap_or(""),
            ])
            .map_err(csv_err)?;
        }
        wr.flush().map_err(|e| BbsError::Format(e.to_string()))
    }

    /// Per-method mAP values as JSON.
    pub fn summary_json(&self) -> serde_json::Value {
        let methods: serde_json::Map<String, serde_json::Value> = self
            .summaries
            .iter()
            .map(|s| {
                (
                    s.method.clone(),
                    serde_json::json!({
                        "pairs": s.pairs,
                        "failures": s.failures,
                        "map_top1": s.map_top1,
                        "map_best_of_k": s.map_best_of_k,
                    }),
                )
            })
            .collect();
        serde_json::json!({ "kmodes": self.kmodes, "methods": methods })
    }
}

/// Loads a PPM (converted to `space`) or a BFM feature grid, chosen by extension.
pub fn load_any(path: &Path, space: ColorSpace) -> Result<FeatureGrid> {
    let is_bfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("bfm"));
    if is_bfm {
        return load_feature_grid(path);
    }
    let rgb = load_image(path)?;
    match space {
        ColorSpace::Rgb => Ok(rgb),
        ColorSpace::Hsv => rgb_to_hsv(&rgb),
    }
}

/// Likelihood map of `method` for one template/target pair.
pub fn method_map(
    method: Method,
    template: &FeatureGrid,
    target: &FeatureGrid,
    cfg: &MatcherConfig,
) -> Result<LikelihoodMap> {
    match method {
        Method::Bbs => match_template(template, target, cfg),
        Method::Baseline(kind) => match_baseline(template, target, cfg, kind),
    }
}

struct LoadedPair {
    template: FeatureGrid,
    target: FeatureGrid,
}

fn load_pair(ann: &PairAnnotation, cfg: &EvalConfig, cache: &mut HashMap<PathBuf, FeatureGrid>) -> Result<LoadedPair> {
    let mut get = |p: &Path| -> Result<FeatureGrid> {
        if let Some(g) = cache.get(p) {
            return Ok(g.clone());
        }
        let g = load_any(p, cfg.color_space)?;
        cache.insert(p.to_path_buf(), g.clone());
        Ok(g)
    };
    let source = get(&ann.template_image)?;
    let target = get(&ann.target_image)?;
    let tb = ann.template_box;
    if !tb.fits(source.width(), source.height()) {
        return Err(BbsError::Dimension(format!(
            "template box {tb:?} outside {}x{} image",
            source.width(),
            source.height()
        )));
    }
    let template = source.crop(tb.x as usize, tb.y as usize, tb.w as usize, tb.h as usize)?;
    Ok(LoadedPair { template, target })
}

fn evaluate_loaded(pair: &LoadedPair, ann: &PairAnnotation, method: Method, cfg: &EvalConfig) -> Result<(f64, f64, Vec<BoundingBox>)> {
    let mut mcfg = cfg.matcher;
    if mcfg.normalize_windows {
        // window-dependent features rule out the cached scheme
        mcfg.algorithm = Algorithm::Naive;
    }
    let map = method_map(method, &pair.template, &pair.target, &mcfg)?;
    let radius = cfg.nms_radius.unwrap_or_else(|| default_nms_radius(&map));
    let modes = top_modes(&map, cfg.kmodes.max(1), radius);
    let overlaps: Vec<f64> = modes.iter().map(|m| overlap(&m.bbox, &ann.gt_box)).collect();
    let rank1 = overlaps.first().copied().unwrap_or(0.0);
    let best = overlaps.iter().copied().fold(0.0, f64::max);
    Ok((rank1, best, modes.into_iter().map(|m| m.bbox).collect()))
}

/// Scores every method on every pair. Pairs that fail to load or match are
/// recorded with overlap 0 and an error message; they do not abort the run.
pub fn evaluate_pairs(annotations: &[PairAnnotation], methods: &[Method], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.kmodes == 0 {
        return Err(BbsError::Config("kmodes must be at least 1".into()));
    }
    let mut cache = HashMap::new();
    let mut outcomes = Vec::new();
    for ann in annotations {
        let loaded = load_pair(ann, cfg, &mut cache);
        for &method in methods {
            let result = loaded
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|pair| evaluate_loaded(pair, ann, method, cfg).map_err(|e| e.to_string()));
            outcomes.push(match result {
                Ok((rank1, best, detections)) => PairOutcome {
                    id: ann.id.clone(),
                    method: method.name().to_string(),
                    rank1_overlap: rank1,
                    best_overlap: best,
                    detections,
                    error: None,
                },
                Err(e) => PairOutcome {
                    id: ann.id.clone(),
                    method: method.name().to_string(),
                    rank1_overlap: 0.0,
                    best_overlap: 0.0,
                    detections: Vec::new(),
                    error: Some(e),
                },
            });
        }
    }
    let thresholds = threshold_grid();
    let mut summaries = Vec::new();
    for &method in methods {
        let mine: Vec<&PairOutcome> = outcomes.iter().filter(|o| o.method == method.name()).collect();
        if mine.is_empty() {
            continue;
        }
        let top1: Vec<f64> = mine.iter().map(|o| o.rank1_overlap).collect();
        let best: Vec<f64> = mine.iter().map(|o| o.best_overlap).collect();
        let curve_top1 = success_curve(&top1, &thresholds)?;
        let curve_best = success_curve(&best, &thresholds)?;
        summaries.push(MethodSummary {
            method: method.name().to_string(),
            pairs: mine.len(),
            failures: mine.iter().filter(|o| o.error.is_some()).count(),
            map_top1: map_score(&curve_top1),
            map_best_of_k: map_score(&curve_best),
            curve_top1,
            curve_best_of_k: curve_best,
        });
    }
    Ok(EvalReport {
        kmodes: cfg.kmodes,
        outcomes,
        summaries,
    })
}

/// Matcher settings for a named feature mode: `color-rgb`, `color-hsv` or `feature-grid`.
pub fn mode_config(mode: &str, k: Option<usize>, lambda: Option<f64>) -> Result<(MatcherConfig, ColorSpace)> {
    let (mut cfg, space) = match mode {
        "color-rgb" => (MatcherConfig::color(3), ColorSpace::Rgb),
        "color-hsv" => (MatcherConfig::color(3), ColorSpace::Hsv),
        "feature-grid" => (MatcherConfig::feature_grid(), ColorSpace::Rgb),
        other => {
            return Err(BbsError::Config(format!(
                "unknown measure {other:?}; valid: color-hsv, color-rgb, feature-grid"
            )))
        }
    };
    if let Some(k) = k {
        cfg.patch_size = k;
        if mode != "feature-grid" {
            cfg.stride = k;
        }
    }
    if let Some(l) = lambda {
        cfg.measure = Measure { lambda: l, ..cfg.measure };
    }
    cfg.validate()?;
    Ok((cfg, space))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_examples() {
        let a = BoundingBox::new(0, 0, 10, 10);
        assert_eq!(overlap(&a, &a), 1.0);
        assert_eq!(overlap(&a, &BoundingBox::new(20, 20, 5, 5)), 0.0);
        assert_eq!(overlap(&a, &BoundingBox::new(10, 0, 5, 5)), 0.0);
        assert!((overlap(&a, &BoundingBox::new(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn curve_examples() {
        let c = success_curve(&[0.2, 0.6], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(c.rates, vec![1.0, 0.5, 0.0]);
        let grid = threshold_grid();
        let ones = success_curve(&[1.0, 1.0], &grid).unwrap();
        assert!(ones.rates.iter().all(|&r| r == 1.0));
        assert!((map_score(&ones) - 1.0).abs() < 1e-12);
        let zeros = success_curve(&[0.0; 3], &grid).unwrap();
        assert_eq!(map_score(&zeros), 0.0);
        assert!(success_curve(&[], &grid).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("bbs".parse::<Method>().unwrap(), Method::Bbs);
        assert_eq!("ssd".parse::<Method>().unwrap(), Method::Baseline(BaselineKind::Ssd));
        let err = "emd".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("bbs, ssd, sad, ncc, hm, bds"));
    }

    #[test]
    fn annotation_line_parses() {
        let line = r#"{"id":"a","template_image":"t.ppm","target_image":"s.ppm","template_box":{"x":1,"y":2,"w":3,"h":4},"gt_box":{"x":0,"y":0,"w":3,"h":4}}"#;
        let a: PairAnnotation = serde_json::from_str(line).unwrap();
        assert_eq!(a.template_box, BoundingBox::new(1, 2, 3, 4));
    }
}
