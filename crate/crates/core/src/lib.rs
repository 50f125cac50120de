//! Best-Buddies Similarity (BBS) template matching.
//!
//! BBS scores two point sets by counting pairs that are mutual nearest
//! neighbors and dividing by the smaller set size. Template and candidate
//! windows are turned into point sets in a joint location-appearance space
//! and scored at every valid placement.
//!
//! Crate layout:
//! - [`features`]: feature grids, PPM/BFM I/O, HSV conversion, per-window normalization.
//! - [`pointset`]: points, point sets and the two point-wise measures.
//! - [`bbs`]: distance matrices, best-buddy pairs, the BBS score.
//! - [`matcher`]: naive and cached sliding-window matching, baselines, NMS.
//! - [`baselines`]: SSD, SAD, NCC, χ² histogram matching and bidirectional similarity.
//! - [`statsim`]: Monte-Carlo and quadrature checks of the expectation and χ² results.
//! - [`experiments`]: named simulation runs written as CSV tables.
//! - [`eval`]: box overlap, success curves, mAP and annotated-pair evaluation.
//! - [`synth`]: deterministic synthetic fixtures.

pub mod baselines;
pub mod bbs;
mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod matcher;
pub mod pointset;
pub mod statsim;
pub mod synth;

pub use baselines::BaselineKind;
pub use bbs::{bbs_score, best_buddies, distance_matrix, BbpList, DistanceMatrix, Extremum};
pub use error::{BbsError, Result};
pub use eval::{overlap, BoundingBox};
pub use features::FeatureGrid;
pub use matcher::{
    match_baseline, match_cached, match_naive, top_modes, Algorithm, LikelihoodMap, MatchResult,
    MatcherConfig,
};
pub use pointset::{build_point_set, pointwise_distance, Measure, MeasureKind, Point, PointSet, Polarity};
