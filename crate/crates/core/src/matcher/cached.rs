//! Incremental BBS over all placements.
//!
//! Windows are visited column by column: a *stripe* is the set of windows
//! sharing one horizontal origin, traversed top to bottom. The image is
//! viewed as a lattice of `k x k` patch points; two windows whose origins
//! differ by a multiple of `k` share lattice points, and therefore share
//! appearance terms with every template point.
//!
//! Appearance terms are cached per lattice column. A stripe keeps the
//! columns it inherits from the stripe to its left, so once the cache is
//! warm each new window adds a single lattice point, i.e. one fresh column
//! of the distance matrix (`l` appearance evaluations).
//!
//! When the location weight is zero the matrix entries of a surviving point
//! do not change as the window moves. In that case the row and column
//! extrema are maintained incrementally as well: column extrema are stored
//! per lattice point, and a row extremum is recomputed from scratch only
//! when the point holding it leaves the window. With a non-zero location
//! weight every entry depends on the point's position inside the window, so
//! extrema are rescanned over the assembled matrix (one add per entry,
//! independent of the feature dimension).
//!
//! Every entry is evaluated with the same expressions as the naive matcher,
//! so the resulting scores are bit-identical.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::bbs::score_from_count;
use crate::error::{BbsError, Result};
use crate::features::FeatureGrid;
use crate::pointset::{
    build_point_set, patch_grid_dims, push_patch, squared_location_distance, Measure, PointSet, Polarity,
};

use super::{geometry, LikelihoodMap, MatcherConfig};

/// Counters collected by [`match_cached_with_stats`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CacheStats {
    pub windows: usize,
    /// Windows whose extrema were computed without any cached state.
    pub cold_windows: usize,
    /// Appearance terms evaluated (one per template point per new lattice point).
    pub fresh_entries: usize,
    /// Template points per window, i.e. the length of one matrix column.
    pub column_len: usize,
    /// Whether incremental extremum maintenance was active.
    pub repair_active: bool,
    /// Rows whose extremum had to be recomputed over the whole window.
    pub row_rescans: usize,
    /// Matrix columns evicted by warm window advances.
    pub evicted_columns: usize,
    /// Warm window advances (windows that reused row extrema).
    pub warm_windows: usize,
    pub trace: Vec<WindowTrace>,
}

impl CacheStats {
    /// Mean full row rescans per evicted matrix column.
    pub fn rescans_per_evicted_column(&self) -> f64 {
        self.row_rescans as f64 / self.evicted_columns.max(1) as f64
    }

    /// Mean full row rescans per warm window advance.
    pub fn rescans_per_warm_window(&self) -> f64 {
        self.row_rescans as f64 / self.warm_windows.max(1) as f64
    }

    fn absorb(&mut self, other: CacheStats) {
        self.windows += other.windows;
        self.cold_windows += other.cold_windows;
        self.fresh_entries += other.fresh_entries;
        self.row_rescans += other.row_rescans;
        self.evicted_columns += other.evicted_columns;
        self.warm_windows += other.warm_windows;
        self.trace.extend(other.trace);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowTrace {
    pub row: usize,
    pub col: usize,
    /// 0 for the first window of its stripe.
    pub position_in_stripe: usize,
    /// The stripe inherited cached columns from the stripe to its left.
    pub warm_stripe: bool,
    pub fresh_entries: usize,
    pub row_rescans: usize,
}

/// Same scores as [`super::match_naive`], computed incrementally.
pub fn match_cached(template: &FeatureGrid, image: &FeatureGrid, cfg: &MatcherConfig) -> Result<LikelihoodMap> {
    match_cached_with_stats(template, image, cfg).map(|(map, _)| map)
}

/// Scored cells `(row, col, score)` of one task plus its counters.
type TaskOutput = (Vec<(usize, usize, f64)>, CacheStats);

struct Task {
    rx: usize,
    ry: usize,
    /// `(map column, lattice x)` of each stripe, ascending.
    stripes: Vec<(usize, usize)>,
    /// `(map row, lattice y)` of each window in a stripe, ascending.
    rows: Vec<(usize, usize)>,
}

pub fn match_cached_with_stats(
    template: &FeatureGrid,
    image: &FeatureGrid,
    cfg: &MatcherConfig,
) -> Result<(LikelihoodMap, CacheStats)> {
    let geo = geometry(template, image, cfg)?;
    if cfg.normalize_windows {
        return Err(BbsError::Config(
            "per-window normalization makes distances window-dependent; the cached matcher cannot reuse them".into(),
        ));
    }
    let k = cfg.patch_size;
    let tpl = build_point_set(template, k)?;
    let (tpw, tph) = patch_grid_dims(template.width(), template.height(), k);
    let nt = tpl.len();

    // location term between template point i and window slot j, stored in
    // the (i, jx, jy) order the scan visits
    let mut loc_cm = vec![0.0; nt * nt];
    for i in 0..nt {
        for jx in 0..tpw {
            for jy in 0..tph {
                let j = jy * tpw + jx;
                loc_cm[(i * tpw + jx) * tph + jy] =
                    cfg.measure.location_term(squared_location_distance(tpl.location(i), tpl.location(j)));
            }
        }
    }

    // windows whose origins agree modulo k share one patch lattice
    let mut xs: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for c in 0..geo.cols {
        let ox = c * geo.stride;
        xs.entry(ox % k).or_default().push((c, ox / k));
    }
    let mut ys: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for r in 0..geo.rows {
        let oy = r * geo.stride;
        ys.entry(oy % k).or_default().push((r, oy / k));
    }
    let chunks = cfg.threads.max(1);
    let mut tasks = Vec::new();
    for (&rx, stripes) in &xs {
        for (&ry, rows) in &ys {
            let per_chunk = stripes.len().div_ceil(chunks);
            for part in stripes.chunks(per_chunk) {
                tasks.push(Task {
                    rx,
                    ry,
                    stripes: part.to_vec(),
                    rows: rows.clone(),
                });
            }
        }
    }

    let shared = Shared {
        image,
        k,
        measure: cfg.measure,
        tpl: &tpl,
        tpw,
        tph,
        loc_cm: &loc_cm,
        repair: cfg.measure.location_is_constant(),
    };
    let run = |task: &Task| Engine::new(&shared, task.rx, task.ry).run(task);
    let outputs: Vec<TaskOutput> = if chunks <= 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(chunks)
            .build()
            .map_err(|e| BbsError::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    };

    let mut scores = vec![f64::NAN; geo.rows * geo.cols];
    let mut stats = CacheStats {
        column_len: nt,
        repair_active: shared.repair,
        ..CacheStats::default()
    };
    for (cells, s) in outputs {
        for (r, c, v) in cells {
            scores[r * geo.cols + c] = v;
        }
        stats.absorb(s);
    }
    debug_assert!(scores.iter().all(|v| v.is_finite()));
    let map = LikelihoodMap {
        rows: geo.rows,
        cols: geo.cols,
        scores,
        window_width: geo.template_w,
        window_height: geo.template_h,
        stride: geo.stride,
    };
    Ok((map, stats))
}

struct Shared<'a> {
    image: &'a FeatureGrid,
    k: usize,
    measure: Measure,
    tpl: &'a PointSet,
    tpw: usize,
    tph: usize,
    loc_cm: &'a [f64],
    repair: bool,
}

/// Appearance terms of every template point against one lattice column.
struct Column {
    /// `values[i * lattice_h + gy]`
    values: Vec<f64>,
    computed: Vec<bool>,
    /// Closest template point of each lattice point (incremental mode only).
    col_best: Vec<usize>,
}

#[derive(Copy, Clone)]
struct RowBest {
    value: f64,
    gx: usize,
    gy: usize,
}

struct Engine<'s, 'a> {
    sh: &'s Shared<'a>,
    nt: usize,
    rx: usize,
    ry: usize,
    lattice_h: usize,
    /// Constant location term, used when `sh.repair` holds.
    loc_const: f64,
    columns: Vec<Option<Column>>,
    patch: Vec<f64>,
    fresh: usize,
    stats: CacheStats,
    // scratch for the rescanning path
    row_bj: Vec<usize>,
    /// Column-best template indices, stored as `f64` for branch-free selects.
    col_bi: Vec<f64>,
    col_bv: Vec<f64>,
    scratch: Vec<f64>,
    /// Use the AVX2 row kernels.
    wide: bool,
    // state for the incremental path
    row_best: Vec<RowBest>,
}

impl<'s, 'a> Engine<'s, 'a> {
    fn new(sh: &'s Shared<'a>, rx: usize, ry: usize) -> Self {
        let nt = sh.tpl.len();
        let lattice_w = (sh.image.width() - rx) / sh.k;
        let lattice_h = (sh.image.height() - ry) / sh.k;
        Engine {
            sh,
            nt,
            rx,
            ry,
            lattice_h,
            loc_const: sh.loc_cm[0],
            columns: (0..lattice_w).map(|_| None).collect(),
            patch: Vec::with_capacity(sh.tpl.dim()),
            fresh: 0,
            stats: CacheStats::default(),
            row_bj: vec![0; nt],
            col_bi: vec![0.0; nt],
            col_bv: vec![0.0; nt],
            scratch: vec![0.0; nt],
            wide: wide_kernels(),
            row_best: vec![RowBest { value: 0.0, gx: 0, gy: 0 }; nt],
        }
    }

    fn run(mut self, task: &Task) -> (Vec<(usize, usize, f64)>, CacheStats) {
        let mut out = Vec::with_capacity(task.stripes.len() * task.rows.len());
        let mut prev_ax: Option<usize> = None;
        for &(col, ax) in &task.stripes {
            // drop columns left behind
            for gx in prev_ax.unwrap_or(0)..ax {
                self.columns[gx] = None;
            }
            let warm_stripe = prev_ax.is_some_and(|p| ax < p + self.sh.tpw);
            let mut prev_ay: Option<usize> = None;
            for (pos, &(row, ay)) in task.rows.iter().enumerate() {
                self.fresh = 0;
                self.ensure_window(ax, ay);
                let rescans_before = self.stats.row_rescans;
                let count = if self.sh.repair {
                    self.incremental_window(ax, ay, prev_ay)
                } else {
                    self.stats.cold_windows += 1;
                    match self.sh.measure.polarity() {
                        Polarity::Min => self.scan_window::<false>(ax, ay),
                        Polarity::Max => self.scan_window::<true>(ax, ay),
                    }
                };
                self.stats.windows += 1;
                self.stats.fresh_entries += self.fresh;
                self.stats.trace.push(WindowTrace {
                    row,
                    col,
                    position_in_stripe: pos,
                    warm_stripe,
                    fresh_entries: self.fresh,
                    row_rescans: self.stats.row_rescans - rescans_before,
                });
                out.push((row, col, score_from_count(count, self.nt, self.nt)));
                prev_ay = Some(ay);
            }
            prev_ax = Some(ax);
        }
        (out, self.stats)
    }

    fn ensure_window(&mut self, ax: usize, ay: usize) {
        for gx in ax..ax + self.sh.tpw {
            for gy in ay..ay + self.sh.tph {
                let done = self.columns[gx].as_ref().is_some_and(|c| c.computed[gy]);
                if !done {
                    self.compute_point(gx, gy);
                }
            }
        }
    }

    fn compute_point(&mut self, gx: usize, gy: usize) {
        let (nt, lh, repair) = (self.nt, self.lattice_h, self.sh.repair);
        let col = self.columns[gx].get_or_insert_with(|| Column {
            values: vec![0.0; nt * lh],
            computed: vec![false; lh],
            col_best: if repair { vec![0; lh] } else { Vec::new() },
        });
        self.patch.clear();
        push_patch(
            self.sh.image,
            self.rx + gx * self.sh.k,
            self.ry + gy * self.sh.k,
            self.sh.k,
            &mut self.patch,
        );
        let measure = &self.sh.measure;
        let polarity = measure.polarity();
        let mut best_i = 0;
        let mut best_v = 0.0;
        for i in 0..nt {
            let app = measure.appearance_term(self.sh.tpl.appearance(i), &self.patch);
            col.values[i * lh + gy] = app;
            if repair {
                let v = Measure::combine(app, self.loc_const);
                if i == 0 || polarity.better(v, best_v) {
                    best_v = v;
                    best_i = i;
                }
            }
        }
        if repair {
            col.col_best[gy] = best_i;
        }
        col.computed[gy] = true;
        self.fresh += nt;
    }

    /// Full extremum scan of one window; returns the number of best buddies.
    ///
    /// Each matrix row is assembled in column-major slot order and then
    /// swept in simple passes that vectorize; column-best indices are kept
    /// as `f64` so both column updates are plain selects.
    fn scan_window<const MAXIMIZE: bool>(&mut self, ax: usize, ay: usize) -> usize {
        let (nt, tpw, tph, lh) = (self.nt, self.sh.tpw, self.sh.tph, self.lattice_h);
        let loc = self.sh.loc_cm;
        let cols: Vec<&[f64]> = (ax..ax + tpw)
            .map(|gx| self.columns[gx].as_ref().expect("window column cached").values.as_slice())
            .collect();
        let (row, cb_v, cb_i, row_bj) = (&mut self.scratch, &mut self.col_bv, &mut self.col_bi, &mut self.row_bj);
        #[cfg(target_arch = "x86_64")]
        if self.wide {
            // SAFETY: `wide` is only set when the CPU reports AVX2.
            unsafe { avx2::scan_rows::<MAXIMIZE>(row, &cols, loc, lh, ay, cb_v, cb_i, row_bj) };
        } else {
            baseline::scan_rows::<MAXIMIZE>(row, &cols, loc, lh, ay, cb_v, cb_i, row_bj);
        }
        #[cfg(not(target_arch = "x86_64"))]
        baseline::scan_rows::<MAXIMIZE>(row, &cols, loc, lh, ay, cb_v, cb_i, row_bj);
        (0..nt)
            .filter(|&i| {
                let j = self.row_bj[i];
                self.col_bi[(j % tpw) * tph + j / tpw] == i as f64
            })
            .count()
    }

    #[inline]
    fn entry(&self, i: usize, gx: usize, gy: usize) -> f64 {
        let values = &self.columns[gx].as_ref().expect("window column cached").values;
        Measure::combine(values[i * self.lattice_h + gy], self.loc_const)
    }

    /// Row extremum over rows `y0..y1` of the window at `ax`, row-major.
    fn scan_row(&self, i: usize, ax: usize, y0: usize, y1: usize, mut best: Option<RowBest>) -> RowBest {
        let polarity = self.sh.measure.polarity();
        for gy in y0..y1 {
            for gx in ax..ax + self.sh.tpw {
                let v = self.entry(i, gx, gy);
                if best.is_none_or(|b| polarity.better(v, b.value)) {
                    best = Some(RowBest { value: v, gx, gy });
                }
            }
        }
        best.expect("window has at least one point")
    }

    fn incremental_window(&mut self, ax: usize, ay: usize, prev_ay: Option<usize>) -> usize {
        let tph = self.sh.tph;
        match prev_ay {
            Some(p) if ay - p < tph => {
                self.stats.warm_windows += 1;
                self.stats.evicted_columns += (ay - p) * self.sh.tpw;
                for i in 0..self.nt {
                    let current = self.row_best[i];
                    self.row_best[i] = if current.gy < ay {
                        // extremum left with the evicted rows
                        self.stats.row_rescans += 1;
                        self.scan_row(i, ax, ay, ay + tph, None)
                    } else {
                        // entering points follow every survivor in row-major order
                        self.scan_row(i, ax, p + tph, ay + tph, Some(current))
                    };
                }
            }
            _ => {
                self.stats.cold_windows += 1;
                for i in 0..self.nt {
                    self.row_best[i] = self.scan_row(i, ax, ay, ay + tph, None);
                }
            }
        }
        self.row_best
            .iter()
            .enumerate()
            .filter(|&(i, b)| {
                self.columns[b.gx].as_ref().expect("window column cached").col_best[b.gy] == i
            })
            .count()
    }
}

#[inline(always)]
fn better<const MAXIMIZE: bool>(a: f64, b: f64) -> bool {
    if MAXIMIZE {
        a > b
    } else {
        a < b
    }
}

/// Row kernels of the full scan. The macro is instantiated once for the
/// baseline target and once with AVX2; both perform the same adds, compares
/// and selects per element, so their results agree bit for bit.
///
/// Each kernel stays a separate non-inlined function taking slices, which
/// is what lets LLVM vectorize the loops.
macro_rules! row_kernels {
    ($(#[$feature:meta])*) => {
        use super::better;
        use crate::pointset::Measure;

        /// Scans all template rows of one window. `row_bj[i]` receives the
        /// row-major slot of row `i`'s lowest-index extremum and `cb_i` the
        /// column-best template indices.
        #[allow(clippy::too_many_arguments)]
        $(#[$feature])*
        pub(super) fn scan_rows<const MAXIMIZE: bool>(
            row: &mut [f64],
            cols: &[&[f64]],
            loc: &[f64],
            lattice_h: usize,
            ay: usize,
            cb_v: &mut [f64],
            cb_i: &mut [f64],
            row_bj: &mut [usize],
        ) {
            let n = row.len();
            let tph = n / cols.len();
            for (i, bj) in row_bj.iter_mut().enumerate() {
                assemble_row(row, cols, i * lattice_h + ay, &loc[i * n..(i + 1) * n]);
                let best = if i == 0 {
                    cb_v.copy_from_slice(row);
                    cb_i.fill(0.0);
                    row_extremum::<MAXIMIZE>(row)
                } else {
                    fold_row::<MAXIMIZE>(row, cb_v, cb_i, i as f64)
                };
                *bj = lowest_slot(row, best, cols.len(), tph);
            }
        }

        /// One matrix row in column-major slot order: segment `jx` holds the
        /// cached appearance terms `cols[jx][offset..]` plus the matching
        /// location terms. Segments are short, so they go in explicit blocks of 4.
        #[inline(never)]
        $(#[$feature])*
        fn assemble_row(row: &mut [f64], cols: &[&[f64]], offset: usize, loc: &[f64]) {
            const W: usize = 4;
            let tph = row.len() / cols.len();
            for ((out, col), lp) in row.chunks_exact_mut(tph).zip(cols).zip(loc.chunks_exact(tph)) {
                let app = &col[offset..offset + tph];
                let mut o = out.chunks_exact_mut(W);
                let mut a = app.chunks_exact(W);
                let mut l = lp.chunks_exact(W);
                for ((o4, a4), l4) in (&mut o).zip(&mut a).zip(&mut l) {
                    for k in 0..W {
                        o4[k] = Measure::combine(a4[k], l4[k]);
                    }
                }
                for ((o1, &a1), &l1) in o.into_remainder().iter_mut().zip(a.remainder()).zip(l.remainder()) {
                    *o1 = Measure::combine(a1, l1);
                }
            }
        }

        /// Lowest row-major slot index among the column-major entries equal to `best`.
        #[inline(never)]
        $(#[$feature])*
        fn lowest_slot(row: &[f64], best: f64, tpw: usize, tph: usize) -> usize {
            const CHUNK: usize = 8;
            let slot = |c: usize| (c % tph) * tpw + c / tph;
            let any_equal = |xs: &[f64]| xs.iter().fold(false, |acc, &v| acc | (v == best));
            let start = row
                .chunks(CHUNK)
                .position(any_equal)
                .expect("extremum present")
                * CHUNK;
            let first = start + row[start..].iter().position(|&v| v == best).expect("extremum present");
            if !any_equal(&row[first + 1..]) {
                return slot(first);
            }
            (first..row.len()).filter(|&c| row[c] == best).map(slot).min().expect("non-empty")
        }

        /// Folds one matrix row into the running column extrema and returns
        /// the row extremum. Strict comparison keeps the lowest template index
        /// on ties; the row extremum does not depend on reduction order.
        #[inline(never)]
        $(#[$feature])*
        fn fold_row<const MAXIMIZE: bool>(row: &[f64], best_v: &mut [f64], best_i: &mut [f64], i: f64) -> f64 {
            const LANES: usize = 8;
            let n = row.len();
            let (best_v, best_i) = (&mut best_v[..n], &mut best_i[..n]);
            let mut lanes = [row[0]; LANES];
            let whole = n / LANES * LANES;
            for ((r, bv), bi) in row[..whole]
                .chunks_exact(LANES)
                .zip(best_v[..whole].chunks_exact_mut(LANES))
                .zip(best_i[..whole].chunks_exact_mut(LANES))
            {
                for l in 0..LANES {
                    let v = r[l];
                    let mask = (better::<MAXIMIZE>(v, bv[l]) as u64).wrapping_neg();
                    bv[l] = f64::from_bits((v.to_bits() & mask) | (bv[l].to_bits() & !mask));
                    bi[l] = f64::from_bits((i.to_bits() & mask) | (bi[l].to_bits() & !mask));
                    lanes[l] = if better::<MAXIMIZE>(v, lanes[l]) { v } else { lanes[l] };
                }
            }
            let mut best = lanes[0];
            for &v in &lanes[1..] {
                if better::<MAXIMIZE>(v, best) {
                    best = v;
                }
            }
            for k in whole..n {
                let v = row[k];
                if better::<MAXIMIZE>(v, best_v[k]) {
                    best_v[k] = v;
                    best_i[k] = i;
                }
                if better::<MAXIMIZE>(v, best) {
                    best = v;
                }
            }
            best
        }

        /// Extremum of a non-empty row, reduced over independent lanes.
        #[inline(never)]
        $(#[$feature])*
        fn row_extremum<const MAXIMIZE: bool>(row: &[f64]) -> f64 {
            const LANES: usize = 8;
            let mut lanes = [row[0]; LANES];
            let whole = row.len() / LANES * LANES;
            for c in row[..whole].chunks_exact(LANES) {
                for l in 0..LANES {
                    lanes[l] = if better::<MAXIMIZE>(c[l], lanes[l]) { c[l] } else { lanes[l] };
                }
            }
            let mut best = lanes[0];
            for &v in lanes[1..].iter().chain(&row[whole..]) {
                if better::<MAXIMIZE>(v, best) {
                    best = v;
                }
            }
            best
        }
    };
}

mod baseline {
    row_kernels!();
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    row_kernels!(#[target_feature(enable = "avx2")]);
}

/// Whether the AVX2 instantiation of the row kernels can run here.
fn wide_kernels() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}
