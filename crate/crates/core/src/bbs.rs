//! Distance matrices, best-buddy pairs and the BBS score.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{BbsError, Result};
use crate::pointset::{squared_location_distance, Measure, MeasureKind, PointSet, Polarity};

/// Position and value of a row or column extremum.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub value: f64,
}

/// `rows x cols` table with `values[i * cols + j] = d(p_i, q_j)`, plus the
/// closest entry of every row and column. Ties go to the lowest index.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    polarity: Polarity,
    row_best: Vec<Extremum>,
    col_best: Vec<Extremum>,
}

impl DistanceMatrix {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>, polarity: Polarity) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(BbsError::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let (row_best, col_best) = match polarity {
            Polarity::Min => extrema::<false>(cols, &values),
            Polarity::Max => extrema::<true>(cols, &values),
        };
        Ok(Self {
            rows,
            cols,
            values,
            polarity,
            row_best,
            col_best,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_best(&self) -> &[Extremum] {
        &self.row_best
    }

    pub fn col_best(&self) -> &[Extremum] {
        &self.col_best
    }

    /// Hash of the shape, polarity and exact value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.rows.hash(&mut h);
        self.cols.hash(&mut h);
        (self.polarity == Polarity::Max).hash(&mut h);
        for v in &self.values {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

fn extrema<const MAXIMIZE: bool>(cols: usize, values: &[f64]) -> (Vec<Extremum>, Vec<Extremum>) {
    let better = |v: f64, cur: f64| if MAXIMIZE { v > cur } else { v < cur };
    let mut row_best = Vec::with_capacity(values.len() / cols);
    let mut col_value = values[..cols].to_vec();
    let mut col_index = vec![0usize; cols];
    for (i, row) in values.chunks_exact(cols).enumerate() {
        let mut best = Extremum { index: 0, value: row[0] };
        for (j, ((&v, cv), ci)) in row.iter().zip(&mut col_value).zip(&mut col_index).enumerate() {
            if better(v, best.value) {
                best = Extremum { index: j, value: v };
            }
            if better(v, *cv) {
                *cv = v;
                *ci = i;
            }
        }
        row_best.push(best);
    }
    let col_best = col_index
        .into_iter()
        .zip(col_value)
        .map(|(index, value)| Extremum { index, value })
        .collect();
    (row_best, col_best)
}

#[inline(always)]
fn fill_values(p: &PointSet, q: &PointSet, m: Measure) -> Vec<f64> {
    match p.dim() {
        3 => fill_values_dim::<3>(p, q, m),
        _ => fill_values_dim::<0>(p, q, m),
    }
}

/// `D > 0` fixes the appearance length at compile time; `D = 0` means dynamic.
#[inline(always)]
fn fill_values_dim<const D: usize>(p: &PointSet, q: &PointSet, m: Measure) -> Vec<f64> {
    let fixed = |a: &[f64]| -> usize { if D > 0 { D } else { a.len() } };
    let mut values = Vec::with_capacity(p.len() * q.len());
    for (pa, &pl) in p.appearances().zip(p.locations()) {
        let pa = &pa[..fixed(pa)];
        values.extend(q.appearances().zip(q.locations()).map(|(qa, &ql)| {
            Measure::combine(
                m.appearance_term(pa, &qa[..fixed(qa)]),
                m.location_term(squared_location_distance(pl, ql)),
            )
        }));
    }
    values
}

/// Full pairwise table between `p` (rows) and `q` (columns).
pub fn distance_matrix(p: &PointSet, q: &PointSet, m: &Measure) -> Result<DistanceMatrix> {
    if p.dim() != q.dim() {
        return Err(BbsError::Dimension(format!(
            "point sets have appearance dimensions {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    // dims already agree, so skip the per-pair check of `pointwise_distance`;
    // a fixed kind lets the term dispatch fold out of the inner loop
    let values = match m.kind {
        MeasureKind::ColorSquaredDistance => fill_values(p, q, Measure::color(m.lambda)),
        MeasureKind::SimilarityInnerProduct => fill_values(p, q, Measure::similarity(m.lambda)),
    };
    DistanceMatrix::from_values(p.len(), q.len(), values, m.polarity())
}

/// Index pairs `(i, j)` that are each other's nearest neighbor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BbpList {
    pub pairs: Vec<(usize, usize)>,
}

impl BbpList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn best_buddies(d: &DistanceMatrix) -> BbpList {
    let pairs = d
        .row_best
        .iter()
        .enumerate()
        .filter(|(i, rb)| d.col_best[rb.index].index == *i)
        .map(|(i, rb)| (i, rb.index))
        .collect();
    BbpList { pairs }
}

#[inline]
pub(crate) fn score_from_count(count: usize, n_p: usize, n_q: usize) -> f64 {
    count as f64 / n_p.min(n_q) as f64
}

/// Fraction of best-buddy pairs relative to the smaller set.
pub fn bbs_score(d: &DistanceMatrix) -> f64 {
    score_from_count(best_buddies(d).len(), d.rows, d.cols)
}

/// Convenience: builds the matrix and scores it.
pub fn bbs(p: &PointSet, q: &PointSet, m: &Measure) -> Result<f64> {
    Ok(bbs_score(&distance_matrix(p, q, m)?))
}
