//! Score normalization and linear late fusion.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimators::{ScoreKind, ScoreTable};
use crate::neighbors::WeightVector;

/// Minimum and maximum possible score of an estimator for one tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub min: f64,
    pub max: f64,
}

impl ScoreBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Degenerate(format!("score bounds [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }
}

/// `(g − min) / (max − min)`, clamped to `[0,1]`.
pub fn minmax_normalize(st: &ScoreTable, bounds: ScoreBounds) -> Result<ScoreTable> {
    let bounds = ScoreBounds::new(bounds.min, bounds.max)?;
    Ok(minmax_with(st, bounds, false))
}

fn minmax_with(st: &ScoreTable, b: ScoreBounds, observed: bool) -> ScoreTable {
    let span = b.max - b.min;
    let entries = st
        .entries
        .iter()
        .map(|(id, &g)| (id.clone(), ((g - b.min) / span).clamp(0.0, 1.0)))
        .collect();
    ScoreTable {
        estimator: st.estimator.clone(),
        tag: st.tag.clone(),
        entries,
        bounds: Some(ScoreBounds { min: 0.0, max: 1.0 }),
        kind: ScoreKind::MinMax {
            observed_bounds: observed,
        },
    }
}

/// MinMax with the table's analytic bounds, or its observed min/max when it
/// has none. A constant table without analytic bounds maps to all zeros.
pub fn minmax_auto(st: &ScoreTable) -> Result<ScoreTable> {
    if let Some(b) = st.bounds {
        return minmax_normalize(st, b);
    }
    if st.is_empty() {
        return Err(Error::EmptyTable);
    }
    let lo = st.entries.values().copied().fold(f64::INFINITY, f64::min);
    let hi = st.entries.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < hi {
        Ok(minmax_with(st, ScoreBounds { min: lo, max: hi }, true))
    } else {
        let mut out = minmax_with(st, ScoreBounds { min: lo, max: lo + 1.0 }, true);
        out.entries.values_mut().for_each(|v| *v = 0.0);
        Ok(out)
    }
}

/// `1 − rank / n_w`, with 1-based ranks under descending score and id
/// tie-breaking. Computed as `(n_w − rank) / n_w` so that fusion can recover
/// the integer rank points exactly.
pub fn rankmax_normalize(st: &ScoreTable) -> Result<ScoreTable> {
    if st.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = st.len();
    let entries = st
        .ranking()
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| (id.to_string(), (n - (i + 1)) as f64 / n as f64))
        .collect();
    Ok(ScoreTable {
        estimator: st.estimator.clone(),
        tag: st.tag.clone(),
        entries,
        bounds: Some(ScoreBounds { min: 0.0, max: 1.0 }),
        kind: ScoreKind::RankMax,
    })
}

fn check_aligned(tables: &[ScoreTable], wv: &WeightVector) -> Result<()> {
    let first = tables.first().ok_or(Error::EmptyTable)?;
    if tables.len() != wv.len() {
        return Err(Error::LengthMismatch {
            left: tables.len(),
            right: wv.len(),
        });
    }
    for t in &tables[1..] {
        if t.tag != first.tag {
            return Err(Error::CandidateMismatch(format!(
                "tables for tags `{}` and `{}`",
                first.tag, t.tag
            )));
        }
        if !t.same_candidates(first) {
            return Err(Error::CandidateMismatch(format!(
                "`{}` and `{}` score different images for `{}`",
                first.estimator, t.estimator, first.tag
            )));
        }
    }
    Ok(())
}

/// `Σ λ_i · g_i`, accumulated in component order.
pub fn weighted_sum(weights: &[f64], scores: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    for (w, g) in weights.iter().zip(scores) {
        acc += w * g;
    }
    acc
}

/// Fused score of one candidate. On the RankMax grid the integer points
/// `round(s · n)` are combined and divided once.
pub(crate) fn fuse_column(
    rank_grid: bool,
    weights: &[f64],
    n: usize,
    column: impl Iterator<Item = f64>,
) -> f64 {
    if !rank_grid {
        return weighted_sum(weights, column);
    }
    let n = n as f64;
    let points = column.map(|s| (s * n).round());
    if weights.windows(2).all(|w| w[0] == w[1]) {
        points.sum::<f64>() / (weights.len() as f64 * n)
    } else {
        weighted_sum(weights, points) / n
    }
}

/// Linear late fusion `G = Σ λ_i · g_i` per candidate image.
///
/// When every input is a RankMax table the sum is taken over the integer
/// rank points `n_w − rank` and divided once, so equal point totals give
/// bit-identical fused scores.
pub fn late_fuse(tables: &[ScoreTable], wv: &WeightVector) -> Result<ScoreTable> {
    check_aligned(tables, wv)?;
    let first = &tables[0];
    let rank_grid = tables.iter().all(|t| t.kind == ScoreKind::RankMax);
    let mut entries = BTreeMap::new();
    for id in first.entries.keys() {
        let column = tables.iter().map(|t| t.entries[id]);
        entries.insert(id.clone(), fuse_column(rank_grid, wv.weights(), first.len(), column));
    }
    let name = tables
        .iter()
        .map(|t| t.estimator.as_str())
        .collect::<Vec<_>>()
        .join("+");
    Ok(ScoreTable {
        estimator: name,
        tag: first.tag.clone(),
        entries,
        bounds: None,
        kind: ScoreKind::Fused,
    })
}

/// Late fusion with uniform weights.
pub fn average_fuse(tables: &[ScoreTable]) -> Result<ScoreTable> {
    let names = tables.iter().map(|t| t.estimator.clone()).collect();
    late_fuse(tables, &WeightVector::uniform(names)?)
}

/// Borda count: each table awards `n_w − rank` points; images ordered by
/// descending total, ties by ascending id.
pub fn borda_rank(tables: &[ScoreTable]) -> Result<Vec<String>> {
    let first = tables.first().ok_or(Error::EmptyTable)?;
    for t in &tables[1..] {
        if !t.same_candidates(first) {
            return Err(Error::CandidateMismatch(format!(
                "`{}` and `{}` rank different images",
                first.estimator, t.estimator
            )));
        }
    }
    let n = first.len();
    let mut points: BTreeMap<&str, usize> = first.entries.keys().map(|k| (k.as_str(), 0)).collect();
    for t in tables {
        for (i, id) in t.ranked_ids().into_iter().enumerate() {
            *points.get_mut(id).expect("same candidates") += n - (i + 1);
        }
    }
    let mut order: Vec<(&str, usize)> = points.into_iter().collect();
    order.sort_by_key(|o| std::cmp::Reverse(o.1));
    Ok(order.into_iter().map(|(id, _)| id.to_string()).collect())
}
