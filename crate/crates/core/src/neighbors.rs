//! Exact nearest-neighbor search under L1 and weighted combined distances.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::collection::Collection;
use crate::error::{Error, Result};
use crate::seed;

/// `Σ |a_j - b_j|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(l1(a, b))
}

#[inline]
pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Nonnegative weights on the probability simplex, one per named feature or
/// estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    names: Vec<String>,
    weights: Vec<f64>,
}

impl WeightVector {
    /// Normalizes `weights` by their sum. Rejects negative, non-finite or
    /// all-zero input.
    pub fn new(names: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if names.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: weights.len(),
            });
        }
        if names.is_empty() {
            return Err(Error::InvalidWeights("no components".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and nonnegative, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { names, weights })
    }

    /// Like [`WeightVector::new`], but keeps the values untouched when they
    /// already sum to 1 within `1e-12`, so weights read back from a file are
    /// bit-identical to those written.
    pub fn from_simplex(names: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        let checked = Self::new(names, weights.clone())?;
        if (weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
            Ok(Self {
                names: checked.names,
                weights,
            })
        } else {
            Ok(checked)
        }
    }

    pub fn uniform(names: Vec<String>) -> Result<Self> {
        let w = vec![1.0; names.len()];
        Self::new(names, w)
    }

    pub fn one_hot(names: Vec<String>, hot: usize) -> Result<Self> {
        let w = (0..names.len()).map(|i| if i == hot { 1.0 } else { 0.0 }).collect();
        Self::new(names, w)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.weights[i])
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    /// Reorders the components to follow `names`; every name must be present.
    pub fn aligned_to(&self, names: &[String]) -> Result<WeightVector> {
        let mut weights = Vec::with_capacity(names.len());
        for n in names {
            weights.push(
                self.get(n)
                    .ok_or_else(|| Error::MissingWeights(format!("no weight for `{n}`")))?,
            );
        }
        if names.len() != self.names.len() {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: self.names.len(),
            });
        }
        WeightVector::new(names.to_vec(), weights)
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    if s > 0.0 {
        for x in &mut out {
            *x /= s;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormMode {
    None,
    MinMax,
    RankMax,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NormMode::None),
            "minmax" => Ok(NormMode::MinMax),
            "rankmax" => Ok(NormMode::RankMax),
            _ => Err(Error::InvalidConfig(format!("unknown normalization `{s}`"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::None => "none",
            NormMode::MinMax => "minmax",
            NormMode::RankMax => "rankmax",
        })
    }
}

/// Per-feature distance normalization.
///
/// `MinMax` maps `d` to `(d - lower) / (upper - lower)` clamped to `[0,1]`.
/// `RankMax` is query-relative: the fraction of candidate images strictly
/// closer to the query than the image being scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceNormalizer {
    None,
    MinMax { lower: f64, upper: f64 },
    RankMax,
}

impl DistanceNormalizer {
    pub fn mode(&self) -> NormMode {
        match self {
            DistanceNormalizer::None => NormMode::None,
            DistanceNormalizer::MinMax { .. } => NormMode::MinMax,
            DistanceNormalizer::RankMax => NormMode::RankMax,
        }
    }

    /// Maps a raw distance for the non-query-relative modes.
    pub fn apply(&self, d: f64) -> f64 {
        match *self {
            DistanceNormalizer::None | DistanceNormalizer::RankMax => d,
            DistanceNormalizer::MinMax { lower, upper } => {
                ((d - lower) / (upper - lower)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Linear-interpolated percentile (`q` in `[0,100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub const CALIBRATION_PERCENTILE: f64 = 99.5;

/// Calibrates a normalizer for `feature` on `c`. MinMax uses lower = 0 and the
/// 99.5th percentile of L1 distances over `sample_size` seeded random pairs.
pub fn calibrate_normalizer(
    c: &Collection,
    feature: &str,
    mode: NormMode,
    sample_size: usize,
    seed: u64,
) -> Result<DistanceNormalizer> {
    let fm = c.feature(feature)?;
    match mode {
        NormMode::None => return Ok(DistanceNormalizer::None),
        NormMode::RankMax => return Ok(DistanceNormalizer::RankMax),
        NormMode::MinMax => {}
    }
    if c.len() < 2 {
        return Err(Error::Degenerate(format!(
            "calibrating `{feature}` needs at least 2 images"
        )));
    }
    let mut rng = seed::rng(seed);
    let n = c.len();
    let distances: Vec<f64> = (0..sample_size.max(1))
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            l1(fm.row(a), fm.row(b))
        })
        .collect();
    minmax_from_distances(feature, &distances)
}

pub(crate) fn minmax_from_distances(feature: &str, distances: &[f64]) -> Result<DistanceNormalizer> {
    let upper = percentile(distances, CALIBRATION_PERCENTILE).unwrap_or(0.0);
    if !(upper > 0.0) {
        return Err(Error::Degenerate(format!(
            "feature `{feature}` has a zero upper distance bound"
        )));
    }
    Ok(DistanceNormalizer::MinMax { lower: 0.0, upper })
}

/// Where neighbors are searched: one feature under raw L1, or a weighted
/// combination of normalized per-feature distances.
#[derive(Debug, Clone, PartialEq)]
pub enum Space {
    Single(String),
    Combined {
        weights: WeightVector,
        normalizers: BTreeMap<String, DistanceNormalizer>,
    },
}

impl Space {
    pub fn combined(
        weights: WeightVector,
        normalizers: BTreeMap<String, DistanceNormalizer>,
    ) -> Result<Self> {
        for n in weights.names() {
            if !normalizers.contains_key(n) {
                return Err(Error::UnknownFeature(n.clone()));
            }
        }
        Ok(Space::Combined {
            weights,
            normalizers,
        })
    }

    /// Same weights and normalizers under every feature's pass-through
    /// normalizer.
    pub fn unnormalized(weights: WeightVector) -> Self {
        let normalizers = weights
            .names()
            .iter()
            .map(|n| (n.clone(), DistanceNormalizer::None))
            .collect();
        Space::Combined {
            weights,
            normalizers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

/// Up to `k` nearest images, distance ascending, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query_id: String,
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Debug dump: `query_id<TAB>neighbor_id<TAB>distance` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", self.query_id, e.id, e.distance);
        }
        out
    }
}

fn query_row<'a>(queries: &'a Collection, qi: usize, source: &Collection, feature: &str) -> Result<&'a [f64]> {
    let qf = queries.feature(feature)?;
    let sf = source.feature(feature)?;
    if qf.dim() != sf.dim() {
        return Err(Error::DimensionMismatch {
            expected: sf.dim(),
            got: qf.dim(),
        });
    }
    Ok(qf.row(qi))
}

/// Fraction of candidates strictly closer than each candidate, computed from
/// the sorted distance list. `excluded` (the query itself) does not count.
fn rank_fractions(d: &[f64], excluded: Option<usize>) -> Vec<f64> {
    let mut sorted: Vec<f64> = d
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != excluded)
        .map(|(_, &v)| v)
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    d.iter()
        .map(|&v| sorted.partition_point(|&s| s < v) as f64 / n)
        .collect()
}

/// Distances from query image `qi` of `queries` to every image of `source`
/// under `space`. Entries for zero-weight features are never computed.
fn distances_to_all(
    source: &Collection,
    space: &Space,
    queries: &Collection,
    qi: usize,
    excluded: Option<usize>,
) -> Result<Vec<f64>> {
    match space {
        Space::Single(feature) => {
            let q = query_row(queries, qi, source, feature)?;
            let fm = source.feature(feature)?;
            Ok((0..source.len()).map(|j| l1(q, fm.row(j))).collect())
        }
        Space::Combined {
            weights,
            normalizers,
        } => {
            let mut total = vec![0.0; source.len()];
            for (name, &w) in weights.names().iter().zip(weights.weights()) {
                if w == 0.0 {
                    continue;
                }
                let norm = normalizers
                    .get(name)
                    .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
                let q = query_row(queries, qi, source, name)?;
                let fm = source.feature(name)?;
                let raw: Vec<f64> = (0..source.len()).map(|j| l1(q, fm.row(j))).collect();
                let normed = match norm {
                    DistanceNormalizer::RankMax => rank_fractions(&raw, excluded),
                    other => raw.into_iter().map(|d| other.apply(d)).collect(),
                };
                for (t, v) in total.iter_mut().zip(normed) {
                    *t += w * v;
                }
            }
            Ok(total)
        }
    }
}

/// Normalized per-feature distances between `a` (in `qa`) and `b` (in `qb`)
/// for every feature in `normalizers`, in key order. RankMax fractions are
/// taken relative to `source`, excluding `a` itself when present there.
pub fn normalized_distances(
    source: &Collection,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
    qa: &Collection,
    a: &str,
    qb: &Collection,
    b: &str,
) -> Result<Vec<f64>> {
    let ia = qa.index_of(a).ok_or_else(|| Error::UnknownImage(a.to_string()))?;
    let ib = qb.index_of(b).ok_or_else(|| Error::UnknownImage(b.to_string()))?;
    let mut out = Vec::with_capacity(normalizers.len());
    for (name, norm) in normalizers {
        let ra = query_row(qa, ia, source, name)?;
        let rb = query_row(qb, ib, source, name)?;
        let d = l1(ra, rb);
        let v = match norm {
            DistanceNormalizer::RankMax => {
                let fm = source.feature(name)?;
                let own = source.index_of(a);
                let mut closer = 0usize;
                let mut n = 0usize;
                for j in 0..source.len() {
                    if Some(j) == own {
                        continue;
                    }
                    n += 1;
                    if l1(ra, fm.row(j)) < d {
                        closer += 1;
                    }
                }
                closer as f64 / n.max(1) as f64
            }
            other => other.apply(d),
        };
        out.push(v);
    }
    Ok(out)
}

/// `Σ λ_i · norm_i(d_i(x, y))` for two images of `c`.
pub fn combined_distance(
    c: &Collection,
    x: &str,
    y: &str,
    weights: &WeightVector,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
) -> Result<f64> {
    let iy = c.index_of(y).ok_or_else(|| Error::UnknownImage(y.to_string()))?;
    let ix = c.index_of(x).ok_or_else(|| Error::UnknownImage(x.to_string()))?;
    let space = Space::combined(weights.clone(), normalizers.clone())?;
    let all = distances_to_all(c, &space, c, ix, Some(ix))?;
    Ok(all[iy])
}

/// Exact k-NN of `query_id` within `c`, excluding the query itself.
pub fn knn(c: &Collection, space: &Space, query_id: &str, k: usize) -> Result<NeighborList> {
    knn_from(c, space, c, query_id, k)
}

/// Exact k-NN in `source` for an image of `queries`. Any source image with
/// the query's id is excluded. Asking for more neighbors than exist returns
/// all of them.
pub fn knn_from(
    source: &Collection,
    space: &Space,
    queries: &Collection,
    query_id: &str,
    k: usize,
) -> Result<NeighborList> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let qi = queries
        .index_of(query_id)
        .ok_or_else(|| Error::UnknownImage(query_id.to_string()))?;
    let excluded = source.index_of(query_id);
    let dist = distances_to_all(source, space, queries, qi, excluded)?;

    let mut cand: Vec<(f64, u32, usize)> = dist
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != excluded)
        .map(|(j, &d)| (d, source.id_rank(j), j))
        .collect();
    let cmp = |a: &(f64, u32, usize), b: &(f64, u32, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(NeighborList {
        query_id: query_id.to_string(),
        entries: cand
            .into_iter()
            .map(|(d, _, j)| Neighbor {
                id: source.image(j).id.clone(),
                distance: d,
            })
            .collect(),
    })
}

/// [`knn_from`] for many queries in parallel; output order follows `ids`.
pub fn knn_batch(
    source: &Collection,
    space: &Space,
    queries: &Collection,
    ids: &[&str],
    k: usize,
) -> Result<Vec<NeighborList>> {
    ids.par_iter()
        .map(|id| knn_from(source, space, queries, id, k))
        .collect()
}
