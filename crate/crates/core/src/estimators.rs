//! Base tag relevance estimators.
//!
//! Every estimator scores the candidate set of a tag, i.e. the images of the
//! scored collection that carry the tag. Visual estimators find their
//! neighbors (or kernel support) in a separate source collection, which may
//! be the same collection.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::collection::{Collection, ImageRecord};
use crate::error::{Error, Result};
use crate::fusion::ScoreBounds;
use crate::neighbors::{self, knn_batch, knn_from, DistanceNormalizer, NeighborList, Space, WeightVector};
use crate::seed;

/// How a table's scores were produced; normalizers and fusion read this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Raw,
    /// `observed_bounds` is set when the table had no analytic bounds and
    /// the observed per-table min/max were used instead.
    MinMax { observed_bounds: bool },
    RankMax,
    Fused,
}

/// Scores of one estimator for one tag over its candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub estimator: String,
    pub tag: String,
    pub entries: BTreeMap<String, f64>,
    /// Minimum and maximum possible score, where the estimator knows them.
    pub bounds: Option<ScoreBounds>,
    pub kind: ScoreKind,
}

impl ScoreTable {
    pub fn new(
        estimator: impl Into<String>,
        tag: impl Into<String>,
        entries: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            estimator: estimator.into(),
            tag: tag.into(),
            entries,
            bounds: None,
            kind: ScoreKind::Raw,
        }
    }

    pub fn with_bounds(mut self, bounds: ScoreBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries by descending score, ties by ascending image id.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        // BTreeMap iteration is already id-ascending; a stable sort keeps it.
        let mut v: Vec<(&str, f64)> = self.entries.iter().map(|(k, &s)| (k.as_str(), s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }

    pub fn ranked_ids(&self) -> Vec<&str> {
        self.ranking().into_iter().map(|(id, _)| id).collect()
    }

    pub fn same_candidates(&self, other: &ScoreTable) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.keys().zip(other.entries.keys()).all(|(a, b)| a == b)
    }
}

/// `|neighbors labeled w| / k − |S_w| / |S|`. The denominator is the
/// requested `k` even when the list is shorter.
pub fn neighbor_vote(source: &Collection, nl: &NeighborList, tag: &str, k: usize) -> Result<f64> {
    let prior = source.tag_prior(tag)?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut votes = 0usize;
    for id in nl.ids() {
        if source.record(id)?.has_tag(tag) {
            votes += 1;
        }
    }
    Ok(votes as f64 / k as f64 - prior)
}

/// Analytic range of the neighbor vote for `tag`.
pub fn neighbor_vote_bounds(source: &Collection, tag: &str) -> Result<ScoreBounds> {
    let prior = source.tag_prior(tag)?;
    ScoreBounds::new(-prior, 1.0 - prior)
}

/// Neighbor vote over the neighbor set retrieved by the combined distance.
pub fn early_fused_score(
    source: &Collection,
    queries: &Collection,
    x: &str,
    tag: &str,
    weights: &WeightVector,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
    k: usize,
) -> Result<f64> {
    let space = Space::combined(weights.clone(), normalizers.clone())?;
    let nl = knn_from(source, &space, queries, x, k)?;
    neighbor_vote(source, &nl, tag, k)
}

/// Precomputed neighbor lists for a batch of scored images under one space.
#[derive(Debug)]
pub struct NeighborVoter<'a> {
    source: &'a Collection,
    k: usize,
    lists: HashMap<String, NeighborList>,
}

impl<'a> NeighborVoter<'a> {
    pub fn build(
        source: &'a Collection,
        target: &Collection,
        space: &Space,
        ids: &[&str],
        k: usize,
    ) -> Result<Self> {
        let lists = knn_batch(source, space, target, ids, k)?
            .into_iter()
            .map(|nl| (nl.query_id.clone(), nl))
            .collect();
        Ok(Self { source, k, lists })
    }

    /// Neighbor lists for every candidate image of any of `tags`.
    pub fn for_tags(
        source: &'a Collection,
        target: &Collection,
        space: &Space,
        tags: &[&str],
        k: usize,
    ) -> Result<Self> {
        let mut ids: Vec<&str> = tags
            .iter()
            .flat_map(|t| target.tag_members(t).iter().map(|&i| target.image(i).id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        Self::build(source, target, space, &ids, k)
    }

    pub fn neighbors(&self, id: &str) -> Result<&NeighborList> {
        self.lists
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub fn score(&self, id: &str, tag: &str) -> Result<f64> {
        neighbor_vote(self.source, self.neighbors(id)?, tag, self.k)
    }

    pub fn table(&self, name: &str, target: &Collection, tag: &str) -> Result<ScoreTable> {
        let mut entries = BTreeMap::new();
        for id in target.images_with_tag(tag) {
            entries.insert(id.to_string(), self.score(id, tag)?);
        }
        Ok(ScoreTable::new(name, tag, entries).with_bounds(neighbor_vote_bounds(self.source, tag)?))
    }
}

/// `1 − (pos − 1) / T` with `pos` the 1-based position of the tag.
pub fn tag_position_score(rec: &ImageRecord, tag: &str) -> Result<f64> {
    let pos = rec.position(tag).ok_or_else(|| Error::TagAbsent {
        image: rec.id.clone(),
        tag: tag.to_string(),
    })?;
    let t = rec.tags.len() as f64;
    Ok(1.0 - (pos - 1) as f64 / t)
}

pub fn tag_position_table(name: &str, target: &Collection, tag: &str) -> Result<ScoreTable> {
    let mut entries = BTreeMap::new();
    for &i in target.tag_members(tag) {
        let rec = target.image(i);
        entries.insert(rec.id.clone(), tag_position_score(rec, tag)?);
    }
    Ok(ScoreTable::new(name, tag, entries).with_bounds(ScoreBounds::new(0.0, 1.0)?))
}

/// `exp(−NGD)` from document frequencies over a collection of `n` images.
pub fn ngd_similarity(f_w: usize, f_t: usize, f_wt: usize, n: usize) -> f64 {
    if f_wt == 0 || f_w == 0 || f_t == 0 {
        return 0.0;
    }
    let (lw, lt, lwt, ln) = (
        (f_w as f64).ln(),
        (f_t as f64).ln(),
        (f_wt as f64).ln(),
        (n as f64).ln(),
    );
    let num = lw.max(lt) - lwt;
    let den = ln - lw.min(lt);
    if den <= 0.0 {
        return if num <= 0.0 { 1.0 } else { 0.0 };
    }
    (-(num / den)).exp()
}

/// Tag-to-tag similarity from co-occurrence counts.
#[derive(Debug, Clone)]
pub struct TagSimilarityModel {
    n_images: usize,
    min_count: usize,
    vocab: HashMap<String, u32>,
    freq: Vec<usize>,
    co: HashMap<(u32, u32), usize>,
}

pub fn build_tag_similarity(c: &Collection, min_count: usize) -> Result<TagSimilarityModel> {
    if c.len() < 2 {
        return Err(Error::InvalidConfig(
            "tag similarity needs at least 2 images".into(),
        ));
    }
    let mut vocab = HashMap::new();
    let mut freq = Vec::new();
    for (tag, members) in c.tag_index() {
        vocab.insert(tag.clone(), freq.len() as u32);
        freq.push(members.len());
    }
    let mut co: HashMap<(u32, u32), usize> = HashMap::new();
    for rec in c.images() {
        let ids: Vec<u32> = rec.tags.iter().map(|t| vocab[t]).collect();
        for (a, &x) in ids.iter().enumerate() {
            for &y in &ids[a + 1..] {
                *co.entry((x.min(y), x.max(y))).or_default() += 1;
            }
        }
    }
    Ok(TagSimilarityModel {
        n_images: c.len(),
        min_count,
        vocab,
        freq,
        co,
    })
}

impl TagSimilarityModel {
    pub fn frequency(&self, tag: &str) -> usize {
        self.vocab.get(tag).map(|&i| self.freq[i as usize]).unwrap_or(0)
    }

    pub fn co_frequency(&self, w: &str, t: &str) -> usize {
        match (self.vocab.get(w), self.vocab.get(t)) {
            (Some(&a), Some(&b)) if a == b => self.freq[a as usize],
            (Some(&a), Some(&b)) => self.co.get(&(a.min(b), a.max(b))).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn sim(&self, w: &str, t: &str) -> f64 {
        if w == t {
            return 1.0;
        }
        let (fw, ft) = (self.frequency(w), self.frequency(t));
        if fw < self.min_count || ft < self.min_count {
            return 0.0;
        }
        ngd_similarity(fw, ft, self.co_frequency(w, t), self.n_images)
    }
}

/// Mean similarity of `tag` to the image's other tags; 0 without co-tags.
pub fn semantic_field_score(rec: &ImageRecord, tag: &str, model: &TagSimilarityModel) -> Result<f64> {
    if !rec.has_tag(tag) {
        return Err(Error::TagAbsent {
            image: rec.id.clone(),
            tag: tag.to_string(),
        });
    }
    let others: Vec<&String> = rec.tags.iter().filter(|t| *t != tag).collect();
    if others.is_empty() {
        return Ok(0.0);
    }
    Ok(others.iter().map(|t| model.sim(tag, t)).sum::<f64>() / others.len() as f64)
}

pub fn semantic_field_table(
    name: &str,
    target: &Collection,
    tag: &str,
    model: &TagSimilarityModel,
) -> Result<ScoreTable> {
    let mut entries = BTreeMap::new();
    for &i in target.tag_members(tag) {
        let rec = target.image(i);
        entries.insert(rec.id.clone(), semantic_field_score(rec, tag, model)?);
    }
    Ok(ScoreTable::new(name, tag, entries).with_bounds(ScoreBounds::new(0.0, 1.0)?))
}

pub const DEFAULT_KDE_SAMPLE_CAP: usize = 500;

/// Gaussian kernel density over a seeded sample of `S_w` in one feature.
#[derive(Debug, Clone)]
pub struct KdeModel {
    feature: String,
    sigma: f64,
    /// Shuffled members of `S_w` (source indices), at most `cap + 1`.
    members: Vec<usize>,
    cap: usize,
}

impl KdeModel {
    /// Bandwidth defaults to the median L1 distance over up to `sample_cap`
    /// seeded random member pairs; 1.0 when that median is zero or undefined.
    pub fn fit(
        source: &Collection,
        tag: &str,
        feature: &str,
        sigma: Option<f64>,
        sample_cap: usize,
        seed: u64,
    ) -> Result<Self> {
        let fm = source.feature(feature)?;
        let support = source.tag_members(tag);
        if support.is_empty() {
            return Err(Error::EmptySupport(format!("no source image carries `{tag}`")));
        }
        let cap = sample_cap.max(1);
        let mut rng = seed::rng(seed);
        let sigma = match sigma {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {s}"))),
            None => {
                let n = support.len();
                let d: Vec<f64> = if n < 2 {
                    Vec::new()
                } else {
                    (0..cap)
                        .map(|_| {
                            let a = rng.gen_range(0..n);
                            let mut b = rng.gen_range(0..n - 1);
                            if b >= a {
                                b += 1;
                            }
                            neighbors::l1(fm.row(support[a]), fm.row(support[b]))
                        })
                        .collect()
                };
                match neighbors::percentile(&d, 50.0) {
                    Some(m) if m > 0.0 => m,
                    _ => 1.0,
                }
            }
        };
        let mut members = support.to_vec();
        members.shuffle(&mut rng);
        members.truncate(cap + 1);
        Ok(Self {
            feature: feature.to_string(),
            sigma,
            members,
            cap,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Mean kernel value between image `id` of `queries` and the sampled
    /// support, excluding any member with the same id.
    pub fn score(&self, source: &Collection, queries: &Collection, id: &str) -> Result<f64> {
        let qi = queries.index_of(id).ok_or_else(|| Error::UnknownImage(id.to_string()))?;
        let q = queries.feature(&self.feature)?.row(qi);
        let fm = source.feature(&self.feature)?;
        if fm.dim() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: fm.dim(),
                got: q.len(),
            });
        }
        let own = source.index_of(id);
        let sample: Vec<usize> = self
            .members
            .iter()
            .copied()
            .filter(|&j| Some(j) != own)
            .take(self.cap)
            .collect();
        if sample.is_empty() {
            return Err(Error::EmptySupport(format!(
                "no other image supports the density at `{id}`"
            )));
        }
        let s2 = self.sigma * self.sigma;
        let total: f64 = sample
            .iter()
            .map(|&j| {
                let d = neighbors::l1(q, fm.row(j));
                (-(d * d) / s2).exp()
            })
            .sum();
        Ok(total / sample.len() as f64)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tag_ranking_kde_score(
    source: &Collection,
    queries: &Collection,
    x: &str,
    tag: &str,
    feature: &str,
    sigma: Option<f64>,
    sample_cap: usize,
    seed: u64,
) -> Result<f64> {
    KdeModel::fit(source, tag, feature, sigma, sample_cap, seed)?.score(source, queries, x)
}

/// KDE scores carry no analytic bounds; MinMax falls back to observed ones.
pub fn kde_table(
    name: &str,
    source: &Collection,
    target: &Collection,
    tag: &str,
    model: &KdeModel,
) -> Result<ScoreTable> {
    let mut entries = BTreeMap::new();
    for id in target.images_with_tag(tag) {
        entries.insert(id.to_string(), model.score(source, target, id)?);
    }
    Ok(ScoreTable::new(name, tag, entries))
}
