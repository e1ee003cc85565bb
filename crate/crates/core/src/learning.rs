//! Supervised fusion weights.
//!
//! Early fusion weights come from distance metric learning: minimize
//! `Σ (exp(−Σ λ_i d_i(x,x')) − y)²` over labeled image pairs by projected
//! gradient descent on the simplex. Late fusion weights come from coordinate
//! ascent on a rank metric of the fused ranking. Both have a per-concept
//! variant that falls back to the global weights for thin concepts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::collection::Collection;
use crate::error::{Error, Result};
use crate::estimators::{ScoreKind, ScoreTable};
use crate::evalkit::{average_precision, ndcg_at, Qrels, NDCG_CUTOFF};
use crate::fusion::fuse_column;
use crate::neighbors::{normalized_distances, project_to_simplex, DistanceNormalizer, WeightVector};
use crate::seed;

/// Above this many unordered pairs, pairs are drawn by rejection sampling
/// instead of enumerated.
const ENUMERATION_LIMIT: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledPair {
    pub a: String,
    pub b: String,
    /// The two images share at least one concept.
    pub y: bool,
}

/// Target class sizes: half positive when possible, the scarce class taken
/// whole otherwise.
fn split_targets(n_pairs: usize, pos_avail: usize, neg_avail: usize) -> (usize, usize) {
    let want_pos = n_pairs / 2;
    let pos = pos_avail.min(want_pos.max(n_pairs.saturating_sub(neg_avail)));
    let neg = neg_avail.min(n_pairs - pos);
    (pos, neg)
}

/// Seeded, duplicate-free sample of labeled pairs over `ids`. `label`
/// returns `None` for pairs that belong to neither class.
fn sample_labeled<F>(ids: &[&str], n_pairs: usize, seed: u64, what: &str, label: F) -> Result<Vec<LabeledPair>>
where
    F: Fn(usize, usize) -> Option<bool>,
{
    let n = ids.len();
    if n < 2 || n_pairs == 0 {
        return Err(Error::NoPairs(format!("{what}: fewer than 2 images or no pairs requested")));
    }
    let mut rng = seed::rng(seed);
    let total = n * (n - 1) / 2;
    let (pos, neg): (Vec<(usize, usize)>, Vec<(usize, usize)>) = if total <= ENUMERATION_LIMIT {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                match label(i, j) {
                    Some(true) => pos.push((i, j)),
                    Some(false) => neg.push((i, j)),
                    None => {}
                }
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::NoPairs(format!(
                "{what}: {} positive and {} negative pairs available",
                pos.len(),
                neg.len()
            )));
        }
        let (np, nn) = split_targets(n_pairs, pos.len(), neg.len());
        let (pos, _) = pos.partial_shuffle(&mut rng, np);
        let (neg, _) = neg.partial_shuffle(&mut rng, nn);
        (pos.to_vec(), neg.to_vec())
    } else {
        let want_pos = n_pairs / 2;
        let want_neg = n_pairs - want_pos;
        let mut seen = HashSet::new();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        let (mut extra_pos, mut extra_neg) = (Vec::new(), Vec::new());
        let budget = 20 * n_pairs + 10_000;
        for _ in 0..budget {
            if pos.len() >= want_pos && neg.len() >= want_neg {
                break;
            }
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let p = (a.min(b), a.max(b));
            if !seen.insert(p) {
                continue;
            }
            match label(p.0, p.1) {
                Some(true) if pos.len() < want_pos => pos.push(p),
                Some(true) if extra_pos.len() < n_pairs => extra_pos.push(p),
                Some(false) if neg.len() < want_neg => neg.push(p),
                Some(false) if extra_neg.len() < n_pairs => extra_neg.push(p),
                _ => {}
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::NoPairs(format!("{what}: sampling found only one class")));
        }
        let short = n_pairs.saturating_sub(pos.len() + neg.len());
        pos.extend(extra_pos.into_iter().take(short));
        let short = n_pairs.saturating_sub(pos.len() + neg.len());
        neg.extend(extra_neg.into_iter().take(short));
        (pos, neg)
    };
    let mut out: Vec<LabeledPair> = pos
        .into_iter()
        .map(|p| (p, true))
        .chain(neg.into_iter().map(|p| (p, false)))
        .map(|((i, j), y)| LabeledPair {
            a: ids[i].to_string(),
            b: ids[j].to_string(),
            y,
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Pairs of judged images of `c`, positive when they share a relevant
/// concept.
pub fn sample_pairs(qrels: &Qrels, c: &Collection, n_pairs: usize, seed: u64) -> Result<Vec<LabeledPair>> {
    let labels = qrels.labels_by_image();
    let ids: Vec<&str> = c
        .images()
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| labels.contains_key(id))
        .collect();
    let sets: Vec<&BTreeSet<&str>> = ids.iter().map(|id| &labels[id]).collect();
    sample_labeled(&ids, n_pairs, seed, "training pairs", |i, j| {
        Some(!sets[i].is_disjoint(sets[j]))
    })
}

/// Pairs for one concept: positive when both images are relevant to `tag`,
/// negative when exactly one is.
pub fn sample_pairs_for_concept(
    qrels: &Qrels,
    tag: &str,
    c: &Collection,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let judged = qrels.judged_images();
    let ids: Vec<&str> = c
        .images()
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| judged.contains(id))
        .collect();
    let rel: Vec<bool> = ids.iter().map(|id| qrels.is_relevant(tag, id)).collect();
    sample_labeled(&ids, n_pairs, seed, &format!("pairs for `{tag}`"), |i, j| {
        match (rel[i], rel[j]) {
            (true, true) => Some(true),
            (false, false) => None,
            _ => Some(false),
        }
    })
}

/// Normalized per-feature distances for each pair (both images in `c`),
/// features in `normalizers` key order.
pub fn pair_distances(
    source: &Collection,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
    c: &Collection,
    pairs: &[LabeledPair],
) -> Result<Vec<Vec<f64>>> {
    pairs
        .par_iter()
        .map(|p| normalized_distances(source, normalizers, c, &p.a, c, &p.b))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmlConfig {
    pub initial_step: f64,
    pub min_step: f64,
    /// Stop once the relative loss decrease falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            min_step: 1e-8,
            tolerance: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmlResult {
    pub weights: WeightVector,
    pub loss: f64,
    /// Loss at the start and after every accepted step.
    pub trace: Vec<f64>,
}

/// `Σ (exp(−λ·d) − y)²`.
pub fn dml_loss(lambda: &[f64], distances: &[Vec<f64>], labels: &[bool]) -> f64 {
    distances
        .iter()
        .zip(labels)
        .map(|(d, &y)| {
            let e = (-dot(lambda, d)).exp();
            let r = e - f64::from(u8::from(y));
            r * r
        })
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dml_gradient(lambda: &[f64], distances: &[Vec<f64>], labels: &[bool]) -> Vec<f64> {
    let mut g = vec![0.0; lambda.len()];
    for (d, &y) in distances.iter().zip(labels) {
        let e = (-dot(lambda, d)).exp();
        let c = -2.0 * (e - f64::from(u8::from(y))) * e;
        for (gi, di) in g.iter_mut().zip(d) {
            *gi += c * di;
        }
    }
    g
}

/// Projected gradient descent on the simplex from uniform weights, with a
/// backtracking step that restarts at `initial_step` every iteration.
pub fn learn_distance_weights(
    names: Vec<String>,
    pairs: &[LabeledPair],
    distances: &[Vec<f64>],
    cfg: &DmlConfig,
) -> Result<DmlResult> {
    if pairs.is_empty() {
        return Err(Error::NoPairs("metric learning needs at least one pair".into()));
    }
    if pairs.len() != distances.len() {
        return Err(Error::LengthMismatch {
            left: pairs.len(),
            right: distances.len(),
        });
    }
    let m = names.len();
    if let Some(d) = distances.iter().find(|d| d.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: d.len(),
        });
    }
    let labels: Vec<bool> = pairs.iter().map(|p| p.y).collect();
    let mut lambda = WeightVector::uniform(names.clone())?.weights().to_vec();
    let mut loss = dml_loss(&lambda, distances, &labels);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut trace = vec![loss];
    if m > 1 {
        'outer: for _ in 0..cfg.max_iter {
            let g = dml_gradient(&lambda, distances, &labels);
            let mut eta = cfg.initial_step;
            let (cand, cand_loss) = loop {
                let step: Vec<f64> = lambda.iter().zip(&g).map(|(l, gi)| l - eta * gi).collect();
                let cand = project_to_simplex(&step);
                let cl = dml_loss(&cand, distances, &labels);
                if cl < loss {
                    break (cand, cl);
                }
                eta /= 2.0;
                if eta < cfg.min_step {
                    break 'outer;
                }
            };
            let rel = (loss - cand_loss) / loss.abs().max(f64::MIN_POSITIVE);
            lambda = cand;
            loss = cand_loss;
            trace.push(loss);
            if rel < cfg.tolerance {
                break;
            }
        }
    }
    Ok(DmlResult {
        weights: WeightVector::new(names, lambda)?,
        loss,
        trace,
    })
}

/// Rank metric optimized by coordinate ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    AveragePrecision,
    Ndcg(usize),
}

impl Metric {
    pub fn evaluate(&self, flags: &[bool]) -> f64 {
        match *self {
            Metric::AveragePrecision => average_precision(flags),
            Metric::Ndcg(c) => ndcg_at(flags, c),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let l = s.trim().to_ascii_lowercase();
        match l.as_str() {
            "ap" | "map" => Ok(Metric::AveragePrecision),
            "ndcg" | "mndcg" => Ok(Metric::Ndcg(NDCG_CUTOFF)),
            _ => l
                .strip_prefix("ndcg@")
                .and_then(|c| c.parse().ok())
                .filter(|&c: &usize| c >= 1)
                .map(Metric::Ndcg)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::AveragePrecision => write!(f, "AP"),
            Metric::Ndcg(c) => write!(f, "NDCG@{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentConfig {
    pub metric: Metric,
    pub initial_step: f64,
    pub growth: f64,
    /// Candidate steps are `initial_step · growth^j` for `j = 0..=max_doublings`.
    pub max_doublings: u32,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Perturbed starts tried after the uniform one.
    pub restarts: usize,
    pub seed: u64,
    /// Also try every ranking change point of a coordinate when the total
    /// number of change points is at most this; 0 disables.
    pub breakpoint_cap: usize,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            metric: Metric::AveragePrecision,
            initial_step: 0.05,
            growth: 2.0,
            max_doublings: 10,
            tolerance: 1e-6,
            max_sweeps: 50,
            restarts: 3,
            seed: 0,
            breakpoint_cap: 512,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidConfig("initial step must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("improvement tolerance must be positive".into()));
        }
        if self.max_doublings < 1 {
            return Err(Error::InvalidConfig("at least one step doubling is required".into()));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(Error::InvalidConfig("step growth must be at least 1".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidConfig("max sweeps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentMove {
    pub sweep: usize,
    pub coordinate: String,
    /// Normalized weight of the coordinate after the move.
    pub new_weight: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentRun {
    pub start: Vec<f64>,
    pub initial_objective: f64,
    pub moves: Vec<AscentMove>,
    pub weights: WeightVector,
    pub objective: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub weights: WeightVector,
    pub objective: f64,
    pub uniform_objective: f64,
    pub runs: Vec<AscentRun>,
    pub best_run: usize,
}

impl AscentResult {
    /// Accepted moves of the winning run.
    pub fn trace(&self) -> &[AscentMove] {
        &self.runs[self.best_run].moves
    }

    /// Training log, one `sweep<TAB>coordinate<TAB>new_weight<TAB>objective`
    /// line per accepted move of the winning run.
    pub fn log_text(&self, metric: Metric) -> String {
        let run = &self.runs[self.best_run];
        let mut out = String::new();
        let _ = writeln!(out, "# metric\t{metric}");
        let _ = writeln!(out, "# start\t{}", run.initial_objective);
        let _ = writeln!(out, "sweep\tcoordinate\tnew_weight\tobjective");
        for mv in &run.moves {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", mv.sweep, mv.coordinate, mv.new_weight, mv.objective);
        }
        out
    }
}

/// One training concept in evaluation-ready form: candidates in id order,
/// one score per estimator.
struct Concept {
    rank_grid: bool,
    scores: Vec<Vec<f64>>,
    relevant: Vec<bool>,
}

impl Concept {
    fn evaluate(&self, metric: Metric, weights: &[f64]) -> f64 {
        let n = self.scores.len();
        let fused: Vec<f64> = self
            .scores
            .iter()
            .map(|row| fuse_column(self.rank_grid, weights, n, row.iter().copied()))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| fused[b].total_cmp(&fused[a]));
        let flags: Vec<bool> = order.iter().map(|&i| self.relevant[i]).collect();
        metric.evaluate(&flags)
    }
}

fn prepare(concepts: &[Vec<ScoreTable>], qrels: &Qrels) -> Result<(Vec<String>, Vec<Concept>)> {
    let first = concepts
        .first()
        .ok_or_else(|| Error::NoRelevant("no training concepts".into()))?;
    let names: Vec<String> = first.iter().map(|t| t.estimator.clone()).collect();
    if names.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut out = Vec::with_capacity(concepts.len());
    for tables in concepts {
        let got: Vec<&str> = tables.iter().map(|t| t.estimator.as_str()).collect();
        if got != names.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::CandidateMismatch(format!(
                "estimators {got:?} differ from {names:?}"
            )));
        }
        let t0 = &tables[0];
        for t in &tables[1..] {
            if t.tag != t0.tag || !t.same_candidates(t0) {
                return Err(Error::CandidateMismatch(format!(
                    "`{}` and `{}` disagree on the candidates of `{}`",
                    t0.estimator, t.estimator, t0.tag
                )));
            }
        }
        let scores = t0
            .entries
            .keys()
            .map(|id| tables.iter().map(|t| t.entries[id]).collect())
            .collect();
        let relevant = t0.entries.keys().map(|id| qrels.is_relevant(&t0.tag, id)).collect();
        out.push(Concept {
            rank_grid: tables.iter().all(|t| t.kind == ScoreKind::RankMax),
            scores,
            relevant,
        });
    }
    if !out.iter().any(|c| c.relevant.iter().any(|&r| r)) {
        return Err(Error::NoRelevant("no training concept has a relevant candidate".into()));
    }
    Ok((names, out))
}

struct Objective<'a> {
    concepts: &'a [Concept],
    metric: Metric,
}

impl Objective<'_> {
    /// Mean metric over concepts under `raw` weights renormalized to the
    /// simplex; `None` when they sum to zero.
    fn eval(&self, names: &[String], raw: &[f64]) -> Option<f64> {
        let wv = WeightVector::new(names.to_vec(), raw.to_vec()).ok()?;
        let w = wv.weights();
        let total: f64 = self.concepts.iter().map(|c| c.evaluate(self.metric, w)).sum();
        Some(total / self.concepts.len() as f64)
    }

    /// Values of coordinate `i` at which some pair of candidates swaps
    /// order, or `None` when there are more than `cap`.
    fn breakpoints(&self, raw: &[f64], i: usize, cap: usize) -> Option<Vec<f64>> {
        if cap == 0 {
            return None;
        }
        let mut out = Vec::new();
        for c in self.concepts {
            let n = c.scores.len();
            if out.len() + n * n.saturating_sub(1) / 2 > cap.saturating_mul(4) {
                return None;
            }
            let a: Vec<f64> = c
                .scores
                .iter()
                .map(|row| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, s)| raw[j] * s).sum())
                .collect();
            for x in 0..n {
                for y in x + 1..n {
                    let db = c.scores[x][i] - c.scores[y][i];
                    if db != 0.0 {
                        let t = (a[y] - a[x]) / db;
                        if t > 0.0 && t.is_finite() {
                            out.push(t);
                        }
                    }
                }
            }
            if out.len() > cap {
                return None;
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        Some(out)
    }
}

fn ascent_run(
    names: &[String],
    obj: &Objective,
    cfg: &AscentConfig,
    start: Vec<f64>,
) -> Result<AscentRun> {
    let m = names.len();
    let mut raw = start.clone();
    let initial = obj
        .eval(names, &raw)
        .ok_or_else(|| Error::InvalidWeights("start weights sum to zero".into()))?;
    let mut current = initial;
    let mut moves = Vec::new();
    let mut sweeps = 0;
    for sweep in 1..=cfg.max_sweeps {
        sweeps = sweep;
        let mut improved = false;
        for i in 0..m {
            let mut cands = Vec::new();
            let mut step = cfg.initial_step;
            for _ in 0..=cfg.max_doublings {
                cands.push(raw[i] + step);
                cands.push((raw[i] - step).max(0.0));
                step *= cfg.growth;
            }
            if let Some(bp) = obj.breakpoints(&raw, i, cfg.breakpoint_cap) {
                cands.push(0.0);
                let mut prev = 0.0;
                for &t in &bp {
                    cands.push(0.5 * (prev + t));
                    cands.push(t);
                    prev = t;
                }
                cands.push(2.0 * prev + 1.0);
            }
            let mut best: Option<(f64, f64)> = None;
            let mut trial = raw.clone();
            for v in cands {
                if v == raw[i] {
                    continue;
                }
                trial[i] = v;
                if let Some(e) = obj.eval(names, &trial) {
                    if best.is_none_or(|(_, b)| e > b) {
                        best = Some((v, e));
                    }
                }
            }
            if let Some((v, e)) = best {
                if e > current + cfg.tolerance {
                    raw[i] = v;
                    current = e;
                    improved = true;
                    let wv = WeightVector::new(names.to_vec(), raw.clone())?;
                    moves.push(AscentMove {
                        sweep,
                        coordinate: names[i].clone(),
                        new_weight: wv.weights()[i],
                        objective: e,
                    });
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(AscentRun {
        start,
        initial_objective: initial,
        moves,
        weights: WeightVector::new(names.to_vec(), raw)?,
        objective: current,
        sweeps,
    })
}

/// Coordinate ascent over late fusion weights maximizing the mean training
/// metric. `concepts` holds, per training concept, the normalized base
/// tables in a common estimator order.
pub fn coordinate_ascent(concepts: &[Vec<ScoreTable>], qrels: &Qrels, cfg: &AscentConfig) -> Result<AscentResult> {
    cfg.validate()?;
    let (names, prepared) = prepare(concepts, qrels)?;
    let obj = Objective {
        concepts: &prepared,
        metric: cfg.metric,
    };
    let m = names.len();
    let uniform = vec![1.0 / m as f64; m];
    let uniform_objective = obj.eval(&names, &uniform).expect("uniform weights are valid");
    if m == 1 {
        let weights = WeightVector::new(names, vec![1.0])?;
        let run = AscentRun {
            start: vec![1.0],
            initial_objective: uniform_objective,
            moves: Vec::new(),
            weights: weights.clone(),
            objective: uniform_objective,
            sweeps: 0,
        };
        return Ok(AscentResult {
            weights,
            objective: uniform_objective,
            uniform_objective,
            runs: vec![run],
            best_run: 0,
        });
    }
    let mut runs = vec![ascent_run(&names, &obj, cfg, uniform.clone())?];
    for r in 0..cfg.restarts {
        let mut rng = seed::rng(seed::derive_seed(cfg.seed, &format!("restart-{r}")));
        let noisy: Vec<f64> = uniform
            .iter()
            .map(|u| u + rng.gen_range(-0.5..0.5) / m as f64)
            .collect();
        runs.push(ascent_run(&names, &obj, cfg, project_to_simplex(&noisy))?);
    }
    let mut best_run = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.objective > runs[best_run].objective {
            best_run = i;
        }
    }
    Ok(AscentResult {
        weights: runs[best_run].weights.clone(),
        objective: runs[best_run].objective,
        uniform_objective,
        runs,
        best_run,
    })
}

/// Weights learned for one concept, or the global weights when the concept
/// had too few relevant training items.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptWeights {
    pub weights: WeightVector,
    pub fallback: bool,
    /// Training metric (late) or loss (early); `None` for fallbacks.
    pub objective: Option<f64>,
}

fn fallback(global: &WeightVector) -> ConceptWeights {
    ConceptWeights {
        weights: global.clone(),
        fallback: true,
        objective: None,
    }
}

/// Coordinate ascent run independently per tag on that tag's candidates.
pub fn learn_per_concept(
    concepts: &BTreeMap<String, Vec<ScoreTable>>,
    qrels: &Qrels,
    cfg: &AscentConfig,
    min_pos: usize,
    global: &WeightVector,
) -> Result<BTreeMap<String, ConceptWeights>> {
    cfg.validate()?;
    let items: Vec<(&String, &Vec<ScoreTable>)> = concepts.iter().collect();
    items
        .par_iter()
        .map(|&(tag, tables)| {
            let names: Vec<String> = tables.iter().map(|t| t.estimator.clone()).collect();
            let global = global.aligned_to(&names)?;
            let n_rel = tables
                .first()
                .map(|t| t.entries.keys().filter(|id| qrels.is_relevant(tag, id)).count())
                .unwrap_or(0);
            if n_rel == 0 || n_rel < min_pos {
                return Ok((tag.clone(), fallback(&global)));
            }
            let local = AscentConfig {
                seed: seed::derive_seed(cfg.seed, tag),
                ..cfg.clone()
            };
            let res = coordinate_ascent(std::slice::from_ref(tables), qrels, &local)?;
            Ok((
                tag.clone(),
                ConceptWeights {
                    weights: res.weights,
                    fallback: false,
                    objective: Some(res.objective),
                },
            ))
        })
        .collect()
}

/// Global early fusion weights from pairs of judged images of `train`.
pub fn learn_early_global(
    source: &Collection,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
    train: &Collection,
    qrels: &Qrels,
    n_pairs: usize,
    cfg: &DmlConfig,
    seed: u64,
) -> Result<DmlResult> {
    let pairs = sample_pairs(qrels, train, n_pairs, seed)?;
    let d = pair_distances(source, normalizers, train, &pairs)?;
    learn_distance_weights(normalizers.keys().cloned().collect(), &pairs, &d, cfg)
}

/// Early fusion weights per tag, from that tag's positives against the other
/// judged images.
#[allow(clippy::too_many_arguments)]
pub fn learn_early_per_concept(
    source: &Collection,
    normalizers: &BTreeMap<String, DistanceNormalizer>,
    train: &Collection,
    qrels: &Qrels,
    tags: &[String],
    n_pairs: usize,
    cfg: &DmlConfig,
    min_pos: usize,
    global: &WeightVector,
    seed: u64,
) -> Result<BTreeMap<String, ConceptWeights>> {
    let names: Vec<String> = normalizers.keys().cloned().collect();
    let global = global.aligned_to(&names)?;
    tags.iter()
        .map(|tag| {
            let n_rel = train
                .images()
                .iter()
                .filter(|r| qrels.is_relevant(tag, &r.id))
                .count();
            if n_rel < min_pos.max(2) {
                return Ok((tag.clone(), fallback(&global)));
            }
            let pairs = match sample_pairs_for_concept(qrels, tag, train, n_pairs, seed::derive_seed(seed, tag)) {
                Ok(p) => p,
                Err(Error::NoPairs(_)) => return Ok((tag.clone(), fallback(&global))),
                Err(e) => return Err(e),
            };
            let d = pair_distances(source, normalizers, train, &pairs)?;
            let res = learn_distance_weights(names.clone(), &pairs, &d, cfg)?;
            Ok((
                tag.clone(),
                ConceptWeights {
                    weights: res.weights,
                    fallback: false,
                    objective: Some(res.loss),
                },
            ))
        })
        .collect()
}
