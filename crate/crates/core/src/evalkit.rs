//! Retrieval evaluation: AP, NDCG, means over concepts, the paired
//! randomization test, and run / qrels files.
//!
//! NDCG uses binary gains and the `log2(i + 1)` discount:
//! `DCG@c = Σ_{i ≤ c} rel_i / log2(i + 1)`, normalized by the DCG of the
//! ideal ordering. Unjudged images count as irrelevant.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore;

use crate::collection::GroundTruth;
use crate::error::{Error, Result};
use crate::estimators::ScoreTable;
use crate::seed;

pub const NDCG_CUTOFF: usize = 100;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;
/// Up to this many paired concepts the randomization test enumerates every
/// sign assignment.
pub const EXACT_LIMIT: usize = 20;

/// Average precision of a ranking given as relevance flags in rank order.
/// Zero when nothing in the ranking is relevant.
pub fn average_precision(flags: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// NDCG@`cutoff` with binary gains. Zero when nothing is relevant.
pub fn ndcg_at(flags: &[bool], cutoff: usize) -> f64 {
    let cutoff = cutoff.max(1);
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = flags
        .iter()
        .take(cutoff)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| discount(i))
        .sum();
    let n_rel = flags.iter().filter(|&&r| r).count();
    let idcg: f64 = (0..n_rel.min(cutoff)).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Relevance flags for a ranked list of ids.
pub fn relevance_flags<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> Vec<bool> {
    ranking.iter().map(|id| relevant.contains(id.as_ref())).collect()
}

/// Unweighted mean; `None` for no concepts.
pub fn mean_over_concepts(scores: &[f64]) -> Option<f64> {
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - 1e-9 * observed.abs().max(1e-12)
}

/// Two-sided paired randomization test on the mean difference.
///
/// Per-concept differences are sign-flipped: exhaustively for up to
/// [`EXACT_LIMIT`] concepts, otherwise with `n_perm` seeded draws. The
/// observed assignment is counted, so the p-value is always positive.
pub fn randomization_test(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig(
            "randomization test needs at least 2 paired concepts".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.len() <= EXACT_LIMIT {
        Ok(exact_sign_flip_p(&diffs))
    } else {
        monte_carlo_sign_flip_p(&diffs, n_perm, seed)
    }
}

/// Exact sign-flip p-value, enumerating all `2^n` assignments in Gray-code
/// order so each step updates the sum in O(1).
pub fn exact_sign_flip_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    assert!(n < 63, "exact enumeration limited to small n");
    let observed: f64 = diffs.iter().sum::<f64>().abs();
    let mut sum: f64 = diffs.iter().sum();
    let mut signs = vec![1.0f64; n];
    let mut count = u64::from(at_least(sum.abs(), observed));
    let total: u64 = 1 << n;
    for step in 1..total {
        let j = step.trailing_zeros() as usize;
        sum -= 2.0 * signs[j] * diffs[j];
        signs[j] = -signs[j];
        if at_least(sum.abs(), observed) {
            count += 1;
        }
    }
    count as f64 / total as f64
}

/// Monte-Carlo sign-flip p-value with the add-one convention.
pub fn monte_carlo_sign_flip_p(diffs: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::InvalidConfig("n_perm must be at least 1".into()));
    }
    let observed: f64 = diffs.iter().sum::<f64>().abs();
    let mut rng = seed::rng(seed);
    let mut count = 0usize;
    let mut bits = vec![0u64; diffs.len().div_ceil(64)];
    for _ in 0..n_perm {
        for b in bits.iter_mut() {
            *b = rng.next_u64();
        }
        let mut s = 0.0;
        for (i, d) in diffs.iter().enumerate() {
            if bits[i / 64] >> (i % 64) & 1 == 1 {
                s -= d;
            } else {
                s += d;
            }
        }
        if at_least(s.abs(), observed) {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (n_perm + 1) as f64)
}

/// Binary relevance judgments keyed by tag, then image id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, bool>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: &str, image: &str, relevant: bool) {
        self.judgments
            .entry(tag.to_string())
            .or_default()
            .insert(image.to_string(), relevant);
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.judgments.contains_key(tag)
    }

    pub fn is_relevant(&self, tag: &str, image: &str) -> bool {
        self.judgments
            .get(tag)
            .and_then(|m| m.get(image))
            .copied()
            .unwrap_or(false)
    }

    pub fn relevant(&self, tag: &str) -> BTreeSet<String> {
        self.judgments
            .get(tag)
            .map(|m| m.iter().filter(|(_, &r)| r).map(|(k, _)| k.clone()).collect())
            .unwrap_or_default()
    }

    /// Every judged image id, across tags.
    pub fn judged_images(&self) -> BTreeSet<&str> {
        self.judgments
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect()
    }

    /// Positive labels per image.
    pub fn labels_by_image(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (tag, m) in &self.judgments {
            for (img, &rel) in m {
                let e = out.entry(img.as_str()).or_default();
                if rel {
                    e.insert(tag.as_str());
                }
            }
        }
        out
    }

    /// Judgments restricted to images in `ids`.
    pub fn restricted_to(&self, ids: &HashSet<&str>) -> Qrels {
        let mut q = Qrels::new();
        for (tag, m) in &self.judgments {
            for (img, &rel) in m {
                if ids.contains(img.as_str()) {
                    q.insert(tag, img, rel);
                }
            }
        }
        q
    }

    pub fn from_ground_truth(truth: &GroundTruth) -> Self {
        let mut q = Qrels::new();
        for (tag, ids) in truth {
            q.judgments.entry(tag.clone()).or_default();
            for id in ids {
                q.insert(tag, id, true);
            }
        }
        q
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, m) in &self.judgments {
            for (img, &rel) in m {
                let _ = writeln!(out, "{tag}\t{img}\t{}", u8::from(rel));
            }
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut q = Qrels::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, n + 1, format!("expected 3 fields, found {}", f.len())));
            }
            let rel = match f[2].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(path, n + 1, format!("relevance must be 0 or 1, got `{other}`")))
                }
            };
            q.insert(f[0], f[1], rel);
        }
        Ok(q)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Ranked output of one system: per tag, `(image_id, score)` by descending
/// score with ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub run_id: String,
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            rankings: BTreeMap::new(),
        }
    }

    pub fn from_tables<'a>(run_id: &str, tables: impl IntoIterator<Item = &'a ScoreTable>) -> Self {
        let mut run = RunFile::new(run_id);
        for t in tables {
            run.rankings.insert(
                t.tag.clone(),
                t.ranking().into_iter().map(|(id, s)| (id.to_string(), s)).collect(),
            );
        }
        run
    }

    pub fn ranked_ids(&self, tag: &str) -> Vec<&str> {
        self.rankings
            .get(tag)
            .map(|v| v.iter().map(|(id, _)| id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (tag, list) in &self.rankings {
            for (i, (id, score)) in list.iter().enumerate() {
                let _ = writeln!(out, "{tag}\t{id}\t{}\t{score}\t{}", i + 1, self.run_id);
            }
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut run_id: Option<String> = None;
        let mut rankings: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(path, lineno, format!("expected 5 fields, found {}", f.len())));
            }
            let (tag, id) = (f[0], f[1]);
            let rank: usize = f[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad rank `{}`", f[2])))?;
            let score: f64 = f[3]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad score `{}`", f[3])))?;
            if !score.is_finite() {
                return Err(Error::parse(path, lineno, "non-finite score"));
            }
            match &run_id {
                None => run_id = Some(f[4].to_string()),
                Some(r) if r != f[4] => {
                    return Err(Error::parse(path, lineno, format!("mixed run ids `{r}` and `{}`", f[4])))
                }
                _ => {}
            }
            if !seen.insert((tag.to_string(), id.to_string())) {
                return Err(Error::parse(path, lineno, format!("duplicate image `{id}` for tag `{tag}`")));
            }
            let list = rankings.entry(tag.to_string()).or_default();
            if rank != list.len() + 1 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("rank {rank} for tag `{tag}` is not contiguous"),
                ));
            }
            if let Some((prev_id, prev)) = list.last() {
                if score > *prev || (score == *prev && id < prev_id.as_str()) {
                    return Err(Error::parse(path, lineno, "ranking not ordered by score and id"));
                }
            }
            list.push((id.to_string(), score));
        }
        Ok(RunFile {
            run_id: run_id.unwrap_or_default(),
            rankings,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptScore {
    pub tag: String,
    pub ap: f64,
    pub ndcg: f64,
    /// The tag has no judgments in the qrels.
    pub unjudged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub run_id: String,
    pub concepts: Vec<ConceptScore>,
}

impl RunEvaluation {
    pub fn map(&self) -> f64 {
        mean_over_concepts(&self.aps()).unwrap_or(0.0)
    }

    pub fn mndcg(&self) -> f64 {
        mean_over_concepts(&self.ndcgs()).unwrap_or(0.0)
    }

    pub fn aps(&self) -> Vec<f64> {
        self.concepts.iter().map(|c| c.ap).collect()
    }

    pub fn ndcgs(&self) -> Vec<f64> {
        self.concepts.iter().map(|c| c.ndcg).collect()
    }
}

pub fn evaluate_run(run: &RunFile, qrels: &Qrels, cutoff: usize) -> RunEvaluation {
    let concepts = run
        .rankings
        .keys()
        .map(|tag| {
            let relevant = qrels.relevant(tag);
            let flags = relevance_flags(&run.ranked_ids(tag), &relevant);
            ConceptScore {
                tag: tag.clone(),
                ap: average_precision(&flags),
                ndcg: ndcg_at(&flags, cutoff),
                unjudged: !qrels.has_tag(tag),
            }
        })
        .collect();
    RunEvaluation {
        run_id: run.run_id.clone(),
        concepts,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub p_ap: f64,
    pub p_ndcg: f64,
}

/// Pairwise tests over the concepts shared by each pair of runs.
pub fn pairwise_tests(evals: &[RunEvaluation], n_perm: usize, seed: u64) -> Result<Vec<PairwiseTest>> {
    let mut out = Vec::new();
    for i in 0..evals.len() {
        for j in i + 1..evals.len() {
            let (ea, eb) = (&evals[i], &evals[j]);
            let bmap: BTreeMap<&str, &ConceptScore> =
                eb.concepts.iter().map(|c| (c.tag.as_str(), c)).collect();
            let (mut aa, mut ba, mut an, mut bn) = (vec![], vec![], vec![], vec![]);
            for c in &ea.concepts {
                if let Some(d) = bmap.get(c.tag.as_str()) {
                    aa.push(c.ap);
                    ba.push(d.ap);
                    an.push(c.ndcg);
                    bn.push(d.ndcg);
                }
            }
            out.push(PairwiseTest {
                a: ea.run_id.clone(),
                b: eb.run_id.clone(),
                p_ap: randomization_test(&aa, &ba, n_perm, seed)?,
                p_ndcg: randomization_test(&an, &bn, n_perm, seed)?,
            });
        }
    }
    Ok(out)
}

/// Plain-text report: one `concept<TAB>AP<TAB>NDCG@100` block per run with
/// mAP / mNDCG, then pairwise p-values.
pub fn format_report(evals: &[RunEvaluation], tests: &[PairwiseTest], cutoff: usize) -> String {
    let mut out = String::new();
    for e in evals {
        let _ = writeln!(out, "# run\t{}", e.run_id);
        let _ = writeln!(out, "concept\tAP\tNDCG@{cutoff}");
        for c in &e.concepts {
            let flag = if c.unjudged { "\tunjudged" } else { "" };
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}{flag}", c.tag, c.ap, c.ndcg);
        }
        let _ = writeln!(out, "mAP\t{:.6}", e.map());
        let _ = writeln!(out, "mNDCG\t{:.6}", e.mndcg());
        out.push('\n');
    }
    if !tests.is_empty() {
        let _ = writeln!(out, "# randomization test");
        let _ = writeln!(out, "run_a\trun_b\tp_AP\tp_NDCG");
        for t in tests {
            let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.6}", t.a, t.b, t.p_ap, t.p_ndcg);
        }
    }
    out
}
