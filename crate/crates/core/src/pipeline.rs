//! Named scoring presets and the drivers behind the command line.
//!
//! Fusion presets are `<Early|Late>-<minmax|rankmax>-<average|learning|learning+>`:
//!
//! - `Early-*` searches neighbors under the weighted sum of normalized
//!   per-feature distances and votes over them.
//! - `Late-*` normalizes each member estimator's table and fuses the tables
//!   linearly. Members default to `TagRel-<feature>` for every configured
//!   feature and may include the baselines for heterogeneous fusion.
//! - `average` uses uniform weights, `learning` one learned global weight
//!   vector, `learning+` learned weights per tag (global for untrained tags).
//!
//! Base presets are `TagRel-<feature>`, `TagPosition`, `SemanticField` and
//! `TagRanking[-<feature>]`; they emit raw, unnormalized scores.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::collection::Collection;
use crate::error::{Error, Result};
use crate::estimators::{
    build_tag_similarity, kde_table, semantic_field_table, tag_position_table, KdeModel, NeighborVoter,
    ScoreTable, TagSimilarityModel, DEFAULT_KDE_SAMPLE_CAP,
};
use crate::evalkit::Qrels;
use crate::fusion::{average_fuse, late_fuse, minmax_auto, rankmax_normalize};
use crate::learning::{
    coordinate_ascent, learn_early_global, learn_early_per_concept, learn_per_concept, AscentConfig,
    ConceptWeights, DmlConfig,
};
use crate::neighbors::{calibrate_normalizer, DistanceNormalizer, NormMode, Space, WeightVector};
use crate::seed::derive_seed;

/// Feature slots used when none are configured.
pub const DEFAULT_FEATURES: [&str; 4] = ["COLOR", "CSLBP", "GIST", "DSIFT"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weighting {
    Average,
    Learning,
    LearningPlus,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Fusion {
        scheme: Scheme,
        norm: NormMode,
        weighting: Weighting,
    },
    TagRel(String),
    TagPosition,
    SemanticField,
    /// KDE tag ranking; `None` uses the configured KDE feature.
    TagRanking(Option<String>),
}

impl Preset {
    /// The twelve fusion presets, then one `TagRel` per feature and the
    /// three heterogeneous baselines.
    pub fn all<S: AsRef<str>>(features: &[S]) -> Vec<Preset> {
        let mut out = Vec::new();
        for scheme in [Scheme::Early, Scheme::Late] {
            for norm in [NormMode::MinMax, NormMode::RankMax] {
                for weighting in [Weighting::Average, Weighting::Learning, Weighting::LearningPlus] {
                    out.push(Preset::Fusion {
                        scheme,
                        norm,
                        weighting,
                    });
                }
            }
        }
        out.extend(features.iter().map(|f| Preset::TagRel(f.as_ref().to_string())));
        out.extend([Preset::TagPosition, Preset::SemanticField, Preset::TagRanking(None)]);
        out
    }

    pub fn is_fusion(&self) -> bool {
        matches!(self, Preset::Fusion { .. })
    }

    /// `<Scheme>-<norm>` stem shared by the learned presets of one family.
    pub fn family(&self) -> Option<String> {
        match self {
            Preset::Fusion { scheme, norm, .. } => Some(format!("{scheme}-{norm}")),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Early => "Early",
            Scheme::Late => "Late",
        })
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Average => "average",
            Weighting::Learning => "learning",
            Weighting::LearningPlus => "learning+",
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Fusion {
                scheme,
                norm,
                weighting,
            } => write!(f, "{scheme}-{norm}-{weighting}"),
            Preset::TagRel(feat) => write!(f, "TagRel-{feat}"),
            Preset::TagPosition => f.write_str("TagPosition"),
            Preset::SemanticField => f.write_str("SemanticField"),
            Preset::TagRanking(None) => f.write_str("TagRanking"),
            Preset::TagRanking(Some(feat)) => write!(f, "TagRanking-{feat}"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownPreset(s.to_string());
        let s = s.trim();
        if s.eq_ignore_ascii_case("TagPosition") {
            return Ok(Preset::TagPosition);
        }
        if s.eq_ignore_ascii_case("SemanticField") {
            return Ok(Preset::SemanticField);
        }
        if s.eq_ignore_ascii_case("TagRanking") {
            return Ok(Preset::TagRanking(None));
        }
        let (head, rest) = s.split_once('-').ok_or_else(unknown)?;
        if rest.is_empty() {
            return Err(unknown());
        }
        match head.to_ascii_lowercase().as_str() {
            "tagrel" => return Ok(Preset::TagRel(rest.to_string())),
            "tagranking" => return Ok(Preset::TagRanking(Some(rest.to_string()))),
            _ => {}
        }
        let scheme = match head.to_ascii_lowercase().as_str() {
            "early" => Scheme::Early,
            "late" => Scheme::Late,
            _ => return Err(unknown()),
        };
        let (norm, weighting) = rest.split_once('-').ok_or_else(unknown)?;
        let norm = match norm.to_ascii_lowercase().as_str() {
            "minmax" => NormMode::MinMax,
            "rankmax" => NormMode::RankMax,
            _ => return Err(unknown()),
        };
        let weighting = match weighting.to_ascii_lowercase().as_str() {
            "average" => Weighting::Average,
            "learning" => Weighting::Learning,
            "learning+" => Weighting::LearningPlus,
            _ => return Err(unknown()),
        };
        Ok(Preset::Fusion {
            scheme,
            norm,
            weighting,
        })
    }
}

/// Estimator and fusion parameters shared by scoring and learning.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub k: usize,
    /// Visual features fused by the `Early` presets and, by default, the
    /// `Late` presets.
    pub features: Vec<String>,
    /// Base presets fused by `Late` presets; empty means `TagRel` per feature.
    pub late_members: Vec<String>,
    /// Feature for `TagRanking` without an explicit feature; defaults to the
    /// first configured feature.
    pub kde_feature: Option<String>,
    pub kde_sigma: Option<f64>,
    pub kde_sample_cap: usize,
    /// Random pairs used to calibrate MinMax distance bounds.
    pub calibration_pairs: usize,
    pub similarity_min_count: usize,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            k: 500,
            features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            late_members: Vec::new(),
            kde_feature: None,
            kde_sigma: None,
            kde_sample_cap: DEFAULT_KDE_SAMPLE_CAP,
            calibration_pairs: 10_000,
            similarity_min_count: 1,
            seed: 0,
        }
    }
}

impl ScoringConfig {
    pub fn members(&self) -> Result<Vec<Preset>> {
        if self.late_members.is_empty() {
            return Ok(self.features.iter().map(|f| Preset::TagRel(f.clone())).collect());
        }
        self.late_members
            .iter()
            .map(|m| {
                let p: Preset = m.parse()?;
                if p.is_fusion() {
                    return Err(Error::InvalidConfig(format!("late member `{m}` is itself a fusion preset")));
                }
                Ok(p)
            })
            .collect()
    }

    pub fn kde_feature(&self) -> Result<&str> {
        match &self.kde_feature {
            Some(f) => Ok(f),
            None => self
                .features
                .first()
                .map(String::as_str)
                .ok_or_else(|| Error::InvalidConfig("no feature configured for TagRanking".into())),
        }
    }
}

/// Learned weights of one preset family.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedWeights {
    pub global: Option<WeightVector>,
    pub per_concept: BTreeMap<String, ConceptWeights>,
}

impl LearnedWeights {
    fn for_tag(&self, preset: &Preset, tag: &str) -> Result<&WeightVector> {
        let plus = matches!(
            preset,
            Preset::Fusion {
                weighting: Weighting::LearningPlus,
                ..
            }
        );
        if plus {
            if let Some(cw) = self.per_concept.get(tag) {
                return Ok(&cw.weights);
            }
        }
        self.global
            .as_ref()
            .ok_or_else(|| Error::MissingWeights(format!("no global weights for {preset} (tag `{tag}`)")))
    }
}

/// Scores the candidates of `target` with neighbors and kernel support from
/// `source`.
pub struct Scorer<'a> {
    source: &'a Collection,
    target: &'a Collection,
    cfg: &'a ScoringConfig,
}

/// Per-tag outcome of a scoring run.
pub type TagTables = BTreeMap<String, Result<ScoreTable>>;

impl<'a> Scorer<'a> {
    pub fn new(source: &'a Collection, target: &'a Collection, cfg: &'a ScoringConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if source.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut needed: Vec<String> = cfg.features.clone();
        for m in cfg.members()? {
            match m {
                Preset::TagRel(f) | Preset::TagRanking(Some(f)) => needed.push(f),
                Preset::TagRanking(None) => needed.push(cfg.kde_feature()?.to_string()),
                _ => {}
            }
        }
        if let Some(f) = &cfg.kde_feature {
            needed.push(f.clone());
        }
        for f in &needed {
            source.feature(f)?;
            target.feature(f)?;
        }
        Ok(Self { source, target, cfg })
    }

    pub fn source(&self) -> &Collection {
        self.source
    }

    pub fn target(&self) -> &Collection {
        self.target
    }

    /// Distance normalizers for the configured features, calibrated on the
    /// source collection.
    pub fn normalizers(&self, mode: NormMode) -> Result<BTreeMap<String, DistanceNormalizer>> {
        self.cfg
            .features
            .iter()
            .map(|f| {
                let seed = derive_seed(self.cfg.seed, &format!("calibrate/{f}"));
                Ok((
                    f.clone(),
                    calibrate_normalizer(self.source, f, mode, self.cfg.calibration_pairs, seed)?,
                ))
            })
            .collect()
    }

    fn empty(name: &str, tag: &str) -> ScoreTable {
        ScoreTable::new(name, tag, BTreeMap::new())
    }

    /// Raw tables of a base preset for each tag.
    pub fn base_tables(&self, preset: &Preset, tags: &[&str]) -> Result<TagTables> {
        let name = preset.to_string();
        match preset {
            Preset::Fusion { .. } => Err(Error::InvalidConfig(format!("{name} is not a base estimator"))),
            Preset::TagRel(feature) => {
                self.source.feature(feature)?;
                let space = Space::Single(feature.clone());
                let voter = NeighborVoter::for_tags(self.source, self.target, &space, tags, self.cfg.k)?;
                Ok(tags
                    .iter()
                    .map(|&t| (t.to_string(), voter.table(&name, self.target, t)))
                    .collect())
            }
            Preset::TagPosition => Ok(tags
                .iter()
                .map(|&t| (t.to_string(), tag_position_table(&name, self.target, t)))
                .collect()),
            Preset::SemanticField => {
                let model: TagSimilarityModel = build_tag_similarity(self.source, self.cfg.similarity_min_count)?;
                Ok(tags
                    .iter()
                    .map(|&t| (t.to_string(), semantic_field_table(&name, self.target, t, &model)))
                    .collect())
            }
            Preset::TagRanking(feature) => {
                let feature = match feature {
                    Some(f) => f.as_str(),
                    None => self.cfg.kde_feature()?,
                };
                self.source.feature(feature)?;
                Ok(tags
                    .par_iter()
                    .map(|&t| {
                        let table = if self.target.tag_count(t) == 0 {
                            Ok(Self::empty(&name, t))
                        } else {
                            let seed = derive_seed(self.cfg.seed, &format!("kde/{feature}/{t}"));
                            KdeModel::fit(
                                self.source,
                                t,
                                feature,
                                self.cfg.kde_sigma,
                                self.cfg.kde_sample_cap,
                                seed,
                            )
                            .and_then(|m| kde_table(&name, self.source, self.target, t, &m))
                        };
                        (t.to_string(), table)
                    })
                    .collect())
            }
        }
    }

    /// Normalized member tables per tag, in member order, as fused by the
    /// `Late` presets and consumed by late-fusion learning.
    pub fn late_member_tables(&self, norm: NormMode, tags: &[&str]) -> Result<BTreeMap<String, Result<Vec<ScoreTable>>>> {
        let members = self.cfg.members()?;
        let mut per_member = Vec::with_capacity(members.len());
        for m in &members {
            per_member.push(self.base_tables(m, tags)?);
        }
        let mut out = BTreeMap::new();
        for &t in tags {
            let tables: Result<Vec<ScoreTable>> = per_member
                .iter_mut()
                .map(|bt| {
                    let raw = bt.remove(t).expect("every tag scored")?;
                    if raw.is_empty() {
                        return Ok(raw);
                    }
                    match norm {
                        NormMode::MinMax => minmax_auto(&raw),
                        NormMode::RankMax => rankmax_normalize(&raw),
                        NormMode::None => Ok(raw),
                    }
                })
                .collect();
            out.insert(t.to_string(), tables);
        }
        Ok(out)
    }

    fn early_space(
        &self,
        wv: &WeightVector,
        normalizers: &BTreeMap<String, DistanceNormalizer>,
    ) -> Result<Space> {
        let names: Vec<String> = normalizers.keys().cloned().collect();
        Space::combined(wv.aligned_to(&names)?, normalizers.clone())
    }

    /// Scores every tag under `preset`. Errors that concern the whole run
    /// (unknown features, missing weights) are returned directly; failures
    /// of single tags are reported per tag.
    pub fn score(&self, preset: &Preset, tags: &[&str], weights: Option<&LearnedWeights>) -> Result<TagTables> {
        let name = preset.to_string();
        let (scheme, norm, weighting) = match preset {
            Preset::Fusion {
                scheme,
                norm,
                weighting,
            } => (*scheme, *norm, *weighting),
            base => return self.base_tables(base, tags),
        };
        let learned = match weighting {
            Weighting::Average => None,
            _ => Some(weights.ok_or_else(|| Error::MissingWeights(format!("{name} needs learned weights")))?),
        };
        match scheme {
            Scheme::Early => {
                if self.cfg.features.is_empty() {
                    return Err(Error::InvalidConfig("early fusion needs at least one feature".into()));
                }
                let normalizers = self.normalizers(norm)?;
                let names: Vec<String> = normalizers.keys().cloned().collect();
                let mut out = TagTables::new();
                match learned {
                    Some(lw) if weighting == Weighting::LearningPlus => {
                        for &t in tags {
                            let space = self.early_space(lw.for_tag(preset, t)?, &normalizers)?;
                            let voter = NeighborVoter::for_tags(self.source, self.target, &space, &[t], self.cfg.k)?;
                            out.insert(t.to_string(), voter.table(&name, self.target, t));
                        }
                    }
                    _ => {
                        let wv = match learned {
                            Some(lw) => lw.for_tag(preset, "")?.clone(),
                            None => WeightVector::uniform(names)?,
                        };
                        let space = self.early_space(&wv, &normalizers)?;
                        let voter = NeighborVoter::for_tags(self.source, self.target, &space, tags, self.cfg.k)?;
                        for &t in tags {
                            out.insert(t.to_string(), voter.table(&name, self.target, t));
                        }
                    }
                }
                Ok(out)
            }
            Scheme::Late => {
                let members = self.late_member_tables(norm, tags)?;
                if let Some(lw) = learned {
                    for &t in tags {
                        lw.for_tag(preset, t)?;
                    }
                }
                Ok(members
                    .into_iter()
                    .map(|(t, tables)| {
                        let fused = tables.and_then(|tables| {
                            if tables.iter().all(ScoreTable::is_empty) {
                                return Ok(Self::empty(&name, &t));
                            }
                            let mut fused = match learned {
                                None => average_fuse(&tables)?,
                                Some(lw) => {
                                    let names: Vec<String> = tables.iter().map(|x| x.estimator.clone()).collect();
                                    late_fuse(&tables, &lw.for_tag(preset, &t)?.aligned_to(&names)?)?
                                }
                            };
                            fused.estimator = name.clone();
                            Ok(fused)
                        });
                        (t, fused)
                    })
                    .collect())
            }
        }
    }
}

/// Learning parameters of the `learning` / `learning+` presets.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub ascent: AscentConfig,
    pub dml: DmlConfig,
    /// Labeled pairs sampled for metric learning.
    pub n_pairs: usize,
    /// Concepts with fewer relevant training items use the global weights.
    pub min_pos: usize,
    pub per_concept: bool,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            ascent: AscentConfig::default(),
            dml: DmlConfig::default(),
            n_pairs: 2000,
            min_pos: 1,
            per_concept: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnOutput {
    pub weights: LearnedWeights,
    /// Training log of the global learner.
    pub log: String,
}

/// Learns the weights for `preset`'s family on `scorer`'s target (the
/// training collection) against `qrels`, for `tags`.
pub fn learn(scorer: &Scorer, preset: &Preset, qrels: &Qrels, tags: &[&str], cfg: &LearnConfig) -> Result<LearnOutput> {
    let (scheme, norm) = match preset {
        Preset::Fusion { scheme, norm, .. } => (*scheme, *norm),
        other => return Err(Error::InvalidConfig(format!("{other} has no weights to learn"))),
    };
    let tags: Vec<&str> = tags
        .iter()
        .copied()
        .filter(|t| qrels.has_tag(t) && scorer.target().tag_count(t) > 0)
        .collect();
    if tags.is_empty() {
        return Err(Error::NoRelevant("no judged tag has training candidates".into()));
    }
    match scheme {
        Scheme::Early => {
            let normalizers = scorer.normalizers(norm)?;
            let res = learn_early_global(
                scorer.source(),
                &normalizers,
                scorer.target(),
                qrels,
                cfg.n_pairs,
                &cfg.dml,
                derive_seed(cfg.seed, "pairs/global"),
            )?;
            let mut log = String::from("# loss\nstep\tloss\n");
            for (i, l) in res.trace.iter().enumerate() {
                let _ = writeln!(log, "{i}\t{l}");
            }
            let per_concept = if cfg.per_concept {
                let owned: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
                learn_early_per_concept(
                    scorer.source(),
                    &normalizers,
                    scorer.target(),
                    qrels,
                    &owned,
                    cfg.n_pairs,
                    &cfg.dml,
                    cfg.min_pos,
                    &res.weights,
                    derive_seed(cfg.seed, "pairs/concept"),
                )?
            } else {
                BTreeMap::new()
            };
            Ok(LearnOutput {
                weights: LearnedWeights {
                    global: Some(res.weights),
                    per_concept,
                },
                log,
            })
        }
        Scheme::Late => {
            let mut concepts = BTreeMap::new();
            for (t, tables) in scorer.late_member_tables(norm, &tags)? {
                concepts.insert(t, tables?);
            }
            let ascent = AscentConfig {
                seed: derive_seed(cfg.seed, "ascent/global"),
                ..cfg.ascent.clone()
            };
            let all: Vec<Vec<ScoreTable>> = concepts.values().cloned().collect();
            let res = coordinate_ascent(&all, qrels, &ascent)?;
            let per_concept = if cfg.per_concept {
                let local = AscentConfig {
                    seed: derive_seed(cfg.seed, "ascent/concept"),
                    ..cfg.ascent.clone()
                };
                learn_per_concept(&concepts, qrels, &local, cfg.min_pos, &res.weights)?
            } else {
                BTreeMap::new()
            };
            Ok(LearnOutput {
                log: res.log_text(cfg.ascent.metric),
                weights: LearnedWeights {
                    global: Some(res.weights),
                    per_concept,
                },
            })
        }
    }
}

/// `# global` header, then `name<TAB>weight` lines.
pub fn global_weights_text(wv: &WeightVector) -> String {
    let mut out = String::from("# global\n");
    for (n, w) in wv.names().iter().zip(wv.weights()) {
        let _ = writeln!(out, "{n}\t{w}");
    }
    out
}

fn parse_weight(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad weight `{s}`")))
}

pub fn parse_global_weights(path: &Path, text: &str) -> Result<WeightVector> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "# global" => {}
        Some((n, _)) => return Err(Error::parse(path, n + 1, "expected `# global` header")),
        None => return Err(Error::parse(path, 1, "empty weight file")),
    }
    let (mut names, mut weights) = (Vec::new(), Vec::new());
    for (n, l) in lines {
        if l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 2 {
            return Err(Error::parse(path, n + 1, format!("expected 2 fields, found {}", f.len())));
        }
        if names.iter().any(|x| x == f[0]) {
            return Err(Error::parse(path, n + 1, format!("duplicate weight for `{}`", f[0])));
        }
        names.push(f[0].to_string());
        weights.push(parse_weight(path, n + 1, f[1])?);
    }
    WeightVector::from_simplex(names, weights)
}

/// `# per-concept` header, then `tag<TAB>name<TAB>weight` lines. Fallback
/// concepts are preceded by a `# fallback<TAB>tag` comment.
pub fn concept_weights_text(per_concept: &BTreeMap<String, ConceptWeights>) -> String {
    let mut out = String::from("# per-concept\n");
    for (tag, cw) in per_concept {
        if cw.fallback {
            let _ = writeln!(out, "# fallback\t{tag}");
        }
        for (n, w) in cw.weights.names().iter().zip(cw.weights.weights()) {
            let _ = writeln!(out, "{tag}\t{n}\t{w}");
        }
    }
    out
}

pub fn parse_concept_weights(path: &Path, text: &str) -> Result<BTreeMap<String, ConceptWeights>> {
    let mut raw: BTreeMap<String, (Vec<String>, Vec<f64>)> = BTreeMap::new();
    let mut fallbacks = std::collections::BTreeSet::new();
    let mut header = false;
    for (n, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        if !header {
            if l.trim() != "# per-concept" {
                return Err(Error::parse(path, n + 1, "expected `# per-concept` header"));
            }
            header = true;
            continue;
        }
        if let Some(rest) = l.strip_prefix("# fallback\t") {
            fallbacks.insert(rest.trim().to_string());
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::parse(path, n + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let e = raw.entry(f[0].to_string()).or_default();
        if e.0.iter().any(|x| x == f[1]) {
            return Err(Error::parse(path, n + 1, format!("duplicate weight for `{}` under `{}`", f[1], f[0])));
        }
        e.0.push(f[1].to_string());
        e.1.push(parse_weight(path, n + 1, f[2])?);
    }
    if !header {
        return Err(Error::parse(path, 1, "empty weight file"));
    }
    raw.into_iter()
        .map(|(tag, (names, w))| {
            let fallback = fallbacks.contains(&tag);
            Ok((
                tag,
                ConceptWeights {
                    weights: WeightVector::from_simplex(names, w)?,
                    fallback,
                    objective: None,
                },
            ))
        })
        .collect()
}

/// File names used for a preset family's learned weights and log.
pub fn weight_file_names(family: &str) -> (String, String, String) {
    (
        format!("{family}.global.tsv"),
        format!("{family}.per-concept.tsv"),
        format!("{family}.log"),
    )
}

/// Writes the learned weights of `family` into `dir`.
pub fn write_learned(dir: &Path, family: &str, out: &LearnOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (g, c, l) = weight_file_names(family);
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    if let Some(gw) = &out.weights.global {
        write(&g, global_weights_text(gw))?;
    }
    if !out.weights.per_concept.is_empty() {
        write(&c, concept_weights_text(&out.weights.per_concept))?;
    }
    write(&l, out.log.clone())
}

/// Reads whatever learned weights of `family` exist in `dir`.
pub fn read_learned(dir: &Path, family: &str) -> Result<LearnedWeights> {
    let (g, c, _) = weight_file_names(family);
    let read = |name: &str| -> Result<Option<(std::path::PathBuf, String)>> {
        let p = dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some((p, text)))
    };
    let global = match read(&g)? {
        Some((p, t)) => Some(parse_global_weights(&p, &t)?),
        None => None,
    };
    let per_concept = match read(&c)? {
        Some((p, t)) => parse_concept_weights(&p, &t)?,
        None => BTreeMap::new(),
    };
    if global.is_none() && per_concept.is_empty() {
        return Err(Error::MissingWeights(format!(
            "no weight files for `{family}` in {}",
            dir.display()
        )));
    }
    Ok(LearnedWeights { global, per_concept })
}
