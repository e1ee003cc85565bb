//! Tagged image collections.
//!
//! A [`Collection`] is immutable once built: image records in file order, one
//! [`FeatureMatrix`] per feature space, and an inverted tag index. Tag order
//! within a record is preserved because the tag-position estimator reads it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub user: String,
    pub tags: Vec<String>,
}

impl ImageRecord {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// 1-based position of `tag` in the record's tag list.
    pub fn position(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag).map(|p| p + 1)
    }
}

/// Row-major feature vectors, one row per image in collection order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    name: String,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(name: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature `{name}` must have positive dimension"
            )));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(Self { name, dim, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct Collection {
    images: Vec<ImageRecord>,
    index: HashMap<String, usize>,
    /// `id_rank[i]` is the position of image `i` when images are sorted by id.
    id_rank: Vec<u32>,
    features: BTreeMap<String, FeatureMatrix>,
    tag_index: BTreeMap<String, Vec<usize>>,
}

impl PartialEq for Collection {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images && self.features == other.features
    }
}

/// Lowercase, ASCII-folded tag token.
pub fn normalize_tag(raw: &str) -> String {
    let folded: String = deunicode::deunicode(raw)
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    if folded.is_empty() {
        raw.to_lowercase()
    } else {
        folded
    }
}

impl Collection {
    /// Validates records and feature matrices and builds the tag index.
    ///
    /// Feature rows must be aligned with `images`.
    pub fn new(images: Vec<ImageRecord>, features: Vec<FeatureMatrix>) -> Result<Self> {
        let mut index = HashMap::with_capacity(images.len());
        for (i, rec) in images.iter().enumerate() {
            if rec.id.is_empty() {
                return Err(Error::InvalidConfig("empty image id".into()));
            }
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(Error::DuplicateImage(rec.id.clone()));
            }
            let mut seen = HashSet::with_capacity(rec.tags.len());
            for t in &rec.tags {
                if !seen.insert(t.as_str()) {
                    return Err(Error::DuplicateTag {
                        image: rec.id.clone(),
                        tag: t.clone(),
                    });
                }
            }
        }

        let mut feature_map = BTreeMap::new();
        for fm in features {
            if fm.rows() != images.len() {
                let missing = images.get(fm.rows()).map(|r| r.id.clone()).unwrap_or_default();
                return Err(Error::MissingFeatureRow {
                    feature: fm.name.clone(),
                    image: missing,
                });
            }
            for (i, rec) in images.iter().enumerate() {
                if fm.row(i).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        feature: fm.name.clone(),
                        image: rec.id.clone(),
                    });
                }
            }
            if feature_map.contains_key(&fm.name) {
                return Err(Error::InvalidConfig(format!(
                    "feature `{}` given twice",
                    fm.name
                )));
            }
            feature_map.insert(fm.name.clone(), fm);
        }

        let tag_index = build_tag_index(&images);

        let mut order: Vec<usize> = (0..images.len()).collect();
        order.sort_by(|&a, &b| images[a].id.cmp(&images[b].id));
        let mut id_rank = vec![0u32; images.len()];
        for (rank, &i) in order.iter().enumerate() {
            id_rank[i] = rank as u32;
        }

        Ok(Self {
            images,
            index,
            id_rank,
            features: feature_map,
            tag_index,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &ImageRecord {
        &self.images[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn record(&self, id: &str) -> Result<&ImageRecord> {
        self.index_of(id)
            .map(|i| &self.images[i])
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    pub(crate) fn id_rank(&self, i: usize) -> u32 {
        self.id_rank[i]
    }

    pub fn feature(&self, name: &str) -> Result<&FeatureMatrix> {
        self.features
            .get(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.keys().map(String::as_str).collect()
    }

    pub fn features(&self) -> impl Iterator<Item = &FeatureMatrix> {
        self.features.values()
    }

    /// All distinct tags, sorted.
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tag_index.keys().map(String::as_str)
    }

    pub fn tag_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.tag_index
    }

    /// Indices of images labeled with `tag`, ascending.
    pub fn tag_members(&self, tag: &str) -> &[usize] {
        self.tag_index.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `S_w`: ids of images labeled with `tag`. Empty for unseen tags.
    pub fn images_with_tag(&self, tag: &str) -> BTreeSet<&str> {
        self.tag_members(tag)
            .iter()
            .map(|&i| self.images[i].id.as_str())
            .collect()
    }

    pub fn tag_count(&self, tag: &str) -> usize {
        self.tag_members(tag).len()
    }

    /// `|S_w| / |S|`.
    pub fn tag_prior(&self, tag: &str) -> Result<f64> {
        if self.images.is_empty() {
            return Err(Error::EmptyCollection);
        }
        Ok(self.tag_count(tag) as f64 / self.images.len() as f64)
    }

    /// Sub-collection restricted to `ids`, keeping this collection's order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Collection> {
        let mut keep = vec![false; self.images.len()];
        for id in ids {
            let i = self
                .index_of(id)
                .ok_or_else(|| Error::UnknownImage(id.to_string()))?;
            keep[i] = true;
        }
        let rows: Vec<usize> = (0..self.images.len()).filter(|&i| keep[i]).collect();
        let images = rows.iter().map(|&i| self.images[i].clone()).collect();
        let features = self
            .features
            .values()
            .map(|fm| {
                let mut data = Vec::with_capacity(rows.len() * fm.dim);
                for &i in &rows {
                    data.extend_from_slice(fm.row(i));
                }
                FeatureMatrix::new(fm.name.clone(), fm.dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Collection::new(images, features)
    }

    pub fn tags_text(&self) -> String {
        let mut out = String::new();
        for rec in &self.images {
            let _ = writeln!(out, "{}\t{}\t{}", rec.id, rec.user, rec.tags.join(" "));
        }
        out
    }

    pub fn feature_text(&self, name: &str) -> Result<String> {
        let fm = self.feature(name)?;
        let mut out = String::new();
        let _ = writeln!(out, "#feature\t{}\t{}", fm.name, fm.dim);
        for (i, rec) in self.images.iter().enumerate() {
            out.push_str(&rec.id);
            out.push('\t');
            for (j, v) in fm.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `tags.tsv` and one `<feature>.feat` file per feature space into
    /// `dir`, returning the written feature paths in name order.
    pub fn write_dir(&self, dir: &Path) -> Result<(PathBuf, Vec<PathBuf>)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tags_path = dir.join("tags.tsv");
        fs::write(&tags_path, self.tags_text()).map_err(|e| Error::io(&tags_path, e))?;
        let mut feature_paths = Vec::new();
        for name in self.features.keys() {
            let p = dir.join(format!("{name}.feat"));
            fs::write(&p, self.feature_text(name)?).map_err(|e| Error::io(&p, e))?;
            feature_paths.push(p);
        }
        Ok((tags_path, feature_paths))
    }
}

fn build_tag_index(images: &[ImageRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut tag_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, rec) in images.iter().enumerate() {
        for t in &rec.tags {
            tag_index.entry(t.clone()).or_default().push(i);
        }
    }
    tag_index
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a tags file: `image_id<TAB>user_id<TAB>tag1 tag2 ...`.
pub fn parse_tags(path: &Path, text: &str) -> Result<Vec<ImageRecord>> {
    let mut images = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty image id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(path, lineno, format!("duplicate image id `{id}`")));
        }
        let mut tags: Vec<String> = Vec::new();
        if let Some(raw) = fields.get(2) {
            for tok in raw.split_whitespace() {
                let tag = normalize_tag(tok);
                if tags.contains(&tag) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("image `{id}` lists tag `{tag}` more than once"),
                    ));
                }
                tags.push(tag);
            }
        }
        images.push(ImageRecord {
            id: id.to_string(),
            user: fields[1].trim().to_string(),
            tags,
        });
    }
    Ok(images)
}

/// Parses a feature file against the given image order.
pub fn parse_features(path: &Path, text: &str, images: &[ImageRecord]) -> Result<FeatureMatrix> {
    let mut lines = text.lines().enumerate();
    let (name, dim) = loop {
        let Some((n, line)) = lines.next() else {
            return Err(Error::parse(path, 1, "missing `#feature` header"));
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields[0] != "#feature" {
            return Err(Error::parse(
                path,
                n + 1,
                "expected header `#feature<TAB>name<TAB>dim`",
            ));
        }
        let dim: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad dimension `{}`", fields[2])))?;
        if dim == 0 {
            return Err(Error::parse(path, n + 1, "dimension must be positive"));
        }
        break (fields[1].trim().to_string(), dim);
    };

    let position: HashMap<&str, usize> = images
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut data = vec![0.0; images.len() * dim];
    let mut filled = vec![false; images.len()];
    for (n, line) in lines {
        let lineno = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `image_id<TAB>values`"))?;
        let &i = position
            .get(id)
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown image `{id}`")))?;
        if filled[i] {
            return Err(Error::parse(path, lineno, format!("duplicate row for image `{id}`")));
        }
        let mut count = 0;
        for (j, tok) in values.split(',').enumerate() {
            if j >= dim {
                count = j + 1;
                continue;
            }
            let v: f64 = tok.trim().parse().map_err(|_| {
                Error::parse(path, lineno, format!("image `{id}`: bad value `{tok}`"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("image `{id}`: non-finite component"),
                ));
            }
            data[i * dim + j] = v;
            count = j + 1;
        }
        if count != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("image `{id}`: expected {dim} components, found {count}"),
            ));
        }
        filled[i] = true;
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("no row for image `{}`", images[i].id),
        ));
    }
    FeatureMatrix::new(name, dim, data)
}

/// Loads a tags file and its feature files into a validated [`Collection`].
pub fn load_collection<P: AsRef<Path>>(tags_path: &Path, feature_paths: &[P]) -> Result<Collection> {
    let images = parse_tags(tags_path, &read_text(tags_path)?)?;
    let mut features = Vec::with_capacity(feature_paths.len());
    for p in feature_paths {
        let p = p.as_ref();
        features.push(parse_features(p, &read_text(p)?, &images)?);
    }
    Collection::new(images, features)
}

/// Ground truth of a synthetic world: tag → truly relevant image ids.
pub type GroundTruth = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFeature {
    pub name: String,
    pub dim: usize,
    /// One flag per tag: whether this feature carries a cluster for it.
    pub informative: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub n_tags: usize,
    pub n_users: usize,
    pub features: Vec<SyntheticFeature>,
    pub q_correct: f64,
    pub q_incorrect: f64,
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Features `names` each informative for a contiguous, disjoint block of
    /// tags (tag `t` belongs to feature `t * F / T`).
    pub fn with_blocks(
        n_images: usize,
        n_tags: usize,
        names: &[&str],
        dim: usize,
        seed: u64,
    ) -> Self {
        let f = names.len().max(1);
        let features = names
            .iter()
            .enumerate()
            .map(|(j, name)| SyntheticFeature {
                name: name.to_string(),
                dim,
                informative: (0..n_tags).map(|t| t * f / n_tags.max(1) == j).collect(),
            })
            .collect();
        Self {
            n_images,
            n_tags,
            n_users: (n_images / 4).max(1),
            features,
            q_correct: 0.9,
            q_incorrect: 0.05,
            cluster_spread: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_images == 0 || self.n_tags == 0 || self.n_users == 0 {
            return bad("n_images, n_tags and n_users must be positive".into());
        }
        if self.features.is_empty() {
            return bad("at least one feature is required".into());
        }
        for f in &self.features {
            if f.dim == 0 {
                return bad(format!("feature `{}` has zero dimension", f.name));
            }
            if f.informative.len() != self.n_tags {
                return bad(format!(
                    "feature `{}` has {} informativeness flags for {} tags",
                    f.name,
                    f.informative.len(),
                    self.n_tags
                ));
            }
        }
        for (name, q) in [("q_correct", self.q_correct), ("q_incorrect", self.q_incorrect)] {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("{name} must lie in [0,1], got {q}"));
            }
        }
        if self.q_correct <= self.q_incorrect {
            return bad(format!(
                "q_correct ({}) must exceed q_incorrect ({})",
                self.q_correct, self.q_incorrect
            ));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be positive".into());
        }
        Ok(())
    }

    pub fn tag_name(&self, t: usize) -> String {
        format!("tag{:0w$}", t, w = digits(self.n_tags))
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len().max(2)
}

/// Generates a collection with planted per-tag clusters and Bernoulli
/// tagging noise. Each image has exactly one true concept.
pub fn generate_collection(cfg: &SyntheticConfig) -> Result<(Collection, GroundTruth)> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let tag_names: Vec<String> = (0..cfg.n_tags).map(|t| cfg.tag_name(t)).collect();

    let centers: Vec<Vec<f64>> = cfg
        .features
        .iter()
        .map(|f| (0..cfg.n_tags * f.dim).map(|_| rng.gen::<f64>()).collect())
        .collect();

    let id_width = digits(cfg.n_images);
    let user_width = digits(cfg.n_users);
    let mut images = Vec::with_capacity(cfg.n_images);
    let mut data: Vec<Vec<f64>> = cfg
        .features
        .iter()
        .map(|f| Vec::with_capacity(cfg.n_images * f.dim))
        .collect();
    let mut truth: GroundTruth = tag_names
        .iter()
        .map(|t| (t.clone(), BTreeSet::new()))
        .collect();

    for i in 0..cfg.n_images {
        let id = format!("img{:0w$}", i, w = id_width);
        let concept = rng.gen_range(0..cfg.n_tags);
        let user = format!("u{:0w$}", rng.gen_range(0..cfg.n_users), w = user_width);

        for (fi, f) in cfg.features.iter().enumerate() {
            if f.informative[concept] {
                let c = &centers[fi][concept * f.dim..(concept + 1) * f.dim];
                for &cj in c {
                    data[fi].push(cj + cfg.cluster_spread * rng.gen_range(-1.0..1.0));
                }
            } else {
                for _ in 0..f.dim {
                    data[fi].push(rng.gen::<f64>());
                }
            }
        }

        let mut tags = Vec::new();
        for (t, name) in tag_names.iter().enumerate() {
            let p = if t == concept { cfg.q_correct } else { cfg.q_incorrect };
            if rng.gen_bool(p) {
                tags.push(name.clone());
            }
        }
        tags.shuffle(&mut rng);

        truth
            .get_mut(&tag_names[concept])
            .expect("concept tag present")
            .insert(id.clone());
        images.push(ImageRecord { id, user, tags });
    }

    let features = cfg
        .features
        .iter()
        .zip(data)
        .map(|(f, d)| FeatureMatrix::new(f.name.clone(), f.dim, d))
        .collect::<Result<Vec<_>>>()?;
    Ok((Collection::new(images, features)?, truth))
}
