//! Python bindings: collections, neighbor search, estimators, fusion and the
//! evaluation toolkit. Score tables cross the boundary as `{image_id: score}`
//! dicts and rankings as lists of `(image_id, score)` tuples.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tagrel_core::collection::{generate_collection, load_collection};
use tagrel_core::neighbors::{knn_from, Neighbor, NeighborList, Space};
use tagrel_core::pipeline::{read_learned, Preset, Scorer, ScoringConfig, DEFAULT_FEATURES};
use tagrel_core::{estimators, evalkit, fusion, neighbors};
use tagrel_core::{Qrels, ScoreTable, SyntheticConfig, WeightVector};

type Scores = BTreeMap<String, f64>;
type Ranking = Vec<(String, f64)>;

fn py_err(e: tagrel_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_table(name: &str, scores: Scores) -> ScoreTable {
    ScoreTable::new(name, "", scores)
}

fn ranking(t: &ScoreTable) -> Ranking {
    t.ranking().into_iter().map(|(id, s)| (id.to_string(), s)).collect()
}

/// An image collection with tags and visual features.
#[pyclass(name = "Collection", module = "tagrel", frozen)]
struct PyCollection {
    inner: tagrel_core::Collection,
}

#[pymethods]
impl PyCollection {
    /// Loads `DIR/tags.tsv` and `DIR/<feature>.feat` for each feature.
    #[staticmethod]
    #[pyo3(signature = (dir, features))]
    fn load(dir: PathBuf, features: Vec<String>) -> PyResult<Self> {
        let paths: Vec<PathBuf> = features.iter().map(|f| dir.join(format!("{f}.feat"))).collect();
        let inner = load_collection(&dir.join("tags.tsv"), &paths).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Synthetic collection plus its ground truth as `{tag: [relevant ids]}`.
    #[staticmethod]
    #[pyo3(signature = (n_images, n_tags, features = None, dim = 8, spread = 0.15, seed = 0))]
    fn generate(
        n_images: usize,
        n_tags: usize,
        features: Option<Vec<String>>,
        dim: usize,
        spread: f64,
        seed: u64,
    ) -> PyResult<(Self, BTreeMap<String, Vec<String>>)> {
        let features = features.unwrap_or_else(|| vec!["COLOR".into(), "CSLBP".into()]);
        let names: Vec<&str> = features.iter().map(String::as_str).collect();
        let mut cfg = SyntheticConfig::with_blocks(n_images, n_tags, &names, dim, seed);
        cfg.cluster_spread = spread;
        let (inner, truth) = generate_collection(&cfg).map_err(py_err)?;
        let qrels = Qrels::from_ground_truth(&truth);
        let relevant = qrels
            .tags()
            .map(|t| (t.to_string(), qrels.relevant(t).into_iter().collect()))
            .collect();
        Ok((Self { inner }, relevant))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Collection({} images, {} tags, features={:?})",
            self.inner.len(),
            self.inner.tags().count(),
            self.inner.feature_names()
        )
    }

    fn ids(&self) -> Vec<String> {
        self.inner.images().iter().map(|r| r.id.clone()).collect()
    }

    fn tags(&self) -> Vec<String> {
        self.inner.tags().map(String::from).collect()
    }

    fn image_tags(&self, id: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.record(id).map_err(py_err)?.tags.clone())
    }

    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().into_iter().map(String::from).collect()
    }

    fn feature(&self, name: &str, id: &str) -> PyResult<Vec<f64>> {
        let m = self.inner.feature(name).map_err(py_err)?;
        let i = self
            .inner
            .index_of(id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown image `{id}`")))?;
        Ok(m.row(i).to_vec())
    }

    fn images_with_tag(&self, tag: &str) -> Vec<String> {
        self.inner.images_with_tag(tag).into_iter().map(String::from).collect()
    }

    fn tag_prior(&self, tag: &str) -> PyResult<f64> {
        self.inner.tag_prior(tag).map_err(py_err)
    }

    fn subset(&self, ids: Vec<String>) -> PyResult<Self> {
        let inner = self.inner.subset(ids.iter().map(String::as_str)).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&dir).map(|_| ()).map_err(py_err)
    }
}

#[pyfunction]
fn l1_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    neighbors::l1_distance(&a, &b).map_err(py_err)
}

/// The `k` nearest images of `source` to `query_id` (an image of `queries`,
/// default `source`) under one feature, as `(id, distance)` pairs.
#[pyfunction]
#[pyo3(signature = (source, query_id, k, feature, queries = None))]
fn knn(
    source: &PyCollection,
    query_id: &str,
    k: usize,
    feature: &str,
    queries: Option<&PyCollection>,
) -> PyResult<Vec<(String, f64)>> {
    let queries = queries.unwrap_or(source);
    let nl = knn_from(&source.inner, &Space::Single(feature.into()), &queries.inner, query_id, k).map_err(py_err)?;
    Ok(nl.entries.into_iter().map(|n| (n.id, n.distance)).collect())
}

/// Votes for `tag` among the first `k` of `neighbor_ids`, minus the prior.
#[pyfunction]
fn neighbor_vote(source: &PyCollection, neighbor_ids: Vec<String>, tag: &str, k: usize) -> PyResult<f64> {
    let nl = NeighborList {
        query_id: String::new(),
        entries: neighbor_ids
            .into_iter()
            .map(|id| Neighbor { id, distance: 0.0 })
            .collect(),
    };
    estimators::neighbor_vote(&source.inner, &nl, tag, k).map_err(py_err)
}

#[pyfunction]
fn minmax_normalize(scores: Scores, lo: f64, hi: f64) -> PyResult<Scores> {
    let b = fusion::ScoreBounds::new(lo, hi).map_err(py_err)?;
    Ok(fusion::minmax_normalize(&to_table("s", scores), b).map_err(py_err)?.entries)
}

#[pyfunction]
fn rankmax_normalize(scores: Scores) -> PyResult<Scores> {
    Ok(fusion::rankmax_normalize(&to_table("s", scores)).map_err(py_err)?.entries)
}

/// Weighted sum of already normalized tables; uniform weights by default.
#[pyfunction]
#[pyo3(signature = (tables, weights = None))]
fn late_fuse(tables: Vec<Scores>, weights: Option<Vec<f64>>) -> PyResult<Scores> {
    let names: Vec<String> = (0..tables.len()).map(|j| format!("e{j}")).collect();
    let wv = match weights {
        Some(w) => WeightVector::new(names.clone(), w),
        None => WeightVector::uniform(names.clone()),
    }
    .map_err(py_err)?;
    let tables: Vec<ScoreTable> = names.iter().zip(tables).map(|(n, t)| to_table(n, t)).collect();
    Ok(fusion::late_fuse(&tables, &wv).map_err(py_err)?.entries)
}

#[pyfunction]
fn borda_rank(tables: Vec<Scores>) -> PyResult<Vec<String>> {
    let tables: Vec<ScoreTable> = tables
        .into_iter()
        .enumerate()
        .map(|(j, t)| to_table(&format!("e{j}"), t))
        .collect();
    fusion::borda_rank(&tables).map_err(py_err)
}

#[pyfunction]
fn average_precision(flags: Vec<bool>) -> f64 {
    evalkit::average_precision(&flags)
}

#[pyfunction]
#[pyo3(signature = (flags, cutoff = evalkit::NDCG_CUTOFF))]
fn ndcg_at(flags: Vec<bool>, cutoff: usize) -> f64 {
    evalkit::ndcg_at(&flags, cutoff)
}

/// Two-sided paired p-value; exact for up to 20 pairs.
#[pyfunction]
#[pyo3(signature = (a, b, n_perm = evalkit::DEFAULT_PERMUTATIONS, seed = 0))]
fn randomization_test(a: Vec<f64>, b: Vec<f64>, n_perm: usize, seed: u64) -> PyResult<f64> {
    evalkit::randomization_test(&a, &b, n_perm, seed).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (features = None))]
fn list_presets(features: Option<Vec<String>>) -> Vec<String> {
    let features = features.unwrap_or_else(|| DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect());
    Preset::all(&features).iter().map(ToString::to_string).collect()
}

/// Ranks the images of `target` for each tag under a named preset. Learned
/// presets read their weights from `weights_dir`.
#[pyfunction]
#[pyo3(signature = (source, target, preset, tags = None, k = 500, features = None, weights_dir = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn score_preset(
    py: Python<'_>,
    source: &PyCollection,
    target: &PyCollection,
    preset: &str,
    tags: Option<Vec<String>>,
    k: usize,
    features: Option<Vec<String>>,
    weights_dir: Option<PathBuf>,
    seed: u64,
) -> PyResult<BTreeMap<String, Ranking>> {
    let preset: Preset = preset.parse().map_err(py_err)?;
    let cfg = ScoringConfig {
        k,
        features: features.unwrap_or_else(|| source.inner.feature_names().into_iter().map(String::from).collect()),
        seed,
        ..ScoringConfig::default()
    };
    let weights = match (&weights_dir, preset.family()) {
        (Some(dir), Some(family)) => Some(read_learned(dir, &family).map_err(py_err)?),
        _ => None,
    };
    let tags = tags.unwrap_or_else(|| target.inner.tags().map(String::from).collect());
    let tag_refs: Vec<&str> = tags.iter().map(String::as_str).collect();
    let tables = py.detach(|| {
        let scorer = Scorer::new(&source.inner, &target.inner, &cfg)?;
        scorer.score(&preset, &tag_refs, weights.as_ref())
    });
    tables
        .map_err(py_err)?
        .into_iter()
        .map(|(tag, t)| Ok((tag, ranking(&t.map_err(py_err)?))))
        .collect()
}

#[pymodule]
fn tagrel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCollection>()?;
    m.add_function(wrap_pyfunction!(l1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    m.add_function(wrap_pyfunction!(neighbor_vote, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(rankmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(late_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(borda_rank, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at, m)?)?;
    m.add_function(wrap_pyfunction!(randomization_test, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(score_preset, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
