//! Tag relevance estimation and fusion for tag-based image retrieval.
//!
//! The crate is organized bottom-up:
//!
//! - [`collection`]: tagged image collections, file loading and a seeded
//!   synthetic generator with known ground truth.
//! - [`neighbors`]: exact L1 nearest-neighbor search, distance normalizers
//!   and weighted combined distances.
//! - [`estimators`]: neighbor voting (single feature and early fused), tag
//!   position, semantic field and KDE tag ranking.
//! - [`fusion`]: MinMax / RankMax score normalization, linear late fusion
//!   and the Borda count ranking.
//! - [`learning`]: distance metric learning for early fusion and
//!   coordinate ascent for late fusion, globally or per concept.
//! - [`evalkit`]: AP, NDCG, the paired randomization test, and run / qrels
//!   file I/O.
//! - [`pipeline`]: named presets composing the modules above.

pub mod collection;
pub mod error;
pub mod estimators;
pub mod evalkit;
pub mod fusion;
pub mod learning;
pub mod neighbors;
pub mod pipeline;
pub mod seed;

pub use collection::{Collection, FeatureMatrix, ImageRecord, SyntheticConfig, SyntheticFeature};
pub use error::{Error, Result};
pub use estimators::ScoreTable;
pub use evalkit::{Qrels, RunFile};
pub use neighbors::{DistanceNormalizer, NeighborList, Space, WeightVector};
