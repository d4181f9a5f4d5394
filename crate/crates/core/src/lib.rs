//! Multidimensional byte-pair encoding for discrete grids.
//!
//! Training repeatedly merges the most frequent pair of adjacent tokens,
//! keyed by their classes and the displacement between their anchors, and
//! records each merge in a [`Vocabulary`]. Encoding lists token classes in
//! anchor scan order; decoding replays that order to rebuild the grid.

pub mod codec;
pub mod collapse;
pub mod error;
pub mod format;
pub mod grid;
pub mod ingest;
pub mod scalar;
pub mod seqfeat;
pub mod trainer;
pub mod vocab;

pub use codec::{
    compression_stats, decode, decode_to_base, encode, expand_to_base, tokenize,
    CompressedSequence, CompressionReport,
};
pub use collapse::{
    collapse_codebook, farthest_point_sample, kmeans_refine, prune, read_collapse_map, snap,
    write_collapse_map, Codebook, CollapseMap, KMeans,
};
pub use error::{Error, Result};
pub use format::VoxelVolume;
pub use grid::{scan_order, Anchor, GridPosition, Instance, Layout, Offset, TokenGrid};
pub use scalar::Scalar;
pub use seqfeat::{emit_features, ipe, legal_mask, GenerationState, PositionalEncoding, TokenFeatures};
pub use trainer::{
    apply_merge, apply_vocab, count_constellations, select_merge, train, train_with_progress,
    CountTable, MergeRecord, TrainConfig, TrainOutput,
};
pub use vocab::{read_vocab, write_vocab, AxisMask, Constellation, MergeRule, TokenShape, Vocabulary};

pub type PositionalEncoding32 = PositionalEncoding<f32>;
pub type PositionalEncoding64 = PositionalEncoding<f64>;
pub type TokenFeatures32 = TokenFeatures<f32>;
pub type Codebook32 = collapse::Codebook<f32>;
pub type Codebook64 = collapse::Codebook<f64>;
pub type CollapseMap32 = collapse::CollapseMap<f32>;
pub type CollapseMap64 = collapse::CollapseMap<f64>;
