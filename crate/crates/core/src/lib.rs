//! Region-level retrieval over documents represented as grids of patch
//! embeddings.
//!
//! Documents are scored against a query by cosine similarity with their
//! max-pooled patch vector. Within a retrieved document, per-patch
//! similarities form a saliency map that is thresholded and grouped into
//! Chebyshev-connected components, each reported as a pixel bounding box.
//! The crate also carries the contrastive training objectives with analytic
//! gradients, ranking and answer metrics, and the binary and text file
//! formats used by the command-line tool.

pub mod error;
pub mod format;
pub mod index;
pub mod loss;
pub mod metrics;
pub mod region;
pub mod rng;
pub mod similarity;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use index::{token_count, Corpus, DocRegions, DocTokens, RetrievalResult, TokenReport};
pub use loss::{
    combined_loss, global_loss, labels_from_boxes, labels_from_pseudo, local_loss, Batch, LossReport, PairGrad,
    TrainingPair,
};
pub use metrics::{ndcg_at_k, recall_at_k, relaxed_exact_match, QueryJudgment};
pub use region::{
    binarize, chebyshev, find_components, min_bbox, propose_regions, regions_from_saliency, Component, RegionResult,
};
pub use similarity::{cosine, max_pool_global, saliency_map, score_document, DocScore};
pub use types::{
    validate_patch_grid, BBox, Cell, GridGeometry, HyperParams, Mask, PatchGrid, QueryEmbedding, SaliencyMap,
    SupervisionSets,
};
