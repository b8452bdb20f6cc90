//! Evaluation: proxy Fréchet distance, palette segmentation scores and
//! class-grouped similarity analysis.

mod frechet;
mod grouped;
mod seg;

pub use frechet::{
    frechet_distance, frechet_proxy, matrix_sqrt_psd, GaussianMoments, ProxyExtractor,
    PROXY_FEATURE_DIM, PROXY_SEED,
};
pub use grouped::{downsample_mask, grouped_semrel, BlockSimilarityReport, GroupedSemrel};
pub use seg::{accumulate_confusion, seg_scores, ConfusionMatrix, SegScores};
