//! A small numerical grounding head: scene featurization, relevance scoring
//! against the `<LOC>` embedding, top-k query selection, a cross-attention
//! decoder and a box/score head, plus the training losses.

pub mod features;
pub mod fit;
pub mod head;
pub mod loss;

pub use features::{category_embedding, featurize_scene, featurize_scene_with, FeatureConfig, LocEmbedding, SceneFeatures};
pub use fit::{fit_box, FitResult};
pub use head::{
    decode, decode_with_attention, ground, predict_boxes, relevance_scores, select_queries, top_k_indices, Decoded,
    GroundingHead, HeadConfig, QuerySet,
};
pub use loss::{
    loss_contrast, loss_contrast_grad, loss_iou, loss_iou_grad, total_loss, BoxLoss, ContrastLoss, Detections,
    LossBreakdown, LossWeights, DEFAULT_TAU,
};
