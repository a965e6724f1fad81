//! From-scratch differentiable toolkit: dense layers with batch
//! normalization, an embedding bag encoder, losses, Adam, and
//! finite-difference gradient verification.

pub mod adam;
pub mod embedding;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod tensor;

pub use adam::AdamState;
pub use embedding::{EmbeddingEncoder, EncoderCache};
pub use gradcheck::finite_diff_gradcheck;
pub use loss::{
    bce_loss, bce_loss_weighted, contrastive_pair_loss, cosine_similarity,
    cosine_similarity_backward, PairLabel,
};
pub use mlp::{Activation, BatchNorm, DenseLayer, ForwardCache, LayerSpec, Mlp, MlpGrads, Mode, NnError};
pub use tensor::{ShapeError, Tensor2};
