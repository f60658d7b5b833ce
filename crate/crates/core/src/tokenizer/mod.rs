//! Part-level grouped residual quantization of motion feature windows.

mod codebook;
mod config;
mod format;
mod grq;
mod model;
mod network;
mod train;

pub use codebook::{
    kmeans_pp_seed, CodeStats, Codebook, DEFAULT_DEAD_AFTER, DEFAULT_DECAY, DEFAULT_EPS,
};
pub use config::{FeatureSplit, PartKind, QuantizerConfig};
pub use format::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use grq::{grq_dequantize, grq_quantize, GrqCodes};
pub use model::{
    decode_window, detokenize_motion, detokenize_window, encode_window, pad_window,
    reconstruct_window, tokenize_motion, tokenize_window, HandMotion, HandTokens, MotionTokens,
    PartTokenizer, TokenizerPart,
};
pub use network::{Dense, DenseGrad, NetGrad, PartNetwork};
pub use train::{
    evaluate_loss, flatten_grads, initialize, loss_and_grad, train_step, train_tokenizer,
    wrist_loss_columns, Batch, LossReport, TrainOptions, TrainState, DEFAULT_LAMBDA_COMMIT,
    DEFAULT_LAMBDA_WRIST,
};
