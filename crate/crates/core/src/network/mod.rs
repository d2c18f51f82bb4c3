//! Three-stream DenseNet-BC classifier: streams, fusion, head, checkpoints,
//! training and evaluation.

mod checkpoint;
mod eval;
mod model;
mod stream;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use eval::{evaluate, majority_vote, score_predictions, EvalReport};
pub use model::{
    concat_fuse, deinterleave, predict_frame, FrameBatch, Modality, ModelConfig, Prediction, StreamMode,
    ThreeStreamModel,
};
pub use stream::{DenseLayer, Stream, StreamConfig, Transition};
pub use train::{predict_all, train, LabeledClip, TrainConfig, TrainReport};
