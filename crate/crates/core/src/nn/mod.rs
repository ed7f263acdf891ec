//! Dense layers, embeddings, attention, losses, Adam and checkpoints on
//! top of the autodiff tape.

mod adam;
mod attention;
mod checkpoint;
mod init;
mod layers;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use attention::{scaled_dot_attention, slot_attention};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use init::{glorot_bound, keyed_rng, ParamBuilder, EMBEDDING_INIT_BOUND};
pub use layers::{
    dense, embed_and_concat, mlp_forward, Activation, EmbeddingTable, MlpSpec, Telemetry,
};
pub use loss::{task_loss, LossKind, BCE_CLAMP};
