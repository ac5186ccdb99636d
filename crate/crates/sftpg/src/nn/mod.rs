//! Networks and training primitives: MLPs over flat parameter vectors, a
//! reverse-mode tape, Adam, sinusoidal timestep embeddings, checkpointing,
//! and finite-difference gradient verification.

mod adam;
mod checkpoint;
mod embed;
mod gradcheck;
mod mlp;
mod tape;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_mlp, save_mlp};
pub use embed::timestep_embedding;
pub use gradcheck::finite_diff_check;
pub use mlp::{Activation, GradVector, MlpNet, MlpSpec, NetVars};
pub use tape::{Grads, Tape, TapeAct, Var};
